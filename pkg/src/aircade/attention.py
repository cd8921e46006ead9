"""Four-path diffusion attention and its multi-head (DK-MSA) composition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone as B
from .backbone import ShapeError, Tensor
from .nn import Module, uniform_weight

TEMPORAL = "temporal"
SPATIAL = "spatial"
PATHS = (0, 1, 2, 3)


@dataclass(frozen=True)
class AttentionMask:
    """Binary S x S mask on attention coefficients; ``values=None`` is ALL_ONES."""

    values: np.ndarray | None = None

    def __post_init__(self):
        if self.values is not None:
            v = np.asarray(self.values, dtype=np.float64)
            if v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise ShapeError(f"mask must be square, got {v.shape}")
            if not np.all((v == 0.0) | (v == 1.0)):
                raise ValueError("mask entries must be exactly 0 or 1")
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @property
    def is_all_ones(self) -> bool:
        return self.values is None or bool(np.all(self.values == 1.0))

    def check(self, size: int) -> None:
        if self.values is not None and self.values.shape != (size, size):
            raise ShapeError(f"mask shape {self.values.shape} != ({size}, {size})")


ALL_ONES = AttentionMask()


def active_paths(no_adp: bool = False, no_agg: bool = False, no_diff: bool = False) -> tuple[int, ...]:
    """Path indices (0..3 for A1..A4) filling the four output slots.

    Dropped paths are replaced by cycling the remaining ones so the
    concatenated width stays 4 * d_h.
    """
    dropped = set()
    if no_adp:
        dropped |= {1, 3}
    if no_agg:
        dropped |= {2, 3}
    if no_diff:
        dropped |= {0, 2}
    keep = [p for p in PATHS if p not in dropped]
    if not keep:
        raise ValueError("every attention path ablated")
    return tuple(keep[i % len(keep)] for i in range(4))


def attention_coefficients(q, k, e1, e2, scale: float, paths=PATHS) -> dict[int, Tensor]:
    """Pre-mask A1..A4 for the requested paths (A3, A4 already transposed)."""
    out: dict[int, Tensor] = {}
    needed = set(paths)
    if 0 in needed:
        out[0] = B.softmax_lastdim(B.scale(B.matmul(q, B.swap_last2(k)), scale))
    if 1 in needed:
        out[1] = B.softmax_lastdim(B.relu(B.matmul(e1, B.swap_last2(e2))))
    if 2 in needed:
        out[2] = B.swap_last2(B.softmax_lastdim(B.scale(B.matmul(k, B.swap_last2(q)), scale)))
    if 3 in needed:
        out[3] = B.swap_last2(B.softmax_lastdim(B.relu(B.matmul(e2, B.swap_last2(e1)))))
    return out


def _apply_mask(a: Tensor, mask: AttentionMask | None, renormalize: bool) -> Tensor:
    if mask is None or mask.values is None:
        return a
    a = B.mul(a, mask.values)
    if renormalize:
        rows = B.sum(a, axis=-1, keepdims=True)
        a = B.div(a, B.add(rows, np.where(rows.data > 0, 0.0, 1.0)))
    return a


def diffusion_attention(
    q,
    k,
    v,
    e1,
    e2,
    mask: AttentionMask | None = None,
    scale: float = 1.0,
    paths: tuple[int, ...] = PATHS,
    renormalize: bool = False,
) -> Tensor:
    """``[A1 V || A2 V || A3 V || A4 V]`` for Q, K, V of shape (..., S, d_h)."""
    q, k, v = B.as_tensor(q), B.as_tensor(k), B.as_tensor(v)
    e1, e2 = B.as_tensor(e1), B.as_tensor(e2)
    if q.ndim < 2 or q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"Q/K/V shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    size = q.shape[-2]
    if e1.shape != e2.shape or e1.shape[0] != size:
        raise ShapeError(f"adaptive tables {e1.shape}, {e2.shape} do not match S={size}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if mask is not None:
        mask.check(size)
    coeffs = attention_coefficients(q, k, e1, e2, scale, paths)
    masked = {i: _apply_mask(a, mask, renormalize) for i, a in coeffs.items()}
    products = {i: B.matmul(a, v) for i, a in masked.items()}
    return B.concat_lastdim([products[i] for i in paths])


class DiffusionAttentionLayer(Module):
    """One DK-MSA block. Per-head weights are stacked on a leading head axis."""

    def __init__(
        self,
        rng: np.random.Generator,
        axis: str,
        seq_len: int,
        d_m: int,
        K_h: int,
        d_e: int,
        scale_mode: str = "divide",
        paths: tuple[int, ...] = PATHS,
        renormalize: bool = False,
    ):
        if axis not in (TEMPORAL, SPATIAL):
            raise ValueError(f"axis must be temporal or spatial, got {axis!r}")
        if d_m % 4:
            raise ValueError(f"d_m={d_m} not divisible by 4")
        d_h = d_m // 4
        self.axis = axis
        self.seq_len = seq_len
        self.d_m = d_m
        self.K_h = K_h
        self.paths = paths
        self.renormalize = renormalize
        self.scale = 1.0 / np.sqrt(d_m) if scale_mode == "divide" else float(np.sqrt(d_m))
        self.W_q = uniform_weight(rng, K_h, d_m, d_h)
        self.W_k = uniform_weight(rng, K_h, d_m, d_h)
        self.W_v = uniform_weight(rng, K_h, d_m, d_h)
        self.E_1 = uniform_weight(rng, seq_len, d_e)
        self.E_2 = uniform_weight(rng, seq_len, d_e)
        if axis == TEMPORAL:
            self.W_gate_t = uniform_weight(rng, K_h, d_m, d_m)
            self.W_gate_s = uniform_weight(rng, K_h, d_m, d_m)
        else:
            self.W_head = uniform_weight(rng, K_h, d_m, d_m)
        self.W_out = uniform_weight(rng, K_h * d_m, d_m)

    def __call__(self, q_in, k_in, v_in, mask: AttentionMask | None = None) -> Tensor:
        return dk_msa(self, q_in, k_in, v_in, mask)


def dk_msa(layer: DiffusionAttentionLayer, q_in, k_in, v_in, mask: AttentionMask | None = None) -> Tensor:
    q_in, k_in, v_in = B.as_tensor(q_in), B.as_tensor(k_in), B.as_tensor(v_in)
    for name, t in (("Q", q_in), ("K", k_in), ("V", v_in)):
        if t.ndim != 3 or t.shape[-1] != layer.d_m or t.shape[1] != layer.seq_len:
            raise ShapeError(
                f"dk_msa({layer.axis}): {name} must be (B, {layer.seq_len}, {layer.d_m}), got {t.shape}"
            )
    batch, size, d_m = v_in.shape
    # (B, 1, S, d_m) @ (K_h, d_m, d_h) -> (B, K_h, S, d_h)
    heads = [
        B.matmul(B.reshape(t, (batch, 1, size, d_m)), w)
        for t, w in ((q_in, layer.W_q), (k_in, layer.W_k), (v_in, layer.W_v))
    ]
    h = diffusion_attention(
        *heads, layer.E_1, layer.E_2, mask, layer.scale, layer.paths, layer.renormalize
    )
    if layer.axis == TEMPORAL:
        h = B.mul(B.tanh(B.matmul(h, layer.W_gate_t)), B.sigmoid(B.matmul(h, layer.W_gate_s)))
    else:
        h = B.matmul(h, layer.W_head)
    # (B, K_h, S, d_m) -> (B, S, K_h * d_m)
    h = B.reshape(B.transpose(h, (0, 2, 1, 3)), (batch, size, layer.K_h * d_m))
    return B.matmul(h, layer.W_out)


def make_axis_views(x, axis: str) -> Tensor:
    """(T, N, d) or (B, T, N, d) -> (batch', S, d) for the given axis."""
    x = B.as_tensor(x)
    if x.ndim == 3:
        x = B.reshape(x, (1,) + x.shape)
    batch, steps, n, d = x.shape
    if axis == TEMPORAL:
        return B.reshape(B.transpose(x, (0, 2, 1, 3)), (batch * n, steps, d))
    if axis == SPATIAL:
        return B.reshape(x, (batch * steps, n, d))
    raise ValueError(f"unknown axis {axis!r}")


def inverse_axis_view(v, axis: str, batch: int | None, steps: int, n: int) -> Tensor:
    """Undo :func:`make_axis_views`; ``batch=None`` restores a 3-d (T, N, d) tensor."""
    v = B.as_tensor(v)
    d = v.shape[-1]
    b = 1 if batch is None else batch
    if axis == TEMPORAL:
        x = B.transpose(B.reshape(v, (b, n, steps, d)), (0, 2, 1, 3))
    elif axis == SPATIAL:
        x = B.reshape(v, (b, steps, n, d))
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return B.reshape(x, (steps, n, d)) if batch is None else x
