"""Prompt embeddings (time-of-day, station, position) and input fusion."""

from __future__ import annotations

import warnings

import numpy as np

from . import backbone as B
from .backbone import Parameter, Tensor
from .config import ModelConfig
from .nn import MLP, Module

EMBED_INIT = 0.05


class DegenerateProjectionWarning(UserWarning):
    pass


def time_slot_index(start_slot: int, horizon: int, N_T: int) -> list[int]:
    if N_T <= 0:
        raise ValueError(f"N_T must be positive, got {N_T}")
    if not 0 <= start_slot < N_T:
        raise ValueError(f"start_slot {start_slot} outside [0, {N_T})")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return [(start_slot + i) % N_T for i in range(horizon)]


class PromptEmbeddings(Module):
    """Past tables (``e_*``) and future tables (``e_*_future``)."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        def table(*shape):
            return Parameter(rng.uniform(-EMBED_INIT, EMBED_INIT, size=shape))

        self.e_D = table(cfg.N_T, cfg.d_P)
        self.e_D_future = table(cfg.N_T, cfg.d_P)
        self.e_S = table(cfg.N, cfg.d_P)
        self.e_S_future = table(cfg.N, cfg.d_P)
        self.e_P = table(cfg.T, cfg.N, cfg.d_s)
        self.e_P_future = table(cfg.T_P, cfg.N, cfg.d_s)


class InputEncoders(Module):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.mlp_x = MLP(rng, cfg.c, cfg.d_s, cfg.d_s)
        self.mlp_z = MLP(rng, cfg.f, cfg.d_s, cfg.d_s)
        self.mlp_z_future = MLP(rng, cfg.f, cfg.d_s, cfg.d_s)


def _slots(start_slots: np.ndarray, offset: int, horizon: int, N_T: int) -> np.ndarray:
    return (start_slots[:, None] + offset + np.arange(horizon)[None, :]) % N_T


def _fuse_one(encoded: Tensor, pos, day, station, slots, d_P: int) -> Tensor:
    batch, steps, n, _ = encoded.shape
    h = B.add(encoded, pos) if pos is not None else encoded
    if day is None:
        pad = B.as_tensor(np.zeros((batch, steps, n, 2 * d_P)))
        return B.concat_lastdim([h, pad])
    d = B.reshape(B.gather_rows(day, slots), (batch, steps, 1, d_P))
    d = B.broadcast_to(d, (batch, steps, n, d_P))
    s = B.broadcast_to(station, (batch, steps, n, d_P))
    return B.concat_lastdim([h, d, s])


def fuse_inputs(
    x,
    z_past,
    z_future,
    start_slot,
    emb: PromptEmbeddings | None,
    enc: InputEncoders,
    cfg: ModelConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Encode the three input streams and append the prompt tables.

    Inputs carry a leading batch axis, ``(B, T, N, ·)``; ``start_slot`` is an
    integer or a length-B integer array. With ``emb=None`` (prompt ablation)
    the embedding columns are zero-filled so the width stays ``d_m``.
    """
    x, z_past, z_future = B.as_tensor(x), B.as_tensor(z_past), B.as_tensor(z_future)
    batch = x.shape[0]
    expected = {
        "X": (x, (batch, cfg.T, cfg.N, cfg.c)),
        "Z_past": (z_past, (batch, cfg.T, cfg.N, cfg.f)),
        "Z_future": (z_future, (batch, cfg.T_P, cfg.N, cfg.f)),
    }
    for name, (t, shape) in expected.items():
        if t.shape != shape:
            raise B.ShapeError(f"{name}: expected shape {shape}, got {t.shape}")
    slots = np.broadcast_to(np.asarray(start_slot, dtype=np.intp), (batch,))
    if np.any(slots < 0) or np.any(slots >= cfg.N_T):
        raise ValueError(f"start_slot outside [0, {cfg.N_T})")

    past = _slots(slots, 0, cfg.T, cfg.N_T)
    future = _slots(slots, cfg.T, cfg.T_P, cfg.N_T)
    if emb is None:
        tables_past = tables_future = (None, None, None)
    else:
        tables_past = (emb.e_P, emb.e_D, emb.e_S)
        tables_future = (emb.e_P_future, emb.e_D_future, emb.e_S_future)

    h_v = _fuse_one(enc.mlp_x(x), *tables_past, past, cfg.d_P)
    h_z = _fuse_one(enc.mlp_z(z_past), *tables_past, past, cfg.d_P)
    h_z_future = _fuse_one(enc.mlp_z_future(z_future), *tables_future, future, cfg.d_P)
    return h_v, h_z, h_z_future


def project_embeddings_2d(table) -> np.ndarray:
    """PCA projection of table rows onto the top two principal axes.

    Each axis is signed so its largest-magnitude coordinate is positive.
    An all-identical table yields zeros and a ``DegenerateProjectionWarning``.
    """
    data = np.asarray(table.data if isinstance(table, Tensor) else table, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise ValueError(f"need an (n>=2, d>=2) table, got {data.shape}")
    centered = data - data.mean(axis=0)
    if not np.any(centered):
        warnings.warn("all embedding rows identical", DegenerateProjectionWarning, stacklevel=2)
        return np.zeros((data.shape[0], 2))
    cov = centered.T @ centered / data.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    top = vecs[:, np.argsort(vals)[::-1][:2]]
    pivot = np.abs(top).argmax(axis=0)
    top = top * np.sign(top[pivot, np.arange(2)])
    return centered @ top
