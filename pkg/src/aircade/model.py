"""Cade/Cadi components, the full forecasting model and its forward pass."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import backbone as B
from .attention import (
    SPATIAL,
    TEMPORAL,
    AttentionMask,
    DiffusionAttentionLayer,
    active_paths,
    inverse_axis_view,
    make_axis_views,
)
from .backbone import Parameter, ShapeError, Tensor
from .config import ConfigError, ModelConfig
from .nn import MLP, LayerNorm, Linear, Module
from .prompt import InputEncoders, PromptEmbeddings, fuse_inputs


class CadeCadiComponent(Module):
    """Encoder (Cade) and decoder (Cadi) sublayers sharing one axis.

    Either half may be absent under the ``no_cade`` / ``no_es`` ablations.
    """

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, axis: str):
        self.axis = axis
        seq_len = cfg.T if axis == TEMPORAL else cfg.N
        paths = active_paths(cfg.no_adp, cfg.no_agg, cfg.no_diff)

        def attn():
            return DiffusionAttentionLayer(
                rng, axis, seq_len, cfg.d_m, cfg.K_h, cfg.d_e,
                cfg.attention_scale_mode, paths, cfg.renormalize_masks,
            )

        d = cfg.d_m
        self.has_cade = not cfg.no_cade
        self.has_cadi = not cfg.no_es
        if self.has_cade:
            self.cade_attn = attn()
            self.cade_mlp = MLP(rng, d, d, d)
            self.cade_ln1 = LayerNorm(d)
            self.cade_ln2 = LayerNorm(d)
        if self.has_cadi:
            self.cadi_attn = attn()
            self.cadi_mlp = MLP(rng, d, d, d)
            self.cadi_ln1 = LayerNorm(d)
            self.cadi_ln2 = LayerNorm(d)


def _check_view(comp: CadeCadiComponent, *views: Tensor) -> None:
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise ShapeError(f"{comp.axis} component: axis views disagree: {sorted(shapes)}")


def cade_forward(comp: CadeCadiComponent, h_z, v_prev, mask: AttentionMask | None = None) -> Tensor:
    h_z, v_prev = B.as_tensor(h_z), B.as_tensor(v_prev)
    _check_view(comp, h_z, v_prev)
    v = comp.cade_ln1(B.add(comp.cade_attn(h_z, h_z, v_prev, mask), v_prev))
    return comp.cade_ln2(B.add(comp.cade_mlp(v), v))


def cadi_forward(comp: CadeCadiComponent, h_z_future, o, mask: AttentionMask | None = None) -> Tensor:
    h_z_future, o = B.as_tensor(h_z_future), B.as_tensor(o)
    _check_view(comp, h_z_future, o)
    v = comp.cadi_ln1(B.add(comp.cadi_attn(h_z_future, h_z_future, o, mask), o))
    return comp.cadi_ln2(B.add(comp.cadi_mlp(v), v))


class AirCadeModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int | None = None):
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
        self.emb = None if cfg.no_prompt else PromptEmbeddings(rng, cfg)
        self.enc = InputEncoders(rng, cfg)
        self.components = [CadeCadiComponent(rng, cfg, TEMPORAL) for _ in range(cfg.L1)] + [
            CadeCadiComponent(rng, cfg, SPATIAL) for _ in range(cfg.L2)
        ]
        self.predictor = Linear(rng, cfg.d_m, cfg.c)
        for name, p in self.named_parameters():
            p.name = name

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if p.shape != state[name].shape:
                raise ShapeError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]

    def masks_for(self, temporal: AttentionMask | None, spatial: AttentionMask | None) -> list:
        return [temporal if c.axis == TEMPORAL else spatial for c in self.components]

    def __call__(self, x, z_past, z_future, start_slot, masks=None) -> Tensor:
        return model_forward(self, x, z_past, z_future, start_slot, masks)


def model_forward(
    model: AirCadeModel,
    x,
    z_past,
    z_future,
    start_slot,
    masks: Sequence[AttentionMask | None] | None = None,
) -> Tensor:
    """Predict ``(T_P, N, c)``, or ``(B, T_P, N, c)`` for batched inputs.

    ``masks`` is None (no intervention) or one mask per component.
    """
    cfg = model.config
    x, z_past, z_future = B.as_tensor(x), B.as_tensor(z_past), B.as_tensor(z_future)
    single = x.ndim == 3
    if single:
        x, z_past, z_future = (B.reshape(t, (1,) + t.shape) for t in (x, z_past, z_future))
    if masks is None:
        masks = [None] * len(model.components)
    elif len(masks) != len(model.components):
        raise ValueError(f"got {len(masks)} masks for {len(model.components)} components")

    h_v, h_z, h_z_future = fuse_inputs(x, z_past, z_future, start_slot, model.emb, model.enc, cfg)
    batch = x.shape[0]
    value = h_v
    for idx, (comp, mask) in enumerate(zip(model.components, masks)):
        try:
            v = make_axis_views(value, comp.axis)
            if comp.has_cade:
                v = cade_forward(comp, make_axis_views(h_z, comp.axis), v, mask)
            if comp.has_cadi:
                v = cadi_forward(comp, make_axis_views(h_z_future, comp.axis), v, mask)
        except (ShapeError, ValueError) as err:
            raise type(err)(f"component {idx} ({comp.axis}): {err}") from err
        value = inverse_axis_view(v, comp.axis, batch, cfg.T_P, cfg.N)
    y = model.predictor(value)
    return B.reshape(y, y.shape[1:]) if single else y


def count_parameters(model: Module) -> int:
    return int(np.sum([p.data.size for p in model.parameters()]))
