"""Mask environments and the variance-regularized intervention objective."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backbone as B
from .attention import AttentionMask
from .backbone import Tensor
from .data import WindowBatch
from .model import AirCadeModel, model_forward


class SmallBatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MaskBank:
    pairs: tuple[tuple[AttentionMask, AttentionMask], ...]
    keep_prob: float
    seed: int

    @property
    def K(self) -> int:
        return len(self.pairs)


def _sample_mask(rng: np.random.Generator, size: int, keep_prob: float) -> AttentionMask:
    m = (rng.random((size, size)) < keep_prob).astype(np.float64)
    dead = m.sum(axis=1) == 0
    m[dead, dead.nonzero()[0]] = 1.0
    return AttentionMask(m)


def init_mask_bank(K: int, T_P: int, N: int, keep_prob: float = 0.9, seed: int = 0) -> MaskBank:
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    rng = np.random.default_rng(seed)
    pairs = tuple(
        (_sample_mask(rng, T_P, keep_prob), _sample_mask(rng, N, keep_prob)) for _ in range(K)
    )
    return MaskBank(pairs, keep_prob, seed)


def per_sample_mae(pred: Tensor, y) -> Tensor:
    """Mean absolute error over every axis but the first."""
    err = B.absolute(B.sub(pred, y))
    return B.mean(err, axis=tuple(range(1, err.ndim)))


def per_sample_losses(
    model: AirCadeModel, batch: WindowBatch, env_index: int | None, bank: MaskBank | None
) -> Tensor:
    """Per-sample MAE under environment ``env_index`` (None = unmasked)."""
    masks = None
    if env_index is not None:
        if bank is None or not 0 <= env_index < bank.K:
            raise IndexError(f"environment {env_index} outside bank of size {0 if bank is None else bank.K}")
        masks = model.masks_for(*bank.pairs[env_index])
    pred = model_forward(model, batch.x, batch.z_past, batch.z_future, batch.start_slot, masks)
    return per_sample_mae(pred, batch.y)


def population_variance(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean((values - values.mean()) ** 2))


def select_environment(losses_per_env: Sequence) -> int:
    """Index of the environment with the largest loss variance (first on ties)."""
    variances = [population_variance(B.as_tensor(l).data) for l in losses_per_env]
    if not variances:
        raise ValueError("no environments")
    return int(np.argmax(variances))


def variance_objective(losses: Tensor, beta: float) -> Tensor:
    """``Var_B{losses} + beta * Mean_B{losses}`` with population variance."""
    mu = B.mean(losses)
    if losses.shape[0] < 2:
        warnings.warn("batch of one sample: variance term is 0", SmallBatchWarning, stacklevel=2)
        return B.scale(mu, beta)
    var = B.mean(B.square(B.sub(losses, mu)))
    return B.add(var, B.scale(mu, beta))


def intervention_loss(
    model: AirCadeModel,
    batch: WindowBatch,
    bank: MaskBank,
    beta: float = 1.0,
    env: int | None = None,
) -> tuple[Tensor, int]:
    """Objective under the max-variance environment; returns (loss, env index).

    Passing ``env`` freezes the selection (used for gradient checks).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if env is None:
        losses = [per_sample_losses(model, batch, k, bank) for k in range(bank.K)]
        env = select_environment(losses)
        chosen = losses[env]
    else:
        chosen = per_sample_losses(model, batch, env, bank)
    return variance_objective(chosen, beta), env


def plain_loss(model: AirCadeModel, batch: WindowBatch, beta: float = 1.0) -> Tensor:
    """The same objective without any masks (the ``no_intv`` path)."""
    return variance_objective(per_sample_losses(model, batch, None, None), beta)
