"""Training loop with the intervention objective, and evaluation helpers."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import Tape, no_grad
from .config import ModelConfig, TrainConfig
from .data import (
    AirSeries,
    DataError,
    NormStats,
    WindowSample,
    fit_normalizer,
    inject_future_noise,
    make_windows,
    normalize_series,
    split_windows,
    stack_samples,
)
from .intervention import init_mask_bank, intervention_loss, plain_loss
from .metrics import DEFAULT_THRESHOLD, MetricsReport, compute_metrics
from .model import AirCadeModel, model_forward
from .optim import RMSprop

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "env", "train_loss", "val_mae")

_TRAIN_NOISE, _EVAL_NOISE = 1, 2


class NumericError(FloatingPointError):
    pass


@dataclass
class PreparedData:
    stats: NormStats
    train: list[WindowSample]
    val: list[WindowSample]
    test: list[WindowSample]
    windows: list[WindowSample]


def prepare_data(series: AirSeries, model_cfg: ModelConfig, train_cfg: TrainConfig) -> PreparedData:
    if (series.N, series.c, series.f) != (model_cfg.N, model_cfg.c, model_cfg.f):
        raise DataError(
            f"series has (N, c, f) = {(series.N, series.c, series.f)}, "
            f"model expects {(model_cfg.N, model_cfg.c, model_cfg.f)}"
        )
    if not model_cfg.no_prompt and series.N_T != model_cfg.N_T:
        raise DataError(f"series has {series.N_T} samples/day, model N_T = {model_cfg.N_T}")
    stats = fit_normalizer(series, train_cfg.train_ratio)
    windows = make_windows(normalize_series(series, stats), model_cfg.T, model_cfg.T_P, train_cfg.stride)
    train, val, test = split_windows(windows, series.T_total, train_cfg.train_ratio, train_cfg.val_ratio)
    if not train:
        raise DataError("no training windows fit inside the training range")
    return PreparedData(stats, train, val, test, windows)


def noisy(samples: Sequence[WindowSample], sigma: float, seed: int, epoch: int | None = None) -> list[WindowSample]:
    """Future-weather noise; fresh per epoch when ``epoch`` is given, else fixed per sample."""
    if sigma == 0:
        return list(samples)
    if epoch is None:
        return [inject_future_noise(s, sigma, (seed, _EVAL_NOISE, s.t0)) for s in samples]
    return [inject_future_noise(s, sigma, (seed, _TRAIN_NOISE, epoch, s.t0)) for s in samples]


def predict_windows(model: AirCadeModel, samples: Sequence[WindowSample], batch_size: int = 32) -> np.ndarray:
    """Normalized predictions, shape (S, T_P, N, c)."""
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            b = stack_samples(samples[i : i + batch_size])
            out.append(model_forward(model, b.x, b.z_past, b.z_future, b.start_slot).data)
    return np.concatenate(out, axis=0)


def mean_abs_error(model: AirCadeModel, samples: Sequence[WindowSample], batch_size: int = 32) -> float:
    if not samples:
        return float("nan")
    pred = predict_windows(model, samples, batch_size)
    return float(np.mean(np.abs(pred - np.stack([s.y for s in samples]))))


def evaluate(
    model: AirCadeModel,
    samples: Sequence[WindowSample],
    stats: NormStats,
    threshold: float = DEFAULT_THRESHOLD,
    sigma: float = 0.0,
    seed: int = 0,
) -> MetricsReport:
    """Metrics in raw units; noise (if any) is the fixed evaluation noise."""
    if not samples:
        raise DataError("no samples to evaluate")
    samples = noisy(samples, sigma, seed)
    pred = stats.denormalize_aqi(predict_windows(model, samples))
    truth = stats.denormalize_aqi(np.stack([s.y for s in samples]))
    return compute_metrics(pred, truth, threshold)


@dataclass
class TrainResult:
    model: AirCadeModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = float("nan")
    steps: int = 0


def train(
    model: AirCadeModel,
    train_samples: Sequence[WindowSample],
    val_samples: Sequence[WindowSample],
    cfg: TrainConfig,
) -> TrainResult:
    """RMSprop on the intervention objective; keeps the best-validation weights."""
    cfg.validate()
    mcfg = model.config
    opt = RMSprop(model.parameters(), cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps)
    order_rng = np.random.default_rng((cfg.seed, 0))
    bank = None if cfg.no_intv else init_mask_bank(cfg.K, mcfg.T_P, mcfg.N, cfg.keep_prob, cfg.seed)
    val_fixed = noisy(val_samples, cfg.noise_sigma, cfg.seed)

    result = TrainResult(model)
    best_state = model.state_dict()
    best_val = float("inf")
    stale = 0
    step = 0
    n = len(train_samples)
    for epoch in range(cfg.max_epochs):
        if bank is not None and cfg.resample_masks_every_epoch and epoch > 0:
            bank = init_mask_bank(cfg.K, mcfg.T_P, mcfg.N, cfg.keep_prob, cfg.seed + epoch)
        epoch_samples = noisy(train_samples, cfg.noise_sigma, cfg.seed, epoch)
        order = order_rng.permutation(n)
        rows = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            batch = stack_samples([epoch_samples[i] for i in order[start : start + cfg.batch_size]])
            opt.zero_grad()
            with Tape() as tape:
                if bank is None:
                    loss, env = plain_loss(model, batch, cfg.beta), -1
                else:
                    loss, env = intervention_loss(model, batch, bank, cfg.beta)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            tape.backward(loss)
            opt.step()
            step += 1
            rows.append({"epoch": epoch, "step": step, "env": env, "train_loss": value})

        val_mae = mean_abs_error(model, val_fixed)
        for r in rows:
            r["val_mae"] = val_mae
        result.log.extend(rows)
        log.info("epoch %d step %d val_mae %.6f", epoch, step, val_mae)

        if val_fixed:
            if val_mae < best_val:
                best_val, best_state, stale = val_mae, model.state_dict(), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
        else:
            best_state, result.best_epoch = model.state_dict(), epoch
        if cfg.max_steps and step >= cfg.max_steps:
            break

    model.load_state_dict(best_state)
    result.best_val_mae = best_val if val_fixed else float("nan")
    result.steps = step
    return result


def write_log(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            val = "" if np.isnan(r["val_mae"]) else repr(float(r["val_mae"]))
            writer.writerow([r["epoch"], r["step"], r["env"], repr(float(r["train_loss"])), val])
