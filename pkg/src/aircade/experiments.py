"""Desk-scale experiment harnesses: overfitting and future-noise robustness.

Both run on a seeded synthetic series with five stations and four-step
windows. The model dimensions below are small enough that 500 RMSprop steps
finish in well under a minute on one CPU core.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Sequence

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import fit_normalizer, generate_synthetic, make_windows, normalize_series
from .model import AirCadeModel
from .train import mean_abs_error, noisy, prepare_data, train

HARNESS_MODEL = ModelConfig(T=4, T_P=4, N=5, c=1, f=3, d_s=16, d_P=8, d_e=4, K_h=2, L1=1, L2=1)
HARNESS_STEPS = 207  # 207 - 4 - 4 + 1 = 200 windows
EVAL_NOISE_SEED = 12345


def overfit_run(
    seed: int = 0,
    steps: int = 500,
    batch_size: int = 32,
    no_intv: bool = False,
    learning_rate: float = 5e-4,
) -> dict:
    """Train on every window of a noiseless-input set; report train MAE before and after."""
    series = generate_synthetic(HARNESS_MODEL.N, HARNESS_STEPS, HARNESS_MODEL.c, HARNESS_MODEL.f, seed=seed)
    windows = make_windows(normalize_series(series, fit_normalizer(series, 1.0)), 4, 4)
    model = AirCadeModel(dataclasses.replace(HARNESS_MODEL, init_seed=seed))
    cfg = TrainConfig(
        learning_rate=learning_rate, batch_size=batch_size, max_epochs=10**6, max_steps=steps,
        noise_sigma=0.0, seed=seed, no_intv=no_intv,
    )
    initial = mean_abs_error(model, windows)
    start = time.perf_counter()
    result = train(model, windows, [], cfg)
    seconds = time.perf_counter() - start
    final = mean_abs_error(model, windows)
    return dict(windows=len(windows), steps=result.steps, initial_mae=initial, final_mae=final,
                ratio=final / initial, seconds=seconds)


def robustness_run(
    seeds: Sequence[int] = (0, 1, 2),
    steps: int = 500,
    batch_size: int = 32,
    sigma: float = 1.0,
    K: int = 3,
    keep_prob: float = 0.9,
    data_seed: int = 0,
) -> dict:
    """Validation MAE under future-weather noise, with and without intervention.

    Both arms share data, initialization and batch order for a given seed;
    only the objective differs.
    """
    series = generate_synthetic(HARNESS_MODEL.N, HARNESS_STEPS, HARNESS_MODEL.c, HARNESS_MODEL.f,
                                seed=data_seed)
    rows = []
    start = time.perf_counter()
    for seed in seeds:
        mcfg = dataclasses.replace(HARNESS_MODEL, init_seed=seed)
        row = {"seed": seed}
        for arm, no_intv in (("intervention", False), ("plain", True)):
            cfg = TrainConfig(
                batch_size=batch_size, max_epochs=10**6, max_steps=steps, early_stop_patience=10**6,
                noise_sigma=sigma, K=K, keep_prob=keep_prob, seed=seed, no_intv=no_intv,
            )
            data = prepare_data(series, mcfg, cfg)
            model = AirCadeModel(mcfg)
            train(model, data.train, data.val, cfg)
            row[arm] = mean_abs_error(model, noisy(data.val, sigma, EVAL_NOISE_SEED))
        row["ratio"] = row["intervention"] / row["plain"]
        rows.append(row)
    med_i = float(np.median([r["intervention"] for r in rows]))
    med_p = float(np.median([r["plain"] for r in rows]))
    return dict(rows=rows, median_intervention=med_i, median_plain=med_p,
                ratio_of_medians=med_i / med_p,
                median_ratio=float(np.median([r["ratio"] for r in rows])),
                seconds=time.perf_counter() - start)
