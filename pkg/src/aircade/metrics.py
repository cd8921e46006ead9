"""Point-error and pollution-event metrics in raw (denormalized) units."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_THRESHOLD = 75.0  # ug/m^3
MAPE_FLOOR = 1.0  # truths with |y| below this are left out of MAPE

METRIC_FIELDS = ("mae", "rmse", "mape_percent", "csi_percent", "pod_percent", "far_percent")


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape_percent: float
    csi_percent: float
    pod_percent: float
    far_percent: float
    event_threshold: float
    count: int
    hits: int
    misses: int
    false_alarms: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return 100.0 * num / den


def compute_metrics(pred, truth, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    """MAE/RMSE/MAPE plus CSI/POD/FAR for events ``value > threshold``.

    Sums are correctly rounded (``math.fsum``) so results do not depend on
    array layout. Zero denominators give 0 and a flag such as ``"pod_undefined"``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.size == 0:
        raise ValueError("empty arrays")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    flags: list[str] = []
    err = (pred - truth).ravel()
    n = err.size
    mae = math.fsum(np.abs(err)) / n
    rmse = math.sqrt(math.fsum(err * err) / n)
    valid = np.abs(truth.ravel()) >= MAPE_FLOOR
    if valid.any():
        ratios = np.abs(err[valid]) / np.abs(truth.ravel()[valid])
        mape = 100.0 * math.fsum(ratios) / ratios.size
    else:
        flags.append("mape_undefined")
        mape = 0.0

    p_evt, t_evt = pred > threshold, truth > threshold
    hits = int(np.sum(p_evt & t_evt))
    misses = int(np.sum(~p_evt & t_evt))
    fa = int(np.sum(p_evt & ~t_evt))
    csi = _ratio(hits, hits + misses + fa, "csi_undefined", flags)
    pod = _ratio(hits, hits + misses, "pod_undefined", flags)
    far = _ratio(fa, hits + fa, "far_undefined", flags)
    return MetricsReport(mae, rmse, mape, csi, pod, far, float(threshold), int(pred.size),
                         hits, misses, fa, flags)
