"""Air-quality series container, AQDS files, windowing and noise injection."""

from __future__ import annotations

import csv
import dataclasses
import io
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SECONDS_PER_DAY = 86400
AQDS_MAGIC = b"AQDS"
AQDS_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQQq")


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class VersionMismatchError(DataError):
    pass


class TruncatedError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class TrailingBytesError(DataError):
    pass


class ZeroVarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AirSeries:
    aqi: np.ndarray  # (T_total, N, c)
    met: np.ndarray  # (T_total, N, f)
    step_seconds: int
    start_epoch_seconds: int
    station_ids: tuple[str, ...]

    def __post_init__(self):
        aqi = np.asarray(self.aqi, dtype=np.float64)
        met = np.asarray(self.met, dtype=np.float64)
        if aqi.ndim != 3 or met.ndim != 3 or aqi.shape[:2] != met.shape[:2]:
            raise DataError(f"aqi {aqi.shape} and met {met.shape} must share (T_total, N)")
        if min(aqi.shape + met.shape) < 1:
            raise DataError("every dimension must be >= 1")
        if self.step_seconds <= 0:
            raise DataError("step_seconds must be positive")
        if len(self.station_ids) != aqi.shape[1]:
            raise DataError(f"{len(self.station_ids)} station ids for N={aqi.shape[1]}")
        object.__setattr__(self, "aqi", aqi)
        object.__setattr__(self, "met", met)
        object.__setattr__(self, "station_ids", tuple(self.station_ids))

    @property
    def T_total(self) -> int:
        return self.aqi.shape[0]

    @property
    def N(self) -> int:
        return self.aqi.shape[1]

    @property
    def c(self) -> int:
        return self.aqi.shape[2]

    @property
    def f(self) -> int:
        return self.met.shape[2]

    @property
    def N_T(self) -> int:
        """Samples per day; requires ``step_seconds`` to divide a day."""
        if SECONDS_PER_DAY % self.step_seconds:
            raise DataError(f"step of {self.step_seconds}s does not divide a day")
        return SECONDS_PER_DAY // self.step_seconds

    def slot_of(self, t: int) -> int:
        seconds = (self.start_epoch_seconds + t * self.step_seconds) % SECONDS_PER_DAY
        return int(seconds // self.step_seconds) % self.N_T


# --- AQDS -----------------------------------------------------------------


def series_to_bytes(series: AirSeries) -> bytes:
    out = io.BytesIO()
    out.write(
        _HEADER.pack(
            AQDS_MAGIC, AQDS_VERSION, series.T_total, series.N, series.c, series.f,
            series.step_seconds, series.start_epoch_seconds,
        )
    )
    out.write(struct.pack("<I", len(series.station_ids)))
    for sid in series.station_ids:
        raw = sid.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw)
    out.write(np.ascontiguousarray(series.aqi, dtype="<f8").tobytes())
    out.write(np.ascontiguousarray(series.met, dtype="<f8").tobytes())
    return out.getvalue()


def write_series(path: str | Path, series: AirSeries) -> None:
    Path(path).write_bytes(series_to_bytes(series))


def _need(buf: bytes, end: int, what: str) -> None:
    if end > len(buf):
        raise TruncatedError(f"truncated AQDS {what}: expected {end} bytes, got {len(buf)}")


def read_aqds_header(buf: bytes) -> tuple[dict, int]:
    if len(buf) < 4 or buf[:4] != AQDS_MAGIC:
        raise BadMagicError("not an AQDS file (bad magic)")
    _need(buf, _HEADER.size, "header")
    _, version, T_total, N, c, f, step, start = _HEADER.unpack_from(buf, 0)
    if version != AQDS_VERSION:
        raise VersionMismatchError(f"AQDS version {version}, expected {AQDS_VERSION}")
    pos = _HEADER.size
    _need(buf, pos + 4, "station block")
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    ids = []
    for _ in range(count):
        _need(buf, pos + 4, "station block")
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        _need(buf, pos + n, "station block")
        ids.append(buf[pos : pos + n].decode("utf-8"))
        pos += n
    header = dict(T_total=T_total, N=N, c=c, f=f, step_seconds=step,
                  start_epoch_seconds=start, station_ids=ids)
    return header, pos


def series_from_bytes(buf: bytes) -> AirSeries:
    h, pos = read_aqds_header(buf)
    T_total, N, c, f = h["T_total"], h["N"], h["c"], h["f"]
    n_aqi, n_met = T_total * N * c, T_total * N * f
    end = pos + 8 * (n_aqi + n_met)
    if end > len(buf):
        raise TruncatedError(f"truncated AQDS payload: expected {end} bytes, got {len(buf)}")
    if end < len(buf):
        raise TrailingBytesError(f"AQDS payload has {len(buf) - end} unexpected trailing bytes")
    aqi = np.frombuffer(buf, "<f8", n_aqi, pos).reshape(T_total, N, c).astype(np.float64)
    met = np.frombuffer(buf, "<f8", n_met, pos + 8 * n_aqi).reshape(T_total, N, f).astype(np.float64)
    if not (np.all(np.isfinite(aqi)) and np.all(np.isfinite(met))):
        raise NonFiniteError("AQDS payload contains non-finite values")
    return AirSeries(aqi, met, h["step_seconds"], h["start_epoch_seconds"], tuple(h["station_ids"]))


def load_series(path: str | Path) -> AirSeries:
    return series_from_bytes(Path(path).read_bytes())


def _read_long_csv(path: str | Path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"time", "station", "channel", "value"}:
            raise DataError(f"{path}: expected columns time,station,channel,value")
        for row in reader:
            rows.append((int(row["time"]), row["station"], row["channel"], float(row["value"])))
    if not rows:
        raise DataError(f"{path}: no rows")
    return rows


def _ordered(values) -> list:
    return list(dict.fromkeys(values))


def series_from_csv(aqi_path: str | Path, met_path: str | Path) -> tuple[AirSeries, dict]:
    """Convert two long-format CSVs (``time,station,channel,value``) to a series.

    ``time`` is epoch seconds on a uniform grid; stations and channels keep
    their first-appearance order. Returns the series and a channel manifest
    (names for the aqi and met channel axes) meant for a sidecar file.
    """
    aqi_rows, met_rows = _read_long_csv(aqi_path), _read_long_csv(met_path)
    times = sorted({r[0] for r in aqi_rows} | {r[0] for r in met_rows})
    stations = _ordered(r[1] for r in aqi_rows + met_rows)
    steps = np.diff(times)
    if len(times) > 1 and (np.any(steps <= 0) or np.any(steps != steps[0])):
        raise DataError("time stamps are not on a uniform grid")
    step = int(steps[0]) if len(times) > 1 else SECONDS_PER_DAY
    t_index = {t: i for i, t in enumerate(times)}
    s_index = {s: i for i, s in enumerate(stations)}

    def fill(rows):
        channels = _ordered(r[2] for r in rows)
        c_index = {ch: i for i, ch in enumerate(channels)}
        arr = np.full((len(times), len(stations), len(channels)), np.nan)
        for t, s, ch, v in rows:
            arr[t_index[t], s_index[s], c_index[ch]] = v
        if np.isnan(arr).any():
            raise DataError(f"{int(np.isnan(arr).sum())} missing (time, station, channel) cells")
        return arr, channels

    aqi, aqi_channels = fill(aqi_rows)
    met, met_channels = fill(met_rows)
    series = AirSeries(aqi, met, step, times[0], tuple(stations))
    return series, {"aqi_channels": aqi_channels, "met_channels": met_channels}


# --- synthetic data --------------------------------------------------------


def generate_synthetic(
    N: int,
    T_total: int,
    c: int = 1,
    f: int = 13,
    seed: int = 0,
    step_seconds: int = 10800,
    start_epoch_seconds: int = 1_483_228_800,
    noise_std: float = 1.0,
) -> AirSeries:
    """Desk-scale stand-in for a KnowAir-like series.

    Meteorology is a set of smooth AR(1) walks with channel-specific offsets
    and scales. AQI (ug/m^3) = station baseline + daily sinusoid + smooth
    spatial field + linear response to met channels 0 and 1 + small noise.
    """
    if min(N, T_total, c, f) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    phi = 0.95
    shocks = rng.standard_normal((T_total, N, f)) * np.sqrt(1 - phi**2)
    walk = np.empty_like(shocks)
    walk[0] = rng.standard_normal((N, f))
    for t in range(1, T_total):
        walk[t] = phi * walk[t - 1] + shocks[t]
    met_offset = rng.uniform(-20, 1000, size=f)
    met_scale = rng.uniform(0.5, 10.0, size=f)
    met = met_offset + met_scale * walk

    n_per_day = SECONDS_PER_DAY / step_seconds
    tod = ((start_epoch_seconds + np.arange(T_total) * step_seconds) % SECONDS_PER_DAY) / step_seconds
    coords = rng.uniform(0, 1, size=(N, 2))
    field = 15.0 * np.sin(2 * np.pi * coords[:, 0]) * np.cos(2 * np.pi * coords[:, 1])
    base = rng.uniform(60, 100, size=N)
    amp = rng.uniform(8, 16, size=N)
    phase = rng.uniform(0, 2 * np.pi, size=N)
    daily = amp * np.sin(2 * np.pi * tod[:, None] / n_per_day + phase)

    aqi = np.empty((T_total, N, c))
    for ch in range(c):
        response = 12.0 * walk[..., 0]
        if f > 1:
            response = response - 8.0 * walk[..., 1]
        gain = 1.0 + 0.5 * ch
        aqi[..., ch] = gain * (base + daily + field + response)
    aqi += noise_std * rng.standard_normal(aqi.shape)
    aqi = np.maximum(aqi, 0.0)
    ids = tuple(f"S{i:03d}" for i in range(N))
    return AirSeries(aqi, met, step_seconds, start_epoch_seconds, ids)


# --- normalization ---------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    aqi_mean: np.ndarray
    aqi_std: np.ndarray
    met_mean: np.ndarray
    met_std: np.ndarray

    def normalize_aqi(self, x):
        return (np.asarray(x) - self.aqi_mean) / self.aqi_std

    def denormalize_aqi(self, x):
        return np.asarray(x) * self.aqi_std + self.aqi_mean

    def normalize_met(self, z):
        return (np.asarray(z) - self.met_mean) / self.met_std

    def denormalize_met(self, z):
        return np.asarray(z) * self.met_std + self.met_mean

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in
                ("aqi_mean", "aqi_std", "met_mean", "met_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in
                     ("aqi_mean", "aqi_std", "met_mean", "met_std")))


def _channel_stats(block: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    flat = block.reshape(-1, block.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    dead = std == 0
    if dead.any():
        warnings.warn(
            f"{label} channels {np.flatnonzero(dead).tolist()} have zero variance; using std=1",
            ZeroVarianceWarning,
            stacklevel=3,
        )
        std = np.where(dead, 1.0, std)
    return mean, std


def train_prefix_length(T_total: int, train_fraction: float) -> int:
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must be in (0, 1]")
    return max(1, int(np.floor(train_fraction * T_total)))


def fit_normalizer(series: AirSeries, train_fraction: float = 0.6) -> NormStats:
    """Per-channel z-score statistics over the training prefix of the series."""
    end = train_prefix_length(series.T_total, train_fraction)
    aqi_mean, aqi_std = _channel_stats(series.aqi[:end], "aqi")
    met_mean, met_std = _channel_stats(series.met[:end], "met")
    return NormStats(aqi_mean, aqi_std, met_mean, met_std)


def normalize_series(series: AirSeries, stats: NormStats) -> AirSeries:
    return dataclasses.replace(
        series, aqi=stats.normalize_aqi(series.aqi), met=stats.normalize_met(series.met)
    )


# --- windowing -------------------------------------------------------------


@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray         # (T, N, c)   steps [t0, t0+T)
    z_past: np.ndarray    # (T, N, f)
    z_future: np.ndarray  # (T_P, N, f) steps [t0+T, t0+T+T_P)
    y: np.ndarray         # (T_P, N, c)
    start_slot: int
    t0: int


def window_count(T_total: int, T: int, T_P: int, stride: int) -> int:
    if T_total < T + T_P:
        return 0
    return (T_total - T - T_P) // stride + 1


def make_windows(series: AirSeries, T: int, T_P: int, stride: int = 1) -> list[WindowSample]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = window_count(series.T_total, T, T_P, stride)
    if n == 0:
        raise DataError(f"series of length {series.T_total} is shorter than T+T_P={T + T_P}")
    try:
        slot_of = series.slot_of
        slot_of(0)
    except DataError:
        def slot_of(t):
            return 0
    out = []
    for i in range(n):
        t0 = i * stride
        mid, end = t0 + T, t0 + T + T_P
        out.append(
            WindowSample(
                x=series.aqi[t0:mid], z_past=series.met[t0:mid],
                z_future=series.met[mid:end], y=series.aqi[mid:end],
                start_slot=slot_of(t0), t0=t0,
            )
        )
    return out


def split_bounds(T_total: int, train_ratio: float = 0.6, val_ratio: float = 0.2) -> tuple[int, int]:
    a = train_prefix_length(T_total, train_ratio)
    b = min(T_total, a + int(np.floor(val_ratio * T_total)))
    return a, b


def split_windows(
    windows: Sequence[WindowSample],
    T_total: int,
    train_ratio: float = 0.6,
    val_ratio: float = 0.2,
) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    """Chronological split by time range; windows straddling a boundary are dropped."""
    a, b = split_bounds(T_total, train_ratio, val_ratio)
    train, val, test = [], [], []
    for w in windows:
        end = w.t0 + w.x.shape[0] + w.y.shape[0]
        if end <= a:
            train.append(w)
        elif w.t0 >= a and end <= b:
            val.append(w)
        elif w.t0 >= b:
            test.append(w)
    return train, val, test


def inject_future_noise(sample: WindowSample, sigma: float = 1.0, seed=0) -> WindowSample:
    """Add N(0, sigma^2) noise to the future meteorology only."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return sample
    rng = np.random.default_rng(seed)
    noisy = sample.z_future + sigma * rng.standard_normal(sample.z_future.shape)
    return dataclasses.replace(sample, z_future=noisy)


@dataclass(frozen=True)
class WindowBatch:
    x: np.ndarray
    z_past: np.ndarray
    z_future: np.ndarray
    y: np.ndarray
    start_slot: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


def stack_samples(samples: Sequence[WindowSample]) -> WindowBatch:
    if not samples:
        raise ValueError("empty batch")
    return WindowBatch(
        x=np.stack([s.x for s in samples]),
        z_past=np.stack([s.z_past for s in samples]),
        z_future=np.stack([s.z_future for s in samples]),
        y=np.stack([s.y for s in samples]),
        start_slot=np.array([s.start_slot for s in samples], dtype=np.intp),
    )
