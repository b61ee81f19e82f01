"""Detector and time-tagger imperfection models plus background calibration.

A detection chain is quantum-efficiency thinning, then non-paralyzable
dead-time pruning anchored to accepted events, then Gaussian timestamp
jitter. The tagger (TCSPCM) applies a cable/connector loss, its own dead time,
and its own jitter. Background incidence rates are recovered from observed
accidental-coincidence levels through a simulated calibration table.
"""
from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .timetag import (
    PS_PER_S,
    SinglePhotonStatModel,
    TimeTagSeries,
    _strictly_increasing,
    generate_single_photon_tags,
    merge,
)
from .photonics import PolarizedTagSeries

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    njit = None

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

# Vendors quote timing jitter as a FWHM figure. fwhm_standard converts it to
# the Gaussian sigma (FWHM / 2.355); times_2p3 instead uses 2.3 x the quoted
# figure as sigma directly, a legacy reading of some datasheets.
SIGMA_CONVENTIONS = ("fwhm_standard", "times_2p3")


class CalibrationRangeError(ValueError):
    """Requested background level or signal rate outside the table's grids."""


def _dead_time_keep_py(tags: np.ndarray, dead_ps: int) -> np.ndarray:
    keep = np.zeros(tags.size, dtype=np.bool_)
    last = -dead_ps - 1
    for i in range(tags.size):
        t = tags[i]
        if t - last >= dead_ps:
            keep[i] = True
            last = t
    return keep


if njit is not None:
    _dead_time_keep = njit(cache=True)(_dead_time_keep_py)
else:  # pragma: no cover
    _dead_time_keep = _dead_time_keep_py


def dead_time_prune(series: TimeTagSeries, dead_time_ps: int) -> TimeTagSeries:
    """Non-paralyzable dead time: drop tags closer than dead_time_ps to the
    last accepted tag; the earlier tag always survives."""
    if dead_time_ps < 0:
        raise ValueError("dead_time_ps must be non-negative")
    if dead_time_ps == 0 or series.count < 2:
        return series
    keep = _dead_time_keep(series.tags, np.int64(dead_time_ps))
    return TimeTagSeries(series.tags[keep], series.duration_ps)


@dataclass(frozen=True)
class DetectorSpec:
    """Single-photon avalanche detector parameters."""

    quantum_efficiency: float
    dead_time_ps: int = 45_000
    jitter_fwhm_ps: float = 350.0
    sigma_convention: str = "fwhm_standard"

    def __post_init__(self) -> None:
        if not 0.0 < self.quantum_efficiency <= 1.0:
            raise ValueError("quantum_efficiency must be in (0, 1]")
        if self.dead_time_ps < 0 or self.jitter_fwhm_ps < 0:
            raise ValueError("dead time and jitter must be non-negative")
        if self.sigma_convention not in SIGMA_CONVENTIONS:
            raise ValueError(f"sigma_convention must be one of {SIGMA_CONVENTIONS}")

    @property
    def jitter_sigma_ps(self) -> float:
        if self.sigma_convention == "fwhm_standard":
            return self.jitter_fwhm_ps * _FWHM_TO_SIGMA
        return 2.3 * self.jitter_fwhm_ps


@dataclass(frozen=True)
class TcspcmSpec:
    """Time-tagging electronics: SMA path loss, dead time, jitter."""

    sma_loss_db: float = 0.0
    dead_time_ps: int = 0
    jitter_fwhm_ps: float = 0.0
    sigma_convention: str = "fwhm_standard"

    def __post_init__(self) -> None:
        if self.sma_loss_db < 0:
            raise ValueError("sma_loss_db must be non-negative")
        if self.dead_time_ps < 0 or self.jitter_fwhm_ps < 0:
            raise ValueError("dead time and jitter must be non-negative")
        if self.sigma_convention not in SIGMA_CONVENTIONS:
            raise ValueError(f"sigma_convention must be one of {SIGMA_CONVENTIONS}")

    @property
    def efficiency(self) -> float:
        return 10.0 ** (-self.sma_loss_db / 10.0)

    @property
    def jitter_sigma_ps(self) -> float:
        if self.sigma_convention == "fwhm_standard":
            return self.jitter_fwhm_ps * _FWHM_TO_SIGMA
        return 2.3 * self.jitter_fwhm_ps


def _apply_jitter(
    series: TimeTagSeries, sigma_ps: float, rng: np.random.Generator
) -> tuple[TimeTagSeries, np.ndarray]:
    """Gaussian timestamp displacement; returns the new series and the argsort
    that maps old tag order to new (for carrying per-tag payloads)."""
    n = series.count
    if sigma_ps <= 0.0 or n == 0:
        return series, np.arange(n)
    shifted = series.tags + np.rint(rng.normal(0.0, sigma_ps, n)).astype(np.int64)
    order = np.argsort(shifted, kind="stable")
    tags = np.clip(shifted[order], 0, series.duration_ps - 1)
    tags = _strictly_increasing(tags, series.duration_ps)
    return TimeTagSeries(tags, series.duration_ps), order


def detect(
    series: TimeTagSeries | PolarizedTagSeries,
    spec: DetectorSpec,
    rng: np.random.Generator,
) -> TimeTagSeries | PolarizedTagSeries:
    """Detector response: QE thinning, dead-time pruning, then jitter.

    Polarized inputs keep their per-tag labels through every stage.
    """
    polarized = isinstance(series, PolarizedTagSeries)
    base = series.series if polarized else series

    keep = rng.random(base.count) < spec.quantum_efficiency
    tags = base.tags[keep]
    alive = TimeTagSeries(tags, base.duration_ps)
    pruned_keep = (
        _dead_time_keep(alive.tags, np.int64(spec.dead_time_ps))
        if spec.dead_time_ps > 0 and alive.count > 1
        else np.ones(alive.count, dtype=bool)
    )
    pruned = TimeTagSeries(alive.tags[pruned_keep], base.duration_ps)
    out, order = _apply_jitter(pruned, spec.jitter_sigma_ps, rng)

    if not polarized:
        return out
    pol = series.polarization[keep][pruned_keep][order]
    bits = series.bits[keep][pruned_keep][order]
    return PolarizedTagSeries(out, pol, bits)


def tcspcm_record(
    series: TimeTagSeries | PolarizedTagSeries,
    spec: TcspcmSpec,
    rng: np.random.Generator,
) -> TimeTagSeries | PolarizedTagSeries:
    """Tagger response: SMA-loss thinning, dead time, jitter."""
    polarized = isinstance(series, PolarizedTagSeries)
    base = series.series if polarized else series

    keep = rng.random(base.count) < spec.efficiency
    alive = TimeTagSeries(base.tags[keep], base.duration_ps)
    pruned_keep = (
        _dead_time_keep(alive.tags, np.int64(spec.dead_time_ps))
        if spec.dead_time_ps > 0 and alive.count > 1
        else np.ones(alive.count, dtype=bool)
    )
    pruned = TimeTagSeries(alive.tags[pruned_keep], base.duration_ps)
    out, order = _apply_jitter(pruned, spec.jitter_sigma_ps, rng)

    if not polarized:
        return out
    pol = series.polarization[keep][pruned_keep][order]
    bits = series.bits[keep][pruned_keep][order]
    return PolarizedTagSeries(out, pol, bits)


# background calibration -----------------------------------------------------

@dataclass(frozen=True)
class BackgroundPipelineSpec:
    """Reduced detection pipeline used to build the calibration table.

    Herald and receiver arms are modelled as flat efficiencies feeding the
    configured detectors; the observable is the accidental floor density in
    coincidences per second per nanosecond of time difference.
    """

    reference_pair_rate_hz: float
    herald_efficiency: float
    receiver_efficiency: float
    herald_detector: DetectorSpec
    receiver_detector: DetectorSpec
    tcspcm: TcspcmSpec
    coherence_time_ps: float = 10.0
    duration_s: float = 0.25

    def key(self) -> str:
        text = repr(self)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BackgroundCalibrationTable:
    """Accidental floor density vs incident background rate, plus the
    signal-rate scaling grid."""

    reference_signal_rate_hz: float
    incidence_grid_hz: np.ndarray
    level_grid: np.ndarray          # counts / s / ns of time difference
    ratio_signal_rates_hz: np.ndarray
    ratio_values: np.ndarray
    params_key: str

    def __post_init__(self) -> None:
        for name in ("incidence_grid_hz", "level_grid",
                     "ratio_signal_rates_hz", "ratio_values"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if self.incidence_grid_hz.size != self.level_grid.size:
            raise ValueError("incidence and level grids must have equal length")
        if self.ratio_signal_rates_hz.size != self.ratio_values.size:
            raise ValueError("ratio grids must have equal length")
        if np.any(np.diff(self.incidence_grid_hz) <= 0):
            raise ValueError("incidence grid must be strictly increasing")


def _floor_density(
    herald: TimeTagSeries, receiver: TimeTagSeries, duration_s: float
) -> float:
    """Accidental coincidence density (counts/s/ns) between two streams.

    Uses time-difference windows away from zero delay so prompt correlations
    never contaminate the floor estimate.
    """
    # count pairs with |difference| in [5, 55) ns, i.e. away from the prompt peak
    lo, hi = 5_000, 55_000
    a = herald.tags
    r = receiver.tags
    total = 0
    for lows, highs in ((r - hi + 1, r - lo + 1), (r + lo, r + hi)):
        start = np.searchsorted(a, lows, side="left")
        stop = np.searchsorted(a, highs, side="left")
        total += int(np.sum(stop - start))
    span_ns = 2 * (hi - lo) / 1_000
    return total / span_ns / duration_s


def _calibration_point(
    spec: BackgroundPipelineSpec,
    signal_rate_hz: float,
    incident_rate_hz: float,
    rng: np.random.Generator,
) -> float:
    duration_ps = int(spec.duration_s * PS_PER_S)
    pairs = generate_single_photon_tags(
        SinglePhotonStatModel(signal_rate_hz, spec.coherence_time_ps),
        duration_ps, rng,
    )
    keep_h = rng.random(pairs.count) < spec.herald_efficiency
    herald = TimeTagSeries(pairs.tags[keep_h], duration_ps)
    keep_r = rng.random(pairs.count) < spec.receiver_efficiency
    receiver = TimeTagSeries(pairs.tags[keep_r], duration_ps)
    if incident_rate_hz > 0:
        background = generate_single_photon_tags(
            SinglePhotonStatModel(incident_rate_hz, 0.0), duration_ps, rng
        )
        receiver = merge(receiver, background)
    herald = tcspcm_record(detect(herald, spec.herald_detector, rng),
                           spec.tcspcm, rng)
    receiver = tcspcm_record(detect(receiver, spec.receiver_detector, rng),
                             spec.tcspcm, rng)
    return _floor_density(herald, receiver, spec.duration_s)


def calibrate_background(
    spec: BackgroundPipelineSpec,
    incidence_grid_hz: np.ndarray,
    rng: np.random.Generator,
    ratio_signal_rates_hz: np.ndarray | None = None,
) -> BackgroundCalibrationTable:
    """Build the calibration table by sweeping incident background rates at
    the reference signal rate, then sweeping signal rates at a mid-grid
    incidence for the scaling ratios."""
    grid = np.asarray(incidence_grid_hz, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("incidence grid must be increasing with >= 2 points")
    levels = np.array([
        _calibration_point(spec, spec.reference_pair_rate_hz, inc, rng)
        for inc in grid
    ])
    if ratio_signal_rates_hz is None:
        ratio_signal_rates_hz = spec.reference_pair_rate_hz * np.array(
            [0.25, 0.5, 1.0, 1.5, 2.0]
        )
    rates = np.asarray(ratio_signal_rates_hz, dtype=float)
    mid_inc = float(grid[grid.size // 2])
    ref_level = None
    ratio_levels = []
    for rate in rates:
        lvl = _calibration_point(spec, rate, mid_inc, rng)
        ratio_levels.append(lvl)
        if rate == spec.reference_pair_rate_hz:
            ref_level = lvl
    if ref_level is None:
        ref_level = _calibration_point(
            spec, spec.reference_pair_rate_hz, mid_inc, rng
        )
    ratios = np.array(ratio_levels) / ref_level
    return BackgroundCalibrationTable(
        reference_signal_rate_hz=spec.reference_pair_rate_hz,
        incidence_grid_hz=grid,
        level_grid=levels,
        ratio_signal_rates_hz=rates,
        ratio_values=ratios,
        params_key=spec.key(),
    )


def incident_background_rate(
    table: BackgroundCalibrationTable,
    target_level: float,
    signal_rate_hz: float | None = None,
) -> float:
    """Invert the table: incident rate producing the target accidental floor.

    Linear interpolation on the primary grid, scaled by the signal-rate ratio
    grid when the actual signal rate differs from the reference.
    """
    if target_level < 0:
        raise ValueError("target_level must be non-negative")
    if target_level == 0:
        return 0.0
    ratio = 1.0
    if signal_rate_hz is not None and signal_rate_hz != table.reference_signal_rate_hz:
        rr = table.ratio_signal_rates_hz
        if not rr.min() <= signal_rate_hz <= rr.max():
            raise CalibrationRangeError(
                f"signal rate {signal_rate_hz:.3g}/s outside ratio grid "
                f"[{rr.min():.3g}, {rr.max():.3g}]"
            )
        ratio = float(np.interp(signal_rate_hz, rr, table.ratio_values))
    effective = target_level / ratio
    levels = table.level_grid
    if not levels.min() <= effective <= levels.max():
        raise CalibrationRangeError(
            f"target level {effective:.4g} counts/s/ns outside calibrated "
            f"range [{levels.min():.4g}, {levels.max():.4g}]"
        )
    return float(np.interp(effective, levels, table.incidence_grid_hz))


# table persistence ----------------------------------------------------------

def cache_dir() -> Path:
    """Calibration cache directory, overridable via B92SIM_CACHE_DIR."""
    env = os.environ.get("B92SIM_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "b92sim"


def write_calibration_table(table: BackgroundCalibrationTable, path) -> None:
    """Persist a table as sectioned CSV (atomic replace)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# params_key={table.params_key}",
        f"# reference_signal_rate_hz={float(table.reference_signal_rate_hz)!r}",
        "section,x,y",
    ]
    for inc, lvl in zip(table.incidence_grid_hz, table.level_grid):
        lines.append(f"primary,{float(inc)!r},{float(lvl)!r}")
    for rate, ratio in zip(table.ratio_signal_rates_hz, table.ratio_values):
        lines.append(f"ratio,{float(rate)!r},{float(ratio)!r}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_calibration_table(path) -> BackgroundCalibrationTable:
    path = Path(path)
    meta: dict[str, str] = {}
    primary: list[tuple[float, float]] = []
    ratio: list[tuple[float, float]] = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                meta[key] = value
                continue
            if line.startswith("section"):
                continue
            section, x, y = line.split(",")
            (primary if section == "primary" else ratio).append(
                (float(x), float(y))
            )
    return BackgroundCalibrationTable(
        reference_signal_rate_hz=float(meta["reference_signal_rate_hz"]),
        incidence_grid_hz=np.array([p[0] for p in primary]),
        level_grid=np.array([p[1] for p in primary]),
        ratio_signal_rates_hz=np.array([r[0] for r in ratio]),
        ratio_values=np.array([r[1] for r in ratio]),
        params_key=meta.get("params_key", ""),
    )


def cached_calibration(
    spec: BackgroundPipelineSpec,
    incidence_grid_hz: np.ndarray,
    rng: np.random.Generator,
    directory: Path | None = None,
) -> BackgroundCalibrationTable:
    """Load a matching cached table or build and cache one.

    The cache key covers the pipeline spec and the grid, so any parameter
    change regenerates the table instead of silently reusing a stale one.
    """
    directory = Path(directory) if directory is not None else cache_dir()
    grid = np.asarray(incidence_grid_hz, dtype=float)
    grid_key = hashlib.sha256(grid.tobytes()).hexdigest()[:8]
    path = directory / f"bgcal_{spec.key()}_{grid_key}.csv"
    if path.exists():
        table = read_calibration_table(path)
        if table.params_key == spec.key():
            return table
    table = calibrate_background(spec, grid, rng)
    write_calibration_table(table, path)
    return table
