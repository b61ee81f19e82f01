"""Time-tag streams: generation from photon statistics, transforms, and file I/O.

All times are integer picoseconds. A stream is a strictly increasing array of
tag times inside a duration window, which is what the rest of the pipeline
(optics, detectors, coincidence analysis) operates on.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

PS_PER_S = 10**12


class InvalidRateError(ValueError):
    """Per-bin event probability out of the sparse-stream regime."""


class TagFileError(ValueError):
    """Malformed time-tag file."""


@dataclass(frozen=True)
class TimeTagSeries:
    """Strictly increasing int64 tag times (ps) within [0, duration_ps)."""

    tags: np.ndarray
    duration_ps: int

    def __post_init__(self) -> None:
        tags = np.asarray(self.tags, dtype=np.int64)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))
        if self.duration_ps <= 0:
            raise ValueError("duration_ps must be positive")
        if tags.ndim != 1:
            raise ValueError("tags must be one-dimensional")
        if tags.size:
            if tags[0] < 0 or tags[-1] >= self.duration_ps:
                raise ValueError("tags must lie in [0, duration_ps)")
            if tags.size > 1 and not np.all(np.diff(tags) > 0):
                raise ValueError("tags must be strictly increasing")

    @property
    def count(self) -> int:
        return int(self.tags.size)

    @property
    def duration_s(self) -> float:
        return self.duration_ps / PS_PER_S

    @property
    def rate_hz(self) -> float:
        return self.tags.size / self.duration_s


@dataclass(frozen=True)
class SinglePhotonStatModel:
    """Heralded single-photon stream statistics.

    rate_hz is the mean emission rate; coherence_time_ps sets the
    anti-bunching ramp (conditional emission probability rises from zero
    back to the unconditional value over roughly one coherence time).
    """

    rate_hz: float
    coherence_time_ps: float = 10.0
    bin_resolution_ps: int = 1

    def __post_init__(self) -> None:
        if self.rate_hz <= 0:
            raise InvalidRateError("rate_hz must be positive")
        if self.coherence_time_ps < 0:
            raise ValueError("coherence_time_ps must be non-negative")
        if self.bin_resolution_ps < 1:
            raise ValueError("bin_resolution_ps must be at least 1 ps")
        if self.bin_probability >= 0.1:
            raise InvalidRateError(
                f"per-bin probability {self.bin_probability:.3g} >= 0.1; "
                "stream would not be sparse"
            )

    @property
    def bin_probability(self) -> float:
        return self.rate_hz * self.bin_resolution_ps / PS_PER_S


@dataclass(frozen=True)
class ThermalStatModel:
    """Thermal (background) stream statistics.

    mean_photon_number is retained for bookkeeping only; generation uses the
    per-bin occupancy P1 with two-photon events at P1^2.
    """

    mean_rate_hz: float
    bin_resolution_ps: int = 1
    mean_photon_number: float | None = None

    def __post_init__(self) -> None:
        if self.mean_rate_hz < 0:
            raise InvalidRateError("mean_rate_hz must be non-negative")
        if self.bin_resolution_ps < 1:
            raise ValueError("bin_resolution_ps must be at least 1 ps")
        if self.single_event_probability >= 0.1:
            raise InvalidRateError("per-bin occupancy >= 0.1; not a sparse stream")

    @property
    def single_event_probability(self) -> float:
        return self.mean_rate_hz * self.bin_resolution_ps / PS_PER_S


def _strictly_increasing(tags: np.ndarray, duration_ps: int) -> np.ndarray:
    """Resolve equal/decreasing neighbours in a sorted tag array by +1 ps bumps."""
    if tags.size > duration_ps:
        raise ValueError("more tags than picosecond slots in the duration")
    while tags.size > 1:
        bad = np.nonzero(np.diff(tags) <= 0)[0]
        if not bad.size:
            break
        tags[bad + 1] = tags[bad] + 1
    if tags.size and tags[-1] >= duration_ps:
        cap = duration_ps - 1
        for i in range(tags.size - 1, -1, -1):
            if tags[i] > cap:
                tags[i] = cap
            cap = tags[i] - 1
    return tags


def generate_single_photon_tags(
    model: SinglePhotonStatModel, duration_ps: int, rng: np.random.Generator
) -> TimeTagSeries:
    """Generate an anti-bunched single-photon tag stream.

    Bins of `bin_resolution_ps` are occupied with probability p = rate * bin,
    except that emission is suppressed right after a previous emission: the
    conditional probability ramps from 0 back to p over the coherence time
    (Gaussian CDF ramp, sigma = t_coh / 3). Gaps are drawn geometrically and
    the ramp is applied by exact thinning, so bins never hold two tags.
    """
    duration_ps = int(duration_ps)
    res = model.bin_resolution_ps
    n_bins = duration_ps // res
    if n_bins < 1:
        raise ValueError("duration shorter than one bin")
    p = model.bin_probability

    chunks: list[np.ndarray] = []
    pos = np.int64(-1)
    while True:
        remaining = n_bins - 1 - int(pos)
        if remaining <= 0:
            break
        expect = p * remaining
        size = int(expect + 6.0 * math.sqrt(expect + 1.0)) + 16
        gaps = rng.geometric(p, size).astype(np.int64)
        cand = np.cumsum(gaps) + pos
        if cand[-1] >= n_bins:
            cand = cand[cand < n_bins]
            chunks.append(cand)
            break
        chunks.append(cand)
        pos = cand[-1]
    cand = np.concatenate(chunks) if chunks else np.empty(0, np.int64)

    sigma_ps = model.coherence_time_ps / 3.0
    if sigma_ps > 0.0 and cand.size > 1:
        cutoff_ps = 6.0 * sigma_ps
        times = cand * res
        risky = np.nonzero(np.diff(times) < cutoff_ps)[0] + 1
        if risky.size:
            u = rng.random(risky.size)
            dropped: set[int] = set()
            inv_s = 1.0 / (sigma_ps * math.sqrt(2.0))
            for k in range(risky.size):
                i = int(risky[k])
                prev = i - 1
                while prev in dropped:
                    prev -= 1
                tau = float(times[i] - times[prev])
                if tau >= cutoff_ps:
                    continue
                if u[k] >= math.erf(tau * inv_s):
                    dropped.add(i)
            if dropped:
                keep = np.ones(cand.size, dtype=bool)
                keep[list(dropped)] = False
                cand = cand[keep]

    return TimeTagSeries(cand * res, duration_ps)


def generate_thermal_background_tags(
    model: ThermalStatModel, duration_ps: int, rng: np.random.Generator
) -> TimeTagSeries:
    """Generate a thermal background stream.

    Each bin independently holds a single photon with probability P1 and a
    two-photon event with probability P1^2; a two-photon event is stored as
    tags in consecutive picosecond positions, so the expected tag count is
    (P1 + 2 P1^2) * n_bins.
    """
    duration_ps = int(duration_ps)
    res = model.bin_resolution_ps
    n_bins = duration_ps // res
    if n_bins < 1:
        raise ValueError("duration shorter than one bin")
    p1 = model.single_event_probability
    if p1 == 0.0:
        return TimeTagSeries(np.empty(0, np.int64), duration_ps)

    n_single = int(rng.binomial(n_bins, p1))
    n_double = int(rng.binomial(n_bins - 1, p1 * p1)) if n_bins > 1 else 0

    need = n_single + n_double
    bins = np.unique(rng.integers(0, n_bins - 1 if n_double else n_bins,
                                  size=need, dtype=np.int64))
    while bins.size < need:
        extra = rng.integers(0, n_bins - 1 if n_double else n_bins,
                             size=need - bins.size + 8, dtype=np.int64)
        bins = np.unique(np.concatenate([bins, extra]))
    if bins.size > need:
        bins = rng.choice(bins, size=need, replace=False)
    double_bins = bins[:n_double]
    single_bins = bins[n_double:]

    parts = [single_bins * res, double_bins * res, double_bins * res + 1]
    tags = np.sort(np.concatenate(parts))
    tags = _strictly_increasing(tags, duration_ps)
    return TimeTagSeries(tags, duration_ps)


def resample_tags(series: TimeTagSeries, rng: np.random.Generator) -> TimeTagSeries:
    """Bootstrap-resample a stream from its own inter-arrival gaps.

    Circular block bootstrap with block length ceil(sqrt(n_gaps)): contiguous
    gap blocks are drawn from random start offsets and concatenated until the
    template duration is filled, preserving the gap distribution and its
    short-range correlations. The resampled count varies between draws.
    """
    if series.count < 2:
        raise ValueError("need at least 2 tags to resample inter-arrival gaps")
    gaps = np.diff(series.tags)
    n = gaps.size
    block = int(math.ceil(math.sqrt(n)))
    mean_gap = float(gaps.mean())
    est_blocks = int(series.duration_ps / (mean_gap * block)) + 2

    out: list[np.ndarray] = []
    total = 0
    while total < series.duration_ps:
        starts = rng.integers(0, n, size=est_blocks)
        for s in starts:
            idx = (int(s) + np.arange(block)) % n
            blk = gaps[idx]
            out.append(blk)
            total += int(blk.sum())
            if total >= series.duration_ps:
                break
        est_blocks = 2
    tags = np.cumsum(np.concatenate(out)) - 1
    tags = tags[tags < series.duration_ps]
    return TimeTagSeries(tags, series.duration_ps)


def merge(a: TimeTagSeries, b: TimeTagSeries) -> TimeTagSeries:
    """Merge two streams; identical timestamps keep both tags, the one from
    `b` bumped by +1 ps (cascading if the next slot is taken)."""
    duration = max(a.duration_ps, b.duration_ps)
    combined = np.concatenate([a.tags, b.tags])
    order = np.argsort(combined, kind="stable")
    tags = _strictly_increasing(combined[order], duration)
    return TimeTagSeries(tags, duration)


def apply_delay(series: TimeTagSeries, delta_ps: int) -> TimeTagSeries:
    """Shift every tag by +delta_ps, extending the duration window to match."""
    delta_ps = int(delta_ps)
    if delta_ps < 0:
        raise ValueError("delta_ps must be non-negative")
    return TimeTagSeries(series.tags + delta_ps, series.duration_ps + delta_ps)


def inter_arrival_histogram(series: TimeTagSeries, bin_width_ps: int) -> np.ndarray:
    """Histogram of successive tag differences; index i covers
    [i*bin_width, (i+1)*bin_width) ps."""
    if bin_width_ps < 1:
        raise ValueError("bin_width_ps must be at least 1 ps")
    if series.count < 2:
        raise ValueError("need at least 2 tags for inter-arrival statistics")
    gaps = np.diff(series.tags)
    return np.bincount(gaps // bin_width_ps)


def write_tags(series: TimeTagSeries, path, channel: str = "ch0") -> None:
    """Write a stream as text: a header line with duration and channel id,
    then one unsigned 64-bit picosecond value per line."""
    if any(c.isspace() or c == "=" for c in channel):
        raise TagFileError("channel id must not contain whitespace or '='")
    header = f"duration_ps={series.duration_ps} channel={channel}"
    np.savetxt(path, series.tags, fmt="%d", header=header, comments="# ")


def read_tags(path) -> tuple[TimeTagSeries, str]:
    """Read a stream written by write_tags; returns (series, channel id)."""
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline().strip()
    if not first.startswith("#"):
        raise TagFileError("missing header line")
    try:
        fields = dict(tok.split("=", 1) for tok in first.lstrip("#").split())
        duration = int(fields["duration_ps"])
    except (ValueError, KeyError) as exc:
        raise TagFileError(f"bad header line: {first!r}") from exc
    channel = fields.get("channel", "ch0")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tags = np.loadtxt(path, dtype=np.int64, ndmin=1)
    if tags.size == 0:
        tags = np.empty(0, np.int64)
    return TimeTagSeries(tags, duration), channel
