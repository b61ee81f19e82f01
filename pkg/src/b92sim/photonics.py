"""Imperfect passive optics acting on tag streams and transverse beam profiles.

Tag-stream elements (splitters, wave plates, filters, fibres, channels) are
Bernoulli survival/routing models; beam-profile elements (lens, free-space
propagation, fibre coupling) operate on sampled one-dimensional complex
fields. Loss parameters are power fractions in [0, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .timetag import TimeTagSeries, _strictly_increasing
from .timetag import apply_delay as _shift_series

C_LIGHT = 2.99792458e8  # m / s

# polarization label codes
POL_H, POL_V, POL_D, POL_A = 0, 1, 2, 3
POL_NAMES = ("H", "V", "D", "A")
_POL_ANGLE_DEG = (0.0, 90.0, 45.0, 135.0)
_ORTHOGONAL = (POL_V, POL_H, POL_A, POL_D)
NO_BIT = -1


class AliasingError(ValueError):
    """Lens phase would wrap faster than the transverse sampling resolves."""


class WindowEscapeError(RuntimeError):
    """Propagated beam reached the edge of the sampled window."""


def db_to_fraction(loss_db: float) -> float:
    """Convert a dB loss figure to a power-loss fraction, 1 - 10^(-dB/10)."""
    if loss_db < 0:
        raise ValueError("loss_db must be non-negative")
    return 1.0 - 10.0 ** (-loss_db / 10.0)


def _check_loss(loss: float, name: str = "loss") -> None:
    if not 0.0 <= loss < 1.0:
        raise ValueError(f"{name} must be a fraction in [0, 1)")


@dataclass(frozen=True)
class PolarizedTagSeries:
    """Tag stream with per-tag polarization labels and optional bit values."""

    series: TimeTagSeries
    polarization: np.ndarray
    bits: np.ndarray

    def __post_init__(self) -> None:
        pol = np.asarray(self.polarization, dtype=np.int8)
        bits = np.asarray(self.bits, dtype=np.int8)
        object.__setattr__(self, "polarization", pol)
        object.__setattr__(self, "bits", bits)
        n = self.series.count
        if pol.shape != (n,) or bits.shape != (n,):
            raise ValueError("polarization and bits must match tag count")
        if pol.size and (pol.min() < POL_H or pol.max() > POL_A):
            raise ValueError("polarization codes must be one of H, V, D, A")

    @property
    def tags(self) -> np.ndarray:
        return self.series.tags

    @property
    def count(self) -> int:
        return self.series.count


def polarized(series: TimeTagSeries, polarization: int,
              bit: int = NO_BIT) -> PolarizedTagSeries:
    """Wrap a plain stream with a uniform polarization label and bit value."""
    n = series.count
    return PolarizedTagSeries(
        series,
        np.full(n, polarization, dtype=np.int8),
        np.full(n, bit, dtype=np.int8),
    )


def _take(pts: PolarizedTagSeries, mask: np.ndarray) -> PolarizedTagSeries:
    sub = TimeTagSeries(pts.tags[mask], pts.series.duration_ps)
    return PolarizedTagSeries(sub, pts.polarization[mask], pts.bits[mask])


def thin(pts: PolarizedTagSeries, survival: float,
         rng: np.random.Generator) -> PolarizedTagSeries:
    """Keep each tag independently with the given survival probability."""
    if not 0.0 <= survival <= 1.0:
        raise ValueError("survival probability must be in [0, 1]")
    if survival >= 1.0:
        return pts
    return _take(pts, rng.random(pts.count) < survival)


# component specifications ---------------------------------------------------

@dataclass(frozen=True)
class LensSpec:
    focal_length_mm: float
    material_loss: float = 0.0


@dataclass(frozen=True)
class MirrorSpec:
    loss: float = 0.0


@dataclass(frozen=True)
class BeamSplitterSpec:
    """transmit_fraction routes to the transmitted port; loss applies first."""
    transmit_fraction: float = 0.5
    loss: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.transmit_fraction < 1.0:
            raise ValueError("transmit_fraction must be strictly between 0 and 1")
        _check_loss(self.loss)


@dataclass(frozen=True)
class PolarizingBeamSplitterSpec:
    """extinction_ratio:1 power split between intended and leaked ports."""
    extinction_ratio: float = 1000.0
    loss: float = 0.0

    def __post_init__(self) -> None:
        if not self.extinction_ratio > 1.0:
            raise ValueError("extinction_ratio must exceed 1")
        _check_loss(self.loss)


@dataclass(frozen=True)
class WavePlateSpec:
    """Half-wave plate: fast axis at angle_deg, mount least count in degrees."""
    angle_deg: float
    least_count_deg: float = 0.0
    loss: float = 0.0

    def __post_init__(self) -> None:
        if self.least_count_deg < 0:
            raise ValueError("least_count_deg must be non-negative")
        _check_loss(self.loss)


@dataclass(frozen=True)
class FilterSpec:
    transmission: float = 1.0
    insertion_loss: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError("transmission must be in [0, 1]")
        _check_loss(self.insertion_loss, "insertion_loss")


@dataclass(frozen=True)
class FibreSpec:
    length_m: float
    loss_per_m: float = 0.0
    mode_field_radius_um: float = 2.8
    mating_loss: float = 0.0
    group_index: float = 1.46

    def __post_init__(self) -> None:
        if self.length_m < 0:
            raise ValueError("length_m must be non-negative")
        _check_loss(self.loss_per_m, "loss_per_m")
        _check_loss(self.mating_loss, "mating_loss")


@dataclass(frozen=True)
class CouplerSpec:
    """Fibre launch stage: transverse positioning least count in um."""
    least_count_um: float = 0.0
    loss: float = 0.0

    def __post_init__(self) -> None:
        if self.least_count_um < 0:
            raise ValueError("least_count_um must be non-negative")
        _check_loss(self.loss)


@dataclass(frozen=True)
class FreeSpaceSpec:
    length_m: float
    loss: float = 0.0

    def __post_init__(self) -> None:
        if self.length_m < 0:
            raise ValueError("length_m must be non-negative")
        _check_loss(self.loss)


# tag-stream elements --------------------------------------------------------

def bs_split(
    pts: PolarizedTagSeries, spec: BeamSplitterSpec, rng: np.random.Generator
) -> tuple[PolarizedTagSeries, PolarizedTagSeries]:
    """Split a stream at a (possibly unbalanced) beam splitter.

    Survivors of the loss draw are routed to the transmitted port with
    probability transmit_fraction, else reflected; with zero loss the two
    outputs partition the input exactly.
    """
    u = rng.random(pts.count)
    survive = u >= spec.loss  # reuse one draw: [0, loss) lost
    to_t = u < spec.loss + (1.0 - spec.loss) * spec.transmit_fraction
    transmitted = _take(pts, survive & to_t)
    reflected = _take(pts, survive & ~to_t)
    return transmitted, reflected


def bs_combine(
    a: PolarizedTagSeries,
    b: PolarizedTagSeries,
    spec: BeamSplitterSpec,
    rng: np.random.Generator,
) -> PolarizedTagSeries:
    """Recombine two streams at a beam splitter, keeping a single output port.

    Input `a` reaches the kept port with probability transmit_fraction,
    input `b` with 1 - transmit_fraction; the other port is discarded.
    """
    keep_a = thin(a, (1.0 - spec.loss) * spec.transmit_fraction, rng)
    keep_b = thin(b, (1.0 - spec.loss) * (1.0 - spec.transmit_fraction), rng)
    return merge_polarized(keep_a, keep_b)


def merge_polarized(a: PolarizedTagSeries, b: PolarizedTagSeries) -> PolarizedTagSeries:
    """Merge two polarized streams, preserving per-tag labels.

    Timestamp collisions bump the tag from `b` by +1 ps, mirroring the plain
    stream merge.
    """
    duration = max(a.series.duration_ps, b.series.duration_ps)
    tags = np.concatenate([a.tags, b.tags])
    pol = np.concatenate([a.polarization, b.polarization])
    bits = np.concatenate([a.bits, b.bits])
    order = np.argsort(tags, kind="stable")
    tags = _strictly_increasing(tags[order], duration)
    series = TimeTagSeries(tags, duration)
    return PolarizedTagSeries(series, pol[order], bits[order])


def pbs_split(
    pts: PolarizedTagSeries,
    spec: PolarizingBeamSplitterSpec,
    rng: np.random.Generator,
) -> tuple[PolarizedTagSeries, PolarizedTagSeries]:
    """Split by polarization: H transmits, V reflects, D/A go 50/50.

    Finite extinction leaks 1/extinction_ratio of H into the reflected port
    (and of V into the transmitted port); labels are not projected, a leaked
    V photon stays V. Loss thins both ports identically.
    """
    n = pts.count
    leak = 1.0 / spec.extinction_ratio
    p_transmit = np.empty(n, dtype=float)
    pol = pts.polarization
    p_transmit[pol == POL_H] = 1.0 - leak
    p_transmit[pol == POL_V] = leak
    diag = (pol == POL_D) | (pol == POL_A)
    p_transmit[diag] = 0.5
    survive = rng.random(n) >= spec.loss
    to_t = rng.random(n) < p_transmit
    return _take(pts, survive & to_t), _take(pts, survive & ~to_t)


def hwp_project(
    pts: PolarizedTagSeries,
    spec: WavePlateSpec,
    rng: np.random.Generator,
    error_deg: float | None = None,
) -> PolarizedTagSeries:
    """Rotate polarization labels through a half-wave plate.

    The plate angle must sit on the 22.5 degree lattice so the four labels map
    onto themselves. A single mount misalignment for the whole stream is drawn
    as Normal(0, least_count/2) unless error_deg pins it; each photon then
    projects onto the orthogonal label with probability sin^2(2 * error).
    """
    steps = spec.angle_deg / 22.5
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError("plate angle must be a multiple of 22.5 degrees")
    out = thin(pts, 1.0 - spec.loss, rng)
    if error_deg is None:
        error_deg = float(rng.normal(0.0, spec.least_count_deg / 2.0)) \
            if spec.least_count_deg > 0 else 0.0

    # linear polarization at angle a maps to 2*theta - a
    lut = np.empty(4, dtype=np.int8)
    for code, ang in enumerate(_POL_ANGLE_DEG):
        new_ang = (2.0 * spec.angle_deg - ang) % 180.0
        lut[code] = _POL_ANGLE_DEG.index(round(new_ang, 6) % 180.0)
    new_pol = lut[out.polarization]

    p_flip = math.sin(math.radians(2.0 * error_deg)) ** 2
    if p_flip > 0.0 and out.count:
        flip = rng.random(out.count) < p_flip
        orth = np.asarray(_ORTHOGONAL, dtype=np.int8)[new_pol]
        new_pol = np.where(flip, orth, new_pol)
    return PolarizedTagSeries(out.series, new_pol.astype(np.int8), out.bits)


def filter_transmit(
    pts: PolarizedTagSeries, spec: FilterSpec, rng: np.random.Generator
) -> PolarizedTagSeries:
    """Spectral filter as flat in-band survival."""
    return thin(pts, spec.transmission * (1.0 - spec.insertion_loss), rng)


def mirror_reflect(
    pts: PolarizedTagSeries, spec: MirrorSpec, rng: np.random.Generator
) -> PolarizedTagSeries:
    return thin(pts, 1.0 - spec.loss, rng)


def fibre_transmit(
    pts: PolarizedTagSeries, spec: FibreSpec, rng: np.random.Generator
) -> PolarizedTagSeries:
    """Propagate through fibre: mating + distributed loss, group delay shift."""
    survival = (1.0 - spec.mating_loss) * (1.0 - spec.loss_per_m) ** spec.length_m
    out = thin(pts, survival, rng)
    delay_ps = int(spec.length_m * spec.group_index / C_LIGHT * 1e12)
    if delay_ps == 0:
        return out
    return PolarizedTagSeries(
        _shift_series(out.series, delay_ps), out.polarization, out.bits
    )


def free_space_transmit(
    pts: PolarizedTagSeries, spec: FreeSpaceSpec, rng: np.random.Generator
) -> PolarizedTagSeries:
    """Free-space channel: fractional loss plus time-of-flight shift."""
    out = thin(pts, 1.0 - spec.loss, rng)
    delay_ps = int(spec.length_m / C_LIGHT * 1e12)
    if delay_ps == 0:
        return out
    return PolarizedTagSeries(
        _shift_series(out.series, delay_ps), out.polarization, out.bits
    )


# transverse-field elements --------------------------------------------------

@dataclass(frozen=True)
class TransverseField:
    """Complex field sampled on a uniform transverse grid (pitch in um)."""

    samples: np.ndarray
    pitch_um: float
    wavelength_nm: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.complex128)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 4:
            raise ValueError("field needs a 1-D grid of at least 4 samples")
        if self.pitch_um <= 0 or self.wavelength_nm <= 0:
            raise ValueError("pitch and wavelength must be positive")

    @property
    def positions_um(self) -> np.ndarray:
        n = self.samples.size
        return (np.arange(n) - n / 2.0) * self.pitch_um

    def power(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.pitch_um)

    def width_um(self) -> float:
        """1/e^2 intensity radius from the second moment (w = 2 sigma)."""
        x = self.positions_um
        inten = np.abs(self.samples) ** 2
        total = inten.sum()
        if total == 0:
            raise ValueError("cannot measure the width of a null field")
        mean = (x * inten).sum() / total
        var = ((x - mean) ** 2 * inten).sum() / total
        return 2.0 * math.sqrt(var)


def gaussian_field(
    waist_um: float,
    wavelength_nm: float,
    n_samples: int = 4096,
    window_um: float | None = None,
) -> TransverseField:
    """Collimated Gaussian beam sampled at its waist, E = exp(-x^2 / w0^2)."""
    if waist_um <= 0:
        raise ValueError("waist_um must be positive")
    if window_um is None:
        window_um = 16.0 * waist_um
    pitch = window_um / n_samples
    x = (np.arange(n_samples) - n_samples / 2.0) * pitch
    return TransverseField(np.exp(-(x / waist_um) ** 2).astype(np.complex128),
                           pitch, wavelength_nm)


def propagate(field: TransverseField, distance_mm: float) -> TransverseField:
    """Free-space propagation by the angular-spectrum method.

    Exact scalar propagation for the sampled band; evanescent components are
    dropped. Raises WindowEscapeError when more than 0.1% of the power lands
    in the outer 5% of the window on either side, since wrap-around would
    corrupt any further use of the field.
    """
    lam_um = field.wavelength_nm * 1e-3
    z_um = distance_mm * 1e3
    n = field.samples.size
    nu = np.fft.fftfreq(n, d=field.pitch_um)
    arg = 1.0 - (lam_um * nu) ** 2
    propagating = arg > 0.0
    kz = np.where(propagating, 2.0 * np.pi / lam_um * np.sqrt(np.abs(arg)), 0.0)
    spectrum = np.fft.fft(field.samples)
    spectrum = np.where(propagating, spectrum * np.exp(1j * kz * z_um), 0.0)
    out = np.fft.ifft(spectrum)

    edge = max(1, n // 20)
    inten = np.abs(out) ** 2
    total = inten.sum()
    if total > 0 and (inten[:edge].sum() + inten[-edge:].sum()) > 1e-3 * total:
        raise WindowEscapeError(
            f"beam reached the window edge after {distance_mm} mm; "
            "enlarge the sampling window"
        )
    return TransverseField(out, field.pitch_um, field.wavelength_nm)


def lens_transform(field: TransverseField, spec: LensSpec) -> TransverseField:
    """Thin lens: quadratic phase exp(-i pi x^2 / (lam f)) plus material loss.

    Raises AliasingError when the phase difference between neighbouring
    samples at the window edge exceeds pi.
    """
    lam_um = field.wavelength_nm * 1e-3
    f_um = spec.focal_length_mm * 1e3
    if f_um == 0:
        raise ValueError("focal length must be non-zero")
    x = field.positions_um
    x_edge = float(np.max(np.abs(x)))
    if 2.0 * x_edge * field.pitch_um >= abs(lam_um * f_um):
        raise AliasingError(
            "lens phase aliases at the window edge; increase sampling density "
            "or shrink the window"
        )
    _check_loss(spec.material_loss, "material_loss")
    phase = np.exp(-1j * np.pi * x**2 / (lam_um * f_um))
    amp = math.sqrt(1.0 - spec.material_loss)
    return TransverseField(field.samples * phase * amp,
                           field.pitch_um, field.wavelength_nm)


@dataclass(frozen=True)
class CouplingResult:
    efficiency: float
    offset_um: float


def fibre_couple(
    field: TransverseField,
    fibre: FibreSpec,
    coupler: CouplerSpec,
    rng: np.random.Generator,
    offset_um: float | None = None,
) -> CouplingResult:
    """Mode-overlap coupling efficiency into a fibre.

    The fibre mode is a Gaussian amplitude exp(-x^2 / w_m^2) with w_m the mode
    field radius. One transverse misalignment per call is drawn as
    Normal(0, least_count/2) unless offset_um pins it. A matched input beam
    offset by exactly w_m couples at exp(-1) of its aligned efficiency.
    """
    if offset_um is None:
        offset_um = float(rng.normal(0.0, coupler.least_count_um / 2.0)) \
            if coupler.least_count_um > 0 else 0.0
    x = field.positions_um
    mode = np.exp(-((x - offset_um) / fibre.mode_field_radius_um) ** 2)
    overlap = np.abs(np.vdot(field.samples, mode)) ** 2
    norm = np.sum(np.abs(field.samples) ** 2) * np.sum(mode**2)
    if norm == 0:
        raise ValueError("cannot couple a null field")
    eta = float(overlap / norm) * (1.0 - coupler.loss)
    return CouplingResult(eta, offset_um)
