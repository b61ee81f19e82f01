"""Type-II collinear degenerate SPDC source model for periodically poled KTP.

Covers temperature-dependent dispersion, quasi-phase-matching, the joint
spectral amplitude of the down-converted pair, and the absolute pair rate
anchored to a calibrated reference point.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources

import numpy as np

PLANCK_H = 6.62607015e-34  # J s
C_LIGHT = 2.99792458e8     # m / s


class DispersionRangeError(ValueError):
    """Wavelength outside the Sellmeier validity window."""


class NoPhaseMatchError(RuntimeError):
    """Phase mismatch has no zero crossing in the searched temperature span."""


@dataclass(frozen=True)
class SellmeierCoefficients:
    """One principal axis: base dispersion plus thermal correction polynomials.

    form is "one-pole" (coefficients A, B, C, D) or "two-pole"
    (A, B, C, D, E, F); wavelengths in um. n1/n2 coefficients are cubic
    polynomials in 1/lam scaled by 1e-6 and 1e-8 per degree C (and C^2).
    """

    form: str
    coefficients: tuple[float, ...]
    n1_coeffs: tuple[float, float, float, float]
    n2_coeffs: tuple[float, float, float, float]
    valid_um: tuple[float, float] = (0.40, 1.06)
    reference_temperature_c: float = 25.0

    def __post_init__(self) -> None:
        expected = {"one-pole": 4, "two-pole": 6}
        if self.form not in expected:
            raise ValueError(f"unknown Sellmeier form {self.form!r}")
        if len(self.coefficients) != expected[self.form]:
            raise ValueError(
                f"{self.form} form needs {expected[self.form]} coefficients"
            )

    def base_index(self, wavelength_um: float) -> float:
        lam2 = wavelength_um * wavelength_um
        c = self.coefficients
        if self.form == "one-pole":
            n2 = c[0] + c[1] / (1.0 - c[2] / lam2) - c[3] * lam2
        else:
            n2 = (c[0] + c[1] / (1.0 - c[2] / lam2)
                  + c[3] / (1.0 - c[4] / lam2) - c[5] * lam2)
        return float(np.sqrt(n2))

    def _thermal(self, coeffs: tuple[float, ...], wavelength_um: float) -> float:
        inv = 1.0 / wavelength_um
        return coeffs[0] + coeffs[1] * inv + coeffs[2] * inv**2 + coeffs[3] * inv**3


def refractive_index(
    sellmeier: SellmeierCoefficients, wavelength_nm: float, temperature_c: float
) -> float:
    """Index at wavelength (nm) and temperature (C), thermal terms included."""
    lam = wavelength_nm * 1e-3
    lo, hi = sellmeier.valid_um
    if not lo <= lam <= hi:
        raise DispersionRangeError(
            f"{wavelength_nm:.1f} nm outside validity window {lo}-{hi} um"
        )
    dt = temperature_c - sellmeier.reference_temperature_c
    n1 = 1e-6 * sellmeier._thermal(sellmeier.n1_coeffs, lam)
    n2 = 1e-8 * sellmeier._thermal(sellmeier.n2_coeffs, lam)
    return sellmeier.base_index(lam) + n1 * dt + n2 * dt * dt


@dataclass(frozen=True)
class CrystalSpec:
    """Poled crystal: geometry, expansion, and per-role axis dispersion."""

    length_mm: float
    poling_period_um: float
    pump_axis: SellmeierCoefficients
    signal_axis: SellmeierCoefficients
    idler_axis: SellmeierCoefficients
    expansion_alpha: float = 6.7e-6
    expansion_beta: float = 11e-9
    reference_temperature_c: float = 25.0

    def __post_init__(self) -> None:
        if self.length_mm <= 0 or self.poling_period_um <= 0:
            raise ValueError("crystal length and poling period must be positive")


@dataclass(frozen=True)
class PumpSpec:
    """Pump beam: wavelength (nm), power (mW), and waist (um).

    The waist is recorded for provenance; focusing geometry is folded into
    the calibrated pair-rate anchor rather than modelled explicitly.
    """

    wavelength_nm: float
    power_mw: float
    waist_um: float = 120.0

    def __post_init__(self) -> None:
        if self.wavelength_nm <= 0 or self.power_mw < 0:
            raise ValueError("pump wavelength must be positive, power non-negative")

    @property
    def photon_flux_hz(self) -> float:
        """Pump photons per second, P * lam / (h c)."""
        power_w = self.power_mw * 1e-3
        lam_m = self.wavelength_nm * 1e-9
        return power_w * lam_m / (PLANCK_H * C_LIGHT)


def poling_period(crystal: CrystalSpec, temperature_c: float) -> float:
    """Thermally expanded poling period (um) at the given temperature."""
    dt = temperature_c - crystal.reference_temperature_c
    return crystal.poling_period_um * (
        1.0 + crystal.expansion_alpha * dt + crystal.expansion_beta * dt * dt
    )


def phase_mismatch(
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature_c: float,
    signal_wavelength_nm: float | None = None,
) -> float:
    """Collinear quasi-phase mismatch dk (rad/um).

    dk = k_pump - k_signal - k_idler - 2 pi / period(T); the idler wavelength
    follows from energy conservation. Defaults to the degenerate point.
    """
    lam_p = pump.wavelength_nm * 1e-3
    lam_s = (signal_wavelength_nm if signal_wavelength_nm is not None
             else 2.0 * pump.wavelength_nm) * 1e-3
    inv_lam_i = 1.0 / lam_p - 1.0 / lam_s
    if inv_lam_i <= 0:
        raise ValueError("signal wavelength must exceed the pump wavelength")
    lam_i = 1.0 / inv_lam_i
    n_p = refractive_index(crystal.pump_axis, lam_p * 1e3, temperature_c)
    n_s = refractive_index(crystal.signal_axis, lam_s * 1e3, temperature_c)
    n_i = refractive_index(crystal.idler_axis, lam_i * 1e3, temperature_c)
    return 2.0 * np.pi * (
        n_p / lam_p - n_s / lam_s - n_i / lam_i
        - 1.0 / poling_period(crystal, temperature_c)
    )


def phase_matching_temperature(
    crystal: CrystalSpec,
    pump: PumpSpec,
    t_low_c: float = 0.0,
    t_high_c: float = 200.0,
    tolerance_c: float = 0.01,
) -> float:
    """Temperature at which the degenerate phase mismatch vanishes.

    Plain bisection over [t_low_c, t_high_c]; raises NoPhaseMatchError when
    the mismatch does not change sign across the interval.
    """
    f_lo = phase_mismatch(crystal, pump, t_low_c)
    f_hi = phase_mismatch(crystal, pump, t_high_c)
    if f_lo == 0.0:
        return t_low_c
    if f_hi == 0.0:
        return t_high_c
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoPhaseMatchError(
            f"no phase-matching point in [{t_low_c}, {t_high_c}] C"
        )
    lo, hi = t_low_c, t_high_c
    while hi - lo > tolerance_c:
        mid = 0.5 * (lo + hi)
        f_mid = phase_mismatch(crystal, pump, mid)
        if f_mid == 0.0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class JointAmplitude:
    """Sampled joint spectral amplitude over a signal-wavelength grid."""

    signal_wavelengths_nm: np.ndarray
    amplitude: np.ndarray

    def intensity_integral(self) -> float:
        """Integral of |psi|^2 over the signal grid (nm-weighted trapezoid)."""
        return float(np.trapezoid(np.abs(self.amplitude) ** 2,
                                  self.signal_wavelengths_nm))


def joint_amplitude(
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature_c: float,
    signal_wavelengths_nm: np.ndarray | None = None,
) -> JointAmplitude:
    """psi(lam_s) = L * sinc(dk L / 2) on the given signal grid.

    The length prefactor makes the intensity integral scale linearly with
    crystal length (main-lobe narrowing cancels one power of L), matching a
    pair rate proportional to interaction length.
    """
    if signal_wavelengths_nm is None:
        centre = 2.0 * pump.wavelength_nm
        signal_wavelengths_nm = np.linspace(centre - 5.0, centre + 5.0, 2001)
    grid = np.asarray(signal_wavelengths_nm, dtype=float)
    length_um = crystal.length_mm * 1e3
    dk = np.array([
        phase_mismatch(crystal, pump, temperature_c, lam) for lam in grid
    ])
    # np.sinc(x) = sin(pi x)/(pi x); the physics convention sinc(y) = sin(y)/y
    amp = length_um * np.sinc(dk * length_um / (2.0 * np.pi))
    return JointAmplitude(grid, amp)


def pair_generation_rate(
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature_c: float,
    coupling_constant: float,
) -> float:
    """Total pair rate R = C * integral(|psi|^2) * pump photon flux (1/s)."""
    if coupling_constant <= 0:
        raise ValueError("coupling_constant must be positive")
    integral = joint_amplitude(crystal, pump, temperature_c).intensity_integral()
    return coupling_constant * integral * pump.photon_flux_hz


def calibrate_coupling_constant(
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature_c: float,
    target_rate_hz: float,
) -> float:
    """Coupling constant that reproduces target_rate_hz at the given anchor."""
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    integral = joint_amplitude(crystal, pump, temperature_c).intensity_integral()
    return target_rate_hz / (integral * pump.photon_flux_hz)


def _parse_axis(section: configparser.SectionProxy,
                valid: tuple[float, float], t_ref: float) -> SellmeierCoefficients:
    form = section["form"].strip()
    keys = ("A", "B", "C", "D") if form == "one-pole" else ("A", "B", "C", "D", "E", "F")
    coeffs = tuple(float(section[k]) for k in keys)
    n1 = tuple(float(v) for v in section["n1_coeffs_1e6"].split(","))
    n2 = tuple(float(v) for v in section["n2_coeffs_1e8"].split(","))
    if len(n1) != 4 or len(n2) != 4:
        raise ValueError("thermal polynomials need exactly 4 coefficients")
    return SellmeierCoefficients(form, coeffs, n1, n2, valid, t_ref)


def load_crystal_data(path=None) -> dict:
    """Load a crystal dispersion data file.

    Returns a dict with per-axis SellmeierCoefficients ("axes"), the
    pump/signal/idler axis mapping ("roles"), and expansion constants.
    Defaults to the packaged ppKTP data.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is None:
        ref = resources.files("b92sim").joinpath("data/ppktp.ini")
        parser.read_string(ref.read_text(encoding="ascii"))
    else:
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(path)
    meta = parser["meta"]
    valid = (float(meta["valid_min_um"]), float(meta["valid_max_um"]))
    t_ref = float(meta["reference_temperature_c"])
    axes = {}
    for name in parser.sections():
        if name.startswith("axis."):
            axes[name.split(".", 1)[1]] = _parse_axis(parser[name], valid, t_ref)
    roles = {k: parser["axes"][k].strip() for k in ("pump", "signal", "idler")}
    for role, axis in roles.items():
        if axis not in axes:
            raise ValueError(f"{role} mapped to unknown axis {axis!r}")
    return {
        "material": meta.get("material", "unknown"),
        "axes": axes,
        "roles": roles,
        "alpha": float(parser["expansion"]["alpha_per_c"]),
        "beta": float(parser["expansion"]["beta_per_c2"]),
        "reference_temperature_c": t_ref,
    }


def crystal_from_file(length_mm: float, poling_period_um: float,
                      path=None) -> CrystalSpec:
    """Build a CrystalSpec from a dispersion data file (packaged by default)."""
    data = load_crystal_data(path)
    axes, roles = data["axes"], data["roles"]
    return CrystalSpec(
        length_mm=length_mm,
        poling_period_um=poling_period_um,
        pump_axis=axes[roles["pump"]],
        signal_axis=axes[roles["signal"]],
        idler_axis=axes[roles["idler"]],
        expansion_alpha=data["alpha"],
        expansion_beta=data["beta"],
        reference_temperature_c=data["reference_temperature_c"],
    )
