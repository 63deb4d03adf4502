"""Continuous spectral-density view of a ModeSet and power-law diagnostics.

The bath spectral density is a sum of unit-area Lorentzians,

    J(nu) = sum_k g_k^2 * (1/pi) (gamma_k/2) / ((gamma_k/2)^2 + (nu-omega_k)^2),

a convention fixed so that the sharp-mode limit of the dephasing integral
reproduces the exact independent-boson mode sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .membrane import ModeSet


@dataclass(frozen=True)
class SpectralDensity:
    """Lorentzian-sum J(nu) over an immutable ModeSet."""

    modes: ModeSet

    @property
    def cutoff(self) -> float:
        return self.modes.cutoff


@dataclass(frozen=True)
class PowerLawFit:
    s: float
    nu_lo: float
    nu_hi: float
    residual: float
    alpha: float


def evaluate_spectral_density(sd: SpectralDensity, nu):
    """J(nu) summed over all modes; accepts scalar or array nu >= 0."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0.0) or not np.all(np.isfinite(nu)):
        raise ValueError("nu must be finite and >= 0")
    w = sd.modes.omegas
    half = 0.5 * sd.modes.dampings
    weight = sd.modes.couplings**2 * half / np.pi
    flat = np.atleast_1d(nu)
    out = np.empty_like(flat)
    # Chunk the nu axis so a large scan over a large ModeSet stays in cache.
    step = max(1, 2_000_000 // max(1, w.size))
    for i in range(0, flat.size, step):
        block = flat[i : i + step, None]
        out[i : i + step] = (weight / (half**2 + (block - w) ** 2)).sum(axis=1)
    return out.reshape(nu.shape) if nu.ndim else float(out[0])


def fit_power_exponent(
    sd: SpectralDensity, nu_lo: float, nu_hi: float, n_points: int = 40
) -> PowerLawFit:
    """Least-squares slope of log J versus log nu over [nu_lo, nu_hi]."""
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    w0 = float(sd.modes.omegas[0])
    nu_c = sd.cutoff
    if not (w0 < nu_lo < nu_hi < nu_c):
        raise ValueError(
            f"fit window must satisfy omega_0 < nu_lo < nu_hi < nu_c "
            f"(omega_0={w0:g}, nu_c={nu_c:g})"
        )
    nus = np.geomspace(nu_lo, nu_hi, n_points)
    js = evaluate_spectral_density(sd, nus)
    if np.any(js <= 0.0):
        raise RuntimeError("non-positive spectral density sample in fit window")
    x = np.log(nus)
    y = np.log(js)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return PowerLawFit(
        s=float(slope),
        nu_lo=nu_lo,
        nu_hi=nu_hi,
        residual=resid,
        alpha=standard_form_params(sd, float(slope)),
    )


def standard_form_params(sd: SpectralDensity, s: float) -> float:
    """Dimensionless coupling alpha of the standard power-law form.

    Matching J(nu) = 2 pi alpha nu_c^(1-s) nu^s against the Lorentzian sum
    gives 2 pi alpha nu_c^(1-s) = g0^2.
    """
    if not -1.0 <= s <= 1.0:
        raise ValueError("exponent s must lie in [-1, 1]")
    g0 = float(sd.modes.couplings[0])
    return g0**2 / (2.0 * np.pi * sd.cutoff ** (1.0 - s))


def default_fit_window(sd: SpectralDensity) -> tuple[float, float]:
    """[10 omega_0, nu_c/10]: clear of the structured low edge and the rolloff."""
    return 10.0 * float(sd.modes.omegas[0]), sd.cutoff / 10.0


def sample_spectrum(sd: SpectralDensity, nu_min: float, nu_max: float, n: int, log: bool = True):
    """(nu, J) samples for emission; log or linear grid."""
    if not 0.0 <= nu_min < nu_max:
        raise ValueError("need 0 <= nu_min < nu_max")
    if n < 2:
        raise ValueError("need at least two samples")
    if log:
        if nu_min <= 0.0:
            raise ValueError("log grid needs nu_min > 0")
        nus = np.geomspace(nu_min, nu_max, n)
    else:
        nus = np.linspace(nu_min, nu_max, n)
    return nus, evaluate_spectral_density(sd, nus)
