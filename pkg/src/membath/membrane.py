"""Discretized bath construction for a circular membrane with a central defect.

The axisymmetric mode spectrum and per-mode couplings follow from the boundary
condition at the rim:

* ``clamped``    -- bending-dominated plate; frequencies scale as the squared
  characteristic roots, couplings fall off as (omega_k/omega_0)^(-1/4).
* ``strained``   -- dominant edge tension; frequencies scale linearly in the
  J0 zeros and every mode couples as strongly as the fundamental.
* ``intermediate`` -- combined bending+tension dispersion
  omega(q) = sqrt(q^4 + tau * q^2) with tension-limit wavenumbers and
  profiles.  This interpolation reproduces the two limits exactly and the
  crossover qualitatively; it is an engineering approximation, not an exact
  solution of the mixed boundary problem.

All frequencies are dimensionless, expressed in units of either the
fundamental mode (``"fundamental"``) or the highest retained mode
(``"cutoff"``).  Couplings are in the same unit; dampings are omega_k / Q.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special
from scipy.integrate import quad

from .bessel import clamped_plate_roots, zeros_j0

BOUNDARY_CLAMPED = "clamped"
BOUNDARY_STRAINED = "strained"
BOUNDARY_INTERMEDIATE = "intermediate"
_BOUNDARIES = (BOUNDARY_CLAMPED, BOUNDARY_STRAINED, BOUNDARY_INTERMEDIATE)

UNIT_FUNDAMENTAL = "fundamental"
UNIT_CUTOFF = "cutoff"
_UNITS = (UNIT_FUNDAMENTAL, UNIT_CUTOFF)


@dataclass(frozen=True)
class MembraneSpec:
    """Input parameters for one bath build."""

    boundary: str
    n_modes: int
    g0: float
    quality_factor: float
    frequency_unit: str = UNIT_FUNDAMENTAL
    tau: float = 0.0

    def __post_init__(self):
        if self.boundary not in _BOUNDARIES:
            raise ValueError(f"boundary must be one of {_BOUNDARIES}, got {self.boundary!r}")
        if self.frequency_unit not in _UNITS:
            raise ValueError(f"frequency_unit must be one of {_UNITS}, got {self.frequency_unit!r}")
        if self.n_modes < 2:
            raise ValueError("n_modes must be >= 2")
        if not self.g0 > 0.0:
            raise ValueError("g0 must be positive")
        if not self.quality_factor > 0.0:
            raise ValueError("quality_factor must be positive")
        if self.tau < 0.0:
            raise ValueError("tau must be >= 0")


@dataclass(frozen=True)
class ModeSet:
    """Immutable discretized bath: frequencies, couplings, damping rates."""

    omegas: np.ndarray
    couplings: np.ndarray
    dampings: np.ndarray
    unit: str

    def __post_init__(self):
        w = np.ascontiguousarray(self.omegas, dtype=float)
        g = np.ascontiguousarray(self.couplings, dtype=float)
        d = np.ascontiguousarray(self.dampings, dtype=float)
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "couplings", g)
        object.__setattr__(self, "dampings", d)
        if not (w.shape == g.shape == d.shape) or w.ndim != 1:
            raise ValueError("omegas, couplings, dampings must be 1-d arrays of equal length")
        if w.size:
            if w[0] <= 0.0 or np.any(np.diff(w) <= 0.0):
                raise ValueError("omegas must be strictly increasing and positive")
            if np.any(g <= 0.0):
                raise ValueError("couplings must be positive")
            if np.any(d <= 0.0):
                raise ValueError("dampings must be positive")
        if self.unit not in _UNITS:
            raise ValueError(f"unit must be one of {_UNITS}, got {self.unit!r}")

    def __len__(self):
        return self.omegas.size

    @property
    def cutoff(self) -> float:
        """Highest retained mode frequency (nu_c)."""
        return float(self.omegas[-1])


class DimensionlessMap(NamedTuple):
    omega0: float  # absolute fundamental frequency, rad/s
    n_modes: int
    tau: float


@dataclass(frozen=True)
class PhysicalParams:
    """Physical membrane and spin-coupling parameters (SI units).

    Only the map to dimensionless inputs consumes these; the simulation core
    never sees them.
    """

    radius: float
    thickness: float
    mass_density: float
    elastic_modulus: float
    poisson_ratio: float
    tensile_strain: float
    lattice_constant: float
    field_gradient: float = 0.0
    g_factor: float = 2.002_319_304_362
    bohr_magneton: float = 9.274_010_0657e-24

    def __post_init__(self):
        for name in ("radius", "thickness", "mass_density", "elastic_modulus", "lattice_constant"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")
        if self.tensile_strain < 0.0:
            raise ValueError("tensile_strain must be >= 0")


@lru_cache(maxsize=8)
def _cached_roots(kind: str, count: int) -> np.ndarray:
    if kind == BOUNDARY_CLAMPED:
        return clamped_plate_roots(count).values
    return zeros_j0(count).values


def dimensionless_dispersion(q, tau: float):
    """Combined bending + tension dispersion omega(q) = sqrt(q^4 + tau q^2)."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("wavenumber q must be positive")
    if tau < 0.0:
        raise ValueError("tau must be >= 0")
    out = np.sqrt(q**4 + tau * q**2)
    return out if out.ndim else float(out)


def _profile_mass(boundary: str, root: float) -> float:
    """2 * integral_0^1 psi(u)^2 u du for one mode, by adaptive quadrature."""
    if boundary == BOUNDARY_CLAMPED:
        j0a = special.j0(root)
        i0ea = special.i0e(root)

        def psi(u):
            # I0(a u)/I0(a) evaluated through scaled functions so large
            # roots cannot overflow.
            ratio = np.exp(root * (u - 1.0)) * special.i0e(root * u) / i0ea
            return special.j0(root * u) - j0a * ratio

    else:  # tension-limit profile, also used for the intermediate case

        def psi(u):
            return special.j0(root * u)

    val, err = quad(lambda u: psi(u) ** 2 * u, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=200)
    if not np.isfinite(val) or (val > 0 and err / val > 1e-8):
        raise RuntimeError(f"profile quadrature did not converge (root={root}, err={err})")
    return 2.0 * val


def coupling_from_profile(boundary: str, k: int, tau: float = 0.0) -> float:
    """Coupling ratio g_k/g0 from first principles.

    Computes sqrt((m0* omega_0) / (mk* omega_k)) with the effective masses
    obtained by quadrature of the printed mode profiles.  Serves as the
    independent check of the closed-form coupling laws used in
    :func:`build_mode_set`.
    """
    if boundary not in _BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}")
    if k < 0:
        raise ValueError("mode index must be >= 0")
    roots = _cached_roots(boundary, k + 1)
    r0, rk = roots[0], roots[k]
    if boundary == BOUNDARY_CLAMPED:
        w_ratio = (rk / r0) ** 2
    elif boundary == BOUNDARY_STRAINED:
        w_ratio = rk / r0
    else:
        w_ratio = dimensionless_dispersion(rk, tau) / dimensionless_dispersion(r0, tau)
    m0 = _profile_mass(boundary, r0)
    mk = _profile_mass(boundary, rk)
    return math.sqrt(m0 / (mk * w_ratio))


def build_mode_set(spec: MembraneSpec) -> ModeSet:
    """Construct the bath from a membrane specification.

    Frequencies and couplings follow the closed-form laws of each boundary
    condition; the intermediate case takes its couplings from the
    tension-limit profile masses J1(q_k)^2 under the combined dispersion.
    """
    n = spec.n_modes
    if spec.boundary == BOUNDARY_CLAMPED:
        r = _cached_roots(BOUNDARY_CLAMPED, n)
        w = (r / r[0]) ** 2
        g = spec.g0 * w**-0.25
    elif spec.boundary == BOUNDARY_STRAINED:
        r = _cached_roots(BOUNDARY_STRAINED, n)
        w = r / r[0]
        g = np.full(n, spec.g0)
    else:
        q = _cached_roots(BOUNDARY_STRAINED, n)
        wq = dimensionless_dispersion(q, spec.tau)
        w = wq / wq[0]
        m = special.j1(q) ** 2
        g = spec.g0 * np.sqrt(m[0] / (m * w))
    # g0 is expressed in the selected output unit, so couplings are not
    # rescaled with the frequency axis: couplings[0] == g0 in either unit.
    if spec.frequency_unit == UNIT_CUTOFF:
        w = w / w[-1]
    return ModeSet(omegas=w, couplings=g, dampings=w / spec.quality_factor, unit=spec.frequency_unit)


def rescale_coupling(modes: ModeSet, g0: float) -> ModeSet:
    """New ModeSet whose fundamental couples at g0; pure elementwise rescale."""
    if not g0 > 0.0:
        raise ValueError("g0 must be positive")
    factor = g0 / modes.couplings[0]
    return ModeSet(
        omegas=modes.omegas,
        couplings=factor * modes.couplings,
        dampings=modes.dampings,
        unit=modes.unit,
    )


def physical_to_dimensionless(phys: PhysicalParams) -> DimensionlessMap:
    """Map physical membrane parameters to the dimensionless inputs.

    Returns the absolute fundamental frequency for the regime selected by the
    bending-to-tension ratio tau = 12 (1 - sigma^2) eps (R/h)^2, the mode
    count floor(R/a) imposed by the lattice constant, and tau itself.
    """
    R, h = phys.radius, phys.thickness
    sigma = phys.poisson_ratio
    tau = 12.0 * (1.0 - sigma**2) * phys.tensile_strain * (R / h) ** 2
    n_modes = int(math.floor(R / phys.lattice_constant))
    if tau < 1.0:
        a1 = _cached_roots(BOUNDARY_CLAMPED, 1)[0]
        omega0 = (a1 / R) ** 2 * math.sqrt(
            phys.elastic_modulus * h**3 / (12.0 * phys.mass_density * (1.0 - sigma**2))
        )
    else:
        b1 = _cached_roots(BOUNDARY_STRAINED, 1)[0]
        omega0 = (b1 / R) * math.sqrt(
            phys.elastic_modulus * h * phys.tensile_strain / phys.mass_density
        )
    return DimensionlessMap(omega0=omega0, n_modes=n_modes, tau=tau)


def dump_mode_table(modes: ModeSet) -> str:
    """Serialize to the plain-text table; exact round trip at full precision."""
    lines = [
        "# membath mode table",
        f"# frequency_unit: {modes.unit}",
        "# columns: index omega coupling damping",
    ]
    for i in range(len(modes)):
        lines.append(
            "%d %.17g %.17g %.17g" % (i, modes.omegas[i], modes.couplings[i], modes.dampings[i])
        )
    return "\n".join(lines) + "\n"


def parse_mode_table(text: str) -> ModeSet:
    unit = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "frequency_unit:" in line:
                unit = line.split("frequency_unit:", 1)[1].strip()
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"malformed mode-table row: {line!r}")
        rows.append((float(parts[1]), float(parts[2]), float(parts[3])))
    if unit is None:
        raise ValueError("mode table is missing the frequency_unit header")
    if not rows:
        raise ValueError("mode table has no data rows")
    arr = np.array(rows, dtype=float)
    return ModeSet(omegas=arr[:, 0], couplings=arr[:, 1], dampings=arr[:, 2], unit=unit)


def save_mode_table(modes: ModeSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_mode_table(modes))


def load_mode_table(path) -> ModeSet:
    with open(path) as fh:
        return parse_mode_table(fh.read())


def mode_set_hash(modes: ModeSet) -> str:
    """Provenance digest of the serialized table."""
    return hashlib.sha256(dump_mode_table(modes).encode()).hexdigest()
