"""Bessel functions and root finders for the membrane characteristic equations.

Two families of roots define the axisymmetric mode spectra of a circular
membrane: the zeros of J0 (edge under dominant tension) and the roots of

    J0(a) * I1(a) + J1(a) * I0(a) = 0

(clamped plate).  Both characteristic functions are smooth with simple roots
spaced asymptotically by pi, so a coarse scan plus bisection is reliable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

KIND_J0_ZERO = "j0_zero"
KIND_CLAMPED_PLATE = "clamped_plate"

_SCAN_STEP = 0.1
_SCAN_START = 0.5
_BISECT_WIDTH = 1e-12


@dataclass(frozen=True)
class RootList:
    """Strictly increasing positive roots of one characteristic equation."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("root list must be a non-empty 1-d sequence")
        if vals[0] <= 0.0 or np.any(np.diff(vals) <= 0.0):
            raise ValueError("roots must be strictly increasing and positive")
        if self.kind not in (KIND_J0_ZERO, KIND_CLAMPED_PLATE):
            raise ValueError(f"unknown root kind {self.kind!r}")

    def __len__(self):
        return self.values.size


def bessel_j(order: int, x):
    """J0 or J1 of the first kind for x >= 0.

    Raises ValueError for negative arguments or orders outside {0, 1}.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or not np.all(np.isfinite(x)):
        raise ValueError("bessel_j requires finite x >= 0")
    if order == 0:
        out = special.j0(x)
    elif order == 1:
        out = special.j1(x)
    else:
        raise ValueError(f"unsupported order {order}; only 0 and 1 are available")
    return out if out.ndim else float(out)


def bessel_i_scaled(order: int, x):
    """Exponentially scaled modified Bessel function, exp(-x) * I_order(x).

    The raw I_n overflow doubles near x ~ 700; every quantity needed here
    (the ratio I1/I0 and mode-profile ratios) is formed from scaled values,
    so only the scaled functions are exposed.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or not np.all(np.isfinite(x)):
        raise ValueError("bessel_i_scaled requires finite x >= 0")
    if order == 0:
        out = special.i0e(x)
    elif order == 1:
        out = special.i1e(x)
    else:
        raise ValueError(f"unsupported order {order}; only 0 and 1 are available")
    return out if out.ndim else float(out)


def _char_j0(a):
    return special.j0(a)


def _char_clamped(a):
    # Normalizing by I0 keeps the function bounded for large a; I0 > 0 so
    # the roots are unchanged.
    return special.j0(a) * (special.i1e(a) / special.i0e(a)) + special.j1(a)


def _find_roots(char, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    # Roots are spaced ~pi, so this grid cannot skip a sign change.
    grid = np.arange(_SCAN_START, (count + 2) * np.pi, _SCAN_STEP)
    fg = char(grid)
    flips = np.nonzero(np.sign(fg[:-1]) * np.sign(fg[1:]) < 0)[0]
    if flips.size < count:
        raise RuntimeError(
            f"bracketing scan found only {flips.size} of {count} requested roots"
        )
    flips = flips[:count]
    lo = grid[flips].copy()
    hi = grid[flips + 1].copy()
    flo = fg[flips].copy()

    n_iter = int(np.ceil(np.log2(_SCAN_STEP / _BISECT_WIDTH)))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        fmid = char(mid)
        take_lo = np.sign(fmid) == np.sign(flo)
        lo = np.where(take_lo, mid, lo)
        flo = np.where(take_lo, fmid, flo)
        hi = np.where(take_lo, hi, mid)

    # One secant polish; at 1e-12 bracket width this mainly removes the
    # bisection's last-bit bias.
    fhi = char(hi)
    denom = fhi - flo
    safe = denom != 0.0
    secant = np.where(safe, hi - fhi * (hi - lo) / np.where(safe, denom, 1.0), hi)
    roots = np.clip(secant, lo, hi)
    return roots


def zeros_j0(count: int) -> RootList:
    """First `count` positive zeros of J0."""
    return RootList(values=_find_roots(_char_j0, count), kind=KIND_J0_ZERO)


def clamped_plate_roots(count: int) -> RootList:
    """First `count` positive roots of J0(a) I1(a) + J1(a) I0(a) = 0."""
    return RootList(values=_find_roots(_char_clamped, count), kind=KIND_CLAMPED_PLATE)


def characteristic_residual(roots: RootList) -> np.ndarray:
    """Re-evaluate the (normalized) characteristic function at the roots."""
    char = _char_j0 if roots.kind == KIND_J0_ZERO else _char_clamped
    return np.asarray(char(roots.values))
