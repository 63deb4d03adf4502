"""Relaxation dynamics via a hybrid mean-field / memory-kernel method.

Modes below a splitting frequency (chosen near the Rabi frequency) are
propagated as classical oscillators with Wigner-sampled initial conditions
and mean-field back-action from the spin; the remaining high-frequency modes
enter through the phase functions Q1, Q2 of a noninteracting-blip memory
kernel.  The polarization obeys the generalized master equation

    dP/dt = - integral_0^t ds [ K_s(t, s) P(s) + K_a(t, s) ],

    K_s = Omega^2 exp(-Q2(t-s)) cos(Q1(t-s)) cos(zeta(t, s)),
    K_a = Omega^2 exp(-Q2(t-s)) sin(Q1(t-s)) sin(zeta(t, s)),

with zeta(t, s) the phase accumulated by the slow-mode bias
eps(t) = sum_slow g_k sqrt(2 omega_k) x_k(t).  The slow modes feel the force
-(g_k sqrt(2 omega_k)/2) P(t) of the trajectory's own polarization.

Discretization: implicit trapezoidal stepping of the master equation with a
trapezoidal history sum (memory truncated at a configurable lag), and an
exact phase-space rotation of each slow mode with the spin force held
piecewise-constant over the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dephasing import mode_sum_decoherence
from .membrane import ModeSet

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


_DEFAULT_N_TRAJ = 2000
_CHUNK = 25
_P_ABORT = 1.05


class TrajectoryUnstableError(RuntimeError):
    """Polarization left the physical range; integration aborted."""


class EnsembleError(RuntimeError):
    """Too many trajectory failures for a trustworthy ensemble mean."""


@dataclass(frozen=True)
class SpinParams:
    """Driven spin: Rabi frequency in reference units, zero detuning."""

    rabi: float
    detuning: float = 0.0

    def __post_init__(self):
        if not self.rabi > 0.0:
            raise ValueError("rabi must be positive")
        if self.detuning != 0.0:
            raise ValueError("the memory-kernel treatment requires zero detuning")


@dataclass(frozen=True)
class BathSplit:
    slow: ModeSet
    fast: ModeSet
    omega_star: float


@dataclass(frozen=True)
class EnsembleConfig:
    """Run parameters; fields left as None resolve to defaults at run time."""

    t_max: float
    n_traj: int = _DEFAULT_N_TRAJ
    dt: float | None = None
    t_mem: float | None = None
    temperature: float = 0.0
    seed: int = 0
    omega_star: float | None = None

    def __post_init__(self):
        if not self.t_max > 0.0:
            raise ValueError("t_max must be positive")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class PolarizationTrace:
    times: np.ndarray
    p_mean: np.ndarray
    p_stderr: np.ndarray
    n_traj: int


@dataclass(frozen=True)
class TrajectoryResult:
    polarization: np.ndarray
    x_final: np.ndarray
    p_final: np.ndarray


def resolve_config(cfg: EnsembleConfig, modes: ModeSet, spin: SpinParams) -> EnsembleConfig:
    """Fill defaults and enforce the resolution/memory constraints."""
    nu_c = modes.cutoff if len(modes) else None
    omega_star = cfg.omega_star if cfg.omega_star is not None else spin.rabi
    if not omega_star > 0.0:
        raise ValueError("omega_star must be positive")
    dt_cap = 0.02 / spin.rabi
    if nu_c is not None:
        dt_cap = min(dt_cap, 0.05 / nu_c)
    dt = cfg.dt if cfg.dt is not None else dt_cap
    if dt <= 0.0 or dt > dt_cap * (1.0 + 1e-12):
        raise ValueError(f"dt must lie in (0, {dt_cap:g}] to resolve the drive and the cutoff")
    t_mem = cfg.t_mem if cfg.t_mem is not None else min(cfg.t_max, 50.0 / spin.rabi)
    if t_mem < 10.0 / spin.rabi - 1e-12:
        raise ValueError("t_mem must be at least 10 / rabi")
    if t_mem > cfg.t_max * (1.0 + 1e-12):
        raise ValueError("t_mem cannot exceed t_max")
    return replace(cfg, dt=dt, t_mem=t_mem, omega_star=omega_star)


def split_bath(modes: ModeSet, omega_star: float) -> BathSplit:
    """Partition at the threshold: slow modes have omega < omega_star."""
    if not omega_star > 0.0:
        raise ValueError("omega_star must be positive")
    mask = modes.omegas < omega_star
    def subset(keep):
        return ModeSet(
            omegas=modes.omegas[keep],
            couplings=modes.couplings[keep],
            dampings=modes.dampings[keep],
            unit=modes.unit,
        )
    return BathSplit(slow=subset(mask), fast=subset(~mask), omega_star=omega_star)


def niba_phase_functions(fast: ModeSet, T: float, tau_grid) -> tuple[np.ndarray, np.ndarray]:
    """Memory-kernel phase functions on the lag grid.

    Q1(tau) = sum g^2 sin(omega tau)/omega^2,
    Q2(tau) = sum g^2 (1 - cos(omega tau)) coth(omega/2T)/omega^2.

    Q2 is evaluated through the same code path as the dephasing mode sum, so
    Q2(tau) == -Gamma(tau) holds exactly.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau[0] != 0.0:
        raise ValueError("lag grid must start at 0")
    w = fast.omegas
    q1 = np.sin(np.outer(tau, w)) @ (fast.couplings**2 / w**2) if len(fast) else np.zeros_like(tau)
    q2 = -mode_sum_decoherence(fast, T, tau)
    return q1, q2


def sample_slow_initial(slow: ModeSet, T: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Wigner-sampled initial conditions in mass-weighted coordinates.

    Var(x) = coth(omega/2T)/(2 omega), Var(p) = (omega/2) coth(omega/2T);
    the T = 0 branch keeps the zero-point fluctuations.
    """
    w = slow.omegas
    coth = np.ones_like(w) if T <= 0.0 else 1.0 / np.tanh(w / (2.0 * T))
    x = rng.standard_normal(w.size) * np.sqrt(coth / (2.0 * w))
    p = rng.standard_normal(w.size) * np.sqrt(0.5 * w * coth)
    return x, p


@njit(cache=True)
def _trajectory_core(a_rev, b_rev, mem, dt, omega_sq, n_steps, slow_w, slow_c, x, p, out_p,
                     abort_at=_P_ABORT):
    """Implicit-trapezoidal GME stepping; returns 0 or the abort step."""
    n_hist = n_steps + 1
    cz = np.empty(n_hist)
    sz = np.empty(n_hist)
    u = np.empty(n_hist)
    v = np.empty(n_hist)
    out_p[0] = 1.0
    cz[0] = 1.0
    sz[0] = 0.0
    u[0] = 1.0
    v[0] = 0.0
    n_slow = slow_w.size
    eps_prev = 0.0
    for i in range(n_slow):
        eps_prev += slow_c[i] * x[i]
    z_phase = 0.0
    i_prev = 0.0
    denom = 1.0 + 0.25 * dt * dt * omega_sq
    m_total = a_rev.size - 1  # == mem
    for n in range(n_steps):
        pn = out_p[n]
        # exact rotation of each slow mode, spin force frozen over the step
        eps_new = 0.0
        for i in range(n_slow):
            w = slow_w[i]
            xeq = -0.5 * slow_c[i] * pn / (w * w)
            dx = x[i] - xeq
            th = w * dt
            cth = math.cos(th)
            sth = math.sin(th)
            x[i] = xeq + dx * cth + (p[i] / w) * sth
            p[i] = p[i] * cth - w * dx * sth
            eps_new += slow_c[i] * x[i]
        z_phase += 0.5 * dt * (eps_prev + eps_new)
        eps_prev = eps_new
        c_now = math.cos(z_phase)
        s_now = math.sin(z_phase)
        s0 = n + 1 - mem
        if s0 < 0:
            s0 = 0
        length = n + 1 - s0
        off = m_total - length
        au = 0.0
        av = 0.0
        bc = 0.0
        bd = 0.0
        for j in range(length):
            aw = a_rev[off + j]
            bw = b_rev[off + j]
            s = s0 + j
            au += aw * u[s]
            av += aw * v[s]
            bc += bw * cz[s]
            bd += bw * sz[s]
        # trapezoid: the oldest retained point carries half weight
        au -= 0.5 * a_rev[off] * u[s0]
        av -= 0.5 * a_rev[off] * v[s0]
        bc -= 0.5 * b_rev[off] * cz[s0]
        bd -= 0.5 * b_rev[off] * sz[s0]
        partial = dt * (c_now * au + s_now * av + s_now * bc - c_now * bd)
        p_next = (pn - 0.5 * dt * (i_prev + partial)) / denom
        i_prev = partial + 0.5 * dt * omega_sq * p_next
        out_p[n + 1] = p_next
        cz[n + 1] = c_now
        sz[n + 1] = s_now
        u[n + 1] = c_now * p_next
        v[n + 1] = s_now * p_next
        if abs(p_next) > abort_at:
            return n + 1
    return 0


def _lag_kernels(fast: ModeSet, spin: SpinParams, T: float, dt: float, mem: int):
    tau = np.arange(mem + 1) * dt
    q1, q2 = niba_phase_functions(fast, T, tau)
    env = spin.rabi**2 * np.exp(-q2)
    a = env * np.cos(q1)
    b = env * np.sin(q1)
    return a[::-1].copy(), b[::-1].copy()


def run_trajectory(
    split: BathSplit,
    spin: SpinParams,
    q1: np.ndarray,
    q2: np.ndarray,
    init: tuple[np.ndarray, np.ndarray],
    cfg: EnsembleConfig,
) -> TrajectoryResult:
    """Propagate one trajectory from sampled slow-mode initial conditions.

    q1, q2 must be given on the lag grid arange(mem+1) * dt.  Raises
    TrajectoryUnstableError if |P| leaves [-1.05, 1.05].
    """
    if cfg.dt is None or cfg.t_mem is None:
        raise ValueError("cfg must be resolved (dt and t_mem set)")
    dt = cfg.dt
    n_steps = int(round(cfg.t_max / dt))
    mem = int(round(cfg.t_mem / dt))
    mem = min(mem, n_steps)
    if q1.size != mem + 1 or q2.size != mem + 1:
        raise ValueError("phase functions must be sampled on the lag grid of size mem+1")
    env = spin.rabi**2 * np.exp(-q2)
    a_rev = (env * np.cos(q1))[::-1].copy()
    b_rev = (env * np.sin(q1))[::-1].copy()
    x0, p0 = init
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    slow_c = split.slow.couplings * np.sqrt(2.0 * split.slow.omegas)
    out = np.empty(n_steps + 1)
    bad = _trajectory_core(
        a_rev, b_rev, mem, dt, spin.rabi**2, n_steps,
        split.slow.omegas, slow_c, x, p, out,
    )
    if bad:
        raise TrajectoryUnstableError(
            f"|P| exceeded {_P_ABORT} at t={bad * dt:g} (step {bad})"
        )
    return TrajectoryResult(polarization=out, x_final=x, p_final=p)


def _run_chunk(args):
    (indices, slow_w, slow_c, a_rev, b_rev, mem, dt, omega_sq, n_steps, T, seed) = args
    sum_p = np.zeros(n_steps + 1)
    sum_p2 = np.zeros(n_steps + 1)
    n_ok = 0
    failures = []
    coth = np.ones_like(slow_w) if T <= 0.0 else 1.0 / np.tanh(slow_w / (2.0 * T))
    sig_x = np.sqrt(coth / (2.0 * slow_w)) if slow_w.size else slow_w
    sig_p = np.sqrt(0.5 * slow_w * coth) if slow_w.size else slow_w
    out = np.empty(n_steps + 1)
    for idx in indices:
        rng = np.random.default_rng([seed, idx])
        x = rng.standard_normal(slow_w.size) * sig_x
        p = rng.standard_normal(slow_w.size) * sig_p
        bad = _trajectory_core(
            a_rev, b_rev, mem, dt, omega_sq, n_steps, slow_w, slow_c, x, p, out
        )
        if bad:
            failures.append(idx)
            continue
        sum_p += out
        sum_p2 += out * out
        n_ok += 1
    return sum_p, sum_p2, n_ok, failures


def ensemble_polarization(
    modes: ModeSet, spin: SpinParams, cfg: EnsembleConfig, workers: int = 1
) -> PolarizationTrace:
    """Ensemble-averaged polarization with standard errors.

    Deterministic for a fixed (modes, cfg.seed) regardless of worker count:
    per-trajectory generators derive from (seed, index) and partial sums are
    combined in fixed chunk order.  With no slow modes the result is a single
    deterministic master-equation solve with zero standard error.
    """
    cfg = resolve_config(cfg, modes, spin)
    split = split_bath(modes, cfg.omega_star)
    dt = cfg.dt
    n_steps = int(round(cfg.t_max / dt))
    mem = min(int(round(cfg.t_mem / dt)), n_steps)
    a_rev, b_rev = _lag_kernels(split.fast, spin, cfg.temperature, dt, mem)
    times = np.arange(n_steps + 1) * dt
    slow_c = split.slow.couplings * np.sqrt(2.0 * split.slow.omegas)

    if len(split.slow) == 0:
        out = np.empty(n_steps + 1)
        bad = _trajectory_core(
            a_rev, b_rev, mem, dt, spin.rabi**2, n_steps,
            split.slow.omegas, slow_c, np.empty(0), np.empty(0), out,
        )
        if bad:
            raise EnsembleError(f"deterministic solve unstable at step {bad}")
        return PolarizationTrace(
            times=times, p_mean=out, p_stderr=np.zeros_like(out), n_traj=1
        )

    chunks = [
        range(i, min(i + _CHUNK, cfg.n_traj)) for i in range(0, cfg.n_traj, _CHUNK)
    ]
    tasks = [
        (idx, split.slow.omegas, slow_c, a_rev, b_rev, mem, dt,
         spin.rabi**2, n_steps, cfg.temperature, int(cfg.seed))
        for idx in chunks
    ]
    if workers > 1:
        import multiprocessing as mp

        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                results = pool.map(_run_chunk, tasks)
    else:
        results = [_run_chunk(t) for t in tasks]

    sum_p = np.zeros(n_steps + 1)
    sum_p2 = np.zeros(n_steps + 1)
    n_ok = 0
    failures = []
    for cp, cp2, cn, cf in results:
        sum_p += cp
        sum_p2 += cp2
        n_ok += cn
        failures.extend(cf)
    if len(failures) > 0.01 * cfg.n_traj:
        raise EnsembleError(
            f"{len(failures)} of {cfg.n_traj} trajectories aborted (indices {failures[:5]}...)"
        )
    if n_ok == 0:
        raise EnsembleError("no successful trajectories")
    mean = sum_p / n_ok
    if n_ok > 1:
        var = np.maximum(sum_p2 / n_ok - mean**2, 0.0) * n_ok / (n_ok - 1)
        stderr = np.sqrt(var / n_ok)
    else:
        stderr = np.zeros_like(mean)
    return PolarizationTrace(times=times, p_mean=mean, p_stderr=stderr, n_traj=n_ok)
