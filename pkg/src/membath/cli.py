"""Batch front door: subcommand dispatch, table emission, run manifests.

Every subcommand writes plain-text tables with `#` headers plus a
manifest.cfg holding the fully resolved configuration, the seed, and the
artifact version, so any run can be reproduced byte for byte from its
manifest with any worker count.
"""

from __future__ import annotations

import argparse
import multiprocessing as mp
import os
import sys

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    apply_overrides,
    default_config,
    dump_config,  # noqa: F401  (re-exported for tooling)
    ensemble_from,
    load_config,
    manifest_text,
    membrane_spec_from,
    spin_from,
    sweep_params_from,
)
from .critical import analyze_sweep, coupling_sweep
from .dephasing import blp_measure, blp_trace, coherence, decoherence_function
from .dynamics import ensemble_polarization
from .membrane import MembraneSpec, build_mode_set, dump_mode_table, mode_set_hash, rescale_coupling
from .spectral import SpectralDensity, default_fit_window, fit_power_exponent, sample_spectrum

_F = "%.17g"


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _table(header_cols, rows, footer_lines=()):
    lines = ["# " + " ".join(header_cols)]
    for row in rows:
        lines.append(" ".join(_F % v for v in row))
    lines.extend(footer_lines)
    return "\n".join(lines) + "\n"


def _emit(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, name), text)


def _finish(out_dir, cfg, subcommand, seed, ms_hash=None):
    _emit(out_dir, "manifest.cfg", manifest_text(cfg, subcommand, seed, ms_hash))


def _cmd_modes(cfg, out, seed, workers):
    modes = build_mode_set(membrane_spec_from(cfg))
    _emit(out, "modes.txt", dump_mode_table(modes))
    _finish(out, cfg, "modes", seed, mode_set_hash(modes))


def _cmd_spectrum(cfg, out, seed, workers):
    modes = build_mode_set(membrane_spec_from(cfg))
    sd = SpectralDensity(modes)
    s = cfg["spectrum"]
    nu_min = s["nu_min"] if s["nu_min"] is not None else float(modes.omegas[0]) / 2.0
    nu_max = s["nu_max"] if s["nu_max"] is not None else 2.0 * modes.cutoff
    nus, js = sample_spectrum(sd, nu_min, nu_max, s["n_points"], log=s["log_grid"])
    text = _table(
        [f"nu_[{modes.unit}] J(nu)"],
        np.column_stack([nus, js]),
    )
    _emit(out, "spectrum.txt", text)
    _finish(out, cfg, "spectrum", seed, mode_set_hash(modes))


def _exponent_point(args):
    base_cfg, tau, n_fit = args
    m = base_cfg["membrane"]
    spec = MembraneSpec(
        boundary="intermediate",
        n_modes=m["n_modes"],
        g0=m["g0"],
        quality_factor=m["quality_factor"],
        frequency_unit=m["frequency_unit"],
        tau=tau,
    )
    sd = SpectralDensity(build_mode_set(spec))
    lo, hi = default_fit_window(sd)
    fit = fit_power_exponent(sd, lo, hi, n_fit)
    return tau, fit.s, fit.residual, fit.alpha


def _cmd_exponent_scan(cfg, out, seed, workers):
    taus = cfg["exponent"]["tau_values"]
    n_fit = cfg["exponent"]["n_fit_points"]
    tasks = [(cfg, tau, n_fit) for tau in taus]
    rows = _map_ordered(_exponent_point, tasks, workers)
    _emit(out, "exponent_scan.txt", _table(["tau s residual alpha"], rows))
    _finish(out, cfg, "exponent-scan", seed)


def _cmd_dephase(cfg, out, seed, workers):
    modes = build_mode_set(membrane_spec_from(cfg))
    d = cfg["dephasing"]
    t_max = d["t_max"] if d["t_max"] is not None else 3.0 * 2.0 * np.pi / float(modes.omegas[0])
    times = np.linspace(0.0, t_max, d["n_points"])
    trace = decoherence_function(modes, d["temperature"], times, d["method"])
    sx = coherence(trace, d["initial_sx"])
    text = _table(
        [f"t_[1/{modes.unit}] gamma_tilde envelope sigma_x"],
        np.column_stack([trace.times, trace.gamma_tilde, trace.envelope, sx]),
    )
    _emit(out, "dephase.txt", text)
    _finish(out, cfg, "dephase", seed, mode_set_hash(modes))


def _blp_point(args):
    cfg, g0, T = args
    m = cfg["membrane"]
    spec = MembraneSpec(
        boundary=m["boundary"],
        n_modes=m["n_modes"],
        g0=g0,
        quality_factor=m["quality_factor"],
        frequency_unit=m["frequency_unit"],
        tau=m["tau"],
    )
    modes = build_mode_set(spec)
    d = cfg["dephasing"]
    trace = blp_trace(modes, T, t_max=d["t_max"], n_points=d["n_points"], method=d["method"])
    return g0, T, blp_measure(trace).measure


def _cmd_blp_scan(cfg, out, seed, workers):
    grid = [(cfg, g0, T) for g0 in cfg["blp"]["g0_values"] for T in cfg["blp"]["temperatures"]]
    rows = _map_ordered(_blp_point, grid, workers)
    _emit(out, "blp_scan.txt", _table(["g0 T blp_measure"], rows))
    _finish(out, cfg, "blp-scan", seed)


def _cmd_dynamics(cfg, out, seed, workers):
    modes = build_mode_set(membrane_spec_from(cfg))
    spin = spin_from(cfg)
    ens = ensemble_from(cfg, seed)
    trace = ensemble_polarization(modes, spin, ens, workers=workers)
    text = _table(
        [f"t_[1/{modes.unit}] polarization stderr"],
        np.column_stack([trace.times, trace.p_mean, trace.p_stderr]),
    )
    _emit(out, "polarization.txt", text)
    _finish(out, cfg, "dynamics", seed, mode_set_hash(modes))


def _cmd_sweep(cfg, out, seed, workers):
    modes = build_mode_set(membrane_spec_from(cfg))
    spin = spin_from(cfg)
    ens = ensemble_from(cfg, seed)
    sw = sweep_params_from(cfg)
    base = rescale_coupling(modes, sw["g_values"][0])
    result = analyze_sweep(
        coupling_sweep(
            base,
            spin,
            ens,
            np.asarray(sw["g_values"]),
            window_fraction=sw["window_fraction"],
            workers=workers,
            estimator=sw["estimator"],
        ),
        threshold=sw["threshold"],
    )
    footer = [
        "# g_c = " + ("absent" if result.g_c is None else _F % result.g_c),
        "# scaling_exponent = "
        + ("absent" if result.scaling_exponent is None else _F % result.scaling_exponent),
        "# scaling_uncertainty = "
        + ("absent" if result.scaling_uncertainty is None else _F % result.scaling_uncertainty),
    ]
    rows = np.column_stack([result.g_values, result.magnetizations, result.m_stderr])
    _emit(out, "sweep.txt", _table(["g0 magnetization stderr"], rows, footer))
    _finish(out, cfg, "sweep", seed, mode_set_hash(modes))


def _map_ordered(fn, tasks, workers):
    """Order-preserving map; pool only when it can actually help."""
    if workers > 1 and len(tasks) > 1:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=min(workers, len(tasks))) as pool:
                return pool.map(fn, tasks)
    return [fn(t) for t in tasks]


_COMMANDS = {
    "modes": _cmd_modes,
    "spectrum": _cmd_spectrum,
    "exponent-scan": _cmd_exponent_scan,
    "dephase": _cmd_dephase,
    "blp-scan": _cmd_blp_scan,
    "dynamics": _cmd_dynamics,
    "sweep": _cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="membath",
        description="Spin-boson dynamics with membrane-engineered baths",
    )
    parser.add_argument("--version", action="version", version=f"membath {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file (key = value sections)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            dest="assignments",
            help="override any config key",
        )
    return parser


def dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        apply_overrides(cfg, args.assignments)
        seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
        cfg["run"]["seed"] = seed
        _COMMANDS[args.subcommand](cfg, args.out, seed, max(1, args.workers))
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
