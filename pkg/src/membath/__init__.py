"""Spin-boson dynamics with membrane-engineered vibrational baths."""

from .bessel import (
    RootList,
    bessel_i_scaled,
    bessel_j,
    clamped_plate_roots,
    zeros_j0,
)
from .critical import (
    SweepResult,
    analyze_sweep,
    coupling_sweep,
    estimate_critical_coupling,
    fit_magnetization_scaling,
    magnetization,
)
from .dephasing import (
    DephasingTrace,
    NonMarkovianityResult,
    blp_measure,
    blp_trace,
    coherence,
    decoherence_function,
    non_markovianity,
)
from .dynamics import (
    BathSplit,
    EnsembleConfig,
    PolarizationTrace,
    SpinParams,
    ensemble_polarization,
    niba_phase_functions,
    run_trajectory,
    sample_slow_initial,
    split_bath,
)
from .membrane import (
    MembraneSpec,
    ModeSet,
    PhysicalParams,
    build_mode_set,
    coupling_from_profile,
    dimensionless_dispersion,
    load_mode_table,
    mode_set_hash,
    physical_to_dimensionless,
    rescale_coupling,
    save_mode_table,
)
from .spectral import (
    PowerLawFit,
    SpectralDensity,
    evaluate_spectral_density,
    fit_power_exponent,
    standard_form_params,
)

__version__ = "0.1.0"
