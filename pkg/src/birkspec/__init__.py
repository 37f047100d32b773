"""Numerical toolkit for quadratic interval maps: parameter certification,
bound-period partitions, induced Markov systems, Birkhoff spectra and
large-deviation rate functions."""

from .maps import (
    QuadraticMap, OrbitSegment, Observable,
    iterate, lyapunov_average, birkhoff_average, fixed_points,
    hat_fixed_point, OBS_X, OBS_X2, OBS_COSPIX,
    polynomial_observable, lyapunov_proxy, resolve_observable,
)
from .certify import (
    CertificationConfig, ConditionReport,
    check_a2, check_a3, check_a4_heuristic, scan_parameters,
    certification_report, find_superstable_parameter,
)
from .binding import (
    BindingConfig, DeltaTable, CriticalPartition,
    compute_delta_table, bound_period, verify_lemma_P,
    verify_outside_expansion, build_critical_partition,
)
from .inducing import (
    InducedBranch, InducedSystem, Tower,
    build_induced_map, return_time_tail, tower_step,
    quick_return_check, distortion_check,
)
from .thermo import (
    Horseshoe, MeasureStats, SpectrumCurve,
    extract_horseshoe, pressure_sum, bowen_dimension, equilibrium_stats,
    spread_to_f_invariant, birkhoff_spectrum, spectrum_property_check,
    local_dimension, build_measure_family, periodic_orbit_stats,
)
from .ldp import (
    DeviationEstimate, RateCurve,
    deviation_probability, free_energy_lebesgue, rate_function,
    legendre_check, covering_estimate,
)

__version__ = "0.1.0"
