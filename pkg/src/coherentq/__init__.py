"""Coherent-state quantization workbench on a truncated Fock space."""
from .charts import CHARTS, CoordinateMap, get_chart, register_chart
from .coherent import (
    Fiducial,
    SquareQuadrature,
    coherent_state,
    coherent_states,
    overlap_analytic,
    reproducing_kernel_check,
    resolution_check,
)
from .geometry import (
    MetricTensor,
    OneForm,
    bohr_sommerfeld,
    canonical_one_form,
    fubini_study_metric,
    gaussian_curvature,
    loop_action,
    pushforward,
    variance_metric,
)
from .hilbert import SpaceConfig, TruncationError, canonical_ops, evolve, spectrum
from .pathint import (
    BridgePath,
    LatticeConfig,
    MCEstimate,
    dk_expectation,
    dk_limit,
    dk_propagator,
    fresnel_toy,
    lattice_propagator,
    sample_bridge,
    stratonovich_action,
)
from .spin import SpinConfig, spin_coherent, spin_ops, spin_resolution_check, spin_toeplitz
from .symbols import (
    PolySymbol,
    format_symbol,
    parse_symbol,
    toeplitz_quantize,
    upper_symbol,
)

__version__ = "0.1.0"
