"""Distributional treatment effects via entropic optimal transport.

The package estimates and tests differences between the two counterfactual
outcome distributions of a binary treatment: the Sinkhorn divergence between
them (STE) and its kernel mean discrepancy analogue (MTE), with influence
function debiasing, cross-fitting, Wald intervals, calibrated fixed-scale
tests, and a scale-aggregated test. A simulation harness and a CLI cover
synthetic studies end to end.
"""

from .errors import ConfigError, DataError, NumericalError
from .ot_core import (
    CenteredPotentials,
    DiscreteMeasure,
    EntropicSolution,
    centered_potentials,
    cost_matrix,
    eot_cost,
    hadamard_solve,
    self_transport_matrix,
    self_transport_potential,
    sinkhorn,
    sinkhorn_divergence,
)
from .kernels import GibbsGram, gibbs_gram, median_heuristic, mmd_squared
from .nuisance import (
    ObservationSet,
    OutcomeFit,
    Precomputed,
    PropensityFit,
    fit_outcome,
    fit_propensity,
    outcome_tensor,
    precompute,
)
from .eif import (
    data_projection,
    first_order_eif,
    mte_first_order_eif,
    mte_second_order_eif,
    second_order_eif,
)
from .estimators import (
    EstimateReport,
    FoldComponents,
    PipelineConfig,
    cross_fit,
    cross_fit_components,
    estimate_mte,
    estimate_ste,
    fold_components,
    fold_indices,
    resolve_eps,
    u_statistic,
)
from .testing import (
    NullSpectrum,
    TestReport,
    agg_test,
    mte_test,
    null_spectrum,
    simulate_null_quantile,
    ste_test,
)
from .simulate import (
    DgpSpec,
    McSummary,
    generate,
    generate_fig1,
    oracle_eps,
    population_oracle_mte,
    population_oracle_ste,
    rep_seed_words,
    run_mc,
    shift_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "CenteredPotentials",
    "ConfigError",
    "DataError",
    "DgpSpec",
    "DiscreteMeasure",
    "EntropicSolution",
    "EstimateReport",
    "FoldComponents",
    "GibbsGram",
    "McSummary",
    "NullSpectrum",
    "NumericalError",
    "ObservationSet",
    "OutcomeFit",
    "PipelineConfig",
    "Precomputed",
    "PropensityFit",
    "TestReport",
    "agg_test",
    "centered_potentials",
    "cost_matrix",
    "cross_fit",
    "cross_fit_components",
    "data_projection",
    "eot_cost",
    "estimate_mte",
    "estimate_ste",
    "first_order_eif",
    "fit_outcome",
    "fit_propensity",
    "fold_components",
    "fold_indices",
    "generate",
    "generate_fig1",
    "gibbs_gram",
    "hadamard_solve",
    "median_heuristic",
    "mmd_squared",
    "mte_first_order_eif",
    "mte_second_order_eif",
    "mte_test",
    "null_spectrum",
    "oracle_eps",
    "outcome_tensor",
    "population_oracle_mte",
    "population_oracle_ste",
    "precompute",
    "rep_seed_words",
    "resolve_eps",
    "run_mc",
    "second_order_eif",
    "self_transport_matrix",
    "self_transport_potential",
    "shift_matrix",
    "simulate_null_quantile",
    "sinkhorn",
    "sinkhorn_divergence",
    "ste_test",
    "u_statistic",
    "__version__",
]
