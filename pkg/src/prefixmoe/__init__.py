"""Simulation lab for prompt/prefix attention viewed as gated expert
mixtures: exact per-head decompositions, least-squares prompt estimation
with Voronoi-cell losses, and convergence-rate experiments."""

from .attention import (
    AttentionBundle,
    EquivalenceReport,
    MoeDecomposition,
    PromptSet,
    msa_forward,
    prefix_forward,
    prefix_head_outputs,
    prefix_moe_decompose,
    prompt_forward,
    prompt_head_outputs,
    prompt_moe_decompose,
    random_bundle,
    run_equivalence_trials,
)
from .errors import ConfigurationError, UsageError
from .estimation import (
    ESTIMATOR_NOTE,
    FitConfig,
    FitResult,
    InitSpec,
    OptimizerConfig,
    finite_difference_gradient,
    fit,
    gradient,
    gradient_check,
    objective,
    pack_parameters,
    unpack_parameters,
)
from .experiments import (
    SlopeFit,
    SweepResult,
    SweepSpec,
    child_seed,
    fit_slope,
    l2_norm_mc,
    run_sweep,
    witness_closed_form,
    witness_sequence,
)
from .model import (
    ACTIVATIONS,
    Dataset,
    InputLaw,
    LinearSharedMeasure,
    NeuralSharedMeasure,
    NonSharedMeasure,
    PretrainedBank,
    ProjectionPair,
    RegressionModel,
    check_identifiability,
    eval_regression,
    gate_weights,
    gen_dataset,
    measure_from_dict,
    measure_to_dict,
    model_from_dict,
    model_to_dict,
    regression_fn,
)
from .voronoi import CellAssignment, assign_cells, loss_d1r, loss_d2, loss_d3

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "AttentionBundle",
    "CellAssignment",
    "ConfigurationError",
    "Dataset",
    "ESTIMATOR_NOTE",
    "EquivalenceReport",
    "FitConfig",
    "FitResult",
    "InitSpec",
    "InputLaw",
    "LinearSharedMeasure",
    "MoeDecomposition",
    "NeuralSharedMeasure",
    "NonSharedMeasure",
    "OptimizerConfig",
    "PretrainedBank",
    "ProjectionPair",
    "PromptSet",
    "RegressionModel",
    "SlopeFit",
    "SweepResult",
    "SweepSpec",
    "UsageError",
    "assign_cells",
    "check_identifiability",
    "child_seed",
    "eval_regression",
    "finite_difference_gradient",
    "fit",
    "fit_slope",
    "gate_weights",
    "gen_dataset",
    "gradient",
    "gradient_check",
    "l2_norm_mc",
    "loss_d1r",
    "loss_d2",
    "loss_d3",
    "measure_from_dict",
    "measure_to_dict",
    "model_from_dict",
    "model_to_dict",
    "msa_forward",
    "objective",
    "pack_parameters",
    "prefix_forward",
    "prefix_head_outputs",
    "prefix_moe_decompose",
    "prompt_forward",
    "prompt_head_outputs",
    "prompt_moe_decompose",
    "random_bundle",
    "regression_fn",
    "run_equivalence_trials",
    "run_sweep",
    "unpack_parameters",
    "witness_closed_form",
    "witness_sequence",
]
