"""Sum-product networks over binary variables and their maximum-likelihood weight learning."""

from .errors import (
    CompletenessError,
    CycleError,
    DecomposabilityError,
    ParseError,
    SpnError,
    SpnValidationError,
    StructureError,
    TooManyTreesError,
    ZeroProbabilityInstance,
)
from .graph import Kind, Node, SpnGraph, ValidationReport, Violation, scope_of, validate
from .inference import (
    MARGINALIZED,
    EvalTrace,
    differentiate,
    evaluate,
    evaluate_and_differentiate,
    evaluate_partition,
    log_likelihood,
    log_probability,
)
from .io import (
    Dataset,
    export_curve,
    generate_random_spn,
    load_dataset,
    load_spn,
    parse_spn,
    sample_instances,
    serialize_spn,
)
from .learn import (
    Algorithm,
    GradientPair,
    LearnerConfig,
    StopReason,
    TrainRun,
    cccp_step,
    eg_step,
    gradient,
    init_weights,
    line_search,
    normalize_locally,
    pgd_step,
    sma_step,
    train,
)
from .mixture import Cardinality, InducedTree, cardinality, enumerate_trees, tree_value

__version__ = "0.1.0"
