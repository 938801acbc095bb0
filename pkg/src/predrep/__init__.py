"""Replicability assessment for fixed prediction rules across independent studies."""

from .decision import (
    DecisionRule,
    Prevalence,
    UtilitySpec,
    apply_rule,
    optimal_threshold_closed_form,
    optimal_threshold_empirical,
    unit_utility,
)
from .evaluation import (
    ConfusionFrequencies,
    EmpiricalJoint,
    UtilityMatrix,
    UtilityVector,
    average_utility,
    average_utility_from_frequencies,
    confusion_frequencies,
    empirical_joint,
    sens_spec_prev,
    utility_matrix,
    utility_vector,
)
from .inference import (
    ResamplePlan,
    TestResult,
    bootstrap_within,
    cluster_bootstrap,
    epsilon_rate,
    permutation_test,
    study_strap,
    study_strap_statistics,
)
from .replicability import (
    DominanceResult,
    ReplicabilityVerdict,
    absolute_epsilon,
    benchmark_compare,
    classify_region,
    distance_epsilon,
    dominance,
    ks_joint_distance,
    relative_epsilon,
    tv_distance,
    utility_pseudodistance,
)
from .simgen import BetaScores, CollectionSpec, DiscreteScores, StudySpec, exact_cell_probabilities, generate
from .studyset import (
    ColumnConfig,
    Condition,
    Schema,
    Study,
    StudyCollection,
    SubsetPredicate,
    Unit,
    load_collection,
    parse_predicate,
    restrict,
    validate,
)

__version__ = "0.1.0"
