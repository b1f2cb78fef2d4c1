"""Granularity-aware differential privacy: metrics, composition, variants and a mechanism lab."""

from . import errors
from ._backend import BACKEND, HAVE_NUMBA
from .space import (
    ClassSpec,
    Database,
    DatabaseClass,
    Granularity,
    Metric,
    RecordUniverse,
    builtin_granularity,
    canonical_metric,
    class_size,
    enumerate_class,
    neighbors,
    symmetric_difference_metric,
)
from .metrics import (
    MapBetweenClasses,
    MetricType,
    diameter,
    explicit_map,
    granularity_distance,
    identity_map,
    image_class,
    is_dominated,
    map_from_function,
    metric_type,
    order_block,
    order_split,
    record_projection,
    scale,
    sensitivity,
    universe_split,
)
from .bounds import (
    Bound,
    Guarantee,
)
from .composition import (
    CompositionPlan,
    PlanStep,
    analyze_partition,
    best_bound_disjoint,
    bounded_parallel_bound,
    compose_common_domain,
    compose_metrics,
    minimum_privacy,
    selective_bound,
)
from .variants import (
    approx_best_bound_disjoint,
    approx_common_domain,
    approx_compose,
    approximate_guarantee,
    delta_scaling,
    g_mu,
    gaussian_guarantee,
    gdp_common_domain,
    gdp_compose,
    gdp_parallel_bound,
    pure_guarantee,
    zc_best_bound_disjoint,
    zc_common_domain,
    zc_compose,
    zc_guarantee,
)
from .lab import (
    AdaptiveKernel,
    DiscreteMechanism,
    TOLERANCE_PROFILES,
    Tolerance,
    TradeoffCurve,
    VerificationReport,
    adaptive_compose,
    binned_gaussian_mechanism,
    counting_mechanism,
    deterministic_mechanism,
    diagnose_components,
    discrete_gaussian_mechanism,
    geometric_mechanism,
    hockey_stick,
    marginal,
    max_divergence,
    post_process,
    precompose,
    product_compose,
    randomized_response,
    renyi_divergence,
    tradeoff_curve,
    verify_guarantee,
)
from .cache import (
    cache_matrices,
    clear_cache,
    load_cached,
)
from .config import (
    ConfigDocument,
    build,
    load_config,
    parse_config,
)
from .report import (
    GuaranteeReport,
    run_plan,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveKernel",
    "BACKEND",
    "Bound",
    "ClassSpec",
    "CompositionPlan",
    "ConfigDocument",
    "Database",
    "DatabaseClass",
    "DiscreteMechanism",
    "Granularity",
    "Guarantee",
    "GuaranteeReport",
    "HAVE_NUMBA",
    "MapBetweenClasses",
    "Metric",
    "MetricType",
    "PlanStep",
    "RecordUniverse",
    "TOLERANCE_PROFILES",
    "Tolerance",
    "TradeoffCurve",
    "VerificationReport",
    "adaptive_compose",
    "analyze_partition",
    "approx_best_bound_disjoint",
    "approx_common_domain",
    "approx_compose",
    "approximate_guarantee",
    "best_bound_disjoint",
    "binned_gaussian_mechanism",
    "bounded_parallel_bound",
    "build",
    "builtin_granularity",
    "cache_matrices",
    "canonical_metric",
    "class_size",
    "clear_cache",
    "compose_common_domain",
    "compose_metrics",
    "counting_mechanism",
    "delta_scaling",
    "deterministic_mechanism",
    "diagnose_components",
    "diameter",
    "discrete_gaussian_mechanism",
    "enumerate_class",
    "errors",
    "explicit_map",
    "g_mu",
    "gaussian_guarantee",
    "gdp_common_domain",
    "gdp_compose",
    "gdp_parallel_bound",
    "geometric_mechanism",
    "granularity_distance",
    "hockey_stick",
    "identity_map",
    "image_class",
    "is_dominated",
    "load_cached",
    "load_config",
    "map_from_function",
    "marginal",
    "max_divergence",
    "metric_type",
    "minimum_privacy",
    "neighbors",
    "order_block",
    "order_split",
    "parse_config",
    "post_process",
    "precompose",
    "product_compose",
    "pure_guarantee",
    "randomized_response",
    "record_projection",
    "renyi_divergence",
    "run_plan",
    "scale",
    "selective_bound",
    "sensitivity",
    "symmetric_difference_metric",
    "tradeoff_curve",
    "universe_split",
    "verify_guarantee",
    "zc_best_bound_disjoint",
    "zc_common_domain",
    "zc_compose",
    "zc_guarantee",
]
