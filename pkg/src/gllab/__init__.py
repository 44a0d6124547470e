"""Monte Carlo laboratory for left products of random invertible matrices."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    GllabError,
    InvariantError,
    NumericFailure,
    ScheduleRangeError,
    SpectralGapError,
)
from .cocycle import (
    CocycleSpec,
    GordinReport,
    LyapunovEstimate,
    OccupationSample,
    VarianceEstimate,
    estimate_lambda,
    estimate_variance,
    gordin_check,
    log_norm_cocycle,
    make_cocycle,
    occupation_measure,
    sigma_star,
)
from .matrix_walk import (
    FiniteSupport,
    GaussianEntries,
    HeavyTailedConjugatedDiagonal,
    MeasureSpec,
    ProjectivePoint,
    RngStream,
    ScaledRotation,
    SquareMatrix,
    WalkPath,
    act,
    big_n,
    canonical_direction,
    cocycle_sigma,
    direction_grid,
    operator_norm,
    projective_angle,
    rotation_matrix,
    run_walk,
    sample_matrix,
)
from .coboundary import (
    BinnedMartingaleCheck,
    MartingaleExtraction,
    PoissonSolution,
    binned_martingale_means,
    exact_sigma_bar,
    extract_martingale,
    mc_sigma_bar,
    poisson_residual,
    solve_poisson,
)
from .mg_tools import (
    FiniteAdaptedSpace,
    WeakLpEstimate,
    angular_bin_cond_mean,
    dyadic_scales,
    exact_haeusler_terms,
    exact_max_tail,
    hao_liu_bound,
    haeusler_bound,
    haeusler_plain_term,
    haeusler_sharp_term,
    lil_threshold,
    lil_truncate,
    lil_truncate_space,
    maximal_lp_constant,
    maximal_lp_lhs,
    maximal_lp_rhs,
    vbe_constant,
    vbe_weak_bound,
    weak_lp_norm,
)
from .deviation_lab import (
    ArconesReport,
    BnSpec,
    MdpCompareReport,
    MdpPath,
    RateFit,
    RateSeq,
    SeriesReport,
    SubexpReport,
    TailCurve,
    Z95,
    arcones_check,
    arcones_subexp_check,
    baum_katz_partial,
    c_of_n,
    empirical_tail_fn,
    finite_support_tail_fn,
    lil_curve,
    linear_path,
    mdp_compare,
    mdp_rate,
    pareto_tail_fn,
    rate_extract,
    regime_fit,
    rule_of_three,
    tail_estimate,
    wilson_interval,
)
