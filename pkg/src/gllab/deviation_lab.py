"""Empirical deviation tails of the centered walk across all moment regimes.

One simulation kernel serves every statistic here: trajectories accumulate
S_k - k lambda and its running absolute maximum, and checkpoints compare that
maximum against regime-specific thresholds (n^alpha y for polynomial scaling,
b_n y for moderate deviations, y sqrt(2 n log log n) for the iterated
logarithm).  Estimated probabilities carry Wilson intervals; zero counts are
censored by the rule of three rather than mapped to log 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ._parallel import run_blocks
from .errors import DomainError, InvariantError, ScheduleRangeError
from .matrix_walk import (
    FiniteSupport,
    MeasureSpec,
    RngStream,
    big_n,
    direction_grid,
    iter_batch_increments,
)

_NS_TAIL = 21
_NS_SERIES = 22

# two-sided 95% normal quantile, used for every Wilson interval
Z95 = 1.959963984540054


def wilson_interval(k, n, z: float = Z95):
    """Wilson score interval for k successes out of n; vectorized, clipped."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or n < 1:
        raise DomainError("need k >= 0 and n >= 1")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    lo = np.clip(center - half, 0.0, 1.0)
    hi = np.clip(center + half, 0.0, 1.0)
    # pin exact endpoints: cancellation otherwise leaves ~1e-18 residue at k=0
    lo = np.where(k == 0, 0.0, lo)
    hi = np.where(k == n, 1.0, hi)
    return lo, hi


def rule_of_three(reps: int) -> float:
    """One-sided 95%-style upper bound 3/reps for an all-failures estimate."""
    if reps < 1:
        raise DomainError("reps must be positive")
    return 3.0 / reps


# ---------------------------------------------------------------------------
# shared trajectory kernel


def _checkpoint_counts(
    spec, x_dir, lam, schedule, thresholds, reps, rng: RngStream, xi, threads
):
    """Exceedance counts of the running max |S_k - k lam| at each checkpoint.

    thresholds[i] is an array of levels compared (strictly) at schedule[i];
    returns an int array of shape (len(schedule), len(thresholds[i])).
    Counts are integers, so the reduction over blocks is exact and
    thread-count invariant.
    """
    n_max = schedule[-1]
    sched = np.asarray(schedule, dtype=np.int64)

    def block(bi, lo, hi):
        gen = rng.substream(_NS_TAIL, xi, bi)
        b = hi - lo
        dirs = np.tile(x_dir, (b, 1))
        csum = np.zeros(b)
        cmax = np.zeros(b)
        counts = [None] * len(sched)
        ptr = 0
        for k, inc in enumerate(iter_batch_increments(spec, dirs, n_max, gen), start=1):
            csum += inc - lam
            np.maximum(cmax, np.abs(csum), out=cmax)
            while ptr < len(sched) and k == sched[ptr]:
                thr = thresholds[ptr]
                counts[ptr] = (cmax[:, None] > thr[None, :]).sum(axis=0)
                ptr += 1
        return counts

    totals = [np.zeros(len(t), dtype=np.int64) for t in thresholds]
    for res in run_blocks(reps, block, threads=threads):
        for i, c in enumerate(res):
            totals[i] += c
    return totals


def _validate_schedule(schedule):
    s = [int(v) for v in schedule]
    if not s or any(v < 1 for v in s) or any(b <= a for a, b in zip(s, s[1:])):
        raise DomainError("schedule must be strictly increasing positive integers")
    return s


# ---------------------------------------------------------------------------
# tail curves at a single horizon


@dataclass(frozen=True, eq=False)
class TailCurve:
    """sup_x P(max_k |S_k - k lam| > n^alpha y) over a y grid, with Wilson CIs."""

    n: int
    alpha: float
    y_grid: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    x_grid_size: int
    reps: int

    def __post_init__(self):
        if np.any(self.p_hat < 0) or np.any(self.p_hat > 1):
            raise InvariantError("p_hat must lie in [0, 1]")
        if np.any(np.diff(self.p_hat) > 0):
            raise InvariantError("p_hat must be non-increasing in y")


def tail_estimate(
    spec: MeasureSpec,
    lam: float,
    n: int,
    alpha: float,
    y_grid,
    x_grid: int,
    reps: int,
    rng: RngStream,
    threads: int = 1,
) -> TailCurve:
    """Estimate the deviation tail at horizon n for every y in one pass.

    Each trajectory contributes its final running maximum; all thresholds
    n^alpha y are compared against that single statistic, so monotonicity of
    p_hat in y is exact, not just statistical.  The sup over starting
    directions is the max over a deterministic grid (a lower bound on the
    true sup).
    """
    if not 0.5 < alpha <= 1.0:
        raise DomainError("alpha must lie in (1/2, 1]")
    if reps < 100:
        raise DomainError("reps must be at least 100")
    if n < 1 or x_grid < 1:
        raise DomainError("n and x_grid must be positive")
    y = np.asarray(y_grid, dtype=float)
    if y.ndim != 1 or y.size == 0 or np.any(y <= 0) or np.any(np.diff(y) <= 0):
        raise DomainError("y_grid must be strictly increasing and positive")
    thresholds = [n**alpha * y]
    grid = direction_grid(spec.dim, x_grid)
    best = np.zeros(y.size, dtype=np.int64)
    for xi, x_dir in enumerate(grid):
        counts = _checkpoint_counts(spec, x_dir, lam, [n], thresholds, reps, rng, xi, threads)[0]
        np.maximum(best, counts, out=best)
    p_hat = best / reps
    lo, hi = wilson_interval(best, reps)
    return TailCurve(
        n=n, alpha=float(alpha), y_grid=y, p_hat=p_hat, ci_lo=lo, ci_hi=hi,
        x_grid_size=x_grid, reps=reps,
    )


# ---------------------------------------------------------------------------
# rate transforms


@dataclass(frozen=True, eq=False)
class RateSeq:
    """Transformed rates over the y grid; censored entries carry bounds only."""

    regime: str
    y_grid: np.ndarray
    values: np.ndarray  # nan where censored
    ci_lo: np.ndarray  # -inf where the CI touches zero probability
    ci_hi: np.ndarray
    censored: np.ndarray  # True where p_hat = 0
    censor_bound: np.ndarray  # transform of the rule-of-three bound


_LOG_REGIMES = {"large-dev": True, "subexp": True, "mdp": True, "weak-moment": False}


def _rate_scale(regime, n, r=None, p=None, alpha=None, bn=None):
    if regime == "large-dev":
        return 1.0 / n
    if regime == "subexp":
        if r is None or r <= 0:
            raise DomainError("subexp regime needs the exponent r > 0")
        return 1.0 / n**r
    if regime == "mdp":
        if bn is None:
            raise DomainError("mdp regime needs a BnSpec")
        b = bn.b(n)
        return n / (b * b)
    if regime == "weak-moment":
        if p is None or alpha is None:
            raise DomainError("weak-moment regime needs p and alpha")
        return n ** (alpha * p - 1.0)
    raise DomainError(f"unknown regime {regime!r}")


def rate_extract(
    curve: TailCurve,
    regime: str,
    r: Optional[float] = None,
    p: Optional[float] = None,
    bn: Optional["BnSpec"] = None,
) -> RateSeq:
    """Apply the regime's normalization to a tail curve, propagating CIs.

    Log regimes map p_hat to scale * log p_hat (scale = 1/n, 1/n^r, n/b_n^2);
    the weak-moment regime multiplies p_hat by n^{alpha p - 1} directly.
    p_hat = 0 cells are censored: values are nan and censor_bound carries the
    transform of the rule-of-three bound 3/reps (an upper bound on p, hence a
    one-sided bound on the rate).
    """
    scale = _rate_scale(regime, curve.n, r=r, p=p, alpha=curve.alpha, bn=bn)
    logscale = _LOG_REGIMES[regime]
    ph, lo, hi = curve.p_hat, curve.ci_lo, curve.ci_hi
    censored = ph == 0.0
    bound_p = np.full(ph.shape, rule_of_three(curve.reps))
    with np.errstate(divide="ignore"):
        if logscale:
            values = np.where(censored, np.nan, scale * np.log(np.where(censored, 1.0, ph)))
            ci_lo = scale * np.log(lo)  # -inf when lo = 0: one-sided
            ci_hi = scale * np.log(np.maximum(hi, 1e-300))
            censor_bound = scale * np.log(bound_p)
        else:
            values = scale * ph
            ci_lo = scale * lo
            ci_hi = scale * hi
            censor_bound = scale * bound_p
    return RateSeq(
        regime=regime, y_grid=curve.y_grid, values=values, ci_lo=ci_lo, ci_hi=ci_hi,
        censored=censored, censor_bound=censor_bound,
    )


@dataclass(frozen=True)
class RateFit:
    regime: str
    exponent_hat: float
    constant_hat: float
    r_squared: float
    n_points: int

    def __post_init__(self):
        if not 0.0 <= self.r_squared <= 1.0:
            raise InvariantError("r_squared must lie in [0, 1]")


def regime_fit(
    y_grid, rates, regime: str, window: Optional[tuple] = None
) -> RateFit:
    """Least-squares power law through rate values inside a y window.

    Log-rate regimes fit log(-rate) on log y (rates must be negative there);
    the weak-moment regime fits log(value) on log y and reports the decay
    exponent with its sign flipped, matching a C / y^p profile.  At least 4
    usable points are required.
    """
    y = np.asarray(y_grid, dtype=float)
    v = np.asarray(rates, dtype=float)
    if y.shape != v.shape:
        raise DomainError("y_grid and rates must align")
    keep = np.isfinite(v)
    if window is not None:
        lo, hi = window
        keep &= (y >= lo) & (y <= hi)
    flip = regime != "weak-moment"
    if flip:
        keep &= v < 0
        target = np.where(keep, -v, 1.0)
    else:
        keep &= v > 0
        target = np.where(keep, v, 1.0)
    if keep.sum() < 4:
        raise DomainError(f"need at least 4 uncensored points in the window, got {keep.sum()}")
    lx = np.log(y[keep])
    ly = np.log(target[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    ss_res = float(((ly - fitted) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    exponent = float(slope) if flip else -float(slope)
    return RateFit(
        regime=regime,
        exponent_hat=exponent,
        constant_hat=float(np.exp(intercept)),
        r_squared=min(r2, 1.0),
        n_points=int(keep.sum()),
    )


# ---------------------------------------------------------------------------
# series diagnostics over a horizon schedule


def _schedule_tails(spec, lam, schedule, thresholds, x_grid, reps, rng, threads):
    """max-over-x exceedance counts at each checkpoint; thresholds scalar per n."""
    grid = direction_grid(spec.dim, x_grid)
    thr = [np.array([t]) for t in thresholds]
    best = np.zeros(len(schedule), dtype=np.int64)
    for xi, x_dir in enumerate(grid):
        counts = _checkpoint_counts(spec, x_dir, lam, schedule, thr, reps, rng, xi, threads)
        per_n = np.array([c[0] for c in counts], dtype=np.int64)
        np.maximum(best, per_n, out=best)
    return best


def _interpolated_partial_sums(schedule, p_hat, p_hi, weight_exp):
    """Partial sums of n^w p(n) over every integer in the observed range.

    log p is interpolated linearly in log n between checkpoints.  Segments
    with a zero endpoint contribute nothing to the point estimate (censored);
    the hi curve is everywhere positive, so the upper sums are always full.
    """
    sched = np.asarray(schedule, dtype=float)
    partial = np.zeros(len(schedule))
    partial_hi = np.zeros(len(schedule))
    censored = False
    acc = p_hat[0] * sched[0] ** weight_exp if p_hat[0] > 0 else 0.0
    censored |= p_hat[0] == 0.0
    acc_hi = p_hi[0] * sched[0] ** weight_exp
    partial[0] = acc
    partial_hi[0] = acc_hi
    for i in range(len(schedule) - 1):
        n0, n1 = sched[i], sched[i + 1]
        ns = np.arange(int(n0) + 1, int(n1) + 1, dtype=float)
        w = ns**weight_exp
        ratio = np.log(ns / n0) / np.log(n1 / n0)
        if p_hat[i] > 0 and p_hat[i + 1] > 0:
            p_seg = np.exp(np.log(p_hat[i]) * (1.0 - ratio) + np.log(p_hat[i + 1]) * ratio)
            acc += float((w * p_seg).sum())
        elif p_hat[i] > 0 or p_hat[i + 1] > 0:
            censored = True
            # keep the definite part: the nonzero endpoint's own term only
            if p_hat[i + 1] > 0:
                acc += p_hat[i + 1] * n1**weight_exp
        else:
            censored = True
        hi_seg = np.exp(np.log(p_hi[i]) * (1.0 - ratio) + np.log(p_hi[i + 1]) * ratio)
        acc_hi += float((w * hi_seg).sum())
        partial[i + 1] = acc
        partial_hi[i + 1] = acc_hi
    return partial, partial_hi, censored


def _increment_verdict(partial):
    """Trend of partial-sum increments over the last half of the schedule.

    Clear geometric decay of the increments reads as converging; a final
    increment at least half the size of the first in the window (so no decay,
    the profile of a log-divergent series on a dyadic schedule) reads as
    diverging; anything in between stays inconclusive.
    """
    inc = np.diff(partial)
    if inc.size < 2:
        return "inconclusive"
    half = inc[inc.size // 2 :]
    if np.all(half == 0.0):
        return "converging-looking"
    if np.all(half[1:] <= 0.9 * half[:-1]):
        return "converging-looking"
    if half[-1] > 0 and half[-1] >= 0.5 * half[0]:
        return "diverging-looking"
    return "inconclusive"


@dataclass(frozen=True, eq=False)
class SeriesReport:
    """Schedule diagnostics for a weighted tail series."""

    n_schedule: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    terms: np.ndarray
    partial_sums: np.ndarray
    partial_sums_hi: np.ndarray
    verdict: str
    censored: bool
    reps: int


def baum_katz_partial(
    spec: MeasureSpec,
    lam: float,
    alpha: float,
    p: float,
    y: float,
    n_schedule,
    reps: int,
    rng: RngStream,
    x_grid: int = 4,
    threads: int = 1,
) -> SeriesReport:
    """Partial sums of n^{alpha p - 2} sup_x P(max_k |S_k - k lam| > n^alpha y).

    Convergence of the full series is the complete-convergence statement for
    the walk; the verdict reports whether the interpolated partial-sum
    increments decrease over the last half of the schedule.  alpha < 1/p
    violates the moment hypothesis and only warns (exploring the boundary is
    legitimate); alpha = 1/2 with p = 2 is the documented failure point and
    also warns.  Other alpha <= 1/2 are rejected.
    """
    if p <= 0:
        raise DomainError("p must be positive")
    boundary = alpha == 0.5 and p == 2.0
    if not 0.5 < alpha <= 1.0 and not boundary:
        raise DomainError("alpha must lie in (1/2, 1] (boundary alpha=1/2 only with p=2)")
    if boundary:
        warnings.warn(
            "alpha = 1/2 with p = 2 is exactly the regime where the complete-"
            "convergence series is known to diverge; results are exploratory",
            stacklevel=2,
        )
    if alpha < 1.0 / p:
        warnings.warn(
            f"alpha = {alpha} is below 1/p = {1.0 / p:.4g}; the moment hypothesis "
            "behind the convergence claim fails here",
            stacklevel=2,
        )
    if y <= 0:
        raise DomainError("y must be positive")
    schedule = _validate_schedule(n_schedule)
    thresholds = [n**alpha * y for n in schedule]
    counts = _schedule_tails(spec, lam, schedule, thresholds, x_grid, reps, rng, threads)
    p_hat = counts / reps
    lo, hi = wilson_interval(counts, reps)
    w = alpha * p - 2.0
    terms = np.asarray(schedule, dtype=float) ** w * p_hat
    partial, partial_hi, censored = _interpolated_partial_sums(schedule, p_hat, hi, w)
    return SeriesReport(
        n_schedule=np.asarray(schedule), p_hat=p_hat, ci_lo=lo, ci_hi=hi, terms=terms,
        partial_sums=partial, partial_sums_hi=partial_hi,
        verdict=_increment_verdict(partial), censored=censored, reps=reps,
    )


def lil_curve(
    spec: MeasureSpec,
    lam: float,
    v: float,
    n_schedule,
    y: float,
    reps: int,
    rng: RngStream,
    x_grid: int = 4,
    threads: int = 1,
) -> SeriesReport:
    """Exceedance of y sqrt(2 n log log n) along a schedule, with sum (1/n) p_hat.

    Above sqrt(V) the series should look summable, below it the probabilities
    themselves stay macroscopic; v is accepted only to let callers frame y
    against sqrt(V), the statistic itself never uses it.
    """
    if y <= 0:
        raise DomainError("y must be positive")
    if v < 0:
        raise DomainError("v must be nonnegative")
    schedule = _validate_schedule(n_schedule)
    if schedule[0] < 3:
        raise DomainError("schedule must start at n >= 3 for log log n")
    thresholds = [y * math.sqrt(2.0 * n * math.log(math.log(n))) for n in schedule]
    counts = _schedule_tails(spec, lam, schedule, thresholds, x_grid, reps, rng, threads)
    p_hat = counts / reps
    lo, hi = wilson_interval(counts, reps)
    terms = p_hat / np.asarray(schedule, dtype=float)
    partial, partial_hi, censored = _interpolated_partial_sums(schedule, p_hat, hi, -1.0)
    return SeriesReport(
        n_schedule=np.asarray(schedule), p_hat=p_hat, ci_lo=lo, ci_hi=hi, terms=terms,
        partial_sums=partial, partial_sums_hi=partial_hi,
        verdict=_increment_verdict(partial), censored=censored, reps=reps,
    )


# ---------------------------------------------------------------------------
# Arcones tail condition


def finite_support_tail_fn(spec: FiniteSupport) -> Callable[[float], float]:
    """Exact t -> mu{log N > t} for an atom family."""
    logs = np.array([math.log(big_n(m.entries)) for m in spec.matrices])
    w = np.asarray(spec.weights, dtype=float)

    def tail(t: float) -> float:
        return float(w[logs > t].sum())

    return tail


def pareto_tail_fn(p: float) -> Callable[[float], float]:
    """t -> min(1, t^-p): the exact law of log N under the heavy-tailed family."""
    if p <= 0:
        raise DomainError("tail index must be positive")
    return lambda t: min(1.0, float(t) ** (-p)) if t > 0 else 1.0


def empirical_tail_fn(samples) -> Callable[[float], float]:
    """Empirical t -> fraction of samples exceeding t."""
    a = np.sort(np.asarray(samples, dtype=float).ravel())
    if a.size == 0:
        raise DomainError("samples must be nonempty")
    return lambda t: float(1.0 - np.searchsorted(a, t, side="right") / a.size)


@dataclass(frozen=True, eq=False)
class ArconesReport:
    n_schedule: np.ndarray
    bn_values: np.ndarray
    verbatim: np.ndarray  # (n/b_n^2) log(n) * tail(b_n), the condition as printed
    log_reading: np.ndarray  # (n/b_n^2) log(n * tail(b_n))
    verdict: str


def arcones_check(tail_fn: Callable[[float], float], bn: "BnSpec", n_schedule) -> ArconesReport:
    """Evaluate the moderate-deviation tail condition along a schedule.

    The condition as printed multiplies the tail probability, giving a
    nonnegative product that can only vanish; it is evaluated verbatim and
    reported.  The verdict instead tracks the logarithmic reading
    (n/b_n^2) log(n tail(b_n)), which is the quantity that can diverge to
    -inf: divergence (or exact -inf from a vanishing tail) reads as
    "satisfied", a trend back toward 0 as "fails".
    """
    schedule = _validate_schedule(n_schedule)
    ns = np.asarray(schedule, dtype=float)
    b = np.array([bn.b(n) for n in schedule])
    tails = np.array([float(tail_fn(t)) for t in b])
    if np.any(tails < 0) or np.any(tails > 1):
        raise DomainError("tail_fn must return probabilities")
    scale = ns / (b * b)
    verbatim = scale * np.log(ns) * tails
    with np.errstate(divide="ignore"):
        log_reading = scale * np.log(ns * tails)
    verdict = _arcones_verdict(log_reading)
    return ArconesReport(
        n_schedule=np.asarray(schedule), bn_values=b, verbatim=verbatim,
        log_reading=log_reading, verdict=verdict,
    )


def _arcones_verdict(values: np.ndarray) -> str:
    if values[-1] == -np.inf:
        return "satisfied"
    last = values[len(values) // 2 :]
    if np.all(last >= 0):
        return "fails"
    mid, end = last[0], last[-1]
    decreasing = np.all(np.diff(last) < 0)
    if decreasing and end < 0 and (mid >= 0 or abs(end) >= 1.2 * abs(mid)):
        return "satisfied"
    if end < 0 and mid < 0 and end >= mid:  # creeping back toward zero
        return "fails"
    return "inconclusive"


@dataclass(frozen=True, eq=False)
class SubexpReport:
    x_values: np.ndarray
    beta: float
    a_values: np.ndarray  # implied a(x) = -log tail(x) / x^beta
    verdict: str


def arcones_subexp_check(
    tail_fn: Callable[[float], float], alpha: float, x_values
) -> SubexpReport:
    """Sufficient condition for b_n = n^alpha: tail(x) <= exp(-x^beta a(x)).

    beta = 2 - 1/alpha; the condition asks for a(x) -> infinity.  The report
    inverts the implied a(x) from the supplied tail and reads its trend.
    """
    if not 0.5 < alpha < 1.0:
        raise DomainError("alpha must lie strictly inside (1/2, 1)")
    beta = 2.0 - 1.0 / alpha
    x = np.asarray(x_values, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise DomainError("x_values must be strictly increasing and positive")
    tails = np.array([float(tail_fn(t)) for t in x])
    with np.errstate(divide="ignore"):
        a = -np.log(tails) / x**beta
    if np.any(np.isinf(a)):
        verdict = "satisfied"  # the tail hits exact zero
    else:
        last = a[a.size // 2 :]
        if np.all(np.diff(last) > 0) and last[-1] >= 1.2 * max(last[0], 1e-300):
            verdict = "satisfied"
        elif np.all(np.diff(last) <= 0):
            verdict = "fails"
        else:
            verdict = "inconclusive"
    return SubexpReport(x_values=x, beta=beta, a_values=a, verdict=verdict)


# ---------------------------------------------------------------------------
# moderate-deviation schedules


@dataclass(frozen=True, eq=False)
class BnSpec:
    """Moderate-deviation scaling b_n, either n^alpha or an explicit table.

    Validity: with f(n) = n^2/b_n^2 and g(n) = b_n^2, both must increase
    strictly to infinity and n/b_n^2 must vanish; for the power form this
    pins alpha strictly inside (1/2, 1), and tables are checked on their
    range.
    """

    alpha: Optional[float] = None
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.alpha is None) == (self.table is None):
            raise InvariantError("provide exactly one of alpha or table")
        if self.alpha is not None:
            if not 0.5 < self.alpha < 1.0:
                raise InvariantError("power form requires alpha strictly in (1/2, 1)")
        else:
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 1 or t.size < 3 or np.any(t <= 0):
                raise InvariantError("table must be at least 3 positive values (b_1, b_2, ...)")
            n = np.arange(1, t.size + 1, dtype=float)
            f = n * n / (t * t)
            g = t * t
            if np.any(np.diff(f) <= 0) or np.any(np.diff(g) <= 0):
                raise InvariantError("both n^2/b_n^2 and b_n^2 must increase strictly")
            ratio = n / (t * t)
            half = ratio[t.size // 2 :]
            if half.size >= 2 and not np.all(np.diff(half) < 0):
                raise InvariantError("n/b_n^2 must trend to zero on the table range")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    @classmethod
    def power(cls, alpha: float) -> "BnSpec":
        return cls(alpha=alpha)

    @classmethod
    def from_table(cls, values) -> "BnSpec":
        return cls(table=np.asarray(values, dtype=float))

    def b(self, n) -> float:
        if self.alpha is not None:
            if n < 1:
                raise DomainError("n must be at least 1")
            return float(n) ** self.alpha
        idx = int(n)
        if idx < 1 or idx > self.table.size:
            raise ScheduleRangeError(
                f"n = {n} is outside the table range 1..{self.table.size}"
            )
        return float(self.table[idx - 1])

    def max_n(self) -> int:
        return 2**53 if self.alpha is not None else int(self.table.size)


def _f_node(bn: BnSpec, m: int) -> float:
    b = bn.b(m)
    return m * m / (b * b)


def c_of_n(bn: BnSpec, n) -> float:
    """c(n) = f^{-1}(g(n)) for f(m) = m^2/b_m^2, g(n) = b_n^2, piecewise linear.

    Both maps are taken as line segments between integer nodes; the inverse
    brackets g(n) between consecutive f nodes by bisection and interpolates,
    snapping to a node when the target matches it to float precision.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    nf = float(n)
    lo_i = int(math.floor(nf))
    g_lo = bn.b(lo_i) ** 2
    if nf == lo_i:
        target = g_lo
    else:
        g_hi = bn.b(lo_i + 1) ** 2
        target = g_lo + (nf - lo_i) * (g_hi - g_lo)
    limit = bn.max_n()
    lo, f_lo = 1, _f_node(bn, 1)
    if target < f_lo * (1.0 - 1e-12):
        raise ScheduleRangeError("target below the first representable node")
    # grow an upper bracket geometrically, then bisect on integer nodes
    hi = 2
    snap = lambda f_val: abs(target - f_val) <= 1e-12 * max(1.0, abs(target))
    while True:
        hi = min(hi, limit)
        f_hi = _f_node(bn, hi)
        if f_hi >= target or snap(f_hi):
            break
        if hi == limit:
            raise ScheduleRangeError(
                f"c({n}) exceeds the representable schedule range (limit {limit})"
            )
        lo, f_lo = hi, f_hi
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        f_mid = _f_node(bn, mid)
        if f_mid >= target:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    for node, f_node_val in ((lo, f_lo), (hi, f_hi)):
        if abs(target - f_node_val) <= 1e-12 * max(1.0, abs(target)):
            return float(node)
    return lo + (target - f_lo) / (f_hi - f_lo)


# ---------------------------------------------------------------------------
# MDP rate function and empirical comparison


@dataclass(frozen=True, eq=False)
class MdpPath:
    """Piecewise-linear path on [0, 1] given by knots and values."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise InvariantError("need matching knot and value arrays, at least 2 knots")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0) or t[-1] > 1.0:
            raise InvariantError("knots must start at 0, increase strictly, stay within [0, 1]")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "values", v)


def linear_path(y: float) -> MdpPath:
    return MdpPath(knots=np.array([0.0, 1.0]), values=np.array([0.0, float(y)]))


def mdp_rate(path: MdpPath, v: float) -> float:
    """I_V(h) = (1/2V) integral of h'(u)^2 for piecewise-linear h, h(0) = 0.

    h(0) != 0 gives +inf.  V = 0 admits only the flat path: the rate is 0
    for h identically zero and +inf for everything else (a documented
    convention; the defining formula is silent there).
    """
    if v < 0:
        raise DomainError("v must be nonnegative")
    if path.values[0] != 0.0:
        return math.inf
    dt = np.diff(path.knots)
    dv = np.diff(path.values)
    if v == 0.0:
        return 0.0 if np.all(path.values == 0.0) else math.inf
    return float(((dv / dt) ** 2 * dt).sum() / (2.0 * v))


@dataclass(frozen=True, eq=False)
class MdpCompareReport:
    n_schedule: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    values: np.ndarray  # (n/b_n^2) log p_hat, nan where censored
    values_ci_lo: np.ndarray
    values_ci_hi: np.ndarray
    censored: np.ndarray
    censor_bound: np.ndarray
    target: float
    reps: int


def mdp_compare(
    spec: MeasureSpec,
    lam: float,
    v: float,
    bn: BnSpec,
    y: float,
    n_schedule,
    reps: int,
    rng: RngStream,
    x_grid: int = 1,
    threads: int = 1,
) -> MdpCompareReport:
    """(n/b_n^2) log P(max_k |S_k - k lam| > b_n y) against the target -y^2/(2V).

    The contraction of the functional rate function onto the running-max
    event gives the scalar target; the report carries transformed Wilson
    bands and rule-of-three censoring for zero counts.
    """
    if y <= 0 or v <= 0:
        raise DomainError("y and v must be positive")
    schedule = _validate_schedule(n_schedule)
    thresholds = [bn.b(n) * y for n in schedule]
    counts = _schedule_tails(spec, lam, schedule, thresholds, x_grid, reps, rng, threads)
    p_hat = counts / reps
    lo, hi = wilson_interval(counts, reps)
    ns = np.asarray(schedule, dtype=float)
    b = np.array([bn.b(n) for n in schedule])
    scale = ns / (b * b)
    censored = p_hat == 0.0
    with np.errstate(divide="ignore"):
        vals = np.where(censored, np.nan, scale * np.log(np.where(censored, 1.0, p_hat)))
        v_lo = scale * np.log(lo)
        v_hi = scale * np.log(np.maximum(hi, 1e-300))
        bound = scale * math.log(rule_of_three(reps))
    return MdpCompareReport(
        n_schedule=np.asarray(schedule), p_hat=p_hat, ci_lo=lo, ci_hi=hi,
        values=vals, values_ci_lo=v_lo, values_ci_hi=v_hi, censored=censored,
        censor_bound=bound, target=-y * y / (2.0 * v), reps=reps,
    )
