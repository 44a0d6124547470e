"""Explicit martingale inequalities with exact finite-space validation.

Every bound here is a closed-form expression in its inputs; nothing is
asymptotic.  FiniteAdaptedSpace models a finite filtered probability space
(a weighted branching tree) on which partial sums, running maxima,
conditional expectations and tail probabilities are all exact rational
arithmetic up to float rounding, so each inequality can be checked by brute
force with no Monte Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InvariantError

_PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# finite filtered probability spaces


@dataclass(frozen=True, eq=False)
class FiniteAdaptedSpace:
    """Adapted real sequence on a finite branching tree.

    Level k reveals the first k coordinates; branch i of step k is drawn
    with probability level_probs[k][i] independently of the past.  values[k]
    is X_{k+1}, one real per length-(k+1) prefix in C order (the last
    coordinate varies fastest).
    """

    level_probs: tuple
    values: tuple

    def __post_init__(self):
        probs = tuple(np.asarray(p, dtype=float) for p in self.level_probs)
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        if not vals or len(probs) != len(vals):
            raise InvariantError("need one branch-probability vector per value level")
        size = 1
        for k, (p, v) in enumerate(zip(probs, vals)):
            if p.ndim != 1 or p.size < 2:
                raise InvariantError(f"level {k}: branching must be at least 2")
            if np.any(p <= 0) or abs(p.sum() - 1.0) > _PROB_TOL:
                raise InvariantError(f"level {k}: probabilities must be positive and sum to 1")
            size *= p.size
            if v.shape != (size,):
                raise InvariantError(f"level {k}: expected {size} values, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise InvariantError(f"level {k}: values must be finite")
        for a in probs + vals:
            a.setflags(write=False)
        object.__setattr__(self, "level_probs", probs)
        object.__setattr__(self, "values", vals)

    @classmethod
    def binary(cls, values: Sequence, probs=(0.5, 0.5)) -> "FiniteAdaptedSpace":
        return cls(level_probs=tuple(probs for _ in values), values=tuple(values))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def branching(self) -> tuple:
        return tuple(p.size for p in self.level_probs)

    def level_size(self, level: int) -> int:
        return int(np.prod([p.size for p in self.level_probs[:level]], dtype=np.int64))

    def path_probs(self, level: int) -> np.ndarray:
        p = np.ones(1)
        for i in range(level):
            p = (p[:, None] * self.level_probs[i][None, :]).ravel()
        return p

    def lift(self, arr: np.ndarray, frm: int, to: int) -> np.ndarray:
        """View an F_frm-measurable array at the finer level to."""
        if to < frm:
            raise DomainError("lift goes to a finer level")
        factor = self.level_size(to) // self.level_size(frm)
        return np.repeat(np.asarray(arr, dtype=float), factor)

    def cond_exp(self, arr: np.ndarray, frm: int, to: int) -> np.ndarray:
        """E[arr | F_to] for an F_frm-measurable array, to <= frm. Exact."""
        if to > frm:
            raise DomainError("cond_exp goes to a coarser level")
        out = np.asarray(arr, dtype=float)
        for level in range(frm, to, -1):
            b = self.level_probs[level - 1]
            out = out.reshape(-1, b.size) @ b
        return out

    def partial_sums(self) -> list:
        """S_k at level k for k = 1..n."""
        sums = []
        cur = np.zeros(1)
        for k, x in enumerate(self.values):
            cur = self.lift(cur, k, k + 1) + x
            sums.append(cur)
        return sums

    def running_abs_max(self) -> np.ndarray:
        """max_{1<=k<=n} |S_k| as a level-n array."""
        best = None
        for k, s in enumerate(self.partial_sums(), start=1):
            a = np.abs(s)
            best = a if best is None else np.maximum(self.lift(best, k - 1, k), a)
        return best

    def lp_norm(self, arr: np.ndarray, level: int, p: float) -> float:
        w = self.path_probs(level)
        return float((w @ np.abs(np.asarray(arr, dtype=float)) ** p) ** (1.0 / p))

    def tail_prob(self, arr: np.ndarray, level: int, t: float) -> float:
        """P(arr >= t), exact."""
        w = self.path_probs(level)
        return float(w[np.asarray(arr, dtype=float) >= t].sum())

    def step_cond_means(self) -> list:
        """E[X_k | F_{k-1}] at level k-1, for k = 1..n."""
        return [self.cond_exp(x, k + 1, k) for k, x in enumerate(self.values)]

    def max_cond_mean(self) -> float:
        return max(float(np.abs(m).max()) for m in self.step_cond_means())

    def center(self) -> "FiniteAdaptedSpace":
        """Subtract one-step conditional means: exact martingale differences."""
        new_vals = []
        for k, x in enumerate(self.values):
            m = self.cond_exp(x, k + 1, k)
            new_vals.append(x - self.lift(m, k, k + 1))
        return FiniteAdaptedSpace(level_probs=self.level_probs, values=tuple(new_vals))


# ---------------------------------------------------------------------------
# Haeusler-type exponential bound


def _check_positive(**kwargs):
    for name, val in kwargs.items():
        if not val > 0:
            raise DomainError(f"{name} must be positive, got {val!r}")


def _exp_or_inf(x: float) -> float:
    # a bound far above 1 is vacuous but well-defined; saturate instead of raising
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def haeusler_bound(gamma: float, u: float, v: float, p1: float, p2: float) -> float:
    """Tail bound p1 + 2 p2 + 2 exp((gamma/u)(1 - log(gamma u / v))).

    Valid for every gamma, u, v > 0 when p1 bounds sum_k P(|D_k| >= u) and
    p2 bounds P(sum_k E(D_k^2 | F_{k-1}) >= v) for martingale differences
    D_k (Haeusler's exponential inequality).
    """
    _check_positive(gamma=gamma, u=u, v=v)
    if p1 < 0 or p2 < 0:
        raise DomainError("p1 and p2 are probabilities (or bounds), must be >= 0")
    return p1 + 2.0 * p2 + 2.0 * _exp_or_inf((gamma / u) * (1.0 - math.log(gamma * u / v)))


def haeusler_plain_term(gamma: float, u: float, v: float) -> float:
    """The exponential term exp((gamma/u)(1 - log(gamma u / v))) alone."""
    _check_positive(gamma=gamma, u=u, v=v)
    return _exp_or_inf((gamma / u) * (1.0 - math.log(gamma * u / v)))


def haeusler_sharp_term(gamma: float, u: float, v: float) -> float:
    """Sharper exponential term exp(g/u - (g/u + v/u^2) log(g u / v + 1)).

    Dominated by haeusler_plain_term for all positive arguments: with
    t = gamma u / v, the comparison reduces to (t+1) log(t+1) >= t log t.
    """
    _check_positive(gamma=gamma, u=u, v=v)
    gu = gamma / u
    return _exp_or_inf(gu - (gu + v / (u * u)) * math.log1p(gamma * u / v))


def exact_haeusler_terms(space: FiniteAdaptedSpace, u: float, v: float):
    """(p1, p2) computed exactly: sum_k P(|X_k| >= u), P(sum E(X_k^2|F_{k-1}) >= v)."""
    _check_positive(u=u, v=v)
    p1 = 0.0
    for k, x in enumerate(space.values):
        p1 += space.tail_prob(np.abs(x), k + 1, u)
    n = space.n
    q = np.zeros(space.level_size(n))
    for k, x in enumerate(space.values):
        cm = space.cond_exp(x * x, k + 1, k)
        q += space.lift(cm, k, n)
    p2 = space.tail_prob(q, n, v)
    return p1, p2


def exact_max_tail(space: FiniteAdaptedSpace, gamma: float) -> float:
    """P(max_k |S_k| >= gamma), exact."""
    _check_positive(gamma=gamma)
    return space.tail_prob(space.running_abs_max(), space.n, gamma)


# ---------------------------------------------------------------------------
# weak L^p


@dataclass(frozen=True)
class WeakLpEstimate:
    p: float
    value: float
    sample_size: int


def weak_lp_norm(samples, p: float, probs=None) -> WeakLpEstimate:
    """Empirical sup_t t P(|X| > t)^{1/p}, attained on the order-statistic grid.

    Equal weights by default; pass probs for a weighted finite distribution.
    """
    if not 1.0 < p <= 2.0:
        raise DomainError(f"p must lie in (1, 2], got {p}")
    a = np.abs(np.asarray(samples, dtype=float)).ravel()
    if a.size == 0:
        raise DomainError("samples must be nonempty")
    if probs is None:
        w = np.full(a.size, 1.0 / a.size)
    else:
        w = np.asarray(probs, dtype=float).ravel()
        if w.shape != a.shape or np.any(w < 0) or abs(w.sum() - 1.0) > _PROB_TOL:
            raise DomainError("probs must match samples and sum to 1")
    order = np.argsort(a, kind="stable")
    a = a[order]
    # P(|X| > t) for t just below a_(i) includes every sample from i on
    tail = np.cumsum(w[order][::-1])[::-1]
    value = float(np.max(a * tail ** (1.0 / p)))
    return WeakLpEstimate(p=p, value=value, sample_size=int(a.size))


# ---------------------------------------------------------------------------
# weak-type von Bahr-Esseen bound


def vbe_constant(p: float) -> float:
    """K = 4p/(p-1) + 8/(2-p); finite only for p strictly inside (1, 2)."""
    if not 1.0 < p < 2.0:
        raise DomainError(f"p must lie in (1, 2), got {p}")
    return 4.0 * p / (p - 1.0) + 8.0 / (2.0 - p)


def vbe_weak_bound(p: float, weak_norms, y: float) -> float:
    """(K / y^p) * sum of weak norms^p: tail bound for the maximal partial sum.

    weak_norms are per-step martingale-difference weak-L^p norms; the result
    bounds P(max_k |S_k| >= y).
    """
    _check_positive(y=y)
    k = vbe_constant(p)
    wn = np.asarray(weak_norms, dtype=float)
    if np.any(wn < 0):
        raise DomainError("weak norms must be nonnegative")
    return float(k * np.sum(wn**p) / y**p)


# ---------------------------------------------------------------------------
# maximal L^p inequality for adapted sequences, 1 < p < 2


def maximal_lp_constant(p: float) -> float:
    """c_p = 2^{1/p} p / (p - 1)."""
    if not 1.0 < p < 2.0:
        raise DomainError(f"p must lie in (1, 2), got {p}")
    return 2.0 ** (1.0 / p) * p / (p - 1.0)


def dyadic_scales(n: int) -> int:
    """r with 2^{r-1} <= n < 2^r."""
    if n < 1:
        raise DomainError("n must be at least 1")
    return int(n).bit_length()


def maximal_lp_lhs(space: FiniteAdaptedSpace, p: float) -> float:
    """Exact ||max_{1<=i<=n} |S_i|||_p on the finite space."""
    if not 1.0 < p < 2.0:
        raise DomainError(f"p must lie in (1, 2), got {p}")
    return space.lp_norm(space.running_abs_max(), space.n, p)


def maximal_lp_rhs(space: FiniteAdaptedSpace, p: float) -> float:
    """Dyadic bound on the maximal partial sum of an adapted sequence.

    (2c_p+1)(sum_j ||X_j||_p^p)^{1/p}
      + 2^{(p-1)/p}(2c_p+1) sum_{j=0}^{r-1}(sum_k ||E(S_{k 2^j} - S_{(k-1)2^j}
        | F_{(k-1)2^j})||_p^p)^{1/p}

    with 2^{r-1} <= n < 2^r; the sequence is extended by zeros beyond n, so
    blocks past the horizon contribute only their within-range part.  For
    martingale differences the second sum vanishes.
    """
    if not 1.0 < p < 2.0:
        raise DomainError(f"p must lie in (1, 2), got {p}")
    n = space.n
    r = dyadic_scales(n)
    c_p = maximal_lp_constant(p)
    first = sum(space.lp_norm(x, k + 1, p) ** p for k, x in enumerate(space.values)) ** (1.0 / p)
    sums = space.partial_sums()
    second = 0.0
    for j in range(r):
        step = 2**j
        acc = 0.0
        for k in range(1, 2 ** (r - j) + 1):
            a = (k - 1) * step
            b = min(k * step, n)
            if a >= b:
                continue
            s_b = sums[b - 1]
            delta = s_b if a == 0 else s_b - space.lift(sums[a - 1], a, b)
            cond = space.cond_exp(delta, b, a)
            acc += space.lp_norm(cond, a, p) ** p
        second += acc ** (1.0 / p)
    lead = 2.0 * c_p + 1.0
    return lead * first + 2.0 ** ((p - 1.0) / p) * lead * second


# ---------------------------------------------------------------------------
# law-of-the-iterated-logarithm truncation


def lil_threshold(n: int, alpha: float) -> float:
    """alpha sqrt(n) / sqrt(log log n); needs n >= 3 for the double log."""
    if n < 3:
        raise DomainError("n must be at least 3 for log log n")
    _check_positive(alpha=alpha)
    return alpha * math.sqrt(n) / math.sqrt(math.log(math.log(n)))


def lil_truncate(
    d_seq, cond_mean_fn: Callable[[np.ndarray], np.ndarray], n: int, alpha: float
) -> np.ndarray:
    """Truncate at the LIL threshold and recenter with the caller's oracle.

    cond_mean_fn receives the truncated values and must return their
    conditional means given the past (exact on finite spaces, binned
    estimates on sampled paths).  The output satisfies the pathwise bound
    |D~_k| <= 2 threshold, which is asserted.
    """
    thr = lil_threshold(n, alpha)
    d = np.asarray(d_seq, dtype=float)
    trunc = np.where(np.abs(d) <= thr, d, 0.0)
    means = np.asarray(cond_mean_fn(trunc), dtype=float)
    if means.shape != trunc.shape:
        raise DomainError("conditional-mean oracle must preserve the shape")
    out = trunc - means
    if np.abs(out).max(initial=0.0) > 2.0 * thr + 1e-12:
        raise InvariantError(
            "truncated sequence exceeds twice the threshold; the conditional-mean "
            "oracle is not a conditional mean of the truncated variable"
        )
    return out


def lil_truncate_space(
    space: FiniteAdaptedSpace, alpha: float, n: Optional[int] = None
) -> FiniteAdaptedSpace:
    """Exact LIL truncation on a finite space: truncate, recenter, stay adapted.

    The result has exactly zero one-step conditional means and all values
    bounded by twice the threshold.
    """
    horizon = space.n if n is None else n
    thr = lil_threshold(horizon, alpha)
    new_vals = []
    for k, x in enumerate(space.values):
        trunc = np.where(np.abs(x) <= thr, x, 0.0)
        m = space.cond_exp(trunc, k + 1, k)
        new_vals.append(trunc - space.lift(m, k, k + 1))
    return FiniteAdaptedSpace(level_probs=space.level_probs, values=tuple(new_vals))


def angular_bin_cond_mean(angles, values, nbins: int = 64):
    """Per-sample conditional-mean estimate by angular state binning.

    angles are the conditioning states in [0, pi); the estimate of
    E[value | state] is the mean of values sharing the state's bin,
    broadcast back to sample positions.  Returns (per_sample, bin_means,
    counts).
    """
    if nbins < 1:
        raise DomainError("nbins must be positive")
    a = np.mod(np.asarray(angles, dtype=float), np.pi)
    v = np.asarray(values, dtype=float)
    if a.shape != v.shape:
        raise DomainError("angles and values must have the same shape")
    idx = np.minimum((a * (nbins / np.pi)).astype(np.intp), nbins - 1)
    sums = np.zeros(nbins)
    counts = np.zeros(nbins, dtype=np.int64)
    np.add.at(sums, idx.ravel(), v.ravel())
    np.add.at(counts, idx.ravel(), 1)
    means = np.zeros(nbins)
    occ = counts > 0
    means[occ] = sums[occ] / counts[occ]
    return means[idx], means, counts


# ---------------------------------------------------------------------------
# complete-convergence bound with caller-supplied constant


def hao_liu_bound(
    c: float,
    lam: float,
    n: int,
    dominating_tail: Callable[[float], float],
    moment_norm: float,
    q: float,
    gamma: float,
    big_l: int,
) -> float:
    """Maximal tail bound n P(X > lam/(4(L+1))) + C moment^{e} / lam^{gamma e}.

    Here e = q(L+1)/(q+L), X dominates every |D_k| in distribution
    (dominating_tail(t) = P(X > t)), and moment_norm is the L^q norm of
    sum_k E(|D_k|^gamma | F_{k-1}).  The constant C is not explicit in the
    underlying result, so the caller supplies it; this formula is a
    calculator, deliberately excluded from the validity test suites.
    """
    _check_positive(c=c, lam=lam)
    if n < 1:
        raise DomainError("n must be at least 1")
    if not q > 1.0:
        raise DomainError("q must exceed 1")
    if not 1.0 < gamma <= 2.0:
        raise DomainError("gamma must lie in (1, 2]")
    if big_l < 0:
        raise DomainError("L must be a nonnegative integer")
    if moment_norm < 0:
        raise DomainError("moment_norm must be nonnegative")
    e = q * (big_l + 1) / (q + big_l)
    tail = float(dominating_tail(lam / (4.0 * (big_l + 1))))
    if not 0.0 <= tail <= 1.0:
        raise DomainError("dominating_tail must return a probability")
    return n * tail + c * moment_norm**e / lam ** (gamma * e)
