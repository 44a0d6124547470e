"""Additive cocycles over the projective chain and their ergodic averages.

The norm cocycle sigma(g, x) = log ||g u|| is the built-in instance; any map
satisfying the cocycle identity sigma(g g', x) = sigma(g, g'.x) + sigma(g', x)
can be registered and fed to the same estimators.  Estimators average along
simulated trajectories; the law of large numbers for log ||A_n x|| makes the
per-step mean converge to the top Lyapunov exponent for every start x.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ._parallel import merge_moments, run_blocks
from .errors import DomainError, InvariantError
from .matrix_walk import (
    MeasureSpec,
    ProjectivePoint,
    RngStream,
    _canonicalize_rows,
    _entries_of,
    big_n,
    direction_grid,
    iter_batch_increments,
    run_walk,
)

_NS_LYAP = 11
_NS_VAR = 12
_NS_OCC = 13
_NS_GORDIN = 14

_REGISTRATION_PROBES = 64
_REGISTRATION_TOL = 1e-8

LOG_NORM_LABEL = "log-norm"


@dataclass(frozen=True)
class CocycleSpec:
    """A registered cocycle: label, dimension, and the evaluation map."""

    label: str
    dim: int
    fn: Callable[[np.ndarray, np.ndarray], float]

    def evaluate(self, m, x) -> float:
        a = _entries_of(m)
        u = x.direction if isinstance(x, ProjectivePoint) else np.asarray(x, dtype=float)
        return float(self.fn(a, u))

    @property
    def is_log_norm(self) -> bool:
        return self.label == LOG_NORM_LABEL


def _probe_matrices(gen, d, count):
    """Well-conditioned probe matrices U diag(e^s) V^T, |s| <= 1.5."""
    u, _ = np.linalg.qr(gen.standard_normal((count, d, d)))
    v, _ = np.linalg.qr(gen.standard_normal((count, d, d)))
    s = np.exp(gen.uniform(-1.5, 1.5, (count, d)))
    return np.einsum("bij,bj,bkj->bik", u, s, v)


def make_cocycle(
    fn: Callable[[np.ndarray, np.ndarray], float], label: str, dim: int
) -> CocycleSpec:
    """Register fn(entries, unit_direction) -> value as a cocycle.

    Registration checks the cocycle identity on a fixed set of random probe
    triples (g, g', x) and rejects maps violating it beyond 1e-8.
    """
    if dim < 2:
        raise DomainError("dimension must be at least 2")
    spec = CocycleSpec(label=label, dim=dim, fn=fn)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(0xC0C, spawn_key=(dim,))))
    gs = _probe_matrices(gen, dim, _REGISTRATION_PROBES)
    hs = _probe_matrices(gen, dim, _REGISTRATION_PROBES)
    xs = gen.standard_normal((_REGISTRATION_PROBES, dim))
    worst = 0.0
    for g, h, raw in zip(gs, hs, xs):
        x = ProjectivePoint.from_vector(raw)
        hx = ProjectivePoint.from_vector(h @ x.direction)
        gap = abs(spec.evaluate(g @ h, x) - spec.evaluate(g, hx) - spec.evaluate(h, x))
        worst = max(worst, gap)
    if worst > _REGISTRATION_TOL:
        raise InvariantError(
            f"map '{label}' violates the cocycle identity: worst probe gap {worst:.3e}"
        )
    return spec


def log_norm_cocycle(dim: int) -> CocycleSpec:
    return make_cocycle(lambda a, u: float(np.log(np.linalg.norm(a @ u))), LOG_NORM_LABEL, dim)


# ---------------------------------------------------------------------------
# Lyapunov exponent


@dataclass(frozen=True)
class LyapunovEstimate:
    lambda_hat: float
    std_error: float
    n: int
    reps: int
    x_grid_size: int


def _walk_stat_blocks(spec, x_dir, n, reps, stream: RngStream, ns, x_index, threads, accumulate):
    """Run `reps` trajectories from x_dir in fixed blocks; fold block results in order.

    accumulate(dirs, n, gen) -> block summary; returns list of summaries.
    """

    def block(bi, lo, hi):
        gen = stream.substream(ns, x_index, bi)
        dirs = np.tile(x_dir, (hi - lo, 1))
        return accumulate(dirs, n, gen)

    return run_blocks(reps, block, threads=threads)


def estimate_lambda(
    spec: MeasureSpec,
    cocycle: CocycleSpec,
    n: int,
    reps: int,
    x_grid: int,
    rng: RngStream,
    threads: int = 1,
) -> LyapunovEstimate:
    """Estimate the top Lyapunov exponent as the mean per-step increment.

    Trajectory means (1/n) log ||A_n x|| are averaged over `reps` runs for
    each of `x_grid` deterministic start directions; the standard error is
    the dispersion of the per-trajectory means.
    """
    if n < 1 or reps < 1 or x_grid < 1:
        raise DomainError("n, reps and x_grid must all be at least 1")
    if cocycle.dim != spec.dim:
        raise DomainError("cocycle and measure dimensions differ")
    grid = direction_grid(spec.dim, x_grid)
    parts = []
    if cocycle.is_log_norm:

        def accumulate(dirs, nn, gen):
            sums = np.zeros(dirs.shape[0])
            for inc in iter_batch_increments(spec, dirs, nn, gen):
                sums += inc
            means = sums / nn
            mu = float(means.mean())
            return means.size, mu, float(((means - mu) ** 2).sum())

        for xi, x_dir in enumerate(grid):
            parts.extend(
                _walk_stat_blocks(spec, x_dir, n, reps, rng, _NS_LYAP, xi, threads, accumulate)
            )
    else:
        # custom cocycles run one trajectory at a time
        for xi, x_dir in enumerate(grid):
            x0 = ProjectivePoint.from_vector(x_dir)
            means = np.empty(reps)
            for rep in range(reps):
                gen = rng.substream(_NS_LYAP, xi, rep)
                path = run_walk(spec, x0, n, gen, increment_fn=cocycle.fn)
                means[rep] = path.increments.mean()
            mu = float(means.mean())
            parts.append((reps, mu, float(((means - mu) ** 2).sum())))
    count, mean, m2 = merge_moments(parts)
    se = math.sqrt(m2 / count / count)
    return LyapunovEstimate(lambda_hat=mean, std_error=se, n=n, reps=reps, x_grid_size=x_grid)


# ---------------------------------------------------------------------------
# asymptotic variance


@dataclass(frozen=True)
class VarianceEstimate:
    v_hat: float
    std_error: float
    n: int
    x_agreement: bool = True


def estimate_variance(
    spec: MeasureSpec,
    cocycle: CocycleSpec,
    lam: float,
    n: int,
    reps: int,
    rng: RngStream,
    threads: int = 1,
) -> VarianceEstimate:
    """Estimate V = lim (1/n) E (log ||A_n x|| - n lambda)^2.

    Runs two distinct start directions; their estimates must agree within
    3 joint standard errors (the limit does not depend on x), otherwise a
    warning is emitted and the x_agreement flag is cleared.
    """
    if n < 1 or reps < 2:
        raise DomainError("need n >= 1 and reps >= 2")
    if not cocycle.is_log_norm:
        raise DomainError("variance estimation is defined for the norm cocycle")
    grid = direction_grid(spec.dim, 2)

    def accumulate(dirs, nn, gen):
        sums = np.zeros(dirs.shape[0])
        for inc in iter_batch_increments(spec, dirs, nn, gen):
            sums += inc
        v = (sums - nn * lam) ** 2 / nn
        mu = float(v.mean())
        return v.size, mu, float(((v - mu) ** 2).sum())

    per_x = []
    for xi, x_dir in enumerate(grid):
        cnt, mean, m2 = merge_moments(
            _walk_stat_blocks(spec, x_dir, n, reps, rng, _NS_VAR, xi, threads, accumulate)
        )
        per_x.append((mean, math.sqrt(m2 / cnt / cnt)))
    (m0, se0), (m1, se1) = per_x
    joint = math.sqrt(se0 * se0 + se1 * se1)
    agree = abs(m0 - m1) <= 3.0 * joint + 1e-15
    if not agree:
        warnings.warn(
            f"variance estimates disagree across start directions: {m0:.6g} vs {m1:.6g} "
            f"(3 joint se = {3 * joint:.3g}); the measure may not satisfy the "
            "irreducibility assumptions",
            stacklevel=2,
        )
    v_hat = 0.5 * (m0 + m1)
    return VarianceEstimate(v_hat=v_hat, std_error=0.5 * joint, n=n, x_agreement=agree)


# ---------------------------------------------------------------------------
# occupation measure of the projective chain


@dataclass(frozen=True, eq=False)
class OccupationSample:
    directions: np.ndarray  # (n, d) canonical unit rows
    weights: np.ndarray  # (n,), equal weights summing to 1


def occupation_measure(
    spec: MeasureSpec, x0: ProjectivePoint, burn_in: int, n: int, rng: Union[RngStream, np.random.Generator]
) -> OccupationSample:
    """Visited directions of one chain after a burn-in, as a weighted sample."""
    if burn_in < 0 or n < 1:
        raise DomainError("need burn_in >= 0 and n >= 1")
    if x0.dim != spec.dim:
        raise DomainError("x0 dimension does not match the measure")
    gen = rng.substream(_NS_OCC) if isinstance(rng, RngStream) else rng
    dirs = x0.direction[None, :].copy()
    kept = np.empty((n, spec.dim))
    for k, _ in enumerate(iter_batch_increments(spec, dirs, burn_in + n, gen)):
        if k >= burn_in:
            kept[k - burn_in] = dirs[0]
    return OccupationSample(directions=_canonicalize_rows(kept), weights=np.full(n, 1.0 / n))


# ---------------------------------------------------------------------------
# Gordin-type summability diagnostic


@dataclass(frozen=True, eq=False)
class GordinReport:
    a_n: np.ndarray  # sup_x |E sigma(Y_{n+1}, A_n . x) - lambda|, n = 0..n_max
    partial_sums: np.ndarray
    std_errors: np.ndarray
    trend_verdict: str  # summable-looking | inconclusive | diverging


def gordin_check(
    spec: MeasureSpec,
    cocycle: CocycleSpec,
    lam: float,
    n_max: int,
    reps: int,
    x_grid: int,
    rng: RngStream,
    threads: int = 1,
) -> GordinReport:
    """Estimate a_n = sup_x |E sigma(Y_{n+1}, A_n . x) - lambda| for n <= n_max.

    Summability of (a_n) is the centering condition under which the
    martingale-coboundary machinery applies; the verdict is a heuristic
    log-log trend call, never a proof.
    """
    if n_max < 0 or reps < 2 or x_grid < 1:
        raise DomainError("need n_max >= 0, reps >= 2, x_grid >= 1")
    if not cocycle.is_log_norm:
        raise DomainError("gordin_check currently supports the norm cocycle")
    grid = direction_grid(spec.dim, x_grid)
    steps = n_max + 1
    means = np.empty((x_grid, steps))
    ses = np.empty((x_grid, steps))
    for xi, x_dir in enumerate(grid):

        def accumulate(dirs, nn, gen):
            vals = np.empty((nn, dirs.shape[0]))
            for k, inc in enumerate(iter_batch_increments(spec, dirs, nn, gen)):
                vals[k] = inc
            mu = vals.mean(axis=1)
            return dirs.shape[0], mu, ((vals - mu[:, None]) ** 2).sum(axis=1)

        cnt, mu, m2 = merge_moments(
            _walk_stat_blocks(spec, x_dir, steps, reps, rng, _NS_GORDIN, xi, threads, accumulate)
        )
        means[xi] = mu
        ses[xi] = np.sqrt(m2 / cnt / cnt)
    a_n = np.max(np.abs(means - lam), axis=0)
    se_n = np.max(ses, axis=0)
    verdict = _gordin_verdict(a_n, se_n, lam)
    return GordinReport(
        a_n=a_n, partial_sums=np.cumsum(a_n), std_errors=se_n, trend_verdict=verdict
    )


def _gordin_verdict(a_n: np.ndarray, se_n: np.ndarray, lam: float) -> str:
    floor = max(3.0 * float(np.median(se_n)), 1e-13 * (1.0 + abs(lam)))
    if np.all(a_n <= floor):
        return "summable-looking"
    n_max = len(a_n) - 1
    if n_max == 0:
        return "inconclusive"
    lo = max(1, n_max // 2)
    upper = a_n[lo:]
    if np.all(upper <= floor):
        return "summable-looking"
    idx = np.arange(lo, n_max + 1)
    keep = upper > 0
    if keep.sum() < 2:
        return "inconclusive"
    slope = np.polyfit(np.log(idx[keep]), np.log(upper[keep]), 1)[0]
    if slope <= -1.1:
        return "summable-looking"
    if slope >= -0.1:
        return "diverging"
    return "inconclusive"


# ---------------------------------------------------------------------------
# sup over directions


def sigma_star(cocycle: CocycleSpec, m, grid_size: int = 4096) -> float:
    """sup_x |sigma(g, x)| over directions.

    For the norm cocycle the sup is log N(g) in closed form; the grid value
    is computed as a cross-check and must not exceed it (beyond 1e-8 slack).
    Other cocycles get the grid maximum.
    """
    if grid_size < 1:
        raise DomainError("grid_size must be positive")
    a = _entries_of(m)
    grid = direction_grid(cocycle.dim, grid_size)
    if cocycle.is_log_norm:
        vals = np.abs(np.log(np.linalg.norm(grid @ a.T, axis=1)))
        closed = math.log(big_n(a))
        grid_max = float(vals.max())
        if grid_max > closed + 1e-8:
            raise InvariantError(
                f"grid sup {grid_max:.12g} exceeds closed form log N = {closed:.12g}"
            )
        return closed
    return max(abs(cocycle.evaluate(a, u)) for u in grid)
