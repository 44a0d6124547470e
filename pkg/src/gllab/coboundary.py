"""Martingale-coboundary decomposition of the log-norm walk.

The one-step conditional mean sigma_bar(x) = E sigma(Y, x) feeds a Poisson
equation psi - P psi = sigma_bar - lambda on projective space; given psi,

    D_k = X_k - lambda + psi(x_k) - psi(x_{k-1})

is a stationary martingale difference sequence and the centered walk differs
from its partial sums by the bounded coboundary psi(x_0) - psi(x_n).  The
solver works on the projective circle (d = 2) with finite atom families,
where sigma_bar is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from ._parallel import run_blocks
from .errors import DomainError, InvariantError, SpectralGapError
from .matrix_walk import (
    FiniteSupport,
    MeasureSpec,
    ProjectivePoint,
    RngStream,
    ScaledRotation,
    WalkPath,
    iter_batch_increments,
    projective_angle,
    sample_entries,
)

_NS_SIGMA_BAR = 32
_NS_BINNED = 33

_NU_TOL = 1e-14
_NU_MAXIT = 100_000
_DECAY_WINDOW = 20
_DECAY_BURN_IN = 40
# per-term decay factor demanded of the trailing window before the sum is
# trusted to converge geometrically
_DECAY_RATIO = 0.999
_CONST_SIGMA_TOL = 1e-14
_MC_CHUNK = 4096


def _dirs_2d(x) -> np.ndarray:
    if isinstance(x, ProjectivePoint):
        return x.direction[None, :]
    a = np.asarray(x, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def exact_sigma_bar(spec: MeasureSpec, dirs) -> np.ndarray:
    """sigma_bar(x) = E sigma(Y, x) in closed form, vectorized over direction rows.

    Available for finite atom families and for scaled rotations (where the
    increment is the log scale regardless of direction).  Raises DomainError
    for measures without a finite closed form; use mc_sigma_bar there.
    """
    d = _dirs_2d(dirs)
    if isinstance(spec, FiniteSupport):
        out = np.zeros(d.shape[0])
        for m, w in zip(spec.matrices, spec.weights):
            out += w * np.log(np.linalg.norm(d @ m.entries.T, axis=1))
        return out
    if isinstance(spec, ScaledRotation):
        return np.full(d.shape[0], spec.mean_log_scale())
    raise DomainError(
        f"{type(spec).__name__} has no closed-form one-step mean; use mc_sigma_bar"
    )


def mc_sigma_bar(spec: MeasureSpec, dirs, reps: int, rng: Union[RngStream, np.random.Generator]):
    """Monte Carlo sigma_bar over direction rows: (values, std_errors)."""
    if reps < 2:
        raise DomainError("reps must be at least 2")
    d = _dirs_2d(dirs)
    gen = rng.substream(_NS_SIGMA_BAR) if isinstance(rng, RngStream) else rng
    sums = np.zeros(d.shape[0])
    sums2 = np.zeros(d.shape[0])
    done = 0
    while done < reps:
        b = min(_MC_CHUNK, reps - done)
        ys = sample_entries(spec, gen, b)
        logs = np.log(np.linalg.norm(np.einsum("bij,gj->bgi", ys, d), axis=2))
        sums += logs.sum(axis=0)
        sums2 += (logs**2).sum(axis=0)
        done += b
    mean = sums / reps
    var = np.maximum(sums2 / reps - mean**2, 0.0)
    return mean, np.sqrt(var / reps)


# ---------------------------------------------------------------------------
# Poisson equation on the projective circle


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """psi on an angle grid with the drift actually used for centering.

    lambda_used is the mean of sigma_bar under the discretized stationary
    measure; whatever reference drift the caller holds, the coboundary
    identity verified here is the one with lambda_used.
    """

    grid: np.ndarray  # angles theta_j = j pi / G
    psi: np.ndarray
    lambda_used: float
    truncation_terms: int
    tail_bound: float
    nu: Optional[np.ndarray] = None  # discretized stationary weights, if computed

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    def psi_at_angles(self, angles) -> np.ndarray:
        """Periodic linear interpolation of psi at projective angles."""
        a = np.mod(np.asarray(angles, dtype=float), np.pi)
        xp = np.append(self.grid, np.pi)
        fp = np.append(self.psi, self.psi[0])
        return np.interp(a, xp, fp)

    def psi_at(self, x) -> np.ndarray:
        """psi at a direction row / rows / ProjectivePoint (by angle interpolation)."""
        d = _dirs_2d(x)
        vals = self.psi_at_angles(projective_angle(d))
        return float(vals[0]) if (isinstance(x, ProjectivePoint) or np.asarray(x).ndim == 1) else vals

    def sup_abs(self) -> float:
        return float(np.abs(self.psi).max())


def _atom_transition(spec: FiniteSupport, grid: np.ndarray):
    """Per-atom interpolation stencils for the projective pushforward.

    Returns (lo, hi, frac, weights): atom i maps grid node j to an angle
    sitting between nodes lo[i, j] and hi[i, j] with fractional offset frac.
    """
    g = grid.shape[0]
    h = np.pi / g
    u = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    lo = np.empty((len(spec.matrices), g), dtype=np.intp)
    frac = np.empty((len(spec.matrices), g))
    for i, m in enumerate(spec.matrices):
        phi = projective_angle(u @ m.entries.T)
        pos = phi / h
        base = np.floor(pos).astype(np.intp)
        frac[i] = pos - base
        lo[i] = base % g
    hi = (lo + 1) % g
    return lo, hi, frac, np.asarray(spec.weights, dtype=float)


def _apply_p(f: np.ndarray, lo, hi, frac, weights) -> np.ndarray:
    """(P f)(theta_j) = sum_i w_i f(atom image of theta_j), interpolated."""
    return np.einsum("i,ij->j", weights, f[lo] * (1.0 - frac) + f[hi] * frac)


def _stationary_weights(g: int, lo, hi, frac, weights) -> np.ndarray:
    nu = np.full(g, 1.0 / g)
    w_lo = weights[:, None] * (1.0 - frac)
    w_hi = weights[:, None] * frac
    for _ in range(_NU_MAXIT):
        nxt = np.zeros(g)
        np.add.at(nxt, lo.ravel(), (nu[None, :] * w_lo).ravel())
        np.add.at(nxt, hi.ravel(), (nu[None, :] * w_hi).ravel())
        if np.abs(nxt - nu).sum() < _NU_TOL:
            return nxt
        nu = nxt
    raise SpectralGapError(
        "stationary-measure iteration did not converge; the projective chain "
        "does not appear to mix",
        iterations=_NU_MAXIT,
    )


def solve_poisson(
    spec: MeasureSpec,
    grid_size: int = 2048,
    tol: float = 1e-8,
    lam: Optional[float] = None,
    max_terms: int = 50_000,
) -> PoissonSolution:
    """Solve psi - P psi = sigma_bar - lambda_used by a truncated Neumann sum.

    The angle grid has grid_size nodes (a power of two); P is discretized by
    linear interpolation of each atom's pushforward.  lambda_used is always
    the discretized stationary mean of sigma_bar; a caller-supplied lam is a
    reference only.  Terms P^k (sigma_bar - lambda_used) are accumulated with
    their nu-mean deflated until the sup norm drops below tol.  A trailing
    window that fails to contract geometrically raises SpectralGapError.
    """
    if spec.dim != 2:
        raise DomainError("the angle-grid solver is for dimension 2")
    if grid_size < 16 or grid_size & (grid_size - 1):
        raise DomainError("grid_size must be a power of two, at least 16")
    if tol <= 0:
        raise DomainError("tol must be positive")
    g = grid_size
    grid = np.pi * np.arange(g) / g
    u = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    sb = exact_sigma_bar(spec, u)

    spread = float(sb.max() - sb.min())
    if spread <= _CONST_SIGMA_TOL * (1.0 + np.abs(sb).max()):
        # sigma_bar constant in x: the walk is already centered, psi = 0
        return PoissonSolution(
            grid=grid,
            psi=np.zeros(g),
            lambda_used=float(sb[0]),
            truncation_terms=0,
            tail_bound=0.0,
        )
    if not isinstance(spec, FiniteSupport):
        raise DomainError("non-constant sigma_bar requires a finite atom family")

    lo, hi, frac, weights = _atom_transition(spec, grid)
    nu = _stationary_weights(g, lo, hi, frac, weights)
    lambda_used = float(nu @ sb)
    if lam is not None and abs(lam - lambda_used) > 1e-3 * (1.0 + abs(lambda_used)):
        import warnings

        warnings.warn(
            f"reference drift {lam:.6g} is far from the stationary mean "
            f"{lambda_used:.6g} used for centering",
            stacklevel=2,
        )

    term = sb - lambda_used
    term = term - float(nu @ term)
    psi = term.copy()
    sups = [float(np.abs(term).max())]
    k = 0
    while sups[-1] >= tol:
        if k >= max_terms:
            raise SpectralGapError(
                f"Neumann sum not below tol after {max_terms} terms", iterations=k
            )
        term = _apply_p(term, lo, hi, frac, weights)
        term = term - float(nu @ term)
        psi += term
        sups.append(float(np.abs(term).max()))
        k += 1
        if k >= _DECAY_BURN_IN and k >= _DECAY_WINDOW:
            window = sups[-1] / max(sups[-1 - _DECAY_WINDOW], 1e-300)
            if window >= _DECAY_RATIO**_DECAY_WINDOW:
                raise SpectralGapError(
                    f"terms of the Neumann sum are not contracting: sup decayed by "
                    f"factor {window:.4f} over the last {_DECAY_WINDOW} terms "
                    f"(term {k}, sup {sups[-1]:.3e})",
                    iterations=k,
                )
    if k >= _DECAY_WINDOW:
        r = (sups[-1] / max(sups[-1 - _DECAY_WINDOW], 1e-300)) ** (1.0 / _DECAY_WINDOW)
    else:
        r = (sups[-1] / max(sups[0], 1e-300)) ** (1.0 / max(k, 1))
    tail = sups[-1] * r / (1.0 - r) if r < 1.0 else float("inf")
    return PoissonSolution(
        grid=grid,
        psi=psi,
        lambda_used=lambda_used,
        truncation_terms=k,
        tail_bound=tail,
        nu=nu,
    )


def poisson_residual(
    sol: PoissonSolution, spec: MeasureSpec, refine: int = 1, weighted: bool = False
) -> float:
    """Residual of psi - P psi = sigma_bar - lambda_used on a refined grid.

    refine = 1 checks the solver grid itself (sup norm); finer grids probe
    interpolation error.  Off the solver grid the sup can be dominated by
    repelling directions carrying no stationary mass, where the true solution
    is merely Hoelder continuous; weighted = True therefore averages |residual|
    under the (interpolated) stationary weights instead of taking the sup,
    which is the norm that matters along actual trajectories.
    """
    if refine < 1:
        raise DomainError("refine must be at least 1")
    g = sol.grid_size * refine
    grid = np.pi * np.arange(g) / g
    u = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    sb = exact_sigma_bar(spec, u)
    psi_here = sol.psi_at_angles(grid)
    p_psi = np.zeros(g)
    if isinstance(spec, FiniteSupport):
        for m, w in zip(spec.matrices, spec.weights):
            p_psi += w * sol.psi_at_angles(projective_angle(u @ m.entries.T))
    elif isinstance(spec, ScaledRotation):
        if np.abs(sol.psi).max() > 0:
            raise DomainError("scaled rotations only support the trivial solution")
    else:
        raise DomainError("residual check needs a closed-form sigma_bar")
    res = np.abs(psi_here - p_psi - (sb - sol.lambda_used))
    if not weighted:
        return float(res.max())
    if sol.nu is None:
        w = np.full(g, 1.0 / g)
    else:
        w = np.interp(grid, np.append(sol.grid, np.pi), np.append(sol.nu, sol.nu[0]))
        w = w / w.sum()
    return float(w @ res)


# ---------------------------------------------------------------------------
# martingale extraction along a path


@dataclass(frozen=True, eq=False)
class MartingaleExtraction:
    """Per-step decomposition X_k - lam = D_k + psi(x_{k-1}) - psi(x_k).

    d_seq are the martingale differences built through psi; r_seq (when the
    measure has a closed-form sigma_bar) is the adapted remainder
    sigma_bar(x_{k-1}) - lam of the alternative one-step splitting, whose
    martingale part is recovered exactly as um_d_seq = (X_k - lam) - r_seq.
    """

    lam: float
    d_seq: np.ndarray
    psi_start: float
    psi_end: float
    r_seq: Optional[np.ndarray] = None
    _increments: Optional[np.ndarray] = None

    @property
    def m_partial(self) -> np.ndarray:
        return np.cumsum(self.d_seq)

    @property
    def coboundary_gap(self) -> float:
        return self.psi_start - self.psi_end

    @property
    def um_d_seq(self) -> np.ndarray:
        if self.r_seq is None:
            raise DomainError("one-step splitting needs a closed-form sigma_bar")
        return (self._increments - self.lam) - self.r_seq

    @property
    def u_partial(self) -> np.ndarray:
        return np.cumsum(self.um_d_seq)


def _psi_fn(psi) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(psi, PoissonSolution):
        return lambda dirs: psi.psi_at_angles(projective_angle(dirs))
    if callable(psi):
        return lambda dirs: np.asarray(psi(dirs), dtype=float)
    raise DomainError("psi must be a PoissonSolution or a callable on direction rows")


def extract_martingale(
    path: WalkPath, psi, lam: Optional[float] = None, spec: Optional[MeasureSpec] = None
) -> MartingaleExtraction:
    """Decompose a walk path into martingale differences plus a coboundary.

    lam defaults to the solution's lambda_used.  Passing the measure spec in
    addition computes the closed-form one-step remainder r_seq.  The exact
    telescoping identity sum(D) = S_n - n lam + psi(x_n) - psi(x_0) is
    asserted up to rounding.
    """
    if lam is None:
        if isinstance(psi, PoissonSolution):
            lam = psi.lambda_used
        else:
            raise DomainError("lam is required when psi is a bare callable")
    fn = _psi_fn(psi)
    states = np.vstack([path.x0.direction[None, :], path.directions])
    psi_states = fn(states)
    d_seq = (path.increments - lam) + psi_states[1:] - psi_states[:-1]
    n = path.n
    if n:
        resid = abs(
            float(path.increments.sum()) - n * lam - float(d_seq.sum())
            - (psi_states[0] - psi_states[-1])
        )
        if resid > 1e-7 * max(1.0, float(n)):
            raise InvariantError(f"telescoping identity violated by {resid:.3e}")
    r_seq = None
    if spec is not None:
        r_seq = exact_sigma_bar(spec, states[:-1]) - lam
    return MartingaleExtraction(
        lam=float(lam),
        d_seq=d_seq,
        psi_start=float(psi_states[0]),
        psi_end=float(psi_states[-1]),
        r_seq=r_seq,
        _increments=path.increments,
    )


# ---------------------------------------------------------------------------
# conditional-mean audit of the extracted differences


@dataclass(frozen=True, eq=False)
class BinnedMartingaleCheck:
    bin_centers: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    counts: np.ndarray

    def max_violation(self, slack: float, z: float = 3.0) -> float:
        """Largest |mean| beyond slack + z * se over occupied bins."""
        occ = self.counts > 0
        excess = np.abs(self.means[occ]) - (slack + z * self.std_errors[occ])
        return float(excess.max(initial=-np.inf))


def binned_martingale_means(
    spec: MeasureSpec,
    x0: ProjectivePoint,
    n: int,
    reps: int,
    sol: PoissonSolution,
    rng: RngStream,
    nbins: int = 64,
    threads: int = 1,
) -> BinnedMartingaleCheck:
    """Monte Carlo E[D_k | previous state in angular bin], pooled over steps.

    A correct extraction has every bin mean at zero up to Monte Carlo noise
    and psi truncation error.
    """
    if spec.dim != 2:
        raise DomainError("angular binning is for dimension 2")
    if n < 1 or reps < 1 or nbins < 1:
        raise DomainError("n, reps and nbins must be positive")
    lam = sol.lambda_used

    def block(bi, lo_i, hi_i):
        gen = rng.substream(_NS_BINNED, bi)
        b = hi_i - lo_i
        dirs = np.tile(x0.direction, (b, 1))
        counts = np.zeros(nbins, dtype=np.int64)
        sums = np.zeros(nbins)
        sums2 = np.zeros(nbins)
        prev_ang = projective_angle(dirs)
        prev_psi = sol.psi_at_angles(prev_ang)
        for inc in iter_batch_increments(spec, dirs, n, gen):
            ang = projective_angle(dirs)
            cur_psi = sol.psi_at_angles(ang)
            d = (inc - lam) + cur_psi - prev_psi
            idx = np.minimum((prev_ang * (nbins / np.pi)).astype(np.intp), nbins - 1)
            np.add.at(counts, idx, 1)
            np.add.at(sums, idx, d)
            np.add.at(sums2, idx, d * d)
            prev_ang, prev_psi = ang, cur_psi
        return counts, sums, sums2

    counts = np.zeros(nbins, dtype=np.int64)
    sums = np.zeros(nbins)
    sums2 = np.zeros(nbins)
    for c, s, s2 in run_blocks(reps, block, threads=threads):
        counts += c
        sums += s
        sums2 += s2
    occ = counts > 0
    means = np.zeros(nbins)
    ses = np.zeros(nbins)
    means[occ] = sums[occ] / counts[occ]
    var = np.zeros(nbins)
    var[occ] = np.maximum(sums2[occ] / counts[occ] - means[occ] ** 2, 0.0)
    ses[occ] = np.sqrt(var[occ] / counts[occ])
    centers = (np.arange(nbins) + 0.5) * np.pi / nbins
    return BinnedMartingaleCheck(bin_centers=centers, means=means, std_errors=ses, counts=counts)
