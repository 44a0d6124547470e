"""Products of random invertible matrices and their projective dynamics.

The walk multiplies i.i.d. random matrices Y_k on the left, A_k = Y_k ... Y_1,
and follows log ||A_k x|| through the additive cocycle

    sigma(g, x) = log(||g v|| / ||v||),   x = direction of v,

so that log ||A_n x|| = sum_k sigma(Y_k, A_{k-1} x).  Matrices are never
multiplied out: the state is a unit direction plus accumulated log-norms,
which stays stable for products of arbitrary length.

Randomness is counter-based: an (master_seed, stream_id) pair names a Philox
stream, so any trajectory can be reproduced bit for bit in isolation and
trajectory blocks can run on any number of workers without changing results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import DomainError, InvariantError, NumericFailure

# Conditioning floor for explicit matrices: smallest singular value must be
# at least SV_RTOL times the largest.
SV_RTOL = 1e-12

# Coordinates smaller than this are skipped when picking the sign-fixing
# coordinate of a projective representative.
CANONICAL_EPS = 1e-9

_POWER_TOL = 1e-12
_POWER_MAXIT = 10_000
_GAUSSIAN_RESAMPLE_ROUNDS = 8


# ---------------------------------------------------------------------------
# randomness


@dataclass(frozen=True)
class RngStream:
    """Name of an independent random stream: (master_seed, stream_id).

    Equal names give bitwise-equal draws regardless of scheduling; distinct
    stream_ids give statistically independent streams (SeedSequence spawning
    over a Philox counter-based generator).
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < 2**64:
                raise DomainError(f"{name} must be an integer in [0, 2^64)")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, *key: int) -> np.random.Generator:
        """Generator for a child stream keyed by extra integers (block ids...)."""
        ss = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_id),) + tuple(int(k) for k in key)
        )
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng: Union[RngStream, np.random.Generator]) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise DomainError("rng must be an RngStream or a numpy Generator")


# ---------------------------------------------------------------------------
# core types


def _entries_of(m) -> np.ndarray:
    if isinstance(m, SquareMatrix):
        return m.entries
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvariantError(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class SquareMatrix:
    """Invertible real d x d matrix, d >= 2, conditioning bounded by SV_RTOL."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvariantError(f"entries must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise InvariantError("dimension must be at least 2")
        if not np.all(np.isfinite(a)):
            raise InvariantError("entries must be finite")
        sv = np.linalg.svd(a, compute_uv=False)
        if sv[-1] < SV_RTOL * sv[0]:
            raise InvariantError(
                f"matrix is numerically singular: sv_min/sv_max = {sv[-1] / sv[0]:.3e} < {SV_RTOL:g}"
            )
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def canonical_direction(v: np.ndarray) -> np.ndarray:
    """Unit vector equivalent to v with the sign convention fixed.

    The first coordinate of magnitude above CANONICAL_EPS is made positive;
    for a unit vector such a coordinate always exists.
    """
    v = np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0 or not np.isfinite(nrm):
        raise InvariantError("cannot normalize a zero or non-finite vector")
    u = v / nrm
    idx = int(np.argmax(np.abs(u) > CANONICAL_EPS))
    if u[idx] < 0:
        u = -u
    return u


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """Point of real projective space, stored as a canonical unit vector."""

    direction: np.ndarray

    def __post_init__(self):
        u = np.array(self.direction, dtype=float)
        if u.ndim != 1 or u.shape[0] < 2:
            raise InvariantError("direction must be a vector of dimension >= 2")
        if abs(float(np.linalg.norm(u)) - 1.0) > 1e-12:
            raise InvariantError("direction must be a unit vector (use from_vector to normalize)")
        idx = int(np.argmax(np.abs(u) > CANONICAL_EPS))
        if u[idx] < 0:
            raise InvariantError("direction is not in canonical sign form")
        u.setflags(write=False)
        object.__setattr__(self, "direction", u)

    @classmethod
    def from_vector(cls, v) -> "ProjectivePoint":
        return cls(canonical_direction(np.asarray(v, dtype=float)))

    @classmethod
    def from_angle(cls, theta: float) -> "ProjectivePoint":
        return cls.from_vector(np.array([math.cos(theta), math.sin(theta)]))

    @property
    def dim(self) -> int:
        return self.direction.shape[0]


def projective_angle(dirs: np.ndarray) -> np.ndarray:
    """Angle in [0, pi) of 2d direction(s); invariant under sign flips."""
    a = np.asarray(dirs, dtype=float)
    ang = np.mod(np.arctan2(a[..., 1], a[..., 0]), np.pi)
    # mod can land exactly on pi for tiny negative angles
    return np.where(ang >= np.pi, 0.0, ang)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# norms


def operator_norm(m) -> float:
    """Largest singular value.

    Direct SVD for d <= 4; otherwise power iteration on m^T m with a
    deterministic start vector, stopping when the Rayleigh quotient is stable
    to relative 1e-12 (NumericFailure with the iteration count if the cap of
    10^4 iterations is hit first).
    """
    a = _entries_of(m)
    d = a.shape[0]
    if d <= 4:
        return float(np.linalg.svd(a, compute_uv=False)[0])
    b = a.T @ a
    v = np.full(d, 1.0 / math.sqrt(d))
    v[0] += 0.5 / math.sqrt(d)  # break symmetry deterministically
    v /= np.linalg.norm(v)
    prev = math.inf
    for it in range(1, _POWER_MAXIT + 1):
        w = b @ v
        ray = float(v @ w)
        if ray <= 0.0:
            raise NumericFailure("power iteration collapsed to the null cone", iterations=it)
        if abs(ray - prev) <= _POWER_TOL * ray:
            return math.sqrt(ray)
        prev = ray
        v = w / np.linalg.norm(w)
    raise NumericFailure(
        f"power iteration did not converge in {_POWER_MAXIT} iterations",
        iterations=_POWER_MAXIT,
    )


def big_n(m) -> float:
    """N(g) = max(||g||, ||g^-1||); at least 1 for every invertible g."""
    a = _entries_of(m)
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise InvariantError(f"matrix is singular, N(g) undefined: {exc}") from exc
    return max(operator_norm(a), operator_norm(inv))


# ---------------------------------------------------------------------------
# measures on GL_d


def _check_weights(weights, count: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (count,):
        raise InvariantError(f"expected {count} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvariantError("weights must be finite and non-negative")
    if abs(float(w.sum()) - 1.0) > 1e-12:
        raise InvariantError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
    return w


@dataclass(frozen=True, eq=False)
class FiniteSupport:
    """Finitely supported measure: P(Y = matrices[i]) = weights[i]."""

    matrices: tuple
    weights: np.ndarray

    def __post_init__(self):
        mats = tuple(
            m if isinstance(m, SquareMatrix) else SquareMatrix(np.asarray(m, dtype=float))
            for m in self.matrices
        )
        if not mats:
            raise InvariantError("support must contain at least one matrix")
        d = mats[0].dim
        if any(m.dim != d for m in mats):
            raise InvariantError("all support matrices must share one dimension")
        w = _check_weights(self.weights, len(mats))
        w.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.matrices[0].dim


@dataclass(frozen=True, eq=False)
class ScaledRotation:
    """Y = exp(w) R with w drawn from a finite set of log-scales.

    R is a Haar orthogonal matrix when uniform_rotation is set, else the
    identity.  ||Y x|| = exp(w) ||x|| exactly, so the walk increment equals
    the drawn log-scale; the family is the package's exact scalar oracle.
    """

    log_scales: np.ndarray
    weights: np.ndarray
    uniform_rotation: bool = True
    dim: int = 2

    def __post_init__(self):
        ls = np.asarray(self.log_scales, dtype=float)
        if ls.ndim != 1 or ls.size == 0 or not np.all(np.isfinite(ls)):
            raise InvariantError("log_scales must be a non-empty finite 1d array")
        w = _check_weights(self.weights, ls.size)
        if self.dim < 2:
            raise InvariantError("dimension must be at least 2")
        ls.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "log_scales", ls)
        object.__setattr__(self, "weights", w)

    def mean_log_scale(self) -> float:
        """Exact Lyapunov exponent of the family."""
        return float(self.log_scales @ self.weights)


@dataclass(frozen=True)
class HeavyTailedConjugatedDiagonal:
    """Y = R_theta diag(e^W, e^-W) R_phi with P(W > t) = min(1, t^-p).

    log N(Y) = W exactly (rotations preserve singular values), so the family
    has a weak moment of order exactly p = tail_index and no stronger one.
    Two-dimensional by construction.
    """

    tail_index: float
    randomize_rotations: bool = True
    dim: int = 2

    def __post_init__(self):
        if not (self.tail_index > 0 and math.isfinite(self.tail_index)):
            raise InvariantError("tail_index must be positive and finite")
        if self.dim != 2:
            raise InvariantError("HeavyTailedConjugatedDiagonal is a 2-dimensional construction")


@dataclass(frozen=True)
class GaussianEntries:
    """I.i.d. N(0, entry_std^2) entries, conditioned on numerical invertibility."""

    entry_std: float
    dim: int = 2

    def __post_init__(self):
        if not (self.entry_std > 0 and math.isfinite(self.entry_std)):
            raise InvariantError("entry_std must be positive and finite")
        if self.dim < 2:
            raise InvariantError("dimension must be at least 2")


MeasureSpec = Union[FiniteSupport, ScaledRotation, HeavyTailedConjugatedDiagonal, GaussianEntries]


def _haar_orthogonal(gen: np.random.Generator, count: int, d: int) -> np.ndarray:
    """Batch of Haar-distributed orthogonal matrices (QR with sign fix)."""
    g = gen.standard_normal((count, d, d))
    q, r = np.linalg.qr(g)
    s = np.sign(np.diagonal(r, axis1=1, axis2=2))
    s[s == 0] = 1.0
    return q * s[:, None, :]


def _sample_heavy_parts(spec: HeavyTailedConjugatedDiagonal, gen, count: int):
    """Draw (W, theta, phi) for the conjugated-diagonal family.

    W = (1 - U)^(-1/p) maps U ~ Uniform[0,1) to the exact Pareto tail
    P(W > t) = t^-p for t >= 1, with 1 - U never zero.
    """
    w = (1.0 - gen.random(count)) ** (-1.0 / spec.tail_index)
    if spec.randomize_rotations:
        theta = gen.uniform(0.0, 2.0 * np.pi, count)
        phi = gen.uniform(0.0, 2.0 * np.pi, count)
    else:
        theta = np.zeros(count)
        phi = np.zeros(count)
    return w, theta, phi


def sample_entries(spec: MeasureSpec, gen: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` raw matrices (count, d, d) from the measure.

    Heavy-tailed draws with W above ~709 overflow exp(); this explicit-matrix
    path is meant for inspection and small-sample checks, the walk kernels
    below never materialize entries for that family.
    """
    d = spec.dim
    if isinstance(spec, FiniteSupport):
        cum = np.cumsum(spec.weights)
        idx = np.searchsorted(cum, gen.random(count), side="right").clip(0, len(spec.matrices) - 1)
        stack = np.stack([m.entries for m in spec.matrices])
        return stack[idx]
    if isinstance(spec, ScaledRotation):
        cum = np.cumsum(spec.weights)
        idx = np.searchsorted(cum, gen.random(count), side="right").clip(0, spec.log_scales.size - 1)
        scales = np.exp(spec.log_scales[idx])
        if spec.uniform_rotation:
            rots = _haar_orthogonal(gen, count, d)
        else:
            rots = np.broadcast_to(np.eye(d), (count, d, d)).copy()
        return scales[:, None, None] * rots
    if isinstance(spec, HeavyTailedConjugatedDiagonal):
        w, theta, phi = _sample_heavy_parts(spec, gen, count)
        out = np.empty((count, 2, 2))
        diag = np.zeros((count, 2, 2))
        diag[:, 0, 0] = np.exp(w)
        diag[:, 1, 1] = np.exp(-w)
        ct, st = np.cos(theta), np.sin(theta)
        cp, sp = np.cos(phi), np.sin(phi)
        rt = np.stack([np.stack([ct, -st], -1), np.stack([st, ct], -1)], -2)
        rp = np.stack([np.stack([cp, -sp], -1), np.stack([sp, cp], -1)], -2)
        out = rt @ diag @ rp
        return out
    if isinstance(spec, GaussianEntries):
        a = gen.standard_normal((count, d, d)) * spec.entry_std
        for _ in range(_GAUSSIAN_RESAMPLE_ROUNDS):
            sv = np.linalg.svd(a, compute_uv=False)
            bad = sv[:, -1] < SV_RTOL * sv[:, 0]
            if not bad.any():
                return a
            a[bad] = gen.standard_normal((int(bad.sum()), d, d)) * spec.entry_std
        raise NumericFailure(
            "could not draw a numerically invertible Gaussian matrix",
            iterations=_GAUSSIAN_RESAMPLE_ROUNDS,
        )
    raise DomainError(f"unknown measure spec {type(spec).__name__}")


def sample_matrix(spec: MeasureSpec, rng: Union[RngStream, np.random.Generator]) -> SquareMatrix:
    """One draw from the measure.

    Pure in the stream name: calling twice with the same RngStream returns the
    same matrix.  Raises InvariantError if the draw falls outside the
    SquareMatrix conditioning envelope (possible for the heavy-tailed family,
    whose log N tail is unbounded by design).
    """
    gen = _as_generator(rng)
    return SquareMatrix(sample_entries(spec, gen, 1)[0])


# ---------------------------------------------------------------------------
# cocycle and projective action


def act(m, x: ProjectivePoint) -> ProjectivePoint:
    """Projective action g . x = direction of g v."""
    a = _entries_of(m)
    return ProjectivePoint.from_vector(a @ x.direction)


def cocycle_sigma(m, x: ProjectivePoint) -> float:
    """Norm cocycle sigma(g, x) = log ||g u|| for the unit representative u.

    Satisfies sigma(g g', x) = sigma(g, g'.x) + sigma(g', x) and the bound
    |sigma(g, x)| <= log N(g).
    """
    a = _entries_of(m)
    return float(np.log(np.linalg.norm(a @ x.direction)))


# ---------------------------------------------------------------------------
# batch walk kernels
#
# State is a (B, d) array of unit directions, mutated in place; each step
# yields the (B,) increment vector.  Per family, the draw order within one
# step is part of the reproducibility contract:
#   FiniteSupport:   one uniform per trajectory (atom choice)
#   ScaledRotation:  uniforms for the scale choice, then the rotation draws
#   HeavyTailed:     uniforms for W, then theta, then phi
#   GaussianEntries: (B, d, d) normals, then resample rounds for bad draws


def _step_finite(spec: FiniteSupport, cum, stack, dirs, gen):
    idx = np.searchsorted(cum, gen.random(dirs.shape[0]), side="right")
    idx = idx.clip(0, len(stack) - 1)
    out = np.empty_like(dirs)
    for j in range(len(stack)):
        rows = idx == j
        if rows.any():
            out[rows] = dirs[rows] @ stack[j].T
    nrm = np.linalg.norm(out, axis=1)
    inc = np.log(nrm)
    np.divide(out, nrm[:, None], out=out)
    dirs[...] = out
    return inc


def _step_scaled_rotation(spec: ScaledRotation, cum, dirs, gen):
    b = dirs.shape[0]
    idx = np.searchsorted(cum, gen.random(b), side="right").clip(0, spec.log_scales.size - 1)
    inc = spec.log_scales[idx]
    if spec.uniform_rotation:
        if spec.dim == 2:
            ang = gen.uniform(0.0, 2.0 * np.pi, b)
            c, s = np.cos(ang), np.sin(ang)
            x, y = dirs[:, 0].copy(), dirs[:, 1]
            dirs[:, 0] = c * x - s * y
            dirs[:, 1] = s * x + c * y
        else:
            rots = _haar_orthogonal(gen, b, spec.dim)
            dirs[...] = np.einsum("bij,bj->bi", rots, dirs)
        # rotations keep unit norm; renormalize to stop drift over long walks
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return inc.astype(float, copy=True)


def _step_heavy(spec: HeavyTailedConjugatedDiagonal, dirs, gen):
    b = dirs.shape[0]
    w, theta, phi = _sample_heavy_parts(spec, gen, b)
    cp, sp = np.cos(phi), np.sin(phi)
    v1 = cp * dirs[:, 0] - sp * dirs[:, 1]
    v2 = sp * dirs[:, 0] + cp * dirs[:, 1]
    # log-space evaluation of ||diag(e^W, e^-W) v||: exact for any W
    with np.errstate(divide="ignore"):
        a = w + np.log(np.abs(v1))
        c = -w + np.log(np.abs(v2))
    inc = 0.5 * np.logaddexp(2.0 * a, 2.0 * c)
    u1 = np.sign(v1) * np.exp(a - inc)
    u2 = np.sign(v2) * np.exp(c - inc)
    ct, st = np.cos(theta), np.sin(theta)
    dirs[:, 0] = ct * u1 - st * u2
    dirs[:, 1] = st * u1 + ct * u2
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return inc


def _step_gaussian(spec: GaussianEntries, dirs, gen):
    a = sample_entries(spec, gen, dirs.shape[0])
    out = np.einsum("bij,bj->bi", a, dirs)
    nrm = np.linalg.norm(out, axis=1)
    inc = np.log(nrm)
    dirs[...] = out / nrm[:, None]
    return inc


def iter_batch_increments(spec: MeasureSpec, dirs: np.ndarray, n: int, gen: np.random.Generator):
    """Yield n increment vectors (B,), advancing the (B, d) direction batch in place."""
    if dirs.ndim != 2 or dirs.shape[1] != spec.dim:
        raise DomainError(f"direction batch must have shape (B, {spec.dim})")
    if isinstance(spec, FiniteSupport):
        cum = np.cumsum(spec.weights)
        stack = [m.entries for m in spec.matrices]
        for _ in range(n):
            yield _step_finite(spec, cum, stack, dirs, gen)
    elif isinstance(spec, ScaledRotation):
        cum = np.cumsum(spec.weights)
        for _ in range(n):
            yield _step_scaled_rotation(spec, cum, dirs, gen)
    elif isinstance(spec, HeavyTailedConjugatedDiagonal):
        for _ in range(n):
            yield _step_heavy(spec, dirs, gen)
    elif isinstance(spec, GaussianEntries):
        for _ in range(n):
            yield _step_gaussian(spec, dirs, gen)
    else:
        raise DomainError(f"unknown measure spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# single-trajectory walk


@dataclass(frozen=True, eq=False)
class WalkPath:
    """One trajectory: increments X_k = sigma(Y_k, A_{k-1} x0) and visited states.

    directions[k] is the canonical representative of A_{k+1} x0; partial sums
    of increments equal log ||A_k v0|| for the unit start vector.
    """

    x0: ProjectivePoint
    increments: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        dirs = np.asarray(self.directions, dtype=float)
        if inc.ndim != 1 or dirs.shape != (inc.shape[0], self.x0.dim):
            raise InvariantError("increments and directions must have shapes (n,) and (n, d)")
        inc.setflags(write=False)
        dirs.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "directions", dirs)

    @property
    def n(self) -> int:
        return self.increments.shape[0]

    def log_norms(self) -> np.ndarray:
        """log ||A_k x0|| for k = 1..n."""
        return np.cumsum(self.increments)


def _canonicalize_rows(dirs: np.ndarray) -> np.ndarray:
    """Canonical sign per row; norms are assumed already unit."""
    out = dirs.copy()
    idx = np.argmax(np.abs(out) > CANONICAL_EPS, axis=1)
    lead = out[np.arange(out.shape[0]), idx]
    out[lead < 0] *= -1.0
    return out


def run_walk(
    spec: MeasureSpec,
    x0: ProjectivePoint,
    n: int,
    rng: Union[RngStream, np.random.Generator],
    increment_fn: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
) -> WalkPath:
    """Simulate one trajectory of length n starting at x0.

    Args:
        spec: measure of the i.i.d. factors.
        x0: starting projective point; must match spec.dim.
        n: number of steps, >= 0.
        rng: stream name (reproducible) or an already-advanced Generator.
        increment_fn: optional custom cocycle evaluation (entries, direction)
            -> value recorded instead of the norm increment; the projective
            state still advances under the matrix action.

    Returns:
        WalkPath with n increments and the n visited canonical directions.
    """
    if x0.dim != spec.dim:
        raise DomainError(f"x0 has dimension {x0.dim}, measure has {spec.dim}")
    if n < 0:
        raise DomainError("n must be non-negative")
    gen = _as_generator(rng)
    dirs = x0.direction[None, :].copy()
    increments = np.empty(n)
    visited = np.empty((n, spec.dim))
    if increment_fn is None:
        for k, inc in enumerate(iter_batch_increments(spec, dirs, n, gen)):
            increments[k] = inc[0]
            visited[k] = dirs[0]
    else:
        cur = x0.direction.copy()
        for k in range(n):
            a = sample_entries(spec, gen, 1)[0]
            increments[k] = float(increment_fn(a, cur))
            y = a @ cur
            cur = y / np.linalg.norm(y)
            visited[k] = cur
    return WalkPath(x0=x0, increments=increments, directions=_canonicalize_rows(visited))


# ---------------------------------------------------------------------------
# deterministic direction grids


def direction_grid(dim: int, size: int) -> np.ndarray:
    """(size, dim) array of quasi-uniform canonical directions.

    d = 2: equispaced projective angles k pi / size.  d >= 3: a fixed
    seed-derived Gaussian cloud, which is deterministic across runs.
    """
    if size < 1:
        raise DomainError("grid size must be positive")
    if dim == 2:
        ang = np.pi * np.arange(size) / size
        return _canonicalize_rows(np.stack([np.cos(ang), np.sin(ang)], axis=1))
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(0x67726964, spawn_key=(dim,))))
    v = gen.standard_normal((size, dim))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return _canonicalize_rows(v)
