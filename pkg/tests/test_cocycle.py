"""Tests for cocycle registration and the ergodic estimators.

Exact oracles: ScaledRotation with a single scale c has every increment
identically log c, so lambda = log c and V = 0 with no Monte Carlo error;
with scales +-log 2 the increments are i.i.d. symmetric coin flips, so
lambda = 0 and V = (log 2)^2 in closed form.
"""

import math

import numpy as np
import pytest
from scipy import stats

from gllab import (
    DomainError,
    FiniteSupport,
    InvariantError,
    ProjectivePoint,
    RngStream,
    ScaledRotation,
    SquareMatrix,
    projective_angle,
    rotation_matrix,
)
from gllab.cocycle import (
    GordinReport,
    estimate_lambda,
    estimate_variance,
    gordin_check,
    log_norm_cocycle,
    make_cocycle,
    occupation_measure,
    sigma_star,
)

LOG2 = math.log(2.0)
PM_LOG2 = ScaledRotation(log_scales=[LOG2, -LOG2], weights=[0.5, 0.5])
PURE_DOUBLING = ScaledRotation(log_scales=[LOG2], weights=[1.0])


def log_norm_fn(a, u):
    return float(np.log(np.linalg.norm(a @ u)))


def contracting_family():
    """Two matrices with distinct axes; strongly contracting on directions."""
    r = rotation_matrix(0.7)
    m1 = SquareMatrix(r @ np.diag([4.0, 0.25]) @ r.T)
    m2 = SquareMatrix(np.diag([3.0, 1.0 / 3.0]))
    return FiniteSupport(matrices=[m1, m2], weights=[0.5, 0.5])


# ---------------------------------------------------------------------------
# registration


def test_log_norm_registers_in_dims_2_and_3():
    for d in (2, 3):
        c = log_norm_cocycle(d)
        assert c.dim == d
        assert c.is_log_norm


def test_scalar_multiples_are_cocycles():
    c = make_cocycle(lambda a, u: 2.0 * log_norm_fn(a, u), "double-log-norm", 2)
    assert not c.is_log_norm


def test_non_cocycle_is_rejected():
    with pytest.raises(InvariantError, match="cocycle identity"):
        make_cocycle(lambda a, u: float(np.trace(a)), "trace", 2)
    with pytest.raises(InvariantError):
        # additive perturbation that does not telescope
        make_cocycle(lambda a, u: log_norm_fn(a, u) + 0.01 * u[0] ** 2, "perturbed", 2)


def test_registration_rejects_dim_one():
    with pytest.raises(DomainError):
        make_cocycle(log_norm_fn, "log-norm", 1)


def test_evaluate_accepts_wrapped_and_raw_arguments():
    c = log_norm_cocycle(2)
    m = SquareMatrix(np.diag([2.0, 0.5]))
    x = ProjectivePoint.from_angle(0.0)
    v1 = c.evaluate(m, x)
    v2 = c.evaluate(m.entries, x.direction)
    assert v1 == v2 == pytest.approx(LOG2, abs=1e-15)


# ---------------------------------------------------------------------------
# Lyapunov exponent


def test_lambda_exact_for_pure_doubling():
    est = estimate_lambda(PURE_DOUBLING, log_norm_cocycle(2), n=64, reps=16, x_grid=3,
                          rng=RngStream(7))
    assert abs(est.lambda_hat - LOG2) <= 1e-12
    assert est.std_error <= 1e-12
    assert (est.n, est.reps, est.x_grid_size) == (64, 16, 3)


def test_lambda_symmetric_scales_centered():
    est = estimate_lambda(PM_LOG2, log_norm_cocycle(2), n=400, reps=2000, x_grid=2,
                          rng=RngStream(11))
    assert est.std_error > 0
    assert abs(est.lambda_hat) <= 4.0 * est.std_error + 1e-12


def test_lambda_custom_cocycle_path():
    c = make_cocycle(lambda a, u: 2.0 * log_norm_fn(a, u), "double-log-norm", 2)
    est = estimate_lambda(PURE_DOUBLING, c, n=16, reps=8, x_grid=2, rng=RngStream(3))
    assert abs(est.lambda_hat - 2.0 * LOG2) <= 1e-12


def test_lambda_deterministic_and_thread_invariant():
    # reps spans multiple fixed-size blocks, so ordering is exercised
    kw = dict(n=8, reps=40_000, x_grid=1)
    a = estimate_lambda(PM_LOG2, log_norm_cocycle(2), rng=RngStream(5), threads=1, **kw)
    b = estimate_lambda(PM_LOG2, log_norm_cocycle(2), rng=RngStream(5), threads=3, **kw)
    assert a.lambda_hat == b.lambda_hat
    assert a.std_error == b.std_error


def test_lambda_input_validation():
    c = log_norm_cocycle(2)
    with pytest.raises(DomainError):
        estimate_lambda(PM_LOG2, c, n=0, reps=1, x_grid=1, rng=RngStream(1))
    with pytest.raises(DomainError):
        estimate_lambda(PM_LOG2, log_norm_cocycle(3), n=4, reps=1, x_grid=1, rng=RngStream(1))


# ---------------------------------------------------------------------------
# asymptotic variance


def test_variance_exact_zero_for_pure_doubling():
    est = estimate_variance(PURE_DOUBLING, log_norm_cocycle(2), lam=LOG2, n=256, reps=64,
                            rng=RngStream(21))
    assert est.v_hat <= 1e-24
    assert est.x_agreement


def test_variance_symmetric_scales_matches_closed_form():
    est = estimate_variance(PM_LOG2, log_norm_cocycle(2), lam=0.0, n=256, reps=4000,
                            rng=RngStream(23))
    assert est.std_error > 0
    assert abs(est.v_hat - LOG2**2) <= 4.0 * est.std_error
    assert est.x_agreement


def test_variance_requires_log_norm_and_sane_sizes():
    c = make_cocycle(lambda a, u: 2.0 * log_norm_fn(a, u), "double-log-norm", 2)
    with pytest.raises(DomainError):
        estimate_variance(PM_LOG2, c, lam=0.0, n=16, reps=8, rng=RngStream(1))
    with pytest.raises(DomainError):
        estimate_variance(PM_LOG2, log_norm_cocycle(2), lam=0.0, n=16, reps=1, rng=RngStream(1))


# ---------------------------------------------------------------------------
# occupation measure


def test_occupation_pure_rotation_is_uniform_on_angles():
    spec = ScaledRotation(log_scales=[0.0], weights=[1.0])
    occ = occupation_measure(spec, ProjectivePoint.from_angle(0.3), burn_in=100, n=20_000,
                             rng=RngStream(31))
    assert occ.directions.shape == (20_000, 2)
    assert np.allclose(np.linalg.norm(occ.directions, axis=1), 1.0, atol=1e-12)
    assert occ.weights.sum() == pytest.approx(1.0)
    u = projective_angle(occ.directions) / np.pi
    assert stats.kstest(u, "uniform").statistic < 0.015


def test_occupation_start_independence_for_contracting_family():
    spec = contracting_family()
    bins = np.linspace(0.0, np.pi, 17)
    hists = []
    for seed_x, ang in ((41, 0.1), (43, 1.4)):
        occ = occupation_measure(spec, ProjectivePoint.from_angle(ang), burn_in=200, n=40_000,
                                 rng=RngStream(seed_x))
        h, _ = np.histogram(projective_angle(occ.directions), bins=bins)
        hists.append(h / h.sum())
    tv = 0.5 * np.abs(hists[0] - hists[1]).sum()
    assert tv < 0.08


def test_occupation_validation():
    with pytest.raises(DomainError):
        occupation_measure(PM_LOG2, ProjectivePoint.from_angle(0.0), burn_in=-1, n=10,
                           rng=RngStream(1))
    with pytest.raises(DomainError):
        occupation_measure(PM_LOG2, ProjectivePoint.from_angle(0.0), burn_in=0, n=0,
                           rng=RngStream(1))


# ---------------------------------------------------------------------------
# Gordin diagnostic


def test_gordin_pure_doubling_is_flat_zero():
    rep = gordin_check(PURE_DOUBLING, log_norm_cocycle(2), lam=LOG2, n_max=16, reps=50,
                       x_grid=3, rng=RngStream(51))
    assert isinstance(rep, GordinReport)
    assert rep.a_n.shape == (17,)
    assert np.all(rep.a_n <= 1e-12)
    assert rep.trend_verdict == "summable-looking"
    np.testing.assert_allclose(rep.partial_sums, np.cumsum(rep.a_n))


def test_gordin_contracting_family_decays_to_noise():
    spec = contracting_family()
    lam = estimate_lambda(spec, log_norm_cocycle(2), n=2000, reps=400, x_grid=2,
                          rng=RngStream(53)).lambda_hat
    rep = gordin_check(spec, log_norm_cocycle(2), lam=lam, n_max=24, reps=4000, x_grid=4,
                       rng=RngStream(55))
    assert rep.trend_verdict == "summable-looking"
    # early terms carry the x-dependence, late terms sit at the noise floor
    assert rep.a_n[0] > 10.0 * rep.a_n[20:].mean()


def test_gordin_wrong_centering_reads_as_diverging():
    rep = gordin_check(PM_LOG2, log_norm_cocycle(2), lam=0.5, n_max=16, reps=2000,
                       x_grid=2, rng=RngStream(57))
    assert rep.trend_verdict == "diverging"
    assert np.all(rep.a_n > 0.4)


def test_gordin_validation():
    c = log_norm_cocycle(2)
    with pytest.raises(DomainError):
        gordin_check(PM_LOG2, c, lam=0.0, n_max=-1, reps=10, x_grid=1, rng=RngStream(1))
    with pytest.raises(DomainError):
        gordin_check(PM_LOG2, c, lam=0.0, n_max=4, reps=10, x_grid=0, rng=RngStream(1))


# ---------------------------------------------------------------------------
# sup over directions


def test_sigma_star_log_norm_closed_form():
    m = SquareMatrix(np.diag([3.0, 0.5]))
    val = sigma_star(log_norm_cocycle(2), m, grid_size=512)
    assert val == pytest.approx(math.log(3.0), abs=1e-15)


def test_sigma_star_inverse_dominates():
    # N(g) is driven by the inverse norm when the matrix contracts strongly
    m = SquareMatrix(np.diag([2.0, 0.1]))
    val = sigma_star(log_norm_cocycle(2), m)
    assert val == pytest.approx(math.log(10.0), abs=1e-12)


def test_sigma_star_custom_cocycle_uses_grid():
    c = make_cocycle(lambda a, u: 2.0 * log_norm_fn(a, u), "double-log-norm", 2)
    m = SquareMatrix(np.diag([3.0, 0.5]))
    # the axis direction is on the grid, so the sup is attained exactly
    assert sigma_star(c, m, grid_size=512) == pytest.approx(2.0 * math.log(3.0), abs=1e-12)


def test_sigma_star_validation():
    with pytest.raises(DomainError):
        sigma_star(log_norm_cocycle(2), np.diag([2.0, 1.0]), grid_size=0)
