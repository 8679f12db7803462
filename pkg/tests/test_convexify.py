import numpy as np
import pytest

from eann.convexify import (
    convexify,
    estimate_min_on_ball,
    fast_min_estimates,
    normalize,
)
from eann.distances import (
    generalized_kl_spec,
    make_bregman,
    make_mahalanobis,
    make_minkowski,
)
from eann.geom import EuclideanBall

from conftest import separated_family

BALL = EuclideanBall(np.zeros(2), 1.0)


def test_estimate_min_l2():
    # Geometry from the worked example; the closed form is exact.
    f = make_minkowski([4.0, 0.0], 2.0, tau=1.0)
    est = estimate_min_on_ball(f, BALL, check_separation=False)
    assert est.value == pytest.approx(3.0, abs=0.01)
    assert f.value(est.argmin) >= est.value - 1e-15
    # Compliant separation passes the precondition outright.
    f6 = make_minkowski([7.0, 0.0], 2.0, tau=1.0)
    assert estimate_min_on_ball(f6, BALL).value == pytest.approx(6.0, abs=1e-12)


def test_estimate_min_separation_gate():
    f = make_minkowski([4.0, 0.0], 2.0, tau=1.0)
    with pytest.raises(ValueError, match="insufficient separation"):
        estimate_min_on_ball(f, BALL)


def test_estimate_min_mahalanobis():
    f = make_mahalanobis([4.0, 0.0], np.diag([4.0, 1.0]))
    est = estimate_min_on_ball(f, BALL, check_separation=False)
    assert est.value == pytest.approx(6.0, abs=0.06)
    assert f.value(est.argmin) == pytest.approx(est.value)


def test_estimate_min_generic_kinds(rng):
    """Descent matches a dense boundary scan for non-closed-form gauges."""
    for k in (1.5, 2.5, 3.0):
        f = make_minkowski([4.0, 1.0], k)
        est = estimate_min_on_ball(f, BALL, check_separation=False)
        theta = np.linspace(0.0, 2.0 * np.pi, 400001)
        boundary = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        brute = float(np.min(f.value(boundary)))
        assert est.value <= brute + 1e-9
        assert est.value >= brute - 1e-7


def test_estimate_min_bregman():
    spec = generalized_kl_spec(2, 0.01, 10.0)
    f = make_bregman(spec, [8.0, 8.0])
    ball = EuclideanBall(np.array([1.0, 1.0]), 0.05)
    est = estimate_min_on_ball(f, ball, check_separation=False)
    grid = np.linspace(0, 2 * np.pi, 200001)
    pts = ball.center[None, :] + 0.05 * np.stack([np.cos(grid), np.sin(grid)], axis=1)
    brute = float(np.min(f.value(pts)))
    assert est.value == pytest.approx(brute, rel=1e-6)


def test_fast_estimates_match_exact(rng):
    fns, ball = separated_family(rng, 2, 8)
    fast = fast_min_estimates(fns, ball)
    for i, f in enumerate(fns):
        slow = estimate_min_on_ball(f, ball, check_separation=False).value
        assert fast[i] >= slow - 1e-12
        assert fast[i] <= slow * (1.0 + 2e-3)


def test_normalize_single_family_example():
    f = make_minkowski([4.0, 0.0], 2.0, tau=1.0)
    nf = normalize([f], BALL, check_separation=False)
    assert nf.scale_h == pytest.approx(15.0)
    assert nf.values_matrix(np.zeros((1, 2)))[0, 0] == pytest.approx(4.0 / 15.0)
    assert nf.pruned_indices == []


def test_normalize_prunes_far_member():
    f_near = make_minkowski([4.0, 0.0], 2.0, tau=1.0)
    f_far = make_minkowski([40.0, 0.0], 2.0, tau=1.0)
    nf = normalize([f_near, f_far], BALL, check_separation=False)
    assert nf.kept_indices == [0]
    assert nf.pruned_indices == [1]
    # The pruned member's estimated minimum exceeds twice the family minimum.
    assert nf.pruned_estimates[0] > 2.0 * nf.f1_min


def test_normalize_reports_offender():
    f_ok = make_minkowski([7.0, 0.0], 2.0, tau=1.0)
    f_close = make_minkowski([2.0, 0.0], 2.0, tau=1.0)
    with pytest.raises(ValueError, match="site 1"):
        normalize([f_ok, f_close], BALL)
    with pytest.raises(ValueError, match="empty family"):
        normalize([], BALL)


def test_normalized_bounds_sampled(rng):
    for trial in range(12):
        d = int(rng.integers(2, 4))
        fns, ball = separated_family(rng, d, int(rng.integers(2, 7)))
        nf = normalize(fns, ball)
        u = rng.standard_normal((4000, d))
        u /= np.linalg.norm(u, axis=1)[:, None]
        U = u * (rng.random(4000) ** (1.0 / d))[:, None]
        vals = nf.values_matrix(U)
        assert vals.min() >= 0.2 - 1e-9
        assert vals.max() <= 0.8 + 1e-9


def test_convexify_offset_values():
    f = make_minkowski([7.0, 0.0], 2.0, tau=1.0)
    cf = convexify(normalize([f], BALL))
    assert cf.offset(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.0)
    assert cf.offset(np.zeros((1, 2)))[0] == pytest.approx(1.0 / 8.0)


def test_convexify_preserves_argmin(rng):
    fns, ball = separated_family(rng, 2, 6)
    nf = normalize(fns, ball)
    cf = convexify(nf)
    U = rng.standard_normal((100, 2))
    U /= np.maximum(1.0, np.linalg.norm(U, axis=1))[:, None]
    g = nf.values_matrix(U)
    ghat = cf.values_matrix(U)
    assert np.array_equal(np.argmin(g, axis=1), np.argmin(ghat, axis=1))
    # The offset is common: pairwise gaps match exactly.
    gaps = g[:, :, None] - g[:, None, :]
    gaps_hat = ghat[:, :, None] - ghat[:, None, :]
    assert np.allclose(gaps, gaps_hat, atol=1e-12)


def test_convexified_invariants(rng):
    for trial in range(8):
        d = int(rng.integers(2, 4))
        fns, ball = separated_family(rng, d, int(rng.integers(2, 6)))
        cf = convexify(normalize(fns, ball))
        rep = cf.check_invariants(4000, seed=trial)
        assert rep["g_min"] >= 0.2 - 1e-9
        assert rep["g_max"] <= 0.8 + 1e-9
        assert rep["grad_max"] <= 0.25 + 1e-9
        assert rep["hess_max"] <= 1.0 / 16.0 + 1e-9
        assert rep["conc_eig_max"] <= 1e-8
        assert rep["conc_eig_min"] >= -5.0 / 16.0 - 1e-6
        assert rep["ghat_min"] >= 0.2 - 1e-9
        assert rep["ghat_max"] <= 1.0 + 1e-9


def test_error_transfer_budget(rng):
    """An absolute gap on the offset family maps to at most five times the
    relative gap on the original values."""
    fns, ball = separated_family(rng, 2, 5)
    nf = normalize(fns, ball)
    cf = convexify(nf)
    U = rng.standard_normal((2000, 2))
    U /= np.maximum(1.0, np.linalg.norm(U, axis=1))[:, None]
    g_min = nf.values_matrix(U).min(axis=1)
    eps_abs = 0.02
    # Relative error when the returned offset value overshoots by eps_abs.
    rel = eps_abs / g_min
    assert np.all(rel <= 5.0 * eps_abs / 0.2 + 1e-12)
    assert np.all(g_min >= 0.2 - 1e-9)
