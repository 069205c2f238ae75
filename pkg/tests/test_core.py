"""Tests for the semantic Gaussian primitive and its derivatives."""

import numpy as np
import pytest

from gaussvox import (
    DegenerateRotationError,
    InvalidScaleError,
    SemanticGaussian,
    activate,
    covariance,
    evaluate,
    evaluate_weight,
    evaluate_weight_grad,
    gaussian_weight,
    quat_to_rotation,
    reference_points,
)

SQ2 = np.sqrt(2.0) / 2.0


def random_gaussian(rng, class_count=3):
    return SemanticGaussian(
        mean=rng.normal(0.0, 2.0, 3),
        scale=0.1 + rng.random(3) * 1.5,
        rotation=rng.normal(size=4),
        logits=rng.normal(size=class_count),
    )


def test_identity_quaternion():
    assert np.allclose(quat_to_rotation([1, 0, 0, 0]), np.eye(3))


def test_quaternion_90deg_about_z():
    r = quat_to_rotation([SQ2, 0, 0, SQ2])
    assert np.allclose(r @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])


def test_quaternion_normalized_internally():
    assert np.allclose(quat_to_rotation([2, 0, 0, 0]), np.eye(3))


def test_quaternion_near_zero_rejected():
    with pytest.raises(DegenerateRotationError):
        quat_to_rotation([0, 0, 0, 1e-13])


def test_rotation_matrix_orthonormal():
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = rng.normal(size=4)
        r = quat_to_rotation(q)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_covariance_identity_rotation():
    cov = covariance([1, 2, 3], [1, 0, 0, 0])
    assert np.allclose(cov.matrix, np.diag([1.0, 4.0, 9.0]))


def test_covariance_rotated():
    # 90 degrees about z swaps the x and y variances.
    cov = covariance([1, 2, 1], [SQ2, 0, 0, SQ2])
    assert np.allclose(cov.matrix, np.diag([4.0, 1.0, 1.0]), atol=1e-12)


def test_covariance_isotropic_rotation_invariant():
    rng = np.random.default_rng(4)
    for _ in range(20):
        q = rng.normal(size=4)
        cov = covariance([0.7, 0.7, 0.7], q)
        assert np.allclose(cov.matrix, 0.49 * np.eye(3), atol=1e-9)


def test_covariance_sign_flip_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        q = rng.normal(size=4)
        s = 0.1 + rng.random(3)
        a = covariance(s, q).matrix
        b = covariance(s, -q).matrix
        assert np.allclose(a, b, atol=1e-9)


def test_covariance_spd():
    rng = np.random.default_rng(6)
    for _ in range(20):
        cov = covariance(0.1 + rng.random(3), rng.normal(size=4)).matrix
        assert np.allclose(cov, cov.T, atol=1e-9)
        assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_nonpositive_scale_rejected():
    with pytest.raises(InvalidScaleError):
        covariance([1, 0, 1], [1, 0, 0, 0])
    with pytest.raises(InvalidScaleError):
        SemanticGaussian([0, 0, 0], [1, -1, 1], [1, 0, 0, 0], [1.0])


def test_evaluate_at_mean_returns_logits():
    g = SemanticGaussian([1, 2, 3], [0.5, 0.5, 0.5], [1, 0, 0, 0], [0.2, 0.7, 0.1])
    out = evaluate(g, [1, 2, 3])
    assert np.allclose(out, [0.2, 0.7, 0.1], atol=1e-7)


def test_evaluate_unit_offset():
    g = SemanticGaussian([0, 0, 0], [1, 1, 1], [1, 0, 0, 0], [1.0, 0.0])
    out = evaluate(g, [1, 0, 0])
    assert out[0] == pytest.approx(np.exp(-0.5), rel=1e-7)
    assert out[1] == 0.0


def test_weight_at_six_sigma_negligible():
    g = SemanticGaussian([0, 0, 0], [1, 1, 1], [1, 0, 0, 0], [1.0])
    w = evaluate_weight(g, [6, 0, 0])
    assert w == pytest.approx(np.exp(-18.0), rel=1e-9)
    assert w < 1.6e-8


def test_weight_range_and_peak():
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = random_gaussian(rng)
        # stay within a few standard deviations so exp cannot underflow
        p = g.mean.astype(np.float64) + rng.normal(0.0, 2.0, 3) * g.scale
        w = evaluate_weight(g, p)
        assert 0.0 < w <= 1.0
        assert evaluate_weight(g, g.mean) == pytest.approx(1.0)


def test_evaluate_rotation_consistent():
    # Rotating both the gaussian and the query point must not change the weight.
    rng = np.random.default_rng(8)
    for _ in range(30):
        mean = rng.normal(size=3)
        scale = 0.2 + rng.random(3)
        point = rng.normal(0.0, 2.0, 3)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        extra = rng.normal(size=4)
        extra /= np.linalg.norm(extra)
        r_extra = quat_to_rotation(extra)
        # quaternion product extra * q rotates by r_extra after q
        w0, x0, y0, z0 = extra
        w1, x1, y1, z1 = q
        combined = [
            w0 * w1 - x0 * x1 - y0 * y1 - z0 * z1,
            w0 * x1 + x0 * w1 + y0 * z1 - z0 * y1,
            w0 * y1 - x0 * z1 + y0 * w1 + z0 * x1,
            w0 * z1 + x0 * y1 - y0 * x1 + z0 * w1,
        ]
        a = gaussian_weight(mean, scale, q, point)
        b = gaussian_weight(r_extra @ mean, scale, combined, r_extra @ point)
        assert b == pytest.approx(a, abs=1e-9)


def test_weight_grad_zero_at_mean():
    g = SemanticGaussian([1, -1, 2], [0.3, 0.6, 0.9], [0.5, 0.5, 0.5, 0.5], [1.0])
    w, d_mean, d_scale, d_quat = evaluate_weight_grad(g, g.mean)
    assert w == pytest.approx(1.0)
    assert np.allclose(d_mean, 0.0)
    assert np.allclose(d_scale, 0.0)
    assert np.allclose(d_quat, 0.0)


def test_weight_grad_isotropic_mean_direction():
    # For an isotropic gaussian the mean gradient is w * (p - m) / sigma^2.
    sigma = 0.8
    g = SemanticGaussian([0, 0, 0], [sigma] * 3, [1, 0, 0, 0], [1.0])
    p = np.array([0.3, -0.2, 0.5])
    w, d_mean, _, _ = evaluate_weight_grad(g, p)
    assert np.allclose(d_mean, w * p / sigma**2, atol=1e-9)


def _project_tangent(vec, q):
    return vec - np.dot(vec, q) * q


def test_weight_grad_matches_finite_differences():
    # Central differences against the float64 weight evaluation; base
    # parameters are rounded to float32 first so both sides see the exact
    # stored values.
    rng = np.random.default_rng(42)
    h = 1e-4
    worst = 0.0
    for _ in range(1000):
        # scales from 0.2 keep the h^2 truncation error of the quotient well
        # below the acceptance threshold
        g = SemanticGaussian(
            mean=rng.normal(0.0, 2.0, 3),
            scale=0.2 + rng.random(3) * 1.3,
            rotation=rng.normal(size=4),
            logits=rng.normal(size=3),
        )
        point = g.mean.astype(np.float64) + rng.normal(0.0, 1.0, 3) * g.scale
        m = g.mean.astype(np.float64)
        s = g.scale.astype(np.float64)
        q = g.rotation.astype(np.float64)
        w, d_mean, d_scale, d_quat = evaluate_weight_grad(g, point)

        analytic = np.concatenate([d_mean, d_scale, d_quat])
        fd = np.zeros(10)
        for i in range(3):
            mp, mm = m.copy(), m.copy()
            mp[i] += h
            mm[i] -= h
            fd[i] = (
                gaussian_weight(mp, s, q, point) - gaussian_weight(mm, s, q, point)
            ) / (2 * h)
        for i in range(3):
            sp, sm = s.copy(), s.copy()
            sp[i] += h
            sm[i] -= h
            fd[3 + i] = (
                gaussian_weight(m, sp, q, point) - gaussian_weight(m, sm, q, point)
            ) / (2 * h)
        for i in range(4):
            qp, qm = q.copy(), q.copy()
            qp[i] += h
            qm[i] -= h
            fd[6 + i] = (
                gaussian_weight(m, s, qp, point) - gaussian_weight(m, s, qm, point)
            ) / (2 * h)
        # gaussian_weight normalizes the quaternion, so its finite differences
        # live in the tangent space already; project to compare like for like.
        fd[6:] = _project_tangent(fd[6:], q)

        scale_ref = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-8)
        rel = np.abs(analytic - fd).max() / scale_ref
        worst = max(worst, rel)
    assert worst < 1e-4, f"worst relative error {worst:.3e}"


def test_reference_points_count_zero():
    g = SemanticGaussian([3, 4, 5], [1, 1, 1], [1, 0, 0, 0], [1.0])
    pts = reference_points(g, 0)
    assert pts.shape == (1, 3)
    assert np.allclose(pts[0], [3, 4, 5])


def test_reference_points_axis_aligned():
    g = SemanticGaussian([0, 0, 0], [1, 2, 3], [1, 0, 0, 0], [1.0])
    pts = reference_points(g, 1)
    expected = {
        (0, 0, 0),
        (1, 0, 0), (-1, 0, 0),
        (0, 2, 0), (0, -2, 0),
        (0, 0, 3), (0, 0, -3),
    }
    got = {tuple(np.round(p, 9)) for p in pts}
    assert got == expected


def test_reference_points_mahalanobis_steps():
    rng = np.random.default_rng(9)
    for _ in range(10):
        g = random_gaussian(rng)
        k = int(rng.integers(1, 4))
        pts = reference_points(g, k)
        assert pts.shape == (1 + 6 * k, 3)
        for p in pts:
            d2 = -2.0 * np.log(max(evaluate_weight(g, p), 1e-300))
            d = np.sqrt(max(d2, 0.0))
            assert min(abs(d - j) for j in range(k + 1)) < 1e-6


def test_activate_midpoint():
    scale, sem = activate(np.zeros(3), np.zeros(4), s_min=0.01, s_max=0.3)
    assert np.allclose(scale, 0.155)
    assert np.allclose(sem, 0.25)


def test_activate_saturation_and_range():
    scale, _ = activate(np.array([50.0, -50.0, 0.0]), np.zeros(2), 0.01, 0.3)
    assert scale[0] == pytest.approx(0.3, abs=1e-9)
    assert scale[1] == pytest.approx(0.01, abs=1e-9)
    rng = np.random.default_rng(10)
    for _ in range(50):
        s, sem = activate(rng.normal(0, 5, 3), rng.normal(0, 5, 6), 0.01, 0.3)
        assert np.all((s > 0.01) & (s < 0.3))
        assert sem.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(sem > 0)


def test_activate_rejects_bad_bounds():
    with pytest.raises(ValueError):
        activate(np.zeros(3), np.zeros(2), s_min=0.3, s_max=0.1)
