"""Reduction, projection, refinement, and pipeline unit tests.

Oracles: generalized least squares via explicit Cholesky whitening and
lstsq, exhaustive grid search for the 2-D box projection, independent KKT
residual evaluation, and dense reassembly of the structured (per-pixel)
solver's operators.
"""

import numpy as np
import pytest
import scipy.sparse as sp

import pamux as px
from pamux import (
    ConvergenceError,
    DegenerateModelError,
    EstimabilityError,
    ParameterError,
    ReductionConfig,
    SensorModel,
)

CFG = ReductionConfig()


def _random_pd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return a @ a.T + scale * np.eye(n)


def _gls_oracle(xi, a, sigma, u):
    """Whiten with a Cholesky factor, then ordinary least squares."""
    low = np.linalg.cholesky(sigma)
    aw = np.linalg.solve(low, a)
    xw = np.linalg.solve(low, xi)
    ghat, *_ = np.linalg.lstsq(aw, xw, rcond=None)
    return u * ghat, u * u * np.linalg.inv(aw.T @ aw)


# ---------------------------------------------------------------------------
# linear reduction


def test_linear_reduction_matches_gls_oracle(rng):
    for _ in range(20):
        m, n = 48, 16
        a = rng.standard_normal((m, n))
        sigma = _random_pd(rng, m, 0.5)
        xi = rng.standard_normal(m)
        u = 0.7
        got, got_cov, got_h = px.linear_reduction(xi, a, sigma, u, CFG)
        want, want_cov = _gls_oracle(xi, a, sigma, u)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(got_cov, want_cov, rtol=1e-7, atol=1e-9)
        assert abs(got_h - np.trace(want_cov)) < 1e-8 * abs(np.trace(want_cov))


def test_linear_reduction_unbiased_monte_carlo(rng):
    m, n = 48, 16
    a = rng.standard_normal((m, n))
    sigma = _random_pd(rng, m, 0.5)
    g = rng.uniform(0, 1, n)
    u = 1.0
    low = np.linalg.cholesky(sigma)
    draws = 10_000
    noise = rng.standard_normal((draws, m)) @ low.T
    # apply the estimator as a fixed linear map (columns of R*)
    rstar = np.column_stack(
        [px.linear_reduction(e, a, sigma, u, CFG)[0] for e in np.eye(m)]
    )
    estimates = (a @ g + noise) @ rstar.T
    _, cov, _ = px.linear_reduction(np.zeros(m), a, sigma, u, CFG)
    se = np.sqrt(np.diag(cov) / draws)
    assert np.all(np.abs(estimates.mean(axis=0) - u * g) <= 4.0 * se)
    emp = np.cov(estimates.T)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


def test_linear_reduction_diagonal_and_matrix_ideal(rng):
    m, n = 30, 10
    a = rng.standard_normal((m, n))
    sigma = _random_pd(rng, m)
    xi = rng.standard_normal(m)
    base, base_cov, _ = px.linear_reduction(xi, a, sigma, 1.0, CFG)
    udiag = rng.uniform(0.5, 2.0, n)
    got, got_cov, _ = px.linear_reduction(xi, a, sigma, udiag, CFG)
    np.testing.assert_allclose(got, udiag * base, rtol=1e-10)
    np.testing.assert_allclose(got_cov, base_cov * np.outer(udiag, udiag),
                               rtol=1e-8)
    umat = rng.standard_normal((4, n))
    got_m, got_m_cov, _ = px.linear_reduction(xi, a, sigma, umat, CFG)
    np.testing.assert_allclose(got_m, umat @ base, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(got_m_cov, umat @ base_cov @ umat.T,
                               rtol=1e-7, atol=1e-12)


def test_linear_reduction_singular_noise_regularized(rng):
    a = rng.standard_normal((6, 3))
    sigma = np.zeros((6, 6))
    sigma[:3, :3] = _random_pd(rng, 3)  # rank deficient
    xi = rng.standard_normal(6)
    est, _, _ = px.linear_reduction(xi, a, sigma, 1.0, CFG)
    assert np.all(np.isfinite(est))
    with pytest.raises(DegenerateModelError):
        px.linear_reduction(xi, np.zeros((6, 3)), np.eye(6), 1.0, CFG)
    with pytest.raises(DegenerateModelError):
        px.linear_reduction(xi, a, np.zeros((6, 6)), 1.0, CFG)


# ---------------------------------------------------------------------------
# estimability


def test_estimability_full_rank_tall(rng):
    a = rng.standard_normal((80, 20))
    res = px.estimability_check(a, 1.0, CFG)
    assert res.ok and res.residual < 1e-8


def test_estimability_wide_matches_projector_oracle(rng):
    a = rng.standard_normal((10, 20))
    u = 0.25
    res = px.estimability_check(a, u, CFG)
    _, _, vt = np.linalg.svd(a, full_matrices=True)
    proj = vt[:10].T @ vt[:10]
    want = np.linalg.norm(u * (np.eye(20) - proj), "fro")
    assert not res.ok
    assert abs(res.residual - want) < 1e-10


def test_estimability_certificate_agrees_with_dense(geom, crystal):
    obj = px.builtin_phantom("constant", (16, 16), photons_per_pixel=10.0)
    model = px.build_measurement_model(obj, geom, crystal)
    sparse_res = px.estimability_check(model.forward, 0.1, CFG)  # certificate
    dense_res = px.estimability_check(model.forward.toarray(), 0.1, CFG)
    assert sparse_res.ok and dense_res.ok
    assert sparse_res.residual <= 1e-8 and dense_res.residual <= 1e-8


def test_estimability_matrix_ideal_in_row_space(rng):
    a = rng.standard_normal((5, 12))
    u_good = rng.standard_normal((3, 5)) @ a  # rows inside row space of A
    res = px.estimability_check(a, u_good, CFG)
    assert res.ok
    u_bad = rng.standard_normal((3, 12))
    assert not px.estimability_check(a, u_bad, CFG).ok


# ---------------------------------------------------------------------------
# Mahalanobis projection


def _kkt_oracle(v, point, sigma, tol):
    grad = np.linalg.solve(sigma, v - point)
    worst = 0.0
    for i, (vi, gi) in enumerate(zip(v, grad)):
        if vi <= 0.0:
            worst = max(worst, -gi)
        elif vi >= 1.0:
            worst = max(worst, gi)
        else:
            worst = max(worst, abs(gi))
    return worst


def _grid_oracle(point, sigma):
    xs = np.linspace(0.0, 1.0, 1001)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    prec = np.linalg.inv(sigma)
    dx, dy = gx - point[0], gy - point[1]
    f = prec[0, 0] * dx * dx + 2 * prec[0, 1] * dx * dy + prec[1, 1] * dy * dy
    k = np.unravel_index(int(np.argmin(f)), f.shape)
    return np.array([xs[k[0]], xs[k[1]]])


def test_projection_diagonal_is_clamp(rng):
    point = rng.uniform(-1, 2, 40)
    variances = rng.uniform(0.1, 3.0, 40)
    got = px.mahalanobis_project(point, variances, CFG)
    np.testing.assert_allclose(got, np.clip(point, 0, 1), atol=0)
    got_sp = px.mahalanobis_project(
        point, sp.diags_array(variances), CFG)
    np.testing.assert_allclose(got_sp, np.clip(point, 0, 1), atol=0)
    got_mat = px.mahalanobis_project(point, np.diag(variances), CFG)
    np.testing.assert_allclose(got_mat, np.clip(point, 0, 1), atol=0)


def test_projection_matches_grid_oracle(rng):
    for _ in range(20):
        theta = rng.uniform(0, np.pi)
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        sigma = rot @ np.diag(rng.uniform(0.05, 2.0, 2)) @ rot.T
        point = rng.uniform(-1.0, 2.0, 2)
        got = px.mahalanobis_project(point, sigma, CFG)
        want = _grid_oracle(point, sigma)
        np.testing.assert_allclose(got, want, atol=2e-3)


def test_projection_kkt_residual_64d(rng):
    for _ in range(25):
        sigma = _random_pd(rng, 64, 0.1)
        point = rng.uniform(-1.0, 2.0, 64)
        v = px.mahalanobis_project(point, sigma, CFG)
        assert np.all(v >= 0.0) and np.all(v <= 1.0)
        assert _kkt_oracle(v, point, sigma, CFG.qp_tol) <= 1e-8 * (
            1.0 + np.linalg.norm(np.linalg.solve(sigma, v - point), np.inf)
        ) + 1e-8


def test_projection_idempotent(rng):
    sigma = _random_pd(rng, 16, 0.2)
    point = rng.uniform(-1.0, 2.0, 16)
    once = px.mahalanobis_project(point, sigma, CFG)
    twice = px.mahalanobis_project(once, sigma, CFG)
    np.testing.assert_allclose(twice, once, atol=1e-12)
    interior = np.full(8, 0.5)
    np.testing.assert_allclose(
        px.mahalanobis_project(interior, _random_pd(rng, 8), CFG), interior,
        atol=0)


def test_projection_iteration_cap_raises_with_best(rng):
    sigma = _random_pd(rng, 32, 0.01)
    point = rng.uniform(-2.0, 3.0, 32)
    # a tolerance below float resolution forces the iteration cap to fire
    cfg = ReductionConfig(qp_tol=1e-300, qp_max_iters=3)
    with pytest.raises(ConvergenceError) as err:
        px.mahalanobis_project(point, sigma, cfg)
    assert err.value.best is not None and err.value.best.shape == (32,)
    assert err.value.residual is not None and err.value.residual >= 0.0


# ---------------------------------------------------------------------------
# fixed-point refinement


def test_refine_diagonal_equals_clamped_linear(rng):
    n = 12
    a = np.diag(rng.uniform(0.5, 2.0, n))
    sigma = np.diag(rng.uniform(0.2, 1.0, n))
    xi = rng.uniform(-1.0, 3.0, n)
    rxi, sigma_rxi, _ = px.linear_reduction(xi, a, sigma, 1.0, CFG)
    v, iters, converged = px.refine_with_constraints(
        xi, a, sigma, 1.0, sigma_rxi, CFG)
    assert converged
    np.testing.assert_allclose(v, np.clip(rxi, 0, 1), atol=1e-9)


def test_refine_fixed_point_self_consistency(rng):
    m, n = 24, 8
    a = rng.standard_normal((m, n))
    sigma = _random_pd(rng, m, 0.5)
    xi = a @ rng.uniform(0, 1, n) + rng.standard_normal(m)
    rxi, sigma_rxi, _ = px.linear_reduction(xi, a, sigma, 1.0, CFG)
    v, iters, converged = px.refine_with_constraints(
        xi, a, sigma, 1.0, sigma_rxi, CFG)
    assert converged and iters <= CFG.max_fixed_point_iters
    # rebuild the refinement map from first principles and re-apply it
    low = np.linalg.cholesky(sigma)
    aw = np.linalg.solve(low, a)
    b = aw.T @ np.linalg.solve(low, xi)
    g = aw.T @ aw
    prec_r = np.linalg.inv(sigma_rxi)
    gt = g + prec_r
    w = np.linalg.solve(gt, b + prec_r @ v)
    v_again = px.mahalanobis_project(w, sigma_rxi, CFG)
    assert np.max(np.abs(v_again - v)) < 50 * CFG.fixed_point_tol


def test_refine_estimates_land_in_box(rng):
    m, n = 20, 6
    a = rng.standard_normal((m, n))
    sigma = _random_pd(rng, m)
    xi = rng.standard_normal(m) * 5.0
    rxi, sigma_rxi, _ = px.linear_reduction(xi, a, sigma, 1.0, CFG)
    v, _, _ = px.refine_with_constraints(xi, a, sigma, 1.0, sigma_rxi, CFG)
    assert np.all(v >= 0.0) and np.all(v <= 1.0)


# ---------------------------------------------------------------------------
# thresholding


def test_threshold_strict_inequality():
    coeffs = np.array([1.0, -0.5, 0.2, 0.5])
    sigmas = np.array([1.0, 1.0, 1.0, 1.0])
    out = px.threshold_components(coeffs, sigmas, 0.5)
    np.testing.assert_allclose(out, [1.0, -0.5, 0.0, 0.5], atol=0)
    np.testing.assert_allclose(
        px.threshold_components(coeffs, sigmas, 0.0), coeffs, atol=0)
    with pytest.raises(ParameterError):
        px.threshold_components(coeffs, sigmas[:2], 0.5)
    with pytest.raises(ParameterError):
        px.threshold_components(coeffs, -sigmas, 0.5)
    with pytest.raises(ParameterError):
        px.threshold_components(coeffs, sigmas, -1.0)


# ---------------------------------------------------------------------------
# structured plan vs dense algebra


def test_structured_plan_information_matrix_is_diagonal(geom, crystal):
    obj = px.builtin_phantom("two_slits", (6, 6), photons_per_pixel=10.0)
    model = px.build_measurement_model(obj, geom, crystal)
    plan = px.get_reduction_plan(model, CFG)
    assert plan._mode == "structured"
    a = model.forward.toarray()
    sigma = model.worst_case_noise_covariance().dense()
    g_dense = a.T @ np.linalg.solve(sigma, a)
    np.testing.assert_allclose(np.diag(g_dense), plan._g_diag, rtol=1e-9)
    off = g_dense - np.diag(np.diag(g_dense))
    assert np.max(np.abs(off)) < 1e-9 * np.max(np.abs(plan._g_diag))


def test_structured_plan_matches_dense_reduction(geom, crystal, rng):
    obj = px.builtin_phantom("two_slits", (6, 6), photons_per_pixel=10.0)
    model = px.build_measurement_model(obj, geom, crystal)
    plan = px.get_reduction_plan(model, CFG)
    g = px.co_registered_counts(obj).reshape(-1)
    xi = px.simulate_measurement(g, model.forward,
                                 model.noise_covariance(g), 5)
    rxi_plan = plan.apply_rstar(xi)
    rxi_dense, cov_dense, h_dense = px.linear_reduction(
        xi, model.forward, model.worst_case_noise_covariance(),
        model.ideal, CFG)
    np.testing.assert_allclose(rxi_plan, rxi_dense, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(plan.sigma_rxi_diag(), np.diag(cov_dense),
                               rtol=1e-8)
    assert abs(plan.worst_case_mse - h_dense) < 1e-8 * h_dense
    v_plan, _, conv_plan, _ = plan.refine(xi, CFG)
    v_dense, _, conv_dense = px.refine_with_constraints(
        xi, model.forward, model.worst_case_noise_covariance(),
        model.ideal, cov_dense, CFG)
    assert conv_plan and conv_dense
    np.testing.assert_allclose(v_plan, v_dense, atol=1e-8)


def test_plan_cache_reused(geom, crystal):
    obj = px.builtin_phantom("constant", (4, 4), photons_per_pixel=2.0)
    model = px.build_measurement_model(obj, geom, crystal)
    p1 = px.get_reduction_plan(model, CFG)
    p2 = px.get_reduction_plan(model, ReductionConfig(tau=0.9, transform="dct"))
    assert p1 is p2  # tau/transform do not invalidate the plan
    p3 = px.get_reduction_plan(model, ReductionConfig(pinv_tolerance=1e-8))
    assert p3 is not p1


# ---------------------------------------------------------------------------
# full pipeline


def test_pipeline_noiseless_exact_recovery(geom, crystal):
    obj = px.builtin_phantom("two_slits", (16, 16), photons_per_pixel=10.0)
    model = px.build_measurement_model(obj, geom, crystal)
    g = px.co_registered_counts(obj).reshape(-1)
    xi = px.simulate_measurement(g, model.forward, None, 0)
    out = px.reduce_with_sparsity(xi, model, ReductionConfig(tau=0.0))
    truth = g / obj.photons_per_pixel
    assert np.max(np.abs(out.estimate - truth)) < 1e-10
    assert out.converged
    assert out.thresholded_fraction == 0.0
    np.testing.assert_allclose(out.linear_estimate, truth, atol=1e-10)


def test_pipeline_multi_matches_single(geom, crystal):
    obj = px.builtin_phantom("two_slits", (16, 16), photons_per_pixel=10.0)
    model = px.build_measurement_model(obj, geom, crystal)
    g = px.co_registered_counts(obj).reshape(-1)
    xi = px.simulate_measurement(g, model.forward,
                                 model.noise_covariance(g), 11)
    cfg = ReductionConfig(tau=0.5, transform="haar")
    single = px.reduce_with_sparsity(xi, model, cfg)
    multi = px.reduce_with_sparsity_multi(xi, model, cfg, [0.0, 0.5])
    np.testing.assert_allclose(single.estimate, multi[1].estimate, atol=0)
    assert multi[0].thresholded_fraction == 0.0
    assert multi[1].thresholded_fraction > 0.0
    assert 0.0 <= multi[1].estimate.min() and multi[1].estimate.max() <= 1.0


def test_pipeline_threshold_sigmas_match_dense_transform(geom, crystal):
    obj = px.builtin_phantom("constant", (4, 4), photons_per_pixel=5.0)
    model = px.build_measurement_model(obj, geom, crystal)
    plan = px.get_reduction_plan(model, CFG)
    sig = plan.transform_sigmas("haar")
    t2d = px.transforms.dense_matrix_2d((4, 4), "haar")
    want = np.sqrt(np.diag(t2d @ np.diag(plan.sigma_rxi_diag()) @ t2d.T))
    np.testing.assert_allclose(sig.reshape(-1), want, rtol=1e-10)


def test_pipeline_rejects_rank_deficient_device(geom, crystal):
    obj = px.builtin_phantom("constant", (16, 16), photons_per_pixel=10.0)
    sensors = SensorModel(psf_width=3, stride=3, offset=0)
    model = px.build_measurement_model(obj, geom, crystal, sensors=sensors)
    xi = np.zeros(model.readout_dim)
    with pytest.raises(EstimabilityError):
        px.reduce_with_sparsity(xi, model, CFG)


def test_pipeline_unknown_transform_rejected():
    with pytest.raises(ParameterError):
        ReductionConfig(transform="wavelet9000")
    with pytest.raises(ParameterError):
        ReductionConfig(tau=-0.5)
