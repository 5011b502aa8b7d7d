"""Photon-statistics unit tests.

The scalar oracle recomputes every moment directly from transfer-matrix
entries inside the tests; structural checks cover positive semidefiniteness,
zero-transparency pixels, linearity in the illumination, and the single
image-plane point reflection.
"""

import numpy as np
import pytest

import pamux as px
from pamux import CrystalParams, ModelInconsistencyError, ObjectImage, ParameterError


@pytest.fixture(scope="module")
def small_obj():
    t = np.zeros((4, 6))
    t[1, 2] = 1.0
    t[3, 5] = 0.5
    return ObjectImage(transparency=t, photons_per_pixel=10.0)


def test_etendue_factor_reference_value(geom):
    # S_a S_p / (f lambda3)^2 = 25e-4 · 100e-12 / (0.1 / 3.2e6)^-2… = 256
    assert abs(px.etendue_factor(geom) - 256.0) < 1e-9


def test_scale_ratios(geom):
    assert abs(px.scale_ratio(1, geom) - (3.2 / 1.2)) < 1e-12
    assert abs(px.scale_ratio(2, geom) - (3.2 / 0.8)) < 1e-12
    with pytest.raises(ParameterError):
        px.scale_ratio(3, geom)


def test_co_registration_single_flip(small_obj):
    counts = px.co_registered_counts(small_obj)
    t = small_obj.transparency
    np.testing.assert_allclose(counts, 10.0 * t[::-1, ::-1], atol=0)
    assert counts[2, 3] == 10.0  # (1, 2) lands at (H-2, W-3)
    assert counts[0, 0] == 5.0   # (3, 5) lands at (0, 0)


def test_moments_against_scalar_oracle(geom, crystal, small_obj):
    stats = px.pixel_covariance_matrix(small_obj, geom, crystal)
    grid = px.transfer_grid(small_obj.dims, geom, crystal)
    kappa = px.etendue_factor(geom)
    counts = px.co_registered_counts(small_obj)
    h, w = small_obj.dims
    for y in range(h):
        for x in range(w):
            q = grid[y, x]
            g = counts[y, x]
            m1 = abs(q[0, 2]) ** 2 * g
            m2 = abs(q[1, 2]) ** 2 * g
            m3 = abs(q[2, 2]) ** 2 * g
            assert abs(stats.means[0, y, x] - m1) < 1e-12 * max(m1, 1)
            assert abs(stats.means[1, y, x] - m2) < 1e-12 * max(m2, 1)
            assert abs(stats.means[2, y, x] - m3) < 1e-12 * max(m3, 1)
            v1 = (1 + 2 * abs(q[0, 1]) ** 2) * m1
            v2 = (1 + 2 * kappa * abs(q[1, 0]) ** 2) * m2
            v3 = (1 + 2 * abs(q[2, 1]) ** 2) * m3
            cov = stats.covariance[y, x]
            assert abs(cov[0, 0] - v1) < 1e-10 * max(v1, 1)
            assert abs(cov[1, 1] - v2) < 1e-10 * max(v2, 1)
            assert abs(cov[2, 2] - v3) < 1e-10 * max(v3, 1)
            c12 = 2 * (q[0, 1] * q[1, 1].conj() * q[0, 2].conj() * q[1, 2]).real * g
            c13 = 2 * (q[0, 1] * q[2, 1].conj() * q[0, 2].conj() * q[2, 2]).real * g
            c23 = 2 * (q[1, 1].conj() * q[2, 1] * q[1, 2] * q[2, 2].conj()).real * g
            assert abs(cov[0, 1] - c12) < 1e-10 * max(abs(c12), 1)
            assert abs(cov[0, 2] - c13) < 1e-10 * max(abs(c13), 1)
            assert abs(cov[1, 2] - c23) < 1e-10 * max(abs(c23), 1)


def test_accessor_functions_consistent(geom, crystal, small_obj):
    stats = px.pixel_covariance_matrix(small_obj, geom, crystal)
    means = px.mean_photon_numbers(small_obj, geom, crystal)
    variances = px.photon_variances(small_obj, geom, crystal)
    covs = px.photon_covariances(small_obj, geom, crystal)
    np.testing.assert_allclose(means, stats.means, atol=0)
    np.testing.assert_allclose(variances, stats.variances, atol=1e-12)
    np.testing.assert_allclose(covs[0], stats.covariance[..., 0, 1], atol=1e-12)
    np.testing.assert_allclose(covs[1], stats.covariance[..., 0, 2], atol=1e-12)
    np.testing.assert_allclose(covs[2], stats.covariance[..., 1, 2], atol=1e-12)


@pytest.mark.parametrize("eps", [0.4, 0.8])
@pytest.mark.parametrize("beta_z", [1.0, 2.0, 5.0])
def test_covariance_psd_across_settings(geom, eps, beta_z):
    crystal = CrystalParams.from_dimensionless(eps, beta_z)
    obj = px.builtin_phantom("two_slits", (16, 16), photons_per_pixel=10.0)
    stats = px.pixel_covariance_matrix(obj, geom, crystal)
    eigs = np.linalg.eigvalsh(stats.covariance)
    traces = np.trace(stats.covariance, axis1=2, axis2=3)
    assert np.all(eigs[..., 0] >= -1e-9 * np.maximum(traces, 0.0))


def test_statistics_vanish_at_opaque_pixels(geom, crystal):
    t = np.zeros((8, 8))
    t[2:4, 2:4] = 1.0
    obj = ObjectImage(transparency=t, photons_per_pixel=7.0)
    stats = px.pixel_covariance_matrix(obj, geom, crystal)
    opaque = px.co_registered_counts(obj) == 0.0
    assert np.all(stats.means[:, opaque] == 0.0)
    assert np.all(stats.covariance[opaque] == 0.0)


def test_linearity_in_illumination(geom, crystal):
    t = np.linspace(0, 1, 24).reshape(4, 6)
    obj1 = ObjectImage(transparency=t, photons_per_pixel=5.0)
    obj2 = ObjectImage(transparency=t, photons_per_pixel=10.0)
    s1 = px.pixel_covariance_matrix(obj1, geom, crystal)
    s2 = px.pixel_covariance_matrix(obj2, geom, crystal)
    np.testing.assert_allclose(s2.means, 2.0 * s1.means, rtol=1e-12, atol=0)
    np.testing.assert_allclose(s2.covariance, 2.0 * s1.covariance,
                               rtol=1e-12, atol=1e-300)


def test_no_upconversion_limit(geom):
    # gamma = 0: arm 3 passes through untouched on the axis, arms 1 and 2
    # carry the plain parametric pair.
    crystal = CrystalParams(beta=100.0, gamma=0.0, length_z=0.01)
    obj = px.builtin_phantom("constant", (3, 3), photons_per_pixel=4.0)
    stats = px.pixel_covariance_matrix(obj, geom, crystal, axial_approximation=True)
    np.testing.assert_allclose(stats.means[0], 0.0, atol=1e-20)
    np.testing.assert_allclose(stats.means[2], 4.0, atol=1e-12)
    np.testing.assert_allclose(stats.covariance[..., 0, 2], 0.0, atol=1e-20)
    np.testing.assert_allclose(stats.covariance[..., 1, 2], 0.0, atol=1e-20)


def test_mean_gain_reproduces_axial_gain(geom):
    # constant object under the axial approximation: arm-3 mean per input
    # count equals the axial gain |Q33|².
    crystal = CrystalParams.from_dimensionless(0.4, 1.0)
    obj = px.builtin_phantom("constant", (2, 2), photons_per_pixel=1.0)
    means = px.mean_photon_numbers(obj, geom, crystal, axial_approximation=True)
    gain = abs(px.transfer_matrix_axial(crystal, crystal.length_z).entry(3, 3)) ** 2
    np.testing.assert_allclose(means[2], gain, rtol=1e-12)


def test_statistics_coefficients_cached_and_readonly(geom, crystal):
    a = px.statistics_coefficients((4, 4), geom, crystal)
    b = px.statistics_coefficients((4, 4), geom, crystal)
    assert a[0] is b[0] and a[1] is b[1]
    assert not a[0].flags.writeable and not a[1].flags.writeable


def test_object_image_validation():
    with pytest.raises(ParameterError):
        ObjectImage(transparency=np.ones((2, 2)) * 1.5, photons_per_pixel=1.0)
    with pytest.raises(ParameterError):
        ObjectImage(transparency=-np.ones((2, 2)), photons_per_pixel=1.0)
    with pytest.raises(ParameterError):
        ObjectImage(transparency=np.ones(4), photons_per_pixel=1.0)
    with pytest.raises(ParameterError):
        ObjectImage(transparency=np.ones((2, 2)), photons_per_pixel=0.0)
    with pytest.raises(ParameterError):
        ObjectImage(transparency=np.full((2, 2), np.nan), photons_per_pixel=1.0)
    obj = ObjectImage(transparency=np.ones((2, 3)), photons_per_pixel=1.0)
    assert obj.dims == (2, 3) and obj.height == 2 and obj.width == 3
    assert not obj.transparency.flags.writeable


def test_psd_guard_raises_on_bad_covariance():
    bad = np.array([[[[1.0, 2.0], [2.0, 1.0]]]])  # eigenvalues (3, -1)
    with pytest.raises(ModelInconsistencyError):
        px.photon_stats._verify_and_clip_psd(bad)


def test_psd_guard_clips_roundoff():
    almost = np.array([[1.0, 1.0 + 1e-14], [1.0 + 1e-14, 1.0]])
    fixed = px.photon_stats._verify_and_clip_psd(almost[None])
    eigs = np.linalg.eigvalsh(fixed[0])
    assert eigs.min() >= 0.0
    np.testing.assert_allclose(fixed[0], almost, atol=1e-12)
