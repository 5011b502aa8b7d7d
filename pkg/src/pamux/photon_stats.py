"""Per-pixel photon statistics of the three multiplexed output images.

An object with transparency t(r) ∈ [0, 1] illuminated so that a fully
transparent pixel receives ``photons_per_pixel`` photons produces, after the
two coupled parametric processes and lens-scale equalization, three mutually
correlated images. This module maps the object to the per-pixel means,
variances, and cross-arm covariances of the three photon counts.

Conventions
-----------
* Count units: all statistics are photon counts per pixel, with the input
  scale g(r) = photons_per_pixel · t(r).
* Transfer functions are evaluated per pixel at q = k3·|r|/f; the flag
  ``axial_approximation`` replaces them by their on-axis values.
* The optical system inverts images (r -> -r). That coordinate flip is
  applied exactly once, here, so all downstream consumers see the three
  arms co-registered in image-plane orientation. The q map is symmetric
  under the flip, so only the transparency pattern is affected.
* Statistics are kept to leading order in g: the spontaneous (g-independent)
  background is not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ModelInconsistencyError, ParameterError
from .optics import CrystalParams, OpticalGeometry, transfer_grid

#: Per-pixel covariance eigenvalues below -PSD_TOLERANCE·trace are an error;
#: anything between that and zero is attributed to roundoff and clipped.
PSD_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ObjectImage:
    """Transparency distribution plus the illumination scale.

    ``transparency`` holds t(r) ∈ [0, 1] row-major; ``photons_per_pixel``
    is the mean photon count a fully transparent pixel receives
    (dimensionless). The per-pixel input count is their product.
    """

    transparency: np.ndarray
    photons_per_pixel: float

    def __post_init__(self):
        t = np.asarray(self.transparency, dtype=float)
        if t.ndim != 2 or t.size == 0:
            raise ParameterError(
                f"transparency must be a nonempty 2-D array, got shape {t.shape}"
            )
        if not np.all(np.isfinite(t)):
            raise ParameterError("transparency must be finite")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ParameterError("transparency values must lie in [0, 1]")
        if not (math.isfinite(self.photons_per_pixel) and self.photons_per_pixel > 0.0):
            raise ParameterError(
                f"photons_per_pixel must be positive, got {self.photons_per_pixel}"
            )
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "transparency", t)

    @property
    def height(self) -> int:
        return self.transparency.shape[0]

    @property
    def width(self) -> int:
        return self.transparency.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.transparency.shape


@dataclass(frozen=True)
class PixelStatistics:
    """Per-pixel first and second moments of the three arm counts.

    ``means`` has shape (3, H, W); ``covariance`` has shape (H, W, 3, 3)
    with the arm variances on the diagonal. Both are in image-plane
    orientation (the object appears point-reflected).
    """

    means: np.ndarray
    covariance: np.ndarray

    @property
    def variances(self) -> np.ndarray:
        """Arm variances with shape (3, H, W)."""
        return np.moveaxis(np.diagonal(self.covariance, axis1=2, axis2=3), -1, 0)


def etendue_factor(geom: OpticalGeometry) -> float:
    """Dimensionless mode-count factor S_a·S_p/(f·lambda3)².

    This is the number of pupil resolution cells per pixel at the
    up-converted wavelength; it multiplies the excess noise of the
    phase-conjugate arm.
    """
    return geom.pupil_area * geom.pixel_area / (geom.focal_length * geom.lambda3) ** 2


def scale_ratio(arm: int, geom: OpticalGeometry) -> float:
    """Image-scale ratio lambda_arm/lambda3 used to co-register arm 1 or 2.

    The relay imaging each arm onto the common detector plane must enlarge
    by this factor so all three images share the lambda3 spatial scale.
    """
    if arm not in (1, 2):
        raise ParameterError(f"scale_ratio is defined for arms 1 and 2, got {arm}")
    return getattr(geom, f"lambda{arm}") / geom.lambda3


def co_registered_counts(obj: ObjectImage) -> np.ndarray:
    """Input counts g(-r) = photons_per_pixel · t(-r) in image orientation.

    Implements the single coordinate flip of the imaging system; pixel
    centers map exactly onto pixel centers under the point reflection.
    """
    return obj.photons_per_pixel * obj.transparency[::-1, ::-1]


@lru_cache(maxsize=32)
def statistics_coefficients(
    dims: tuple[int, int],
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit-count statistics coefficients on the pixel grid.

    Returns ``(mean_coeff, cov_coeff)`` where ``mean_coeff`` has shape
    (3, H, W) and ``cov_coeff`` shape (H, W, 3, 3); multiplying both by the
    per-pixel input count gives the full statistics. All entries derive
    from the per-pixel transfer matrices:

    * means:      |Q_j3|²
    * variances:  (1 + 2|Q12|²)|Q13|²,
                  (1 + 2·kappa·|Q21|²)|Q23|²  with kappa the etendue factor,
                  (1 + 2|Q32|²)|Q33|²
    * covariances (beats of the mean field against the partner arm's
      amplified vacuum):
                  C12 = 2 Re[Q12 Q22* Q13* Q23]
                  C13 = 2 Re[Q12 Q32* Q13* Q33]
                  C23 = 2 Re[Q22* Q32 Q23 Q33*]

    The assembled 3x3 is symmetric and positive semidefinite whenever the
    etendue factor is at least 1 + |Q23|²/|Q21|² (amply true for ordinary
    imaging geometries); violations surface in ``pixel_covariance_matrix``.
    """
    q = transfer_grid(dims, geom, crystal, axial_approximation)
    kappa = etendue_factor(geom)

    q12 = q[..., 0, 1]
    q13 = q[..., 0, 2]
    q21 = q[..., 1, 0]
    q22 = q[..., 1, 1]
    q23 = q[..., 1, 2]
    q32 = q[..., 2, 1]
    q33 = q[..., 2, 2]

    m1 = np.abs(q13) ** 2
    m2 = np.abs(q23) ** 2
    m3 = np.abs(q33) ** 2
    mean_coeff = np.stack([m1, m2, m3])

    v1 = (1.0 + 2.0 * np.abs(q12) ** 2) * m1
    v2 = (1.0 + 2.0 * kappa * np.abs(q21) ** 2) * m2
    v3 = (1.0 + 2.0 * np.abs(q32) ** 2) * m3

    c12 = 2.0 * np.real(q12 * np.conj(q22) * np.conj(q13) * q23)
    c13 = 2.0 * np.real(q12 * np.conj(q32) * np.conj(q13) * q33)
    c23 = 2.0 * np.real(np.conj(q22) * q32 * q23 * np.conj(q33))

    h, w = dims
    cov_coeff = np.empty((h, w, 3, 3))
    cov_coeff[..., 0, 0] = v1
    cov_coeff[..., 1, 1] = v2
    cov_coeff[..., 2, 2] = v3
    cov_coeff[..., 0, 1] = cov_coeff[..., 1, 0] = c12
    cov_coeff[..., 0, 2] = cov_coeff[..., 2, 0] = c13
    cov_coeff[..., 1, 2] = cov_coeff[..., 2, 1] = c23

    mean_coeff.flags.writeable = False
    cov_coeff.flags.writeable = False
    return mean_coeff, cov_coeff


def mean_photon_numbers(
    obj: ObjectImage,
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> np.ndarray:
    """Mean counts of the three arms, shape (3, H, W), image orientation."""
    mean_coeff, _ = statistics_coefficients(obj.dims, geom, crystal, axial_approximation)
    return mean_coeff * co_registered_counts(obj)[None, :, :]


def photon_variances(
    obj: ObjectImage,
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> np.ndarray:
    """Count variances of the three arms, shape (3, H, W)."""
    _, cov_coeff = statistics_coefficients(obj.dims, geom, crystal, axial_approximation)
    diag = np.moveaxis(np.diagonal(cov_coeff, axis1=2, axis2=3), -1, 0)
    return diag * co_registered_counts(obj)[None, :, :]


def photon_covariances(
    obj: ObjectImage,
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> np.ndarray:
    """Cross-arm covariances (C12, C13, C23), shape (3, H, W)."""
    _, cov_coeff = statistics_coefficients(obj.dims, geom, crystal, axial_approximation)
    counts = co_registered_counts(obj)
    return np.stack(
        [
            cov_coeff[..., 0, 1] * counts,
            cov_coeff[..., 0, 2] * counts,
            cov_coeff[..., 1, 2] * counts,
        ]
    )


def _verify_and_clip_psd(cov: np.ndarray) -> np.ndarray:
    """Check per-pixel PSD within tolerance; clip roundoff-negative modes.

    ``cov`` has shape (..., k, k). Raises ``ModelInconsistencyError`` when an
    eigenvalue falls below -PSD_TOLERANCE·trace.
    """
    w = np.linalg.eigvalsh(cov)
    trace = np.trace(cov, axis1=-2, axis2=-1)
    floor = -PSD_TOLERANCE * np.maximum(trace, 0.0)
    if np.any(w[..., 0] < floor):
        worst = float(np.min(w[..., 0] - floor))
        raise ModelInconsistencyError(
            "assembled per-pixel covariance is not positive semidefinite "
            f"(eigenvalue below tolerance by {worst:.3e}); the statistics model "
            "is inconsistent at these parameters"
        )
    if np.any(w[..., 0] < 0.0):
        w_full, v = np.linalg.eigh(cov)
        w_clipped = np.maximum(w_full, 0.0)
        cov = (v * w_clipped[..., None, :]) @ np.swapaxes(v, -1, -2)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return cov


def pixel_covariance_matrix(
    obj: ObjectImage,
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> PixelStatistics:
    """Assemble the full per-pixel statistics of the three arms."""
    mean_coeff, cov_coeff = statistics_coefficients(
        obj.dims, geom, crystal, axial_approximation
    )
    counts = co_registered_counts(obj)
    means = mean_coeff * counts[None, :, :]
    cov = _verify_and_clip_psd(cov_coeff * counts[:, :, None, None])
    return PixelStatistics(means=means, covariance=cov)
