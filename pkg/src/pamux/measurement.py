"""Forward operator, block noise covariance, and readout synthesis.

The acquisition of the three co-registered arm images is modelled linearly:

    xi = A g + nu,      A = (B1 C1; B2 C2; B3 C3),

where g is the per-pixel input count vector, C_j is the diagonal conversion
matrix of arm j (per-pixel mean gain), and B_i aggregates image pixels into
sensor readings (square windows on a stride/offset grid, truncated at the
borders). The zero-mean noise nu carries the per-pixel photon statistics
pushed through the sensor windows, plus an optional device-noise term:

    Sigma_nu(g)[i, j] = B_i Sigma_ij(g) B_j^T + Sigma_extra,

with Sigma_ij(g) diagonal per pixel. ``BlockNoiseCovariance`` keeps this
structure implicit so sampling and solving stay cheap at realistic sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ParameterError
from .optics import CrystalParams, OpticalGeometry
from .photon_stats import ObjectImage, statistics_coefficients


@dataclass(frozen=True)
class SensorModel:
    """Geometry and gain of one arm's sensor grid.

    Each sensor sums the image over a ``psf_width`` × ``psf_width`` window
    (truncated at the borders) centered at ``offset + p·stride`` along each
    axis, scaled by ``response``.
    """

    psf_width: int = 3
    stride: int = 1
    offset: int = 0
    response: float = 1.0

    def __post_init__(self):
        if self.psf_width < 1:
            raise ParameterError(f"psf_width must be >= 1, got {self.psf_width}")
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")
        if not (0 <= self.offset < self.stride + self.psf_width):
            raise ParameterError(
                f"offset must satisfy 0 <= offset < stride + psf_width, got {self.offset}"
            )
        if not (math.isfinite(self.response) and self.response > 0.0):
            raise ParameterError(f"response must be positive, got {self.response}")


def _sensor_matrix_1d(n: int, sensor: SensorModel) -> sp.csr_array:
    """One axis of the window-sum operator, without the response factor."""
    if n < 1:
        raise ParameterError(f"axis length must be >= 1, got {n}")
    centers = np.arange(sensor.offset, n, sensor.stride)
    if centers.size == 0:
        raise ParameterError(
            f"sensor grid (stride={sensor.stride}, offset={sensor.offset}) "
            f"places no sensors on an axis of length {n}"
        )
    half_lo = (sensor.psf_width - 1) // 2
    rows, cols = [], []
    for p, c in enumerate(centers):
        lo = max(c - half_lo, 0)
        hi = min(c - half_lo + sensor.psf_width, n)
        for j in range(lo, hi):
            rows.append(p)
            cols.append(j)
    data = np.ones(len(rows))
    mat = sp.csr_array((data, (rows, cols)), shape=(centers.size, n))
    if int(np.diff(mat.indptr).min()) == 0:
        raise ParameterError("sensor configuration produced an empty window")
    return mat


def sensor_matrix(sensor: SensorModel, dims) -> sp.csr_array:
    """Sensor aggregation matrix B over row-major flattened pixels.

    ``dims`` may be an int (1-D image) or an (H, W) pair; the 2-D operator
    is the Kronecker product of the two 1-D axis operators.
    """
    if isinstance(dims, (int, np.integer)):
        return (sensor.response * _sensor_matrix_1d(int(dims), sensor)).tocsr()
    h, w = dims
    th = _sensor_matrix_1d(int(h), sensor)
    tw = _sensor_matrix_1d(int(w), sensor)
    return (sensor.response * sp.kron(th, tw, format="csr"))


def conversion_matrix(
    arm: int,
    dims: tuple[int, int],
    geom: OpticalGeometry,
    crystal: CrystalParams,
    axial_approximation: bool = False,
) -> np.ndarray:
    """Diagonal of the conversion matrix C_arm, flattened row-major.

    Entry k is the per-pixel gain |Q_arm,3(q(r_k))|² mapping mean input
    counts to mean output counts in that arm.
    """
    if arm not in (1, 2, 3):
        raise ParameterError(f"arm must be 1, 2 or 3, got {arm}")
    mean_coeff, _ = statistics_coefficients(tuple(dims), geom, crystal,
                                            axial_approximation)
    return mean_coeff[arm - 1].reshape(-1).copy()


def assemble_forward(sensor_mats: Sequence[sp.csr_array],
                     conversion_diags: Sequence[np.ndarray]) -> sp.csr_array:
    """Stack the per-arm blocks B_i·C_i into the forward operator A."""
    if len(sensor_mats) != len(conversion_diags) or not sensor_mats:
        raise ParameterError("need one conversion diagonal per sensor matrix")
    blocks = []
    for b, c in zip(sensor_mats, conversion_diags):
        c = np.asarray(c, dtype=float).reshape(-1)
        if b.shape[1] != c.size:
            raise ParameterError(
                f"sensor matrix has {b.shape[1]} columns but conversion "
                f"diagonal has {c.size} entries"
            )
        blocks.append(b @ sp.diags_array(c))
    return sp.vstack(blocks, format="csr")


class BlockNoiseCovariance:
    """Structured noise covariance Sigma_nu = [B_i D_ij B_j^T] + extra.

    ``pixel_cov`` holds the per-pixel blocks D (shape (Np, k, k), k = number
    of arms); ``extra`` is an optional diagonal (1-D) or dense (2-D) add-on.
    The per-pixel factorization used for sampling is cached after first use.
    """

    def __init__(self, sensor_mats: Sequence[sp.csr_array], pixel_cov: np.ndarray,
                 extra: np.ndarray | None = None):
        self.sensor_mats = tuple(sensor_mats)
        self.pixel_cov = np.asarray(pixel_cov, dtype=float)
        k = len(self.sensor_mats)
        if self.pixel_cov.ndim != 3 or self.pixel_cov.shape[1:] != (k, k):
            raise ParameterError(
                f"pixel_cov must have shape (Np, {k}, {k}), got {self.pixel_cov.shape}"
            )
        self.block_dims = tuple(b.shape[0] for b in self.sensor_mats)
        self.dim = int(sum(self.block_dims))
        self.extra = extra
        if extra is not None:
            extra = np.asarray(extra, dtype=float)
            if extra.ndim == 1:
                if extra.size != self.dim:
                    raise ParameterError("diagonal extra noise has wrong length")
                if np.any(extra < 0.0):
                    raise ParameterError("diagonal extra noise must be nonnegative")
            elif extra.ndim == 2:
                if extra.shape != (self.dim, self.dim):
                    raise ParameterError("dense extra noise has wrong shape")
            else:
                raise ParameterError("extra noise must be 1-D or 2-D")
            self.extra = extra
        self._pixel_factor = None
        self._extra_factor = None

    def _factor(self) -> np.ndarray:
        if self._pixel_factor is None:
            w, v = np.linalg.eigh(self.pixel_cov)
            w = np.maximum(w, 0.0)
            self._pixel_factor = v * np.sqrt(w)[:, None, :]
        return self._pixel_factor

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw noise vector(s) with this covariance: shape (dim,) or (size, dim)."""
        squeeze = size is None
        n = 1 if squeeze else int(size)
        np_, k = self.pixel_cov.shape[0], self.pixel_cov.shape[1]
        white = rng.standard_normal((n, np_, k))
        eta = np.einsum("pij,npj->npi", self._factor(), white)
        parts = [self.sensor_mats[i] @ eta[:, :, i].T for i in range(k)]
        nu = np.concatenate(parts, axis=0).T
        if self.extra is not None:
            if self.extra.ndim == 1:
                nu = nu + np.sqrt(self.extra) * rng.standard_normal((n, self.dim))
            else:
                if self._extra_factor is None:
                    w, v = np.linalg.eigh(0.5 * (self.extra + self.extra.T))
                    self._extra_factor = v * np.sqrt(np.maximum(w, 0.0))
                nu = nu + rng.standard_normal((n, self.dim)) @ self._extra_factor.T
        return nu[0] if squeeze else nu

    def sparse(self) -> sp.csr_array:
        """Explicit sparse Sigma_nu (without a dense extra term)."""
        k = len(self.sensor_mats)
        blocks = [[None] * k for _ in range(k)]
        for i in range(k):
            for j in range(k):
                dij = sp.diags_array(self.pixel_cov[:, i, j])
                blocks[i][j] = self.sensor_mats[i] @ dij @ self.sensor_mats[j].T
        out = sp.bmat(blocks, format="csr")
        if self.extra is not None and self.extra.ndim == 1:
            out = out + sp.diags_array(self.extra)
        elif self.extra is not None:
            raise NumericError("dense extra noise cannot be represented sparsely")
        return out

    def dense(self) -> np.ndarray:
        """Explicit dense Sigma_nu."""
        if self.extra is not None and self.extra.ndim == 2:
            k = len(self.sensor_mats)
            blocks = [[None] * k for _ in range(k)]
            for i in range(k):
                for j in range(k):
                    dij = sp.diags_array(self.pixel_cov[:, i, j])
                    blocks[i][j] = self.sensor_mats[i] @ dij @ self.sensor_mats[j].T
            return sp.bmat(blocks, format="csr").toarray() + self.extra
        return self.sparse().toarray()


def assemble_noise_covariance(
    g,
    sensor_mats: Sequence[sp.csr_array],
    cov_coefficients: np.ndarray,
    extra_noise: np.ndarray | None = None,
    photons_per_pixel: float | None = None,
) -> BlockNoiseCovariance:
    """Noise covariance for input counts ``g`` (flattened or (H, W)).

    ``cov_coefficients`` is the per-unit-count per-pixel covariance stack
    (Np, k, k) from the photon statistics; the blocks scale linearly in g.
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    if np.any(g < 0.0) or not np.all(np.isfinite(g)):
        raise ParameterError("input counts must be finite and nonnegative")
    if photons_per_pixel is not None and np.any(g > photons_per_pixel * (1 + 1e-12)):
        raise ParameterError("input counts exceed photons_per_pixel")
    if cov_coefficients.shape[0] != g.size:
        raise ParameterError(
            f"coefficient stack covers {cov_coefficients.shape[0]} pixels, "
            f"g has {g.size}"
        )
    pixel_cov = cov_coefficients * g[:, None, None]
    return BlockNoiseCovariance(sensor_mats, pixel_cov, extra_noise)


def simulate_measurement(g, A, sigma_nu, seed, noise_scale: float = 1.0) -> np.ndarray:
    """Synthesize one noisy readout xi = A g + nu.

    ``sigma_nu`` may be a ``BlockNoiseCovariance``, a dense matrix (factored
    by eigendecomposition with negative-eigenvalue clipping), or None for a
    noiseless readout. ``seed`` is an integer or a ``numpy.random.Generator``;
    equal seeds give bitwise-equal outputs.
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    mean = A @ g
    if sigma_nu is None or noise_scale == 0.0:
        return mean
    rng = np.random.default_rng(seed)
    if isinstance(sigma_nu, BlockNoiseCovariance):
        nu = sigma_nu.sample(rng)
    else:
        sigma = np.asarray(sigma_nu, dtype=float)
        if sigma.shape != (mean.size, mean.size):
            raise ParameterError(
                f"sigma_nu has shape {sigma.shape}, expected {(mean.size, mean.size)}"
            )
        try:
            w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"noise covariance factorization failed: {exc}") from exc
        factor = v * np.sqrt(np.maximum(w, 0.0))
        nu = factor @ rng.standard_normal(mean.size)
    return mean + noise_scale * nu


@dataclass
class MeasurementModel:
    """Assembled three-arm (or single-arm) acquisition model.

    ``forward`` is the stacked operator A; ``noise_covariance(g)`` builds the
    structured covariance for any admissible count vector. ``ideal`` is the
    feature-of-interest operator U: a scalar s stands for s·I (the default
    1/photons_per_pixel recovers the transparency map).
    """

    dims: tuple[int, int]
    arms: tuple[int, ...]
    sensor_models: tuple[SensorModel, ...]
    sensor_mats: tuple[sp.csr_array, ...]
    conversion_diags: tuple[np.ndarray, ...]
    cov_coefficients: np.ndarray
    photons_per_pixel: float
    forward: sp.csr_array
    ideal: float | np.ndarray
    extra_noise: np.ndarray | None = None
    axial_approximation: bool = False
    plan_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def pixel_count(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def readout_dim(self) -> int:
        return int(self.forward.shape[0])

    def noise_covariance(self, g) -> BlockNoiseCovariance:
        return assemble_noise_covariance(
            g, self.sensor_mats, self.cov_coefficients, self.extra_noise,
            self.photons_per_pixel,
        )

    def worst_case_counts(self) -> np.ndarray:
        """The admissible count vector maximizing every noise term: g = n·1."""
        return np.full(self.pixel_count, self.photons_per_pixel)

    def worst_case_noise_covariance(self) -> BlockNoiseCovariance:
        return self.noise_covariance(self.worst_case_counts())


def _normalize_extra_noise(extra_noise, arms, block_dims) -> np.ndarray | None:
    if extra_noise is None:
        return None
    extra = np.asarray(extra_noise, dtype=float)
    if extra.ndim == 0:
        extra = np.repeat(float(extra), len(arms))
    if extra.ndim == 1 and extra.size == len(arms):
        parts = [np.full(block_dims[i], extra[i]) for i in range(len(arms))]
        return np.concatenate(parts)
    return extra


def build_measurement_model(
    obj: ObjectImage,
    geom: OpticalGeometry,
    crystal: CrystalParams,
    sensors: SensorModel | Sequence[SensorModel] = SensorModel(),
    arms: Sequence[int] = (1, 2, 3),
    ideal: float | np.ndarray | None = None,
    extra_noise=None,
    axial_approximation: bool = False,
) -> MeasurementModel:
    """Assemble the acquisition model for the given object size and optics.

    ``sensors`` is either one SensorModel shared by every arm or a sequence
    aligned with ``arms``. ``ideal`` defaults to (1/photons_per_pixel)·I so
    that the estimand is the transparency map. ``extra_noise`` accepts a
    scalar, per-arm levels, a full diagonal, or a dense PSD matrix.
    """
    arms = tuple(int(a) for a in arms)
    if not arms or len(set(arms)) != len(arms) or any(a not in (1, 2, 3) for a in arms):
        raise ParameterError(f"arms must be a nonempty subset of (1, 2, 3), got {arms}")
    if isinstance(sensors, SensorModel):
        sensors = (sensors,) * len(arms)
    sensors = tuple(sensors)
    if len(sensors) != len(arms):
        raise ParameterError("need one SensorModel per arm")

    dims = obj.dims
    mats = tuple(sensor_matrix(s, dims) for s in sensors)
    convs = tuple(
        conversion_matrix(a, dims, geom, crystal, axial_approximation) for a in arms
    )
    forward = assemble_forward(mats, convs)

    _, cov_coeff = statistics_coefficients(dims, geom, crystal, axial_approximation)
    idx = [a - 1 for a in arms]
    cov_used = cov_coeff.reshape(-1, 3, 3)[:, idx][:, :, idx].copy()

    if ideal is None:
        ideal = 1.0 / obj.photons_per_pixel
    block_dims = tuple(m.shape[0] for m in mats)
    extra = _normalize_extra_noise(extra_noise, arms, block_dims)

    return MeasurementModel(
        dims=dims,
        arms=arms,
        sensor_models=sensors,
        sensor_mats=mats,
        conversion_diags=convs,
        cov_coefficients=cov_used,
        photons_per_pixel=obj.photons_per_pixel,
        forward=forward,
        ideal=ideal,
        extra_noise=extra,
        axial_approximation=axial_approximation,
    )
