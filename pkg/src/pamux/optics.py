"""Transfer matrices of two coupled three-wave parametric processes.

A pump-driven nonlinear medium couples three transverse Fourier modes of an
optical field: down-conversion feeds a signal/idler pair while up-conversion
simultaneously converts the signal to a third frequency. Collecting the mode
operators into the vector (a1, a2†, a3), propagation over a length z is the
linear map

    (a1, a2†, a3)_out = Q(q, z) · (a1, a2†, a3)_in,    Q(q, z) = exp(M(q) z),

where q is the transverse wave number. ``coupling_generator`` builds M,
``transfer_matrix`` evaluates Q numerically for any q, and
``transfer_matrix_axial`` gives the closed form on the optical axis (q = 0).
Because one component of the vector is a creation operator, Q preserves the
indefinite form J = diag(1, -1, 1) instead of being unitary: Q J Q† = J.

Units are SI throughout (couplings in 1/m, lengths in m, areas in m²).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateCouplingError,
    NoZeroCrossingError,
    NumericError,
    ParameterError,
)

#: Indefinite metric preserved by every transfer matrix.
J_METRIC = np.diag([1.0, -1.0, 1.0])

#: Eigenvector-matrix condition number beyond which the eigendecomposition
#: route for exp(Mz) is abandoned in favour of scaling-and-squaring.
_EIG_CONDITION_LIMIT = 1e8

#: Relative tolerance for the frequency bookkeeping of the two processes.
_FREQUENCY_RTOL = 1e-9


@dataclass(frozen=True)
class CrystalParams:
    """Coupling coefficients and interaction length of the nonlinear crystal.

    ``beta`` couples the signal/idler pair (down-conversion), ``gamma``
    couples the signal to the up-converted arm. Both have units 1/m;
    ``length_z`` is the interaction length in m. The coupling ratio
    ``epsilon = gamma/beta`` is always derived, never stored.
    """

    beta: float
    gamma: float
    length_z: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ParameterError(f"beta must be positive and finite, got {self.beta}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ParameterError(f"gamma must be nonnegative and finite, got {self.gamma}")
        if not (math.isfinite(self.length_z) and self.length_z >= 0.0):
            raise ParameterError(
                f"length_z must be nonnegative and finite, got {self.length_z}"
            )

    @property
    def epsilon(self) -> float:
        """Coupling ratio gamma/beta."""
        return self.gamma / self.beta

    @classmethod
    def from_dimensionless(
        cls, epsilon: float, beta_z: float, beta: float = 100.0
    ) -> "CrystalParams":
        """Build parameters from the dimensionless pair (epsilon, beta·z).

        Only the products beta·z and gamma·z enter axial results, so beta is
        a free scale; the default is 100 1/m (= 1 1/cm).
        """
        if not (0.0 <= epsilon):
            raise ParameterError(f"epsilon must be nonnegative, got {epsilon}")
        if beta_z < 0.0:
            raise ParameterError(f"beta_z must be nonnegative, got {beta_z}")
        return cls(beta=beta, gamma=epsilon * beta, length_z=beta_z / beta)


@dataclass(frozen=True)
class OpticalGeometry:
    """Wavelengths and imaging geometry shared by the three arms.

    The three wavelengths obey 1/lambda3 = 2/lambda1 + 1/lambda2 (the pump
    feeds lambda1+lambda2 while lambda3 is the up-converted sum of the pump
    and lambda1); construction enforces this bookkeeping to a relative
    tolerance of 1e-9. ``focal_length`` is the imaging lens focal length,
    ``pupil_area`` the system pupil, ``pixel_area`` the detector pixel.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    focal_length: float
    pupil_area: float
    pixel_area: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "focal_length", "pupil_area",
                     "pixel_area"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ParameterError(f"{name} must be positive and finite, got {value}")
        lhs = 1.0 / self.lambda3
        rhs = 2.0 / self.lambda1 + 1.0 / self.lambda2
        if abs(lhs - rhs) > _FREQUENCY_RTOL * abs(lhs):
            raise ParameterError(
                "frequency bookkeeping violated: 1/lambda3 = 2/lambda1 + 1/lambda2 "
                f"fails ({lhs:.12e} vs {rhs:.12e})"
            )

    def wave_number(self, arm: int) -> float:
        """Wave number 2*pi/lambda of the given arm (1, 2 or 3)."""
        if arm not in (1, 2, 3):
            raise ParameterError(f"arm must be 1, 2 or 3, got {arm}")
        return 2.0 * math.pi / getattr(self, f"lambda{arm}")

    @classmethod
    def from_inverse_wavelengths(
        cls,
        inv_lambda1: float,
        inv_lambda2: float,
        inv_lambda3: float,
        focal_length: float,
        pupil_area: float,
        pixel_area: float,
    ) -> "OpticalGeometry":
        """Build a geometry from inverse wavelengths (units 1/m)."""
        for name, value in (("inv_lambda1", inv_lambda1), ("inv_lambda2", inv_lambda2),
                            ("inv_lambda3", inv_lambda3)):
            if not (math.isfinite(value) and value > 0.0):
                raise ParameterError(f"{name} must be positive and finite, got {value}")
        return cls(
            lambda1=1.0 / inv_lambda1,
            lambda2=1.0 / inv_lambda2,
            lambda3=1.0 / inv_lambda3,
            focal_length=focal_length,
            pupil_area=pupil_area,
            pixel_area=pixel_area,
        )


@dataclass(frozen=True)
class TransferMatrix:
    """3x3 complex transfer matrix Q(q, z) with its evaluation point."""

    entries: np.ndarray
    q: float
    z: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=complex)
        if entries.shape != (3, 3):
            raise ParameterError(f"entries must be 3x3, got shape {entries.shape}")
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    def entry(self, n: int, m: int) -> complex:
        """Entry Q_nm with 1-based indices."""
        if not (1 <= n <= 3 and 1 <= m <= 3):
            raise ParameterError(f"indices must be in 1..3, got ({n}, {m})")
        return complex(self.entries[n - 1, m - 1])

    def metric_residual(self) -> float:
        """Max elementwise error of the invariant Q J Q† = J."""
        lhs = self.entries @ J_METRIC @ self.entries.conj().T
        return float(np.max(np.abs(lhs - J_METRIC)))


def coupling_generator(q: float, crystal: CrystalParams, geom: OpticalGeometry) -> np.ndarray:
    """Generator M(q) of the coupled-mode equations d/dz (a1, a2†, a3) = M (…).

    The diagonal carries the diffraction phases mu_j = q²/(2 k_j); the
    off-diagonals carry the two coupling coefficients.
    """
    if not math.isfinite(q):
        raise ParameterError(f"q must be finite, got {q}")
    b, g = crystal.beta, crystal.gamma
    mu = [q * q / (2.0 * geom.wave_number(j)) for j in (1, 2, 3)]
    return np.array(
        [
            [-1j * mu[0], 1j * b, 1j * g],
            [-1j * b, 1j * mu[1], 0.0],
            [1j * g, 0.0, -1j * mu[2]],
        ],
        dtype=complex,
    )


def _coupling_generator_grid(qs: np.ndarray, crystal: CrystalParams,
                             geom: OpticalGeometry) -> np.ndarray:
    """Vectorized ``coupling_generator`` for an array of wave numbers."""
    qs = np.asarray(qs, dtype=float)
    if not np.all(np.isfinite(qs)):
        raise ParameterError("all wave numbers must be finite")
    b, g = crystal.beta, crystal.gamma
    out = np.zeros(qs.shape + (3, 3), dtype=complex)
    q2 = qs * qs
    out[..., 0, 0] = -1j * q2 / (2.0 * geom.wave_number(1))
    out[..., 1, 1] = 1j * q2 / (2.0 * geom.wave_number(2))
    out[..., 2, 2] = -1j * q2 / (2.0 * geom.wave_number(3))
    out[..., 0, 1] = 1j * b
    out[..., 1, 0] = -1j * b
    out[..., 0, 2] = 1j * g
    out[..., 2, 0] = 1j * g
    return out


def _expm_stack(mz: np.ndarray) -> np.ndarray:
    """exp() of a stack of 3x3 matrices.

    Eigendecomposition is used wherever the eigenvector matrix is well
    conditioned; the remaining items fall back to scaling-and-squaring
    (scipy's Pade-based expm), which also covers defective generators.
    """
    mz = np.asarray(mz, dtype=complex)
    flat = mz.reshape(-1, 3, 3)
    out = np.empty_like(flat)

    w, v = np.linalg.eig(flat)
    sv = np.linalg.svd(v, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = sv[:, 0] / sv[:, -1]
    good = np.isfinite(cond) & (cond < _EIG_CONDITION_LIMIT)

    if np.any(good):
        vg = v[good]
        eg = np.exp(w[good])
        out[good] = (vg * eg[:, None, :]) @ np.linalg.inv(vg)
    for idx in np.nonzero(~good)[0]:
        out[idx] = scipy.linalg.expm(flat[idx])

    if not np.all(np.isfinite(out)):
        bad = np.nonzero(~np.isfinite(out).all(axis=(1, 2)))[0]
        raise NumericError(
            f"matrix exponential produced non-finite entries for {bad.size} "
            f"generator(s); first offending generator:\n{flat[bad[0]]}"
        )
    return out.reshape(mz.shape)


def transfer_matrix(q: float, z: float, crystal: CrystalParams,
                    geom: OpticalGeometry) -> TransferMatrix:
    """Transfer matrix Q(q, z) = exp(M(q) z) for a single wave number."""
    if z < 0.0 or not math.isfinite(z):
        raise ParameterError(f"z must be nonnegative and finite, got {z}")
    m = coupling_generator(q, crystal, geom)
    entries = _expm_stack(m * z)
    return TransferMatrix(entries=entries, q=float(q), z=float(z))


def transfer_matrix_grid(qs: np.ndarray, z: float, crystal: CrystalParams,
                         geom: OpticalGeometry) -> np.ndarray:
    """Stack of transfer matrices for an array of wave numbers.

    Returns an array of shape ``qs.shape + (3, 3)``.
    """
    if z < 0.0 or not math.isfinite(z):
        raise ParameterError(f"z must be nonnegative and finite, got {z}")
    m = _coupling_generator_grid(qs, crystal, geom)
    return _expm_stack(m * z)


def _axial_generator(crystal: CrystalParams) -> np.ndarray:
    b, g = crystal.beta, crystal.gamma
    return np.array(
        [[0.0, 1j * b, 1j * g], [-1j * b, 0.0, 0.0], [1j * g, 0.0, 0.0]],
        dtype=complex,
    )


def transfer_matrix_axial(crystal: CrystalParams, z: float) -> TransferMatrix:
    """Closed-form transfer matrix on the optical axis (q = 0).

    Seven of the nine entries have elementary expressions in
    Gamma = sqrt(beta² - gamma²); complex arithmetic continues them
    analytically to gamma > beta (cosh(ix) = cos x). The remaining two
    diagonal entries are taken from the numeric exponential of the axial
    generator.
    """
    if z < 0.0 or not math.isfinite(z):
        raise ParameterError(f"z must be nonnegative and finite, got {z}")
    b, g = crystal.beta, crystal.gamma
    if b == g:
        raise DegenerateCouplingError(
            "beta == gamma makes Gamma = 0; the closed form is singular here — "
            "use transfer_matrix(0.0, z, …), which handles the limit numerically"
        )
    gamma2 = b * b - g * g
    big_gamma = cmath.sqrt(gamma2)
    s = cmath.sinh(big_gamma * z)
    c = cmath.cosh(big_gamma * z)

    q12 = 1j * (b / big_gamma) * s
    q13 = 1j * (g / big_gamma) * s
    q23 = (b * g / gamma2) * (c - 1.0)
    q33 = 1.0 - (g * g / gamma2) * (c - 1.0)

    entries = _expm_stack(_axial_generator(crystal) * z)
    entries[0, 1] = q12
    entries[1, 0] = -q12
    entries[0, 2] = q13
    entries[2, 0] = q13
    entries[1, 2] = q23
    entries[2, 1] = -q23
    entries[2, 2] = q33
    return TransferMatrix(entries=entries, q=0.0, z=float(z))


def critical_lengths(crystal: CrystalParams) -> tuple[float, float]:
    """Lengths z0 < zm at which the axial gain |Q33(0)|² hits 0 and returns to 1.

    Both exist only for 0 < gamma < beta; the closed forms are
    z0 = arccosh((beta/gamma)²) / Gamma and zm = arccosh(2 (beta/gamma)² - 1)
    / Gamma with Gamma = sqrt(beta² - gamma²).
    """
    b, g = crystal.beta, crystal.gamma
    if g <= 0.0 or g >= b:
        raise NoZeroCrossingError(
            "the axial gain |Q33|² crosses zero only for 0 < gamma < beta; "
            f"got beta={b}, gamma={g}"
        )
    big_gamma = math.sqrt(b * b - g * g)
    ratio2 = (b / g) ** 2
    z0 = math.acosh(ratio2) / big_gamma
    zm = math.acosh(2.0 * ratio2 - 1.0) / big_gamma
    return z0, zm


@dataclass(frozen=True)
class GainMap:
    """Axial gain |Q33(0)|² over a grid of (epsilon, beta·z) values.

    ``gain[i, j]`` corresponds to ``epsilons[i]``, ``beta_z[j]``. The two
    overlay curves give beta·z0 and beta·zm per epsilon (the zero-gain and
    unit-gain lengths in dimensionless units).
    """

    epsilons: np.ndarray
    beta_z: np.ndarray
    gain: np.ndarray
    beta_z0: np.ndarray
    beta_zm: np.ndarray


def gain_map(epsilons, beta_z_values) -> GainMap:
    """Evaluate the axial gain |Q33(0)|² on an (epsilon, beta·z) grid."""
    eps = np.atleast_1d(np.asarray(epsilons, dtype=float))
    bz = np.atleast_1d(np.asarray(beta_z_values, dtype=float))
    if eps.size == 0 or bz.size == 0:
        raise ParameterError("gain map grids must be nonempty")
    if np.any((eps <= 0.0) | (eps >= 1.0)):
        raise ParameterError("epsilon values must lie strictly inside (0, 1)")
    if np.any(bz < 0.0):
        raise ParameterError("beta·z values must be nonnegative")

    gain = np.empty((eps.size, bz.size))
    z0 = np.empty(eps.size)
    zm = np.empty(eps.size)
    for i, e in enumerate(eps):
        crystal = CrystalParams(beta=1.0, gamma=e, length_z=0.0)
        for j, b in enumerate(bz):
            gain[i, j] = abs(transfer_matrix_axial(crystal, b).entry(3, 3)) ** 2
        z0[i], zm[i] = critical_lengths(crystal)
    return GainMap(epsilons=eps, beta_z=bz, gain=gain, beta_z0=z0, beta_zm=zm)


def pixel_center_offsets(n: int) -> np.ndarray:
    """Signed pixel-center offsets from the image center, in pixel units."""
    if n < 1:
        raise ParameterError(f"axis length must be >= 1, got {n}")
    return np.arange(n, dtype=float) - (n - 1) / 2.0


def pixel_q_map(dims: tuple[int, int], geom: OpticalGeometry) -> np.ndarray:
    """Transverse wave number q = k3·|r|/f at every pixel center.

    Pixel centers are laid out on a square grid of pitch sqrt(pixel_area)
    with the optical axis at the image center; the map is symmetric under
    the point reflection r -> -r.
    """
    h, w = dims
    pitch = math.sqrt(geom.pixel_area)
    yy = pixel_center_offsets(h)[:, None] * pitch
    xx = pixel_center_offsets(w)[None, :] * pitch
    r = np.hypot(yy, xx)
    return geom.wave_number(3) * r / geom.focal_length


@lru_cache(maxsize=64)
def transfer_grid(dims: tuple[int, int], geom: OpticalGeometry,
                  crystal: CrystalParams,
                  axial_approximation: bool = False) -> np.ndarray:
    """Per-pixel transfer matrices Q(q(r), length_z) of shape (H, W, 3, 3).

    With ``axial_approximation`` the on-axis matrix Q(0) is broadcast to
    every pixel. The returned array is cached and read-only.
    """
    h, w = dims
    if h < 1 or w < 1:
        raise ParameterError(f"dims must be positive, got {dims}")
    if axial_approximation:
        q0 = transfer_matrix(0.0, crystal.length_z, crystal, geom).entries
        grid = np.broadcast_to(q0, (h, w, 3, 3)).copy()
    else:
        qs = pixel_q_map(dims, geom)
        grid = transfer_matrix_grid(qs, crystal.length_z, crystal, geom)
    grid.flags.writeable = False
    return grid
