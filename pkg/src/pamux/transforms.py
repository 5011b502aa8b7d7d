"""Orthonormal sparsity transforms: separable multi-level Haar and DCT.

Both transforms are exactly orthonormal: forward∘inverse is the identity to
machine precision and the 2-norm is preserved. The Haar transform is the
separable (tensor-product) multi-level decomposition — the 1-D pyramid is
applied fully along each axis — which requires power-of-two extents; callers
that need other sizes pad by edge replication (see ``pad_to_pow2``). The DCT
is the orthonormal type-II transform with its type-III inverse and works for
any extent.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import ParameterError

_SQRT2 = math.sqrt(2.0)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_pow2(shape) -> None:
    if not all(is_power_of_two(int(n)) for n in shape):
        raise ParameterError(
            f"Haar transform requires power-of-two extents, got {tuple(shape)}; "
            "pad with pad_to_pow2 first"
        )


def _haar_axis_forward(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0).copy()
    m = a.shape[0]
    while m > 1:
        half = m // 2
        even = a[0:m:2]
        odd = a[1:m:2]
        s = (even + odd) / _SQRT2
        d = (even - odd) / _SQRT2
        a[:half] = s
        a[half:m] = d
        m = half
    return np.moveaxis(a, 0, axis)


def _haar_axis_inverse(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0).copy()
    n = a.shape[0]
    m = 1
    while m < n:
        s = a[:m].copy()
        d = a[m : 2 * m].copy()
        a[0 : 2 * m : 2] = (s + d) / _SQRT2
        a[1 : 2 * m : 2] = (s - d) / _SQRT2
        m *= 2
    return np.moveaxis(a, 0, axis)


def haar_forward(image: np.ndarray) -> np.ndarray:
    """Separable multi-level 2-D Haar coefficients of a power-of-two image.

    Coefficient (0, 0) is the global average times sqrt(pixel count); the
    remaining coefficients are detail terms ordered coarsest-first along
    each axis.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {image.shape}")
    _check_pow2(image.shape)
    return _haar_axis_forward(_haar_axis_forward(image, 0), 1)


def haar_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of ``haar_forward``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2:
        raise ParameterError(f"expected a 2-D array, got shape {coeffs.shape}")
    _check_pow2(coeffs.shape)
    return _haar_axis_inverse(_haar_axis_inverse(coeffs, 0), 1)


def dct_forward(image: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II DCT coefficients."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {image.shape}")
    return scipy.fft.dctn(image, type=2, norm="ortho")


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse (type-III) of ``dct_forward``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2:
        raise ParameterError(f"expected a 2-D array, got shape {coeffs.shape}")
    return scipy.fft.idctn(coeffs, type=2, norm="ortho")


def identity_forward(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=float).copy()


def identity_inverse(coeffs: np.ndarray) -> np.ndarray:
    return np.asarray(coeffs, dtype=float).copy()


TRANSFORMS = {
    "identity": (identity_forward, identity_inverse),
    "haar": (haar_forward, haar_inverse),
    "dct": (dct_forward, dct_inverse),
}


def transform_pair(name: str):
    """(forward, inverse) callables for a named transform."""
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise ParameterError(
            f"unknown transform {name!r}; choose from {sorted(TRANSFORMS)}"
        ) from None


@lru_cache(maxsize=32)
def _axis_matrix(n: int, name: str) -> np.ndarray:
    """Dense 1-D transform matrix T with rows = transformed basis vectors."""
    eye = np.eye(n)
    if name == "haar":
        cols = _haar_axis_forward(eye, 0)
    elif name == "dct":
        cols = scipy.fft.dct(eye, type=2, norm="ortho", axis=0)
    elif name == "identity":
        cols = eye
    else:
        raise ParameterError(f"unknown transform {name!r}")
    cols.flags.writeable = False
    return cols


def dense_matrix_2d(dims: tuple[int, int], name: str) -> np.ndarray:
    """Dense transform matrix acting on row-major flattened images."""
    h, w = dims
    return np.kron(_axis_matrix(h, name), _axis_matrix(w, name))


def transformed_variances(variance_image: np.ndarray, name: str) -> np.ndarray:
    """diag(T Σ Tᵀ) for a per-pixel diagonal covariance Σ.

    ``variance_image`` holds the diagonal of Σ in image layout. Because both
    transforms are separable, the coefficient variances are obtained by
    applying the elementwise-squared 1-D matrices along each axis.
    """
    v = np.asarray(variance_image, dtype=float)
    if v.ndim != 2:
        raise ParameterError(f"expected a 2-D variance image, got shape {v.shape}")
    if np.any(v < 0.0):
        raise ParameterError("variances must be nonnegative")
    if name == "identity":
        return v.copy()
    if name == "haar":
        _check_pow2(v.shape)
    sr = _axis_matrix(v.shape[0], name) ** 2
    sc = _axis_matrix(v.shape[1], name) ** 2
    return sr @ v @ sc.T


def pad_to_pow2(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-replicate an image up to the next power-of-two extents.

    Returns the padded image and the original (H, W) so callers can crop
    after the inverse transform.
    """
    image = np.asarray(image, dtype=float)
    h, w = image.shape
    th = 1 << max(0, (h - 1).bit_length())
    tw = 1 << max(0, (w - 1).bit_length())
    if (th, tw) == (h, w):
        return image.copy(), (h, w)
    return np.pad(image, ((0, th - h), (0, tw - w)), mode="edge"), (h, w)
