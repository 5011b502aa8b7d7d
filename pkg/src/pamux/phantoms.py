"""Built-in test objects (transparency phantoms)."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .photon_stats import ObjectImage


def two_slits(dims: tuple[int, int], slit_width: int | None = None,
              separation: int | None = None) -> np.ndarray:
    """Two full-height unit-transparency slits on an opaque background.

    Defaults: each slit is width//8 pixels wide with a width//8 gap, the
    pair centered horizontally.
    """
    h, w = dims
    if slit_width is None:
        slit_width = max(1, w // 8)
    if separation is None:
        separation = max(1, w // 8)
    if slit_width < 1 or separation < 0:
        raise ParameterError("slit_width must be >= 1 and separation >= 0")
    total = 2 * slit_width + separation
    if total > w:
        raise ParameterError(
            f"two slits of width {slit_width} separated by {separation} "
            f"do not fit in {w} columns"
        )
    left = (w - total) // 2
    t = np.zeros((h, w))
    t[:, left : left + slit_width] = 1.0
    t[:, left + slit_width + separation : left + total] = 1.0
    return t


def constant(dims: tuple[int, int]) -> np.ndarray:
    """Fully transparent object."""
    return np.ones(dims)


def checkerboard(dims: tuple[int, int], block_size: int = 2) -> np.ndarray:
    """Alternating 0/1 blocks; the top-left block is transparent."""
    if block_size < 1:
        raise ParameterError(f"block_size must be >= 1, got {block_size}")
    h, w = dims
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return (((ii // block_size) + (jj // block_size)) % 2 == 0).astype(float)


_BUILDERS = {
    "two_slits": two_slits,
    "constant": constant,
    "checkerboard": checkerboard,
}


def builtin_phantom(name: str, dims: tuple[int, int],
                    photons_per_pixel: float = 1.0, **kwargs) -> ObjectImage:
    """Construct a named phantom as an ObjectImage.

    Known names: ``two_slits`` (slit_width, separation), ``constant``,
    ``checkerboard`` (block_size).
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ParameterError(
            f"unknown phantom {name!r}; choose from {sorted(_BUILDERS)}"
        ) from None
    try:
        transparency = builder(tuple(dims), **kwargs)
    except TypeError as exc:
        raise ParameterError(
            f"phantom {name!r} does not accept options {sorted(kwargs)}"
        ) from exc
    return ObjectImage(transparency=transparency,
                       photons_per_pixel=photons_per_pixel)
