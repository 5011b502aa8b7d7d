"""16-bit binary PGM (P5) image I/O and CSV export helpers.

Images store unit-interval values: writing maps t ∈ [0, 1] to
round(65535·t) big-endian; reading divides by the file's maxval, so 8-bit
files are promoted to [0, 1] by division by 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .photon_stats import ObjectImage

MAXVAL_16 = 65535


def save_image(path, image: np.ndarray) -> None:
    """Write a unit-interval image as 16-bit binary PGM."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.size == 0:
        raise ParameterError(f"expected a nonempty 2-D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ParameterError("image values must be finite")
    if np.any(image < 0.0) or np.any(image > 1.0):
        raise ParameterError("image values must lie in [0, 1]")
    h, w = image.shape
    raw = np.rint(image * MAXVAL_16).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{MAXVAL_16}\n".encode("ascii"))
        fh.write(raw.tobytes())


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated tokens, skipping '#' comments."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count and i < n:
        c = data[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < count:
        raise FormatError("truncated PGM header")
    return tokens, i


def load_image(path) -> np.ndarray:
    """Read a binary PGM into unit-interval floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:2] != b"P5":
        raise FormatError("not a binary PGM (missing P5 magic)")
    tokens, pos = _read_header_tokens(data, 4)
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}") from exc
    if w < 1 or h < 1:
        raise FormatError(f"invalid PGM dimensions {w}x{h}")
    if not (0 < maxval <= MAXVAL_16):
        raise FormatError(f"invalid PGM maxval {maxval}")
    # Exactly one whitespace byte separates the header from the raster.
    pos += 1
    bytes_per_sample = 2 if maxval > 255 else 1
    need = w * h * bytes_per_sample
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise FormatError(
            f"PGM raster has {len(raster)} bytes, expected {need}"
        )
    dtype = ">u2" if bytes_per_sample == 2 else "u1"
    raw = np.frombuffer(raster, dtype=dtype).reshape(h, w)
    if raw.max(initial=0) > maxval:
        raise FormatError(
            f"PGM sample value {int(raw.max())} exceeds declared maxval {maxval}"
        )
    return raw.astype(float) / float(maxval)


def load_object(path, photons_per_pixel: float = 1.0) -> ObjectImage:
    """Read a PGM file as a transparency distribution."""
    return ObjectImage(transparency=load_image(path),
                       photons_per_pixel=photons_per_pixel)


def write_arm_values_csv(path, values: np.ndarray, arms=None) -> None:
    """Write per-pixel per-arm values as CSV rows ``x,y,arm,value``.

    ``values`` has shape (arms, H, W); x is the column index, y the row
    index. ``arms`` optionally supplies the arm labels (default 1-based
    positions).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise ParameterError(f"expected shape (arms, H, W), got {values.shape}")
    k, h, w = values.shape
    labels = tuple(arms) if arms is not None else tuple(range(1, k + 1))
    if len(labels) != k:
        raise ParameterError(f"got {len(labels)} arm labels for {k} value planes")
    lines = ["x,y,arm,value"]
    for a in range(k):
        for y in range(h):
            row = values[a, y]
            lines.extend(f"{x},{y},{labels[a]},{float(row[x])!r}" for x in range(w))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
