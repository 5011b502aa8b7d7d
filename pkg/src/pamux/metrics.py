"""Reconstruction quality metrics: MSE, SNR, and SSIM."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

#: SNR ceiling reported when the MSE underflows to zero.
SNR_CAP_DB = 300.0

_SSIM_WINDOW = 8
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(estimate, truth) -> float:
    """Mean squared difference."""
    a, b = _check_pair(estimate, truth)
    return float(np.mean((a - b) ** 2))


def snr(estimate, truth) -> float:
    """10·log10(mean(truth²)/MSE) in dB, capped at SNR_CAP_DB."""
    a, b = _check_pair(estimate, truth)
    err = float(np.mean((a - b) ** 2))
    sig = float(np.mean(b ** 2))
    if err == 0.0:
        return SNR_CAP_DB
    if sig == 0.0:
        return -SNR_CAP_DB
    return float(min(10.0 * np.log10(sig / err), SNR_CAP_DB))


def _window_sums(a: np.ndarray, k: int) -> np.ndarray:
    """Sums over every fully-contained k×k window (valid positions only)."""
    c = np.cumsum(np.cumsum(a, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def ssim(estimate, truth) -> float:
    """Mean structural similarity over sliding 8×8 uniform windows.

    Uses the unit dynamic range of transparency images (stabilizers
    C1 = 0.01², C2 = 0.03²). Images smaller than the window are compared
    over a single window covering the whole image.
    """
    a, b = _check_pair(estimate, truth)
    if a.ndim != 2:
        raise ParameterError(f"expected 2-D images, got shape {a.shape}")
    k = min(_SSIM_WINDOW, *a.shape)
    n = float(k * k)
    mu_a = _window_sums(a, k) / n
    mu_b = _window_sums(b, k) / n
    var_a = _window_sums(a * a, k) / n - mu_a ** 2
    var_b = _window_sums(b * b, k) / n - mu_b ** 2
    cov = _window_sums(a * b, k) / n - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


def metrics(estimate, truth) -> tuple[float, float, float]:
    """(mse, snr, ssim) of an estimate against the ground truth."""
    return mse(estimate, truth), snr(estimate, truth), ssim(estimate, truth)
