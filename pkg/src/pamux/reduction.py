"""Measurement reduction: linear estimation, box projection, refinement,
sparsity thresholding, and the six-step reconstruction pipeline.

Given a readout xi = A g + nu with noise covariance Sigma_nu and a
feature-of-interest operator U (default a scalar multiple of the identity),
the linear reduction estimator of U g is

    R* xi = U (Aᵀ Sigma_nu⁻¹ A)⁻ Aᵀ Sigma_nu⁻¹ xi,

with estimate covariance Sigma_{R*xi} = U (Aᵀ Sigma_nu⁻¹ A)⁻ Uᵀ and
worst-case mean squared error h = trace(Sigma_{R*xi}). Prior knowledge that
the estimand lies in the unit box is applied by projecting in the
Mahalanobis metric of Sigma_{R*xi} and by a fixed-point refinement that
re-solves the measurement jointly with the current constrained estimate.
The full pipeline adds an orthonormal sparsity transform with hard
thresholding at tau standard deviations per coefficient.

Noise covariances here are always evaluated at the worst admissible object
(every pixel fully transparent), which maximizes every noise term; the
resulting errors are upper bounds for any true object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConvergenceError,
    DegenerateModelError,
    EstimabilityError,
    NumericError,
    PamuxError,
    ParameterError,
)
from .measurement import BlockNoiseCovariance, MeasurementModel, _sensor_matrix_1d
from .transforms import transform_pair, transformed_variances

#: Largest readout dimension for which structured covariances are densified.
_DENSE_LIMIT = 6144


@dataclass(frozen=True)
class ReductionConfig:
    """Tuning knobs of the reduction pipeline."""

    tau: float = 0.0
    transform: str = "identity"
    pinv_tolerance: float = 1e-10
    fixed_point_tol: float = 1e-10
    max_fixed_point_iters: int = 500
    qp_tol: float = 1e-8
    qp_max_iters: int = 20000

    def __post_init__(self):
        if self.tau < 0.0:
            raise ParameterError(f"tau must be >= 0, got {self.tau}")
        for name in ("pinv_tolerance", "fixed_point_tol", "qp_tol"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"{name} must be > 0")
        for name in ("max_fixed_point_iters", "qp_max_iters"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        transform_pair(self.transform)


@dataclass
class ReductionOutcome:
    """Result of the reduction pipeline.

    ``estimate_covariance`` is the covariance of the *linear* estimate under
    the worst-case object; it upper-bounds the error of the constrained
    estimate. It is a dense matrix or, when diagonal, a sparse diagonal.
    """

    estimate: np.ndarray
    linear_estimate: np.ndarray
    estimate_covariance: object
    worst_case_mse: float
    iterations: int
    thresholded_fraction: float
    converged: bool = True
    metadata: dict = field(default_factory=dict)


class EstimabilityResult(NamedTuple):
    ok: bool
    residual: float


# ---------------------------------------------------------------------------
# basic linear algebra helpers


def _as_dense(a) -> np.ndarray:
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a, dtype=float)


def _symmetrize(s: np.ndarray) -> np.ndarray:
    return 0.5 * (s + s.T)


def _densify_sigma(sigma_nu, dim: int) -> np.ndarray:
    if isinstance(sigma_nu, BlockNoiseCovariance):
        if sigma_nu.dim > _DENSE_LIMIT:
            raise NumericError(
                f"noise covariance of dimension {sigma_nu.dim} is too large for "
                "the dense solver; use the model-based pipeline "
                "(reduce_with_sparsity), which exploits its block structure"
            )
        return sigma_nu.dense()
    sigma = _as_dense(sigma_nu)
    if sigma.shape != (dim, dim):
        raise ParameterError(f"sigma_nu has shape {sigma.shape}, expected {(dim, dim)}")
    return sigma


def _whitener(sigma: np.ndarray, rtol: float) -> np.ndarray:
    """X with Sigma⁻¹ = Xᵀ X, regularizing by lambda·I if Sigma is singular."""
    w, v = np.linalg.eigh(_symmetrize(sigma))
    wmax = w[-1]
    if wmax <= 0.0:
        raise DegenerateModelError("noise covariance is not positive on any direction")
    if w[0] <= rtol * wmax:
        lam = rtol * float(np.trace(sigma)) / sigma.shape[0]
        w = np.maximum(w, 0.0) + lam
        if w[0] <= 0.0:
            raise DegenerateModelError("noise covariance is identically zero")
    return (v / np.sqrt(w)).T


def _pinv_psd(g: np.ndarray, rtol: float) -> tuple[np.ndarray, int]:
    """Eigenvalue pseudoinverse of a PSD matrix at a relative cutoff."""
    w, v = np.linalg.eigh(_symmetrize(g))
    wmax = w[-1] if w.size else 0.0
    if wmax <= 0.0:
        raise DegenerateModelError(
            "information matrix has no singular value above the cutoff"
        )
    keep = w > rtol * wmax
    if not np.any(keep):
        raise DegenerateModelError(
            "all singular values of the information matrix fall below the cutoff"
        )
    vk = v[:, keep]
    ginv = (vk / w[keep]) @ vk.T
    return ginv, int(np.count_nonzero(keep))


def _u_is_scalar(u) -> bool:
    return np.ndim(u) == 0


def _u_apply(u, x: np.ndarray) -> np.ndarray:
    if _u_is_scalar(u):
        return float(u) * x
    u = np.asarray(u)
    if u.ndim == 1:
        return u * x
    return u @ x


def _u_quadratic(u, m: np.ndarray) -> np.ndarray:
    """U M Uᵀ for scalar, diagonal (1-D), or dense U."""
    if _u_is_scalar(u):
        return float(u) ** 2 * m
    u = np.asarray(u)
    if u.ndim == 1:
        return (u[:, None] * m) * u[None, :]
    return u @ m @ u.T


# ---------------------------------------------------------------------------
# contract operations (dense general path)


def linear_reduction(xi, A, sigma_nu, u, cfg: ReductionConfig):
    """Unbiased linear reduction estimate of U g from xi = A g + nu.

    Returns ``(estimate, estimate_covariance, worst_case_mse)``. ``u`` may be
    a scalar s (meaning s·I), a diagonal given as a 1-D array, or a dense
    matrix. Singular noise covariances are regularized by adding
    pinv_tolerance·trace/dim to the diagonal; the information matrix is
    inverted through an eigenvalue pseudoinverse with relative cutoff
    pinv_tolerance.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    a = _as_dense(A)
    if a.ndim != 2 or a.shape[0] != xi.size:
        raise ParameterError(
            f"operator shape {a.shape} incompatible with readout of size {xi.size}"
        )
    sigma = _densify_sigma(sigma_nu, xi.size)
    x = _whitener(sigma, cfg.pinv_tolerance)
    aw = x @ a
    g = aw.T @ aw
    ginv, _ = _pinv_psd(g, cfg.pinv_tolerance)
    ghat = ginv @ (aw.T @ (x @ xi))
    rxi = _u_apply(u, ghat)
    sigma_rxi = _u_quadratic(u, ginv)
    h = float(np.trace(np.atleast_2d(sigma_rxi)))
    return rxi, sigma_rxi, h


def estimability_check(A, u, cfg: ReductionConfig | None = None) -> EstimabilityResult:
    """Whether U g is estimable from A g: residual ‖U(I − A⁻A)‖_F ≈ 0.

    Returns the residual and whether it is below pinv_tolerance·‖U‖_F. For
    tall sparse operators a full-column-rank certificate via extremal
    eigenvalues of AᵀA avoids the dense decomposition.
    """
    rtol = cfg.pinv_tolerance if cfg is not None else 1e-10
    m, n = A.shape

    if sp.issparse(A) and m >= n and n >= 64:
        try:
            ata = (A.T @ A).tocsc()
            lmax = float(spla.eigsh(ata, k=1, which="LM",
                                    return_eigenvectors=False)[0])
            lmin = float(spla.eigsh(ata, k=1, sigma=0, which="LM",
                                    return_eigenvectors=False)[0])
            if lmax > 0 and lmin > 4.0 * rtol * rtol * lmax:
                return EstimabilityResult(True, 0.0)
        except Exception:
            pass  # certificate unavailable; fall back to the dense path

    a = _as_dense(A)
    _, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > rtol * s[0]))
    vr = vt[:rank]
    if _u_is_scalar(u):
        # exact closed form for U = u·I: the deficiency has dimension n − rank
        unorm = abs(float(u)) * math.sqrt(n)
        residual = abs(float(u)) * math.sqrt(max(n - rank, 0))
    else:
        udense = _as_dense(u)
        if udense.ndim == 1:
            udense = np.diag(udense)
        unorm = float(np.linalg.norm(udense))
        # U(I − VrᵀVr) computed directly to avoid cancellation of norms
        residual = float(np.linalg.norm(udense - (udense @ vr.T) @ vr))
    if unorm <= 0.0:
        return EstimabilityResult(True, 0.0)
    return EstimabilityResult(residual < rtol * unorm, residual)


def _kkt_violation(v: np.ndarray, grad: np.ndarray) -> float:
    viol = np.where(
        v <= 0.0,
        np.maximum(0.0, -grad),
        np.where(v >= 1.0, np.maximum(0.0, grad), np.abs(grad)),
    )
    return float(np.max(viol)) if viol.size else 0.0


def _sqrt_factor(precision: np.ndarray) -> np.ndarray:
    """A matrix L with L·Lᵀ = P, preferring the Cholesky factor."""
    try:
        return np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        w, vecs = np.linalg.eigh(precision)
        w = np.clip(w, 0.0, None)
        return vecs * np.sqrt(w)


def _box_qp(target: np.ndarray, precision: np.ndarray, qp_tol: float,
            max_iters: int) -> np.ndarray:
    """argmin over [0,1]^d of (v − target)ᵀ P (v − target), P positive definite.

    A bounded-variable least-squares solve (finite-termination active set)
    handles almost every instance outright; an accelerated projected-gradient
    loop with periodic exact solves on the free set mops up the rest.
    """
    d = target.size
    lmax = float(np.linalg.eigvalsh(precision)[-1])
    if lmax <= 0.0:
        raise DegenerateModelError("projection metric is not positive definite")
    step = 1.0 / lmax

    v = np.clip(target, 0.0, 1.0)
    grad = precision @ (v - target)
    best_v, best_r = v.copy(), _kkt_violation(v, grad)
    if best_r <= qp_tol:
        return v

    # (v−t)ᵀP(v−t) = ‖Lᵀv − Lᵀt‖² with L the square root of P
    low_t = _sqrt_factor(precision).T
    try:
        res = scipy.optimize.lsq_linear(low_t, low_t @ target,
                                        bounds=(0.0, 1.0), method="bvls",
                                        tol=1e-14, max_iter=max(3 * d, 100))
        cand = np.clip(res.x, 0.0, 1.0)
        r = _kkt_violation(cand, precision @ (cand - target))
        if r < best_r:
            best_v, best_r = cand.copy(), r
        if r <= qp_tol:
            return cand
        v = cand
    except (ValueError, np.linalg.LinAlgError):
        pass  # fall through to the iterative scheme

    y = v.copy()
    t = 1.0
    iters = 0
    while iters < max_iters:
        # accelerated projected-gradient sweep
        for _ in range(10):
            iters += 1
            grad_y = precision @ (y - target)
            v_new = np.clip(y - step * grad_y, 0.0, 1.0)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = v_new + ((t - 1.0) / t_new) * (v_new - v)
            v, t = v_new, t_new

        # active-set polish: exact solve on the free coordinates
        for _ in range(40):
            iters += 1
            grad = precision @ (v - target)
            lo = (v <= 0.0) & (grad >= 0.0)
            hi = (v >= 1.0) & (grad <= 0.0)
            free = ~(lo | hi)
            if not np.any(free):
                break
            diff = v - target
            rhs = -precision[np.ix_(free, ~free)] @ diff[~free]
            try:
                df = np.linalg.solve(precision[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                break
            v_next = v.copy()
            v_next[free] = np.clip(target[free] + df, 0.0, 1.0)
            if np.array_equal(v_next, v):
                break
            v = v_next

        grad = precision @ (v - target)
        r = _kkt_violation(v, grad)
        if r < best_r:
            best_v, best_r = v.copy(), r
        if r <= qp_tol:
            return v
        y, t = v.copy(), 1.0

    raise ConvergenceError(
        f"box projection did not reach KKT residual {qp_tol:.1e} in "
        f"{max_iters} iterations (best {best_r:.3e})",
        best=best_v,
        residual=best_r,
    )


def _sigma_is_diagonal(sigma) -> bool:
    if np.ndim(sigma) <= 1:
        return True
    if sp.issparse(sigma):
        off = sigma - sp.diags_array(sigma.diagonal())
        return off.count_nonzero() == 0
    s = np.asarray(sigma)
    return bool(np.all(s == np.diag(np.diagonal(s))))


def mahalanobis_project(point, sigma, cfg: ReductionConfig) -> np.ndarray:
    """Projection of a point onto the unit box in the Sigma⁻¹ metric.

    For diagonal Sigma the projection is the componentwise clamp; otherwise
    a convex box-constrained quadratic program is solved to the configured
    KKT residual. Singular Sigma is regularized exactly as in
    ``linear_reduction``.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if _sigma_is_diagonal(sigma):
        return np.clip(point, 0.0, 1.0)
    sigma_d = _as_dense(sigma)
    if sigma_d.shape != (point.size, point.size):
        raise ParameterError(
            f"sigma has shape {sigma_d.shape}, expected {(point.size,) * 2}"
        )
    x = _whitener(sigma_d, cfg.pinv_tolerance)
    precision = x.T @ x
    return _box_qp(point, precision, cfg.qp_tol, cfg.qp_max_iters)


def _oscillating(residuals: list[float], window: int = 5) -> bool:
    if len(residuals) < window:
        return False
    tail = residuals[-window:]
    return any(tail[i + 1] > tail[i] for i in range(window - 1))


def refine_with_constraints(xi, A, sigma_nu, u, sigma_rxi,
                            cfg: ReductionConfig):
    """Constrained fixed-point refinement of the linear estimate.

    Iterates v ← Π(R̃(xi, v)) where R̃ is the reduction operator of the
    device stacked with the ideal one, (A; U), under block-diagonal noise
    diag(Sigma_nu, Sigma_{R*xi}); the initial iterate is Π(R* xi). Returns
    ``(estimate, iterations, converged)``; non-convergence is flagged, not
    raised. A relaxation factor of 1/2 engages automatically if the
    residual history oscillates.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    a = _as_dense(A)
    n = a.shape[1]
    sigma = _densify_sigma(sigma_nu, xi.size)
    x = _whitener(sigma, cfg.pinv_tolerance)
    aw = x @ a
    b = aw.T @ (x @ xi)
    g = aw.T @ aw

    diag_sigma_rxi = _sigma_is_diagonal(sigma_rxi)
    if diag_sigma_rxi:
        s_diag = (np.asarray(sigma_rxi).diagonal() if np.ndim(sigma_rxi) == 2
                  else np.asarray(sigma_rxi, dtype=float) * np.ones(n))
        if sp.issparse(sigma_rxi):
            s_diag = sigma_rxi.diagonal()
        s_diag = np.asarray(s_diag, dtype=float).reshape(-1)
        lam = cfg.pinv_tolerance * float(np.sum(s_diag)) / max(n, 1)
        s_diag = np.where(s_diag <= lam, s_diag + lam, s_diag)
        if np.any(s_diag <= 0.0):
            raise DegenerateModelError("estimate covariance is identically zero")
        prec_r = np.diag(1.0 / s_diag)
    else:
        sr = _whitener(_as_dense(sigma_rxi), cfg.pinv_tolerance)
        prec_r = sr.T @ sr

    if _u_is_scalar(u) or np.ndim(u) == 1:
        ud = np.diag(np.asarray(u, dtype=float) * np.ones(n))
    else:
        ud = _as_dense(u)
    gt = g + ud.T @ prec_r @ ud
    gt_inv, _ = _pinv_psd(gt, cfg.pinv_tolerance)

    ginv, _ = _pinv_psd(g, cfg.pinv_tolerance)
    rxi = ud @ (ginv @ b)

    project = lambda w: mahalanobis_project(w, sigma_rxi, cfg)
    v = project(rxi)
    residuals: list[float] = []
    relax = 1.0
    converged = False
    iters = 0
    for iters in range(1, cfg.max_fixed_point_iters + 1):
        w = ud @ (gt_inv @ (b + ud.T @ (prec_r @ v)))
        v_new = project(w)
        resid = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        residuals.append(resid)
        if relax == 1.0 and _oscillating(residuals):
            relax = 0.5
        v = v + relax * (v_new - v) if relax != 1.0 else v_new
        if resid < cfg.fixed_point_tol:
            converged = True
            break
    return v, iters, converged


def threshold_components(coeffs: np.ndarray, sigmas: np.ndarray,
                         tau: float) -> np.ndarray:
    """Hard-threshold coefficients: zero where |c_i| < tau·sigma_i."""
    coeffs = np.asarray(coeffs, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != coeffs.shape:
        raise ParameterError(
            f"sigma shape {sigmas.shape} differs from coefficients {coeffs.shape}"
        )
    if np.any(sigmas < 0.0):
        raise ParameterError("sigmas must be nonnegative")
    if tau < 0.0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    return np.where(np.abs(coeffs) < tau * sigmas, 0.0, coeffs)


# ---------------------------------------------------------------------------
# model-based solver plan


class ReductionPlan:
    """Precomputed reduction operators for one measurement model.

    Built once per (model, pinv tolerance) and reused across readouts and
    thresholds. Two routes exist:

    * the structured route, exact when every arm's window matrix is square
      and invertible and there is no extra device noise — the information
      matrix is then diagonal and all operators act per pixel;
    * the dense route for everything else (subject to a size guard).
    """

    def __init__(self, model: MeasurementModel, cfg: ReductionConfig):
        self.model = model
        self.pinv_tolerance = cfg.pinv_tolerance
        self.dims = model.dims
        self.n_pixels = model.pixel_count
        self.u = model.ideal
        self._sigma_cache: dict[str, np.ndarray] = {}
        self._mode = None

        worst = model.worst_case_counts()
        self._try_structured(worst)
        if self._mode is None:
            self._build_dense(worst)
        self._estimability()

    # -- construction -----------------------------------------------------

    def _try_structured(self, worst: np.ndarray) -> None:
        model = self.model
        if model.extra_noise is not None:
            return
        if not (_u_is_scalar(self.u) or np.ndim(self.u) == 1):
            return
        lus = []
        for mat, sensor in zip(model.sensor_mats, model.sensor_models):
            if mat.shape[0] != mat.shape[1]:
                return
            h, w = model.dims
            if sensor.stride != 1 or sensor.offset != 0:
                return
            th = sp.csc_array(_sensor_matrix_1d(h, sensor))
            tw = sp.csc_array(_sensor_matrix_1d(w, sensor))
            try:
                lu_h = spla.splu(th)
                lu_w = spla.splu(tw)
            except RuntimeError:
                return
            lus.append((lu_h, lu_w, sensor.response))

        pix = model.cov_coefficients * worst[:, None, None]
        w_eig = np.linalg.eigvalsh(pix)
        scale = np.max(np.abs(w_eig), axis=1)
        if np.any(w_eig[:, 0] <= 1e-12 * np.maximum(scale, 1e-300)):
            return
        sinv = np.linalg.inv(pix)
        sinv = 0.5 * (sinv + np.swapaxes(sinv, 1, 2))

        c = np.stack(model.conversion_diags, axis=1)  # (Np, k)
        g_diag = np.einsum("pi,pij,pj->p", c, sinv, c)
        if np.any(g_diag <= 0.0):
            return

        self._mode = "structured"
        self._lus = lus
        self._sinv = sinv
        self._cstack = c
        self._g_diag = g_diag
        u = np.asarray(self.u, dtype=float)
        uvec = u * np.ones(self.n_pixels) if u.ndim == 0 else u
        self._uvec = uvec
        self._var_rxi = uvec * uvec / g_diag
        self.worst_case_mse = float(np.sum(self._var_rxi))
        prec_r = 1.0 / self._var_rxi
        gt = g_diag + uvec * uvec * prec_r
        self._w1_scale = uvec / gt
        self._d2 = (uvec * uvec * prec_r) / gt
        self._rxi_scale = uvec / g_diag

    def _build_dense(self, worst: np.ndarray) -> None:
        model = self.model
        if model.readout_dim > _DENSE_LIMIT or self.n_pixels > 2048:
            raise NumericError(
                "this sensor configuration requires the dense solver at a size "
                f"beyond its guard ({model.readout_dim} readouts, "
                f"{self.n_pixels} pixels); use stride-1, offset-0 sensors "
                "without extra device noise, or shrink the image"
            )
        sigma = model.noise_covariance(worst)
        dense = sigma.dense()
        self._x = _whitener(dense, self.pinv_tolerance)
        a = model.forward.toarray()
        self._aw = self._x @ a
        g = self._aw.T @ self._aw
        self._ginv, self._rank = _pinv_psd(g, self.pinv_tolerance)
        n = self.n_pixels
        if _u_is_scalar(self.u) or np.ndim(self.u) == 1:
            ud = np.diag(np.asarray(self.u, dtype=float) * np.ones(n))
        else:
            ud = _as_dense(self.u)
        self._ud = ud
        self._sigma_rxi_dense = ud @ self._ginv @ ud.T
        self.worst_case_mse = float(np.trace(self._sigma_rxi_dense))
        sr = _whitener(self._sigma_rxi_dense, self.pinv_tolerance)
        prec_r = sr.T @ sr
        self._prec_r = prec_r
        gt = g + ud.T @ prec_r @ ud
        self._gt_inv, _ = _pinv_psd(gt, self.pinv_tolerance)
        self._mode = "dense"

    def _estimability(self) -> None:
        if self._mode == "structured":
            # G diagonal and positive on every pixel certifies full column
            # rank of A, hence a zero estimability residual for any U.
            self.estimable = True
            self.estimability_residual = 0.0
        else:
            cfg = ReductionConfig(pinv_tolerance=self.pinv_tolerance)
            res = estimability_check(self.model.forward, self.u, cfg)
            self.estimable = res.ok
            self.estimability_residual = res.residual

    # -- covariance views ---------------------------------------------------

    @property
    def sigma_rxi_is_diagonal(self) -> bool:
        return self._mode == "structured"

    def sigma_rxi(self):
        if self._mode == "structured":
            return sp.dia_array(
                (self._var_rxi[None, :], [0]),
                shape=(self.n_pixels, self.n_pixels),
            )
        return self._sigma_rxi_dense

    def sigma_rxi_diag(self) -> np.ndarray:
        if self._mode == "structured":
            return self._var_rxi.copy()
        return np.diagonal(self._sigma_rxi_dense).copy()

    def transform_sigmas(self, name: str) -> np.ndarray:
        """Worst-case coefficient deviations sqrt(diag(T Σ Tᵀ)), image layout."""
        if name not in self._sigma_cache:
            if self._mode == "structured":
                var_img = self._var_rxi.reshape(self.dims)
                tvar = transformed_variances(var_img, name)
            else:
                tvar = self._transformed_diag_dense(name)
            self._sigma_cache[name] = np.sqrt(np.maximum(tvar, 0.0))
        return self._sigma_cache[name]

    def _transformed_diag_dense(self, name: str) -> np.ndarray:
        fwd, _ = transform_pair(name)
        sigma = self._sigma_rxi_dense
        n = sigma.shape[0]
        h, w = self.dims
        m = np.empty_like(sigma)
        for j in range(n):
            m[:, j] = fwd(sigma[:, j].reshape(h, w)).reshape(-1)
        diag = np.empty(n)
        for i in range(n):
            diag[i] = fwd(m[i].reshape(h, w)).reshape(-1)[i]
        return diag.reshape(h, w)

    # -- per-readout operations ----------------------------------------------

    def _information_vector(self, xi: np.ndarray) -> np.ndarray:
        """Aᵀ Sigma_nu⁻¹ xi through the structured factorization."""
        model = self.model
        parts = np.empty((self.n_pixels, len(model.arms)))
        start = 0
        h, w = self.dims
        for i, (lu_h, lu_w, response) in enumerate(self._lus):
            block = xi[start : start + self.n_pixels].reshape(h, w)
            y = lu_h.solve(block)
            y = lu_w.solve(y.T).T
            parts[:, i] = y.reshape(-1) / response
            start += self.n_pixels
        m = np.einsum("pij,pj->pi", self._sinv, parts)
        return np.einsum("pi,pi->p", self._cstack, m)

    def apply_rstar(self, xi) -> np.ndarray:
        """Linear reduction estimate R* xi."""
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if self._mode == "structured":
            return self._rxi_scale * self._information_vector(xi)
        b = self._aw.T @ (self._x @ xi)
        return self._ud @ (self._ginv @ b)

    def refine(self, xi, cfg: ReductionConfig):
        """Fixed-point box refinement; returns (estimate, iterations, converged)."""
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if self._mode == "structured":
            num = self._information_vector(xi)
            rxi = self._rxi_scale * num
            w1 = self._w1_scale * num
            v = np.clip(rxi, 0.0, 1.0)
            residuals: list[float] = []
            relax = 1.0
            converged = False
            iters = 0
            for iters in range(1, cfg.max_fixed_point_iters + 1):
                v_new = np.clip(w1 + self._d2 * v, 0.0, 1.0)
                resid = float(np.max(np.abs(v_new - v)))
                residuals.append(resid)
                if relax == 1.0 and _oscillating(residuals):
                    relax = 0.5
                v = v + relax * (v_new - v) if relax != 1.0 else v_new
                if resid < cfg.fixed_point_tol:
                    converged = True
                    break
            return v, iters, converged, rxi

        b = self._aw.T @ (self._x @ xi)
        rxi = self._ud @ (self._ginv @ b)
        project = lambda t: mahalanobis_project(t, self._sigma_rxi_dense, cfg)
        v = project(rxi)
        residuals = []
        relax = 1.0
        converged = False
        iters = 0
        for iters in range(1, cfg.max_fixed_point_iters + 1):
            t = self._ud @ (self._gt_inv @ (b + self._ud.T @ (self._prec_r @ v)))
            v_new = project(t)
            resid = float(np.max(np.abs(v_new - v)))
            residuals.append(resid)
            if relax == 1.0 and _oscillating(residuals):
                relax = 0.5
            v = v + relax * (v_new - v) if relax != 1.0 else v_new
            if resid < cfg.fixed_point_tol:
                converged = True
                break
        return v, iters, converged, rxi


def get_reduction_plan(model: MeasurementModel, cfg: ReductionConfig) -> ReductionPlan:
    """Fetch (or build and cache) the reduction plan for a model."""
    key = ("plan", cfg.pinv_tolerance)
    plan = model.plan_cache.get(key)
    if plan is None:
        plan = ReductionPlan(model, cfg)
        model.plan_cache[key] = plan
    return plan


def _attribute(step: str):
    """Context manager adding pipeline-step attribution to package errors."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, PamuxError):
                first = exc.args[0] if exc.args else ""
                exc.args = (f"[{step}] {first}",) + tuple(exc.args[1:])
            return False

    return _Ctx()


def reduce_with_sparsity(xi, model: MeasurementModel,
                         cfg: ReductionConfig) -> ReductionOutcome:
    """Run the full six-step reduction pipeline on one readout.

    1. linear reduction under the worst-case noise covariance;
    2. constrained fixed-point refinement (initialized at Π(R* xi));
    3. forward sparsity transform;
    4. hard thresholding at tau·sigma per coefficient, with sigma taken from
       the worst-case linear-estimate covariance;
    5. inverse transform;
    6. final Mahalanobis projection onto the unit box.
    """
    with _attribute("step 1: linear reduction"):
        plan = get_reduction_plan(model, cfg)
        if not plan.estimable:
            raise EstimabilityError(
                "the requested feature is not estimable from this device "
                f"(residual {plan.estimability_residual:.3e})"
            )
    with _attribute("step 2: box refinement"):
        refined, iters, converged, rxi = plan.refine(xi, cfg)
    outcomes = _threshold_stages(plan, refined, cfg, [cfg.tau])
    thresholded, fraction = outcomes[0]
    return ReductionOutcome(
        estimate=thresholded,
        linear_estimate=rxi,
        estimate_covariance=plan.sigma_rxi(),
        worst_case_mse=plan.worst_case_mse,
        iterations=iters,
        thresholded_fraction=fraction,
        converged=converged,
        metadata={"mode": plan._mode, "tau": cfg.tau, "transform": cfg.transform},
    )


def _threshold_stages(plan: ReductionPlan, refined: np.ndarray,
                      cfg: ReductionConfig, taus) -> list[tuple[np.ndarray, float]]:
    """Steps 3–6 for one refined estimate and several thresholds."""
    h, w = plan.dims
    fwd, inv = transform_pair(cfg.transform)
    with _attribute("step 3: forward transform"):
        coeffs = fwd(refined.reshape(h, w))
        sigmas = plan.transform_sigmas(cfg.transform)
    results = []
    for tau in taus:
        with _attribute("step 4: thresholding"):
            thr = threshold_components(coeffs, sigmas, tau)
            fraction = float(np.mean(np.abs(coeffs) < tau * sigmas))
        with _attribute("step 5: inverse transform"):
            back = inv(thr).reshape(-1)
        with _attribute("step 6: final projection"):
            if plan.sigma_rxi_is_diagonal:
                final = np.clip(back, 0.0, 1.0)
            else:
                final = mahalanobis_project(back, plan.sigma_rxi(), cfg)
        results.append((final, fraction))
    return results


def reduce_with_sparsity_multi(xi, model: MeasurementModel,
                               cfg: ReductionConfig,
                               taus) -> list[ReductionOutcome]:
    """Pipeline variant sharing steps 1–3 across several thresholds."""
    plan = get_reduction_plan(model, cfg)
    if not plan.estimable:
        raise EstimabilityError(
            "the requested feature is not estimable from this device "
            f"(residual {plan.estimability_residual:.3e})"
        )
    refined, iters, converged, rxi = plan.refine(xi, cfg)
    stages = _threshold_stages(plan, refined, cfg, list(taus))
    outcomes = []
    for tau, (final, fraction) in zip(taus, stages):
        outcomes.append(
            ReductionOutcome(
                estimate=final,
                linear_estimate=rxi,
                estimate_covariance=plan.sigma_rxi(),
                worst_case_mse=plan.worst_case_mse,
                iterations=iters,
                thresholded_fraction=fraction,
                converged=converged,
                metadata={"mode": plan._mode, "tau": tau,
                          "transform": cfg.transform},
            )
        )
    return outcomes
