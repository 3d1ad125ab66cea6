"""Debiased estimators of the coefficients of interest and their intervals.

Three estimators share the decorrelation matrix ``V``:

* one-step (OS): ``a_hat - S_d(b_hat, V)``, a single score correction;
* decorrelated score (DS): approximate root of the decorrelated score, found
  by minimizing its self-normalized quadratic form;
* reparameterization (RP): a low-dimensional quantile regression after the
  nuisance columns are projected out through ``V2 = V11^{-1} V12``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .core import Dataset, LocalizedDesign, psi_tau
from .decorrelation import Decorrelator
from .exceptions import (
    DegenerateScoreCov,
    DimensionMismatch,
    DomainError,
    NegativeVariance,
    NonConvergence,
    SingularRefit,
    SingularV11,
    ZeroDesign,
)
from .lasso import GroupLassoFit, SolverOptions, directional_kkt_gap, qr_objective, weighted_qr

__all__ = [
    "InferenceResult",
    "DSOptions",
    "DSResult",
    "score_d",
    "estimate_os",
    "estimate_ds",
    "estimate_rp",
    "covariance",
    "confidence_intervals",
    "make_result",
    "low_dimensional_inference",
]

COV_FORMS = ("empirical", "expected")


@dataclass(frozen=True)
class InferenceResult:
    kind: str
    a_check: np.ndarray
    sigma_a: np.ndarray
    cov_form: str
    level: float
    ci: np.ndarray
    nh: float
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def std_error(self):
        return np.sqrt(np.clip(np.diag(self.sigma_a), 0.0, None) / self.nh)


@dataclass(frozen=True)
class DSOptions:
    radius: float = None
    ridge_scale: float = 1e-10
    grid: int = 41
    restarts: int = 3


@dataclass(frozen=True)
class DSResult:
    a_check: np.ndarray
    objective: float
    objective_start: float
    degenerate: bool = False
    improved: bool = True


def _check_v(design, v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != design.gamma.shape[1]:
        raise DimensionMismatch(f"V has shape {v.shape}; design has {design.gamma.shape[1]} columns")
    return v


def score_d(design: LocalizedDesign, data: Dataset, b, v):
    """``sum_i -w_i V gamma_i psi(y_i - gamma_i' b)``."""
    v = _check_v(design, v)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != design.gamma.shape[1]:
        raise DimensionMismatch("b does not match the design")
    psi = psi_tau(design.spec.tau, data.y - design.gamma @ b)
    return -(design.weights * psi) @ (design.gamma @ v.T)


def estimate_os(design, data, fit: GroupLassoFit, dec: Decorrelator):
    a_hat = np.asarray(fit.b_hat)[design.a_cols]
    return a_hat - score_d(design, data, fit.b_hat, dec.v_hat)


def _ds_terms(design, data, fit, v):
    keep = design.weights > 0
    G = design.gamma[keep]
    w = design.weights[keep]
    y = data.y[keep]
    k2 = design.a_cols.shape[0]
    b = np.asarray(fit.b_hat)
    offset = y - G[:, k2:] @ b[k2:]
    P = (G @ v.T) * w[:, None]
    return G[:, :k2], offset, P


def estimate_ds(design, data, fit: GroupLassoFit, dec: Decorrelator, opts: DSOptions = None) -> DSResult:
    """Minimize ``s(a)' (sum S_i S_i' + ridge)^{-1} s(a)`` over a box around ``a_hat``.

    ``S_i(a)`` is the per-observation decorrelated score with ``a`` in the
    A-slots and the nuisance part of ``b_hat`` held fixed.
    """
    opts = opts or DSOptions()
    tau = design.spec.tau
    v = _check_v(design, dec.v_hat)
    a_hat = np.asarray(fit.b_hat)[design.a_cols].astype(float)
    GA, offset, P = _ds_terms(design, data, fit, v)
    k2 = a_hat.shape[0]
    radius = opts.radius if opts.radius is not None else max(1.0, np.abs(a_hat).max(initial=0.0))
    # psi^2 takes two values, so the inner matrix is a mix of two fixed ones
    Mpos = (P * tau**2).T @ P
    Mneg = (P * (1 - tau) ** 2).T @ P

    def objective(A):
        A = np.atleast_2d(A)
        neg = (offset[:, None] - GA @ A.T) < 0
        psi = tau - neg
        s = -(P.T @ psi)
        out = np.empty(A.shape[0])
        for c in range(A.shape[0]):
            M = np.einsum("i,ij,ik->jk", psi[:, c] ** 2, P, P)
            tr = np.trace(M)
            if tr == 0:
                out[c] = 0.0 if not np.any(s[:, c]) else np.inf
                continue
            M = M + opts.ridge_scale * tr / k2 * np.eye(k2)
            try:
                out[c] = s[:, c] @ np.linalg.solve(M, s[:, c])
            except np.linalg.LinAlgError:
                raise DegenerateScoreCov("regularized score covariance is singular") from None
        return out

    if not np.any(P):
        return DSResult(a_hat, 0.0, 0.0, degenerate=True, improved=False)
    if np.linalg.cond(Mpos + Mneg) > 1e15:
        raise DegenerateScoreCov("score covariance is numerically singular")
    lo, hi = a_hat - radius, a_hat + radius
    f0 = float(objective(a_hat)[0])
    best_a, best_f = a_hat.copy(), f0
    starts = [a_hat.copy()]
    if k2 <= 2:
        axes = [np.linspace(lo[j], hi[j], opts.grid) for j in range(k2)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k2)
        vals = objective(mesh)
        j = int(np.argmin(vals))
        if vals[j] < best_f:
            best_a, best_f = mesh[j].copy(), float(vals[j])
        starts.append(mesh[j].copy())

    def scalar(a):
        if np.any(a < lo) or np.any(a > hi):
            return np.inf
        return float(objective(a)[0])

    simplex_size = 0.1 * radius
    for start in starts:
        for r in range(opts.restarts):
            sz = simplex_size * 0.5**r
            init = np.vstack([start] + [start + sz * np.eye(k2)[j] for j in range(k2)])
            res = minimize(
                scalar, start, method="Nelder-Mead",
                options={"initial_simplex": init, "xatol": 1e-10, "fatol": 0.0, "maxiter": 400 * k2},
            )
            if res.fun < best_f:
                best_a, best_f = np.array(res.x), float(res.fun)
    best_a.setflags(write=False)
    return DSResult(best_a, best_f, f0, degenerate=False, improved=best_f < f0)


def estimate_rp(design, data, fit: GroupLassoFit, dec: Decorrelator, opts: SolverOptions = None):
    """Weighted quantile regression of ``y - G_Ac (c_hat + V2' a_hat)`` on ``G_A - G_Ac V2'``."""
    if dec.v2 is None:
        raise SingularV11(f"V11 is ill conditioned (cond={dec.v11_cond:.3g}); RP is unavailable")
    k2 = design.a_cols.shape[0]
    b = np.asarray(fit.b_hat)
    a_hat, c_hat = b[:k2], b[k2:]
    GA, GC = design.gamma[:, :k2], design.gamma[:, k2:]
    v2 = np.asarray(dec.v2)
    Gt = GA - GC @ v2.T
    yt = data.y - GC @ (c_hat + v2.T @ a_hat)
    w = design.weights
    if not np.any(Gt[w > 0]):
        raise ZeroDesign("transformed design is zero on the kernel window")
    a, info = weighted_qr(Gt, yt, w, design.spec.tau, opts)
    keep = w > 0
    gap = directional_kkt_gap(Gt[keep], yt[keep], w[keep], design.spec.tau, 0.0, np.zeros((0, 2), int), a)
    obj = qr_objective(Gt[keep], yt[keep], w[keep], design.spec.tau, a)
    if gap < -1e-6 * (1 + abs(obj)) and not info["certified"]:
        raise NonConvergence(f"RP fit failed the optimality check (gap {gap:.3g})")
    a.setflags(write=False)
    return a


def covariance(design, data, b, v, form="empirical", kernel_nu2=None):
    """Sandwich covariance of the decorrelated score.

    ``empirical``: ``n h sum_i w_i^2 psi_i^2 (V gamma_i)(V gamma_i)'``;
    ``expected``: ``tau (1 - tau) nu2 V (sum_i w_i gamma_i gamma_i') V'``.
    """
    if form not in COV_FORMS:
        raise DomainError(f"cov_form must be one of {COV_FORMS}")
    v = _check_v(design, v)
    tau = design.spec.tau
    w = design.weights
    if form == "empirical":
        psi = psi_tau(tau, data.y - design.gamma @ np.asarray(b, dtype=float))
        P = design.gamma @ v.T
        c = design.nh * (w * psi) ** 2
        S = (P * c[:, None]).T @ P
    else:
        nu2 = design.spec.kernel_spec.nu2 if kernel_nu2 is None else kernel_nu2
        M = (design.gamma * w[:, None]).T @ design.gamma
        S = tau * (1 - tau) * nu2 * v @ M @ v.T
    return 0.5 * (S + S.T)


def confidence_intervals(a_check, sigma_a, nh, level=0.95):
    """Per-coordinate ``a_j +/- z sqrt(sigma_jj / nh)``; shape ``(2k, 2)``."""
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    if not nh > 0:
        raise DomainError("nh must be positive")
    a = np.asarray(a_check, dtype=float)
    var = np.diag(np.asarray(sigma_a, dtype=float)).copy()
    floor = -1e-10 * max(np.abs(var).sum(), 1e-300)
    if np.any(var < floor):
        raise NegativeVariance("covariance has a negative diagonal entry")
    var = np.clip(var, 0.0, None)
    z = norm.ppf(1 - (1 - level) / 2)
    half = z * np.sqrt(var / nh)
    return np.column_stack([a - half, a + half])


def make_result(kind, design, data, a_check, b, v, cov_form="empirical", level=0.95, **extras):
    S = covariance(design, data, b, v, cov_form)
    ci = confidence_intervals(a_check, S, design.nh, level)
    a = np.array(a_check, dtype=float)
    for arr in (a, S, ci):
        arr.setflags(write=False)
    return InferenceResult(kind, a, S, cov_form, float(level), ci, float(design.nh), dict(extras))


def low_dimensional_inference(design, data, support, cov_form="empirical", level=0.95, opts=None, kind="LD"):
    """Unpenalized refit on ``support`` with a plug-in sandwich interval.

    The decorrelation rows are the first ``2k`` rows of the inverse of the
    restricted plug-in Hessian, which treats the support as known.
    """
    from .density import estimate_density, plugin_hessian

    support = sorted(set(int(g) for g in support) | set(range(design.k)))
    sub = design.restrict(support)
    b, info = weighted_qr(sub.gamma, data.y, sub.weights, sub.spec.tau, opts)
    dens = estimate_density(sub, data.y, b)
    H = plugin_hessian(sub, dens.f_hat).h_mat
    if np.linalg.cond(H) > 1e12:
        raise SingularRefit(f"restricted Hessian on {len(support)} variables is singular")
    v = np.linalg.solve(H, np.eye(H.shape[0])[:, : 2 * sub.k]).T
    return make_result(
        kind, sub, data, b[: 2 * sub.k], b, v, cov_form, level,
        support=tuple(support), unique=info["unique"],
    )
