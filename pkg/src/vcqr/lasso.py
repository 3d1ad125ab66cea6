"""Kernel-weighted quantile regression with a group l1,2 penalty.

The solver works on the exact, nonsmooth objective

    F(b) = sum_i w_i rho_tau(y_i - gamma_i' b) + lam * sum_g ||b_g||_2 .

ADMM identifies the structure of the solution (which residuals are zero and
which groups are nonzero); a Newton solve on that face then recovers the
optimum to machine precision and a subgradient certificate confirms it. The
unpenalized problem (``lam == 0``) is solved as a linear program and polished
the same way.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import brentq, linprog

from .core import Dataset, LocalizedDesign, rho_tau
from .exceptions import (
    DimensionMismatch,
    DomainError,
    InvalidScale,
    NonConvergence,
    VCQRWarning,
    ZeroDesign,
)

__all__ = [
    "SolverOptions",
    "GroupLassoFit",
    "group_norm_12",
    "qr_objective",
    "lambda_b",
    "threshold_groups",
    "fit_step1",
    "post_refit",
    "weighted_qr",
    "solve_group_qr",
    "directional_kkt_gap",
]


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 50_000
    tol: float = 1e-9
    kkt_tol: float = 1e-6
    probe_eps: float = None
    n_probe: int = 64
    probe_seed: int = 0
    polish: bool = True
    method: str = "conic"

    def __post_init__(self):
        if self.method not in ("conic", "admm"):
            raise DomainError("solver method must be 'conic' or 'admm'")


@dataclass(frozen=True)
class GroupLassoFit:
    b_ini: np.ndarray
    b_hat: np.ndarray
    lambda_b: float
    active_groups: tuple
    objective: float
    iters: int
    kkt_gap: float
    certified: bool = False
    unique: bool = None
    method: str = "conic"


def _pairs(d):
    if d % 2:
        raise DimensionMismatch(f"coefficient length {d} is not a multiple of 2")
    return np.column_stack([np.arange(0, d, 2), np.arange(1, d, 2)])


def group_norm_12(b, groups=None):
    """Sum of the Euclidean norms of the (level, derivative) pairs."""
    b = np.asarray(b, dtype=float)
    groups = _pairs(b.shape[0]) if groups is None else np.asarray(groups)
    if groups.size and groups.max() >= b.shape[0]:
        raise DimensionMismatch("group map does not fit the coefficient vector")
    return float(np.sqrt((b[groups] ** 2).sum(axis=1)).sum())


def _objective_batch(G, y, w, tau, lam, groups, B):
    """Objective for every column of ``B`` (shape ``(d, m)``)."""
    R = y[:, None] - G @ B
    loss = w @ (R * (tau - (R < 0)))
    if lam:
        loss = loss + lam * np.sqrt((B[groups] ** 2).sum(axis=1)).sum(axis=0)
    return loss


def qr_objective(gamma, y, w, tau, b, lam=0.0, groups=None):
    b = np.asarray(b, dtype=float)
    loss = float(w @ rho_tau(tau, y - gamma @ b))
    if lam:
        loss += lam * group_norm_12(b, groups)
    return loss


def lambda_b(design: LocalizedDesign, data: Dataset, c_b=0.4):
    """Data-dependent Step-1 penalty
    ``c_b * sqrt(tau (1 - tau) log(n h p)) * sqrt(max_j sum_i w_i^2 x_ij^2)``."""
    if c_b < 0:
        raise DomainError("c_b must be nonnegative")
    tau, h = design.spec.tau, design.spec.h
    nhp = data.n * h * data.p
    if nhp <= 1:
        raise InvalidScale(f"log(n h p) must be positive; n h p = {nhp}")
    top = float(((design.weights[:, None] * data.x) ** 2).sum(axis=0).max())
    if top == 0:
        raise ZeroDesign("every covariate vanishes on the kernel window")
    return c_b * np.sqrt(tau * (1 - tau) * np.log(nhp)) * np.sqrt(top)


def threshold_groups(b_ini, lam, groups=None):
    """Keep a group only if its squared norm strictly exceeds ``lam**2``."""
    b = np.array(b_ini, dtype=float)
    groups = _pairs(b.shape[0]) if groups is None else np.asarray(groups)
    keep = (b[groups] ** 2).sum(axis=1) > lam**2
    b[groups[~keep].ravel()] = 0.0
    return b


def directional_kkt_gap(G, y, w, tau, lam, groups, b, eps=None, n_probe=64, seed=0):
    """Smallest forward difference of the objective over probe directions.

    Probes are all signed coordinate directions plus ``n_probe`` random unit
    vectors. A value ``>= 0`` (up to rounding) certifies local optimality of a
    convex objective.
    """
    b = np.asarray(b, dtype=float)
    d = b.shape[0]
    if eps is None:
        eps = 1e-6 * (1.0 + np.abs(b).max(initial=0.0))
    rng = np.random.Generator(np.random.Philox(seed))
    rand = rng.standard_normal((d, n_probe))
    rand /= np.linalg.norm(rand, axis=0)
    dirs = np.hstack([np.eye(d), -np.eye(d), rand])
    f0 = _objective_batch(G, y, w, tau, lam, groups, b[:, None])[0]
    f1 = _objective_batch(G, y, w, tau, lam, groups, b[:, None] + eps * dirs)
    return float(((f1 - f0) / eps).min())


# --- face polishing --------------------------------------------------------

def _violations(G, y, w, tau, lam, groups, b, zero_rows, signs, mu, active, cols, scale):
    """Optimality violations of ``b`` on the face ``(zero_rows, signs, active)``.

    Returns ``None`` when the subgradient certificate holds, otherwise a
    dict naming the first kind of violation found and the offending indices.
    """
    r = y - G @ b
    out = ~zero_rows
    if np.any(np.abs(r[zero_rows]) > 1e-10 * scale):
        return {"kind": "zero_rows"}
    flipped = np.flatnonzero(out & (r * signs <= 0))
    if flipped.size:
        return {"kind": "flip", "rows": flipped}
    psi = tau - (signs[out] < 0)
    zr = np.flatnonzero(zero_rows)
    lo, hi = w[zr] * (tau - 1), w[zr] * tau
    slack = 1e-9 * w[zr] + 1e-15
    excess = np.maximum(mu - hi - slack, lo - slack - mu)
    grad = -(w[out] * psi) @ G[out] - mu @ G[zero_rows]
    inactive = np.flatnonzero(~active)
    if inactive.size and lam > 0:
        gn = np.sqrt((grad[groups[inactive]] ** 2).sum(axis=1))
        bad = gn > lam * (1 + 1e-9) + 1e-13
        if np.any(bad):
            g = int(inactive[np.argmax(np.where(bad, gn, -np.inf))])
            return {"kind": "group", "group": g, "grad": grad[groups[g]]}
    if np.any(excess > 0):
        i = int(np.argmax(excess / w[zr]))
        return {"kind": "mu", "row": int(zr[i]), "sign": 1.0 if mu[i] > hi[i] else -1.0}
    gscale = np.abs(w).sum() * np.abs(G).max() + lam
    if lam == 0:
        ok = np.all(np.abs(grad[cols]) <= 1e-10 * gscale)
        return None if ok else {"kind": "stationarity"}
    for g in np.flatnonzero(active):
        v = b[groups[g]]
        nrm = np.linalg.norm(v)
        if nrm == 0 or np.abs(grad[groups[g]] + lam * v / nrm).max() > 1e-10 * gscale:
            return {"kind": "stationarity"}
    return None


def _certify(*args):
    return _violations(*args) is None


def _feasible_multipliers(A, rhs, w, tau):
    """Box-feasible ``mu`` with ``A' mu = rhs`` when the least-squares choice fails."""
    nz = A.shape[0]
    if nz == 0:
        return None
    res = linprog(
        np.zeros(nz),
        A_eq=A.T,
        b_eq=rhs,
        bounds=list(zip(w * (tau - 1), w * tau)),
        method="highs",
    )
    return res.x if res.status == 0 else None


def _face_newton(G, y, w, tau, lam, groups, b0, zero_rows, active, r0):
    cols = groups[active].ravel() if lam > 0 else np.arange(G.shape[1])
    signs = np.where(r0 >= 0, 1.0, -1.0)
    out = ~zero_rows
    psi_out = tau - (signs[out] < 0)
    c = -(w[out] * psi_out) @ G[out][:, cols]
    A = G[zero_rows][:, cols]
    yz = y[zero_rows]
    x = b0[cols].copy()
    nz, nc = A.shape

    def grad_pen(x):
        if lam == 0:
            return np.zeros(nc)
        v = x.reshape(-1, 2)
        return lam * (v / np.sqrt((v**2).sum(axis=1))[:, None]).ravel()

    def hess_pen(x):
        D = np.zeros((nc, nc))
        if lam == 0:
            return D
        v = x.reshape(-1, 2)
        nrm = np.sqrt((v**2).sum(axis=1))
        u = v / nrm[:, None]
        blocks = (np.eye(2)[None] - u[:, :, None] * u[:, None, :]) / nrm[:, None, None]
        for i, blk in enumerate(blocks):
            D[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = blk
        return lam * D

    def pen_ok(x):
        return lam == 0 or bool(np.all((x.reshape(-1, 2) ** 2).sum(axis=1) > 0))

    if not pen_ok(x):
        return None
    mu = np.linalg.lstsq(A.T, c + grad_pen(x), rcond=None)[0] if nz else np.zeros(0)
    J = None
    for _ in range(60):
        F = np.concatenate([c - A.T @ mu + grad_pen(x), A @ x - yz])
        if np.abs(F).max(initial=0.0) <= 1e-15 * (1 + np.abs(y).max()):
            break
        J = np.block([[hess_pen(x), -A.T], [A, np.zeros((nz, nz))]])
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        if lam == 0:
            # linear system: one exact step suffices
            x, mu = x + step[:nc], mu + step[nc:]
            break
        fn = np.abs(F).max()
        t, accepted = 1.0, False
        while t > 1e-3:
            xn, mun = x + t * step[:nc], mu + t * step[nc:]
            if pen_ok(xn):
                Fn = np.concatenate([c - A.T @ mun + grad_pen(xn), A @ xn - yz])
                if np.abs(Fn).max() < (1 - 1e-4 * t) * fn:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return None
        x, mu = xn, mun
    b = np.zeros_like(b0)
    b[cols] = x
    if lam == 0:
        unique = bool(np.linalg.matrix_rank(A) == nc) if nz and nc else nc == 0
    else:
        J = np.block([[hess_pen(x), -A.T], [A, np.zeros((nz, nz))]])
        unique = J.size == 0 or np.linalg.matrix_rank(J) == J.shape[0]
    return b, mu, signs, cols, A, c + grad_pen(x), bool(unique)


def _face_solution(G, y, w, tau, lam, groups, b0, zero_rows, active, ref, scale):
    """Newton point on a face plus the best multipliers and its violations."""
    res = _face_newton(G, y, w, tau, lam, groups, b0, zero_rows, active, ref)
    if res is None:
        return None
    b, mu, signs, cols, A, rhs, unique = res
    if not np.all(np.isfinite(b)):
        return None
    viol = _violations(G, y, w, tau, lam, groups, b, zero_rows, signs, mu, active, cols, scale)
    if viol is not None and viol["kind"] == "mu":
        alt = _feasible_multipliers(A, rhs, w[zero_rows], tau)
        if alt is not None:
            alt_viol = _violations(G, y, w, tau, lam, groups, b, zero_rows, signs, alt, active, cols, scale)
            if alt_viol is None or alt_viol["kind"] != "mu":
                mu, viol = alt, alt_viol
    return b, signs, unique, viol


def _face_multipliers(A, rhs, w, tau):
    mu = np.linalg.lstsq(A.T, rhs, rcond=None)[0] if A.shape[0] else np.zeros(0)
    lo, hi = w * (tau - 1), w * tau
    if np.any(mu < lo - 1e-9 * w) or np.any(mu > hi + 1e-9 * w):
        alt = _feasible_multipliers(A, rhs, w, tau)
        if alt is not None:
            return alt
    return mu


def _independent_rows(Gc, r, zero_rows, signs):
    """Keep a linearly independent subset of the zero rows, smallest residuals first.

    Rows dropped from the face get the sign of their current residual
    (``signs`` is updated in place).
    """
    idx = np.flatnonzero(zero_rows)
    if idx.size == 0:
        return zero_rows
    rank = np.linalg.matrix_rank(Gc[idx]) if Gc.shape[1] else 0
    if rank == idx.size:
        return zero_rows
    keep = []
    for i in idx[np.argsort(np.abs(r[idx]), kind="stable")]:
        trial = keep + [i]
        if len(keep) < rank and np.linalg.matrix_rank(Gc[trial]) == len(trial):
            keep = trial
    out = np.zeros_like(zero_rows)
    out[keep] = True
    for i in idx:
        if not out[i]:
            signs[i] = 1.0 if r[i] >= 0 else -1.0
    return out


def _walk(G, y, w, tau, lam, groups, b0, zero_rows, active, scale, max_steps=400):
    """Active-set descent from an approximate face.

    On the current face (rows in ``zero_rows`` held at zero residual, the
    other residual signs fixed, inactive groups held at zero) the objective
    is smooth and convex. Each step takes a regularized Newton direction in
    the null space of the zero-row constraints with an exact line search,
    stopping early where a residual reaches zero (that row joins the face).
    At a stationary point of the face the multipliers are checked: a zero
    row whose multiplier leaves its box is released, and an inactive group
    whose gradient exceeds the penalty is activated. The walk ends when the
    full subgradient certificate holds.
    """
    from scipy.linalg import null_space

    zero_rows = zero_rows.copy()
    active = active.copy() if lam > 0 else np.ones(len(groups), bool)
    b = b0.copy()
    r = y - G @ b
    signs = np.where(r >= 0, 1.0, -1.0)
    gscale = np.abs(w).sum() * np.abs(G).max() + lam
    released = -1
    for _ in range(max_steps):
        cols = groups[active].ravel()
        if lam > 0:
            b[groups[~active].ravel()] = 0.0
        zero_rows = _independent_rows(G[:, cols], y - G @ b, zero_rows, signs)
        A = G[zero_rows][:, cols]
        yz = y[zero_rows]
        x = b[cols]
        if A.shape[0]:
            x = x + np.linalg.lstsq(A, yz - A @ x, rcond=None)[0]
            if np.abs(A @ x - yz).max() > 1e-10 * scale:
                return None
        out = ~zero_rows
        psi = tau - (signs < 0)
        c = -(w[out] * psi[out]) @ G[out][:, cols]
        v = x.reshape(-1, 2)
        nrm = np.sqrt((v**2).sum(axis=1))
        if lam > 0 and np.any(nrm == 0):
            return None
        grad = c + (lam * (v / nrm[:, None]).ravel() if lam > 0 else 0.0)
        N = null_space(A) if A.shape[0] else np.eye(cols.size)
        gr = N.T @ grad
        b[cols] = x
        if N.shape[1] == 0 or np.abs(gr).max() <= 1e-13 * gscale:
            # stationary on the face: check the multipliers and inactive groups
            mu = _face_multipliers(A, grad, w[zero_rows], tau)
            viol = _violations(G, y, w, tau, lam, groups, b, zero_rows, signs, mu, active, cols, scale)
            if viol is None:
                if lam == 0:
                    unique = cols.size == 0 or bool(np.linalg.matrix_rank(A) == cols.size)
                else:
                    D = np.zeros((cols.size, cols.size))
                    u = v / nrm[:, None]
                    for i in range(v.shape[0]):
                        D[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = (np.eye(2) - np.outer(u[i], u[i])) / nrm[i]
                    Hn = N.T @ D @ N
                    unique = N.shape[1] == 0 or bool(np.linalg.matrix_rank(Hn) == N.shape[1])
                return b, unique
            if viol["kind"] == "mu":
                i = viol["row"]
                if i == released:
                    return None
                zero_rows[i] = False
                signs[i] = viol["sign"]
                released = i
                continue
            if viol["kind"] == "group":
                g = viol["group"]
                b[groups[g]] = -1e-9 * scale * viol["grad"] / np.linalg.norm(viol["grad"])
                active[g] = True
                continue
            if viol["kind"] == "flip":
                for i in viol["rows"]:
                    zero_rows[i] = True
                continue
            return None
        # regularized Newton direction in the null space
        if lam > 0:
            u = v / nrm[:, None]
            D = np.zeros((cols.size, cols.size))
            for i in range(v.shape[0]):
                D[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = lam * (np.eye(2) - np.outer(u[i], u[i])) / nrm[i]
            Hr = N.T @ D @ N
        else:
            Hr = np.zeros((N.shape[1], N.shape[1]))
        ridge = 1e-12 * (np.trace(Hr) / max(Hr.shape[0], 1) + 1e-300)
        d = -N @ np.linalg.solve(Hr + ridge * np.eye(Hr.shape[0]), gr) if Hr.any() else -N @ gr
        dr = -(G[:, cols] @ d)
        rr = y - G[:, cols] @ x
        moving = out & (signs * dr < 0)
        t_cross = np.where(moving, -rr / np.where(moving, dr, 1.0), np.inf)
        t_cross = np.where(t_cross < 0, 0.0, t_cross)
        i_cross = int(np.argmin(t_cross)) if np.any(moving) else -1
        t_max = t_cross[i_cross] if i_cross >= 0 else np.inf

        def dphi(t):
            val = c @ d
            if lam > 0:
                z = (x + t * d).reshape(-1, 2)
                zn = np.sqrt((z**2).sum(axis=1))
                val += lam * np.sum((z * d.reshape(-1, 2)).sum(axis=1) / np.where(zn > 0, zn, 1.0))
            return val

        if not dphi(0.0) < 0:
            return None
        hi = t_max
        if not np.isfinite(hi):
            hi = 1.0
            while dphi(hi) < 0:
                hi *= 4.0
                if hi > 1e12:
                    return None
        if dphi(hi) <= 0:
            t = hi
        else:
            t = brentq(dphi, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        b[cols] = x + t * d
        if i_cross >= 0 and t >= t_max:
            zero_rows[i_cross] = True
        released = -1
        if lam > 0:
            nn = np.sqrt((b[groups] ** 2).sum(axis=1))
            collapse = active & (nn <= 1e-13 * scale)
            active &= ~collapse
    return None


def _polish(G, y, w, tau, lam, groups, b0, active, hint=None, walk=True):
    """Try to land exactly on the optimal face suggested by ``b0``.

    ``hint`` is an optional residual vector from the splitting method whose
    exact zeros and signs describe the face directly. Candidate faces are
    tried as given first; if none is certified, an active-set walk repairs
    the first one.
    """
    r0 = y - G @ b0
    scale = 1.0 + np.abs(y).max()
    seen = set()
    candidates = [] if hint is None else [(hint == 0, hint)]
    candidates += [(np.abs(r0) <= rtol * scale, r0) for rtol in 10.0 ** np.arange(-11, -2)]
    for zero_rows, ref in candidates:
        key = zero_rows.tobytes() + np.signbit(ref).tobytes()
        if key in seen:
            continue
        seen.add(key)
        sol = _face_solution(G, y, w, tau, lam, groups, b0, zero_rows, active, ref, scale)
        if sol is not None and sol[3] is None:
            return sol[0], sol[2]
    if walk:
        return _walk(G, y, w, tau, lam, groups, b0, candidates[0][0], active, scale)
    return None


# --- solvers ---------------------------------------------------------------

def _lp_qr(G, y, w, tau):
    m, d = G.shape
    c = np.concatenate([np.zeros(d), w * tau, w * (1 - tau)])
    A_eq = np.hstack([G, np.eye(m), -np.eye(m)])
    bounds = [(None, None)] * d + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        return None, res.nit
    return res.x[:d], res.nit


def _group_soft(v, t, groups):
    out = np.zeros_like(v)
    nrm = np.sqrt((v[groups] ** 2).sum(axis=1))
    keep = nrm > t
    scale = np.where(keep, 1 - t / np.where(keep, nrm, 1.0), 0.0)
    out[groups] = v[groups] * scale[:, None]
    return out


def _conic(G, y, w, tau, lam, groups):
    """Interior-point solve of the second-order cone form; None on failure."""
    import cvxpy as cp

    b = cp.Variable(G.shape[1])
    r = y - G @ b
    loss = w @ (tau * cp.pos(r) + (1 - tau) * cp.neg(r))
    pen = sum(cp.norm(b[list(g)]) for g in groups) if lam > 0 and len(groups) else 0.0
    prob = cp.Problem(cp.Minimize(loss + lam * pen))
    try:
        prob.solve(solver="CLARABEL")
    except cp.error.SolverError:
        return None, 0
    if prob.status not in ("optimal", "optimal_inaccurate") or b.value is None:
        return None, 0
    return np.asarray(b.value, dtype=float), int(prob.solver_stats.num_iters or 0)


def _admm(G, y, w, tau, lam, groups, opts, on_check):
    m, d = G.shape
    chol = cho_factor(G.T @ G + np.eye(d))
    b = np.zeros(d)
    z = np.zeros(d)
    e = np.zeros(m)
    ue = np.zeros(m)
    uz = np.zeros(d)
    rho = 1.0 / max(m, 1)
    next_check = 25
    it = stable = 0
    last_sig = tried = None
    for it in range(1, opts.max_iter + 1):
        b = cho_solve(chol, G.T @ (e - ue) + (z - uz))
        Gb = G @ b
        e_old, z_old = e, z
        r0 = y - (Gb + ue)
        t = w / rho
        r = r0 - np.clip(r0, -t * (1 - tau), t * tau)
        e = y - r
        z = _group_soft(b + uz, lam / rho, groups)
        ue += Gb - e
        uz += b - z
        pri = np.sqrt(np.sum((Gb - e) ** 2) + np.sum((b - z) ** 2))
        dual = rho * np.linalg.norm(G.T @ (e - e_old) + (z - z_old))
        eps_pri = 1e-12 * np.sqrt(m + d) + opts.tol * max(
            np.sqrt(Gb @ Gb + b @ b), np.sqrt(e @ e + z @ z)
        )
        eps_dual = 1e-12 * np.sqrt(d) + opts.tol * rho * np.linalg.norm(G.T @ ue + uz)
        converged = pri < eps_pri and dual < eps_dual
        # polish whenever the identified face has been stable for a while
        sig = hash((r == 0).tobytes() + (r > 0).tobytes() + (z != 0).tobytes())
        stable = stable + 1 if sig == last_sig else 0
        last_sig = sig
        due = (stable >= 20 and sig != tried) or it >= next_check
        if due or converged:
            tried = sig
            next_check = int(next_check * 1.6) + 1
            if on_check(z, r):
                return z, it, True
            if converged:
                return z, it, False
        if it % 10 == 0:
            if pri > 10 * dual:
                rho *= 2.0
                ue /= 2.0
                uz /= 2.0
            elif dual > 10 * pri:
                rho /= 2.0
                ue *= 2.0
                uz *= 2.0
    return z, it, False


def solve_group_qr(G, y, w, tau, lam, groups=None, opts: SolverOptions = None):
    """Minimize the (penalized) weighted check loss.

    Rows with zero weight are dropped. Returns ``(b, info)`` where ``info``
    holds ``iters``, ``certified``, ``unique`` and ``method``.
    """
    opts = opts or SolverOptions()
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    m, d = G.shape
    if y.shape[0] != m or w.shape[0] != m:
        raise DimensionMismatch("gamma, y and w disagree on the number of rows")
    if lam < 0:
        raise DomainError("penalty must be nonnegative")
    groups = _pairs(d) if groups is None else np.asarray(groups)
    keep = w > 0
    G, y, w = G[keep], y[keep], w[keep]
    total = w.sum()
    wn = w / total
    lamn = lam / total
    info = {"iters": 0, "certified": False, "unique": None, "method": "lp" if lam == 0 else "admm"}

    if lam == 0:
        b, nit = _lp_qr(G, y, wn, tau)
        info["iters"] = nit
        if b is not None:
            if opts.polish:
                res = _polish(G, y, wn, tau, 0.0, groups, b, np.ones(len(groups), bool))
                if res is not None:
                    b, info["unique"] = res
                    info["certified"] = True
            return b, info
        info["method"] = "admm"

    if opts.method == "conic":
        b, nit = _conic(G, y, wn, tau, lamn, groups)
        if b is not None:
            info["method"], info["iters"] = "conic", nit
            if not opts.polish:
                return b, info
            tiny = max(lamn, 1e-300) * 1e-7
            active = np.sqrt((b[groups] ** 2).sum(axis=1)) > tiny
            b0 = b.copy()
            b0[groups[~active].ravel()] = 0.0
            res = _polish(G, y, wn, tau, lamn, groups, b0, active)
            if res is not None:
                info["certified"] = True
                b, info["unique"] = res
                return b, info
        # fall back to the splitting method
        info["method"] = "admm"

    state = {}

    def on_check(z, hint):
        if not opts.polish:
            return False
        active = np.sqrt((z[groups] ** 2).sum(axis=1)) > 0
        if lamn == 0:
            active[:] = True
        res = _polish(G, y, wn, tau, lamn, groups, z, active, hint)
        if res is None:
            return False
        state["b"], state["unique"] = res
        return True

    z, it, certified = _admm(G, y, wn, tau, lamn, groups, opts, on_check)
    info["iters"] = it
    if certified:
        info["certified"] = True
        info["unique"] = state["unique"]
        return state["b"], info
    return z, info


def fit_step1(design: LocalizedDesign, data: Dataset, lam, opts: SolverOptions = None) -> GroupLassoFit:
    """Penalized local-linear quantile fit followed by group thresholding."""
    opts = opts or SolverOptions()
    G, y, w, tau = design.gamma, data.y, design.weights, design.spec.tau
    if G.shape[0] != y.shape[0]:
        raise DimensionMismatch("design and data disagree on n")
    b, info = solve_group_qr(G, y, w, tau, lam, design.groups, opts)
    groups = design.groups
    obj = qr_objective(G, y, w, tau, b, lam, groups)
    gap = directional_kkt_gap(
        G, y, w, tau, lam, groups, b, opts.probe_eps, opts.n_probe, opts.probe_seed
    )
    b_hat = threshold_groups(b, lam, groups) if lam > 0 else b.copy()
    active = tuple(int(g) for g in np.flatnonzero(np.abs(b_hat[groups]).sum(axis=1) > 0))
    for arr in (b, b_hat):
        arr.setflags(write=False)
    fit = GroupLassoFit(
        b, b_hat, float(lam), active, obj, info["iters"], gap,
        info["certified"], info["unique"], info["method"],
    )
    if not info["certified"] and gap < -opts.kkt_tol * (1 + abs(obj)):
        raise NonConvergence(
            f"Step-1 solver stopped after {info['iters']} iterations with KKT gap {gap:.3g}", fit=fit
        )
    if info["unique"] is False:
        warnings.warn("Step-1 optimum is not unique; returning the face point found", VCQRWarning)
    return fit


def weighted_qr(G, y, w, tau, opts: SolverOptions = None):
    """Unpenalized weighted quantile regression; returns ``(b, info)``."""
    b, info = solve_group_qr(G, y, w, tau, 0.0, None if G.shape[1] % 2 == 0 else np.zeros((0, 2), int), opts)
    return b, info


def post_refit(design: LocalizedDesign, data: Dataset, support, opts: SolverOptions = None):
    """Unpenalized refit on the columns of the groups in ``support``."""
    support = sorted(set(int(g) for g in support))
    if not support:
        raise DomainError("post_refit needs a nonempty support")
    cols = design.groups[support].ravel()
    local_n = int(np.count_nonzero(design.weights > 0))
    if cols.size > local_n:
        warnings.warn(
            f"refit has {cols.size} parameters but only {local_n} observations carry weight",
            VCQRWarning,
        )
    bs, info = weighted_qr(design.gamma[:, cols], data.y, design.weights, design.spec.tau, opts)
    if info["unique"] is False:
        warnings.warn("refit optimum is flat; returning the vertex found", VCQRWarning)
    b = np.zeros(2 * design.p)
    b[cols] = bs
    return b
