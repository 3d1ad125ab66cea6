"""Penalized estimation of the decorrelation matrix ``V``.

The program

    min_V  tr(V H V' / 2 - E_a V') + lam * sum_{i, j} ||V_(i, j)||_F

splits into ``k`` independent problems, one per variable of interest (its
level and derivative rows). Each is solved by block coordinate descent over
the ``p`` column groups; every block update is an exact 2x2 group prox of a
quadratic, found from a scalar secular equation.

When ``H`` is rank deficient the program is bounded below only if ``lam`` is
at least a data-dependent floor; see :func:`boundedness_floor`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .density import PluginHessian
from .exceptions import (
    AllZeroDensity,
    DimensionMismatch,
    DomainError,
    InvalidScale,
    NonConvergence,
    UnboundedProgram,
    VCQRWarning,
)

__all__ = [
    "Step2Options",
    "Decorrelator",
    "lambda_v",
    "group_norm_1F",
    "step2_objective",
    "boundedness_floor",
    "block_kkt",
    "fit_step2",
    "block_support",
]


@dataclass(frozen=True)
class Step2Options:
    """Solver settings.

    ``unbounded`` chooses what happens when ``lam`` is below the boundedness
    floor of a rank-deficient ``H``: ``"raise"`` raises
    :class:`UnboundedProgram`, ``"escalate"`` raises the penalty to
    ``kappa * floor`` and records it.
    """

    max_sweeps: int = 20_000
    tol: float = 1e-9
    unbounded: str = "escalate"
    kappa: float = 1.5
    rank_tol: float = 1e-10
    cond_max: float = 1e8


@dataclass(frozen=True)
class Decorrelator:
    v_hat: np.ndarray
    lambda_v: float
    block_kkt: np.ndarray
    v2: np.ndarray
    v11_cond: float
    lambda_requested: float
    floor: float
    sweeps: int
    objective: float

    @property
    def k(self):
        return self.v_hat.shape[0] // 2

    @property
    def escalated(self):
        return self.lambda_v > self.lambda_requested


def lambda_v(n, h, p, c_v=0.02):
    """``n^-1 c_v sqrt(n h) z_{1 - 0.05 / (2 n h p)}``."""
    if c_v < 0:
        raise DomainError("c_v must be nonnegative")
    nhp = n * h * p
    arg = 1.0 - 0.05 / (2.0 * nhp) if nhp > 0 else -1.0
    if not 0.0 < arg < 1.0:
        raise InvalidScale(f"normal quantile argument {arg} outside (0, 1)")
    return c_v * np.sqrt(n * h) * norm.ppf(arg) / n


def _blocks(V):
    r, c = V.shape
    if r % 2 or c % 2:
        raise DimensionMismatch(f"V shape {V.shape} is not made of 2x2 blocks")
    return V.reshape(r // 2, 2, c // 2, 2)


def group_norm_1F(V):
    """Sum of Frobenius norms of the 2x2 blocks of ``V``."""
    B = _blocks(np.asarray(V, dtype=float))
    return float(np.sqrt((B**2).sum(axis=(1, 3))).sum())


def step2_objective(V, H, lam):
    V = np.asarray(V, dtype=float)
    k2 = V.shape[0]
    return float(0.5 * np.sum((V @ H) * V) - np.trace(V[:, :k2]) + lam * group_norm_1F(V))


def block_kkt(V, H, lam):
    """Per-block KKT residuals (shape ``(k, p)``).

    Zero blocks report ``max(0, ||G_b||_F - lam)``; nonzero blocks report
    ``||G_b + lam V_b / ||V_b||_F||_F`` where ``G = V H - E_a``.
    """
    V = np.asarray(V, dtype=float)
    G = V @ H
    G[:, : V.shape[0]] -= np.eye(V.shape[0])
    Vb, Gb = _blocks(V), _blocks(G)
    nv = np.sqrt((Vb**2).sum(axis=(1, 3)))
    ng = np.sqrt((Gb**2).sum(axis=(1, 3)))
    safe = np.where(nv > 0, nv, 1.0)
    full = Gb + lam * Vb / safe[:, None, :, None]
    nf = np.sqrt((full**2).sum(axis=(1, 3)))
    return np.where(nv > 0, nf, np.maximum(ng - lam, 0.0))


def _null_basis(H, rank_tol):
    ev, Q = np.linalg.eigh(H)
    top = max(ev.max(initial=0.0), 0.0)
    keep = ev > rank_tol * top
    return Q[:, keep], Q[:, ~keep]


def boundedness_floor(H, k, rank_tol=1e-10):
    """Smallest penalty for which the program is bounded below.

    The objective decreases without bound along any direction ``D`` with
    ``D H = 0`` and ``tr(E_a D') > lam ||D||_{1,F}``. By duality the threshold
    is ``max_i min_C max_j ||(E_i - C R')_j||_F`` with ``R`` a basis of the
    range of ``H``. Returns 0 for positive definite ``H``.
    """
    H = np.asarray(H, dtype=float)
    R, N = _null_basis(H, rank_tol)
    if N.shape[1] == 0:
        return 0.0
    import cvxpy as cp

    d = H.shape[0]
    floors = []
    for i in range(k):
        E = np.zeros((2, d))
        E[0, 2 * i], E[1, 2 * i + 1] = 1.0, 1.0
        if R.shape[1] == 0:
            floors.append(1.0)
            continue
        C = cp.Variable((2, R.shape[1]))
        M = E - C @ R.T
        t = cp.Variable()
        cons = [cp.norm(M[:, 2 * j : 2 * j + 2], "fro") <= t for j in range(d // 2)]
        prob = cp.Problem(cp.Minimize(t), cons)
        prob.solve(solver="CLARABEL")
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise NonConvergence(f"floor program ended with status {prob.status}")
        floors.append(float(prob.value))
    return max(floors)


def _block_update(g, Hjj, lam):
    """Minimize ``tr(B Hjj B') / 2 + tr(B g') + lam ||B||_F`` over 2x2 ``B``."""
    gn = np.sqrt(np.sum(g * g))
    if gn <= lam:
        return np.zeros((2, 2))
    q, Q = np.linalg.eigh(Hjj)
    q = np.maximum(q, 0.0)
    gh = g @ Q
    c2 = (gh**2).sum(axis=0)
    flat = q <= 1e-14 * max(q.max(), 1e-300)
    if c2[flat].sum() >= lam**2 * (1 - 1e-12):
        raise UnboundedProgram("block subproblem is unbounded below")

    def phi(t):
        return np.sum(c2 / (q * t + lam) ** 2) - 1.0

    qpos = q[~flat].min()
    hi = gn / qpos
    while phi(hi) > 0:
        hi *= 2.0
    t = brentq(phi, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=200)
    Bh = -gh * (t / (q * t + lam))
    return Bh @ Q.T


def _solve_pair(H, i, lam, opts, V0=None):
    d = H.shape[0]
    p = d // 2
    E = np.zeros((2, d))
    E[0, 2 * i], E[1, 2 * i + 1] = 1.0, 1.0
    V = np.zeros((2, d)) if V0 is None else V0.copy()
    G = V @ H - E
    diag = [H[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] for j in range(p)]

    def sweep(blocks):
        nonlocal G
        change = 0.0
        for j in blocks:
            sl = slice(2 * j, 2 * j + 2)
            old = V[:, sl]
            g = G[:, sl] - old @ diag[j]
            new = _block_update(g, diag[j], lam)
            delta = new - old
            if np.any(delta):
                V[:, sl] = new
                G += delta @ H[sl, :]
                change = max(change, np.abs(delta).max())
        return change

    sweeps = 0
    everything = list(range(p))
    while sweeps < opts.max_sweeps:
        sweep(everything)
        sweeps += 1
        active = [j for j in everything if np.any(V[:, 2 * j : 2 * j + 2])]
        # iterate on the active set until it settles, then re-check all blocks
        for _ in range(50):
            if sweeps >= opts.max_sweeps or not active:
                break
            ch = sweep(active)
            sweeps += 1
            if ch <= opts.tol * 1e-2:
                break
        G = V @ H - E
        res = _pair_kkt(V, G, lam)
        if res.max(initial=0.0) <= opts.tol:
            return V, sweeps
        if active:
            V = _newton_active(V, H, E, lam, active, opts.tol)
            G = V @ H - E
            if _pair_kkt(V, G, lam).max(initial=0.0) <= opts.tol:
                return V, sweeps
    raise NonConvergence(f"block coordinate descent did not converge in {sweeps} sweeps", v=V)


def _newton_active(V, H, E, lam, active, tol, max_iter=50):
    """Damped Newton steps on the nonzero blocks with the others held at zero.

    Ill-conditioned ``H`` makes coordinate descent crawl along the active
    face; the face problem is smooth, so Newton finishes it quickly. The
    input is returned unchanged if a step would zero a block.
    """
    cols = np.concatenate([[2 * j, 2 * j + 1] for j in active])
    m = cols.size
    Hs = H[np.ix_(cols, cols)]
    Q = np.kron(np.eye(2), Hs)  # Hessian of the quadratic in row-major vec order
    x = V[:, cols].reshape(-1).copy()
    e = E[:, cols].reshape(-1)
    # block b holds entries (r, 2b + c) for r, c in {0, 1}
    blk = np.array([[r * m + 2 * b + c for r in (0, 1) for c in (0, 1)] for b in range(len(active))])

    def obj(z):
        nb = np.sqrt((z[blk] ** 2).sum(axis=1))
        return 0.5 * z @ Q @ z - e @ z + lam * nb.sum()

    f = obj(x)
    for _ in range(max_iter):
        nb = np.sqrt((x[blk] ** 2).sum(axis=1))
        if np.any(nb <= 0):
            break
        g = Q @ x - e
        Hn = Q.copy()
        for b, idx in enumerate(blk):
            u = x[idx] / nb[b]
            g[idx] += lam * u
            Hn[np.ix_(idx, idx)] += lam / nb[b] * (np.eye(4) - np.outer(u, u))
        if np.abs(g).max() <= tol * 1e-3:
            break
        try:
            step = np.linalg.solve(Hn, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-12:
            xn = x + t * step
            fn = obj(xn)
            if fn <= f + 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break
        x, f = xn, fn
    out = V.copy()
    out[:, cols] = x.reshape(2, m)
    return out


def _pair_kkt(V, G, lam):
    Vb = V.reshape(2, -1, 2)
    Gb = G.reshape(2, -1, 2)
    nv = np.sqrt((Vb**2).sum(axis=(0, 2)))
    ng = np.sqrt((Gb**2).sum(axis=(0, 2)))
    safe = np.where(nv > 0, nv, 1.0)
    nf = np.sqrt(((Gb + lam * Vb / safe[None, :, None]) ** 2).sum(axis=(0, 2)))
    return np.where(nv > 0, nf, np.maximum(ng - lam, 0.0))


def fit_step2(hessian, k, lam, opts: Step2Options = None) -> Decorrelator:
    """Solve the decorrelation program for the first ``k`` variables."""
    opts = opts or Step2Options()
    H = hessian.h_mat if isinstance(hessian, PluginHessian) else np.asarray(hessian, dtype=float)
    d = H.shape[0]
    if H.ndim != 2 or H.shape[1] != d or d % 2:
        raise DimensionMismatch("H must be a square matrix of even order")
    if not 1 <= k <= d // 2:
        raise DimensionMismatch(f"k must lie in 1..{d // 2}")
    if not lam > 0:
        raise DomainError("the decorrelation penalty must be positive")
    if not np.any(H):
        raise AllZeroDensity("plug-in Hessian is zero")
    if opts.unbounded not in ("raise", "escalate"):
        raise DomainError("unbounded must be 'raise' or 'escalate'")
    H = 0.5 * (H + H.T)
    floor = boundedness_floor(H, k, opts.rank_tol)
    lam_eff = float(lam)
    if floor > 0 and lam <= floor:
        if opts.unbounded == "raise":
            raise UnboundedProgram(
                f"penalty {lam:.4g} is below the boundedness floor {floor:.4g}", floor=floor
            )
        lam_eff = opts.kappa * floor
        warnings.warn(
            f"decorrelation penalty {lam:.4g} leaves the program unbounded; using {lam_eff:.4g}",
            VCQRWarning,
        )
    V = np.zeros((2 * k, d))
    total = 0
    for i in range(k):
        Vi, sw = _solve_pair(H, i, lam_eff, opts)
        V[2 * i : 2 * i + 2] = Vi
        total += sw
    kkt = block_kkt(V, H, lam_eff)
    v11 = V[:, : 2 * k]
    cond = float(np.linalg.cond(v11)) if np.any(v11) else np.inf
    v2 = None
    if np.isfinite(cond) and cond <= opts.cond_max:
        v2 = np.linalg.solve(v11, V[:, 2 * k :])
        v2.setflags(write=False)
    V.setflags(write=False)
    kkt.setflags(write=False)
    return Decorrelator(
        V, lam_eff, kkt, v2, cond, float(lam), float(floor), total, step2_objective(V, H, lam_eff)
    )


def block_support(dec: Decorrelator):
    """Boolean ``(k, p)`` map of nonzero blocks of ``V``."""
    B = _blocks(dec.v_hat)
    return (B**2).sum(axis=(1, 3)) > 0
