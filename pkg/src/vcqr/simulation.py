"""Monte Carlo harness: data-generating process, calibration and coverage study.

Data are drawn as

* ``U ~ Unif[0, 2]``;
* ``X_{-1} | U ~ N(mu(U), Sigma(U))`` with ``mu_j(U) = a0 j (U^a1 - 1)`` and
  AR correlation ``Sigma_ij = rho(U)^|i-j|``, ``rho(U) = rho^(1 + b0 (U^b1 - 1))``;
* ``X_1 = X_{-1} (c_x nu) + eps_x`` with ``nu_{j-1} = 1 / j^2``, ``j = 2..p``;
* ``Y = X beta(U) + eps`` with ``beta = (1/2, c_y nu)``,
  ``beta(U) = beta (c0 U^c1 + 1 - c0)`` and
  ``eps = sigma_e(U) F_e sqrt((2 - gamma + gamma X_1^2) / 2)``,
  ``sigma_e(U) = sigma_e (1 + d0 (U^d1 - 1))``.

Replication ``r`` draws from a Philox stream keyed by ``(seed, r)``, so the
results do not depend on how replications are scheduled.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .core import Dataset
from .exceptions import CalibrationFailure, DomainError, VCQRError
from .inference import low_dimensional_inference
from .pipeline import PipelineConfig, run_pipeline
from .lasso import fit_step1, lambda_b

__all__ = [
    "SimParams",
    "SimConfig",
    "TruthRecord",
    "SimReport",
    "MethodSummary",
    "generate_dataset",
    "true_quantile",
    "calibrate_r2",
    "run_baseline_oracle",
    "run_baseline_naive",
    "run_replication",
    "run_study",
    "summarize",
    "METHODS",
]

METHODS = ("OS", "DS", "RP", "Naive", "Oracle")
ERROR_DISTS = ("normal", "t3")


@dataclass(frozen=True)
class SimParams:
    a0: float = 1.0
    a1: float = 0.1
    b0: float = 1.0
    b1: float = 0.1
    c0: float = 1.0
    c1: float = 0.5
    d0: float = 1.0
    d1: float = 0.2
    rho: float = 0.2
    sigma_e: float = 1.0

    def rho_u(self, u):
        return self.rho ** (1.0 + self.b0 * (np.asarray(u, dtype=float) ** self.b1 - 1.0))

    def beta_scale(self, u):
        return self.c0 * np.asarray(u, dtype=float) ** self.c1 + 1.0 - self.c0

    def beta_scale_slope(self, u):
        return self.c0 * self.c1 * np.asarray(u, dtype=float) ** (self.c1 - 1.0)

    def sigma_u(self, u):
        return self.sigma_e * (1.0 + self.d0 * (np.asarray(u, dtype=float) ** self.d1 - 1.0))


@dataclass(frozen=True)
class SimConfig:
    n: int = 300
    p: int = 100
    gamma: int = 0
    error_dist: str = "normal"
    params: SimParams = field(default_factory=SimParams)
    r2_targets: tuple = (0.7, 0.3)
    c_x: float = None
    c_y: float = None
    tau: float = 0.5
    u0: float = 1.0
    m_reps: int = 100
    seed: int = 20240611
    methods: tuple = METHODS
    c_b: float = 0.4
    c_v: float = 0.02
    kernel: str = "box"
    h: float = None
    level: float = 0.95
    cov_form: str = "empirical"
    oracle_threshold: float = 0.05
    pilot_n: int = 100_000

    def __post_init__(self):
        if self.p < 2 or self.n < 2:
            raise DomainError("need n >= 2 and p >= 2")
        if self.gamma not in (0, 1):
            raise DomainError("gamma must be 0 or 1")
        if self.error_dist not in ERROR_DISTS:
            raise DomainError(f"error_dist must be one of {ERROR_DISTS}")
        if not 0.0 <= self.u0 <= 2.0:
            raise DomainError("u0 must lie in the support [0, 2] of U")
        methods = tuple(self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise DomainError(f"methods must be drawn from {METHODS}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "r2_targets", tuple(float(r) for r in self.r2_targets))
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", SimParams(**self.params))

    @property
    def calibrated(self):
        return self.c_x is not None and self.c_y is not None

    def pipeline_config(self):
        return PipelineConfig(
            tau=self.tau, u0=self.u0, h=self.h, kernel=self.kernel, c_b=self.c_b, c_v=self.c_v,
            estimators=tuple(m for m in self.methods if m in ("OS", "DS", "RP")) or ("OS",),
            level=self.level, cov_form=self.cov_form,
        )

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["r2_targets"] = list(self.r2_targets)
        return d


@dataclass(frozen=True)
class TruthRecord:
    beta_true: float
    slope_true: float
    beta: np.ndarray
    params: SimParams
    gamma: int
    error_dist: str

    def beta_u(self, u):
        return self.beta * self.params.beta_scale(u)

    def support(self, u0, threshold):
        """Original indices of the variables with ``|beta_j(u0)| > threshold``."""
        return tuple(int(j) for j in np.flatnonzero(np.abs(self.beta_u(u0)) > threshold))

    def q_e(self, tau):
        if self.error_dist == "normal":
            return float(stats.norm.ppf(tau))
        return float(stats.t.ppf(tau, df=3))

    def q_fn(self, x, tau, u):
        return true_quantile(self, x, tau, u)


def true_quantile(truth: TruthRecord, x, tau, u):
    """Closed-form conditional quantile of ``Y`` given ``(x, u)``."""
    if not 0.0 < tau < 1.0:
        raise DomainError("tau must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    scale = np.sqrt((2.0 - truth.gamma + truth.gamma * x[..., 0] ** 2) / 2.0)
    return x @ truth.beta_u(u) + truth.params.sigma_u(u) * scale * truth.q_e(tau)


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _draw_components(n, p, params: SimParams, error_dist, rng):
    """Draw everything that does not depend on ``(c_x, c_y)``."""
    u = rng.uniform(0.0, 2.0, n)
    z = rng.standard_normal((n, p - 1))
    r = params.rho_u(u)
    s = np.sqrt(1.0 - r * r)
    for c in range(1, p - 1):
        z[:, c] = r * z[:, c - 1] + s * z[:, c]
    j = np.arange(2, p + 1)
    xm = params.a0 * j[None, :] * (u[:, None] ** params.a1 - 1.0) + z
    eps_x = rng.standard_normal(n)
    fe = rng.standard_normal(n) if error_dist == "normal" else rng.standard_t(3, n)
    return u, xm, eps_x, fe


def _nu(p):
    return 1.0 / np.arange(2, p + 1) ** 2


def _assemble(u, xm, eps_x, fe, c_x, c_y, params, gamma):
    nu = _nu(xm.shape[1] + 1)
    x1 = xm @ (c_x * nu) + eps_x
    x = np.column_stack([x1, xm])
    beta = np.concatenate([[0.5], c_y * nu])
    eps = params.sigma_u(u) * fe * np.sqrt((2.0 - gamma + gamma * x1**2) / 2.0)
    y = x @ beta * params.beta_scale(u) + eps
    return y, x, beta, eps


def _truth(cfg: SimConfig, beta):
    pr = cfg.params
    return TruthRecord(
        beta_true=float(beta[0] * pr.beta_scale(cfg.u0)),
        slope_true=float(beta[0] * pr.beta_scale_slope(cfg.u0)) if cfg.u0 > 0 else math.nan,
        beta=beta, params=pr, gamma=cfg.gamma, error_dist=cfg.error_dist,
    )


def generate_dataset(cfg: SimConfig, rng) -> tuple:
    """One sample of size ``cfg.n``; coefficient of interest is ``X_1``."""
    if not cfg.calibrated:
        raise DomainError("c_x and c_y must be set (see calibrate_r2)")
    u, xm, eps_x, fe = _draw_components(cfg.n, cfg.p, cfg.params, cfg.error_dist, rng)
    y, x, beta, _ = _assemble(u, xm, eps_x, fe, cfg.c_x, cfg.c_y, cfg.params, cfg.gamma)
    return Dataset(y, u, x, (0,)), _truth(cfg, beta)


def _r2(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = (a @ a) * (b @ b)
    return float((a @ b) ** 2 / den) if den > 0 else 0.0


def _root(fun, target, name):
    if target == 0:
        return 0.0
    hi = 1.0
    while fun(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise CalibrationFailure(f"no bracket for {name} target {target}")
    return brentq(lambda c: fun(c) - target, 0.0, hi, xtol=1e-12)


def calibrate_r2(cfg: SimConfig, pilot_n=None, rng=None):
    """Find ``(c_x, c_y)`` hitting the pilot-sample R^2 targets.

    ``R^2_x`` is the squared correlation between ``X_1`` and its signal
    ``X_{-1} (c_x nu)``; ``R^2_y`` that between ``Y - X_1 beta_1(U)`` and
    ``X_{-1} beta_{-1}(U)``. Both are monotone in the coefficient on a fixed
    pilot sample and are solved by bracketing root search.
    """
    pilot_n = cfg.pilot_n if pilot_n is None else pilot_n
    r2x, r2y = cfg.r2_targets
    for r in (r2x, r2y):
        if not 0.0 <= r < 1.0:
            raise CalibrationFailure(f"R^2 target {r} outside [0, 1)")
    rng = _stream(cfg.seed, 1) if rng is None else rng
    u, xm, eps_x, fe = _draw_components(pilot_n, cfg.p, cfg.params, cfg.error_dist, rng)
    signal = xm @ _nu(cfg.p)
    g = cfg.params.beta_scale(u)

    def fx(c):
        return _r2(c * signal + eps_x, c * signal)

    c_x = _root(fx, r2x, "c_x")
    x1 = c_x * signal + eps_x
    eps = cfg.params.sigma_u(u) * fe * np.sqrt((2.0 - cfg.gamma + cfg.gamma * x1**2) / 2.0)

    def fy(c):
        sig = c * signal * g
        return _r2(sig + eps, sig)

    c_y = _root(fy, r2y, "c_y")
    return float(c_x), float(c_y)


def _ld_record(res, truth):
    a = float(res.a_check[0])
    se = float(res.std_error[0])
    lo, hi = (float(v) for v in res.ci[0])
    return {"estimate": a, "se": se, "covered": bool(lo <= truth.beta_true <= hi)}


def run_baseline_oracle(data, truth: TruthRecord, cfg: SimConfig, design=None):
    """Low-dimensional fit on the variables with ``|beta_j(u0)|`` above the threshold."""
    from .core import QuerySpec, build_design, default_bandwidth

    if design is None:
        h = cfg.h if cfg.h is not None else default_bandwidth(data.n)
        design = build_design(data, QuerySpec(cfg.tau, cfg.u0, h, cfg.kernel))
    pos = np.empty(data.p, dtype=int)
    pos[design.order] = np.arange(data.p)
    support = [int(pos[j]) for j in truth.support(cfg.u0, cfg.oracle_threshold)]
    return low_dimensional_inference(design, data, support, cfg.cov_form, cfg.level, kind="Oracle")


def run_baseline_naive(data, cfg: SimConfig, design=None, fit=None):
    """Refit on the Step-1 selection (plus the variables of interest) as if it were known."""
    from .core import QuerySpec, build_design, default_bandwidth

    if design is None:
        h = cfg.h if cfg.h is not None else default_bandwidth(data.n)
        design = build_design(data, QuerySpec(cfg.tau, cfg.u0, h, cfg.kernel))
    if fit is None:
        fit = fit_step1(design, data, lambda_b(design, data, cfg.c_b))
    return low_dimensional_inference(
        design, data, fit.active_groups, cfg.cov_form, cfg.level, kind="Naive"
    )


def run_replication(cfg: SimConfig, rep: int) -> dict:
    """All requested methods on replication ``rep``; errors are recorded by category."""
    data, truth = generate_dataset(cfg, _stream(cfg.seed, 0, rep))
    out = {}
    pipe = fit = design = None
    needs_pipe = any(m in cfg.methods for m in ("OS", "DS", "RP", "Naive"))
    if needs_pipe:
        try:
            pipe = run_pipeline(data, cfg.pipeline_config())
            design, fit = pipe.design, pipe.fit
        except VCQRError as exc:
            for m in cfg.methods:
                if m != "Oracle":
                    out[m] = {"error": exc.category}
    for m in cfg.methods:
        if m in out:
            continue
        try:
            if m in ("OS", "DS", "RP"):
                if m in pipe.errors:
                    out[m] = {"error": pipe.errors[m].category}
                    continue
                out[m] = _ld_record(pipe.results[m], truth)
            elif m == "Naive":
                out[m] = _ld_record(run_baseline_naive(data, cfg, design, fit), truth)
            else:
                out[m] = _ld_record(run_baseline_oracle(data, truth, cfg, design), truth)
        except VCQRError as exc:
            out[m] = {"error": exc.category}
    if pipe is not None:
        d = pipe.diagnostics
        out["_diag"] = {
            "lambda_v": d["lambda_v"], "lambda_v_escalated": d["lambda_v_escalated"],
            "hessian_rank": d["hessian_rank"], "local_n": d["local_n"],
            "n_active": len(d["active_groups"]),
        }
    return out


@dataclass(frozen=True)
class MethodSummary:
    method: str
    bias: float
    sd: float
    ese: float
    cr: float
    m_effective: int


@dataclass
class SimReport:
    config: SimConfig
    rows: list
    beta_true: float
    failures: dict
    replications: list
    runtime: float = 0.0

    def row(self, method):
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def summarize(estimates, ses, covered, truth):
    """Bias, SD (``ddof=1``), ESE and coverage of one method."""
    est = np.asarray(estimates, dtype=float)
    m = est.shape[0]
    if m == 0:
        return math.nan, math.nan, math.nan, math.nan
    bias = float(est.mean() - truth)
    sd = float(est.std(ddof=1)) if m > 1 else 0.0
    return bias, sd, float(np.mean(ses)), float(np.mean(covered))


def run_study(cfg: SimConfig, n_jobs: int = 1, progress=None) -> SimReport:
    """Replicate and aggregate. Calibrates ``(c_x, c_y)`` first if unset."""
    from threadpoolctl import threadpool_limits

    t0 = time.perf_counter()
    if not cfg.calibrated:
        c_x, c_y = calibrate_r2(cfg)
        cfg = replace(cfg, c_x=c_x, c_y=c_y)
    truth = _truth(cfg, np.concatenate([[0.5], cfg.c_y * _nu(cfg.p)]))

    def task(rep):
        rec = run_replication(cfg, rep)
        if progress is not None:
            progress(rep)
        return rec

    # single-threaded BLAS keeps every replication's arithmetic identical
    # regardless of how many replications run at once
    with threadpool_limits(limits=1):
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                reps = list(pool.map(task, range(cfg.m_reps)))
        else:
            reps = [task(r) for r in range(cfg.m_reps)]

    rows, failures = [], {}
    for m in cfg.methods:
        ok = [r[m] for r in reps if "error" not in r[m]]
        errs = [r[m]["error"] for r in reps if "error" in r[m]]
        if errs:
            failures[m] = {c: errs.count(c) for c in sorted(set(errs))}
        bias, sd, ese, cr = summarize(
            [o["estimate"] for o in ok], [o["se"] for o in ok], [o["covered"] for o in ok],
            truth.beta_true,
        )
        rows.append(MethodSummary(m, bias, sd, ese, cr, len(ok)))
    if all(r.m_effective == 0 for r in rows):
        raise VCQRError("every replication failed for every method", failures=failures)
    return SimReport(cfg, rows, truth.beta_true, failures, reps, time.perf_counter() - t0)
