"""End-to-end three-step pipeline at one ``(tau, u0)``."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, QuerySpec, build_design, default_bandwidth
from .decorrelation import Decorrelator, Step2Options, fit_step2, lambda_v
from .density import estimate_density, plugin_hessian
from .exceptions import DomainError, VCQRError
from .inference import DSOptions, estimate_ds, estimate_os, estimate_rp, make_result
from .lasso import SolverOptions, fit_step1, lambda_b, post_refit

__all__ = ["PipelineConfig", "PipelineResult", "run_pipeline", "ESTIMATORS"]

ESTIMATORS = ("OS", "DS", "RP")


@dataclass(frozen=True)
class PipelineConfig:
    tau: float = 0.5
    u0: float = 1.0
    h: float = None
    kernel: str = "box"
    c_b: float = 0.4
    c_v: float = 0.02
    estimators: tuple = ESTIMATORS
    level: float = 0.95
    cov_form: str = "empirical"
    refit: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)
    step2: Step2Options = field(default_factory=Step2Options)
    ds: DSOptions = field(default_factory=DSOptions)

    def __post_init__(self):
        est = tuple(str(e).upper() for e in self.estimators)
        bad = [e for e in est if e not in ESTIMATORS]
        if bad or not est:
            raise DomainError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        object.__setattr__(self, "estimators", est)
        if self.cov_form not in ("empirical", "expected"):
            raise DomainError("cov_form must be 'empirical' or 'expected'")
        if not 0 < self.level < 1:
            raise DomainError("level must lie in (0, 1)")

    def resolve(self, n):
        """Config with the bandwidth filled in for sample size ``n``."""
        return self if self.h is not None else replace(self, h=default_bandwidth(n))


@dataclass
class PipelineResult:
    config: PipelineConfig
    design: object
    fit: object
    density: object
    decorrelator: Decorrelator
    results: dict
    errors: dict
    diagnostics: dict


def run_pipeline(data: Dataset, config: PipelineConfig) -> PipelineResult:
    """Steps 1 to 3. Failures in Steps 1 and 2 raise; a failing estimator in
    Step 3 is recorded in ``errors`` while the others still run."""
    cfg = config.resolve(data.n)
    spec = QuerySpec(cfg.tau, cfg.u0, cfg.h, cfg.kernel)
    design = build_design(data, spec)
    lam_b = lambda_b(design, data, cfg.c_b)
    fit = fit_step1(design, data, lam_b, cfg.solver)
    b_use = np.asarray(fit.b_hat)
    if cfg.refit and fit.active_groups:
        support = sorted(set(fit.active_groups) | set(range(design.k)))
        b_use = post_refit(design, data, support, cfg.solver)
        b_use.setflags(write=False)
        fit = replace(fit, b_hat=b_use)
    dens = estimate_density(design, data.y, b_use)
    hess = plugin_hessian(design, dens.f_hat)
    lam_v = lambda_v(data.n, cfg.h, data.p, cfg.c_v)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dec = fit_step2(hess, design.k, lam_v, cfg.step2)
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)

    results, errors = {}, {}
    for kind in cfg.estimators:
        try:
            if kind == "OS":
                a = estimate_os(design, data, fit, dec)
                extra = {}
            elif kind == "DS":
                ds = estimate_ds(design, data, fit, dec, cfg.ds)
                a = ds.a_check
                extra = {"ds_objective": ds.objective, "ds_degenerate": ds.degenerate}
            else:
                a = estimate_rp(design, data, fit, dec, cfg.solver)
                extra = {}
            results[kind] = make_result(
                kind, design, data, a, b_use, dec.v_hat, cfg.cov_form, cfg.level, **extra
            )
        except VCQRError as exc:
            errors[kind] = exc
    diagnostics = {
        "h": cfg.h,
        "nh": design.nh,
        "local_n": int(np.count_nonzero(design.weights > 0)),
        "lambda_b": lam_b,
        "step1_iters": fit.iters,
        "step1_certified": fit.certified,
        "step1_kkt_gap": fit.kkt_gap,
        "active_groups": [int(design.order[g]) for g in fit.active_groups],
        "h_p": dens.h_p,
        "h_f": dens.h_f,
        "hessian_rank": int(np.linalg.matrix_rank(hess.h_mat)),
        "lambda_v_formula": lam_v,
        "lambda_v": dec.lambda_v,
        "lambda_v_floor": dec.floor,
        "lambda_v_escalated": dec.escalated,
        "step2_sweeps": dec.sweeps,
        "step2_block_kkt_max": float(dec.block_kkt.max()),
        "v11_cond": dec.v11_cond,
    }
    return PipelineResult(cfg, design, fit, dens, dec, results, errors, diagnostics)
