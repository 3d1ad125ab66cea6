"""scikit-learn style wrappers around the pipeline.

Both estimators take the index variable ``u`` as a keyword to ``fit``; the
covariates ``X`` carry no intercept column unless the caller adds one.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_a_set, check_probability, check_xyu
from .core import Dataset, QuerySpec, build_design, default_bandwidth
from .decorrelation import Step2Options
from .inference import DSOptions
from .lasso import SolverOptions, fit_step1, lambda_b
from .pipeline import PipelineConfig, run_pipeline

__all__ = ["LocalQuantileGroupLasso", "DecorrelatedQuantileInference"]


class LocalQuantileGroupLasso(RegressorMixin, BaseEstimator):
    """Group-penalized local-linear quantile regression at one index value.

    Parameters
    ----------
    tau, u0 : quantile level and index point.
    h : bandwidth; ``None`` uses ``4 n^(-1/3)``.
    kernel : ``"box"``, ``"gaussian"`` or ``"epanechnikov"``.
    c_b : penalty constant.
    a_set : indices kept first in the internal column order. They are
        penalized like every other variable.
    solver : optional :class:`SolverOptions`.

    After ``fit``: ``coef_`` and ``slope_`` hold the thresholded level and
    derivative coefficients in the original covariate order, ``support_`` the
    selected covariates, ``lambda_`` the penalty and ``fit_`` the raw result.
    """

    def __init__(self, tau=0.5, u0=1.0, h=None, kernel="box", c_b=0.4, a_set=(0,), solver=None):
        self.tau = tau
        self.u0 = u0
        self.h = h
        self.kernel = kernel
        self.c_b = c_b
        self.a_set = a_set
        self.solver = solver

    def fit(self, X, y, u=None):
        if u is None:
            raise TypeError("fit needs the index variable: fit(X, y, u=...)")
        X, y, u = check_xyu(X, y, u)
        check_probability(self.tau, "tau")
        data = Dataset(y, u, X, check_a_set(self.a_set, X.shape[1]))
        h = default_bandwidth(data.n) if self.h is None else float(self.h)
        design = build_design(data, QuerySpec(float(self.tau), float(self.u0), h, self.kernel))
        lam = lambda_b(design, data, self.c_b)
        fit = fit_step1(design, data, lam, self.solver or SolverOptions())
        self.coef_, self.slope_ = design.to_original(fit.b_hat)
        self.coef_ini_, self.slope_ini_ = design.to_original(fit.b_ini)
        self.support_ = np.array(sorted(int(design.order[g]) for g in fit.active_groups), dtype=int)
        self.lambda_ = lam
        self.h_ = h
        self.fit_ = fit
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, u=None):
        """Local-linear conditional quantile ``x'(coef + (u - u0) slope)``.

        Without ``u`` the prediction is at ``u0``.
        """
        check_is_fitted(self, "coef_")
        X, _, u = check_xyu(X, None, u)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = X @ self.coef_
        if u is not None:
            out = out + (u - self.u0) * (X @ self.slope_)
        return out

    def score(self, X, y, u=None):
        """Negative mean check loss (larger is better)."""
        from .core import rho_tau

        X, y, u = check_xyu(X, y, u)
        return -float(np.mean(rho_tau(self.tau, y - self.predict(X, u))))


class DecorrelatedQuantileInference(BaseEstimator):
    """Post-selection confidence intervals for the coefficients in ``a_set``.

    Runs the penalized fit, the density plug-in, the decorrelation step and
    the requested debiased estimators. After ``fit``:

    ``results_`` maps estimator name to :class:`InferenceResult`;
    ``errors_`` maps estimator name to the error that stopped it;
    ``coef_`` is the ``(k, 2)`` array of (level, derivative) estimates of the
    first available estimator in ``estimators``;
    ``diagnostics_`` collects tuning values and solver statistics.
    """

    def __init__(
        self, tau=0.5, u0=1.0, h=None, kernel="box", c_b=0.4, c_v=0.02, a_set=(0,),
        estimators=("OS", "DS", "RP"), level=0.95, cov_form="empirical", refit=False,
        solver=None, step2=None, ds=None,
    ):
        self.tau = tau
        self.u0 = u0
        self.h = h
        self.kernel = kernel
        self.c_b = c_b
        self.c_v = c_v
        self.a_set = a_set
        self.estimators = estimators
        self.level = level
        self.cov_form = cov_form
        self.refit = refit
        self.solver = solver
        self.step2 = step2
        self.ds = ds

    def _config(self):
        return PipelineConfig(
            tau=check_probability(self.tau, "tau"), u0=float(self.u0), h=self.h, kernel=self.kernel,
            c_b=self.c_b, c_v=self.c_v, estimators=tuple(self.estimators), level=self.level,
            cov_form=self.cov_form, refit=self.refit, solver=self.solver or SolverOptions(),
            step2=self.step2 or Step2Options(), ds=self.ds or DSOptions(),
        )

    def fit(self, X, y, u=None):
        if u is None:
            raise TypeError("fit needs the index variable: fit(X, y, u=...)")
        X, y, u = check_xyu(X, y, u)
        data = Dataset(y, u, X, check_a_set(self.a_set, X.shape[1]))
        res = run_pipeline(data, self._config())
        self.pipeline_ = res
        self.results_ = res.results
        self.errors_ = res.errors
        self.diagnostics_ = res.diagnostics
        self.n_features_in_ = X.shape[1]
        first = next((e for e in res.config.estimators if e in res.results), None)
        self.coef_ = None if first is None else res.results[first].a_check.reshape(-1, 2)
        return self

    def conf_int(self, estimator="OS"):
        """``(2k, 2)`` interval bounds, rows ordered (level, derivative) per variable."""
        check_is_fitted(self, "results_")
        if estimator in self.errors_:
            raise self.errors_[estimator]
        if estimator not in self.results_:
            raise KeyError(f"estimator {estimator!r} was not requested")
        return self.results_[estimator].ci

    def summary(self):
        """One dict per (estimator, coefficient) with estimate, standard error and interval."""
        check_is_fitted(self, "results_")
        rows = []
        k = len(self.a_set) if np.ndim(self.a_set) else 1
        order = check_a_set(self.a_set, self.n_features_in_)
        for name in self.pipeline_.config.estimators:
            if name not in self.results_:
                continue
            r = self.results_[name]
            se = r.std_error
            for j in range(2 * k):
                rows.append({
                    "estimator": name, "variable": int(order[j // 2]),
                    "part": "level" if j % 2 == 0 else "slope",
                    "estimate": float(r.a_check[j]), "std_error": float(se[j]),
                    "ci_lo": float(r.ci[j, 0]), "ci_hi": float(r.ci[j, 1]),
                })
        return rows
