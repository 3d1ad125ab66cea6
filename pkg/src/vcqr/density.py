"""Residual density estimate and the plug-in Hessian."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import LocalizedDesign, _check_tau
from .exceptions import (
    AllZeroDensity,
    BandwidthOverflow,
    DegenerateResiduals,
    DimensionMismatch,
    DomainError,
    VCQRWarning,
    ZeroWeights,
)

__all__ = [
    "DensityEstimate",
    "PluginHessian",
    "powell_bandwidth",
    "weighted_quantile",
    "weighted_variance",
    "residual_bandwidth_hf",
    "f_hat",
    "plugin_hessian",
    "estimate_density",
]


@dataclass(frozen=True)
class DensityEstimate:
    h_p: float
    h_f: float
    residuals: np.ndarray
    f_hat: np.ndarray
    w_var: float
    w_iqr: float
    clamped: bool = False


@dataclass(frozen=True)
class PluginHessian:
    h_mat: np.ndarray

    @property
    def dim(self):
        return self.h_mat.shape[0]


def powell_bandwidth(tau, n):
    """``n^(-1/3) z_{0.975}^(2/3) (1.5 phi(z_tau)^2 / (2 z_tau^2 + 1))^(1/3)``.

    Raises
    ------
    BandwidthOverflow
        If ``tau - h_p`` or ``tau + h_p`` leaves (0, 1).
    """
    _check_tau(tau)
    if n < 2:
        raise DomainError("powell_bandwidth needs n >= 2")
    z = norm.ppf(tau)
    hp = (
        float(n) ** (-1.0 / 3.0)
        * norm.ppf(0.975) ** (2.0 / 3.0)
        * (1.5 * norm.pdf(z) ** 2 / (2.0 * z * z + 1.0)) ** (1.0 / 3.0)
    )
    if not (0.0 < tau - hp and tau + hp < 1.0):
        raise BandwidthOverflow(f"tau +/- h_p leaves (0, 1): tau={tau}, h_p={hp}", h_p=hp)
    return hp


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if not total > 0:
        raise ZeroWeights("weights sum to zero")
    return w, total


def weighted_quantile(e, w, alpha):
    """Smallest ``q`` with ``sum(w * (e <= q)) / sum(w) >= alpha``."""
    e = np.asarray(e, dtype=float)
    w, total = _check_weights(w)
    if e.shape != w.shape:
        raise DimensionMismatch("e and w differ in length")
    order = np.argsort(e, kind="stable")
    es = e[order]
    cw = np.cumsum(w[order])
    # the cumulative mass must be compared at distinct values only
    last = np.r_[es[1:] != es[:-1], True]
    vals, mass = es[last], cw[last] / total
    hit = mass >= alpha
    # rounding can leave the total mass a hair below alpha close to 1
    idx = int(np.argmax(hit)) if hit.any() else len(vals) - 1
    return float(vals[idx])


def weighted_variance(e, w):
    """Plug-in weighted variance without small-sample correction."""
    e = np.asarray(e, dtype=float)
    w, total = _check_weights(w)
    mean = (w @ e) / total
    return float(w @ (e - mean) ** 2 / total)


def residual_bandwidth_hf(tau, h_p, e, w):
    """Residual-scale bandwidth ``(z_{tau+h_p} - z_{tau-h_p}) * min(sd, IQR / 1.34)``."""
    _check_tau(tau)
    if not (0.0 < tau - h_p and tau + h_p < 1.0):
        raise BandwidthOverflow(f"tau +/- h_p leaves (0, 1): tau={tau}, h_p={h_p}", h_p=h_p)
    sd = np.sqrt(weighted_variance(e, w))
    iqr = weighted_quantile(e, w, 0.75) - weighted_quantile(e, w, 0.25)
    scale = min(sd, iqr / 1.34)
    if not scale > 0:
        raise DegenerateResiduals("residual spread is zero; density estimate would be a point mass")
    return float((norm.ppf(tau + h_p) - norm.ppf(tau - h_p)) * scale)


def f_hat(e, h_f):
    """``1{|e_i| <= h_f} / (2 h_f)`` entry-wise."""
    if not h_f > 0:
        raise DomainError("h_f must be positive")
    e = np.asarray(e, dtype=float)
    return (np.abs(e) <= h_f) / (2.0 * h_f)


def plugin_hessian(design: LocalizedDesign, f) -> PluginHessian:
    """``sum_i w_i f_i gamma_i gamma_i'``."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != design.n:
        raise DimensionMismatch("f_hat and design disagree on n")
    c = design.weights * f
    keep = c > 0
    G = design.gamma[keep]
    H = (G * c[keep, None]).T @ G
    H = 0.5 * (H + H.T)
    H.setflags(write=False)
    if not np.any(keep):
        raise AllZeroDensity("every w_i * f_hat_i is zero", hessian=PluginHessian(H))
    return PluginHessian(H)


def estimate_density(design: LocalizedDesign, y, b) -> DensityEstimate:
    """Residuals at ``b`` and their data-adaptive density weights.

    When the Powell bandwidth would push ``tau +/- h_p`` outside (0, 1) it is
    clamped to ``0.99 * min(tau, 1 - tau)`` with a warning.
    """
    tau = design.spec.tau
    n = design.n
    clamped = False
    try:
        hp = powell_bandwidth(tau, n)
    except BandwidthOverflow as exc:
        hp = 0.99 * min(tau, 1.0 - tau)
        clamped = True
        warnings.warn(f"{exc}; clamping h_p to {hp}", VCQRWarning)
    e = np.asarray(y, dtype=float) - design.gamma @ np.asarray(b, dtype=float)
    w = design.weights
    keep = w > 0
    ek, wk = e[keep], w[keep]
    hf = residual_bandwidth_hf(tau, hp, ek, wk)
    f = f_hat(e, hf)
    var = weighted_variance(ek, wk)
    iqr = weighted_quantile(ek, wk, 0.75) - weighted_quantile(ek, wk, 0.25)
    for arr in (e, f):
        arr.setflags(write=False)
    return DensityEstimate(hp, hf, e, f, var, iqr, clamped)
