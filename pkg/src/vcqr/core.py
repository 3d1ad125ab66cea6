"""Domain types, check/score functions, kernels and the local-linear design.

Column convention
-----------------
The localized design ``gamma`` has ``2p`` columns. Variables are reordered so
that the variables of interest (``a_set``) come first, in the order given,
followed by the remaining variables in ascending order. Each variable then
occupies two adjacent columns: its level column ``x_ij`` and its derivative
column ``(u_i - u0) * x_ij``. The A-block is therefore the first ``2k``
columns and the ``p`` coefficient groups are the pairs ``(2m, 2m + 1)``.

:meth:`LocalizedDesign.to_half_blocks` converts to the half-block layout
``[X_A, X_Ac, (U-u0) X_A, (U-u0) X_Ac]`` and
:meth:`LocalizedDesign.from_half_blocks` converts back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import DegenerateWindow, DimensionMismatch, DomainError, NonFinite

__all__ = [
    "Dataset",
    "QuerySpec",
    "KernelSpec",
    "LocalizedDesign",
    "KERNELS",
    "get_kernel",
    "rho_tau",
    "psi_tau",
    "knight_decompose",
    "kernel_weights",
    "default_bandwidth",
    "build_design",
    "half_block_index",
]


def _check_tau(tau):
    t = np.asarray(tau, dtype=float)
    if not np.all((t > 0.0) & (t < 1.0)):
        bad = tau if t.ndim == 0 else t[~((t > 0.0) & (t < 1.0))][0]
        raise DomainError(f"tau must lie in (0, 1), got {bad!r}")


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def rho_tau(tau, v):
    """Check loss ``v * (tau - 1{v < 0})``; ``tau`` and ``v`` broadcast."""
    _check_tau(tau)
    v = np.asarray(v, dtype=float)
    out = v * (tau - (v < 0))
    return float(out) if out.ndim == 0 else out


def psi_tau(tau, v):
    """Score ``tau - 1{v < 0}``. The indicator is strict, so ``psi(0) = tau``."""
    _check_tau(tau)
    v = np.asarray(v, dtype=float)
    out = tau - (v < 0).astype(float)
    return float(out) if out.ndim == 0 else out


def knight_decompose(tau, y, q, delta):
    """Split ``rho(y - q - delta) - rho(y - q)`` into a linear and a remainder term.

    Returns ``(w_sharp, w_natural)`` with ``w_sharp = -delta * psi(y - q)`` and
    ``w_natural = (y - q - delta) * (1{q + delta <= y < q} - 1{q <= y < q + delta})``.
    The remainder is nonnegative and the two terms sum exactly to the
    difference of check losses.
    """
    y, q, delta = (np.asarray(a, dtype=float) for a in (y, q, delta))
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(q)) and np.all(np.isfinite(delta))):
        raise NonFinite("knight_decompose requires finite inputs")
    sharp = -delta * psi_tau(tau, y - q)
    lower = (q + delta <= y) & (y < q)
    upper = (q <= y) & (y < q + delta)
    natural = (y - (q + delta)) * (lower.astype(float) - upper.astype(float))
    if sharp.ndim == 0:
        return float(sharp), float(natural)
    return sharp, natural


# --- kernels ---------------------------------------------------------------

def _box(t):
    return (np.abs(t) < 0.5).astype(float)


def _gaussian(t):
    return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)


def _epanechnikov(t):
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel with its closed-form constants.

    ``nu0 = sup K``, ``nu1 = int K``, ``nu2 = int K^2``, ``mu2 = int t^2 K``,
    ``mu4 = int t^4 K``.
    """

    kind: str
    nu0: float
    nu1: float
    nu2: float
    mu2: float
    mu4: float
    func: Callable = field(repr=False, compare=False)

    @property
    def moments(self):
        return (self.nu0, self.nu1, self.nu2, self.mu2, self.mu4)

    def __call__(self, t):
        return self.func(np.asarray(t, dtype=float))


KERNELS = {
    "box": KernelSpec("box", 1.0, 1.0, 1.0, 1.0 / 12.0, 1.0 / 80.0, _box),
    "gaussian": KernelSpec(
        "gaussian", 1.0 / np.sqrt(2.0 * np.pi), 1.0, 1.0 / (2.0 * np.sqrt(np.pi)), 1.0, 3.0, _gaussian
    ),
    "epanechnikov": KernelSpec("epanechnikov", 0.75, 1.0, 0.6, 0.2, 3.0 / 35.0, _epanechnikov),
}


def get_kernel(kind) -> KernelSpec:
    if isinstance(kind, KernelSpec):
        return kind
    try:
        return KERNELS[kind]
    except KeyError:
        raise DomainError(f"unknown kernel {kind!r}; choose from {sorted(KERNELS)}") from None


# --- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Observations ``(y, u, x)`` and the 0-based indices ``a_set`` of interest."""

    y: np.ndarray
    u: np.ndarray
    x: np.ndarray
    a_set: tuple
    names: tuple = None

    def __post_init__(self):
        y = _readonly(self.y).reshape(-1)
        u = _readonly(self.u).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DimensionMismatch("x must be a 2-d array")
        x.setflags(write=False)
        n, p = x.shape
        if n < 1 or p < 1:
            raise DimensionMismatch("need n >= 1 and p >= 1")
        if y.shape[0] != n or u.shape[0] != n:
            raise DimensionMismatch(f"y, u, x disagree on n: {y.shape[0]}, {u.shape[0]}, {n}")
        for name, arr in (("y", y), ("u", u), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"{name} contains non-finite entries")
        a_set = tuple(int(j) for j in np.atleast_1d(self.a_set))
        if not 1 <= len(a_set) <= p:
            raise DimensionMismatch(f"a_set must have between 1 and p={p} entries")
        if len(set(a_set)) != len(a_set):
            raise DimensionMismatch("a_set entries must be distinct")
        if min(a_set) < 0 or max(a_set) >= p:
            raise DimensionMismatch(f"a_set entries must lie in 0..{p - 1}")
        names = self.names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        elif len(names) != p:
            raise DimensionMismatch("names must have one entry per covariate")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a_set", a_set)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def k(self):
        return len(self.a_set)


@dataclass(frozen=True)
class QuerySpec:
    tau: float
    u0: float
    h: float
    kernel: str = "box"

    def __post_init__(self):
        _check_tau(self.tau)
        if not (np.isfinite(self.h) and self.h > 0):
            raise DomainError(f"bandwidth h must be positive, got {self.h!r}")
        if not np.isfinite(self.u0):
            raise DomainError("u0 must be finite")
        get_kernel(self.kernel)

    @property
    def kernel_spec(self) -> KernelSpec:
        return get_kernel(self.kernel)


def default_bandwidth(n, c_h=4.0):
    """Rule-of-thumb bandwidth ``c_h * n^(-1/3)``."""
    if n < 1:
        raise DomainError("n must be positive")
    return c_h * float(n) ** (-1.0 / 3.0)


def kernel_weights(spec: QuerySpec, u) -> np.ndarray:
    """Kernel weights ``K((u_i - u0) / h) / (n h)``; not renormalized."""
    u = np.asarray(u, dtype=float).reshape(-1)
    n = u.shape[0]
    if n < 1:
        raise DimensionMismatch("need at least one observation")
    w = spec.kernel_spec((u - spec.u0) / spec.h) / (n * spec.h)
    if not np.any(w > 0):
        raise DegenerateWindow(f"no observations carry weight near u0={spec.u0}", u0=spec.u0, h=spec.h)
    return w


def half_block_index(p):
    """Internal column indices listed in half-block order.

    ``gamma_half = gamma_internal[:, half_block_index(p)]``.
    """
    return np.concatenate([2 * np.arange(p), 2 * np.arange(p) + 1])


@dataclass(frozen=True)
class LocalizedDesign:
    """Kernel weights and local-linear design at a fixed ``(tau, u0, h)``.

    ``order[m]`` is the original covariate index placed at internal position
    ``m``; ``groups[m] = (2m, 2m + 1)``.
    """

    spec: QuerySpec
    weights: np.ndarray
    gamma: np.ndarray
    groups: np.ndarray
    a_cols: np.ndarray
    order: np.ndarray

    @property
    def n(self):
        return self.gamma.shape[0]

    @property
    def p(self):
        return self.groups.shape[0]

    @property
    def k(self):
        return self.a_cols.shape[0] // 2

    @property
    def nh(self):
        return self.n * self.spec.h

    def to_half_blocks(self, b):
        """Reorder the last axis of ``b`` from internal to half-block layout."""
        return np.asarray(b)[..., half_block_index(self.p)]

    def from_half_blocks(self, b):
        b = np.asarray(b)
        out = np.empty_like(b)
        out[..., half_block_index(self.p)] = b
        return out

    def restrict(self, support):
        """Design restricted to the variables at internal positions ``support``.

        The positions are sorted, so the A-block stays first whenever every
        A position is included.
        """
        support = np.array(sorted(set(int(g) for g in support)), dtype=int)
        if support.size == 0 or support[0] < 0 or support[-1] >= self.p:
            raise DimensionMismatch("support must be a nonempty subset of the variable positions")
        k = int(np.count_nonzero(support < self.k))
        cols = self.groups[support].ravel()
        gamma = np.array(self.gamma[:, cols])
        q = support.size
        groups = np.column_stack([2 * np.arange(q), 2 * np.arange(q) + 1])
        a_cols = np.arange(2 * k)
        order = np.array(self.order[support])
        for arr in (gamma, groups, a_cols, order):
            arr.setflags(write=False)
        return LocalizedDesign(self.spec, self.weights, gamma, groups, a_cols, order)

    def to_original(self, b, p=None):
        """Split an internal coefficient vector into ``(level, slope)`` arrays
        indexed by the original covariate order (length ``p``, default
        ``self.p``; pass the full width for restricted designs)."""
        b = np.asarray(b, dtype=float)
        p = self.p if p is None else p
        level = np.zeros(p)
        slope = np.zeros(p)
        level[self.order] = b[0::2]
        slope[self.order] = b[1::2]
        return level, slope


def variable_order(p, a_set: Sequence[int]):
    a_set = list(a_set)
    rest = [j for j in range(p) if j not in set(a_set)]
    return np.array(a_set + rest, dtype=int)


def build_design(data: Dataset, spec: QuerySpec) -> LocalizedDesign:
    w = kernel_weights(spec, data.u)
    order = variable_order(data.p, data.a_set)
    xo = data.x[:, order]
    d = data.u - spec.u0
    gamma = np.empty((data.n, 2 * data.p))
    gamma[:, 0::2] = xo
    gamma[:, 1::2] = xo * d[:, None]
    groups = np.column_stack([2 * np.arange(data.p), 2 * np.arange(data.p) + 1])
    a_cols = np.arange(2 * data.k)
    for arr in (w, gamma, groups, a_cols, order):
        arr.setflags(write=False)
    return LocalizedDesign(spec, w, gamma, groups, a_cols, order)
