"""Input checks shared by the estimator classes and the command line."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionMismatch, DomainError, NonFinite


def first_nonfinite(a):
    """``(row, col)`` of the first non-finite entry of a 2-d array, or None."""
    bad = np.argwhere(~np.isfinite(a))
    return None if bad.size == 0 else tuple(int(i) for i in bad[0])


def check_xyu(X, y, u=None):
    """Coerce ``(X, y, u)`` to float arrays and verify shapes and finiteness.

    ``u`` may be omitted only when ``X`` is not needed at a specific index
    (prediction at ``u0``); callers pass it explicitly otherwise.
    """
    X = check_array(X, dtype=float, ensure_all_finite=False, ensure_min_features=1)
    loc = first_nonfinite(X)
    if loc is not None:
        raise NonFinite(f"X has a non-finite entry at row {loc[0]}, column {loc[1]}", row=loc[0], col=loc[1])
    n = X.shape[0]
    out = [X]
    for name, v in (("y", y), ("u", u)):
        if v is None:
            out.append(None)
            continue
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != n:
            raise DimensionMismatch(f"{name} has {v.shape[0]} entries but X has {n} rows")
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise NonFinite(f"{name} has a non-finite entry at row {bad[0]}", row=int(bad[0]))
        out.append(v)
    return tuple(out)


def check_a_set(a_set, p):
    """Normalize the indices of interest to a tuple of distinct ints in ``0..p-1``."""
    a = tuple(int(j) for j in np.atleast_1d(a_set))
    if not a:
        raise DimensionMismatch("a_set must not be empty")
    if len(set(a)) != len(a) or min(a) < 0 or max(a) >= p:
        raise DimensionMismatch(f"a_set {a} must hold distinct indices in 0..{p - 1}")
    return a


def check_probability(value, name):
    if not 0.0 < float(value) < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)
