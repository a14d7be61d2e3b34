"""Small input checks shared across modules."""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateCovarianceError, DomainError


def as_float_array(x, name, ndim=None, finite=True):
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_square(m, name):
    m = as_float_array(m, name, ndim=2)
    if m.shape[0] != m.shape[1]:
        raise DomainError(f"{name} must be square, got shape {m.shape}")
    return m


def check_spd(m, name, rtol=1e-10):
    """Return ``m`` symmetrized after confirming it is symmetric positive definite."""
    m = check_square(m, name)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0.0, atol=rtol * scale):
        raise DegenerateCovarianceError(f"{name} is not symmetric")
    m = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(f"{name} is not positive definite") from exc
    return m


def check_positive(x, name):
    if not (np.isfinite(x) and x > 0):
        raise DomainError(f"{name} must be positive and finite, got {x!r}")
    return float(x)


def check_open_unit(x, name):
    if not (0.0 < x < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {x!r}")
    return float(x)
