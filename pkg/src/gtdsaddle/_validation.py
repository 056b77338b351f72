"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DimensionError, ProbabilityError

PROB_TOL = 1e-12


def as_float_array(x, ndim=None, name="array"):
    arr = np.array(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def frozen(arr):
    """Return ``arr`` flagged read-only (the caller owns a private copy)."""
    arr.setflags(write=False)
    return arr


def check_distribution(p, name="distribution", axis=-1, tol=PROB_TOL):
    """Raise unless every slice of ``p`` along ``axis`` is a probability vector."""
    if np.any(p < 0):
        bad = np.argwhere(p < 0)[0]
        raise ProbabilityError(f"{name} has a negative entry at index {tuple(bad)}")
    sums = p.sum(axis=axis)
    err = np.abs(sums - 1.0)
    if np.any(err > tol):
        bad = np.unravel_index(np.argmax(err), err.shape)
        raise ProbabilityError(
            f"{name} does not sum to 1 at index {tuple(int(i) for i in bad)} "
            f"(sum={sums[bad]!r})"
        )


def check_vector(v, size, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (size,):
        raise DimensionError(f"{name} must have trailing dimension {size}, got {v.shape}")
    return v


def check_state_ids(s, num_states, name="state"):
    s = np.asarray(s)
    if s.size and (s.min() < 0 or s.max() >= num_states):
        raise DimensionError(f"{name} ids must lie in [0, {num_states})")
    return s
