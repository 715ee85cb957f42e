"""One-dimensional Skorokhod map on the half-line."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COMPLEMENTARITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ReflectedPair:
    """``x = y + z`` with ``x >= 0`` and ``z`` the minimal regulator."""

    t: np.ndarray
    x: np.ndarray
    z: np.ndarray


def skorokhod_map(t, y, y_left=None) -> ReflectedPair:
    """Reflect a piecewise-linear path at 0.

    ``y`` holds path values at the grid ``t`` (right limits when the path
    jumps).  If given, ``y_left[k]`` is the left limit at ``t[k]``; the path
    is then linear on each ``[t[k], t[k+1])``, ending at ``y_left[k+1]``.
    Suprema of ``y^-`` over a linear piece are attained at its endpoints, so
    ``z(t_k) = max_{s <= t_k} y^-(s)`` is exact.  ``y(0-) = 0``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size == 0:
        raise ValueError("empty grid")
    if y.shape != t.shape:
        raise ValueError("t and y must have the same length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly increasing")
    neg = np.maximum(-y, 0.0)
    if y_left is not None:
        y_left = np.asarray(y_left, dtype=float)
        if y_left.shape != t.shape:
            raise ValueError("y_left must match the grid")
        neg = np.maximum(neg, np.maximum(-y_left, 0.0))
    z = np.maximum.accumulate(neg)
    return ReflectedPair(t, y + z, z)


def reflect_step(x_prev: float, increment: float) -> tuple[float, float]:
    """One projected step: ``(max(0, x+inc), max(0, -(x+inc)))``."""
    if x_prev < 0:
        raise ValueError("x_prev must be nonnegative")
    y = x_prev + increment
    if y < 0:
        return 0.0, -y
    return y, 0.0


def check_reflection(y, x, z, x_left=None, tol: float = COMPLEMENTARITY_TOL) -> bool:
    """Verify the Skorokhod characterization of a sampled triple.

    Requires ``x = y + z``, ``x >= 0``, ``z`` nondecreasing from ``z(0-) = 0``
    and ``sum x dz = 0``, all relative to the path scale.  For paths with
    jumps pass ``x_left``: the regulator then grows on the linear piece that
    ends at the left limit, so complementarity is checked against it.
    """
    y, x, z = (np.asarray(a, dtype=float) for a in (y, x, z))
    scale = 1.0 + float(np.max(np.abs(y))) + float(np.max(np.abs(z)))
    if np.any(np.abs(x - (y + z)) > tol * scale):
        return False
    if np.any(x < -tol * scale):
        return False
    dz = np.diff(np.concatenate([[0.0], z]))
    if np.any(dz < -tol * scale):
        return False
    at = x if x_left is None else np.asarray(x_left, dtype=float)
    return abs(float(np.sum(at * dz))) <= tol * scale * scale
