"""Euler-Maruyama integration of rank-based diffusions, with and without
reflection at 0, and the drift-selection rules used at ties."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .model import DiffusionParams, ValidationError, _check_nonincreasing
from .rng import check_seed, stream

_RULE_CODES = {
    "index-tiebreak": _engine.INDEX_TIEBREAK,
    "reverse-index-tiebreak": _engine.REVERSE_TIEBREAK,
    "block-average": _engine.BLOCK_AVERAGE,
    "random-shuffle": _engine.RANDOM_SHUFFLE,
}


@dataclass(frozen=True)
class TieRule:
    """Drift selection for particles sharing a value.

    ``index-tiebreak`` hands the block's b-values out by increasing server
    index, ``reverse-index-tiebreak`` by decreasing index, ``block-average``
    gives every member the mean b-value of the block, and ``random-shuffle``
    orders the block by seeded uniform keys drawn per step.
    """

    kind: str = "block-average"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _RULE_CODES:
            raise ValidationError("tie_rule", f"unknown tie rule {self.kind!r}")
        check_seed(self.seed)

    @classmethod
    def parse(cls, text: str) -> "TieRule":
        """``"block-average"`` or ``"random-shuffle:<seed>"``."""
        kind, _, seed = str(text).partition(":")
        return cls(kind, int(seed) if seed else 0)

    @property
    def code(self) -> int:
        return _RULE_CODES[self.kind]

    def __str__(self):
        return self.kind if self.kind != "random-shuffle" else f"{self.kind}:{self.seed}"


INDEX_TIEBREAK = TieRule("index-tiebreak")
REVERSE_INDEX_TIEBREAK = TieRule("reverse-index-tiebreak")
BLOCK_AVERAGE = TieRule("block-average")


@dataclass(frozen=True, eq=False)
class SdePath:
    """Numerical solution on a uniform grid.

    ``beta[k]`` and ``noise[k]`` drive the step from ``grid[k]`` to
    ``grid[k+1]``; ``dL[k]`` is that step's regulator increment and ``L`` its
    running sum (identically zero when unreflected).
    """

    dp: DiffusionParams
    dt: float
    seed: int
    reflected: bool
    tie_rule: TieRule
    grid: np.ndarray
    X: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    beta: np.ndarray
    noise: np.ndarray

    interpolation = "linear"

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> float:
        return float(self.grid[-1])


def brownian_increments(seed: int, steps: int, N: int, dt: float) -> np.ndarray:
    """``(steps, N)`` array of N(0, dt) increments; entry ``[k, i]`` is the
    k-th increment of coordinate i under ``seed``."""
    return stream(seed, "noise").standard_normal((steps, N)) * math.sqrt(dt)


def _steps(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0 and math.isfinite(T) and math.isfinite(dt)):
        raise ValidationError("dt", "T and dt must be positive and finite")
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * T:
        raise ValidationError("dt", f"dt={dt} does not divide T={T}")
    return K


def integrate(
    dp: DiffusionParams,
    T: float,
    dt: float,
    seed: int,
    reflected: bool = True,
    tie_rule: TieRule = BLOCK_AVERAGE,
    x0=None,
    noise=None,
) -> SdePath:
    """Euler-Maruyama with a per-step projection onto the half-line.

    Each step sets ``beta`` from the ranks of the current state (the tie
    rule resolves equal coordinates), proposes ``X + sigma dB + (m + beta)
    dt`` and, when ``reflected``, clips negative coordinates to 0 while
    booking the overshoot as local time.  ``noise`` overrides the
    seed-generated increments (shape ``(T/dt, N)``).
    """
    seed = check_seed(seed)
    _check_nonincreasing(dp.b)
    K = _steps(T, dt)
    N = dp.N
    if x0 is None:
        x0 = dp.x0 if dp.x0 is not None else np.zeros(N)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,) or not np.all(np.isfinite(x0)):
        raise ValidationError("x0", f"expected a finite vector of length {N}")
    if reflected and np.any(x0 < 0):
        raise ValidationError("x0", "reflected integration needs x0 >= 0")
    if noise is None:
        noise = brownian_increments(seed, K, N, dt)
    else:
        noise = np.ascontiguousarray(noise, dtype=float)
        if noise.shape != (K, N):
            raise ValidationError("noise", f"expected shape {(K, N)}")
    if tie_rule.kind == "random-shuffle":
        keys = stream(seed, "ties", tie_rule.seed).random((K, N))
    else:
        keys = np.zeros((K, N))
    X = np.empty((K + 1, N))
    dL = np.empty((K, N))
    beta = np.empty((K, N))
    _engine.sde_kernel(x0, dp.b, dp.m, dp.sigma, float(dt), noise, bool(reflected), tie_rule.code, keys, X, dL, beta)
    L = np.vstack([np.zeros((1, N)), np.cumsum(dL, axis=0)])
    grid = np.arange(K + 1) * dt
    return SdePath(dp, float(dt), seed, bool(reflected), tie_rule, grid, X, L, dL, beta, noise)


def integrate_coupled(
    dp: DiffusionParams,
    T: float,
    dt: float,
    seed: int,
    reflected: bool = True,
    rule_a: TieRule = INDEX_TIEBREAK,
    rule_b: TieRule = BLOCK_AVERAGE,
    x0=None,
) -> tuple[SdePath, SdePath, float]:
    """Two integrations sharing one Brownian path, differing only in the tie
    rule.  Returns both paths and ``max_t ||X_a(t) - X_b(t)||``."""
    K = _steps(T, dt)
    noise = brownian_increments(check_seed(seed), K, dp.N, dt)
    a = integrate(dp, T, dt, seed, reflected, rule_a, x0, noise)
    b = integrate(dp, T, dt, seed, reflected, rule_b, x0, noise)
    gap = float(np.max(np.linalg.norm(a.X - b.X, axis=1)))
    return a, b, gap


# ---------------------------------------------------------------------------
# occupation near the diagonal


def _linear_occupation(t: np.ndarray, d: np.ndarray, eps: float) -> float:
    d0, d1 = d[:-1], d[1:]
    h = np.diff(t)
    slope = d1 - d0
    flat = slope == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ua = (-eps - d0) / slope
        ub = (eps - d0) / slope
    lo = np.clip(np.minimum(ua, ub), 0.0, 1.0)
    hi = np.clip(np.maximum(ua, ub), 0.0, 1.0)
    frac = np.where(flat, (np.abs(d0) <= eps).astype(float), hi - lo)
    return float(np.sum(frac * h))


def occupation_near_tie(path, i: int, j: int, eps: float, method: str | None = None) -> float:
    """Time spent with ``|X_i - X_j| <= eps``.

    ``method="grid"`` (default for :class:`SdePath`) counts left grid points
    of each step and multiplies by the step; ``"linear"`` integrates the
    piecewise-linear interpolant exactly; ``"step"`` (default for scaled
    queue paths) integrates the right-continuous step function exactly.
    """
    if i == j:
        raise ValueError("i and j must differ")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if method is None:
        method = "grid" if path.interpolation == "linear" else "step"
    t = np.asarray(path.grid, dtype=float)
    d = path.X[:, i] - path.X[:, j]
    if method in ("grid", "step"):
        # on a uniform grid both reduce to a left-point count times the step
        return float(np.sum(np.diff(t) * (np.abs(d[:-1]) <= eps)))
    if method == "linear":
        return _linear_occupation(t, d, eps)
    raise ValueError(f"unknown method {method!r}")
