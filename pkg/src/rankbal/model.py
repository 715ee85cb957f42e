"""Model data, the rank function, routing probabilities and drift hulls.

Server indices are 0-based throughout the Python API; ranks and
permutation values are 1-based, so ``rank_vector((3, 2, 1))`` is
``[3, 2, 1]`` and a permutation ``pi`` is a tuple with ``pi[i]`` the rank
position assigned to server ``i``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

ENUMERATION_CAP = 8


class ValidationError(ValueError):
    """Invalid parameter value; ``field`` names the offending parameter."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CapacityError(ValueError):
    """Request exceeds an enumeration cap."""


def _finite_vector(x, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(name, "expected a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(name, "entries must be finite")
    return arr


def _check_nonincreasing(b: np.ndarray, name="b"):
    if np.any(np.diff(b) > 0):
        raise ValidationError(name, "must be nonincreasing")


# ---------------------------------------------------------------------------
# ranks and permutations


def rank_vector(x) -> np.ndarray:
    """Rank of each coordinate of ``x``, ties going to the smaller index.

    ``rank[i] = #{j : x_j < x_i} + #{j <= i : x_j == x_i}``.  Tie detection
    is exact float equality.
    """
    x = _finite_vector(x)
    return rank_rows(x[None, :])[0]


def rank_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise :func:`rank_vector` for a ``(K, N)`` array (no validation)."""
    x = np.asarray(x)
    n = x.shape[1]
    less = (x[:, None, :] < x[:, :, None]).sum(axis=2)
    lower_idx = np.tril(np.ones((n, n), dtype=bool))
    ties = ((x[:, None, :] == x[:, :, None]) & lower_idx[None]).sum(axis=2)
    return (less + ties).astype(np.int64)


def tie_blocks(x) -> list[tuple[np.ndarray, int]]:
    """Maximal groups of equal coordinates, in rank order.

    Returns ``(indices, first_rank)`` pairs; ``indices`` is ascending and
    the block occupies ranks ``first_rank .. first_rank + len(indices) - 1``.
    """
    x = _finite_vector(x)
    order = np.argsort(x, kind="stable")
    blocks = []
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and x[order[stop]] == x[order[start]]:
            stop += 1
        blocks.append((np.sort(order[start:stop]), start + 1))
        start = stop
    return blocks


def permissible_permutations(x) -> set[tuple[int, ...]]:
    """All permutations ``pi`` with ``x_i < x_j  =>  pi[i] < pi[j]``.

    The set factors over tie blocks: each block may be arranged freely over
    its own rank range.  Enumeration is capped at ``N <= 8``; beyond that use
    :func:`in_drift_hull` directly.
    """
    x = _finite_vector(x)
    if x.size > ENUMERATION_CAP:
        raise CapacityError(
            f"N={x.size} exceeds the enumeration cap {ENUMERATION_CAP}; "
            "use in_drift_hull for membership questions"
        )
    blocks = tie_blocks(x)
    choices = [
        [list(zip(idx, perm)) for perm in itertools.permutations(range(r0, r0 + len(idx)))]
        for idx, r0 in blocks
    ]
    out = set()
    for combo in itertools.product(*choices):
        pi = [0] * x.size
        for assignment in combo:
            for i, r in assignment:
                pi[i] = r
        out.add(tuple(pi))
    return out


def in_drift_hull(beta, x, b, tol: float | None = None) -> bool:
    """Whether ``beta`` lies in ``conv{b_pi : pi permissible for x}``.

    Decided blockwise.  Within a tie block the hull is the permutohedron of
    the block's b-values, so membership is majorization: descending partial
    sums of ``beta`` may not exceed those of the b-values, and the totals must
    agree.  Default ``tol`` is ``1e-9 * (1 + max|b|)``.
    """
    b = _finite_vector(b, "b")
    _check_nonincreasing(b)
    beta = _finite_vector(beta, "beta")
    x = _finite_vector(x)
    if not (beta.size == x.size == b.size):
        raise ValidationError("beta", "beta, x and b must have equal length")
    if tol is None:
        tol = 1e-9 * (1.0 + np.max(np.abs(b)))
    if tol < 0:
        raise ValidationError("tol", "must be nonnegative")
    for idx, r0 in tie_blocks(x):
        target = np.sort(b[r0 - 1 : r0 - 1 + len(idx)])[::-1]
        got = np.sort(beta[idx])[::-1]
        gap = np.cumsum(got) - np.cumsum(target)
        if np.any(gap[:-1] > tol) or abs(gap[-1]) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# power-of-choice routing


def poc_probabilities(N: int, ell: int, with_replacement: bool = True, exact: bool = False):
    """Routing probability by rank under power-of-``ell`` choices.

    With replacement ``p_r = ((N-r+1)/N)^ell - ((N-r)/N)^ell``; without,
    ``p_r = C(N-r, ell-1) / C(N, ell)``.  ``exact=True`` returns a tuple of
    :class:`fractions.Fraction`, otherwise a float array.
    """
    if N < 1:
        raise ValidationError("N", "must be a positive integer")
    if not 1 <= ell <= N:
        raise ValidationError("ell", f"must lie in [1, {N}]")
    if with_replacement:
        probs = tuple(
            Fraction(N - r + 1, N) ** ell - Fraction(N - r, N) ** ell for r in range(1, N + 1)
        )
    else:
        total = math.comb(N, ell)
        probs = tuple(Fraction(math.comb(N - r, ell - 1), total) for r in range(1, N + 1))
    if exact:
        return probs
    return np.array([float(q) for q in probs])


# ---------------------------------------------------------------------------
# service laws


@dataclass(frozen=True)
class ServiceLaw:
    """Unit-mean service-time law.

    ``family`` is one of ``exponential``, ``erlang`` (``shape`` = number of
    phases), ``hyperexponential`` and ``lognormal`` (``shape`` = coefficient
    of variation).  Hyperexponential uses balanced means and needs cv > 1.
    """

    family: str = "exponential"
    shape: float = 1.0

    FAMILIES = ("exponential", "erlang", "hyperexponential", "lognormal")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValidationError("service.family", f"unknown family {self.family!r}")
        if self.family == "erlang":
            if self.shape < 1 or int(self.shape) != self.shape:
                raise ValidationError("service.shape", "erlang needs an integer phase count >= 1")
        elif self.family == "hyperexponential":
            if not self.shape > 1:
                raise ValidationError("service.shape", "hyperexponential cv must exceed 1")
        elif self.family == "lognormal":
            if not self.shape > 0:
                raise ValidationError("service.shape", "lognormal cv must be positive")

    @classmethod
    def exponential(cls):
        return cls("exponential", 1.0)

    @classmethod
    def erlang(cls, k: int):
        return cls("erlang", float(k))

    @classmethod
    def hyperexponential(cls, cv: float):
        return cls("hyperexponential", float(cv))

    @classmethod
    def lognormal(cls, cv: float):
        return cls("lognormal", float(cv))

    @property
    def cv(self) -> float:
        """Standard deviation (equal to the coefficient of variation)."""
        if self.family == "exponential":
            return 1.0
        if self.family == "erlang":
            return 1.0 / math.sqrt(self.shape)
        return self.shape

    def _h2(self):
        c2 = self.shape**2
        p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
        return p1, 2.0 * p1, 2.0 * (1.0 - p1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # every family draws row-sequentially so a longer draw extends a shorter one
        if self.family == "exponential":
            return rng.standard_exponential(size)
        if self.family == "erlang":
            return rng.standard_gamma(self.shape, size) / self.shape
        if self.family == "lognormal":
            s2 = math.log1p(self.shape**2)
            return np.exp(-0.5 * s2 + math.sqrt(s2) * rng.standard_normal(size))
        p1, r1, r2 = self._h2()
        u = rng.random((size, 2))
        rate = np.where(u[:, 0] < p1, r1, r2)
        return -np.log1p(-u[:, 1]) / rate

    def to_dict(self) -> dict:
        return {"family": self.family, "shape": self.shape}


# ---------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class InitialConditionSpec:
    """How to build the time-0 state.

    ``regime`` is ``"IC0"`` (queue lengths of order sqrt(n)) or
    ``"ICalpha"`` (centred at ``alpha_n = n ** alpha_exponent``).  ``x0`` are
    the scaled initial values; queue lengths are ``round(sqrt(n) * x0)``
    (plus ``alpha_n`` under ICalpha).  ``counts`` overrides with explicit
    queue lengths at time 0.  Empty queues receive a fictitious job of zero
    length.  ``z0`` optionally fixes the head-of-line residuals of nonempty
    queues; by default they are fresh draws from the scaled service law.
    """

    regime: str = "IC0"
    x0: tuple[float, ...] | None = None
    alpha_exponent: float = 0.75
    counts: tuple[int, ...] | None = None
    z0: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.regime not in ("IC0", "ICalpha"):
            raise ValidationError("ic.regime", "must be 'IC0' or 'ICalpha'")
        if self.regime == "ICalpha" and not self.alpha_exponent > 0.5:
            raise ValidationError("ic.alpha_exponent", "must exceed 1/2 so alpha_n/sqrt(n) diverges")
        for name in ("x0", "counts", "z0"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(val))
        if self.counts is not None and any(int(c) != c or c < 0 for c in self.counts):
            raise ValidationError("ic.counts", "must be nonnegative integers")
        if self.regime == "IC0" and self.x0 is not None and any(v < 0 for v in self.x0):
            raise ValidationError("ic.x0", "IC0 initial values must be nonnegative")

    def alpha(self, n: int) -> float:
        return float(n) ** self.alpha_exponent if self.regime == "ICalpha" else 0.0

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "x0": None if self.x0 is None else list(self.x0),
            "alpha_exponent": self.alpha_exponent,
            "counts": None if self.counts is None else list(self.counts),
            "z0": None if self.z0 is None else list(self.z0),
        }


@dataclass(frozen=True)
class InitialCondition:
    """Resolved initial state: ``X(0-)`` and head-of-line residuals."""

    x0_minus: np.ndarray
    z0: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x0_minus, dtype=np.int64)
        z = np.asarray(self.z0, dtype=float)
        if x.shape != z.shape or x.ndim != 1:
            raise ValidationError("ic", "x0_minus and z0 must be vectors of equal length")
        if np.any(x < 1):
            raise ValidationError("ic.x0_minus", "X(0-) >= 1 (empty queues carry a fictitious job)")
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValidationError("ic.z0", "residuals must be finite and nonnegative")
        if np.any((z == 0) & (x != 1)):
            raise ValidationError("ic.z0", "a zero residual marks a fictitious job, so X(0-) must be 1")
        x.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "x0_minus", x)
        object.__setattr__(self, "z0", z)

    @property
    def empty_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.z0 == 0))

    @property
    def nonempty_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.z0 > 0))

    @property
    def x0(self) -> np.ndarray:
        """Queue lengths at time 0 (fictitious jobs removed)."""
        return self.x0_minus - (self.z0 == 0)


# ---------------------------------------------------------------------------
# parameter containers


def _vec(val, N, name, default=0.0) -> np.ndarray:
    if val is None:
        val = [default] * N
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        arr = np.full(N, float(arr))
    if arr.shape != (N,):
        raise ValidationError(name, f"expected length {N}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(name, "entries must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Prelimit parameters of the n-th system.

    Rates are ``lam_n = n*lam + sqrt(n)*lam_hat``, ``mu_n = n*mu +
    sqrt(n)*mu_hat`` and the load-balancing stream ``sqrt(n)*lam0``.  Zero
    rates are accepted and switch the corresponding stream off.
    """

    n: int
    lam: np.ndarray
    mu: np.ndarray
    lam0: float
    p: np.ndarray
    lam_hat: np.ndarray | None = None
    mu_hat: np.ndarray | None = None
    service: tuple[ServiceLaw, ...] | ServiceLaw = ServiceLaw()
    ic: InitialConditionSpec = field(default_factory=InitialConditionSpec)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n", "must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        lam = _vec(self.lam, len(np.atleast_1d(self.lam)), "lam")
        N = lam.size
        mu = _vec(self.mu, N, "mu")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("lam", lam)
        set_("mu", mu)
        set_("lam_hat", _vec(self.lam_hat, N, "lam_hat"))
        set_("mu_hat", _vec(self.mu_hat, N, "mu_hat"))
        p = _vec(self.p, N, "p")
        set_("p", p)
        if np.any(lam < 0) or np.any(mu < 0):
            raise ValidationError("lam", "rates must be nonnegative")
        if not np.allclose(lam, mu, rtol=1e-12, atol=0.0):
            raise ValidationError("mu", "critical load requires mu == lam")
        if not (self.lam0 >= 0 and math.isfinite(self.lam0)):
            raise ValidationError("lam0", "must be finite and nonnegative")
        set_("lam0", float(self.lam0))
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("p", "must be a probability vector")
        _check_nonincreasing(p, "p")
        laws = self.service
        if isinstance(laws, ServiceLaw):
            laws = (laws,) * N
        laws = tuple(laws)
        if len(laws) != N:
            raise ValidationError("service", f"expected {N} laws")
        set_("service", laws)
        if np.any(self.lam_n < 0) or np.any(self.mu_n < 0):
            raise ValidationError("lam_hat", "prelimit rates must be nonnegative for this n")
        ic = self.ic
        for name in ("x0", "counts", "z0"):
            val = getattr(ic, name)
            if val is not None and len(val) != N:
                raise ValidationError(f"ic.{name}", f"expected length {N}")

    @property
    def N(self) -> int:
        return self.lam.size

    @property
    def lam_n(self) -> np.ndarray:
        return self.n * self.lam + math.sqrt(self.n) * self.lam_hat

    @property
    def mu_n(self) -> np.ndarray:
        return self.n * self.mu + math.sqrt(self.n) * self.mu_hat

    @property
    def lbs_rate(self) -> float:
        return math.sqrt(self.n) * self.lam0

    @property
    def sigma_ser(self) -> np.ndarray:
        return np.array([law.cv for law in self.service])

    @property
    def alpha_n(self) -> float:
        return self.ic.alpha(self.n)

    def with_n(self, n: int) -> "ModelParams":
        return ModelParams(
            n, self.lam, self.mu, self.lam0, self.p, self.lam_hat, self.mu_hat, self.service, self.ic
        )

    def resolve_ic(self, rng: np.random.Generator) -> InitialCondition:
        """Concrete ``X(0-)`` and residuals; ``rng`` feeds default residuals."""
        ic, N, n = self.ic, self.N, self.n
        if ic.counts is not None:
            counts = np.asarray(ic.counts, dtype=np.int64)
        else:
            x0 = np.zeros(N) if ic.x0 is None else np.asarray(ic.x0, dtype=float)
            counts = np.rint(self.alpha_n + math.sqrt(n) * x0).astype(np.int64)
            if np.any(counts < 0):
                raise ValidationError("ic.x0", "implies a negative initial queue length")
        draws = np.array([law.sample(rng, 1)[0] for law in self.service])
        with np.errstate(divide="ignore"):
            fresh = draws / self.mu_n
        if ic.z0 is not None:
            z = np.asarray(ic.z0, dtype=float)
        else:
            z = fresh
        z = np.where(counts == 0, 0.0, z)
        if np.any((counts > 0) & ~(z > 0)):
            raise ValidationError("ic.z0", "nonempty queues need a positive residual")
        return InitialCondition(np.maximum(counts, 1), z)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lam": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "lam_hat": self.lam_hat.tolist(),
            "mu_hat": self.mu_hat.tolist(),
            "lam0": self.lam0,
            "p": self.p.tolist(),
            "service": [law.to_dict() for law in self.service],
            "ic": self.ic.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class DiffusionParams:
    """Data ``(b, m, sigma)`` of the limiting rank-based diffusion."""

    b: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    x0: np.ndarray | None = None

    def __post_init__(self):
        b = _finite_vector(self.b, "b")
        N = b.size
        object.__setattr__(self, "b", _vec(b, N, "b"))
        object.__setattr__(self, "m", _vec(self.m, N, "m"))
        sigma = _vec(self.sigma, N, "sigma")
        if np.any(sigma <= 0):
            raise ValidationError("sigma", "must be strictly positive")
        object.__setattr__(self, "sigma", sigma)
        if self.x0 is not None:
            object.__setattr__(self, "x0", _vec(self.x0, N, "x0"))

    @property
    def N(self) -> int:
        return self.b.size

    def to_dict(self) -> dict:
        return {
            "b": self.b.tolist(),
            "m": self.m.tolist(),
            "sigma": self.sigma.tolist(),
            "x0": None if self.x0 is None else self.x0.tolist(),
        }


def diffusion_params(mp: ModelParams) -> DiffusionParams:
    """Limit data: ``b_r = lam0 p_r``, ``m = lam_hat - mu_hat``,
    ``sigma_i = sqrt(lam_i + mu_i sigma_ser_i^2)``."""
    b = mp.lam0 * mp.p
    m = mp.lam_hat - mp.mu_hat
    sigma = np.sqrt(mp.lam + mp.mu * mp.sigma_ser**2)
    x0 = None if mp.ic.x0 is None else np.asarray(mp.ic.x0, dtype=float)
    return DiffusionParams(b, m, sigma, x0)


def rearrangement_gap(u: Sequence[float], v: Sequence[float], pi: Sequence[int]) -> float:
    """``sum u_pi(i) v_i - sum u_i v_i``; nonnegative for nonincreasing u and
    nondecreasing v (``pi`` 1-based)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    idx = np.asarray(pi) - 1
    return float(np.dot(u[idx], v) - np.dot(u, v))
