"""Event-driven simulation of the N-server system with a thin
load-balancing stream, and the diffusion-scaled processes built from it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .model import InitialCondition, ModelParams, ValidationError, rank_rows
from .rng import check_seed, stream

KIND_NAMES = {
    _engine.DEPARTURE: "departure",
    _engine.ARRIVAL: "arrival",
    _engine.LBS_ARRIVAL: "lbs-arrival",
}


def _capacity(mean: float) -> int:
    return int(mean + 10.0 * math.sqrt(mean) + 32)


@dataclass(frozen=True, eq=False)
class EventLog:
    """Trajectory of one run on ``[0, horizon]``.

    Per-event arrays are indexed by event number; ``x`` and the cumulative
    counters are post-event values.  ``busy`` and ``idle`` are the
    cumulative busy and idle times and ``rank_integral[:, i]`` is
    ``int_0^t p_{rank_i(X(s))} ds``.  The ``*_end`` fields hold the same
    quantities at the horizon and are present even when events were not
    recorded.
    """

    seed: int
    horizon: float
    ic: InitialCondition
    times: np.ndarray
    kinds: np.ndarray
    servers: np.ndarray
    thetas: np.ndarray
    x: np.ndarray
    E: np.ndarray
    A: np.ndarray
    D: np.ndarray
    busy: np.ndarray
    idle: np.ndarray
    rank_integral: np.ndarray
    A0: np.ndarray
    x_end: np.ndarray
    E_end: np.ndarray
    A_end: np.ndarray
    D_end: np.ndarray
    busy_end: np.ndarray
    idle_end: np.ndarray
    rank_integral_end: np.ndarray
    A0_end: int
    n_events: int
    recorded: bool
    p: np.ndarray

    @property
    def N(self) -> int:
        return self.x_end.size

    def state(self, t, side: str = "right") -> dict:
        """Queue vector and counters at times ``t``.

        ``side="right"`` gives values after all events at ``t``; ``"left"``
        gives left limits.  Busy, idle and rank-integral clocks are
        continuous and interpolated linearly from the preceding event.
        """
        self._need_events()
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.horizon):
            raise ValueError("evaluation times must lie in [0, horizon]")
        k = np.searchsorted(self.times, t, side=side) - 1
        N = self.N
        zeros_i = np.zeros(N, np.int64)
        zeros_f = np.zeros(N)

        def pick(arr, init):
            full = np.vstack([init[None, :], arr])
            return full[k + 1]

        x = pick(self.x, self.ic.x0_minus)
        t_prev = np.concatenate([[0.0], self.times])[k + 1]
        gap = (t - t_prev)[:, None]
        busy_now = x > 0
        p_now = self.p[rank_rows(x) - 1]
        return {
            "t": t,
            "x": x,
            "E": pick(self.E, zeros_i),
            "A": pick(self.A, zeros_i),
            "D": pick(self.D, zeros_i),
            "A0": np.concatenate([[0], self.A0])[k + 1],
            "busy": pick(self.busy, zeros_f) + gap * busy_now,
            "idle": pick(self.idle, zeros_f) + gap * ~busy_now,
            "rank_integral": pick(self.rank_integral, zeros_f) + gap * p_now,
        }

    def event_grid(self) -> np.ndarray:
        """Distinct event times in ``[0, horizon]`` together with 0 and the horizon."""
        self._need_events()
        return np.unique(np.concatenate([[0.0], self.times, [self.horizon]]))

    def _need_events(self):
        if not self.recorded:
            raise ValueError("events were not recorded for this run")


def simulate(
    mp: ModelParams,
    horizon: float,
    seed: int,
    *,
    record: bool = True,
    capacity_scale: float = 1.0,
) -> EventLog:
    """Simulate ``mp`` on ``[0, horizon]``.

    Dedicated arrivals, the load-balancing stream, the rank draws, the
    service times of each server and the initial residuals come from
    independent named streams of ``seed``.  Each load-balancing arrival
    draws a rank ``theta ~ p`` and joins the server whose current rank is
    ``theta``.  Simultaneous events resolve departures first, then dedicated
    arrivals, then the load-balancing stream, lower server index first.

    ``record=False`` skips the per-event arrays and keeps only end values.
    """
    seed = check_seed(seed)
    if not horizon >= 0 or not math.isfinite(horizon):
        raise ValidationError("horizon", "must be finite and nonnegative")
    N = mp.N
    ic = mp.resolve_ic(stream(seed, "residual"))
    lam_n, mu_n, lbs_rate = mp.lam_n, mp.mu_n, mp.lbs_rate
    with np.errstate(divide="ignore"):
        inv_lam = np.where(lam_n > 0, 1.0 / np.where(lam_n > 0, lam_n, 1.0), np.inf)
        inv_mu = np.where(mu_n > 0, 1.0 / np.where(mu_n > 0, mu_n, 1.0), np.inf)
    inv_lbs = 1.0 / lbs_rate if lbs_rate > 0 else np.inf
    cum_p = np.cumsum(mp.p)
    # round-off in cum_p must never select a zero-probability rank
    last_rank = int(np.flatnonzero(mp.p > 0)[-1])

    scale = capacity_scale
    while True:
        cap_arr = max(2, int(scale * _capacity(float(lam_n.max()) * horizon)))
        cap_lbs = max(2, int(scale * _capacity(lbs_rate * horizon)))
        cap_svc = int(ic.x0_minus.max()) + cap_arr + cap_lbs + 1
        arr_gaps = np.vstack([stream(seed, "arrivals", i).standard_exponential(cap_arr) for i in range(N)])
        lbs_gaps = stream(seed, "lbs").standard_exponential(cap_lbs)
        u = stream(seed, "theta").random(cap_lbs)
        thetas = np.minimum(np.searchsorted(cum_p, u, side="right"), last_rank) + 1
        services = np.vstack(
            [law.sample(stream(seed, "service", i), cap_svc) for i, law in enumerate(mp.service)]
        )
        cap_rec = (int(ic.x0_minus.sum()) + 2 * (N * cap_arr + cap_lbs) + 1) if record else 0
        rec = _record_buffers(cap_rec, N)
        status, nev, X, E, A, D, T, idle, I, A0 = _engine.queue_kernel(
            float(horizon), ic.x0_minus.copy(), ic.z0.copy(), inv_lam, inv_lbs, inv_mu,
            mp.p, arr_gaps, lbs_gaps, thetas.astype(np.int64), services, record, *rec,
        )
        if status == _engine.OK:
            break
        scale *= 2.0

    rec_t, rec_kind, rec_srv, rec_theta, rec_x, rec_E, rec_A, rec_D, rec_T, rec_idle, rec_I, rec_A0 = (
        a[:nev] for a in rec
    )
    log = EventLog(
        seed=seed, horizon=float(horizon), ic=ic,
        times=rec_t, kinds=rec_kind, servers=rec_srv, thetas=rec_theta, x=rec_x,
        E=rec_E, A=rec_A, D=rec_D, busy=rec_T, idle=rec_idle, rank_integral=rec_I, A0=rec_A0,
        x_end=X, E_end=E, A_end=A, D_end=D, busy_end=T, idle_end=idle, rank_integral_end=I,
        A0_end=int(A0), n_events=int(nev), recorded=bool(record), p=mp.p,
    )
    return log


def _record_buffers(cap: int, N: int):
    return (
        np.empty(cap),
        np.empty(cap, np.int8),
        np.empty(cap, np.int64),
        np.empty(cap, np.int64),
        np.empty((cap, N), np.int64),
        np.empty((cap, N), np.int64),
        np.empty((cap, N), np.int64),
        np.empty((cap, N), np.int64),
        np.empty((cap, N)),
        np.empty((cap, N)),
        np.empty((cap, N)),
        np.empty(cap, np.int64),
    )


# ---------------------------------------------------------------------------
# diffusion scaling


@dataclass(frozen=True, eq=False)
class ScaledPath:
    """Diffusion-scaled processes on a grid (right-continuous values).

    ``X`` is ``X^n / sqrt(n)`` under IC0 and ``(X^n - alpha_n) / sqrt(n)``
    under ICalpha; ``U`` is the matching free process so that
    ``X = U + L``.  ``U_left`` and ``X_left`` are left limits at the grid
    points.  The raw counts and busy times are kept for serialization.
    """

    regime: str
    n: int
    alpha_n: float
    grid: np.ndarray
    X: np.ndarray
    X_left: np.ndarray
    L: np.ndarray
    E: np.ndarray
    A: np.ndarray
    A0: np.ndarray
    S: np.ndarray
    U: np.ndarray
    U_left: np.ndarray
    P: np.ndarray
    P_sharp: np.ndarray
    M: np.ndarray
    m_hat: np.ndarray
    raw_x: np.ndarray
    raw_E: np.ndarray
    raw_A: np.ndarray
    raw_D: np.ndarray
    raw_busy: np.ndarray

    interpolation = "step"

    @property
    def N(self) -> int:
        return self.X.shape[1]


def _scaled_values(state: dict, mp: ModelParams, x0_minus: np.ndarray, centre: float):
    n = mp.n
    rn = math.sqrt(n)
    t = state["t"][:, None]
    lam_hat_n = (mp.lam_n - n * mp.lam) / rn
    mu_hat_n = (mp.mu_n - n * mp.mu) / rn
    m_hat = lam_hat_n - mu_hat_n
    E_hat = (state["E"] - mp.lam_n * t) / rn
    S_hat = (state["D"] - mp.mu_n * state["busy"]) / rn
    A_hat = state["A"] / rn
    X0 = (x0_minus - centre) / rn
    U = X0 + E_hat + A_hat - S_hat + m_hat * t
    X = (state["x"] - centre) / rn
    L = mp.mu_n * state["idle"] / rn
    return X, L, E_hat, A_hat, S_hat, U, m_hat


def scaled_path(log: EventLog, mp: ModelParams, regime: str | None = None, grid=None) -> ScaledPath:
    """Diffusion-scaled processes of a recorded run.

    The grid holds every event time in ``[0, horizon]`` plus 0 and the
    horizon; extra evaluation times may be merged in via ``grid``.
    ``regime`` must agree with ``mp.ic.regime`` when given.
    """
    regime = mp.ic.regime if regime is None else regime
    if regime != mp.ic.regime:
        raise ValidationError("regime", f"{regime} does not match the model's {mp.ic.regime}")
    if log.N != mp.N:
        raise ValidationError("mp", "log and parameters disagree on N")
    g = log.event_grid()
    if grid is not None:
        g = np.unique(np.concatenate([g, np.asarray(grid, dtype=float)]))
    right = log.state(g, "right")
    left = log.state(g, "left")
    centre = mp.alpha_n
    X, L, E_hat, A_hat, S_hat, U, m_hat = _scaled_values(right, mp, log.ic.x0_minus, centre)
    X_l, _, _, _, _, U_l, _ = _scaled_values(left, mp, log.ic.x0_minus, centre)
    rn = math.sqrt(mp.n)
    P = (mp.lbs_rate / rn) * right["rank_integral"]
    return ScaledPath(
        regime=regime, n=mp.n, alpha_n=centre, grid=g,
        X=X, X_left=X_l, L=L, E=E_hat, A=A_hat, A0=right["A0"] / rn, S=S_hat, U=U, U_left=U_l,
        P=P, P_sharp=mp.lam0 * right["rank_integral"], M=A_hat - P, m_hat=m_hat,
        raw_x=right["x"], raw_E=right["E"], raw_A=right["A"], raw_D=right["D"], raw_busy=right["busy"],
    )


@dataclass(frozen=True, eq=False)
class MartingaleResidual:
    """``M = A_hat - lam0_hat_n int p_rank ds`` and its optional quadratic
    variation ``A / n`` on a grid."""

    t: np.ndarray
    M: np.ndarray
    qv: np.ndarray


def martingale_residual(log: EventLog, mp: ModelParams, grid=None) -> MartingaleResidual:
    """Routing martingale of each server.

    Without recorded events (or with ``grid`` omitted on an unrecorded log)
    only the horizon value is returned.
    """
    rn = math.sqrt(mp.n)
    rate = mp.lbs_rate / rn
    if not log.recorded:
        t = np.array([log.horizon])
        A = log.A_end[None, :].astype(float)
        integ = log.rank_integral_end[None, :]
    else:
        t = log.event_grid() if grid is None else np.asarray(grid, dtype=float)
        st = log.state(t)
        A = st["A"].astype(float)
        integ = st["rank_integral"]
    return MartingaleResidual(t, A / rn - rate * integ, A / mp.n)


def terminal_scaled(log: EventLog, mp: ModelParams) -> dict:
    """End-of-horizon scaled values from an unrecorded (or recorded) run."""
    rn = math.sqrt(mp.n)
    X = (log.x_end - mp.alpha_n) / rn
    L = mp.mu_n * log.idle_end / rn
    M = log.A_end / rn - (mp.lbs_rate / rn) * log.rank_integral_end
    return {
        "X": X, "L": L, "M": M, "A_hat": log.A_end / rn, "A0_hat": log.A0_end / rn,
        "A": log.A_end.copy(), "A0": log.A0_end,
    }
