"""Compiled inner loops for the queueing simulator and the SDE scheme.

Kernels consume pre-drawn random buffers and never touch an RNG, so the
Python wrappers own all stream bookkeeping.  Status codes flag an exhausted
buffer; the wrapper then enlarges the buffers and reruns.
"""

import numpy as np
from numba import njit

DEPARTURE = 0
ARRIVAL = 1
LBS_ARRIVAL = 2

OK = 0
ARRIVALS_EXHAUSTED = 1
LBS_EXHAUSTED = 2
SERVICE_EXHAUSTED = 3
RECORD_EXHAUSTED = 4

INDEX_TIEBREAK = 0
REVERSE_TIEBREAK = 1
BLOCK_AVERAGE = 2
RANDOM_SHUFFLE = 3


@njit(cache=True)
def ranks_into(x, out):
    n = x.shape[0]
    for i in range(n):
        r = 0
        xi = x[i]
        for j in range(n):
            if x[j] < xi or (x[j] == xi and j <= i):
                r += 1
        out[i] = r


@njit(cache=True)
def queue_kernel(
    horizon,
    x0_minus,
    z0,
    inv_lam,
    inv_lbs,
    inv_mu,
    p,
    arr_gaps,
    lbs_gaps,
    thetas,
    services,
    record,
    rec_t,
    rec_kind,
    rec_srv,
    rec_theta,
    rec_x,
    rec_E,
    rec_A,
    rec_D,
    rec_T,
    rec_idle,
    rec_I,
    rec_A0,
):
    N = x0_minus.shape[0]
    X = x0_minus.copy()
    E = np.zeros(N, np.int64)
    A = np.zeros(N, np.int64)
    D = np.zeros(N, np.int64)
    T = np.zeros(N)
    idle = np.zeros(N)
    I = np.zeros(N)
    A0 = 0
    rk = np.empty(N, np.int64)

    next_dep = z0.copy()
    svc_used = np.zeros(N, np.int64)
    next_arr = np.empty(N)
    arr_used = np.ones(N, np.int64)
    for i in range(N):
        next_arr[i] = arr_gaps[i, 0] * inv_lam[i] if inv_lam[i] < np.inf else np.inf
    next_lbs = lbs_gaps[0] * inv_lbs if inv_lbs < np.inf else np.inf
    lbs_used = 1

    t = 0.0
    nev = 0
    status = OK
    while True:
        best = np.inf
        kind = -1
        srv = -1
        for i in range(N):
            if X[i] > 0 and next_dep[i] < best:
                best = next_dep[i]
                kind = DEPARTURE
                srv = i
        for i in range(N):
            if next_arr[i] < best:
                best = next_arr[i]
                kind = ARRIVAL
                srv = i
        if next_lbs < best:
            best = next_lbs
            kind = LBS_ARRIVAL
            srv = -1
        if kind < 0 or best > horizon:
            break

        dtau = best - t
        if dtau > 0.0:
            ranks_into(X, rk)
            for i in range(N):
                if X[i] > 0:
                    T[i] += dtau
                else:
                    idle[i] += dtau
                I[i] += dtau * p[rk[i] - 1]
        t = best

        theta = 0
        start = False
        if kind == DEPARTURE:
            X[srv] -= 1
            D[srv] += 1
            if X[srv] > 0:
                start = True
            else:
                next_dep[srv] = np.inf
        elif kind == ARRIVAL:
            X[srv] += 1
            E[srv] += 1
            start = X[srv] == 1
            k = arr_used[srv]
            if k >= arr_gaps.shape[1]:
                status = ARRIVALS_EXHAUSTED
                break
            next_arr[srv] = t + arr_gaps[srv, k] * inv_lam[srv]
            arr_used[srv] = k + 1
        else:
            theta = thetas[A0]
            ranks_into(X, rk)
            for i in range(N):
                if rk[i] == theta:
                    srv = i
            A0 += 1
            X[srv] += 1
            A[srv] += 1
            start = X[srv] == 1
            if lbs_used >= lbs_gaps.shape[0]:
                status = LBS_EXHAUSTED
                break
            next_lbs = t + lbs_gaps[lbs_used] * inv_lbs
            lbs_used += 1
        if start:
            k = svc_used[srv]
            if k >= services.shape[1]:
                status = SERVICE_EXHAUSTED
                break
            next_dep[srv] = t + services[srv, k] * inv_mu[srv]
            svc_used[srv] = k + 1

        if record:
            if nev >= rec_t.shape[0]:
                status = RECORD_EXHAUSTED
                break
            rec_t[nev] = t
            rec_kind[nev] = kind
            rec_srv[nev] = srv
            rec_theta[nev] = theta
            rec_A0[nev] = A0
            for i in range(N):
                rec_x[nev, i] = X[i]
                rec_E[nev, i] = E[i]
                rec_A[nev, i] = A[i]
                rec_D[nev, i] = D[i]
                rec_T[nev, i] = T[i]
                rec_idle[nev, i] = idle[i]
                rec_I[nev, i] = I[i]
        nev += 1

    if status == OK:
        dtau = horizon - t
        if dtau > 0.0:
            ranks_into(X, rk)
            for i in range(N):
                if X[i] > 0:
                    T[i] += dtau
                else:
                    idle[i] += dtau
                I[i] += dtau * p[rk[i] - 1]
    return status, nev, X, E, A, D, T, idle, I, A0


@njit(cache=True)
def _sorted_by_value(x, order):
    # insertion sort of indices by (value, index); N is small
    n = x.shape[0]
    for i in range(n):
        order[i] = i
    for i in range(1, n):
        cur = order[i]
        j = i - 1
        while j >= 0 and x[order[j]] > x[cur]:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = cur


@njit(cache=True)
def select_drift(x, b, rule, keys, order, beta):
    """Drift vector at state ``x`` under a tie rule (writes into ``beta``)."""
    n = x.shape[0]
    _sorted_by_value(x, order)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and x[order[stop]] == x[order[start]]:
            stop += 1
        size = stop - start
        if size == 1:
            beta[order[start]] = b[start]
        elif rule == INDEX_TIEBREAK:
            for j in range(size):
                beta[order[start + j]] = b[start + j]
        elif rule == REVERSE_TIEBREAK:
            for j in range(size):
                beta[order[start + j]] = b[stop - 1 - j]
        elif rule == BLOCK_AVERAGE:
            s = 0.0
            for j in range(size):
                s += b[start + j]
            avg = s / size
            for j in range(size):
                beta[order[start + j]] = avg
        else:
            # order the block's members by their shuffle keys
            for a in range(start + 1, stop):
                cur = order[a]
                c = a - 1
                while c >= start and keys[order[c]] > keys[cur]:
                    order[c + 1] = order[c]
                    c -= 1
                order[c + 1] = cur
            for j in range(size):
                beta[order[start + j]] = b[start + j]
        start = stop


@njit(cache=True)
def sde_kernel(x0, b, m, sigma, dt, noise, reflected, rule, keys, X, dL, B):
    K, n = noise.shape
    order = np.empty(n, np.int64)
    beta = np.empty(n)
    for i in range(n):
        X[0, i] = x0[i]
    for k in range(K):
        select_drift(X[k], b, rule, keys[k], order, beta)
        for i in range(n):
            B[k, i] = beta[i]
            y = X[k, i] + (sigma[i] * noise[k, i] + (m[i] + beta[i]) * dt)
            if reflected and y < 0.0:
                X[k + 1, i] = 0.0
                dL[k, i] = -y
            else:
                X[k + 1, i] = y
                dL[k, i] = 0.0
