import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import linprog

from rankbal.model import (
    CapacityError,
    DiffusionParams,
    InitialConditionSpec,
    ModelParams,
    ServiceLaw,
    ValidationError,
    diffusion_params,
    in_drift_hull,
    permissible_permutations,
    poc_probabilities,
    rank_rows,
    rank_vector,
    rearrangement_gap,
)
from rankbal.rng import stream

small_vectors = st.lists(st.integers(-3, 3), min_size=1, max_size=6).map(lambda v: np.array(v, float))


# --- ranks -----------------------------------------------------------------


@pytest.mark.parametrize(
    "x, expected",
    [((1, 1, 2, 2, 3), (1, 2, 3, 4, 5)), ((1, 1, 3, 2, 2), (1, 2, 5, 3, 4)), ((3, 2, 1), (3, 2, 1))],
)
def test_rank_vector_examples(x, expected):
    assert tuple(rank_vector(x)) == expected


def test_rank_vector_rejects_nonfinite():
    with pytest.raises(ValidationError):
        rank_vector([1.0, np.nan])
    with pytest.raises(ValidationError):
        rank_vector([np.inf, 0.0])


@given(small_vectors)
def test_rank_matches_stable_sort_positions(x):
    # independent oracle: position in a stable ascending sort
    order = sorted(range(len(x)), key=lambda i: (x[i], i))
    expected = np.empty(len(x), int)
    expected[order] = np.arange(1, len(x) + 1)
    assert np.array_equal(rank_vector(x), expected)


@given(small_vectors)
def test_rank_is_bijection_and_transform_invariant(x):
    r = rank_vector(x)
    assert sorted(r) == list(range(1, len(x) + 1))
    assert np.array_equal(rank_vector(np.exp(x) * 3 + 1), r)


@given(st.lists(st.lists(st.integers(-3, 3), min_size=4, max_size=4), min_size=1, max_size=5))
def test_rank_rows_matches_rank_vector(rows):
    arr = np.array(rows, float)
    assert np.array_equal(rank_rows(arr), np.vstack([rank_vector(r) for r in arr]))


# --- power of choice -------------------------------------------------------


def brute_force_poc(N, ell, with_replacement):
    counts = [Fraction(0)] * N
    if with_replacement:
        draws = list(itertools.product(range(1, N + 1), repeat=ell))
    else:
        draws = list(itertools.combinations(range(1, N + 1), ell))
    for d in draws:
        counts[min(d) - 1] += 1
    return tuple(c / len(draws) for c in counts)


@pytest.mark.parametrize("N", range(1, 7))
@pytest.mark.parametrize("with_replacement", [True, False])
def test_poc_matches_enumeration(N, with_replacement):
    for ell in range(1, N + 1):
        assert poc_probabilities(N, ell, with_replacement, exact=True) == brute_force_poc(N, ell, with_replacement)


def test_poc_examples():
    assert poc_probabilities(2, 2, True, exact=True) == (Fraction(3, 4), Fraction(1, 4))
    assert poc_probabilities(3, 2, False, exact=True) == (Fraction(2, 3), Fraction(1, 3), Fraction(0))
    for N in (1, 4, 9):
        for mode in (True, False):
            assert poc_probabilities(N, 1, mode, exact=True) == tuple([Fraction(1, N)] * N)


@pytest.mark.parametrize("N", [1, 2, 7, 33, 64])
def test_poc_is_distribution_and_nonincreasing(N):
    for ell in range(1, N + 1):
        for mode in (True, False):
            p = poc_probabilities(N, ell, mode, exact=True)
            assert sum(p) == 1
            assert all(a >= b for a, b in zip(p, p[1:]))
            assert all(q >= 0 for q in p)


@pytest.mark.parametrize("ell", [0, 4, -1])
def test_poc_rejects_bad_ell(ell):
    with pytest.raises(ValidationError):
        poc_probabilities(3, ell)


# --- permissible permutations ---------------------------------------------


def brute_force_permissible(x):
    n = len(x)
    out = set()
    for pi in itertools.permutations(range(1, n + 1)):
        if all(pi[i] < pi[j] for i in range(n) for j in range(n) if x[i] < x[j]):
            out.add(pi)
    return out


def test_permissible_examples():
    assert permissible_permutations([1, 2]) == {(1, 2)}
    assert permissible_permutations([1, 1]) == {(1, 2), (2, 1)}
    assert permissible_permutations([2, 1, 1]) == {(3, 1, 2), (3, 2, 1)}


@given(small_vectors)
def test_permissible_matches_filter(x):
    assert permissible_permutations(x) == brute_force_permissible(x)


@given(small_vectors)
def test_rank_permutation_is_permissible(x):
    assert tuple(int(r) for r in rank_vector(x)) in permissible_permutations(x)


def test_permissible_capacity():
    assert len(permissible_permutations(np.zeros(8))) == math.factorial(8)
    with pytest.raises(CapacityError):
        permissible_permutations(np.zeros(9))


# --- drift hull ------------------------------------------------------------


def lp_in_hull(beta, x, b, tol=1e-9):
    """Feasibility LP over the explicit vertex list."""
    verts = np.array([[b[r - 1] for r in pi] for pi in permissible_permutations(x)])
    k = len(verts)
    A_eq = np.vstack([verts.T, np.ones(k)])
    b_eq = np.concatenate([beta, [1.0]])
    # allow a small slack on each equality, minimize the total slack
    n_eq = A_eq.shape[0]
    A = np.hstack([A_eq, np.eye(n_eq), -np.eye(n_eq)])
    c = np.concatenate([np.zeros(k), np.ones(2 * n_eq)])
    res = linprog(c, A_eq=A, b_eq=b_eq, bounds=[(0, None)] * (k + 2 * n_eq), method="highs")
    return res.status == 0 and res.fun <= tol


def test_hull_examples():
    b = np.array([0.75, 0.25])
    assert in_drift_hull(b, [1, 2], b)
    assert not in_drift_hull(b[::-1], [1, 2], b)
    assert not in_drift_hull(b + [1e-6, 0], [1, 2], b)
    assert in_drift_hull([0.5, 0.5], [5, 5], b)
    eps = 1e-6
    assert not in_drift_hull([0.75 + eps, 0.25 - eps], [5, 5], b)
    assert not lp_in_hull(np.array([0.75 + eps, 0.25 - eps]), [5, 5], b)


def test_hull_rejects_nonmonotone_b():
    with pytest.raises(ValidationError):
        in_drift_hull([0, 1], [0, 0], [0, 1])


hull_cases = st.tuples(
    st.lists(st.integers(0, 2), min_size=1, max_size=5),
    st.integers(0, 2**32 - 1),
)


@given(hull_cases)
def test_vertices_and_mixtures_in_hull(case):
    xs, seed = case
    x = np.array(xs, float)
    rng = np.random.default_rng(seed)
    b = np.sort(rng.normal(size=len(x)))[::-1]
    verts = [np.array([b[r - 1] for r in pi]) for pi in permissible_permutations(x)]
    for v in verts:
        assert in_drift_hull(v, x, b, 0.0)
    w = rng.dirichlet(np.ones(len(verts)))
    mix = np.sum([wi * v for wi, v in zip(w, verts)], axis=0)
    assert in_drift_hull(mix, x, b)
    assert lp_in_hull(mix, x, b)


@given(hull_cases)
def test_hull_agrees_with_lp(case):
    xs, seed = case
    x = np.array(xs, float)
    rng = np.random.default_rng(seed)
    b = np.sort(rng.normal(size=len(x)))[::-1]
    verts = [np.array([b[r - 1] for r in pi]) for pi in permissible_permutations(x)]
    w = rng.dirichlet(np.ones(len(verts)))
    base = np.sum([wi * v for wi, v in zip(w, verts)], axis=0)
    # random perturbation: may or may not leave the hull; decisive cases only
    beta = base + rng.normal(scale=0.3, size=len(x)) * rng.integers(0, 2)
    inside = in_drift_hull(beta, x, b, 1e-7)
    loose, tight = lp_in_hull(beta, x, b, 1e-6), lp_in_hull(beta, x, b, 1e-8)
    assume(loose == tight)
    assert inside == loose


@given(hull_cases, st.floats(1e-6, 1.0))
def test_perturbed_block_sum_leaves_hull(case, delta):
    xs, seed = case
    x = np.array(xs, float)
    rng = np.random.default_rng(seed)
    b = np.sort(rng.normal(size=len(x)))[::-1]
    beta = b[rank_vector(x) - 1].copy()
    beta[rng.integers(len(x))] += delta
    assert not in_drift_hull(beta, x, b)


# --- rearrangement ---------------------------------------------------------


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_rearrangement_inequality(N, seed):
    rng = np.random.default_rng(seed)
    u = np.sort(rng.normal(size=N))[::-1]
    v = np.sort(rng.normal(size=N))
    pi = rng.permutation(N) + 1
    direct = sum(u[pi[i] - 1] * v[i] for i in range(N)) - sum(u[i] * v[i] for i in range(N))
    assert rearrangement_gap(u, v, pi) == pytest.approx(direct, abs=1e-12)
    assert direct >= -1e-12


# --- parameters ------------------------------------------------------------


def test_diffusion_params_examples():
    mp = ModelParams(100, [1, 1], [1, 1], 1.0, [0.75, 0.25])
    dp = diffusion_params(mp)
    assert np.allclose(dp.b, [0.75, 0.25])
    assert np.allclose(dp.sigma, math.sqrt(2))
    assert np.allclose(dp.m, 0)
    mp = ModelParams(100, [1, 1], [1, 1], 1.0, [0.75, 0.25], lam_hat=[0.5, 0], mu_hat=[0.2, 0])
    assert np.allclose(diffusion_params(mp).m, [0.3, 0])
    erl = ModelParams(100, [1, 1], [1, 1], 1.0, [0.75, 0.25], service=ServiceLaw.erlang(2))
    assert np.allclose(diffusion_params(erl).sigma, math.sqrt(1.5))
    h2 = ModelParams(100, [1, 1], [1, 1], 1.0, [0.75, 0.25], service=ServiceLaw.hyperexponential(2.0))
    assert np.allclose(diffusion_params(h2).sigma, math.sqrt(5))


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(lam=[1, 1], mu=[1, 2]), "mu"),
        (dict(p=[0.25, 0.75]), "p"),
        (dict(p=[0.5, 0.6]), "p"),
    ],
)
def test_model_params_validation(kwargs, field):
    base = dict(n=100, lam=[1, 1], mu=[1, 1], lam0=1.0, p=[0.75, 0.25])
    base.update(kwargs)
    with pytest.raises(ValidationError) as info:
        ModelParams(**base)
    assert field in str(info.value)


def test_diffusion_params_validation():
    with pytest.raises(ValidationError):
        DiffusionParams([0.5, 0.5], [0, 0], [1, 0])


@pytest.mark.parametrize(
    "law", [ServiceLaw.exponential(), ServiceLaw.erlang(2), ServiceLaw.hyperexponential(2.0), ServiceLaw.lognormal(0.5)]
)
def test_service_law_moments(law):
    x = law.sample(stream(3, "service"), 400_000)
    assert np.all(x > 0)
    se = law.cv / math.sqrt(x.size)
    assert abs(x.mean() - 1) < 5 * se
    assert x.std() == pytest.approx(law.cv, rel=0.03)


@pytest.mark.parametrize("law", [ServiceLaw.erlang(3), ServiceLaw.hyperexponential(1.5), ServiceLaw.lognormal(1.0)])
def test_service_draws_are_prefix_stable(law):
    long = law.sample(stream(9, "service", 2), 1000)
    short = law.sample(stream(9, "service", 2), 300)
    assert np.array_equal(long[:300], short)


def test_service_law_validation():
    with pytest.raises(ValidationError):
        ServiceLaw("hyperexponential", 0.5)
    with pytest.raises(ValidationError):
        ServiceLaw("erlang", 1.5)
    with pytest.raises(ValidationError):
        ServiceLaw("weibull", 1.0)


def test_initial_condition_resolution():
    mp = ModelParams(10_000, [1, 1], [1, 1], 1.0, [0.75, 0.25], ic=InitialConditionSpec("IC0", x0=(0.5, 0.0)))
    ic = mp.resolve_ic(stream(1, "residual"))
    assert tuple(ic.x0_minus) == (50, 1)  # empty queue carries a fictitious job
    assert ic.z0[1] == 0.0 and ic.z0[0] > 0
    alpha = ModelParams(10_000, [1, 1], [1, 1], 1.0, [0.75, 0.25], ic=InitialConditionSpec("ICalpha", x0=(0, 0)))
    assert tuple(alpha.resolve_ic(stream(1, "residual")).x0_minus) == (1000, 1000)
