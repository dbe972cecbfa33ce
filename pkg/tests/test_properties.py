import warnings

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacclearn.constraints import AVERAGE, POINTWISE, DualState, SampleSet, SlackEntry, SlackReport
from pacclearn.data import bin_values, quantile_edges, split
from pacclearn.perturb import CounterfactualMap, counterfactual
from pacclearn.solver import AdamDualAscent, dual_ascent_step, neighborhood_bounds
from pacclearn.theory import PaccQuery, sample_complexity

finite = st.floats(-1e3, 1e3, allow_nan=False)
nonneg = st.floats(0, 1e3, allow_nan=False)


@st.composite
def duals_and_slacks(draw):
    m = draw(st.integers(0, 3))
    sizes = draw(st.lists(st.integers(1, 6), max_size=2))
    mu = draw(arrays(np.float64, m, elements=nonneg))
    lam = [draw(arrays(np.float64, n, elements=nonneg)) for n in sizes]
    s_avg = draw(arrays(np.float64, m, elements=finite))
    s_pw = [draw(arrays(np.float64, n, elements=finite)) for n in sizes]
    entries = [SlackEntry(f"a{i}", AVERAGE, float(v)) for i, v in enumerate(s_avg)]
    entries += [SlackEntry(f"p{j}", POINTWISE, float(np.mean(s)), s) for j, s in enumerate(s_pw)]
    return DualState(mu, lam), SlackReport(entries)


@settings(max_examples=200, deadline=None)
@given(duals_and_slacks(), st.floats(1e-4, 10.0))
def test_dual_step_stays_nonnegative(ds, eta):
    duals, slacks = ds
    out = dual_ascent_step(duals, slacks, eta)
    assert np.all(out.mu >= 0) and all(np.all(v >= 0) for v in out.lam)
    # a positive slack never lowers the matching dual
    for i, s in enumerate(slacks.average):
        if s > 0:
            assert out.mu[i] >= duals.mu[i]


@settings(max_examples=100, deadline=None)
@given(duals_and_slacks())
def test_adam_dual_stays_nonnegative(ds):
    duals, slacks = ds
    step = AdamDualAscent(0.1)
    for _ in range(3):
        duals = step(duals, slacks)
        assert np.all(duals.flat() >= 0)


@given(arrays(np.float64, (5, 4), elements=st.floats(0, 1)), st.integers(0, 3))
def test_binary_swap_is_an_involution(X, col):
    X = np.round(X)
    cmap = CounterfactualMap.binary(col)
    twice = counterfactual(counterfactual(X, cmap), cmap)
    np.testing.assert_array_equal(twice, X)


@given(st.permutations(range(4)))
def test_permutation_inverse_round_trips(perm):
    cmap = CounterfactualMap((1, 2, 3, 4), "onehot_permute", tuple(perm))
    X = np.zeros((4, 6))
    X[np.arange(4), np.arange(4) + 1] = 1.0
    X[:, 0] = np.arange(4)
    back = counterfactual(counterfactual(X, cmap), cmap.inverse())
    np.testing.assert_array_equal(back, X)


@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-100, 100)), st.integers(2, 6))
def test_quantile_bins_are_monotone(v, k):
    b = bin_values(v, quantile_edges(v, k))
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(b[order]) >= 0)
    assert b.min() >= 0 and b.max() <= k - 1


@settings(deadline=None)
@given(st.integers(4, 80), st.integers(0, 1000), st.sampled_from([(0.6, 0.2, 0.2), (0.5, 0.0, 0.5), (1.0, 0.0, 0.0)]))
def test_split_is_a_partition(n, seed, fractions):
    data = SampleSet(np.arange(n, dtype=float)[:, None], np.arange(n) % 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = split(data, fractions, seed=seed)
    idx = np.concatenate([i for i in s.indices if i is not None])
    assert sorted(idx.tolist()) == list(range(n))


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.integers(1, 50))
def test_sample_complexity_grows_as_epsilon_shrinks(eps, delta, d):
    a = sample_complexity(PaccQuery(eps, delta, d))
    b = sample_complexity(PaccQuery(eps / 2, delta, d))
    assert b >= a >= 1


@given(finite, nonneg, st.floats(1e-6, 1), st.floats(1e-6, 10), nonneg, nonneg, nonneg)
def test_neighborhood_contains_p(P, rho, beta, eta, S, eps0, eps):
    lo, hi = neighborhood_bounds(P, rho, beta, eta, S, eps0, eps)
    assert lo <= P <= hi
