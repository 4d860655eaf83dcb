import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyspec.engine import ChainConfig, RunParams, decode_dualistic
from polyspec.model import TableModel
from polyspec.stats import (
    AcceptanceStats,
    StatsError,
    TruncGeomParams,
    accumulated_block_pmf,
    chain_renewal,
    comparison_row,
    emitted_length_pmf,
    empirical_acceptance_stats,
    expected_acceptance,
    mc_standard_errors,
    monte_carlo_acceptance,
    pool,
    summarize,
    trunc_geom_pmf,
    trunc_geom_pmf_vector,
    variance_acceptance_oracle,
    variance_paper_formula,
)

GRID_P = [round(0.05 * i, 2) for i in range(1, 21)]
GRID_N = range(1, 17)


def brute_law(p, n):
    """Law of min(G, n) by walking the Bernoulli trials directly."""
    law = np.zeros(n + 1)
    stop = 1.0
    for k in range(1, n):
        law[k] = stop * p
        stop *= 1 - p
    law[n] = stop
    return law[1:]


def test_pmf_examples():
    assert trunc_geom_pmf(TruncGeomParams(0.5, 2), 1) == 0.5
    assert trunc_geom_pmf(TruncGeomParams(0.5, 2), 2) == 0.5
    for n in (1, 3, 9):
        assert trunc_geom_pmf(TruncGeomParams(1.0, n), 1) == 1.0
    with pytest.raises(StatsError):
        trunc_geom_pmf(TruncGeomParams(0.5, 2), 3)
    with pytest.raises(StatsError):
        TruncGeomParams(0.0, 2)
    with pytest.raises(StatsError):
        TruncGeomParams(0.5, 0)


@pytest.mark.parametrize("p,n", list(itertools.product(GRID_P, GRID_N)))
def test_pmf_grid_against_brute_force(p, n):
    params = TruncGeomParams(p, n)
    pmf = trunc_geom_pmf_vector(params)
    np.testing.assert_allclose(pmf, brute_law(p, n), atol=1e-15)
    assert abs(pmf.sum() - 1) <= 1e-12
    k = np.arange(1, n + 1)
    assert abs(expected_acceptance(params) - float(np.dot(k, pmf))) <= 1e-12
    var = variance_acceptance_oracle(params)
    assert var >= 0
    if n == 1 or p == 1.0:
        assert var == 0


def test_expectation_examples():
    assert expected_acceptance(TruncGeomParams(1.0, 5)) == 1.0
    assert expected_acceptance(TruncGeomParams(0.5, 2)) == pytest.approx(1.5)
    assert expected_acceptance(TruncGeomParams(0.5, 3)) == pytest.approx(1.75)


def test_variance_examples():
    assert variance_acceptance_oracle(TruncGeomParams(0.3, 1)) == 0
    assert variance_acceptance_oracle(TruncGeomParams(1.0, 7)) == 0
    assert variance_acceptance_oracle(TruncGeomParams(0.5, 2)) == pytest.approx(0.25)


def test_reference_variance_formula_values():
    assert variance_paper_formula(0.5, 2) == pytest.approx(-1.0)
    assert variance_paper_formula(0.5, 1) == pytest.approx(2.0)
    for n in range(1, 10):
        assert variance_paper_formula(0.0, n) == 0.0
    with pytest.raises(StatsError):
        variance_paper_formula(1.0, 3)


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(0.0, 0.99), n=st.integers(1, 40))
def test_expectation_shape(alpha, n):
    p = 1 - alpha
    e = expected_acceptance(TruncGeomParams(p, n))
    assert e <= min(n, 1 / p) + 1e-9
    assert expected_acceptance(TruncGeomParams(p, n + 1)) >= e - 1e-12
    if alpha < 0.98:
        assert expected_acceptance(TruncGeomParams(p - 0.01, n)) >= e - 1e-12


def test_summarize_examples():
    s = summarize([5, 5, 5])
    assert (s.mean, s.variance, s.count) == (5, 0, 3)
    s = summarize([1, 3])
    assert (s.mean, s.variance) == (2, 2)
    assert summarize([4]).variance == 0
    with pytest.raises(StatsError):
        summarize([])
    with pytest.raises(StatsError):
        AcceptanceStats(1.0, -1.0, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(1, 9), min_size=1, max_size=12), min_size=1, max_size=6))
def test_pool_equals_concatenation(groups):
    pooled = pool([summarize(g) for g in groups])
    whole = summarize([x for g in groups for x in g])
    assert pooled.count == whole.count
    assert pooled.mean == pytest.approx(whole.mean)
    assert pooled.variance == pytest.approx(whole.variance, abs=1e-9)


def test_empirical_stats_on_identical_dualistic_run():
    m = TableModel(3, 0, {(): [0.2, 0.5, 0.3]})
    _, trace = decode_dualistic(m, m, 4, "speculative", RunParams((), 50, 2))
    s = empirical_acceptance_stats(trace, 0)
    assert s.mean == 5 and s.variance == 0
    assert empirical_acceptance_stats(trace, "M1->M2") == s
    with pytest.raises(StatsError):
        empirical_acceptance_stats(trace, 1)
    with pytest.raises(StatsError):
        empirical_acceptance_stats(trace, "M2->M3")


def test_monte_carlo_examples():
    s = monte_carlo_acceptance(TruncGeomParams(1.0, 6), 1000, 3)
    assert (s.mean, s.variance) == (1.0, 0.0)
    a = monte_carlo_acceptance(TruncGeomParams(0.4, 5), 5000, 9)
    b = monte_carlo_acceptance(TruncGeomParams(0.4, 5), 5000, 9)
    assert a == b
    with pytest.raises(StatsError):
        monte_carlo_acceptance(TruncGeomParams(0.4, 5), 0, 9)


def test_monte_carlo_mean_within_4se():
    params = TruncGeomParams(0.5, 8)
    trials = 1_000_000
    s = monte_carlo_acceptance(params, trials, 1)
    se = math.sqrt(variance_acceptance_oracle(params) / trials)
    assert abs(s.mean - expected_acceptance(params)) <= 4 * se


def test_standard_error_of_variance_two_point_law():
    # two-point law: the first-order delta term vanishes, the exact term does not
    se_m, se_v = mc_standard_errors(TruncGeomParams(0.5, 2), 1000)
    assert se_m == pytest.approx(math.sqrt(0.25 / 1000))
    assert se_v > 0


def test_comparison_row():
    row = comparison_row(0.5, 2, 1000, 4)
    assert row["E_closed"] == pytest.approx(1.5)
    assert row["E_oracle"] == pytest.approx(1.5)
    assert row["Var_oracle"] == pytest.approx(0.25)
    assert row["Var_paper"] == pytest.approx(-1.0)
    assert row["trials"] == 1000 and row["seed"] == 4


# renewal helpers ---------------------------------------------------------------


def test_emitted_length_pmf_is_truncated_geometric():
    for a in (0.0, 0.3, 0.9, 1.0):
        for m in (1, 4):
            pmf = emitted_length_pmf(a, m)
            if a < 1:
                np.testing.assert_allclose(pmf[1:], trunc_geom_pmf_vector(TruncGeomParams(1 - a, m + 1)))
            assert pmf.sum() == pytest.approx(1)


def test_accumulated_block_pmf_brute_force():
    cycle = np.array([0.0, 0.2, 0.5, 0.3])
    mu = 5
    brute = np.zeros(mu + 3)
    # enumerate cycle sequences until the running sum reaches mu
    frontier = [((), 1.0)]
    while frontier:
        nxt = []
        for seq, w in frontier:
            for k in (1, 2, 3):
                s = sum(seq) + k
                if s >= mu:
                    brute[s] += w * cycle[k]
                else:
                    nxt.append((seq + (k,), w * cycle[k]))
        frontier = nxt
    np.testing.assert_allclose(accumulated_block_pmf(cycle, mu), brute, atol=1e-15)


def test_chain_renewal_identical_models():
    r = chain_renewal([1.0, 1.0], 4, [8])
    # bottom emits K+1=5, two cycles reach 10, top adds one
    assert r.acceptance_lengths == (11.0, 5.0)
    assert r.mean_blocks == (10.0, 4.0)
    assert r.passes_per_token == pytest.approx((1 / 11, 2 / 11, 8 / 11))


def test_chain_renewal_dualistic_matches_closed_form():
    for a in (0.2, 0.6, 0.95):
        r = chain_renewal([a], 4)
        assert r.acceptance_lengths[0] == pytest.approx(expected_acceptance(TruncGeomParams(1 - a, 5)))
        assert r.passes_per_token[1] == pytest.approx(4 / r.acceptance_lengths[0])
