import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedncv import estimators as est
from fedncv.estimators import ClientGradSet, CvConfig, Flavor
from fedncv.numeric import derive_stream, weighted_mean


def _set(u, rows):
    return ClientGradSet(u, np.asarray(rows, dtype=float))


def _random_sets(seed, sizes=(3, 5, 4), d=3):
    rng = derive_stream(seed, 99)
    return [_set(u, rng.normal(size=(k, d)) + u) for u, k in enumerate(sizes)]


# --- loo_mean / client_reshape / client_aggregate ---------------------------

def test_loo_mean_examples():
    np.testing.assert_allclose(est.loo_mean([(1, 0), (3, 0)], 0), (3, 0))
    np.testing.assert_allclose(est.loo_mean([(1,), (2,), (3,)], 1), (2,))


def test_loo_mean_average_is_full_mean():
    G = derive_stream(0, 1).normal(size=(6, 4))
    loo = np.mean([est.loo_mean(G, i) for i in range(6)], axis=0)
    np.testing.assert_allclose(loo, G.mean(axis=0), rtol=1e-12)


def test_loo_mean_errors():
    with pytest.raises(ValueError):
        est.loo_mean([(1.0,)], 0)
    with pytest.raises(IndexError):
        est.loo_mean([(1.0,), (2.0,)], 2)


def test_client_reshape_examples():
    G = derive_stream(0, 2).normal(size=(5, 3))
    np.testing.assert_allclose(est.client_reshape(_set(0, G), 0.0), G)
    np.testing.assert_allclose(est.client_reshape(_set(0, [(2,), (4,)]), 1.0), [(-2,), (2,)])


def test_client_reshape_needs_two_samples():
    with pytest.raises(ValueError):
        est.client_reshape(_set(0, [(1.0, 2.0)]), 0.5)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 5)), elements=st.floats(-1e3, 1e3)),
    st.floats(-2, 2),
)
def test_reshape_mean_property(G, alpha):
    shaped = est.client_reshape(_set(0, G), alpha).mean(axis=0)
    np.testing.assert_allclose(shaped, (1 - alpha) * G.mean(axis=0), atol=1e-9 * (1 + np.abs(G).max()))


def test_client_aggregate_modes():
    np.testing.assert_allclose(est.client_aggregate([(1,), (3,)]), (2,))
    np.testing.assert_allclose(est.client_aggregate([(1, 2), (3, 4)], "sampling_weighted", [1, 0]), (1, 2))
    G = derive_stream(0, 3).normal(size=(7, 2))
    np.testing.assert_allclose(
        est.client_aggregate(G), est.client_aggregate(G, est.AggregationMode.SAMPLING_WEIGHTED, np.full(7, 1 / 7))
    )
    with pytest.raises(ValueError):
        est.client_aggregate(G, est.AggregationMode.SAMPLING_WEIGHTED, np.ones(7))


# --- server side -------------------------------------------------------------

def test_server_control_variate_examples():
    aggs = {0: np.array([1.0, 2.0]), 1: np.array([5.0, -1.0])}
    np.testing.assert_allclose(est.server_control_variate(aggs, {0: 4, 1: 4}, 0), aggs[1])
    three = {0: np.array([1.0]), 1: np.array([3.0]), 2: np.array([100.0])}
    np.testing.assert_allclose(est.server_control_variate(three, {0: 1, 1: 1, 2: 2}, 2), (2.0,))
    eq = {u: np.array([float(u)]) for u in range(4)}
    np.testing.assert_allclose(est.server_control_variate(eq, dict.fromkeys(range(4), 3), 0), (2.0,))


def test_server_aggregate_examples():
    aggs = {0: np.array([1.0, 2.0]), 1: np.array([3.0, 0.0]), 2: np.array([-1.0, 5.0])}
    sizes = {0: 2, 1: 5, 2: 3}
    np.testing.assert_allclose(est.server_aggregate(aggs, sizes, 0.0), weighted_mean(list(aggs.values()), [2, 5, 3]))
    np.testing.assert_allclose(est.server_aggregate(aggs, dict.fromkeys(aggs, 4), 1.0), 0.0, atol=1e-15)
    pinned = est.server_aggregate({0: np.array([4.0]), 1: np.array([0.0])}, {0: 1, 1: 3}, 1.0)
    np.testing.assert_allclose(pinned, (-2.0,))


def test_server_aggregate_is_order_independent():
    aggs = {u: derive_stream(1, u).normal(size=3) for u in range(5)}
    sizes = {u: u + 2 for u in range(5)}
    forward = est.server_aggregate(aggs, sizes, 0.7)
    backward = est.server_aggregate(dict(reversed(list(aggs.items()))), dict(reversed(list(sizes.items()))), 0.7)
    np.testing.assert_array_equal(forward, backward)


def test_server_aggregate_validation():
    with pytest.raises(ValueError):
        est.server_aggregate({0: np.zeros(1)}, {1: 1}, 0.0)
    with pytest.raises(ValueError):
        est.server_aggregate({0: np.zeros(1), 1: np.zeros(1)}, {0: 0, 1: 1}, 0.0)
    with pytest.raises(ValueError):
        est.server_control_variate({0: np.zeros(1)}, {0: 1}, 0)


# --- composition and identity form -----------------------------------------

def test_direct_reduces_to_pooled_mean_without_cv():
    sets = _random_sets(0)
    out = est.networked_estimate_direct(sets, CvConfig(dict.fromkeys(range(3), 0.0), beta=0.0))
    np.testing.assert_allclose(out, np.vstack([s.per_sample for s in sets]).mean(axis=0), rtol=1e-12)


def test_direct_scales_by_one_minus_alpha():
    sets = _random_sets(1)
    out = est.networked_estimate_direct(sets, CvConfig(dict.fromkeys(range(3), 0.3), beta=0.0))
    ref = weighted_mean([s.per_sample.mean(axis=0) for s in sets], [s.n_u for s in sets])
    np.testing.assert_allclose(out, 0.7 * ref, rtol=1e-12)


def test_direct_beta_one_equal_sizes_is_zero():
    sets = _random_sets(2, sizes=(4, 4, 4))
    out = est.networked_estimate_direct(sets, CvConfig(dict.fromkeys(range(3), 0.4), beta=1.0))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_direct_rejects_flavor_mismatch():
    sets = _random_sets(3)
    with pytest.raises(ValueError):
        est.networked_estimate_direct(sets, CvConfig(dict.fromkeys(range(3), 0.0), beta=0.0, flavor=Flavor.SCORE))


def test_missing_alpha_is_a_key_error():
    with pytest.raises(KeyError):
        CvConfig({0: 0.1}).alpha_for(1)


def test_identity_form_examples():
    sets = _random_sets(4)
    pooled = np.vstack([s.per_sample for s in sets])
    np.testing.assert_allclose(est.identity_form_estimate(sets, 0.0), pooled.mean(axis=0), rtol=1e-12)
    one = sets[:1]
    np.testing.assert_allclose(
        est.identity_form_estimate(one, 0.6), est.client_aggregate(est.client_reshape(one[0], 0.6)), rtol=1e-12
    )
    n = sum(s.n_u for s in sets)
    ref = sum(s.n_u * 0.25 * s.per_sample.mean(axis=0) for s in sets) / n
    np.testing.assert_allclose(est.identity_form_estimate(sets, 0.75), ref, rtol=1e-12)


def test_identity_form_equivariant_under_client_permutation():
    sets = _random_sets(5)
    alphas = {0: 0.1, 1: 0.5, 2: 0.9}
    np.testing.assert_array_equal(
        est.identity_form_estimate(sets, alphas), est.identity_form_estimate(sets[::-1], alphas)
    )


# --- optimal alpha ---------------------------------------------------------

def test_optimal_alpha_hand_pinned():
    # client 0: g = 1, 3 -> c = 3, 1;  client 1: g = 2, 2 -> c = 2, 2
    sets = [_set(0, [(1,), (3,)]), _set(1, [(2,), (2,)])]
    assert est.optimal_alpha(sets, 0) == pytest.approx(32 / 48)
    assert est.optimal_alpha(sets, 1) == pytest.approx(38 / 42)


def test_optimal_alpha_orthogonal_baselines():
    # every g_i . c_i vanishes, so only the mean-gap and baseline-energy terms remain
    sets = [_set(0, [(1, 0), (0, 1)]), _set(1, [(2, 0), (0, 2)])]
    assert est.optimal_alpha(sets, 0) == pytest.approx(-0.5)
    assert est.optimal_alpha(sets, 1) == pytest.approx(4 / 17)


def test_optimal_alpha_degenerate_and_errors():
    zero = [_set(0, np.zeros((2, 2))), _set(1, np.zeros((3, 2)))]
    with pytest.raises(est.DegenerateStatistics):
        est.optimal_alpha(zero, 0)
    assert est.optimal_alphas(zero) == {}
    with pytest.raises(ValueError):
        est.optimal_alpha(zero[:1], 0)
    with pytest.raises(KeyError):
        est.optimal_alpha(zero, 5)


# --- variance gap ------------------------------------------------------------

def test_variance_gap_single_client_is_zero():
    assert est.variance_gap(_random_sets(6)[:1], 0.5) == 0.0


def test_variance_gap_symmetric_pinned():
    # others reshape to -2, 2 (sum 0); mean_u = 2, sum over others = 4, a = 2
    sets = [_set(0, [(1,), (3,)]), _set(1, [(1,), (3,)])]
    assert est.variance_gap(sets, 1.0, 0) == pytest.approx(4.0)
    assert est.variance_gap(sets, 1.0) == pytest.approx(4.0)


def test_variance_gap_replicated_one_round_matches():
    sets = _random_sets(7)
    assert est.variance_gap_replicated([sets], 0.3) == pytest.approx(est.variance_gap(sets, 0.3))


# --- alpha descent -----------------------------------------------------------

def test_alpha_descent_examples():
    assert est.alpha_descent_update(0.42, 0.0, 5.0) == 0.42
    assert est.alpha_descent_update(0.5, 0.1, 2.0) == pytest.approx(0.3)
    assert est.alpha_descent_update(0.05, 1.0, 1.0) == 0.0
    assert est.alpha_descent_update(0.9, 1.0, -1.0) == 1.0


def test_norm_sq_slope_matches_analytic():
    # ||(1 - alpha) g_bar||^2 has derivative -2 (1 - alpha) ||g_bar||^2
    s = _random_sets(8)[0]
    g_bar = s.per_sample.mean(axis=0)
    expected = -2 * (1 - 0.3) * float(g_bar @ g_bar)
    assert est.aggregate_norm_sq_slope(s, 0.3) == pytest.approx(expected, rel=1e-8)
