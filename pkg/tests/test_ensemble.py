import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dcbo.ensemble import Ensemble, diameters, ensemble_stats, gibbs_consensus, gibbs_weights
from dcbo.exceptions import ObjectiveEvaluationError, ParameterError
from dcbo.objectives import Objective, builtin, polynomial

SQUARE = polynomial([0.0, 0.0, 1.0], 1)


def test_two_point_consensus_oracle():
    # weights e^0 and e^{-1} on the points 0 and 2
    c = gibbs_consensus(Ensemble([[0.0], [2.0]]), SQUARE, 0.25)
    assert c.point[0] == pytest.approx(0.5378828427399902, abs=1e-15)
    assert c.weights == pytest.approx([1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))])


def test_small_beta_gives_mean():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(7, 3))
    e = Ensemble(x)
    c = gibbs_consensus(e, builtin("rastrigin_shifted", 3), 1e-12)
    assert np.max(np.abs(c.point - x.mean(axis=0))) <= 1e-6 * diameters(x)


def test_large_beta_gives_argmin():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]])
    obj = Objective("gaps", 2, lambda p: np.array([1.0, 3.0, 2.0])[: len(p)]
                    if p.ndim == 2 else 1.0)
    c = gibbs_consensus(Ensemble(x), obj, 1e4)
    assert np.allclose(c.point, x[0], atol=1e-6)


def test_single_particle_is_fixed():
    e = Ensemble([[0.3, -2.0]])
    for beta in (1e-9, 1.0, 1e9):
        assert np.array_equal(gibbs_consensus(e, builtin("sphere_plus_one", 2), beta).point,
                              [0.3, -2.0])


def test_huge_beta_does_not_underflow():
    e = Ensemble([[10.0], [20.0]])
    c = gibbs_consensus(e, SQUARE, 1e6)
    assert c.point[0] == 10.0


def test_ties_split_evenly():
    e = Ensemble([[-1.0], [1.0]])
    c = gibbs_consensus(e, SQUARE, 1e8)
    assert c.weights == pytest.approx([0.5, 0.5])
    assert c.point[0] == 0.0


def test_nonfinite_objective_names_particle():
    obj = Objective("bad", 1, lambda p: np.where(p[..., 0] > 1, np.nan, 0.0))
    with pytest.raises(ObjectiveEvaluationError) as info:
        gibbs_consensus(Ensemble([[0.0], [0.5], [3.0]]), obj, 1.0)
    assert info.value.particle == 2


def test_invalid_inputs():
    with pytest.raises(ParameterError):
        Ensemble([[0.0, np.inf]])
    with pytest.raises(ParameterError):
        Ensemble(np.zeros((0, 2)))
    with pytest.raises(ParameterError):
        gibbs_weights([0.0, 1.0], 0.0)


def test_stats_examples():
    s = ensemble_stats(Ensemble([[0.0], [2.0]]))
    assert (s.mean[0], s.diameter, s.spread) == (1.0, 2.0, 1.0)
    s = ensemble_stats(Ensemble(np.ones((4, 3))))
    assert s.diameter == 0.0 and s.spread == 0.0


def test_spread_matches_naive_loop():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 3))
    mean = [sum(x[i, l] for i in range(5)) / 5 for l in range(3)]
    naive = sum(sum((x[i, l] - mean[l]) ** 2 for l in range(3)) for i in range(5)) / 5
    assert ensemble_stats(Ensemble(x)).spread == pytest.approx(naive, rel=1e-12)


def test_positions_are_read_only():
    e = Ensemble([[1.0], [2.0]])
    with pytest.raises(ValueError):
        e.positions[0, 0] = 5.0


ensembles = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                   elements=st.floats(-100, 100, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(ensembles, st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_shift_invariance_and_hull(x, beta, shift):
    e = Ensemble(x)
    base = builtin("sphere_plus_one", e.dim)
    shifted = Objective("shifted", e.dim, lambda p: base(p) + shift)
    a = gibbs_consensus(e, base, beta).point
    b = gibbs_consensus(e, shifted, beta).point
    assert np.allclose(a, b, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))
    assert np.all(a >= x.min(axis=0)) and np.all(a <= x.max(axis=0))


@settings(max_examples=100, deadline=None)
@given(ensembles)
def test_diameter_spread_relation(x):
    s = ensemble_stats(Ensemble(x))
    assert s.spread <= s.diameter ** 2 * (1 + 1e-12) + 1e-300
    assert (s.diameter == 0.0) == bool(np.all(x == x[0]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 3)),
              elements=st.floats(-10, 10, allow_nan=False)), st.floats(1e-2, 1e2))
def test_mean_consensus_gap_bounded_by_max_deviation(x, beta):
    e = Ensemble(x)
    c = gibbs_consensus(e, builtin("sphere_plus_one", e.dim), beta).point
    mean = x.mean(axis=0)
    gap = np.sum((mean - c) ** 2)
    worst = np.max(np.sum((x - mean) ** 2, axis=1))
    assert gap <= worst * (1 + 1e-9) + 1e-12


def test_argmin_weight_monotone_in_beta():
    rng = np.random.default_rng(5)
    obj = builtin("rastrigin_shifted", 2)
    for _ in range(50):
        x = rng.uniform(-3, 3, size=(6, 2))
        k = int(np.argmin(obj(x)))
        w = [gibbs_consensus(Ensemble(x), obj, b).weights[k] for b in np.geomspace(1e-3, 1e2, 40)]
        assert np.all(np.diff(w) >= -1e-15)
