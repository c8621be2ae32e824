import math

import numpy as np
import pytest

from dcbo.certificates import (
    InitialLaw,
    check_theorem_3_2,
    check_theorem_A1,
    empirical_error,
    laplace_estimate,
    laplace_quadrature,
    rhs_constant,
    rhs_constant_model,
    support_sup,
    well_preparedness,
    _law_samples,
)
from dcbo.exceptions import ParameterError, PreconditionError, UsageError
from dcbo.noise import generic_scheme, make_scheme
from dcbo.objectives import builtin, constant, polynomial

WELL = builtin("quadratic_well", 1)
UNIT = InitialLaw.box([0.0], [1.0])
NARROW = InitialLaw.box([0.4], [0.6])
SCHEME_A = make_scheme("ModelA", 1, 0.5, 0.2)


def exact_laplace(beta):
    # closed form of -(1/beta) log of the mean of exp(-beta L) over U[0,1]
    integral = math.sqrt(math.pi / (2 * beta)) * math.erf(math.sqrt(2 * beta) * 0.5)
    return 1.0 - math.log(integral) / beta


def test_law_basics():
    box = InitialLaw.box([0, -1], [2, 1])
    assert box.density_at([1, 0]) == 0.25 and box.density_at([3, 0]) == 0.0
    ball = InitialLaw.ball([0, 0], 2.0)
    assert ball.density_at([0, 0]) == pytest.approx(1 / (4 * math.pi))
    x = ball.sample(np.random.default_rng(0), 5000)
    assert np.all(np.linalg.norm(x, axis=1) <= 2.0)
    with pytest.raises(ParameterError):
        InitialLaw.box([1.0], [0.0])


def test_well_preparedness_single_particle():
    assert well_preparedness(UNIT, 1, 200).value == 0.0


def test_well_preparedness_pair_oracle():
    est = well_preparedness(UNIT, 2, 20_000, seed=3)
    assert abs(est.value - 1 / 24) <= 4 * est.stderr


def test_well_preparedness_affine_scaling():
    a = well_preparedness(UNIT, 5, 500, seed=8)
    b = well_preparedness(InitialLaw.box([2.0], [5.0]), 5, 500, seed=8)
    assert b.value == pytest.approx(9 * a.value, rel=1e-12)


def test_well_preparedness_rectangle_bound():
    law = InitialLaw.box([0, -1, 3], [1, 1, 3.5])
    est = well_preparedness(law, 20, 1000)
    assert est.value <= 1 + 4 + 0.25


def test_laplace_constant_objective():
    c = constant(2.5, 1)
    for beta in (0.1, 1.0, 1e3):
        assert laplace_estimate(c, UNIT, beta, 50).value == 2.5


def test_quadrature_against_closed_form():
    for beta in (1.0, 25.0, 100.0, 400.0):
        assert laplace_quadrature(WELL, UNIT, beta) == pytest.approx(exact_laplace(beta),
                                                                      abs=1e-10)


def test_laplace_residual_at_beta_100():
    est = laplace_estimate(WELL, UNIT, 100.0, 10 ** 6, seed=1)
    residual = est.value - 1.0 - 0.5 * math.log(100) / 100
    assert -0.1 <= residual <= 0.1
    assert abs(est.value - laplace_quadrature(WELL, UNIT, 100.0)) <= 4 * est.stderr


def test_scaled_residual_bounded():
    scaled = [b * (laplace_quadrature(WELL, UNIT, b) - 1 - 0.5 * math.log(b) / b)
              for b in (25, 50, 100, 200, 400)]
    # the limit is -(1/2) log(pi/2)
    assert scaled[-1] == pytest.approx(-0.5 * math.log(math.pi / 2), abs=1e-6)
    assert max(map(abs, scaled)) < 2 * abs(scaled[0])


def test_stabilized_matches_naive():
    x = _law_samples(UNIT, 10_000, 4)
    vals = WELL(x)
    for beta in (0.5, 5.0, 50.0):
        naive = -math.log(np.mean(np.exp(-beta * vals))) / beta
        assert laplace_estimate(WELL, UNIT, beta, 10_000, 4).value == pytest.approx(naive,
                                                                                    abs=1e-12)


@pytest.mark.filterwarnings("ignore:Gibbs weights concentrated")
def test_monotone_in_beta():
    f = builtin("rastrigin_shifted", 2)
    law = InitialLaw.box([-2, -2], [2, 2])
    vals = [laplace_estimate(f, law, b, 20_000, 6).value for b in np.geomspace(0.01, 100, 25)]
    assert np.all(np.diff(vals) <= 1e-12)


def test_low_ess_warning():
    with pytest.warns(RuntimeWarning, match="effective samples"):
        laplace_estimate(WELL, InitialLaw.box([-50.0], [50.0]), 1e4, 1000)


def test_quadrature_needs_1d_box():
    with pytest.raises(UsageError):
        laplace_quadrature(builtin("sphere_plus_one", 2), InitialLaw.box([0, 0], [1, 1]), 1.0)


def test_rhs_constant_model_rewrites_agree():
    grid = [(1, 0.5, 0.2), (2, 0.3, 0.05), (0.7, 1.0, 1.5), (1, 1, 0.1)]
    for kind in ("ModelA", "ModelB", "ModelC"):
        for lam, sigma, h in grid:
            s = make_scheme(kind, lam, sigma, h)
            if (1 - s.gamma) ** 2 + s.zeta ** 2 >= 1:
                continue
            assert rhs_constant_model(s, 3.0) == pytest.approx(rhs_constant(s, 3.0), rel=1e-12)


def test_laplace_certificate_single_particle_always_holds():
    for beta in (1.0, 100.0):
        r = check_theorem_3_2(WELL, UNIT, SCHEME_A, beta, 0.9, 1, 100)
        assert r.rhs == 0.0 and r.holds
        assert r.bound_value == pytest.approx(0.5 * math.log(beta) / beta)


def test_laplace_certificate_reference_example():
    r = check_theorem_3_2(WELL, UNIT, SCHEME_A, 5.0, 0.5, 20, 1000)
    assert r.holds == (r.lhs >= r.rhs)
    assert r.lhs_scaled == pytest.approx(0.5 * math.exp(-5 * (exact_laplace(5.0) - 1)), rel=0.01)
    assert r.rhs_scaled == pytest.approx(rhs_constant(SCHEME_A, 4.0) * 5 * r.well_preparedness)


def test_laplace_certificate_beta_sweep_transitions():
    holds = [check_theorem_3_2(WELL, NARROW, SCHEME_A, b, 0.5, 2, 1000).holds
             for b in (1, 5, 25, 125, 625)]
    assert holds[0] and not holds[-1]
    # once lost, never regained
    assert holds == sorted(holds, reverse=True)


def test_laplace_certificate_epsilon_to_one_fails():
    r = check_theorem_3_2(WELL, NARROW, SCHEME_A, 1.0, 1 - 1e-12, 2, 200)
    assert r.lhs_scaled < 1e-11 and not r.holds


def test_laplace_certificate_errors():
    with pytest.raises(UsageError):
        check_theorem_3_2(builtin("ackley_shifted", 1), UNIT, SCHEME_A, 1.0, 0.5, 2, 100)
    with pytest.raises(PreconditionError):
        check_theorem_3_2(WELL, UNIT, generic_scheme(2.5, 0.0), 1.0, 0.5, 2, 100)
    with pytest.raises(ParameterError):
        check_theorem_3_2(WELL, UNIT, SCHEME_A, 1.0, 1.0, 2, 100)


def test_support_sup_on_interval():
    sup = support_sup(WELL, NARROW)
    assert sup.upper - 1.0 == pytest.approx(0.02, abs=1e-6)
    assert sup.upper >= 1.02


def test_support_sup_ball():
    f = builtin("sphere_plus_one", 2)
    sup = support_sup(f, InitialLaw.ball([0.0, 0.0], 0.5), max_points=300_000)
    assert 1.25 - 1e-12 <= sup.upper <= 1.25 + 0.01


def test_sup_certificate_sup_condition_and_bound():
    r = check_theorem_A1(WELL, NARROW, SCHEME_A, 100.0, 0.5, 0.05, 2, 200)
    assert r.sup_condition and r.sup_gap == pytest.approx(0.02, abs=1e-6)
    assert r.bound_value == pytest.approx(0.05693147180559946, abs=1e-15)
    r = check_theorem_A1(WELL, NARROW, SCHEME_A, 100.0, 0.5, 0.019, 2, 200)
    assert not r.sup_condition and not r.holds


def test_sup_certificate_shrinking_support():
    for half in (0.1, 0.01, 0.001):
        law = InitialLaw.box([0.5 - half], [0.5 + half])
        r = check_theorem_A1(WELL, law, SCHEME_A, 10.0, 0.5, 1e-4 + 2 * half * half, 1, 100)
        assert r.sup_condition and r.holds


def test_sup_certificate_rectangle_variant_and_precondition():
    r = check_theorem_A1(WELL, NARROW, SCHEME_A, 1.0, 0.5, 0.05, 2, 200, variant="rectangle")
    assert r.well_preparedness == pytest.approx(0.04)
    assert r.lhs_scaled == 0.5
    with pytest.raises(PreconditionError):
        check_theorem_A1(WELL, InitialLaw.box([0.6], [0.9]), SCHEME_A, 1.0, 0.5, 0.5, 2, 100)


def test_empirical_error_sphere():
    law = InitialLaw.box([-1, -1], [1, 1])
    e = empirical_error(builtin("sphere_plus_one", 2), law, make_scheme("ModelC", 1, 1, 0.1),
                        50.0, 50, 100, seed=2, workers=2)
    assert e.reliable and e.failures == 0
    assert e.min_L_at_limit - 1 <= 0.25
    assert e.bound_3_2 == pytest.approx(1 + math.log(50) / 50)
    assert e.bound_A1 is None


def test_empirical_error_tiny_beta_still_consensus():
    law = InitialLaw.box([-1, -1], [1, 1])
    e = empirical_error(builtin("sphere_plus_one", 2), law, make_scheme("ModelC", 1, 1, 0.1),
                        1e-6, 20, 100, seed=3)
    assert e.failures == 0


def test_empirical_error_single_particle():
    law = InitialLaw.box([0.0], [1.0])
    e = empirical_error(WELL, law, SCHEME_A, 10.0, 1, 100, seed=4)
    from dcbo.certificates import sample_initial
    x0 = np.array([sample_initial(law, 1, 4, r)[0] for r in range(100)])
    assert e.min_L_at_limit == WELL(x0).min()
