import math

import numpy as np
import pytest

from ocplmi.benchmarks import brockett, double_integrator, zermelo
from ocplmi.momentstruct import MomentLayout
from ocplmi.oracles import (
    TrajectorySample,
    adjoint_residuals,
    brockett_implicit_lhs,
    brockett_residual,
    brockett_theta,
    brockett_time,
    double_integrator_time,
    occupation_moments,
    simulate,
    simulate_occupation,
    zermelo_unreachable,
)
from ocplmi.problem import FreeHomogeneous
from ocplmi.sdpbackend import Verdict


def _di(x0):
    return double_integrator(x0, time=FreeHomogeneous(5.0))


@pytest.mark.parametrize("x,T", [
    ((0.0, 0.0), 0.0),
    ((1.0, 1.0), 3.5),
    ((0.0, -1.0), 1.0 + math.sqrt(2.0)),
    ((1.0, 0.0), 2.0),
    ((-0.5, 1.0), 1.0),   # on the switching curve: decelerate straight in
])
def test_double_integrator_examples(x, T):
    assert double_integrator_time(x) == pytest.approx(T, abs=1e-12)


def test_double_integrator_rejects_below_floor():
    with pytest.raises(ValueError):
        double_integrator_time((0.0, -1.5))


def test_double_integrator_branches_agree_on_boundaries():
    first = lambda x1, x2: x2 * x2 / 2 + x1 + x2 + 1
    second = lambda x1, x2: 2 * math.sqrt(max(x2 * x2 / 2 + x1, 0.0)) + x2
    third = lambda x1, x2: 2 * math.sqrt(max(x2 * x2 / 2 - x1, 0.0)) - x2
    for x2 in np.linspace(-1.0, 2.0, 61):
        half = x2 * x2 / 2
        x1 = 1.0 - half
        assert abs(first(x1, x2) - second(x1, x2)) <= 1e-9
        assert double_integrator_time((x1, x2)) == pytest.approx(first(x1, x2), abs=1e-9)
        if x2 >= 0:
            x1 = -half
            assert abs(second(x1, x2) - third(x1, x2)) <= 1e-9
            assert double_integrator_time((x1, x2)) == pytest.approx(third(x1, x2), abs=1e-9)


def test_double_integrator_continuous_on_fine_grid():
    xs = np.linspace(-3, 3, 601)
    for x2 in np.linspace(-1.0, 2.0, 31):
        vals = np.array([double_integrator_time((x1, x2)) for x1 in xs])
        # Lipschitz away from the x2 = 0 square-root cusp, Hoelder-1/2 at it
        assert np.abs(np.diff(vals)).max() <= 2 * math.sqrt(xs[1] - xs[0]) + 1e-12


def test_double_integrator_bang_bang_trajectory_matches():
    # from (1, 0): u = -1 for 1, then +1 for 1 reaches the origin at T = 2
    prob = double_integrator((1.0, 0.0))
    traj = simulate(prob, lambda t, x: [-1.0 if t < 1.0 else 1.0], 2.0, 1e-3)
    assert np.allclose(traj.terminal_state, 0.0, atol=1e-3)


@pytest.mark.parametrize("x,T", [
    ((0.0, 0.0, 0.0), 0.0),
    ((0.0, 0.0, 1.0), math.sqrt(2 * math.pi)),
    ((0.0, 1.0, 0.0), 1.0),
    ((0.0, 3.0, 3.0), 3.4392),
])
def test_brockett_examples(x, T):
    assert brockett_time(x) == pytest.approx(T, abs=1e-4)


def test_brockett_theta_limits():
    assert brockett_theta((1.0, 0.0, 0.0)) == 0.0
    assert brockett_theta((0.0, 0.0, 2.0)) == math.pi
    th = brockett_theta((1.0, 1.0, 1.0))
    assert 0 < th < math.pi
    assert brockett_residual((1.0, 1.0, 1.0), th) <= 1e-12


def test_brockett_implicit_lhs_increasing():
    grid = np.linspace(1e-6, math.pi - 1e-6, 2000)
    vals = [brockett_implicit_lhs(t) for t in grid]
    assert np.all(np.diff(vals) > 0)


def test_brockett_small_angle_limit():
    # tiny |x3| relative to rho: T tends to rho
    assert brockett_time((3.0, 4.0, 1e-12)) == pytest.approx(5.0, rel=1e-9)


def test_brockett_continuous_near_line():
    rng = np.random.default_rng(5)
    for _ in range(500):
        x = np.array([0.0, 0.0, rng.uniform(-3, 3)]) + rng.normal(size=3) * 1e-4
        xp = x + rng.uniform(-1, 1, 3) * 1e-3 / math.sqrt(3)
        assert abs(brockett_time(x) - brockett_time(xp)) <= 0.02


def test_brockett_symmetries():
    rng = np.random.default_rng(6)
    for _ in range(100):
        x = rng.uniform(-3, 3, 3)
        T = brockett_time(x)
        a = rng.uniform(0, 2 * math.pi)
        rot = (math.cos(a) * x[0] - math.sin(a) * x[1], math.sin(a) * x[0] + math.cos(a) * x[1], x[2])
        assert brockett_time(rot) == pytest.approx(T, rel=1e-9)
        assert brockett_time((x[0], x[1], -x[2])) == pytest.approx(T, rel=1e-12)
        # dilation: (l x1, l x2, l^2 x3) scales time by l
        assert brockett_time((2 * x[0], 2 * x[1], 4 * x[2])) == pytest.approx(2 * T, rel=1e-9)


def test_zermelo_verdicts():
    assert zermelo_unreachable((1.0, 0.0)) == Verdict.UNREACHABLE
    assert zermelo_unreachable((2.0, -2.0)) == Verdict.UNREACHABLE
    assert zermelo_unreachable((-2.0, 0.0)) == Verdict.UNKNOWN
    assert zermelo_unreachable((0.44, 0.0)) == Verdict.UNKNOWN
    with pytest.raises(ValueError):
        zermelo_unreachable((3.0, 0.0))


def test_closed_form_trajectory_integral():
    prob = _di((0.0, -1.0))
    em = simulate_occupation(prob, lambda t, x: [1.0], 1.0, 2, 1e-3)
    lay = MomentLayout(prob.full_block.sub(time=False), 2)
    assert em.z[lay.position((1, 0, 0))] == pytest.approx(-1.0 / 3.0, abs=1e-8)
    assert em.z[0] == pytest.approx(1.0, abs=1e-12)
    assert em.y[0] == 1.0
    assert np.allclose(em.trajectory.terminal_state, (-0.5, 0.0), atol=1e-12)


def test_stationary_trajectory():
    prob = _di((0.5, 0.0))
    em = simulate_occupation(prob, lambda t, x: [0.0], 2.0, 4, 1e-2)
    lay = MomentLayout(prob.full_block.sub(time=False), 4)
    for k, (a1, a2, b) in enumerate(lay.monomials):
        exact = 2.0 * 0.5**a1 * (0.0**a2) * (0.0**b)
        assert em.z[k] == pytest.approx(exact, abs=1e-12)


def test_constant_test_function_residual_zero():
    prob = _di((1.0, 0.5))
    em = simulate_occupation(prob, lambda t, x: [math.sin(t)], 1.0, 4, 1e-2)
    res = adjoint_residuals(prob, em, 3)
    assert res[0] == 0.0


def test_adjoint_residual_fourth_order():
    prob = _di((0.5, 0.5))
    law = lambda t, x: [0.8 * math.cos(2 * t)]
    errs = []
    for step in (0.1, 0.05, 0.025):
        em = simulate_occupation(prob, law, 1.0, 5, step)
        errs.append(np.abs(adjoint_residuals(prob, em, 4)).max())
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 3.5, (errs, orders)


def test_time_dependent_moments_and_rescaling():
    prob = double_integrator((1.0, 0.0))
    traj = simulate(prob, lambda t, x: [0.0], 2.0, 1e-2)
    lay = MomentLayout(prob.full_block.sub(time=True), 2)
    z, y = occupation_moments(traj, lay, time_scale=2.0)
    # in s = t / 2 the measure has mass 1 and first time moment 1/2
    assert z[0] == pytest.approx(1.0) and z[lay.position((1, 0, 0, 0))] == pytest.approx(0.5)
    assert y is None


def test_trajectory_sample_validation():
    with pytest.raises(ValueError):
        TrajectorySample(np.array([0.0, 1.0]), np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        TrajectorySample(np.array([0.0, 0.0]), np.zeros((2, 2)), np.zeros((2, 1)))


def test_left_box_flag():
    prob = zermelo((1.5, 0.0))
    em = simulate_occupation(prob, lambda t, x: [0.0, 0.0], 2.0, 2, 1e-2)
    assert em.left_box


def test_brockett_circle_control_reaches_line_point():
    # a unit-speed circle of length sqrt(2 pi) changes x3 by twice its enclosed area
    T = math.sqrt(2 * math.pi)
    prob = brockett((0.0, 0.0, 0.0))
    w = 2 * math.pi / T
    traj = simulate(prob, lambda t, x: [math.cos(w * t), math.sin(w * t)], T, 1e-3)
    assert np.allclose(traj.terminal_state[:2], 0.0, atol=1e-9)
    assert abs(traj.terminal_state[2]) == pytest.approx(1.0, abs=1e-6)
