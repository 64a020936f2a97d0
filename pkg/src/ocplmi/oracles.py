"""Exact minimum times and simulated occupation measures.

These are independent checks for the relaxations: closed-form minimum-time
functions for the double and Brockett integrators, a one-sided analytic
unreachability test for the Zermelo problem, and an RK4 simulator that
accumulates the moments of the occupation and terminal measures of a
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .benchmarks import ZERMELO_BOX, ZERMELO_DRIFT, ZERMELO_RADIUS
from .momentstruct import MomentLayout
from .problem import OcpProblem
from .sdpbackend import Verdict


# ---------------------------------------------------------------- double integrator

def double_integrator_time(x: Sequence[float]) -> float:
    """Minimum time to the origin for ``x1' = x2, x2' = u``, ``|u| <= 1``, ``x2 >= -1``.

    The three regions are tested in order with closed inequalities; the first
    match wins (the function is continuous across region boundaries).
    """
    x1, x2 = float(x[0]), float(x[1])
    if x2 < -1.0:
        raise ValueError(f"state {x} violates x2 >= -1")
    half = x2 * x2 / 2.0
    sgn = math.copysign(1.0, x2) if x2 != 0 else 0.0
    if x1 >= 1.0 - half:
        return half + x1 + x2 + 1.0
    if -half * sgn <= x1 <= 1.0 - half:
        return 2.0 * math.sqrt(max(half + x1, 0.0)) + x2
    return 2.0 * math.sqrt(max(half - x1, 0.0)) - x2


# ---------------------------------------------------------------- Brockett integrator

_SINGULAR_LINE = 1e-12
_BISECTION_STEPS = 60  # pi / 2^60 is below one ulp of pi


def _theta_minus_sincos(theta):
    """``theta - sin(theta) cos(theta)`` without cancellation near 0 (elementwise)."""
    th = np.asarray(theta, dtype=float)
    t2 = th * th
    series = th * t2 * (2.0 / 3.0 - t2 * (2.0 / 15.0 - t2 * 4.0 / 315.0))
    return np.where(th < 1e-3, series, th - 0.5 * np.sin(2.0 * th))


def _implicit_lhs(theta):
    th = np.asarray(theta, dtype=float)
    s2 = np.sin(th) ** 2
    num = _theta_minus_sincos(th)
    return np.divide(num, s2, out=np.zeros_like(num), where=th != 0.0)


def brockett_implicit_lhs(theta: float) -> float:
    """``(theta - sin cos) / sin^2``: increasing from 0 on ``[0, pi)``."""
    return float(_implicit_lhs(theta))


def brockett_theta_many(points) -> np.ndarray:
    """Vectorized :func:`brockett_theta` over rows of ``points``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    rho2 = P[:, 0] ** 2 + P[:, 1] ** 2
    target = 2.0 * np.abs(P[:, 2])
    line = rho2 <= _SINGULAR_LINE
    c = np.divide(target, rho2, out=np.zeros_like(target), where=~line)
    lo = np.zeros(len(P))
    hi = np.full(len(P), math.pi)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        below = _implicit_lhs(mid) < c
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    th = 0.5 * (lo + hi)
    th = np.where(line, math.pi, th)
    return np.where(target == 0.0, 0.0, th)


def brockett_theta(x: Sequence[float]) -> float:
    """Root in ``[0, pi)`` of ``lhs(theta) * (x1^2 + x2^2) = 2 |x3|`` by bisection."""
    return float(brockett_theta_many([x])[0])


def brockett_time_many(points) -> np.ndarray:
    """Vectorized :func:`brockett_time` over rows of ``points``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    rho2 = P[:, 0] ** 2 + P[:, 1] ** 2
    x3 = np.abs(P[:, 2])
    th = brockett_theta_many(P)
    s = np.sin(th)
    denom = _theta_minus_sincos(th) + s * s
    small = th < 1e-3
    tiny = small & (th > 0)
    # theta / sqrt(theta^2 + O(theta^3)) -> 1 near the x3 = 0 plane; masked inputs keep
    # every branch finite
    t2 = np.where(tiny, th * th, 1.0)
    ratio_small = 1.0 / np.sqrt(1.0 + (np.where(tiny, denom, 1.0) - t2) / t2)
    ratio_big = np.where(small, 1.0, th) / np.sqrt(np.where(small, 1.0, denom))
    ratio = np.where(small, ratio_small, ratio_big)
    T = ratio * np.sqrt(rho2 + 2.0 * x3)
    T = np.where(x3 == 0.0, np.sqrt(rho2), T)
    return np.where(rho2 <= _SINGULAR_LINE, np.sqrt(2.0 * math.pi * x3), T)


def brockett_time(x: Sequence[float]) -> float:
    """Minimum time between the origin and ``x`` for Brockett's integrator."""
    return float(brockett_time_many([x])[0])


def brockett_residual_many(points, theta=None) -> np.ndarray:
    """Absolute residuals of the implicit angle equation, row by row."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    th = brockett_theta_many(P) if theta is None else np.asarray(theta, dtype=float)
    rho2 = P[:, 0] ** 2 + P[:, 1] ** 2
    return np.abs(_implicit_lhs(th) * rho2 - 2.0 * np.abs(P[:, 2]))


def brockett_residual(x: Sequence[float], theta: float | None = None) -> float:
    """Absolute residual of the implicit angle equation at ``theta``."""
    return float(brockett_residual_many([x], None if theta is None else [theta])[0])


# ---------------------------------------------------------------- Zermelo

def zermelo_unreachable(x: Sequence[float]) -> Verdict:
    """One-sided drift test: ``x1' >= 1 - 0.2 - 0.44 > 0`` on X, so ``x1 > rho`` never reaches the target."""
    x1, x2 = float(x[0]), float(x[1])
    (a, b), (c, d) = ZERMELO_BOX
    if not (a <= x1 <= b and c <= x2 <= d):
        raise ValueError(f"state {x} lies outside X")
    min_drift = 1.0 - ZERMELO_DRIFT * max(abs(c), abs(d)) - ZERMELO_RADIUS
    if min_drift > 0 and x1 > ZERMELO_RADIUS:
        return Verdict.UNREACHABLE
    return Verdict.UNKNOWN


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class TrajectorySample:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.controls)):
            raise ValueError("path lengths disagree with the time grid")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class EmpiricalMoments:
    y: np.ndarray
    z: np.ndarray
    step: float
    trajectory: TrajectorySample
    left_box: bool = False


def _vector_field(problem: OcpProblem):
    f = problem.f

    def rhs(t, x, u):
        pt = (t, *x, *u)
        return np.array([fk(pt) for fk in f])

    return rhs


def simulate(problem: OcpProblem, control_law: Callable[[float, np.ndarray], Sequence[float]],
             T: float, step: float, x0: Sequence[float] | None = None) -> TrajectorySample:
    """Fixed-step classical RK4 on an even number of steps covering ``[0, T]``."""
    if step <= 0 or T <= 0:
        raise ValueError("step and horizon must be positive")
    N = max(2, int(math.ceil(T / step)))
    N += N % 2
    h = T / N
    rhs = _vector_field(problem)
    law = lambda t, x: np.atleast_1d(np.asarray(control_law(t, x), dtype=float))
    x = np.asarray(problem.x0 if x0 is None else x0, dtype=float)
    times = np.linspace(0.0, T, N + 1)
    xs = np.empty((N + 1, len(x)))
    us = np.empty((N + 1, problem.m))
    xs[0] = x
    for k in range(N):
        t = times[k]
        k1 = rhs(t, x, law(t, x))
        k2 = rhs(t + h / 2, x + h / 2 * k1, law(t + h / 2, x + h / 2 * k1))
        k3 = rhs(t + h / 2, x + h / 2 * k2, law(t + h / 2, x + h / 2 * k2))
        k4 = rhs(t + h, x + h * k3, law(t + h, x + h * k3))
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    for k in range(N + 1):
        us[k] = law(times[k], xs[k])
    return TrajectorySample(times, xs, us)


def _simpson_weights(N: int, h: float) -> np.ndarray:
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def occupation_moments(traj: TrajectorySample, z_layout: MomentLayout,
                       y_layout: MomentLayout | None = None, time_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the occupation measure (composite Simpson) and of the terminal measure.

    ``time_scale`` divides both the integration variable and the measure, so
    moments computed on an original-time trajectory can be expressed in a
    rescaled time ``s = t / time_scale``.
    """
    t = traj.times / time_scale
    N = len(t) - 1
    w = _simpson_weights(N, t[1] - t[0])
    zb = z_layout.block
    cols = []
    if zb.has_time:
        cols.append(t[:, None])
    if zb.n:
        cols.append(traj.states)
    if zb.m:
        cols.append(traj.controls)
    pts = np.hstack(cols)
    exps = np.array(z_layout.monomials, dtype=int).reshape(z_layout.size, z_layout.num_vars)
    vals = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
    z = w @ vals
    y = None
    if y_layout is not None:
        end = [t[-1]] if y_layout.block.has_time else []
        end = np.array(end + list(traj.states[-1]))
        y = y_layout.dirac_moments(end)
    return z, y


def simulate_occupation(problem: OcpProblem, control_law, T: float, max_deg: int, step: float,
                        homogeneous: bool | None = None) -> EmpiricalMoments:
    """Simulate and return moments up to ``max_deg``.

    ``z`` is over ``(t, x, u)`` (or ``(x, u)`` when ``homogeneous``), ``y`` over
    ``x`` (or ``(t, x)`` for free horizons that keep time).
    """
    from .problem import FixedHorizon, FreeHomogeneous

    if homogeneous is None:
        homogeneous = isinstance(problem.time, FreeHomogeneous)
    traj = simulate(problem, control_law, T, step)
    full = problem.full_block
    z_layout = MomentLayout(full.sub(time=not homogeneous), max_deg)
    keep_t = not homogeneous and not isinstance(problem.time, FixedHorizon)
    y_layout = MomentLayout(full.sub(time=keep_t, control=False), max_deg)
    z, y = occupation_moments(traj, z_layout, y_layout)
    left = not all(problem.X.in_box(x, tol=1e-9) for x in traj.states)
    return EmpiricalMoments(y, z, T / (len(traj.times) - 1), traj, left)


def adjoint_residuals(problem: OcpProblem, moments: EmpiricalMoments, max_test_deg: int,
                      homogeneous: bool = True) -> np.ndarray:
    """Residuals of ``int g dnu - g(x0) - int A g dmu`` for all test monomials.

    Uses the actual terminal state, so only integration errors remain.
    """
    from .polyalg import Polynomial, apply_generator, embed, monomial_basis, restrict

    full = problem.full_block
    zb = full.sub(time=not homogeneous)
    tb = full.sub(time=not homogeneous, control=False)
    zl = MomentLayout(zb, len(moments.z) and _degree_of(zb, len(moments.z)))
    f = [restrict(fk, zb) if homogeneous else fk for fk in problem.f]
    traj = moments.trajectory
    xT = traj.terminal_state
    T = traj.times[-1]
    res = []
    for g in monomial_basis(tb.num_vars, max_test_deg):
        gp = Polynomial.monomial(tb, g)
        Ag = apply_generator(gp, f)
        if Ag.degree > zl.max_degree:
            continue
        lz = sum(c * moments.z[p] for p, c in zl.linear_form(Ag).items())
        end = ((T,) if tb.has_time else ()) + tuple(xT)
        start = ((0.0,) if tb.has_time else ()) + tuple(problem.x0)
        res.append(gp(end) - gp(start) - lz)
    return np.array(res)


def _degree_of(block, size: int) -> int:
    from .polyalg import basis_size

    d = 0
    while basis_size(block.num_vars, d) < size:
        d += 1
    return d
