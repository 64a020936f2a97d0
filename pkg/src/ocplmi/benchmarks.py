"""Built-in minimum-time problems: double integrator, Brockett integrator, Zermelo."""

from __future__ import annotations

from typing import Sequence

from .polyalg import Polynomial, parse_poly
from .problem import (
    FreeHomogeneous,
    FreeHorizon,
    OcpProblem,
    SemialgebraicSet,
    Singleton,
    TimeMode,
    blocks_for,
)

ZERMELO_DRIFT = 0.1
ZERMELO_RADIUS = 0.44
ZERMELO_BOX = ((-6.0, 2.0), (-2.0, 2.0))


def _min_time(full, state, f_text, X, U, K, x0, time, name, ball=False):
    f = tuple(parse_poly(s, full) for s in f_text)
    return OcpProblem(
        f=f, h=Polynomial.constant(full, 1.0), H=Polynomial.zero(state), X=X, U=U, K=K,
        x0=tuple(x0), time=time, add_ball_constraint=ball, name=name,
    )


def double_integrator(x0: Sequence[float] = (1.0, 1.0), *,
                      box=((-3.0, 3.0), (-1.0, 2.0)), time: TimeMode | None = None,
                      quadratic_control: bool = False, ball: bool = False) -> OcpProblem:
    """``x1' = x2, x2' = u``, ``|u| <= 1``, ``x2 >= -1``, target the origin.

    The control interval is written as two linear inequalities unless
    ``quadratic_control`` asks for ``1 - u^2 >= 0``. By default the terminal
    time is free in ``[0, 5]`` and the relaxation keeps the time variable.
    """
    full, _, state, control = blocks_for(2, 1, control_names=["u"])
    X = SemialgebraicSet(state, (parse_poly("x2 + 1", state),), box)
    if quadratic_control:
        w = (parse_poly("1 - u^2", control),)
    else:
        w = (parse_poly("1 - u", control), parse_poly("1 + u", control))
    U = SemialgebraicSet(control, w, ((-1.0, 1.0),))
    return _min_time(full, state, ["x2", "u"], X, U, Singleton((0.0, 0.0)), x0,
                     time or FreeHorizon(5.0), "double integrator", ball)


def brockett(x0: Sequence[float] = (0.0, 0.0, 1.0), *, box_halfwidth: float = 4.0,
             time: TimeMode | None = None, ball: bool = False) -> OcpProblem:
    """Brockett's nonholonomic integrator with ``u1^2 + u2^2 <= 1``; X is all of R^3."""
    full, _, state, control = blocks_for(3, 2)
    X = SemialgebraicSet(state, (), ((-box_halfwidth, box_halfwidth),) * 3)
    U = SemialgebraicSet(control, (parse_poly("1 - u1^2 - u2^2", control),), ((-1.0, 1.0),) * 2)
    return _min_time(full, state, ["u1", "u2", "u1*x2 - u2*x1"], X, U,
                     Singleton((0.0, 0.0, 0.0)), x0, time or FreeHomogeneous(5.0), "brockett", ball)


def zermelo(x0: Sequence[float] = (-2.0, 0.0), *, time: TimeMode | None = None) -> OcpProblem:
    """Zermelo navigation in a current: ``x1' = 1 - a x2 + u1``, ``x2' = u2``.

    State box ``[-6,2] x [-2,2]`` as four linear faces, control disc and target
    disc of radius 0.44.
    """
    full, _, state, control = blocks_for(2, 2)
    rho2 = repr(ZERMELO_RADIUS**2)
    faces = ("x1 + 6", "2 - x1", "x2 + 2", "2 - x2")
    X = SemialgebraicSet(state, tuple(parse_poly(s, state) for s in faces), ZERMELO_BOX)
    U = SemialgebraicSet(control, (parse_poly(f"{rho2} - u1^2 - u2^2", control),),
                         ((-ZERMELO_RADIUS, ZERMELO_RADIUS),) * 2)
    K = SemialgebraicSet(state, (parse_poly(f"{rho2} - x1^2 - x2^2", state),),
                         ((-ZERMELO_RADIUS, ZERMELO_RADIUS),) * 2)
    return _min_time(full, state, [f"1 - {ZERMELO_DRIFT!r}*x2 + u1", "u2"], X, U, K, x0,
                     time or FreeHomogeneous(10.0), "zermelo")
