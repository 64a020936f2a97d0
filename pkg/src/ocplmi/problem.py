"""Optimal control problem model and its normalization onto the unit box.

Scaled variables: ``t = T_ref * s`` with ``s in [0, 1]``, ``x = c + W x~`` and
``u = c_u + W_u u~`` with ``x~, u~ in [-1, 1]``. The running cost absorbs the
Jacobian of the time change, so the scaled objective equals the original cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .polyalg import Polynomial, VariableBlock, affine_substitute, embed


Box = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SemialgebraicSet:
    """``{v : g_j(v) >= 0 for all j}`` together with a finite bounding box.

    The box is used for scaling only; it is not a constraint unless the
    inequalities (or the optional ball constraint) say so.
    """

    block: VariableBlock
    inequalities: tuple[Polynomial, ...]
    bounding_box: Box

    def __post_init__(self):
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "bounding_box", tuple(tuple(map(float, b)) for b in self.bounding_box))
        if len(self.bounding_box) != self.dimension:
            raise ValueError(f"bounding box has {len(self.bounding_box)} intervals, set dimension is {self.dimension}")
        for lo, hi in self.bounding_box:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"invalid bounding interval [{lo}, {hi}]")
        for g in self.inequalities:
            if g.block != self.block:
                raise ValueError("inequality polynomial is not over the set's variables")

    @property
    def dimension(self) -> int:
        return self.block.num_vars

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        return all(g(point) >= -tol for g in self.inequalities)

    def in_box(self, point: Sequence[float], tol: float = 1e-12) -> bool:
        return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(point, self.bounding_box))

    @property
    def max_degree(self) -> int:
        return max((g.degree for g in self.inequalities), default=0)


@dataclass(frozen=True)
class Singleton:
    point: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))

    @property
    def dimension(self) -> int:
        return len(self.point)

    @property
    def max_degree(self) -> int:
        return 0


@dataclass(frozen=True)
class FixedHorizon:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    @property
    def reference_time(self) -> float:
        return self.T


@dataclass(frozen=True)
class FreeHorizon:
    T0: float

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValueError("time bound must be positive")

    @property
    def reference_time(self) -> float:
        return self.T0


@dataclass(frozen=True)
class FreeHomogeneous:
    T0: float = 1.0

    def __post_init__(self):
        if not self.T0 > 0:
            raise ValueError("time bound must be positive")

    @property
    def reference_time(self) -> float:
        return self.T0


TimeMode = Union[FixedHorizon, FreeHorizon, FreeHomogeneous]


def blocks_for(n: int, m: int, state_names=None, control_names=None, time_name: str = "t"):
    """Standard blocks: full (t,x,u), time-state (t,x), state (x), control (u)."""
    xs = tuple(state_names or [f"x{i + 1}" for i in range(n)])
    us = tuple(control_names or [f"u{j + 1}" for j in range(m)])
    full = VariableBlock(True, n, m, (time_name,) + xs + us)
    return full, full.sub(control=False), full.sub(time=False, control=False), full.sub(time=False, state=False)


@dataclass(frozen=True)
class OcpProblem:
    """Polynomial optimal control problem.

    ``f`` and ``h`` live on the full ``(t, x, u)`` block, ``H`` on the state block.
    """

    f: tuple[Polynomial, ...]
    h: Polynomial
    H: Polynomial
    X: SemialgebraicSet
    U: SemialgebraicSet
    K: Union[SemialgebraicSet, Singleton]
    x0: tuple[float, ...]
    time: TimeMode
    add_ball_constraint: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        full = self.full_block
        if not full.has_time:
            raise ValueError("dynamics must be expressed on a (t, x, u) block")
        if len(self.f) != full.n:
            raise ValueError(f"{len(self.f)} dynamics components for state dimension {full.n}")
        if any(fk.block != full for fk in self.f):
            raise ValueError("dynamics components on different blocks")
        object.__setattr__(self, "h", embed(self.h, full))
        state = self.state_block
        if self.H.block != state:
            object.__setattr__(self, "H", _restrict_to(self.H, state, "terminal cost H"))
        if self.X.block != state:
            raise ValueError("X must be defined over the state variables")
        if self.U.block != self.control_block:
            raise ValueError("U must be defined over the control variables")
        if isinstance(self.K, SemialgebraicSet) and self.K.block != state:
            raise ValueError("K must be defined over the state variables")
        if len(self.x0) != self.n:
            raise ValueError("initial state has wrong dimension")
        if not self.X.in_box(self.x0):
            raise ValueError(f"initial state {self.x0} lies outside the X bounding box")
        if isinstance(self.K, Singleton):
            if self.K.dimension != self.n:
                raise ValueError("target point has wrong dimension")
            if not self.X.in_box(self.K.point):
                raise ValueError("target point lies outside the X bounding box")
        if isinstance(self.time, FreeHomogeneous) and not self.is_time_homogeneous:
            raise ValueError("time-homogeneous mode requires f and h independent of t")

    @property
    def full_block(self) -> VariableBlock:
        return self.f[0].block

    @property
    def n(self) -> int:
        return self.full_block.n

    @property
    def m(self) -> int:
        return self.full_block.m

    @property
    def state_block(self) -> VariableBlock:
        return self.full_block.sub(time=False, control=False)

    @property
    def control_block(self) -> VariableBlock:
        return self.full_block.sub(time=False, state=False)

    @property
    def time_state_block(self) -> VariableBlock:
        return self.full_block.sub(control=False)

    @property
    def is_time_homogeneous(self) -> bool:
        return not any(p.uses_variable(0) for p in self.f + (self.h,))

    @property
    def is_minimum_time(self) -> bool:
        one = Polynomial.constant(self.full_block, 1.0)
        return self.h == one and self.H.is_zero()

    def with_initial_state(self, x0: Sequence[float]) -> "OcpProblem":
        return replace(self, x0=tuple(x0))


def _restrict_to(p: Polynomial, block: VariableBlock, what: str) -> Polynomial:
    from .polyalg import restrict

    try:
        return restrict(p, block)
    except ValueError as exc:
        raise ValueError(f"{what} must depend on the state only: {exc}") from None


@dataclass(frozen=True)
class ScalingRecord:
    """Affine maps between original and normalized coordinates."""

    state_center: tuple[float, ...]
    state_halfwidth: tuple[float, ...]
    control_center: tuple[float, ...]
    control_halfwidth: tuple[float, ...]
    time_scale: float
    objective_scale: float

    @classmethod
    def identity(cls, n: int, m: int) -> "ScalingRecord":
        return cls((0.0,) * n, (1.0,) * n, (0.0,) * m, (1.0,) * m, 1.0, 1.0)

    def state_to_scaled(self, x) -> np.ndarray:
        return (np.asarray(x, float) - self.state_center) / np.asarray(self.state_halfwidth)

    def state_from_scaled(self, xs) -> np.ndarray:
        return np.asarray(self.state_center) + np.asarray(self.state_halfwidth) * np.asarray(xs, float)

    def control_to_scaled(self, u) -> np.ndarray:
        return (np.asarray(u, float) - self.control_center) / np.asarray(self.control_halfwidth)

    def control_from_scaled(self, us) -> np.ndarray:
        return np.asarray(self.control_center) + np.asarray(self.control_halfwidth) * np.asarray(us, float)

    def time_to_scaled(self, t: float) -> float:
        return t / self.time_scale

    def time_from_scaled(self, s: float) -> float:
        return s * self.time_scale

    def full_maps(self, has_time: bool = True, state: bool = True, control: bool = True):
        """Affine maps ``scaled -> original`` for a block with the given groups."""
        maps = [(self.time_scale, 0.0)] if has_time else []
        if state:
            maps += list(zip(self.state_halfwidth, self.state_center))
        if control:
            maps += list(zip(self.control_halfwidth, self.control_center))
        return maps

    def inverse_maps(self, has_time: bool = True, state: bool = True, control: bool = True):
        return [(1.0 / a, -b / a) for a, b in self.full_maps(has_time, state, control)]


def _box_maps(box: Box) -> tuple[tuple[float, ...], tuple[float, ...]]:
    centers, halves = [], []
    for lo, hi in box:
        if hi - lo <= 0:
            raise ValueError(f"zero-width bounding interval [{lo}, {hi}]")
        centers.append(0.5 * (lo + hi))
        halves.append(0.5 * (hi - lo))
    return tuple(centers), tuple(halves)


def ball_constraint(block: VariableBlock) -> Polynomial:
    """``dim - sum v_i^2``, redundant on the unit box, compact by itself."""
    p = Polynomial.constant(block, float(block.num_vars))
    for i in range(block.num_vars):
        p = p - Polynomial.variable(block, i) ** 2
    return p


def canonicalize(problem: OcpProblem) -> tuple[OcpProblem, ScalingRecord]:
    """Equivalent problem on ``s in [0,1]``, ``x~ in [-1,1]^n``, ``u~ in [-1,1]^m``."""
    cx, wx = _box_maps(problem.X.bounding_box)
    cu, wu = _box_maps(problem.U.bounding_box)
    T = problem.time.reference_time
    rec = ScalingRecord(cx, wx, cu, wu, T, T)
    full = problem.full_block
    maps_full = rec.full_maps()
    f = tuple(
        affine_substitute(fk, maps_full) * (T / wx[k]) for k, fk in enumerate(problem.f)
    )
    h = affine_substitute(problem.h, maps_full) * T
    state_maps = rec.full_maps(has_time=False, control=False)
    control_maps = rec.full_maps(has_time=False, state=False)
    H = affine_substitute(problem.H, state_maps)

    def scaled_set(S: SemialgebraicSet, maps, ball: bool) -> SemialgebraicSet:
        ineq = [affine_substitute(g, maps) for g in S.inequalities]
        if ball:
            ineq.append(ball_constraint(S.block))
        box = tuple((-1.0, 1.0) for _ in range(S.dimension))
        return SemialgebraicSet(S.block, tuple(ineq), box)

    X = scaled_set(problem.X, state_maps, problem.add_ball_constraint)
    U = scaled_set(problem.U, control_maps, problem.add_ball_constraint)
    if isinstance(problem.K, Singleton):
        K = Singleton(tuple(rec.state_to_scaled(problem.K.point)))
    else:
        # K is scaled with the X maps (K assumed inside X's box)
        ineq = [affine_substitute(g, state_maps) for g in problem.K.inequalities]
        kbox = tuple(
            tuple(sorted(((lo - c) / w, (hi - c) / w)))
            for (lo, hi), c, w in zip(problem.K.bounding_box, cx, wx)
        )
        if problem.add_ball_constraint:
            ineq.append(ball_constraint(problem.K.block))
        K = SemialgebraicSet(problem.K.block, tuple(ineq), kbox)
    x0 = tuple(rec.state_to_scaled(problem.x0))
    time = type(problem.time)(1.0)
    scaled = OcpProblem(f, h, H, X, U, K, x0, time, problem.add_ball_constraint, problem.name)
    return scaled, rec


@dataclass(frozen=True)
class PutinarReport:
    certified: bool
    reason: str
    recommend_ball: bool


def _is_negative_definite_leading_form(g: Polynomial) -> bool:
    d = g.degree
    if d != 2:
        return False
    nv = g.block.num_vars
    Q = np.zeros((nv, nv))
    for k, c in g.items():
        if sum(k) != 2:
            continue
        idx = [i for i, e in enumerate(k) for _ in range(e)]
        i, j = idx
        if i == j:
            Q[i, i] += c
        else:
            Q[i, j] += c / 2
            Q[j, i] += c / 2
    return bool(np.linalg.eigvalsh(Q).max() < 0)


def putinar_precheck(S: SemialgebraicSet) -> PutinarReport:
    """Sufficient tests for the Archimedean (compactness) condition."""
    for g in S.inequalities:
        if _is_negative_definite_leading_form(g):
            return PutinarReport(True, f"inequality {g} has a compact superlevel set", False)
    ineq = list(S.inequalities)
    if ineq and all(g.degree <= 1 for g in ineq):
        A = np.zeros((len(ineq), S.dimension))
        for r, g in enumerate(ineq):
            for k, c in g.items():
                if sum(k) == 1:
                    A[r, k.index(1)] = c
        if _polytope_bounded(A):
            return PutinarReport(True, "all inequalities are linear and describe a bounded polytope", False)
    if S.dimension == 0:
        return PutinarReport(True, "zero-dimensional set", False)
    return PutinarReport(
        False, "no single inequality certifies compactness; enable the ball constraint", True
    )


def _polytope_bounded(A: np.ndarray) -> bool:
    """``{v : A v + b >= 0}`` is bounded (when nonempty) iff ``A d >= 0`` forces ``d = 0``."""
    from scipy.optimize import linprog

    n = A.shape[1]
    for i in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sign
            res = linprog(c, A_ub=-A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * n, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return False
    return True


@dataclass(frozen=True)
class DegreeProfile:
    deg_f: int
    deg_h: int
    deg_H: int
    set_degree: int
    r0: int
    r_min: int


def degree_profile(problem: OcpProblem) -> DegreeProfile:
    """Degrees entering the choice of relaxation order.

    ``r0`` is the smallest order with ``2 r0 >= max(deg f, deg h, deg H, 2 d)``.
    ``r_min`` is the smallest order at which every block of the relaxation is
    well defined (localizing orders ``r - ceil(deg/2) >= 0``); it may be
    smaller than ``r0`` and is what the relaxation builders accept.
    """
    deg_f = max(fk.degree for fk in problem.f)
    deg_h = problem.h.degree
    deg_H = problem.H.degree
    sets = [problem.X, problem.U, problem.K]
    d = max(S.max_degree for S in sets)
    if problem.add_ball_constraint:
        d = max(d, 2)
    top = max(deg_f, deg_h, deg_H, 2 * d)
    r0 = max(1, math.ceil(top / 2))
    r_min = max(1, math.ceil(max(deg_f, deg_h, deg_H, d) / 2))
    return DegreeProfile(deg_f, deg_h, deg_H, d, r0, r_min)
