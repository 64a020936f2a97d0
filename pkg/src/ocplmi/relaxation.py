"""Assembly of the moment relaxation of order ``r`` for a normalized problem.

Decision vector layout: ``[y-variables, z]`` where ``z`` are the moments of the
occupation measure up to degree ``2r`` and the y-variables parametrize the
moments of the terminal measure. When the target is a single point the
terminal moments are known (or, for free horizons, only their time part is
unknown) and the y-variables shrink accordingly.

Equalities, one per test monomial ``g = t^p x^a`` with
``p + |a| - 1 + deg f <= 2r``::

    L_y(g_term) - L_z(dg/dt + <grad_x g, f>) = g(0, x0)

where ``g_term = g(1, .)`` for a fixed horizon and ``g`` itself otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .momentstruct import (
    MomentLayout,
    SymbolicMatrix,
    localizing_matrix,
    localizing_order,
    marginal_projection,
    moment_matrix,
)
from .polyalg import MultiIndex, Polynomial, VariableBlock, apply_generator, embed, monomial_basis
from .problem import (
    FixedHorizon,
    FreeHomogeneous,
    FreeHorizon,
    OcpProblem,
    ScalingRecord,
    SemialgebraicSet,
    Singleton,
    degree_profile,
)

log = logging.getLogger(__name__)

LOCALIZE_MODES = ("marginal", "full")


class RelaxationError(ValueError):
    pass


@dataclass(frozen=True)
class PsdBlock:
    matrix: SymbolicMatrix
    label: str

    @property
    def side(self) -> int:
        return self.matrix.side


@dataclass(frozen=True)
class RelaxationSdp:
    """``min c'w + c0  s.t.  E w = rhs(x0),  M_k(w) PSD``."""

    order: int
    mode: str
    num_y: int
    z_layout: MomentLayout
    y_layout: MomentLayout | None
    y_forms: tuple
    blocks: tuple[PsdBlock, ...]
    eq_matrix: sp.csr_matrix
    tests: tuple[MultiIndex, ...]
    test_block: VariableBlock
    eq_const: np.ndarray
    dropped_tests: tuple[tuple[MultiIndex, float], ...]
    objective: np.ndarray
    objective_const: float
    x0: tuple[float, ...]
    anchor: tuple[tuple[float, ...], float] | None
    problem: OcpProblem
    scaling: ScalingRecord
    localize: str = "marginal"

    @property
    def num_z(self) -> int:
        return self.z_layout.size

    @property
    def size(self) -> int:
        return self.num_y + self.num_z

    @property
    def z_offset(self) -> int:
        return self.num_y

    def test_value(self, g: MultiIndex, x0: Sequence[float]) -> float:
        """``g(0, x0)`` for a test monomial."""
        if self.test_block.has_time:
            if g[0] > 0:
                return 0.0
            g = g[1:]
        return float(np.prod([v**e for v, e in zip(x0, g)]))

    def rhs_for(self, x0: Sequence[float]) -> np.ndarray:
        return np.array([self.test_value(g, x0) for g in self.tests]) - self.eq_const

    @property
    def rhs(self) -> np.ndarray:
        return self.rhs_for(self.x0)

    def inconsistent_rows(self, tol: float = 1e-12) -> list[MultiIndex]:
        """Test monomials whose equality has no unknowns and a nonzero residual."""
        return [g for g, c in self.dropped_tests if abs(self.test_value(g, self.x0) - c) > tol]

    def with_initial_state(self, x0_scaled: Sequence[float]) -> "RelaxationSdp":
        """Same structure, new (scaled) initial state: only right-hand sides change."""
        prob = replace(self.problem, x0=tuple(x0_scaled))
        return replace(self, x0=tuple(float(v) for v in x0_scaled), problem=prob)

    def split(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        return w[: self.num_y], w[self.num_y:]

    def y_moments(self, w: np.ndarray) -> np.ndarray | None:
        """Full terminal-measure moment vector reconstructed from ``w``."""
        if self.y_layout is None:
            return None
        out = np.empty(self.y_layout.size)
        for k, (lin, c0) in enumerate(self.y_forms):
            out[k] = c0 + sum(a * w[q] for q, a in lin.items())
        return out

    def objective_value(self, w: np.ndarray) -> float:
        return float(self.objective @ w + self.objective_const)


def _test_monomials(block: VariableBlock, r: int, deg_f: int) -> list[MultiIndex]:
    top = min(2 * r + 1 - deg_f, 2 * r)
    return list(monomial_basis(block.num_vars, top))


def _check_order(problem: OcpProblem, r: int):
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise RelaxationError(f"relaxation order must be a positive integer, got {r}")
    prof = degree_profile(problem)
    if r < prof.r_min:
        raise RelaxationError(f"order {r} is below the minimal admissible order {prof.r_min}")
    return prof


def _is_canonical(problem: OcpProblem) -> bool:
    boxes = [problem.X.bounding_box, problem.U.bounding_box]
    ok = all(all(lo == -1.0 and hi == 1.0 for lo, hi in b) for b in boxes)
    return ok and problem.time.reference_time == 1.0


def build_relaxation(problem: OcpProblem, r: int, scaling: ScalingRecord | None = None,
                     localize: str = "marginal") -> RelaxationSdp:
    """Dispatch on the time mode of a normalized problem."""
    if isinstance(problem.time, FixedHorizon):
        return build_fixed_time(problem, r, scaling, localize)
    return build_free_time(problem, r, scaling, localize)


def build_fixed_time(problem: OcpProblem, r: int, scaling: ScalingRecord | None = None,
                     localize: str = "marginal") -> RelaxationSdp:
    if not isinstance(problem.time, FixedHorizon):
        raise RelaxationError("fixed-time relaxation needs a fixed horizon")
    return _assemble(problem, r, "fixed", scaling, localize)


def build_free_time(problem: OcpProblem, r: int, scaling: ScalingRecord | None = None,
                    localize: str = "marginal") -> RelaxationSdp:
    if isinstance(problem.time, FreeHomogeneous):
        if not problem.is_time_homogeneous:
            raise RelaxationError("time-homogeneous relaxation requested but f or h depends on t")
        return _assemble(problem, r, "homogeneous", scaling, localize)
    if isinstance(problem.time, FreeHorizon):
        return _assemble(problem, r, "free", scaling, localize)
    raise RelaxationError("free-time relaxation needs a free horizon")


def _assemble(problem: OcpProblem, r: int, mode: str, scaling, localize: str) -> RelaxationSdp:
    if localize not in LOCALIZE_MODES:
        raise RelaxationError(f"unknown localization mode {localize!r}")
    if not _is_canonical(problem):
        raise RelaxationError("problem must be canonicalized first (unit boxes, unit horizon)")
    prof = _check_order(problem, r)
    scaling = scaling or ScalingRecord.identity(problem.n, problem.m)
    full = problem.full_block
    homogeneous = mode == "homogeneous"
    z_block = full.sub(time=not homogeneous)
    state = problem.state_block
    y_block = state if mode in ("fixed", "homogeneous") else problem.time_state_block
    test_block = state if homogeneous else problem.time_state_block
    z_layout = MomentLayout(z_block, 2 * r)
    y_layout = MomentLayout(y_block, 2 * r)
    singleton = isinstance(problem.K, Singleton)

    blocks: list[PsdBlock] = []

    # terminal measure parametrization
    y_forms: list[tuple[dict[int, float], float]] = []
    anchor = None
    if not singleton:
        num_y = y_layout.size
        y_forms = [({k: 1.0}, 0.0) for k in range(num_y)]
        blocks.append(PsdBlock(moment_matrix(y_layout, r, "M_r(y)"), "M_r(y)"))
        for j, theta in enumerate(problem.K.inequalities):
            d = localizing_order(r, theta)
            blocks.append(_localize(y_layout, theta, d, state, localize, 0, f"K[{j}]"))
        if mode == "free":
            blocks.append(_time_localizer(y_layout, r, localize, 0, "t(1-t) on y"))
    else:
        xk = np.asarray(problem.K.point)
        if mode == "free":
            # y = (time marginal) x delta_{xK}; unknowns are the time moments
            t_layout = MomentLayout(VariableBlock(True, 0, 0, ("t",)), 2 * r)
            num_y = t_layout.size
            for p, *alpha in y_layout.monomials:
                y_forms.append(({p: float(np.prod(xk ** np.array(alpha)))}, 0.0))
            blocks.append(PsdBlock(moment_matrix(t_layout, r, "M_r(y(t))"), "M_r(y(t))"))
            blocks.append(PsdBlock(
                localizing_matrix(t_layout, _t_one_minus_t(t_layout.block), r - 1, "t(1-t) on y"),
                "t(1-t) on y"))
        else:
            num_y = 0
            for alpha in y_layout.monomials:
                y_forms.append(({}, float(np.prod(xk ** np.array(alpha)))))
            anchor_pt = (1.0,) + tuple(xk) if mode == "fixed" else tuple(xk)
            anchor = (anchor_pt, float(problem.H(tuple(xk))))

    # occupation measure blocks
    zoff = num_y
    blocks.append(PsdBlock(moment_matrix(z_layout, r, "M_r(z)").shifted(zoff), "M_r(z)"))
    for j, v in enumerate(problem.X.inequalities):
        blocks.append(_localize(z_layout, v, localizing_order(r, v), state, localize, zoff, f"X[{j}]"))
    for k, w in enumerate(problem.U.inequalities):
        blocks.append(_localize(z_layout, w, localizing_order(r, w), problem.control_block,
                                localize, zoff, f"U[{k}]"))
    if not homogeneous:
        blocks.append(_time_localizer(z_layout, r, localize, zoff, "t(1-t) on z"))

    # equalities
    tests = _test_monomials(test_block, r, prof.deg_f)
    f_z = [_on(fk, z_block) for fk in problem.f]
    rows, cols, vals = [], [], []
    kept: list[MultiIndex] = []
    eq_const: list[float] = []
    dropped: list[tuple[MultiIndex, float]] = []
    for g in tests:
        gpoly = Polynomial.monomial(test_block, g)
        if homogeneous:
            Ag = apply_generator(gpoly, f_z)
            gterm = gpoly
        else:
            Ag = apply_generator(gpoly, problem.f)
            gterm = _terminal(gpoly, y_block) if mode == "fixed" else gpoly
        row: dict[int, float] = {}
        const = 0.0
        for e, c in gterm.items():
            lin, c0 = y_forms[y_layout.position(e)]
            const += c * c0
            for q, a in lin.items():
                row[q] = row.get(q, 0.0) + c * a
        for e, c in z_layout.linear_form(Ag).items():
            row[zoff + e] = row.get(zoff + e, 0.0) - c
        row = {q: a for q, a in row.items() if a != 0.0}
        if not row:
            dropped.append((g, const))
            continue
        i = len(kept)
        kept.append(g)
        eq_const.append(const)
        for q, a in row.items():
            rows.append(i)
            cols.append(q)
            vals.append(a)
    E = sp.csr_matrix((vals, (rows, cols)), shape=(len(kept), num_y + z_layout.size))

    # objective L_z(h) + L_y(H)
    c = np.zeros(num_y + z_layout.size)
    for e, a in z_layout.linear_form(_on(problem.h, z_block)).items():
        c[zoff + e] += a
    c0 = 0.0
    for e, a in y_layout.linear_form(embed(problem.H, y_block)).items():
        lin, k0 = y_forms[e]
        c0 += a * k0
        for q, b in lin.items():
            c[q] += a * b

    return RelaxationSdp(
        order=r, mode=mode, num_y=num_y, z_layout=z_layout, y_layout=y_layout,
        y_forms=tuple(y_forms), blocks=tuple(blocks), eq_matrix=E, tests=tuple(kept),
        test_block=test_block, eq_const=np.array(eq_const), dropped_tests=tuple(dropped),
        objective=c, objective_const=c0, x0=problem.x0, anchor=anchor, problem=problem,
        scaling=scaling, localize=localize,
    )


def _on(p: Polynomial, block: VariableBlock) -> Polynomial:
    from .polyalg import restrict

    return restrict(p, block) if p.block.num_vars > block.num_vars else embed(p, block)


def _terminal(g: Polynomial, state: VariableBlock) -> Polynomial:
    """``g(1, x)`` as a polynomial in ``x``."""
    out: dict[MultiIndex, float] = {}
    for k, c in g.items():
        out[k[1:]] = out.get(k[1:], 0.0) + c
    return Polynomial(state, out)


def _t_one_minus_t(block: VariableBlock) -> Polynomial:
    t = Polynomial.variable(block, 0)
    return t - t * t


def _localize(layout: MomentLayout, theta: Polynomial, d: int, sub: VariableBlock,
              localize: str, offset: int, label: str) -> PsdBlock:
    if localize == "full" or sub == layout.block:
        m = localizing_matrix(layout, theta, d, label).shifted(offset)
    else:
        marg = MomentLayout(sub, layout.max_degree)
        m = localizing_matrix(marg, theta, d, label).remap(marginal_projection(layout, sub), offset)
    return PsdBlock(m, label)


def _time_localizer(layout: MomentLayout, r: int, localize: str, offset: int, label: str) -> PsdBlock:
    tblock = layout.block.sub(state=False, control=False)
    return _localize(layout, _t_one_minus_t(tblock), r - 1, tblock, localize, offset, label)


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeReport:
    order: int
    mode: str
    decision_length: int
    y_length: int
    z_length: int
    equalities: int
    blocks: tuple[tuple[str, int], ...]

    def lines(self) -> list[str]:
        out = [
            f"order r = {self.order} ({self.mode})",
            f"decision length {self.decision_length} (y: {self.y_length}, z: {self.z_length})",
            f"equalities {self.equalities}",
        ]
        out += [f"  PSD block {label}: {side}x{side}" for label, side in self.blocks]
        return out


def describe(sdp: RelaxationSdp) -> SizeReport:
    return SizeReport(
        sdp.order, sdp.mode, sdp.size, sdp.num_y, sdp.num_z, sdp.eq_matrix.shape[0],
        tuple((b.label, b.side) for b in sdp.blocks),
    )


def export_sdpa(sdp: RelaxationSdp, path) -> None:
    """Write the relaxation in SDPA sparse format (``.dat-s``).

    SDPA primal: ``min c'w  s.t.  sum_i w_i F_i - F_0 PSD``. Each PSD block
    keeps its size; the equalities become a diagonal block holding
    ``E w - b >= 0`` and ``b - E w >= 0``. The objective constant is written in
    a comment line.
    """
    rhs = sdp.rhs
    E = sdp.eq_matrix.tocoo()
    m = sdp.size
    nrows = E.shape[0]
    lines = [f'"objective constant {sdp.objective_const!r}; order {sdp.order}; {sdp.mode}',
             str(m)]
    nblocks = len(sdp.blocks) + (1 if nrows else 0)
    lines.append(str(nblocks))
    sizes = [str(b.side) for b in sdp.blocks] + ([str(-2 * nrows)] if nrows else [])
    lines.append(" ".join(sizes))
    lines.append(" ".join(repr(float(v)) for v in sdp.objective))
    entries: dict[tuple[int, int, int, int], float] = {}

    def put(mat, blk, i, j, v):
        if i > j:
            i, j = j, i
        key = (mat, blk, i, j)
        entries[key] = entries.get(key, 0.0) + v

    for bi, blk in enumerate(sdp.blocks, start=1):
        M = blk.matrix
        for i, j, p, c in zip(M.rows, M.cols, M.positions, M.coeffs):
            if i <= j:
                put(int(p) + 1, bi, int(i) + 1, int(j) + 1, float(c))
    if nrows:
        lb = len(sdp.blocks) + 1
        for i, j, v in zip(E.row, E.col, E.data):
            put(int(j) + 1, lb, int(i) + 1, int(i) + 1, float(v))
            put(int(j) + 1, lb, nrows + int(i) + 1, nrows + int(i) + 1, -float(v))
        for i, b in enumerate(rhs):
            if b != 0:
                put(0, lb, i + 1, i + 1, float(b))
                put(0, lb, nrows + i + 1, nrows + i + 1, -float(b))
    for (mat, blk, i, j), v in sorted(entries.items()):
        if v != 0.0:
            lines.append(f"{mat} {blk} {i} {j} {v!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sdpa(path):
    """Parse an SDPA sparse file into ``(c, block_sizes, entries)``.

    ``entries`` maps ``(matrix, block)`` to a list of ``(i, j, value)`` with
    0-based indices (upper triangle as stored).
    """
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    body = [ln for ln in raw if not ln.startswith(('"', "*"))]
    m = int(body[0].split()[0])
    sizes = [int(s) for s in body[2].replace(",", " ").replace("{", " ").replace("}", " ").split()]
    c = np.array([float(v) for v in body[3].replace(",", " ").split()])
    assert len(c) == m
    entries: dict[tuple[int, int], list] = {}
    for ln in body[4:]:
        mat, blk, i, j, v = ln.split()
        entries.setdefault((int(mat), int(blk)), []).append((int(i) - 1, int(j) - 1, float(v)))
    return c, sizes, entries
