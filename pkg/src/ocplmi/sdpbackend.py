"""Conic solve of a relaxation, outcome classification and hierarchies.

The native backend is Clarabel (primal-dual interior point, PSD triangle
cones). Every claim the solver makes is re-checked here: optimal points
against equality residuals and block eigenvalues, infeasibility against the
Farkas conditions of the returned dual ray.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

from .problem import OcpProblem, canonicalize, degree_profile
from .relaxation import RelaxationError, RelaxationSdp, build_relaxation

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class Status(str, enum.Enum):
    LOWER_BOUND = "LowerBound"
    INFEASIBLE = "InfeasibleCertificate"
    UNBOUNDED = "Unbounded"
    INACCURATE = "Inaccurate"


class Verdict(str, enum.Enum):
    UNREACHABLE = "ProvablyUnreachable"
    BOUND_ONLY = "BoundOnly"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class SolverSettings:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    #: KKT profiles ``(static regularization, refinement tolerance, refinement
    #: steps)`` tried in order until a result passes the re-checks. The first
    #: is Clarabel's default; the second reaches full accuracy on the order-5
    #: double integrator where the default stalls, but stalls itself on order 3.
    kkt_profiles: tuple[tuple[float, float, int], ...] = ((1e-8, 1e-13, 10), (1e-7, 1e-14, 20))
    certificate_threshold: float = 1e-6
    #: acceptance tolerance for re-checked primal points
    check_eq_tol: float = 1e-6
    check_psd_tol: float = 1e-6
    #: variables of the relaxation: "marginal" or "full" localizing matrices
    localize: str = "marginal"
    verbose: bool = False


@dataclass(frozen=True)
class SolveOutcome:
    status: Status
    bound: float | None = None
    moments: np.ndarray | None = None
    equality_duals: np.ndarray | None = None
    dual_value: float | None = None
    order: int | None = None
    iterations: int = 0
    solve_time: float = 0.0
    eq_residual: float = math.nan
    min_eig: float = math.nan
    certificate_measure: float = math.nan
    solver_status: str = ""
    message: str = ""

    @property
    def is_bound(self) -> bool:
        return self.status == Status.LOWER_BOUND


def _svec_rows(block) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows of ``-svec(M(w))`` (column-major upper triangle, off-diagonals scaled)."""
    M = block.matrix
    upper = M.rows <= M.cols
    i = M.rows[upper]
    j = M.cols[upper]
    row = j * (j + 1) // 2 + i
    scale = np.where(i == j, 1.0, SQRT2)
    return row, M.positions[upper], -scale * M.coeffs[upper]


def conic_data(sdp: RelaxationSdp, rhs: np.ndarray | None = None):
    """``(q, A, b, cones, offsets)`` for ``min q'w s.t. A w + s = b, s in K``."""
    rhs = sdp.rhs if rhs is None else rhs
    n = sdp.size
    E = sdp.eq_matrix.tocoo()
    rows = [E.row]
    cols = [E.col]
    vals = [E.data]
    cones = []
    if E.shape[0]:
        cones.append(clarabel.ZeroConeT(E.shape[0]))
    offset = E.shape[0]
    offsets = []
    for blk in sdp.blocks:
        r, c, v = _svec_rows(blk)
        rows.append(r + offset)
        cols.append(c)
        vals.append(v)
        offsets.append(offset)
        cones.append(clarabel.PSDTriangleConeT(blk.side))
        offset += blk.side * (blk.side + 1) // 2
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, n)
    )
    b = np.zeros(offset)
    b[: E.shape[0]] = rhs
    return sdp.objective.copy(), A, b, cones, offsets


def _smat(v: np.ndarray, side: int) -> np.ndarray:
    S = np.zeros((side, side))
    k = 0
    for j in range(side):
        for i in range(j + 1):
            if i == j:
                S[i, i] = v[k]
            else:
                S[i, j] = S[j, i] = v[k] / SQRT2
            k += 1
    return S


def _min_eig(sdp: RelaxationSdp, w: np.ndarray) -> float:
    eigs = [np.linalg.eigvalsh(b.matrix.evaluate(w)).min() for b in sdp.blocks]
    return float(min(eigs)) if eigs else math.inf


def check_point(sdp: RelaxationSdp, w: np.ndarray, rhs: np.ndarray | None = None) -> tuple[float, float]:
    """``(max equality residual, min eigenvalue over PSD blocks)`` at ``w``."""
    rhs = sdp.rhs if rhs is None else rhs
    res = sdp.eq_matrix @ w - rhs
    return float(np.abs(res).max(initial=0.0)), _min_eig(sdp, w)


def solve(sdp: RelaxationSdp, settings: SolverSettings = SolverSettings()) -> SolveOutcome:
    """Solve one relaxation and classify the result."""
    bad = sdp.inconsistent_rows()
    if bad:
        return SolveOutcome(
            Status.INFEASIBLE, order=sdp.order, certificate_measure=math.inf,
            message=f"equality for test monomial {bad[0]} has no unknowns and cannot hold",
        )
    rhs = sdp.rhs
    data = conic_data(sdp, rhs)
    outcome = None
    iterations, elapsed = 0, 0.0
    for profile in settings.kkt_profiles:
        outcome = _solve_once(sdp, rhs, data, settings, profile)
        iterations += outcome.iterations
        elapsed += outcome.solve_time
        if outcome.status != Status.INACCURATE:
            break
        log.info("order %d: %s with KKT profile %s, retrying", sdp.order, outcome.message, profile)
    return replace(outcome, iterations=iterations, solve_time=elapsed)


def _solve_once(sdp: RelaxationSdp, rhs, data, settings: SolverSettings,
                profile: tuple[float, float, int]) -> SolveOutcome:
    q, A, b, cones, offsets = data
    st = clarabel.DefaultSettings()
    st.verbose = settings.verbose
    st.tol_gap_abs = settings.tol_gap
    st.tol_gap_rel = settings.tol_gap
    st.tol_feas = settings.tol_feas
    st.max_iter = settings.max_iter
    st.max_threads = 1
    reg, refine_tol, refine_steps = profile
    st.static_regularization_constant = reg
    st.iterative_refinement_reltol = refine_tol
    st.iterative_refinement_abstol = refine_tol
    st.iterative_refinement_max_iter = refine_steps
    P = sp.csc_matrix((sdp.size, sdp.size))
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(P, q, A, b, cones, st).solve()
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    common = dict(order=sdp.order, iterations=int(sol.iterations), solve_time=elapsed,
                  solver_status=status)
    neq = sdp.eq_matrix.shape[0]

    if status in ("Solved", "AlmostSolved"):
        w = np.asarray(sol.x)
        z = np.asarray(sol.z)
        lam = -z[:neq]
        eq_res, min_eig = check_point(sdp, w, rhs)
        bound = sdp.objective_value(w)
        dual = float(rhs @ lam + sdp.objective_const)
        eq_ok = eq_res <= settings.check_eq_tol * (1.0 + np.abs(rhs).max(initial=0.0))
        psd_ok = min_eig >= -settings.check_psd_tol
        gap_ok = abs(bound - dual) <= 1e-5 * (1.0 + abs(bound))
        # a reduced-accuracy stop is accepted only when the re-checks pass
        ok = eq_ok and psd_ok and gap_ok
        return SolveOutcome(
            Status.LOWER_BOUND if ok else Status.INACCURATE,
            bound=bound, moments=w, equality_duals=lam, dual_value=dual,
            eq_residual=eq_res, min_eig=min_eig,
            message="" if ok else f"residual {eq_res:.2e}, min eig {min_eig:.2e}, gap {bound - dual:.2e}",
            **common,
        )
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        measure, msg = _verify_infeasibility(sdp, A, b, offsets, np.asarray(sol.z), settings)
        if status == "PrimalInfeasible" and measure >= settings.certificate_threshold:
            return SolveOutcome(Status.INFEASIBLE, certificate_measure=measure, message=msg, **common)
        return SolveOutcome(Status.INACCURATE, certificate_measure=measure,
                            message=f"unverified infeasibility: {msg}", **common)
    if status == "DualInfeasible":
        return SolveOutcome(Status.UNBOUNDED, bound=-math.inf, **common)
    return SolveOutcome(Status.INACCURATE, message=f"solver stopped with {status}", **common)


def _verify_infeasibility(sdp, A, b, offsets, z, settings) -> tuple[float, str]:
    """Farkas check: ``A'z = 0``, ``b'z < 0``, ``z`` in the dual cone.

    Returns the normalized margin ``-b'z / ||z||`` after discounting the
    residual and cone violation (0 when the ray does not certify anything).
    """
    nz = np.linalg.norm(z)
    if not np.isfinite(nz) or nz == 0:
        return 0.0, "empty dual ray"
    z = z / nz
    margin = -float(b @ z)
    stat = float(np.abs(A.T @ z).max(initial=0.0))
    cone_viol = 0.0
    for blk, off in zip(sdp.blocks, offsets):
        k = blk.side * (blk.side + 1) // 2
        S = _smat(z[off: off + k], blk.side)
        cone_viol = max(cone_viol, -float(np.linalg.eigvalsh(S).min()))
    # a perturbation of size stat (resp. cone_viol) could absorb this much margin
    scale = 1.0 + np.abs(b).max(initial=0.0)
    slack = 1e3 * (stat + cone_viol) * scale
    measure = max(0.0, margin - slack) if stat <= 1e-6 and cone_viol <= 1e-6 else 0.0
    return measure, f"margin {margin:.3e}, |A'z| {stat:.1e}, cone violation {cone_viol:.1e}"


def classify_certificate(outcome: SolveOutcome) -> Verdict:
    if outcome.status == Status.INFEASIBLE:
        return Verdict.UNREACHABLE
    if outcome.status == Status.LOWER_BOUND:
        return Verdict.BOUND_ONLY
    return Verdict.UNKNOWN


class HierarchyError(RuntimeError):
    def __init__(self, order: int, cause: Exception):
        self.order = order
        super().__init__(f"order {order}: {cause}")


def solve_problem(problem: OcpProblem, r: int, settings: SolverSettings = SolverSettings()):
    """Canonicalize, build order ``r`` and solve; returns ``(outcome, sdp)``."""
    scaled, rec = canonicalize(problem)
    sdp = build_relaxation(scaled, r, rec, settings.localize)
    return solve(sdp, settings), sdp


def run_hierarchy(problem: OcpProblem, r_min: int, r_max: int,
                  settings: SolverSettings = SolverSettings()) -> list[SolveOutcome]:
    """Solve orders ``r_min..r_max``; stops at the first infeasibility certificate.

    Bounds are in original cost units (the normalized running cost already
    carries the time scale).
    """
    prof = degree_profile(problem)
    if r_min < prof.r_min:
        raise RelaxationError(f"r_min={r_min} is below the minimal admissible order {prof.r_min}")
    scaled, rec = canonicalize(problem)
    out: list[SolveOutcome] = []
    for r in range(r_min, r_max + 1):
        try:
            sdp = build_relaxation(scaled, r, rec, settings.localize)
            res = solve(sdp, settings)
        except Exception as exc:  # attach the order
            raise HierarchyError(r, exc) from exc
        out.append(res)
        if res.status == Status.INFEASIBLE:
            break
    return out


def is_monotone(outcomes: Sequence[SolveOutcome], slack: float = 1e-5) -> bool:
    bounds = [o.bound for o in outcomes if o.is_bound]
    return all(b2 >= b1 - slack * (1 + abs(b1)) for b1, b2 in zip(bounds, bounds[1:]))
