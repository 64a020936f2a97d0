"""Approximate value functions read off the equality multipliers.

The multiplier ``lambda_g`` of the equality attached to test monomial ``g``
gives the polynomial ``Lambda = sum lambda_g g``. Dual feasibility makes it a
subsolution of the HJB inequality, so ``Lambda(0, x)`` lower-bounds the value
at every ``x``, not only at the solved initial state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .polyalg import Polynomial, apply_generator, restrict
from .problem import ScalingRecord, Singleton
from .relaxation import RelaxationSdp
from .sdpbackend import SolveOutcome, Status


class MissingDualsError(ValueError):
    pass


@dataclass(frozen=True)
class ValueCertificate:
    """``Lambda`` in normalized coordinates plus the maps back to original units.

    Values are already in original cost units because the normalized running
    cost carries the Jacobian of the time change.
    """

    order: int
    lam: Polynomial
    scaling: ScalingRecord
    dual_value: float
    sdp: RelaxationSdp

    @property
    def has_time(self) -> bool:
        return self.lam.block.has_time

    def scaled(self, x_scaled: Sequence[float], s: float = 0.0) -> float:
        pt = ((s,) if self.has_time else ()) + tuple(float(v) for v in x_scaled)
        return self.lam(pt)

    def __call__(self, x: Sequence[float], t: float = 0.0) -> float:
        xs = self.scaling.state_to_scaled(x)
        return self.scaled(xs, self.scaling.time_to_scaled(t))


def extract_value_polynomial(outcome: SolveOutcome, sdp: RelaxationSdp) -> ValueCertificate:
    if outcome.status != Status.LOWER_BOUND:
        raise MissingDualsError(f"no value certificate from a {outcome.status.value} outcome")
    lam = outcome.equality_duals
    if lam is None or len(lam) != len(sdp.tests):
        raise MissingDualsError("backend did not report equality multipliers")
    terms = {g: float(c) for g, c in zip(sdp.tests, lam)}
    # Constant part of the dual objective: with a known terminal measure this
    # pins Lambda(anchor) = H(anchor); otherwise both pieces vanish.
    shift = sdp.objective_const - float(np.dot(lam, sdp.eq_const))
    zero = (0,) * sdp.test_block.num_vars
    terms[zero] = terms.get(zero, 0.0) + shift
    poly = Polynomial(sdp.test_block, terms)
    start = ((0.0,) if sdp.test_block.has_time else ()) + tuple(sdp.x0)
    return ValueCertificate(sdp.order, poly, sdp.scaling, poly(start), sdp)


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class GapRow:
    x: tuple[float, ...]
    value: float
    oracle: float
    gap: float


def value_gap_grid(cert: ValueCertificate, oracle: Callable[[Sequence[float]], float],
                   grid: Iterable[Sequence[float]]) -> list[GapRow]:
    """One row per grid point, ``gap = Lambda(x) - T(x)``; undefined oracle values give NaN."""
    rows = []
    for x in grid:
        x = tuple(float(v) for v in x)
        lam = cert(x)
        try:
            ref = float(oracle(x))
        except ValueError:
            ref = math.nan
        rows.append(GapRow(x, lam, ref, lam - ref))
    return rows


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.10g}"


def write_gap_csv(rows: Sequence[GapRow], path, names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "lambda", "oracle", "gap"])
        for row in rows:
            w.writerow([*(_fmt(v) for v in row.x), _fmt(row.value), _fmt(row.oracle), _fmt(row.gap)])


# ---------------------------------------------------------------- sampled dual feasibility

@dataclass(frozen=True)
class ResidualReport:
    """Minima over samples, in normalized units; both should be >= -tol."""

    min_hjb: float
    min_terminal: float
    samples: int
    terminal_samples: int
    rejected: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.min_hjb >= -tol and self.min_terminal >= -tol


def _feasible(S, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    for (lo, hi), col in zip(S.bounding_box, pts.T):
        keep &= (col >= lo - tol) & (col <= hi + tol)
    for g in S.inequalities:
        keep &= np.array([g(p) >= -tol for p in pts])
    return keep


def _rejection_sample(S, count: int, rng: np.random.Generator, max_rounds: int = 50) -> np.ndarray:
    lo = np.array([a for a, _ in S.bounding_box])
    hi = np.array([b for _, b in S.bounding_box])
    got: list[np.ndarray] = []
    total = 0
    for _ in range(max_rounds):
        cand = rng.uniform(lo, hi, size=(max(count, 16), len(lo)))
        cand = cand[_feasible(S, cand)]
        got.append(cand)
        total += len(cand)
        if total >= count:
            break
    pts = np.vstack(got) if got else np.empty((0, len(lo)))
    return pts[:count]


def putinar_residual_check(cert: ValueCertificate, samples: int | np.ndarray = 2000,
                           seed: int = 0) -> ResidualReport:
    """Sampled dual feasibility of ``Lambda`` on the normalized problem.

    ``samples`` is either a count (rejection sampling on the normalized
    ``[0,1] x X x U``) or an explicit array of ``(t, x, u)`` rows, ``t``
    omitted for time-homogeneous relaxations; rows outside the sets are
    dropped and counted.
    """
    sdp = cert.sdp
    prob = sdp.problem
    rng = np.random.default_rng(seed)
    homogeneous = sdp.mode == "homogeneous"
    n, m = prob.n, prob.m
    zb = prob.full_block.sub(time=not homogeneous)
    if isinstance(samples, (int, np.integer)):
        xs = _rejection_sample(prob.X, int(samples), rng)
        us = _rejection_sample(prob.U, len(xs), rng)
        k = min(len(xs), len(us))
        cols = [rng.uniform(0.0, 1.0, size=(k, 1))] if not homogeneous else []
        pts = np.hstack(cols + [xs[:k], us[:k]])
        rejected = 0
    else:
        pts = np.atleast_2d(np.asarray(samples, dtype=float))
        off = 0 if homogeneous else 1
        keep = _feasible(prob.X, pts[:, off: off + n]) & _feasible(prob.U, pts[:, off + n:])
        if not homogeneous:
            keep &= (pts[:, 0] >= 0.0) & (pts[:, 0] <= 1.0)
        rejected = int((~keep).sum())
        pts = pts[keep]

    f = [restrict(fk, zb) if homogeneous else fk for fk in prob.f]
    h = restrict(prob.h, zb) if homogeneous else prob.h
    hjb = h + apply_generator(cert.lam, f)
    min_hjb = min((hjb(p) for p in pts), default=math.inf)

    # terminal side: H - Lambda(T, .) on K
    state = prob.state_block
    if isinstance(prob.K, Singleton):
        kpts = np.array([prob.K.point])
    else:
        kpts = _rejection_sample(prob.K, max(len(pts) // 4, 50), rng)
    if sdp.mode == "free":
        times = rng.uniform(0.0, 1.0, size=len(kpts))
    else:
        times = np.ones(len(kpts))
    term = []
    for s, xk in zip(times, kpts):
        lam = cert.scaled(xk, s)
        term.append(prob.H(tuple(xk)) - lam)
    return ResidualReport(float(min_hjb), float(min(term)), len(pts), len(kpts), rejected)
