"""Symbolic moment and localizing matrices.

A :class:`SymbolicMatrix` is an affine-free linear matrix map
``M(w) = sum_k w_k A_k`` stored in coordinate form: every (row, col) entry
carries a short list of ``(position, coefficient)`` pairs referring to a flat
moment vector. Both triangles are stored, so symmetry can be checked directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polyalg import (
    MultiIndex,
    Polynomial,
    VariableBlock,
    add_exponents,
    basis_size,
    embed,
    monomial_basis,
    monomial_positions,
)


@dataclass(frozen=True)
class MomentLayout:
    """Flat indexing of the moments ``{z_a : |a| <= max_degree}`` over ``block``."""

    block: VariableBlock
    max_degree: int

    @property
    def num_vars(self) -> int:
        return self.block.num_vars

    @property
    def monomials(self) -> tuple[MultiIndex, ...]:
        return monomial_basis(self.num_vars, self.max_degree)

    @property
    def size(self) -> int:
        return basis_size(self.num_vars, self.max_degree)

    def position(self, exponents: MultiIndex) -> int:
        try:
            return monomial_positions(self.num_vars, self.max_degree)[tuple(exponents)]
        except KeyError:
            raise KeyError(
                f"monomial {tuple(exponents)} exceeds degree {self.max_degree}"
            ) from None

    def linear_form(self, p: Polynomial) -> dict[int, float]:
        """Coefficients of ``L(p)`` over flat positions (the Riesz functional)."""
        p = embed(p, self.block)
        if p.degree > self.max_degree:
            raise ValueError(f"polynomial degree {p.degree} exceeds layout degree {self.max_degree}")
        pos = monomial_positions(self.num_vars, self.max_degree)
        return {pos[k]: c for k, c in p.items()}

    def dirac_moments(self, point: Sequence[float]) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        exps = np.array(self.monomials, dtype=int).reshape(self.size, self.num_vars)
        return np.prod(point[None, :] ** exps, axis=1) if self.num_vars else np.ones(1)


class SymbolicMatrix:
    """Symmetric matrix whose entries are linear forms in a moment vector."""

    def __init__(self, side: int, rows, cols, positions, coeffs, label: str = ""):
        self.side = int(side)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.positions = np.asarray(positions, dtype=np.int64)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.label = label

    def __repr__(self):
        return f"SymbolicMatrix({self.label or 'unnamed'}, side={self.side}, nnz={len(self.coeffs)})"

    @property
    def max_position(self) -> int:
        return int(self.positions.max()) if len(self.positions) else -1

    def entry(self, i: int, j: int) -> dict[int, float]:
        mask = (self.rows == i) & (self.cols == j)
        out: dict[int, float] = {}
        for p, c in zip(self.positions[mask], self.coeffs[mask]):
            out[int(p)] = out.get(int(p), 0.0) + float(c)
        return out

    def is_symmetric(self) -> bool:
        return all(self.entry(i, j) == self.entry(j, i) for i in range(self.side) for j in range(i))

    def remap(self, index_map: Sequence[int], offset: int = 0, label: str | None = None) -> "SymbolicMatrix":
        """Rewrite positions through ``index_map`` (then shift by ``offset``)."""
        index_map = np.asarray(index_map, dtype=np.int64)
        return SymbolicMatrix(
            self.side, self.rows, self.cols, index_map[self.positions] + offset,
            self.coeffs, self.label if label is None else label,
        )

    def shifted(self, offset: int) -> "SymbolicMatrix":
        return SymbolicMatrix(self.side, self.rows, self.cols, self.positions + offset,
                              self.coeffs, self.label)

    def substitute(self, forms: Sequence[tuple[dict[int, float], float]], label: str | None = None):
        """Replace each position ``k`` by the affine form ``forms[k] = (linear, constant)``.

        Returns ``(matrix, constant_part)`` where ``constant_part`` is a dense array.
        """
        rows, cols, pos, coef = [], [], [], []
        const = np.zeros((self.side, self.side))
        for i, j, p, c in zip(self.rows, self.cols, self.positions, self.coeffs):
            lin, k0 = forms[p]
            const[i, j] += c * k0
            for q, a in lin.items():
                rows.append(i)
                cols.append(j)
                pos.append(q)
                coef.append(c * a)
        m = SymbolicMatrix(self.side, rows, cols, pos, coef, self.label if label is None else label)
        return m, const

    def evaluate(self, moments: np.ndarray) -> np.ndarray:
        moments = np.asarray(moments, dtype=float)
        if len(self.positions) and self.positions.max() >= len(moments):
            raise ValueError(
                f"moment vector has length {len(moments)}, matrix references position {self.max_position}"
            )
        out = np.zeros((self.side, self.side))
        np.add.at(out, (self.rows, self.cols), self.coeffs * moments[self.positions])
        return out


def _localizing(layout: MomentLayout, theta: Polynomial, d: int, label: str) -> SymbolicMatrix:
    if d < 0:
        raise ValueError(f"negative localizing order {d}")
    theta = embed(theta, layout.block)
    need = 2 * d + theta.degree
    if need > layout.max_degree:
        raise ValueError(
            f"order {d} with deg(theta)={theta.degree} needs moments of degree {need}, "
            f"layout holds {layout.max_degree}"
        )
    nv = layout.num_vars
    basis = monomial_basis(nv, d)
    pos = monomial_positions(nv, layout.max_degree)
    rows, cols, positions, coeffs = [], [], [], []
    theta_terms = list(theta.items())
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            ab = add_exponents(a, b)
            for delta, c in theta_terms:
                rows.append(i)
                cols.append(j)
                positions.append(pos[add_exponents(ab, delta)])
                coeffs.append(c)
    return SymbolicMatrix(len(basis), rows, cols, positions, coeffs, label)


def moment_matrix(layout: MomentLayout, r: int, label: str = "moment") -> SymbolicMatrix:
    """``M_r(z)`` with entry ``(a, b) = z_{a+b}`` for ``|a|, |b| <= r``."""
    if 2 * r > layout.max_degree:
        raise ValueError(f"moment matrix of order {r} needs degree {2 * r}, layout holds {layout.max_degree}")
    one = Polynomial.constant(layout.block, 1.0)
    return _localizing(layout, one, r, label)


def localizing_matrix(layout: MomentLayout, theta: Polynomial, d: int, label: str = "localizing") -> SymbolicMatrix:
    """``M_d(theta z)`` with entry ``(a, b) = sum_delta theta_delta z_{delta+a+b}``."""
    return _localizing(layout, theta, d, label)


def localizing_order(r: int, theta: Polynomial) -> int:
    """Largest order whose localizing matrix stays within degree ``2r``."""
    return r - (theta.degree + 1) // 2


def marginal_projection(full: MomentLayout, target: VariableBlock) -> np.ndarray:
    """Positions in ``full`` of the marginal moments over the sub-block ``target``.

    Element ``k`` is the full-layout position of the ``k``-th monomial of the
    marginal layout ``MomentLayout(target, full.max_degree)``, e.g. the x-marginal
    maps ``z(x)_a`` to ``z_(0, a, 0)``.
    """
    where = []
    for role in target.roles():
        idx = full.block.index_of_role(role)
        if idx is None:
            raise ValueError(f"target variable {role} is not in the full block")
        where.append(idx)
    pos = monomial_positions(full.num_vars, full.max_degree)
    out = np.empty(basis_size(target.num_vars, full.max_degree), dtype=np.int64)
    for k, a in enumerate(monomial_basis(target.num_vars, full.max_degree)):
        e = [0] * full.num_vars
        for src, ex in zip(where, a):
            e[src] = ex
        out[k] = pos[tuple(e)]
    return out


def evaluate_symbolic(matrix: SymbolicMatrix, moments) -> np.ndarray:
    return matrix.evaluate(np.asarray(moments, dtype=float))


def atomic_moments(layout: MomentLayout, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Moments of ``sum_i weights[i] * delta_{atoms[i]}``."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    weights = np.asarray(weights, dtype=float)
    exps = np.array(layout.monomials, dtype=int).reshape(layout.size, layout.num_vars)
    vals = np.prod(atoms[:, None, :] ** exps[None, :, :], axis=2)
    return weights @ vals
