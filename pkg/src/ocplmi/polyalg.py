"""Sparse multivariate polynomials over a (t | x | u) variable block.

Polynomials are immutable maps from exponent tuples to float coefficients.
Monomials are enumerated in graded lexicographic order: total degree first,
then lexicographically decreasing exponents within a degree, so that for two
variables the order is 1, x1, x2, x1^2, x1*x2, x2^2.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

MultiIndex = tuple[int, ...]

#: coefficients below this magnitude are dropped after arithmetic
ZERO_TOL = 1e-14


@dataclass(frozen=True)
class VariableBlock:
    """Ordered variable layout ``(t?, x1..xn, u1..um)``."""

    has_time: bool
    n: int
    m: int
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ValueError("negative dimension")
        if not self.names:
            object.__setattr__(self, "names", self.default_names())
        if len(self.names) != self.num_vars:
            raise ValueError(
                f"expected {self.num_vars} variable names, got {len(self.names)}"
            )
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate variable names")

    def default_names(self) -> tuple[str, ...]:
        names = ["t"] if self.has_time else []
        names += [f"x{i + 1}" for i in range(self.n)]
        names += [f"u{j + 1}" for j in range(self.m)]
        return tuple(names)

    @property
    def num_vars(self) -> int:
        return int(self.has_time) + self.n + self.m

    @property
    def time_index(self) -> int | None:
        return 0 if self.has_time else None

    def state_index(self, i: int) -> int:
        return int(self.has_time) + i

    def control_index(self, j: int) -> int:
        return int(self.has_time) + self.n + j

    def roles(self) -> list[tuple[str, int]]:
        """Role of each variable: ``("t", 0)``, ``("x", i)`` or ``("u", j)``."""
        out = [("t", 0)] if self.has_time else []
        out += [("x", i) for i in range(self.n)]
        out += [("u", j) for j in range(self.m)]
        return out

    def index_of_role(self, role: tuple[str, int]) -> int | None:
        kind, k = role
        if kind == "t":
            return 0 if self.has_time else None
        if kind == "x":
            return self.state_index(k) if k < self.n else None
        return self.control_index(k) if k < self.m else None

    def sub(self, time: bool = True, state: bool = True, control: bool = True) -> "VariableBlock":
        """Sub-block keeping the requested variable groups (and their names)."""
        keep_t = self.has_time and time
        n = self.n if state else 0
        m = self.m if control else 0
        names = []
        for (kind, _), name in zip(self.roles(), self.names):
            if (kind == "t" and keep_t) or (kind == "x" and state) or (kind == "u" and control):
                names.append(name)
        return VariableBlock(keep_t, n, m, tuple(names))


@lru_cache(maxsize=None)
def monomial_basis(num_vars: int, max_deg: int) -> tuple[MultiIndex, ...]:
    """All exponent tuples of total degree <= ``max_deg`` in graded lex order."""
    if max_deg < 0:
        return ()
    if num_vars == 0:
        return ((),)
    out: list[MultiIndex] = []
    for deg in range(max_deg + 1):
        out.extend(_exponents_of_degree(num_vars, deg))
    return tuple(out)


def _exponents_of_degree(num_vars: int, deg: int) -> Iterable[MultiIndex]:
    if num_vars == 1:
        yield (deg,)
        return
    for first in range(deg, -1, -1):
        for rest in _exponents_of_degree(num_vars - 1, deg - first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def monomial_positions(num_vars: int, max_deg: int) -> dict[MultiIndex, int]:
    """Inverse of :func:`monomial_basis`: exponent tuple -> flat position."""
    return {a: i for i, a in enumerate(monomial_basis(num_vars, max_deg))}


def basis_size(num_vars: int, max_deg: int) -> int:
    return math.comb(num_vars + max_deg, max_deg) if max_deg >= 0 else 0


def add_exponents(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(i + j for i, j in zip(a, b))


def _clean(terms: Mapping[MultiIndex, float]) -> dict[MultiIndex, float]:
    return {k: float(v) for k, v in terms.items() if abs(v) >= ZERO_TOL}


class Polynomial:
    """Immutable sparse polynomial with float coefficients."""

    __slots__ = ("block", "_terms", "_hash")

    def __init__(self, block: VariableBlock, terms: Mapping[MultiIndex, float] | None = None):
        terms = _clean(terms or {})
        nv = block.num_vars
        for k in terms:
            if len(k) != nv or any(e < 0 for e in k):
                raise ValueError(f"bad exponent {k} for block with {nv} variables")
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "_terms", terms)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # construction helpers
    @classmethod
    def zero(cls, block: VariableBlock) -> "Polynomial":
        return cls(block)

    @classmethod
    def constant(cls, block: VariableBlock, c: float) -> "Polynomial":
        return cls(block, {(0,) * block.num_vars: c})

    @classmethod
    def variable(cls, block: VariableBlock, index: int) -> "Polynomial":
        e = [0] * block.num_vars
        e[index] = 1
        return cls(block, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, block: VariableBlock, exponents: MultiIndex, coeff: float = 1.0) -> "Polynomial":
        return cls(block, {tuple(exponents): coeff})

    @property
    def terms(self) -> dict[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, exponents: MultiIndex) -> float:
        return self._terms.get(tuple(exponents), 0.0)

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def uses_variable(self, index: int) -> bool:
        return any(k[index] > 0 for k in self._terms)

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.block != self.block:
                raise ValueError("polynomials live on different variable blocks")
            return other
        if isinstance(other, (int, float)):
            return Polynomial.constant(self.block, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for k, v in other._terms.items():
            out[k] = out.get(k, 0.0) + v
        return Polynomial(self.block, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.block, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.block, {k: v * other for k, v in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[MultiIndex, float] = {}
        for ka, va in self._terms.items():
            for kb, vb in other._terms.items():
                k = add_exponents(ka, kb)
                out[k] = out.get(k, 0.0) + va * vb
        return Polynomial(self.block, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        result = Polynomial.constant(self.block, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.block == other.block and self._terms == other._terms

    def __hash__(self):
        h = object.__getattribute__(self, "_hash")
        if h is None:
            h = hash((self.block, frozenset(self._terms.items())))
            object.__setattr__(self, "_hash", h)
        return h

    def allclose(self, other: "Polynomial", tol: float = 1e-10) -> bool:
        diff = self - other
        return all(abs(v) <= tol for _, v in diff.items())

    # evaluation
    def __call__(self, point: Sequence[float]) -> float:
        return self.evaluate(point)

    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != self.block.num_vars:
            raise ValueError(
                f"point has {len(point)} coordinates, block has {self.block.num_vars}"
            )
        total = 0.0
        for k, c in self._terms.items():
            term = c
            for v, e in zip(point, k):
                if e:
                    term *= v**e
            total += term
        return total

    def __repr__(self):
        return f"Polynomial({format_poly(self)!r})"

    def __str__(self):
        return format_poly(self)


def differentiate(p: Polynomial, var: int) -> Polynomial:
    """Formal partial derivative with respect to variable ``var``."""
    if not 0 <= var < p.block.num_vars:
        raise IndexError(f"variable index {var} out of range")
    out: dict[MultiIndex, float] = {}
    for k, c in p.items():
        e = k[var]
        if e == 0:
            continue
        nk = list(k)
        nk[var] -= 1
        nk = tuple(nk)
        out[nk] = out.get(nk, 0.0) + c * e
    return Polynomial(p.block, out)


def substitute(p: Polynomial, images: Sequence[Polynomial]) -> Polynomial:
    """Compose ``p`` with one polynomial image per variable (all on a common block)."""
    if len(images) != p.block.num_vars:
        raise ValueError("need one image per variable")
    if not images:
        return p
    target = images[0].block
    powers: list[dict[int, Polynomial]] = [{} for _ in images]

    def power(i: int, e: int) -> Polynomial:
        if e not in powers[i]:
            powers[i][e] = images[i] ** e
        return powers[i][e]

    out = Polynomial.zero(target)
    acc: dict[MultiIndex, float] = {}
    for k, c in p.items():
        term = Polynomial.constant(target, c)
        for i, e in enumerate(k):
            if e:
                term = term * power(i, e)
        for kk, vv in term.items():
            acc[kk] = acc.get(kk, 0.0) + vv
    out = Polynomial(target, acc)
    return out


def affine_substitute(p: Polynomial, maps: Sequence[tuple[float, float]]) -> Polynomial:
    """Substitute ``v_i -> a_i * v_i + b_i`` for every variable."""
    block = p.block
    if len(maps) != block.num_vars:
        raise ValueError("need one affine map per variable")
    images = [
        Polynomial(block, {_unit(block.num_vars, i): a, (0,) * block.num_vars: b})
        for i, (a, b) in enumerate(maps)
    ]
    return substitute(p, images)


def _unit(nv: int, i: int) -> MultiIndex:
    e = [0] * nv
    e[i] = 1
    return tuple(e)


def embed(p: Polynomial, target: VariableBlock) -> Polynomial:
    """Re-express ``p`` on a larger block, matching variables by role (t, x_i, u_j)."""
    if p.block == target:
        return p
    where = []
    for role in p.block.roles():
        idx = target.index_of_role(role)
        where.append(idx)
    out: dict[MultiIndex, float] = {}
    for k, c in p.items():
        nk = [0] * target.num_vars
        for src, e in enumerate(k):
            if e == 0:
                continue
            if where[src] is None:
                raise ValueError(
                    f"variable {p.block.names[src]!r} has no counterpart in the target block"
                )
            nk[where[src]] = e
        out[tuple(nk)] = c
    return Polynomial(target, out)


def restrict(p: Polynomial, target: VariableBlock) -> Polynomial:
    """Inverse of :func:`embed`; fails if ``p`` uses a variable absent from ``target``."""
    if p.block == target:
        return p
    src_of = [p.block.index_of_role(role) for role in target.roles()]
    kept = {i for i in src_of if i is not None}
    for k, _ in p.items():
        for i, e in enumerate(k):
            if e and i not in kept:
                raise ValueError(
                    f"polynomial depends on {p.block.names[i]!r}, not present in target block"
                )
    out = {}
    for k, c in p.items():
        out[tuple(k[i] if i is not None else 0 for i in src_of)] = c
    return Polynomial(target, out)


def apply_generator(phi: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """``A phi = d phi/dt + <f, grad_x phi>`` as a polynomial in (t, x, u).

    ``phi`` must not depend on controls; it may live on any sub-block of the
    dynamics block. The result lives on the block of ``f``.
    """
    if not f:
        raise ValueError("empty dynamics")
    full = f[0].block
    if any(fk.block != full for fk in f):
        raise ValueError("dynamics components on different blocks")
    if len(f) != full.n:
        raise ValueError(f"dynamics has {len(f)} components, state dimension is {full.n}")
    if phi.block.m and any(phi.uses_variable(phi.block.control_index(j)) for j in range(phi.block.m)):
        raise ValueError("test function must not depend on controls")
    if phi.block.n not in (0, full.n):
        raise ValueError("test function state dimension does not match dynamics")
    g = embed(phi, full)
    out = Polynomial.zero(full)
    if full.has_time:
        out = out + differentiate(g, 0)
    for k, fk in enumerate(f):
        dg = differentiate(g, full.state_index(k))
        if not dg.is_zero():
            out = out + dg * fk
    return out


# --------------------------------------------------------------------------
# text format

def format_poly(p: Polynomial) -> str:
    if p.is_zero():
        return "0"
    pos = monomial_positions(p.block.num_vars, p.degree)
    parts = []
    for k in sorted(p._terms, key=pos.__getitem__):
        c = p._terms[k]
        mono = "*".join(
            name if e == 1 else f"{name}^{e}" for name, e in zip(p.block.names, k) if e
        )
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        if mono and mag == 1.0:
            body = mono
        elif mono:
            body = f"{mag!r}*{mono}"
        else:
            body = repr(mag)
        parts.append((sign, body))
    first_sign, first = parts[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return text


class PolySyntaxError(ValueError):
    """Raised for malformed polynomial text; ``pos`` is the 0-based column."""

    def __init__(self, message: str, pos: int, text: str = ""):
        self.message = message
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at column {pos + 1}")


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(text, i)
        if not m or m.end() == i:
            raise PolySyntaxError(f"unexpected character {text[i]!r}", i, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        i = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, block: VariableBlock):
        self.text = text
        self.block = block
        self.tokens = _tokenize(text)
        self.i = 0
        self.index = {name: k for k, name in enumerate(block.names)}

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise PolySyntaxError(msg, tok[2], self.text)

    def parse(self) -> Polynomial:
        p = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected {self.peek()[1]!r}")
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        p = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                p = p * self.unary()
            elif kind in ("num", "name") or (kind == "op" and val == "("):
                # implicit multiplication, e.g. "2x1" or "3(x1+1)"
                p = p * self.power()
            else:
                return p

    def unary(self) -> Polynomial:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            p = self.unary()
            return -p if val == "-" else p
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            if tok[0] == "op" and tok[1] == "-":
                self.error("negative exponent")
            if tok[0] != "num" or not tok[1].isdigit():
                self.error("exponent must be a non-negative integer")
            self.take()
            return base ** int(tok[1])
        return base

    def atom(self) -> Polynomial:
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            return Polynomial.constant(self.block, float(val))
        if kind == "name":
            if val not in self.index:
                self.error(f"unknown variable {val!r}", tok)
            return Polynomial.variable(self.block, self.index[val])
        if kind == "op" and val == "(":
            p = self.expr()
            close = self.take()
            if close[1] != ")":
                self.error("expected ')'", close)
            return p
        self.error("unexpected end of input" if kind == "end" else f"unexpected {val!r}", tok)


def parse_poly(text: str, block: VariableBlock) -> Polynomial:
    """Parse ``text`` such as ``"x1^2 + 2*x2"`` into a polynomial over ``block``."""
    return _Parser(text, block).parse()


def polynomial_from_function(block: VariableBlock, fn: Callable[..., Polynomial]) -> Polynomial:
    """Build a polynomial by calling ``fn`` with one variable polynomial per block variable."""
    vars_ = [Polynomial.variable(block, i) for i in range(block.num_vars)]
    out = fn(*vars_)
    if isinstance(out, (int, float)):
        return Polynomial.constant(block, float(out))
    return out
