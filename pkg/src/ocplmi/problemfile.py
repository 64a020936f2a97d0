"""YAML problem files.

Example::

    name: double integrator
    variables: {states: [x1, x2], controls: [u]}
    dynamics: ["x2", "u"]
    cost: {running: "1", terminal: "0"}
    sets:
      X: {inequalities: ["x2 + 1"], box: [[-3, 3], [-1, 2]]}
      U: {inequalities: ["1 - u", "1 + u"], box: [[-1, 1]]}
      K: {point: [0, 0]}
    initial_state: [1, 1]
    time: {mode: free-homogeneous, T0: 5}
    options: {r_min: 2, r_max: 5, oracle: double_integrator}

``time.mode`` is one of ``fixed`` (needs ``T``), ``free`` or
``free-homogeneous`` (need ``T0``). Polynomials may use ``t`` except in the
terminal cost and the set descriptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .polyalg import PolySyntaxError, parse_poly
from .problem import (
    FixedHorizon,
    FreeHomogeneous,
    FreeHorizon,
    OcpProblem,
    SemialgebraicSet,
    Singleton,
    blocks_for,
)


class ProblemFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, path=None):
        self.message, self.line, self.column, self.path = message, line, column, path
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        prefix = f"{path}: " if path else ""
        super().__init__(prefix + where + message)


class _Str(str):
    line: int = 0
    column: int = 0


class _MarkedLoader(yaml.SafeLoader):
    pass


def _construct_str(loader, node):
    s = _Str(loader.construct_scalar(node))
    s.line = node.start_mark.line + 1
    # inside quotes the text starts one column later
    s.column = node.start_mark.column + 1 + (1 if node.style in ("'", '"') else 0)
    return s


_MarkedLoader.add_constructor("tag:yaml.org,2002:str", _construct_str)


@dataclass(frozen=True)
class FileOptions:
    r_min: int | None = None
    r_max: int | None = None
    tol: float | None = None
    certificate_threshold: float | None = None
    oracle: str | None = None
    extra: dict = field(default_factory=dict)


TIME_MODES = {"fixed": FixedHorizon, "free": FreeHorizon, "free-homogeneous": FreeHomogeneous}


def _poly(text: Any, block, what: str):
    if isinstance(text, (int, float)):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ProblemFileError(f"{what}: expected a polynomial string, got {type(text).__name__}")
    try:
        return parse_poly(text, block)
    except PolySyntaxError as exc:
        line = getattr(text, "line", None)
        col = getattr(text, "column", None)
        raise ProblemFileError(f"{what}: {exc.message}", line,
                               None if col is None else col + exc.pos) from None


def _box(raw, dim: int, what: str):
    if raw is None:
        raise ProblemFileError(f"{what}: missing bounding box")
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in raw)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{what}: box must be a list of [lo, hi] pairs") from None
    if len(box) != dim:
        raise ProblemFileError(f"{what}: box has {len(box)} intervals, expected {dim}")
    return box


def _set(raw, block, what: str):
    if not isinstance(raw, dict):
        raise ProblemFileError(f"{what}: expected a mapping")
    ineqs = tuple(_poly(s, block, f"{what} inequality") for s in raw.get("inequalities", []) or [])
    try:
        return SemialgebraicSet(block, ineqs, _box(raw.get("box"), block.num_vars, what))
    except ValueError as exc:
        raise ProblemFileError(f"{what}: {exc}") from None


def _vector(raw, dim: int, what: str) -> tuple[float, ...]:
    try:
        v = tuple(float(a) for a in raw)
    except (TypeError, ValueError):
        raise ProblemFileError(f"{what}: expected a list of {dim} numbers") from None
    if len(v) != dim:
        raise ProblemFileError(f"{what}: has {len(v)} entries, expected {dim}")
    return v


def parse_problem(data: dict, path=None) -> tuple[OcpProblem, FileOptions]:
    if not isinstance(data, dict):
        raise ProblemFileError("top level must be a mapping", path=path)
    try:
        return _parse(data)
    except ProblemFileError as exc:
        if path is not None and exc.path is None:
            raise ProblemFileError(exc.message, exc.line, exc.column, path) from None
        raise


def _parse(data: dict) -> tuple[OcpProblem, FileOptions]:
    var = data.get("variables") or {}
    states = var.get("states")
    controls = var.get("controls")
    n = len(states) if states else int(var.get("n", 0))
    m = len(controls) if controls else int(var.get("m", 0))
    if n < 1 or m < 1:
        raise ProblemFileError("variables: need at least one state and one control")
    full, _, state, control = blocks_for(
        n, m, [str(s) for s in states] if states else None, [str(s) for s in controls] if controls else None)

    dyn = data.get("dynamics")
    if not isinstance(dyn, list) or len(dyn) != n:
        raise ProblemFileError(f"dynamics: expected a list of {n} polynomials")
    f = tuple(_poly(s, full, f"dynamics[{i}]") for i, s in enumerate(dyn))

    cost = data.get("cost") or {}
    h = _poly(cost.get("running", "1"), full, "cost.running")
    H_raw = cost.get("terminal", "0")
    try:
        H = _poly(H_raw, state, "cost.terminal")
    except ProblemFileError as exc:
        # give a clearer message when the terminal cost mentions controls or time
        try:
            _poly(H_raw, full, "cost.terminal")
        except ProblemFileError:
            raise exc from None
        raise ProblemFileError("cost.terminal: terminal cost may depend on the state only",
                               exc.line, exc.column) from None

    sets = data.get("sets") or {}
    for key in ("X", "U", "K"):
        if key not in sets:
            raise ProblemFileError(f"sets: missing {key}")
    X = _set(sets["X"], state, "sets.X")
    U = _set(sets["U"], control, "sets.U")
    kraw = sets["K"]
    if isinstance(kraw, dict) and "point" in kraw:
        K = Singleton(_vector(kraw["point"], n, "sets.K.point"))
    else:
        K = _set(kraw, state, "sets.K")

    x0 = _vector(data.get("initial_state"), n, "initial_state")
    t = data.get("time") or {}
    mode = t.get("mode")
    if mode not in TIME_MODES:
        raise ProblemFileError(f"time.mode must be one of {sorted(TIME_MODES)}")
    key = "T" if mode == "fixed" else "T0"
    if key not in t:
        raise ProblemFileError(f"time: mode {mode} needs {key}")
    opts = dict(data.get("options") or {})
    ball = bool(opts.pop("ball_constraint", False))
    try:
        problem = OcpProblem(f=f, h=h, H=H, X=X, U=U, K=K, x0=x0, time=TIME_MODES[mode](float(t[key])),
                             add_ball_constraint=ball, name=str(data.get("name", "")))
    except ValueError as exc:
        raise ProblemFileError(str(exc)) from None
    fo = FileOptions(
        r_min=opts.pop("r_min", None), r_max=opts.pop("r_max", None), tol=opts.pop("tol", None),
        certificate_threshold=opts.pop("certificate_threshold", None), oracle=opts.pop("oracle", None),
        extra=opts,
    )
    return problem, fo


def load(path) -> tuple[OcpProblem, FileOptions]:
    """Read and validate a problem file; canonicalization happens at solve time."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read file: {exc.strerror}", path=path) from None
    try:
        data = yaml.load(text, Loader=_MarkedLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ProblemFileError(str(exc.problem), mark.line + 1 if mark else None,
                               mark.column + 1 if mark else None, path) from None
    return parse_problem(data, path)
