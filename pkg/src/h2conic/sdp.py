"""Solver-agnostic semidefinite programming layer.

Every optimization in the toolkit is phrased as an :class:`SdpProgram`:
matrix decision variables, affine matrix-valued constraints tagged
PSD/NSD/zero, an optional squared-norm epigraph constraint, and a linear
objective.  Programs are immutable descriptions; :func:`solve` compiles
them to cvxpy and runs a conic interior-point backend.

Expressions are built from a tiny affine AST (:class:`Const`,
:class:`VarRef`, sums, scalar multiples, matrix products, transposes,
blocks, vec, trace).  The AST supports numeric evaluation (used for
independent feasibility checks) and a round-trippable text dump for
debugging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import cvxpy as cp
import numpy as np

__all__ = [
    "Expr",
    "Const",
    "VarRef",
    "VarSpec",
    "Constraint",
    "SocSqConstraint",
    "SdpProgram",
    "SdpSolution",
    "SdpError",
    "aff",
    "he",
    "block",
    "trace",
    "vec",
    "evaluate",
    "solve",
    "dump_program",
    "parse_program",
]


class SdpError(RuntimeError):
    """Raised for malformed programs (never for backend failures)."""


# ---------------------------------------------------------------------------
# Affine expression AST
# ---------------------------------------------------------------------------


class Expr:
    """Base class for affine matrix expressions."""

    shape: tuple[int, int]

    @property
    def is_constant(self) -> bool:
        raise NotImplementedError

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return Add((self, aff(other, like=self.shape)))

    def __radd__(self, other):
        return Add((aff(other, like=self.shape), self))

    def __sub__(self, other):
        return Add((self, Scale(-1.0, aff(other, like=self.shape))))

    def __rsub__(self, other):
        return Add((aff(other, like=self.shape), Scale(-1.0, self)))

    def __neg__(self):
        return Scale(-1.0, self)

    def __mul__(self, alpha):
        if np.isscalar(alpha):
            return Scale(float(alpha), self)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        return MatMul(self, aff(other))

    def __rmatmul__(self, other):
        return MatMul(aff(other), self)

    @property
    def T(self) -> "Expr":
        return Transpose(self)


@dataclass(frozen=True)
class Const(Expr):
    value_tuple: tuple
    shape: tuple[int, int]

    @staticmethod
    def of(a) -> "Const":
        arr = np.atleast_2d(np.asarray(a, dtype=float))
        return Const(tuple(map(tuple, arr.tolist())), arr.shape)

    @property
    def value(self) -> np.ndarray:
        return np.array(self.value_tuple, dtype=float).reshape(self.shape)

    @property
    def is_constant(self) -> bool:
        return True


@dataclass(frozen=True)
class VarRef(Expr):
    name: str
    shape: tuple[int, int]

    @property
    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple

    def __post_init__(self):
        shapes = {t.shape for t in self.terms}
        if len(shapes) != 1:
            raise SdpError(f"shape mismatch in sum: {sorted(shapes)}")

    @property
    def shape(self):
        return self.terms[0].shape

    @property
    def is_constant(self) -> bool:
        return all(t.is_constant for t in self.terms)


@dataclass(frozen=True)
class Scale(Expr):
    alpha: float
    arg: Expr

    @property
    def shape(self):
        return self.arg.shape

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


@dataclass(frozen=True)
class MatMul(Expr):
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.left.shape[1] != self.right.shape[0]:
            raise SdpError(
                f"matmul dimension mismatch {self.left.shape} @ {self.right.shape}"
            )
        if not (self.left.is_constant or self.right.is_constant):
            raise SdpError("product of two variable-dependent expressions is not affine")

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])

    @property
    def is_constant(self) -> bool:
        return self.left.is_constant and self.right.is_constant


@dataclass(frozen=True)
class Transpose(Expr):
    arg: Expr

    @property
    def shape(self):
        r, c = self.arg.shape
        return (c, r)

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


@dataclass(frozen=True)
class Block(Expr):
    rows: tuple  # tuple of tuples of Expr

    def __post_init__(self):
        ncols = {len(r) for r in self.rows}
        if len(ncols) != 1:
            raise SdpError("ragged block structure")
        for row in self.rows:
            if len({e.shape[0] for e in row}) != 1:
                raise SdpError("inconsistent row heights in block")
        for j in range(len(self.rows[0])):
            if len({row[j].shape[1] for row in self.rows}) != 1:
                raise SdpError("inconsistent column widths in block")

    @property
    def shape(self):
        r = sum(row[0].shape[0] for row in self.rows)
        c = sum(e.shape[1] for e in self.rows[0])
        return (r, c)

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant for row in self.rows for e in row)


@dataclass(frozen=True)
class Vec(Expr):
    """Column-major vectorization of the argument."""

    arg: Expr

    @property
    def shape(self):
        r, c = self.arg.shape
        return (r * c, 1)

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


@dataclass(frozen=True)
class TraceExpr(Expr):
    arg: Expr

    def __post_init__(self):
        if self.arg.shape[0] != self.arg.shape[1]:
            raise SdpError("trace of a non-square expression")

    @property
    def shape(self):
        return (1, 1)

    @property
    def is_constant(self) -> bool:
        return self.arg.is_constant


def aff(x, like: tuple[int, int] | None = None) -> Expr:
    """Coerce a scalar or array into an expression node."""
    if isinstance(x, Expr):
        return x
    if np.isscalar(x) and like is not None:
        return Const.of(np.full(like, float(x)))
    return Const.of(x)


def he(e: Expr) -> Expr:
    """He[M] = M + M^T."""
    return e + e.T


def block(rows: Sequence[Sequence]) -> Block:
    return Block(tuple(tuple(aff(e) for e in row) for row in rows))


def trace(e) -> TraceExpr:
    return TraceExpr(aff(e))


def vec(e) -> Vec:
    return Vec(aff(e))


# ---------------------------------------------------------------------------
# Program description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarSpec:
    name: str
    shape: tuple[int, int]
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.shape[0] != self.shape[1]:
            raise SdpError(f"symmetric variable {self.name} must be square")

    def ref(self) -> VarRef:
        return VarRef(self.name, self.shape)


@dataclass(frozen=True)
class Constraint:
    """Affine matrix constraint: expr PSD (>= 0), NSD (<= 0) or zero."""

    expr: Expr
    sense: str  # "psd" | "nsd" | "zero"

    def __post_init__(self):
        if self.sense not in ("psd", "nsd", "zero"):
            raise SdpError(f"unknown constraint sense {self.sense!r}")
        if self.sense != "zero" and self.expr.shape[0] != self.expr.shape[1]:
            raise SdpError("PSD/NSD constraint on a non-square expression")


@dataclass(frozen=True)
class SocSqConstraint:
    """Squared-norm epigraph: ||vec_expr||_2^2 <= bound (a 1x1 expression)."""

    bound: Expr
    vec_expr: Expr

    def __post_init__(self):
        if self.bound.shape != (1, 1):
            raise SdpError("epigraph bound must be scalar")
        if self.vec_expr.shape[1] != 1:
            raise SdpError("epigraph argument must be a column")


@dataclass(frozen=True)
class SdpProgram:
    """Immutable SDP description: variables, constraints, linear objective."""

    variables: tuple  # tuple of VarSpec
    constraints: tuple  # tuple of Constraint | SocSqConstraint
    objective: Expr | None = None  # 1x1 expression, minimized

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(names) != len(set(names)):
            raise SdpError("duplicate variable names")
        if self.objective is not None and self.objective.shape != (1, 1):
            raise SdpError("objective must be scalar (1x1)")

    def var(self, name: str) -> VarSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)


@dataclass
class SdpSolution:
    values: dict
    objective: float
    status: str  # "optimal" | "infeasible" | "unbounded" | "numerical-failure"
    max_violation: float
    diagnostics: str = ""


# ---------------------------------------------------------------------------
# Numeric evaluation
# ---------------------------------------------------------------------------


def evaluate(e: Expr, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate an expression at concrete variable values."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, VarRef):
        v = np.atleast_2d(np.asarray(values[e.name], dtype=float))
        if v.shape != e.shape:
            raise SdpError(f"value for {e.name} has shape {v.shape}, expected {e.shape}")
        return v
    if isinstance(e, Add):
        return sum(evaluate(t, values) for t in e.terms)
    if isinstance(e, Scale):
        return e.alpha * evaluate(e.arg, values)
    if isinstance(e, MatMul):
        return evaluate(e.left, values) @ evaluate(e.right, values)
    if isinstance(e, Transpose):
        return evaluate(e.arg, values).T
    if isinstance(e, Block):
        return np.block([[evaluate(x, values) for x in row] for row in e.rows])
    if isinstance(e, Vec):
        return evaluate(e.arg, values).reshape(-1, 1, order="F")
    if isinstance(e, TraceExpr):
        return np.atleast_2d(np.trace(evaluate(e.arg, values)))
    raise SdpError(f"unknown node {type(e).__name__}")


def constraint_violation(c, values: Mapping[str, np.ndarray]) -> float:
    """Most-positive violation of one constraint at the given point."""
    if isinstance(c, SocSqConstraint):
        v = evaluate(c.vec_expr, values)
        bound = float(evaluate(c.bound, values).item())
        return max(0.0, float(np.dot(v.ravel(), v.ravel())) - bound)
    m = evaluate(c.expr, values)
    if c.sense == "zero":
        return float(np.max(np.abs(m))) if m.size else 0.0
    m = 0.5 * (m + m.T)
    lam = np.linalg.eigvalsh(m)
    if c.sense == "psd":
        return max(0.0, -float(lam[0]))
    return max(0.0, float(lam[-1]))


def max_violation(p: SdpProgram, values: Mapping[str, np.ndarray]) -> float:
    return max((constraint_violation(c, values) for c in p.constraints), default=0.0)


# ---------------------------------------------------------------------------
# cvxpy backend
# ---------------------------------------------------------------------------


def _to_cvxpy(e: Expr, varmap):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, VarRef):
        return varmap[e.name]
    if isinstance(e, Add):
        out = _to_cvxpy(e.terms[0], varmap)
        for t in e.terms[1:]:
            out = out + _to_cvxpy(t, varmap)
        return out
    if isinstance(e, Scale):
        return e.alpha * _to_cvxpy(e.arg, varmap)
    if isinstance(e, MatMul):
        return _to_cvxpy(e.left, varmap) @ _to_cvxpy(e.right, varmap)
    if isinstance(e, Transpose):
        return _to_cvxpy(e.arg, varmap).T
    if isinstance(e, Block):
        return cp.bmat([[_to_cvxpy(x, varmap) for x in row] for row in e.rows])
    if isinstance(e, Vec):
        return cp.reshape(_to_cvxpy(e.arg, varmap), (e.shape[0], 1), order="F")
    if isinstance(e, TraceExpr):
        return cp.reshape(cp.trace(_to_cvxpy(e.arg, varmap)), (1, 1), order="F")
    raise SdpError(f"unknown node {type(e).__name__}")


_STATUS_MAP = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}


def solve(
    p: SdpProgram,
    feas_tol: float = 1e-7,
    solver: str = "CLARABEL",
    verbose: bool = False,
    solver_opts: dict | None = None,
) -> SdpSolution:
    """Solve an SDP; backend failures come back as status, never a crash."""
    varmap = {}
    for spec in p.variables:
        if spec.symmetric:
            varmap[spec.name] = cp.Variable(spec.shape, symmetric=True)
        elif spec.shape == (1, 1):
            varmap[spec.name] = cp.Variable(spec.shape)
        else:
            varmap[spec.name] = cp.Variable(spec.shape)

    cons = []
    for c in p.constraints:
        if isinstance(c, SocSqConstraint):
            v = _to_cvxpy(c.vec_expr, varmap)
            cons.append(cp.sum_squares(v) <= cp.reshape(_to_cvxpy(c.bound, varmap), (), order="F"))
            continue
        m = _to_cvxpy(c.expr, varmap)
        if c.sense == "zero":
            cons.append(m == 0)
        else:
            if not isinstance(m, np.ndarray):
                m = 0.5 * (m + m.T)  # symmetrize affine roundoff
            if c.sense == "psd":
                cons.append(m >> 0)
            else:
                cons.append(m << 0)

    if p.objective is None:
        objective = cp.Minimize(0)
    else:
        objective = cp.Minimize(cp.reshape(_to_cvxpy(p.objective, varmap), (), order="F"))

    prob = cp.Problem(objective, cons)
    opts = dict(solver_opts or {})
    try:
        prob.solve(solver=solver, verbose=verbose, **opts)
    except Exception as exc:  # backend must never crash the caller
        return SdpSolution({}, float("nan"), "numerical-failure", float("inf"), str(exc))

    status = _STATUS_MAP.get(prob.status, "numerical-failure")
    if status != "optimal":
        return SdpSolution({}, float("nan"), status, float("inf"), f"solver status {prob.status}")

    values = {}
    for spec in p.variables:
        v = np.atleast_2d(np.asarray(varmap[spec.name].value, dtype=float))
        v = v.reshape(spec.shape)
        if spec.symmetric:
            v = 0.5 * (v + v.T)
        values[spec.name] = v
    obj = float(prob.value) if p.objective is not None else 0.0
    viol = max_violation(p, values)
    if viol > feas_tol:
        # one retry at tighter backend tolerance before giving up
        try:
            tight = dict(opts)
            if solver == "CLARABEL":
                tight.setdefault("tol_feas", 1e-10)
                tight.setdefault("tol_gap_abs", 1e-10)
                tight.setdefault("tol_gap_rel", 1e-10)
            prob.solve(solver=solver, verbose=verbose, **tight)
            if _STATUS_MAP.get(prob.status) == "optimal":
                for spec in p.variables:
                    v = np.atleast_2d(np.asarray(varmap[spec.name].value, dtype=float))
                    v = v.reshape(spec.shape)
                    if spec.symmetric:
                        v = 0.5 * (v + v.T)
                    values[spec.name] = v
                obj = float(prob.value) if p.objective is not None else 0.0
                viol = max_violation(p, values)
        except Exception:
            pass
    if viol > feas_tol:
        return SdpSolution(values, obj, "numerical-failure", viol,
                           f"feasibility violation {viol:.3e} exceeds tolerance")
    return SdpSolution(values, obj, "optimal", viol)


# ---------------------------------------------------------------------------
# Debug text format (round-trippable)
# ---------------------------------------------------------------------------


def _dump_expr(e: Expr) -> str:
    if isinstance(e, Const):
        flat = " ".join(repr(float(x)) for x in np.asarray(e.value).ravel())
        return f"(const {e.shape[0]} {e.shape[1]} {flat})"
    if isinstance(e, VarRef):
        return f"(var {e.name})"
    if isinstance(e, Add):
        return "(add " + " ".join(_dump_expr(t) for t in e.terms) + ")"
    if isinstance(e, Scale):
        return f"(scale {float(e.alpha)!r} {_dump_expr(e.arg)})"
    if isinstance(e, MatMul):
        return f"(matmul {_dump_expr(e.left)} {_dump_expr(e.right)})"
    if isinstance(e, Transpose):
        return f"(t {_dump_expr(e.arg)})"
    if isinstance(e, Block):
        cells = " ".join(_dump_expr(x) for row in e.rows for x in row)
        return f"(block {len(e.rows)} {len(e.rows[0])} {cells})"
    if isinstance(e, Vec):
        return f"(vec {_dump_expr(e.arg)})"
    if isinstance(e, TraceExpr):
        return f"(trace {_dump_expr(e.arg)})"
    raise SdpError(f"unknown node {type(e).__name__}")


def dump_program(p: SdpProgram) -> str:
    lines = ["sdpprogram"]
    for v in p.variables:
        sym = " symmetric" if v.symmetric else ""
        lines.append(f"var {v.name} {v.shape[0]} {v.shape[1]}{sym}")
    if p.objective is not None:
        lines.append(f"objective {_dump_expr(p.objective)}")
    for c in p.constraints:
        if isinstance(c, SocSqConstraint):
            lines.append(f"constraint socsq {_dump_expr(c.bound)} {_dump_expr(c.vec_expr)}")
        else:
            lines.append(f"constraint {c.sense} {_dump_expr(c.expr)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _tokenize(s: str):
    return s.replace("(", " ( ").replace(")", " ) ").split()


def _parse_expr(tokens, pos, shapes):
    if tokens[pos] != "(":
        raise SdpError(f"expected '(' at token {pos}")
    head = tokens[pos + 1]
    pos += 2
    if head == "const":
        r, c = int(tokens[pos]), int(tokens[pos + 1])
        pos += 2
        vals = []
        while tokens[pos] != ")":
            vals.append(float(tokens[pos]))
            pos += 1
        arr = np.array(vals).reshape(r, c)
        return Const.of(arr), pos + 1
    if head == "var":
        name = tokens[pos]
        return VarRef(name, shapes[name]), pos + 2
    if head == "scale":
        alpha = float(tokens[pos])
        arg, pos = _parse_expr(tokens, pos + 1, shapes)
        return Scale(alpha, arg), pos + 1
    if head in ("add", "matmul"):
        args = []
        while tokens[pos] != ")":
            a, pos = _parse_expr(tokens, pos, shapes)
            args.append(a)
        node = Add(tuple(args)) if head == "add" else MatMul(*args)
        return node, pos + 1
    if head == "t":
        arg, pos = _parse_expr(tokens, pos, shapes)
        return Transpose(arg), pos + 1
    if head == "vec":
        arg, pos = _parse_expr(tokens, pos, shapes)
        return Vec(arg), pos + 1
    if head == "trace":
        arg, pos = _parse_expr(tokens, pos, shapes)
        return TraceExpr(arg), pos + 1
    if head == "block":
        nr, nc = int(tokens[pos]), int(tokens[pos + 1])
        pos += 2
        cells = []
        for _ in range(nr * nc):
            a, pos = _parse_expr(tokens, pos, shapes)
            cells.append(a)
        rows = tuple(tuple(cells[i * nc:(i + 1) * nc]) for i in range(nr))
        return Block(rows), pos + 1
    raise SdpError(f"unknown expression head {head!r}")


def parse_program(text: str) -> SdpProgram:
    """Parse the debug text format back into an equivalent program."""
    variables = []
    shapes = {}
    objective = None
    constraints = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line in ("sdpprogram", "end"):
            continue
        if line.startswith("var "):
            parts = line.split()
            name, r, c = parts[1], int(parts[2]), int(parts[3])
            sym = len(parts) > 4 and parts[4] == "symmetric"
            variables.append(VarSpec(name, (r, c), sym))
            shapes[name] = (r, c)
        elif line.startswith("objective "):
            tokens = _tokenize(line[len("objective "):])
            objective, _ = _parse_expr(tokens, 0, shapes)
        elif line.startswith("constraint "):
            rest = line[len("constraint "):]
            sense, body = rest.split(" ", 1)
            tokens = _tokenize(body)
            if sense == "socsq":
                bound, pos = _parse_expr(tokens, 0, shapes)
                vexpr, _ = _parse_expr(tokens, pos, shapes)
                constraints.append(SocSqConstraint(bound, vexpr))
            else:
                expr, _ = _parse_expr(tokens, 0, shapes)
                constraints.append(Constraint(expr, sense))
        else:
            raise SdpError(f"unparsable line: {line!r}")
    return SdpProgram(tuple(variables), tuple(constraints), objective)
