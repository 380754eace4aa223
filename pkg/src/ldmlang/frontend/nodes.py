"""AST node types for the modeling language.

Nodes compare structurally; source positions are carried for diagnostics but
excluded from equality so render/parse round-trips compare clean.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(slots=True)
class Span:
    line: int = 0
    column: int = 0


def _span() -> Span:
    return Span()


# --- index terms -------------------------------------------------------------

@dataclass(slots=True)
class IndexVar:
    """A bare index variable in index position, e.g. the t in x[t]."""
    name: str
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class IntLiteral:
    """A concrete index value, e.g. the 0 in x[0]."""
    value: int
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class Lag:
    """A backward offset on an index variable, e.g. t-1. offset >= 1, rhs only."""
    name: str
    offset: int
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class ArrayLookup:
    """An input array indexing an axis, e.g. tank[i] in a[tank[i]]."""
    input_name: str
    inner: "IndexTerm"
    span: Span = field(default_factory=_span, compare=False, repr=False)


IndexTerm = IndexVar | IntLiteral | Lag | ArrayLookup


# --- expressions -------------------------------------------------------------

@dataclass(slots=True)
class Const:
    value: float
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class VarRef:
    """A variable or input reference, possibly indexed: y, y[t], x[n,t-1]."""
    name: str
    indices: tuple[IndexTerm, ...] = ()
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class Ref:
    ref: VarRef
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class Call:
    fn: str
    args: tuple["Expr", ...]
    span: Span = field(default_factory=_span, compare=False, repr=False)


Expr = Const | Ref | BinOp | Call

FUNCTIONS: dict[str, int] = {
    "exp": 1, "log": 1, "expit": 1, "logit": 1, "sqrt": 1, "abs": 1, "pow": 2,
}


# --- statements and program ---------------------------------------------------

@dataclass(slots=True)
class DistExpr:
    name: str
    params: tuple[Expr, ...]
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class AssignStmt:
    lhs: VarRef
    rhs: Expr
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class SampleStmt:
    lhs: VarRef
    dist: DistExpr
    span: Span = field(default_factory=_span, compare=False, repr=False)


Stmt = AssignStmt | SampleStmt


@dataclass(slots=True)
class IndexDecl:
    """Inclusive index range declaration: `t 0 141` covers 0..141."""
    name: str
    lo: int
    hi: int
    span: Span = field(default_factory=_span, compare=False, repr=False)


@dataclass(slots=True)
class ProgramAst:
    name: str
    indices: tuple[IndexDecl, ...] = ()
    inputs: tuple[str, ...] = ()
    statements: tuple[Stmt, ...] = ()
    span: Span = field(default_factory=_span, compare=False, repr=False)

    def index_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.indices)


def walk_exprs(expr: Expr):
    """Yield every sub-expression of `expr`, depth first, including itself."""
    yield expr
    if isinstance(expr, BinOp):
        yield from walk_exprs(expr.left)
        yield from walk_exprs(expr.right)
    elif isinstance(expr, Call):
        for a in expr.args:
            yield from walk_exprs(a)


def stmt_exprs(stmt: Stmt):
    """Yield the top-level rhs expressions of a statement."""
    if isinstance(stmt, AssignStmt):
        yield stmt.rhs
    else:
        yield from stmt.dist.params


def walk_index_terms(term: IndexTerm):
    """Yield `term` and any nested lookup inner terms."""
    yield term
    if isinstance(term, ArrayLookup):
        yield from walk_index_terms(term.inner)
