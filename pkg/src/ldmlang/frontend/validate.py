"""Static well-formedness checks on a parsed program.

validate() returns a list of diagnostics rather than raising: the CLI prints
them all, and an empty list is the signal that the program can go on to graph
construction. Checks here are local/static; global structure problems
(coverage gaps, overlaps, cycles) are the graph builder's job.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import distributions
from .nodes import (
    ArrayLookup, AssignStmt, Call, IndexVar, IntLiteral, Lag, ProgramAst,
    Ref, SampleStmt, Span, VarRef, FUNCTIONS, stmt_exprs, walk_exprs,
    walk_index_terms,
)


@dataclass(slots=True)
class Diagnostic:
    code: str
    message: str
    line: int = 0
    column: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.code}: {self.message}"


def _expr_refs(stmt):
    for expr in stmt_exprs(stmt):
        for sub in walk_exprs(expr):
            if isinstance(sub, Ref):
                yield sub.ref


def validate(ast: ProgramAst) -> list[Diagnostic]:
    """All static diagnostics for `ast`, ordered by source position."""
    out: list[Diagnostic] = []

    def emit(code: str, message: str, span: Span) -> None:
        out.append(Diagnostic(code, message, span.line, span.column))

    index_names = set()
    declared = {}
    for decl in ast.indices:
        if decl.name in index_names:
            emit("DuplicateIndex", f"index {decl.name!r} declared twice", decl.span)
        index_names.add(decl.name)
        declared.setdefault(decl.name, decl)
        if decl.lo > decl.hi:
            emit("EmptyIndexRange",
                 f"index {decl.name!r} has empty range {decl.lo}..{decl.hi}", decl.span)

    input_names = set()
    for name in ast.inputs:
        if name in input_names:
            emit("DuplicateInput", f"input {name!r} declared twice", ast.span)
        if name in index_names:
            emit("NameCollision", f"{name!r} is both an index and an input", ast.span)
        input_names.add(name)

    variables = {s.lhs.name for s in ast.statements}
    for v in sorted(variables & index_names):
        span = next(s.lhs.span for s in ast.statements if s.lhs.name == v)
        emit("NameCollision", f"{v!r} is both an index and a variable", span)
    for v in sorted(variables & input_names):
        span = next(s.lhs.span for s in ast.statements if s.lhs.name == v)
        emit("NameCollision", f"{v!r} is both an input and a variable", span)

    # arity of every name across all uses must agree
    arities: dict[str, int] = {}

    def check_arity(name: str, n: int, span: Span) -> None:
        prev = arities.setdefault(name, n)
        if prev != n:
            emit("ArityMismatch",
                 f"{name!r} used with {n} index term(s) but previously {prev}", span)

    defined_scalars: set[str] = set()

    def check_index_term(term, bound: set[str], span_owner: Span) -> None:
        for t in walk_index_terms(term):
            if isinstance(t, (IndexVar, Lag)):
                if t.name not in index_names:
                    emit("UndeclaredIndex",
                         f"{t.name!r} is not a declared index", t.span)
                elif t.name not in bound:
                    emit("UnboundIndex",
                         f"index {t.name!r} does not appear on the left-hand side", t.span)
                if isinstance(t, Lag):
                    decl = declared.get(t.name)
                    if t.offset < 1:
                        emit("InvalidLagOffset",
                             f"lag offset on {t.name!r} must be at least 1",
                             t.span)
                    elif decl is not None and t.offset > decl.hi - decl.lo:
                        # the restricted domain lo+offset..hi would be empty
                        emit("InvalidLagOffset",
                             f"lag {t.offset} on {t.name!r} exceeds the "
                             f"declared range {decl.lo}..{decl.hi}", t.span)
            elif isinstance(t, ArrayLookup):
                if t.input_name not in input_names:
                    emit("UnknownInput",
                         f"{t.input_name!r} is not a declared input", t.span)
                check_arity(t.input_name, 1, t.span)

    for stmt in ast.statements:
        lhs = stmt.lhs
        check_arity(lhs.name, len(lhs.indices), lhs.span)
        bound: set[str] = set()
        for term in lhs.indices:
            if isinstance(term, Lag):
                emit("LhsOffsetForbidden",
                     f"lagged index {term.name}-{term.offset} is not allowed "
                     "on the left-hand side", term.span)
                bound.add(term.name)
            elif isinstance(term, ArrayLookup):
                emit("LhsLookupForbidden",
                     "input lookups are not allowed on the left-hand side", term.span)
            elif isinstance(term, IndexVar):
                if term.name not in index_names:
                    emit("UndeclaredIndex",
                         f"{term.name!r} is not a declared index", term.span)
                if term.name in bound:
                    emit("DuplicateAxis",
                         f"index {term.name!r} repeats on the left-hand side", term.span)
                bound.add(term.name)
            # IntLiteral on the lhs pins an axis; nothing to check

        if isinstance(stmt, SampleStmt):
            spec = distributions.lookup(stmt.dist.name)
            if spec is None:
                emit("UnknownDistribution",
                     f"unknown distribution {stmt.dist.name!r}", stmt.dist.span)
            elif len(stmt.dist.params) != spec.arity:
                emit("DistributionArity",
                     f"{spec.name} takes {spec.arity} parameter(s), "
                     f"got {len(stmt.dist.params)}", stmt.dist.span)

        for expr in stmt_exprs(stmt):
            for sub in walk_exprs(expr):
                if isinstance(sub, Call):
                    if sub.fn not in FUNCTIONS:
                        emit("UnknownFunction", f"unknown function {sub.fn!r}", sub.span)
                    elif len(sub.args) != FUNCTIONS[sub.fn]:
                        emit("FunctionArity",
                             f"{sub.fn} takes {FUNCTIONS[sub.fn]} argument(s), "
                             f"got {len(sub.args)}", sub.span)

        for ref in _expr_refs(stmt):
            name = ref.name
            if name in index_names and not ref.indices:
                emit("NameCollision",
                     f"index {name!r} used as a value", ref.span)
                continue
            if name in input_names:
                check_arity(name, len(ref.indices), ref.span)
            elif name in variables:
                check_arity(name, len(ref.indices), ref.span)
                if not ref.indices and name not in defined_scalars:
                    emit("UseBeforeDefinition",
                         f"{name!r} is used before it is defined", ref.span)
            else:
                emit("UndefinedVariable",
                     f"{name!r} is not defined by any statement, input, or index",
                     ref.span)
            for term in ref.indices:
                check_index_term(term, bound, ref.span)

        if not lhs.indices:
            defined_scalars.add(lhs.name)

    out.sort(key=lambda d: (d.line, d.column))
    return out
