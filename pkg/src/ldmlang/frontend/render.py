"""Canonical text rendering of a ProgramAst.

Parenthesization is minimal but structure preserving: parsing the rendered
text yields a structurally equal AST (the parser is left associative, so
right operands at equal precedence keep their parens).
"""

from __future__ import annotations

from .nodes import (
    ArrayLookup, AssignStmt, BinOp, Call, Const, DistExpr, Expr, IndexTerm,
    IndexVar, IntLiteral, Lag, ProgramAst, Ref, SampleStmt, Stmt, VarRef,
)

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def render_index_term(term: IndexTerm) -> str:
    if isinstance(term, IndexVar):
        return term.name
    if isinstance(term, IntLiteral):
        return str(term.value)
    if isinstance(term, Lag):
        return f"{term.name}-{term.offset}"
    return f"{term.input_name}[{render_index_term(term.inner)}]"


def render_var_ref(ref: VarRef) -> str:
    if not ref.indices:
        return ref.name
    inner = ",".join(render_index_term(t) for t in ref.indices)
    return f"{ref.name}[{inner}]"


def _fmt_const(v: float) -> str:
    return repr(v)


def render_expr(expr: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(expr, Const):
        text = _fmt_const(expr.value)
        # a negative literal binds like a unary minus, so guard it in products
        if expr.value < 0 and parent_prec > 0:
            return f"({text})"
        return text
    if isinstance(expr, Ref):
        return render_var_ref(expr.ref)
    if isinstance(expr, Call):
        args = ", ".join(render_expr(a) for a in expr.args)
        return f"{expr.fn}({args})"
    prec = _PREC[expr.op]
    left = render_expr(expr.left, prec, right_side=False)
    right = render_expr(expr.right, prec, right_side=True)
    text = f"{left} {expr.op} {right}"
    if prec < parent_prec or (prec == parent_prec and right_side):
        return f"({text})"
    return text


def render_stmt(stmt: Stmt) -> str:
    lhs = render_var_ref(stmt.lhs)
    if isinstance(stmt, AssignStmt):
        return f"{lhs} = {render_expr(stmt.rhs)}"
    return f"{lhs} ~ {render_dist(stmt.dist)}"


def render_dist(dist: DistExpr) -> str:
    params = ", ".join(render_expr(p) for p in dist.params)
    return f"{dist.name}({params})"


def render(ast: ProgramAst) -> str:
    """Render a whole program as canonical model source."""
    lines = [f"ProgramName: {ast.name}"]
    if ast.indices:
        decls = ", ".join(f"{d.name} {d.lo} {d.hi}" for d in ast.indices)
        lines.append(f"Indices: {decls}")
    if ast.inputs:
        lines.append("Inputs: " + ", ".join(ast.inputs))
    lines.extend(render_stmt(s) for s in ast.statements)
    return "\n".join(lines) + "\n"
