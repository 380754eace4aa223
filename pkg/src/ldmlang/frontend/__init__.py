"""Language frontend: tokenizer, parser, validator, and renderer."""

from .lexer import Token, tokenize
from .nodes import (
    ArrayLookup, AssignStmt, BinOp, Call, Const, DistExpr, Expr, IndexDecl,
    IndexTerm, IndexVar, IntLiteral, Lag, ProgramAst, Ref, SampleStmt, Span,
    Stmt, VarRef, FUNCTIONS,
)
from .parser import parse_program
from .render import render, render_expr, render_stmt, render_var_ref
from .validate import Diagnostic, validate

__all__ = [
    "Token", "tokenize", "parse_program", "render", "render_expr",
    "render_stmt", "render_var_ref", "validate", "Diagnostic",
    "ArrayLookup", "AssignStmt", "BinOp", "Call", "Const", "DistExpr", "Expr",
    "IndexDecl", "IndexTerm", "IndexVar", "IntLiteral", "Lag", "ProgramAst",
    "Ref", "SampleStmt", "Span", "Stmt", "VarRef", "FUNCTIONS",
]
