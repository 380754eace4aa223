"""Round-trip: render(parse(text)) must re-parse to the identical AST."""

import hypothesis.strategies as st
from hypothesis import given, settings

from ldmlang.frontend import parse_program, render
from ldmlang.frontend.nodes import (AssignStmt, BinOp, Call, Const, DistExpr,
                                    IndexDecl, IndexVar, IntLiteral, Lag,
                                    ProgramAst, Ref, SampleStmt, VarRef)

from conftest import CORPUS, model_text


def roundtrip(ast):
    return parse_program(render(ast))


def test_corpus_round_trips():
    for name in CORPUS:
        first = parse_program(model_text(name))
        assert roundtrip(first) == first, name


def test_example2_round_trip():
    ast = parse_program("ProgramName: Example2\nIndices: t 0 4\n"
                        "x[t] ~ N(0,1)\n")
    assert roundtrip(ast) == ast


def test_precedence_preserved():
    # (1+2)*3 must not re-render as 1+2*3
    ast = parse_program("ProgramName: M\nx = (1 + 2) * 3\ny = 1 + 2 * 3\n")
    again = roundtrip(ast)
    assert again == ast
    assert again.statements[0].rhs != again.statements[1].rhs


def test_call_wrapping_binop():
    ast = parse_program("ProgramName: M\nx = exp(2 * 3)\n")
    assert roundtrip(ast) == ast


def test_negative_constant_round_trip():
    ast = parse_program("ProgramName: M\nx ~ N(-1.5, 1)\nz = -2.25\n")
    assert roundtrip(ast) == ast


def test_subtraction_associativity():
    # 1 - (2 - 3) needs parentheses; (1 - 2) - 3 does not
    ast = ProgramAst("M", statements=(
        AssignStmt(VarRef("x"), BinOp("-", Const(1.0),
                                      BinOp("-", Const(2.0), Const(3.0)))),
        AssignStmt(VarRef("y"), BinOp("-", BinOp("-", Const(1.0), Const(2.0)),
                                      Const(3.0))),
    ))
    again = roundtrip(ast)
    assert again.statements[0].rhs == ast.statements[0].rhs
    assert again.statements[1].rhs == ast.statements[1].rhs


def test_division_right_operand_parenthesized():
    ast = ProgramAst("M", statements=(
        AssignStmt(VarRef("x"), BinOp("/", Const(1.0),
                                      BinOp("*", Const(2.0), Const(3.0)))),))
    assert roundtrip(ast) == ast


# --- property: arbitrary well-formed ASTs survive the round trip ---

_names = st.sampled_from(["a", "b2", "mu", "sigma_x", "w_ee"])
_index_terms = st.one_of(
    st.just(IndexVar("t")),
    st.builds(IntLiteral, st.integers(0, 9)),
    st.builds(lambda o: Lag("t", o), st.integers(1, 3)),
)


def _exprs(depth):
    base = st.one_of(
        st.builds(Const, st.floats(-100, 100, allow_nan=False).map(
            lambda v: round(v, 3))),
        st.builds(lambda n: Ref(VarRef(n)), _names),
        st.builds(lambda term: Ref(VarRef("x", (term,))), _index_terms),
    )
    if depth == 0:
        return base
    sub = _exprs(depth - 1)
    return st.one_of(
        base,
        st.builds(BinOp, st.sampled_from("+-*/"), sub, sub),
        st.builds(lambda a: Call("exp", (a,)), sub),
        st.builds(lambda a, b: Call("pow", (a, b)), sub, sub),
        st.builds(lambda a: BinOp("-", Const(0.0), a), sub),
    )


_stmts = st.one_of(
    st.builds(lambda e: AssignStmt(VarRef("d"), e), _exprs(3)),
    st.builds(lambda e1, e2: SampleStmt(VarRef("x", (IndexVar("t"),)),
                                        DistExpr("N", (e1, e2))),
              _exprs(2), _exprs(2)),
    st.builds(lambda e: SampleStmt(VarRef("s"), DistExpr("Exp", (e,))),
              _exprs(2)),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(_stmts, min_size=1, max_size=6))
def test_round_trip_property(stmts):
    ast = ProgramAst("Prop", indices=(IndexDecl("t", 0, 9),),
                     statements=tuple(stmts))
    assert roundtrip(ast) == ast
