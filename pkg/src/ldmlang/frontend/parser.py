"""Recursive-descent parser producing ProgramAst.

Grammar sketch (newline separated, `#` comments):

    program    : 'ProgramName' ':' IDENT NL header* (stmt NL)* EOF
    header     : 'Indices' ':' decl (',' decl)*   | 'Inputs' ':' IDENT (',' IDENT)*
    decl       : IDENT INT INT                      # inclusive bounds
    stmt       : var_ref '=' expr | var_ref '~' IDENT '(' expr (',' expr)* ')'
    var_ref    : IDENT ('[' index_term (',' index_term)* ']')?
    index_term : INT | IDENT ('-' INT)? | IDENT '[' index_term ']'
    expr       : arithmetic over + - * / with calls, parens, unary minus

Anything malformed raises ModelSyntaxError with position and an
expected-token hint; the parser never guesses.
"""

from __future__ import annotations

from ..errors import ModelSyntaxError
from .lexer import Token, tokenize
from .nodes import (
    ArrayLookup, AssignStmt, BinOp, Call, Const, DistExpr, IndexDecl,
    IndexTerm, IndexVar, IntLiteral, Lag, ProgramAst, Ref, SampleStmt,
    Span, Stmt, VarRef,
)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self._toks = tokens
        self._i = 0

    # --- token plumbing ---

    def _peek(self, k: int = 0) -> Token:
        return self._toks[min(self._i + k, len(self._toks) - 1)]

    def _advance(self) -> Token:
        tok = self._toks[self._i]
        if tok.kind != "EOF":
            self._i += 1
        return tok

    def _expect(self, kind: str, expected: str) -> Token:
        tok = self._peek()
        if tok.kind != kind:
            raise ModelSyntaxError(
                f"unexpected {tok.value!r}" if tok.kind != "EOF" else "unexpected end of input",
                tok.line, tok.column, expected=expected)
        return self._advance()

    def _skip_newlines(self) -> None:
        while self._peek().kind == "NEWLINE":
            self._advance()

    @staticmethod
    def _span(tok: Token) -> Span:
        return Span(tok.line, tok.column)

    def _int(self, expected: str) -> int:
        neg = False
        if self._peek().kind == "MINUS":
            self._advance()
            neg = True
        tok = self._expect("NUMBER", expected)
        if not tok.is_int():
            raise ModelSyntaxError(f"expected an integer, got {tok.value!r}",
                                   tok.line, tok.column, expected=expected)
        v = int(tok.value)
        return -v if neg else v

    # --- program structure ---

    def parse_program(self) -> ProgramAst:
        self._skip_newlines()
        head = self._expect("IDENT", "'ProgramName'")
        if head.value != "ProgramName":
            raise ModelSyntaxError(f"model must start with a ProgramName header, got {head.value!r}",
                                   head.line, head.column, expected="'ProgramName'")
        self._expect("COLON", "':'")
        name = self._expect("IDENT", "a program name").value
        if self._peek().kind != "EOF":
            self._expect("NEWLINE", "end of line")
        self._skip_newlines()

        indices: tuple[IndexDecl, ...] = ()
        inputs: tuple[str, ...] = ()
        seen: set[str] = set()
        while (self._peek().kind == "IDENT"
               and self._peek().value in ("Indices", "Inputs")
               and self._peek(1).kind == "COLON"):
            word = self._advance()
            if word.value in seen:
                raise ModelSyntaxError(f"duplicate {word.value} header",
                                       word.line, word.column)
            seen.add(word.value)
            self._advance()  # colon
            if word.value == "Indices":
                indices = self._index_decls()
            else:
                inputs = self._name_list()
            if self._peek().kind != "EOF":
                self._expect("NEWLINE", "end of line")
            self._skip_newlines()

        stmts: list[Stmt] = []
        while self._peek().kind != "EOF":
            stmts.append(self._statement())
            if self._peek().kind != "EOF":
                self._expect("NEWLINE", "end of line")
            self._skip_newlines()
        return ProgramAst(name=name, indices=indices, inputs=inputs,
                          statements=tuple(stmts), span=Span(head.line, head.column))

    def _index_decls(self) -> tuple[IndexDecl, ...]:
        decls = []
        while True:
            tok = self._expect("IDENT", "an index name")
            lo = self._int("a lower bound")
            hi = self._int("an upper bound")
            decls.append(IndexDecl(tok.value, lo, hi, span=self._span(tok)))
            if self._peek().kind != "COMMA":
                break
            self._advance()
        return tuple(decls)

    def _name_list(self) -> tuple[str, ...]:
        names = [self._expect("IDENT", "an input name").value]
        while self._peek().kind == "COMMA":
            self._advance()
            names.append(self._expect("IDENT", "an input name").value)
        return tuple(names)

    # --- statements ---

    def _statement(self) -> Stmt:
        lhs = self._var_ref()
        tok = self._peek()
        if tok.kind == "EQUALS":
            self._advance()
            return AssignStmt(lhs, self._expr(), span=lhs.span)
        if tok.kind == "TILDE":
            self._advance()
            return SampleStmt(lhs, self._dist(), span=lhs.span)
        raise ModelSyntaxError(
            f"unexpected {tok.value!r} after {lhs.name!r}",
            tok.line, tok.column, expected="'=' or '~'")

    def _dist(self) -> DistExpr:
        tok = self._expect("IDENT", "a distribution name")
        self._expect("LPAREN", "'('")
        params = [self._expr()]
        while self._peek().kind == "COMMA":
            self._advance()
            params.append(self._expr())
        self._expect("RPAREN", "')'")
        return DistExpr(tok.value, tuple(params), span=self._span(tok))

    def _var_ref(self) -> VarRef:
        tok = self._expect("IDENT", "a variable name")
        terms: tuple[IndexTerm, ...] = ()
        if self._peek().kind == "LBRACKET":
            self._advance()
            parts = [self._index_term()]
            while self._peek().kind == "COMMA":
                self._advance()
                parts.append(self._index_term())
            self._expect("RBRACKET", "']'")
            terms = tuple(parts)
        return VarRef(tok.value, terms, span=self._span(tok))

    def _index_term(self) -> IndexTerm:
        tok = self._peek()
        if tok.kind == "NUMBER" or tok.kind == "MINUS":
            return IntLiteral(self._int("an index value"), span=self._span(tok))
        if tok.kind == "IDENT":
            self._advance()
            if self._peek().kind == "MINUS":
                self._advance()
                off = self._expect("NUMBER", "a lag offset")
                if not off.is_int():
                    raise ModelSyntaxError(f"lag offset must be an integer, got {off.value!r}",
                                           off.line, off.column)
                if int(off.value) < 1:
                    raise ModelSyntaxError("lag offset must be at least 1",
                                           off.line, off.column)
                return Lag(tok.value, int(off.value), span=self._span(tok))
            if self._peek().kind == "LBRACKET":
                self._advance()
                inner = self._index_term()
                self._expect("RBRACKET", "']'")
                return ArrayLookup(tok.value, inner, span=self._span(tok))
            return IndexVar(tok.value, span=self._span(tok))
        raise ModelSyntaxError(f"unexpected {tok.value!r} in index position",
                               tok.line, tok.column,
                               expected="an index variable, integer, or lookup")

    # --- expressions ---

    def _expr(self) -> "BinOp | Const | Ref | Call":
        left = self._term()
        while self._peek().kind in ("PLUS", "MINUS"):
            op = self._advance()
            left = BinOp(op.value, left, self._term(), span=self._span(op))
        return left

    def _term(self):
        left = self._unary()
        while self._peek().kind in ("STAR", "SLASH"):
            op = self._advance()
            left = BinOp(op.value, left, self._unary(), span=self._span(op))
        return left

    def _unary(self):
        if self._peek().kind == "MINUS":
            tok = self._advance()
            inner = self._unary()
            if isinstance(inner, Const):
                return Const(-inner.value, span=self._span(tok))
            return BinOp("-", Const(0.0, span=self._span(tok)), inner,
                         span=self._span(tok))
        return self._atom()

    def _atom(self):
        tok = self._peek()
        if tok.kind == "NUMBER":
            self._advance()
            return Const(float(tok.value), span=self._span(tok))
        if tok.kind == "LPAREN":
            self._advance()
            inner = self._expr()
            self._expect("RPAREN", "')'")
            return inner
        if tok.kind == "IDENT":
            if self._peek(1).kind == "LPAREN":
                self._advance()
                self._advance()
                args = [self._expr()]
                while self._peek().kind == "COMMA":
                    self._advance()
                    args.append(self._expr())
                self._expect("RPAREN", "')'")
                return Call(tok.value, tuple(args), span=self._span(tok))
            return Ref(self._var_ref(), span=self._span(tok))
        raise ModelSyntaxError(
            f"unexpected {tok.value!r} in expression" if tok.kind != "EOF"
            else "unexpected end of input",
            tok.line, tok.column, expected="a number, name, call, or '('")


def parse_program(text: str) -> ProgramAst:
    """Parse model source text into a ProgramAst.

    Raises IllegalCharacterError or ModelSyntaxError on malformed input.
    """
    return _Parser(tokenize(text)).parse_program()
