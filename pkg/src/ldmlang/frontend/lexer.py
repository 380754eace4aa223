"""Hand-rolled tokenizer for model source text.

Newlines separate statements and are significant; `#` comments run to end of
line; anything outside the language's alphabet raises IllegalCharacterError
with a 1-based position.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import IllegalCharacterError

PUNCT = {
    ":": "COLON",
    ",": "COMMA",
    "[": "LBRACKET",
    "]": "RBRACKET",
    "(": "LPAREN",
    ")": "RPAREN",
    "+": "PLUS",
    "-": "MINUS",
    "*": "STAR",
    "/": "SLASH",
    "~": "TILDE",
    "=": "EQUALS",
}

_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | set("0123456789")
_DIGITS = set("0123456789")


@dataclass(slots=True)
class Token:
    kind: str
    value: str
    line: int
    column: int

    def is_int(self) -> bool:
        return self.kind == "NUMBER" and not any(c in self.value for c in ".eE")


class Tokenizer:
    def __init__(self, text: str):
        self._text = text
        self._pos = 0
        self._line = 1
        self._col = 1

    def _peek(self) -> str:
        return self._text[self._pos] if self._pos < len(self._text) else ""

    def _advance(self) -> str:
        ch = self._text[self._pos]
        self._pos += 1
        if ch == "\n":
            self._line += 1
            self._col = 1
        else:
            self._col += 1
        return ch

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        while self._pos < len(self._text):
            ch = self._peek()
            line, col = self._line, self._col
            if ch == "\n":
                self._advance()
                # collapse runs of blank lines into one separator
                if out and out[-1].kind != "NEWLINE":
                    out.append(Token("NEWLINE", "\n", line, col))
                continue
            if ch in " \t\r":
                self._advance()
                continue
            if ch == "#":
                while self._pos < len(self._text) and self._peek() != "\n":
                    self._advance()
                continue
            if ch in PUNCT:
                self._advance()
                out.append(Token(PUNCT[ch], ch, line, col))
                continue
            if ch in _IDENT_START:
                out.append(self._ident(line, col))
                continue
            if ch in _DIGITS or (ch == "." and self._peek_at(1) in _DIGITS):
                out.append(self._number(line, col))
                continue
            raise IllegalCharacterError(f"illegal character {ch!r}", line, col)
        if out and out[-1].kind == "NEWLINE":
            out.pop()
        out.append(Token("EOF", "", self._line, self._col))
        return out

    def _peek_at(self, k: int) -> str:
        p = self._pos + k
        return self._text[p] if p < len(self._text) else ""

    def _ident(self, line: int, col: int) -> Token:
        start = self._pos
        while self._pos < len(self._text) and self._peek() in _IDENT_CONT:
            self._advance()
        return Token("IDENT", self._text[start:self._pos], line, col)

    def _number(self, line: int, col: int) -> Token:
        start = self._pos
        while self._peek() in _DIGITS:
            self._advance()
        if self._peek() == ".":
            self._advance()
            while self._peek() in _DIGITS:
                self._advance()
        if self._peek() in "eE" and (
            self._peek_at(1) in _DIGITS
            or (self._peek_at(1) in "+-" and self._peek_at(2) in _DIGITS)
        ):
            self._advance()
            if self._peek() in "+-":
                self._advance()
            while self._peek() in _DIGITS:
                self._advance()
        return Token("NUMBER", self._text[start:self._pos], line, col)


def tokenize(text: str) -> list[Token]:
    """Tokenize model source; trailing EOF token is always present."""
    return Tokenizer(text).tokens()
