"""Recursive-descent parser for the textual specification grammar.

Grammar (whitespace-insensitive)::

    formula := term (("or" | "->") term)*
    term    := factor ("and" factor)*
    factor  := "not" factor | "G[" num "," num "]" factor
             | "F[" num "," num "]" factor | "X" factor
             | "(" formula ")" | atom
    atom    := ident "." axis "in (" num "," num ")"
             | "dist(" ident "," ident ") >= " num
             | "bladedist(" ident "," ident ") in (" num "," num ")"
             | "speed(" ident ") in (" num "," num ")"
             | ident

Temporal bounds are written in seconds and converted to sample counts while
parsing, using the sampling period of the binding context.  Bare identifiers
are macros (named subformulas, e.g. a vehicle's home box); ``p<digits>``
identifiers name vehicles; segment identifiers resolve to 3-D segments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .formula import (
    And,
    AxisBand,
    Eventually,
    Formula,
    Implies,
    Next,
    Not,
    Or,
    PairDistance,
    Pred,
    SegmentDistanceBand,
    SpeedBand,
    Always,
)

__all__ = ["parse", "BindContext", "StlSyntaxError", "UnknownIdentifierError", "samples_from_seconds"]


class StlSyntaxError(Exception):
    """Input does not conform to the grammar."""

    def __init__(self, line: int, col: int, expected: Sequence[str], found: str):
        self.line = line
        self.col = col
        self.expected = tuple(expected)
        self.found = found
        exp = " or ".join(self.expected)
        super().__init__(f"line {line}, column {col}: expected {exp}, found {found}")


class UnknownIdentifierError(Exception):
    """An identifier does not resolve against the binding context."""

    def __init__(self, name: str, line: int, col: int, kind: str):
        self.name = name
        self.line = line
        self.col = col
        self.kind = kind
        super().__init__(f"line {line}, column {col}: unknown {kind} '{name}'")


@dataclass
class BindContext:
    """Names and units the parser binds against."""

    ts: float = 1.0
    vehicles: Optional[Sequence[int]] = None
    segments: Dict[str, Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = field(
        default_factory=dict
    )
    macros: Dict[str, Formula] = field(default_factory=dict)


def samples_from_seconds(t: float, ts: float) -> int:
    """Convert seconds to a sample count, rounding halves up."""
    import math

    return int(math.floor(t / ts + 0.5))


_TOKEN_RE = re.compile(
    r"""
    (?P<num>-?\d+(\.\d+)?([eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|>=|[()\[\],.])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "ident" | "op" | "end"
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    line, col = 1, 1
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            newlines = chunk.count("\n")
            if newlines:
                line += newlines
                col = len(chunk) - chunk.rfind("\n")
            else:
                col += len(chunk)
            continue
        if kind == "bad":
            raise StlSyntaxError(line, col, ("a token",), repr(chunk))
        tokens.append(_Token(kind, chunk, line, col))
        col += len(chunk)
    tokens.append(_Token("end", "<end of input>", line, col))
    return tokens


_KEYWORDS = {"not", "and", "or", "in", "G", "F", "X", "dist", "speed", "bladedist", "x", "y", "z"}

_FACTOR_STARTS = ('"not"', '"G["', '"F["', '"X"', '"("', "an atom")


class _Parser:
    def __init__(self, tokens: List[_Token], ctx: BindContext):
        self.tokens = tokens
        self.pos = 0
        self.ctx = ctx

    # -- token helpers ----------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at_op(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text == text

    def at_word(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text == text

    def fail(self, expected: Sequence[str]):
        tok = self.peek()
        found = f'"{tok.text}"' if tok.kind != "end" else tok.text
        raise StlSyntaxError(tok.line, tok.col, expected, found)

    def expect_op(self, text: str) -> _Token:
        if not self.at_op(text):
            self.fail((f'"{text}"',))
        return self.advance()

    def expect_word(self, text: str) -> _Token:
        if not self.at_word(text):
            self.fail((f'"{text}"',))
        return self.advance()

    def expect_num(self) -> Tuple[float, _Token]:
        tok = self.peek()
        if tok.kind != "num":
            self.fail(("a number",))
        self.advance()
        return float(tok.text), tok

    def expect_ident(self) -> _Token:
        tok = self.peek()
        if tok.kind != "ident" or tok.text in ("not", "and", "or", "in"):
            self.fail(("an identifier",))
        return self.advance()

    # -- grammar ----------------------------------------------------------

    def formula(self) -> Formula:
        # "or" folds n-ary within one chain; a parenthesized Or stays nested
        node = self.term()
        chain = False
        while True:
            if self.at_word("or"):
                self.advance()
                rhs = self.term()
                if chain:
                    node = Or(node.children + (rhs,))
                else:
                    node = Or((node, rhs))
                    chain = True
            elif self.at_op("->"):
                self.advance()
                node = Implies(node, self.term())
                chain = False
            else:
                return node

    def term(self) -> Formula:
        parts = [self.factor()]
        while self.at_word("and"):
            self.advance()
            parts.append(self.factor())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def factor(self) -> Formula:
        if self.at_word("not"):
            self.advance()
            return Not(self.factor())
        if self.at_word("G") or self.at_word("F"):
            word = self.advance()
            interval = self.interval()
            child = self.factor()
            cls = Always if word.text == "G" else Eventually
            return cls(interval, child)
        if self.at_word("X"):
            self.advance()
            return Next(self.factor())
        if self.at_op("("):
            self.advance()
            node = self.formula()
            self.expect_op(")")
            return node
        if self.peek().kind == "ident":
            return self.atom()
        self.fail(_FACTOR_STARTS)

    def interval(self) -> Tuple[int, int]:
        self.expect_op("[")
        lo_s, lo_tok = self.expect_num()
        self.expect_op(",")
        hi_s, hi_tok = self.expect_num()
        self.expect_op("]")
        lo = samples_from_seconds(lo_s, self.ctx.ts)
        hi = samples_from_seconds(hi_s, self.ctx.ts)
        if lo < 0:
            raise StlSyntaxError(lo_tok.line, lo_tok.col, ("a time >= 0",), lo_tok.text)
        if hi < lo:
            raise StlSyntaxError(
                hi_tok.line, hi_tok.col, ("an upper bound >= the lower bound",), hi_tok.text
            )
        return (lo, hi)

    def band(self) -> Tuple[float, float, _Token]:
        self.expect_op("(")
        lo, _ = self.expect_num()
        self.expect_op(",")
        hi, hi_tok = self.expect_num()
        self.expect_op(")")
        if hi <= lo:
            raise StlSyntaxError(hi_tok.line, hi_tok.col, ("an upper bound > the lower bound",), hi_tok.text)
        return lo, hi, hi_tok

    def vehicle(self, tok: _Token) -> int:
        m = re.fullmatch(r"p(\d+)", tok.text)
        if not m:
            raise UnknownIdentifierError(tok.text, tok.line, tok.col, "vehicle")
        vid = int(m.group(1))
        if self.ctx.vehicles is not None and vid not in self.ctx.vehicles:
            raise UnknownIdentifierError(tok.text, tok.line, tok.col, "vehicle")
        return vid

    def atom(self) -> Formula:
        tok = self.expect_ident()
        if tok.text == "dist":
            self.expect_op("(")
            a = self.vehicle(self.expect_ident())
            self.expect_op(",")
            b = self.vehicle(self.expect_ident())
            self.expect_op(")")
            self.expect_op(">=")
            gamma, _ = self.expect_num()
            lo_id, hi_id = sorted((a, b))
            return Pred(PairDistance(lo_id, hi_id, gamma))
        if tok.text == "speed":
            self.expect_op("(")
            v = self.vehicle(self.expect_ident())
            self.expect_op(")")
            self.expect_word("in")
            lo, hi, _ = self.band()
            return Pred(SpeedBand(v, lo, hi))
        if tok.text == "bladedist":
            self.expect_op("(")
            v = self.vehicle(self.expect_ident())
            self.expect_op(",")
            seg_tok = self.expect_ident()
            self.expect_op(")")
            self.expect_word("in")
            lo, hi, _ = self.band()
            if seg_tok.text not in self.ctx.segments:
                raise UnknownIdentifierError(seg_tok.text, seg_tok.line, seg_tok.col, "segment")
            seg_a, seg_b = self.ctx.segments[seg_tok.text]
            return Pred(
                SegmentDistanceBand(
                    v,
                    seg_tok.text,
                    center=(lo + hi) / 2.0,
                    halfwidth=(hi - lo) / 2.0,
                    seg_a=tuple(seg_a),
                    seg_b=tuple(seg_b),
                )
            )
        if self.at_op("."):
            self.advance()
            axis_tok = self.expect_ident()
            if axis_tok.text not in ("x", "y", "z"):
                raise StlSyntaxError(axis_tok.line, axis_tok.col, ('"x"', '"y"', '"z"'), f'"{axis_tok.text}"')
            self.expect_word("in")
            lo, hi, _ = self.band()
            v = self.vehicle(tok)
            axis = ("x", "y", "z").index(axis_tok.text) + 1
            return Pred(AxisBand(v, axis, lo, hi))
        # bare identifier: macro
        if tok.text in self.ctx.macros:
            return self.ctx.macros[tok.text]
        raise UnknownIdentifierError(tok.text, tok.line, tok.col, "macro")


def parse(text: str, ctx: Optional[BindContext] = None) -> Formula:
    """Parse a specification string into a formula AST.

    Raises :class:`StlSyntaxError` on malformed input and
    :class:`UnknownIdentifierError` when a vehicle, segment or macro name
    does not resolve against ``ctx``.
    """
    ctx = ctx or BindContext()
    parser = _Parser(_tokenize(text), ctx)
    node = parser.formula()
    if parser.peek().kind != "end":
        parser.fail(('"or"', '"->"', '"and"', "end of input"))
    return node
