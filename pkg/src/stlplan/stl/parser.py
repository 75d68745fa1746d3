"""Text syntax for STL formulas.

Grammar (loosest binding first)::

    expr    := or ('->' expr)?              a -> b  is sugar for  !a | b
    or      := and ('|' and)*
    and     := until ('&' until)*
    until   := unary ('U[a,b]' unary)*
    unary   := '!' unary | ('G'|'F'|'X') '[a,b]' unary | atom
    atom    := 'true' | NAME | '(' expr ')'

Chains such as ``a & b & c`` become one n-ary node; a parenthesized group
stays a separate node, so unparse/parse is an exact round trip.
"""
import re

from .formula import (And, Always, Eventually, Interval, IntervalError, Next, Not, Or,
                      Pred, StlError, TrueF, UnknownPredicateError, Until)


class StlSyntaxError(StlError):
    def __init__(self, msg, line, col):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<op>[!&|()])
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<lbr>\[)
""", re.VERBOSE)

_TEMPORAL = {"G", "F", "X", "U"}


class _Tok:
    __slots__ = ("kind", "text", "pos", "iv")

    def __init__(self, kind, text, pos, iv=None):
        self.kind, self.text, self.pos, self.iv = kind, text, pos, iv


def _linecol(text, pos):
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _read_interval(text, pos):
    # pos points at '['; returns (Interval, position after ']')
    end = text.find("]", pos)
    if end < 0:
        raise StlSyntaxError("unterminated interval", *_linecol(text, pos))
    body = text[pos + 1:end]
    parts = body.split(",")
    if len(parts) != 2:
        raise StlSyntaxError(f"interval needs two bounds, got [{body}]", *_linecol(text, pos))
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise StlSyntaxError(f"non-numeric interval [{body}]", *_linecol(text, pos)) from None
    try:
        return Interval(lo, hi), end + 1
    except IntervalError as e:
        line, col = _linecol(text, pos)
        raise IntervalError(f"line {line}, column {col}: {e}") from None


def _tokenize(text):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", *_linecol(text, pos))
        kind = m.lastgroup
        if kind == "ws":
            pos = m.end()
            continue
        if kind == "lbr":
            raise StlSyntaxError("interval without a temporal operator", *_linecol(text, pos))
        word = m.group()
        if kind == "name" and word in _TEMPORAL:
            j = m.end()
            while j < len(text) and text[j] in " \t":
                j += 1
            if j < len(text) and text[j] == "[":
                iv, nxt = _read_interval(text, j)
                toks.append(_Tok("temporal", word, pos, iv))
                pos = nxt
                continue
        toks.append(_Tok(kind, word, pos))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, table):
        self.text = text
        self.table = table
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise StlSyntaxError(msg, *_linecol(self.text, tok.pos))

    def is_op(self, text):
        t = self.peek()
        return t.kind in ("op", "arrow") and t.text == text

    def parse(self):
        f = self.expr()
        if self.peek().kind != "end":
            self.fail(f"unexpected {self.peek().text!r}")
        return f

    def expr(self):
        left = self.disj()
        if self.is_op("->"):
            self.take()
            return Or((Not(left), self.expr()))
        return left

    def disj(self):
        items = [self.conj()]
        while self.is_op("|"):
            self.take()
            items.append(self.conj())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conj(self):
        items = [self.until()]
        while self.is_op("&"):
            self.take()
            items.append(self.until())
        return items[0] if len(items) == 1 else And(tuple(items))

    def until(self):
        left = self.unary()
        while self.peek().kind == "temporal" and self.peek().text == "U":
            iv = self.take().iv
            left = Until(iv, left, self.unary())
        return left

    def unary(self):
        t = self.peek()
        if self.is_op("!"):
            self.take()
            return Not(self.unary())
        if t.kind == "temporal":
            if t.text == "U":
                self.fail("until needs a left operand")
            self.take()
            node = {"G": Always, "F": Eventually, "X": Next}[t.text]
            return node(t.iv, self.unary())
        return self.atom()

    def atom(self):
        t = self.take()
        if t.kind == "op" and t.text == "(":
            f = self.expr()
            if not self.is_op(")"):
                self.fail("expected ')'")
            self.take()
            return f
        if t.kind == "name":
            if t.text == "true":
                return TrueF()
            if self.table is not None and t.text not in self.table:
                line, col = _linecol(self.text, t.pos)
                raise UnknownPredicateError(
                    f"line {line}, column {col}: unknown predicate {t.text!r}")
            return Pred(t.text)
        if t.kind == "end":
            self.fail("unexpected end of formula", t)
        self.fail(f"unexpected {t.text!r}", t)


def parse_formula(text, table=None):
    """Parse DSL text into a formula; predicate names are checked against table if given."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text, table).parse()


def _num(x):
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def _iv(iv):
    return f"[{_num(iv.lo)},{_num(iv.hi)}]"


def _wrap(f):
    s = unparse(f)
    return s if isinstance(f, (Pred, TrueF)) else f"({s})"


def unparse(f):
    """Canonical text form; every compound operand is parenthesized."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, Pred):
        return f.id
    if isinstance(f, Not):
        return "!" + _wrap(f.child)
    if isinstance(f, And):
        return " & ".join(_wrap(c) for c in f.children)
    if isinstance(f, Or):
        return " | ".join(_wrap(c) for c in f.children)
    if isinstance(f, Always):
        return "G" + _iv(f.interval) + _wrap(f.child)
    if isinstance(f, Eventually):
        return "F" + _iv(f.interval) + _wrap(f.child)
    if isinstance(f, Next):
        return "X" + _iv(f.interval) + _wrap(f.child)
    if isinstance(f, Until):
        return _wrap(f.left) + " U" + _iv(f.interval) + " " + _wrap(f.right)
    raise StlError(f"unknown formula node {type(f).__name__}")
