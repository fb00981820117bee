"""Coordination condition expressions.

A condition is a small boolean formula over member-count functions of a
coordination component: integer literals, the counters #SourceIn,
#SourceAfter, #SourceBefore, #SourceTotal and #TargetActive, + and -,
the comparisons < <= = >= >, and the boolean connectives & | !.
Evaluation is pure: it only reads a mapping of counter values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Union

COUNTERS = ("#SourceIn", "#SourceAfter", "#SourceBefore", "#SourceTotal", "#TargetActive")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<counter>#[A-Za-z]+)|(?P<int>\d+)|(?P<op><=|>=|==|!=|[-+<>=()!&|])"
    r"|(?P<word>and|or|not)\b)"
)


class ExpressionError(ValueError):
    """Raised for malformed condition expressions."""


@dataclass(frozen=True)
class IntLiteral:
    value: int


@dataclass(frozen=True)
class Counter:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class NotOp:
    operand: "Expr"


Expr = Union[IntLiteral, Counter, BinOp, NotOp]

_ARITH_OPS = {"+", "-"}
_CMP_OPS = {"<", "<=", "=", ">=", ">"}
_BOOL_OPS = {"&", "|"}


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExpressionError(f"unexpected character {text[pos]!r} at position {pos}")
        pos = m.end()
        if m.lastgroup == "word":
            tokens.append({"and": "&", "or": "|", "not": "!"}[m.group("word")])
        elif m.lastgroup == "op":
            op = m.group("op")
            tokens.append("=" if op == "==" else op)
        else:
            tokens.append(m.group(0).strip())
    return tokens


class _Parser:
    def __init__(self, tokens: list[str], text: str):
        self.tokens = tokens
        self.text = text
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ExpressionError(f"unexpected end of expression in {self.text!r}")
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        expr = self.parse_or()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input {self.peek()!r} in {self.text!r}")
        return expr

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.peek() == "|":
            self.take()
            left = BinOp("|", left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.peek() == "&":
            self.take()
            left = BinOp("&", left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        if self.peek() == "!":
            self.take()
            return NotOp(self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_sum()
        if self.peek() in _CMP_OPS:
            op = self.take()
            return BinOp(op, left, self.parse_sum())
        return left

    def parse_sum(self) -> Expr:
        left = self.parse_term()
        while self.peek() in _ARITH_OPS:
            op = self.take()
            left = BinOp(op, left, self.parse_term())
        return left

    def parse_term(self) -> Expr:
        tok = self.take()
        if tok == "(":
            inner = self.parse_or()
            if self.take() != ")":
                raise ExpressionError(f"missing closing parenthesis in {self.text!r}")
            return inner
        if tok.startswith("#"):
            if tok not in COUNTERS:
                raise ExpressionError(f"unknown counter {tok!r}; expected one of {', '.join(COUNTERS)}")
            return Counter(tok)
        if tok.isdigit():
            return IntLiteral(int(tok))
        raise ExpressionError(f"unexpected token {tok!r} in {self.text!r}")


def _is_boolean(expr: Expr) -> bool:
    if isinstance(expr, NotOp):
        return True
    if isinstance(expr, BinOp):
        return expr.op in _CMP_OPS or expr.op in _BOOL_OPS
    return False


def _check_types(expr: Expr) -> str:
    """Return 'int' or 'bool'; reject mixed-type operands."""
    if isinstance(expr, (IntLiteral, Counter)):
        return "int"
    if isinstance(expr, NotOp):
        if _check_types(expr.operand) != "bool":
            raise ExpressionError("! requires a boolean operand")
        return "bool"
    left, right = _check_types(expr.left), _check_types(expr.right)
    if expr.op in _ARITH_OPS or expr.op in _CMP_OPS:
        if left != "int" or right != "int":
            raise ExpressionError(f"operator {expr.op!r} requires integer operands")
        return "int" if expr.op in _ARITH_OPS else "bool"
    if left != "bool" or right != "bool":
        raise ExpressionError(f"operator {expr.op!r} requires boolean operands")
    return "bool"


def _parse_cached(text: str) -> Expr:
    expr = _Parser(_tokenize(text), text).parse()
    if _check_types(expr) != "bool":
        raise ExpressionError(f"expression {text!r} does not evaluate to a boolean")
    return expr


_CACHE: dict[str, Expr] = {}


def parse_expression(text: str) -> Expr:
    """Parse a condition expression; the top level must be boolean.

    Parsed trees are immutable, so identical texts share one tree.
    """
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    cached = _CACHE.get(text)
    if cached is None:
        cached = _CACHE[text] = _parse_cached(text)
    return cached


def evaluate(expr: Expr, counts: Mapping[str, int]) -> bool | int:
    if isinstance(expr, IntLiteral):
        return expr.value
    if isinstance(expr, Counter):
        return counts[expr.name]
    if isinstance(expr, NotOp):
        return not evaluate(expr.operand, counts)
    left = evaluate(expr.left, counts)
    right = evaluate(expr.right, counts)
    op = expr.op
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == "=":
        return left == right
    if op == ">=":
        return left >= right
    if op == ">":
        return left > right
    if op == "&":
        return bool(left) and bool(right)
    return bool(left) or bool(right)


def counters_used(expr: Expr) -> set[str]:
    if isinstance(expr, Counter):
        return {expr.name}
    if isinstance(expr, NotOp):
        return counters_used(expr.operand)
    if isinstance(expr, BinOp):
        return counters_used(expr.left) | counters_used(expr.right)
    return set()


_PY_OPS = {"+": "+", "-": "-", "<": "<", "<=": "<=", "=": "==", ">=": ">=", ">": ">",
           "&": " and ", "|": " or "}
_COUNTER_VARS = {"#SourceIn": "si", "#SourceAfter": "sa", "#SourceBefore": "sb",
                 "#SourceTotal": "st", "#TargetActive": "ta"}


def _to_python(expr: Expr) -> str:
    if isinstance(expr, IntLiteral):
        return str(expr.value)
    if isinstance(expr, Counter):
        return _COUNTER_VARS[expr.name]
    if isinstance(expr, NotOp):
        return f"(not {_to_python(expr.operand)})"
    return f"({_to_python(expr.left)}{_PY_OPS[expr.op]}{_to_python(expr.right)})"


_COMPILED: dict[int, Any] = {}


def compile_expression(expr: Expr):
    """Compile a parsed tree to a callable (si, sa, sb, st, ta) -> bool."""
    fn = _COMPILED.get(id(expr))
    if fn is None:
        source = f"lambda si, sa, sb, st, ta: bool({_to_python(expr)})"
        fn = _COMPILED[id(expr)] = eval(source, {"__builtins__": {"bool": bool}})
    return fn
