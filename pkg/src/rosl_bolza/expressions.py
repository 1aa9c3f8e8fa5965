"""Small expression language for costs, constraints and dynamics.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' uint)?
    atom   := number | ident | '(' expr ')' | func '(' args ')'

Identifiers are ``x<i>``, ``v<i>``, ``u<i>`` (1-based) and ``t``. Functions are
``sin, cos, exp, sqrt, abs, min, max``; ``abs``, ``min`` and ``max`` are the kink
atoms of the nonsmooth fragment. ``^`` binds tighter than unary minus.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ArityError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
    UnsupportedExpressionError,
)
from .models.base import CaseInsensitiveStrEnum

FUNCTIONS: Dict[str, Optional[int]] = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "sqrt": 1,
    "abs": 1,
    "min": None,
    "max": None,
}
KINK_FUNCTIONS = frozenset({"abs", "min", "max"})
IDENTIFIER = re.compile(r"[xvu][1-9][0-9]*|t")

_TOKEN = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),])"
)

# binding power used by the printer
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5

Grad = np.ndarray
ValueFn = Callable[[np.ndarray], float]
DualFn = Callable[[np.ndarray], "tuple[float, Grad]"]


class Curvature(CaseInsensitiveStrEnum):
    CONSTANT = "constant"
    AFFINE = "affine"
    CONVEX = "convex"
    CONCAVE = "concave"
    UNKNOWN = "unknown"


def state_names(n: int) -> List[str]:
    return [f"x{i}" for i in range(1, n + 1)]


def velocity_names(n: int) -> List[str]:
    return [f"v{i}" for i in range(1, n + 1)]


def control_names(m: int) -> List[str]:
    return [f"u{i}" for i in range(1, m + 1)]


class Expression:
    """Base class of all expression nodes.

    Nodes are immutable and compare structurally, so two parses of the same
    text give equal trees.
    """

    precedence = _PREC_ATOM

    def children(self) -> Sequence["Expression"]:
        return ()

    def walk(self) -> Iterable["Expression"]:
        yield self
        for child in self.children():
            yield from child.walk()

    def variables(self) -> set:
        return {node.name for node in self.walk() if isinstance(node, Var)}

    def depends_on(self, names: Iterable[str]) -> bool:
        return bool(self.variables() & set(names))

    def has_kinks(self) -> bool:
        return any(
            isinstance(node, Call) and node.func in KINK_FUNCTIONS
            for node in self.walk()
        )

    def is_constant(self) -> bool:
        return not self.variables()

    def evaluate(self, env: Mapping[str, float]) -> float:
        """Evaluate at a point given as a name -> value mapping.

        Evaluation is total: division by zero and invalid square roots produce
        ``inf``/``nan`` instead of raising.
        """
        with np.errstate(all="ignore"):
            return float(self._eval(env))

    def compile(self, names: Sequence[str]) -> ValueFn:
        """Return ``f(z) -> float`` where ``z[i]`` is the value of ``names[i]``."""
        index = _index_of(self, names)
        fn = self._value_fn(index)

        def call(z: np.ndarray) -> float:
            with np.errstate(all="ignore"):
                return float(fn(z))

        return call

    def compile_gradient(self, names: Sequence[str]) -> DualFn:
        """Return ``g(z) -> (value, gradient)`` by forward-mode differentiation.

        At kinks a branch is selected: ``abs`` uses slope 0 at 0, ``min`` and
        ``max`` the first active argument.
        """
        index = _index_of(self, names)
        fn = self._dual_fn(index, len(names))

        def call(z: np.ndarray) -> "tuple[float, Grad]":
            with np.errstate(all="ignore"):
                value, grad = fn(z)
            return float(value), np.array(grad, dtype=float)

        return call

    def gradient(self, env: Mapping[str, float], names: Sequence[str]) -> np.ndarray:
        fn = self.compile_gradient(list(env.keys()))
        _, grad = fn(np.array([env[key] for key in env], dtype=float))
        position = {key: i for i, key in enumerate(env)}
        return np.array(
            [grad[position[name]] if name in position else 0.0 for name in names]
        )

    def diff(self, name: str) -> "Expression":
        """Exact symbolic partial derivative; kink atoms are rejected."""
        raise NotImplementedError

    def smoothed(self, mu: float) -> "Expression":
        """Replace kink atoms by their square-root smoothings with parameter mu."""
        raise NotImplementedError

    def curvature(self, names: Iterable[str]) -> Curvature:
        """Conservative curvature certificate with respect to ``names``."""
        raise NotImplementedError

    def is_convex_in(self, names: Iterable[str]) -> bool:
        return self.curvature(set(names)) in (
            Curvature.CONSTANT,
            Curvature.AFFINE,
            Curvature.CONVEX,
        )

    def _eval(self, env: Mapping[str, float]) -> Any:
        raise NotImplementedError

    def _value_fn(self, index: Mapping[str, int]) -> Callable:
        raise NotImplementedError

    def _dual_fn(self, index: Mapping[str, int], size: int) -> Callable:
        raise NotImplementedError

    def __str__(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Expression):
    value: float

    def _eval(self, env):
        return np.float64(self.value)

    def _value_fn(self, index):
        value = np.float64(self.value)
        return lambda z: value

    def _dual_fn(self, index, size):
        value = np.float64(self.value)
        zero = np.zeros(size)
        return lambda z: (value, zero)

    def diff(self, name):
        return Num(0.0)

    def smoothed(self, mu):
        return self

    def curvature(self, names):
        return Curvature.CONSTANT

    def __str__(self):
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 else text


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def _eval(self, env):
        try:
            return np.float64(env[self.name])
        except KeyError as e:
            raise UnknownIdentifierError(
                f"No value bound for variable '{self.name}'"
            ) from e

    def _value_fn(self, index):
        i = index[self.name]
        return lambda z: z[i]

    def _dual_fn(self, index, size):
        i = index[self.name]
        unit = np.zeros(size)
        unit[i] = 1.0
        return lambda z: (z[i], unit)

    def diff(self, name):
        return Num(1.0 if name == self.name else 0.0)

    def smoothed(self, mu):
        return self

    def curvature(self, names):
        return Curvature.AFFINE if self.name in names else Curvature.CONSTANT

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expression):
    arg: Expression

    precedence = _PREC_NEG

    def children(self):
        return (self.arg,)

    def _eval(self, env):
        return -self.arg._eval(env)

    def _value_fn(self, index):
        f = self.arg._value_fn(index)
        return lambda z: -f(z)

    def _dual_fn(self, index, size):
        f = self.arg._dual_fn(index, size)

        def fn(z):
            value, grad = f(z)
            return -value, -grad

        return fn

    def diff(self, name):
        return _neg(self.arg.diff(name))

    def smoothed(self, mu):
        return Neg(self.arg.smoothed(mu))

    def curvature(self, names):
        return _flip(self.arg.curvature(names))

    def __str__(self):
        inner = str(self.arg)
        if self.arg.precedence < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"


@dataclass(frozen=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression

    def children(self):
        return (self.left, self.right)

    @property
    def precedence(self):
        return _PREC_ADD if self.op in "+-" else _PREC_MUL

    def _eval(self, env):
        a, b = self.left._eval(env), self.right._eval(env)
        return _apply(self.op, a, b)

    def _value_fn(self, index):
        f, g, op = self.left._value_fn(index), self.right._value_fn(index), self.op
        if op == "+":
            return lambda z: f(z) + g(z)
        if op == "-":
            return lambda z: f(z) - g(z)
        if op == "*":
            return lambda z: f(z) * g(z)
        return lambda z: f(z) / g(z)

    def _dual_fn(self, index, size):
        f = self.left._dual_fn(index, size)
        g = self.right._dual_fn(index, size)
        op = self.op

        def fn(z):
            a, da = f(z)
            b, db = g(z)
            if op == "+":
                return a + b, da + db
            if op == "-":
                return a - b, da - db
            if op == "*":
                return a * b, da * b + a * db
            return a / b, (da * b - a * db) / (b * b)

        return fn

    def diff(self, name):
        a, b = self.left, self.right
        da, db = a.diff(name), b.diff(name)
        if self.op == "+":
            return _add(da, db)
        if self.op == "-":
            return _sub(da, db)
        if self.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        numerator = _sub(_mul(da, b), _mul(a, db))
        if _is_zero(numerator):
            return Num(0.0)
        return BinOp("/", numerator, Pow(b, 2))

    def smoothed(self, mu):
        return BinOp(self.op, self.left.smoothed(mu), self.right.smoothed(mu))

    def curvature(self, names):
        lc, rc = self.left.curvature(names), self.right.curvature(names)
        if self.op == "+":
            return _combine(lc, rc)
        if self.op == "-":
            return _combine(lc, _flip(rc))
        if self.op == "*":
            if lc is Curvature.CONSTANT:
                return _scale(self.left, rc)
            if rc is Curvature.CONSTANT:
                return _scale(self.right, lc)
            return Curvature.UNKNOWN
        if rc is not Curvature.CONSTANT:
            return Curvature.UNKNOWN
        if lc in (Curvature.CONSTANT, Curvature.AFFINE):
            return lc
        if self.right.is_constant():
            value = self.right.evaluate({})
            if value > 0:
                return lc
            if value < 0:
                return _flip(lc)
        return Curvature.UNKNOWN

    def __str__(self):
        left, right = str(self.left), str(self.right)
        if self.left.precedence < self.precedence:
            left = f"({left})"
        if self.right.precedence <= self.precedence:
            right = f"({right})"
        return f"{left} {self.op} {right}"


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: int

    precedence = _PREC_POW

    def children(self):
        return (self.base,)

    def _eval(self, env):
        return self.base._eval(env) ** self.exponent

    def _value_fn(self, index):
        f, e = self.base._value_fn(index), self.exponent
        return lambda z: f(z) ** e

    def _dual_fn(self, index, size):
        f, e = self.base._dual_fn(index, size), self.exponent

        def fn(z):
            a, da = f(z)
            if e == 0:
                return np.float64(1.0), da * 0.0
            return a**e, e * a ** (e - 1) * da

        return fn

    def diff(self, name):
        if self.exponent == 0:
            return Num(0.0)
        inner = self.base.diff(name)
        if self.exponent == 1:
            return inner
        outer = self.base if self.exponent == 2 else Pow(self.base, self.exponent - 1)
        return _mul(_mul(Num(float(self.exponent)), outer), inner)

    def smoothed(self, mu):
        return Pow(self.base.smoothed(mu), self.exponent)

    def curvature(self, names):
        if self.exponent == 0:
            return Curvature.CONSTANT
        inner = self.base.curvature(names)
        if self.exponent == 1 or inner is Curvature.CONSTANT:
            return inner
        if inner is Curvature.AFFINE and self.exponent % 2 == 0:
            return Curvature.CONVEX
        return Curvature.UNKNOWN

    def __str__(self):
        base = str(self.base)
        if self.base.precedence < _PREC_ATOM:
            base = f"({base})"
        return f"{base}^{self.exponent}"


@dataclass(frozen=True)
class Call(Expression):
    func: str
    args: tuple

    def children(self):
        return self.args

    def _eval(self, env):
        values = [arg._eval(env) for arg in self.args]
        return _call(self.func, values)

    def _value_fn(self, index):
        fns = [arg._value_fn(index) for arg in self.args]
        func = self.func
        if len(fns) == 1:
            f = fns[0]
            return lambda z: _call(func, [f(z)])
        return lambda z: _call(func, [g(z) for g in fns])

    def _dual_fn(self, index, size):
        fns = [arg._dual_fn(index, size) for arg in self.args]
        func = self.func

        def fn(z):
            duals = [g(z) for g in fns]
            if func in ("min", "max"):
                values = [value for value, _ in duals]
                pick = int(np.argmax(values) if func == "max" else np.argmin(values))
                return duals[pick]
            a, da = duals[0]
            if func == "sin":
                return np.sin(a), np.cos(a) * da
            if func == "cos":
                return np.cos(a), -np.sin(a) * da
            if func == "exp":
                value = np.exp(a)
                return value, value * da
            if func == "sqrt":
                value = np.sqrt(a)
                return value, da / (2.0 * value)
            return np.abs(a), np.sign(a) * da

        return fn

    def diff(self, name):
        if self.func in KINK_FUNCTIONS:
            raise UnsupportedExpressionError(
                f"'{self.func}' has no symbolic derivative; use the nonsmooth calculus"
            )
        arg = self.args[0]
        inner = arg.diff(name)
        if _is_zero(inner):
            return Num(0.0)
        if self.func == "sin":
            outer = Call("cos", (arg,))
        elif self.func == "cos":
            outer = Neg(Call("sin", (arg,)))
        elif self.func == "exp":
            outer = self
        else:
            return BinOp("/", inner, _mul(Num(2.0), self))
        return _mul(outer, inner)

    def smoothed(self, mu):
        args = [arg.smoothed(mu) for arg in self.args]
        mu2 = Num(float(mu) ** 2)
        if self.func == "abs":
            return Call("sqrt", (BinOp("+", Pow(args[0], 2), mu2),))
        if self.func in ("min", "max"):
            sign = "+" if self.func == "max" else "-"
            result = args[0]
            for other in args[1:]:
                spread = Pow(BinOp("-", result, other), 2)
                gap = Call("sqrt", (BinOp("+", spread, mu2),))
                result = BinOp(
                    "/", BinOp(sign, BinOp("+", result, other), gap), Num(2.0)
                )
            return result
        return Call(self.func, tuple(args))

    def curvature(self, names):
        inner = [arg.curvature(names) for arg in self.args]
        if all(c is Curvature.CONSTANT for c in inner):
            return Curvature.CONSTANT
        if self.func == "abs":
            if inner[0] is Curvature.AFFINE:
                return Curvature.CONVEX
            return Curvature.UNKNOWN
        if self.func == "max":
            ok = not any(c in (Curvature.CONCAVE, Curvature.UNKNOWN) for c in inner)
            return Curvature.CONVEX if ok else Curvature.UNKNOWN
        if self.func == "min":
            ok = not any(c in (Curvature.CONVEX, Curvature.UNKNOWN) for c in inner)
            return Curvature.CONCAVE if ok else Curvature.UNKNOWN
        if self.func == "exp" and inner[0] in (Curvature.AFFINE, Curvature.CONVEX):
            return Curvature.CONVEX
        if self.func == "sqrt" and inner[0] in (Curvature.AFFINE, Curvature.CONCAVE):
            return Curvature.CONCAVE
        return Curvature.UNKNOWN

    def __str__(self):
        return f"{self.func}({', '.join(str(arg) for arg in self.args)})"


def _call(func: str, values: List[Any]) -> Any:
    if func == "sin":
        return np.sin(values[0])
    if func == "cos":
        return np.cos(values[0])
    if func == "exp":
        return np.exp(values[0])
    if func == "sqrt":
        return np.sqrt(values[0])
    if func == "abs":
        return np.abs(values[0])
    if func == "min":
        return min(values)
    return max(values)


def _apply(op: str, a: Any, b: Any) -> Any:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b


def _index_of(expr: Expression, names: Sequence[str]) -> Dict[str, int]:
    index = {name: i for i, name in enumerate(names)}
    missing = expr.variables() - set(index)
    if missing:
        raise UnknownIdentifierError(
            f"Expression '{expr}' uses undeclared variables {sorted(missing)}"
        )
    return index


def _is_zero(expr: Expression) -> bool:
    return isinstance(expr, Num) and expr.value == 0.0


def _is_one(expr: Expression) -> bool:
    return isinstance(expr, Num) and expr.value == 1.0


def _neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    return Neg(a)


def _add(a: Expression, b: Expression) -> Expression:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return BinOp("+", a, b)


def _sub(a: Expression, b: Expression) -> Expression:
    if _is_zero(b):
        return a
    if _is_zero(a):
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a: Expression, b: Expression) -> Expression:
    if _is_zero(a) or _is_zero(b):
        return Num(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _flip(c: Curvature) -> Curvature:
    if c is Curvature.CONVEX:
        return Curvature.CONCAVE
    if c is Curvature.CONCAVE:
        return Curvature.CONVEX
    return c


def _combine(a: Curvature, b: Curvature) -> Curvature:
    if Curvature.UNKNOWN in (a, b):
        return Curvature.UNKNOWN
    kinds = {a, b} - {Curvature.CONSTANT}
    if not kinds:
        return Curvature.CONSTANT
    if kinds == {Curvature.AFFINE}:
        return Curvature.AFFINE
    kinds.discard(Curvature.AFFINE)
    return kinds.pop() if len(kinds) == 1 else Curvature.UNKNOWN


def _scale(factor: Expression, c: Curvature) -> Curvature:
    if c in (Curvature.CONSTANT, Curvature.AFFINE, Curvature.UNKNOWN):
        return c
    if not factor.is_constant():
        return Curvature.UNKNOWN
    value = factor.evaluate({})
    if value >= 0:
        return c
    return _flip(c)


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        match = _TOKEN.match(text, i)
        if match is None:
            raise ExpressionSyntaxError(
                f"Unexpected character {text[i]!r}", _byte_offset(text, i)
            )
        kind = match.lastgroup or "op"
        tokens.append(_Token(kind, match.group(), _byte_offset(text, i)))
        i = match.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: Optional[Iterable[str]]):
        self.tokens = tokenize(text)
        self.pos = 0
        self.allowed = None if allowed is None else set(allowed)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text: str) -> _Token:
        token = self.advance()
        if token.text != text or token.kind == "end":
            found = token.text or "end of input"
            raise ExpressionSyntaxError(
                f"Expected '{text}', found '{found}'", token.offset
            )
        return token

    def parse(self) -> Expression:
        expr = self.expr()
        token = self.peek()
        if token.kind != "end":
            raise ExpressionSyntaxError(
                f"Unexpected token '{token.text}'", token.offset
            )
        return expr

    def expr(self) -> Expression:
        left = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expression:
        left = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expression:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            token = self.advance()
            if token.kind != "num" or not token.text.isdigit():
                raise ExpressionSyntaxError(
                    "Exponent must be an unsigned integer", token.offset
                )
            return Pow(base, int(token.text))
        return base

    def atom(self) -> Expression:
        token = self.advance()
        if token.kind == "num":
            return Num(float(token.text))
        if token.kind == "name":
            if token.text in FUNCTIONS:
                return self.call(token)
            if not IDENTIFIER.fullmatch(token.text):
                raise UnknownIdentifierError(
                    f"Unknown identifier '{token.text}' at offset {token.offset}"
                )
            if self.allowed is not None and token.text not in self.allowed:
                raise UnknownIdentifierError(
                    f"Identifier '{token.text}' at offset {token.offset} is not "
                    f"declared here; allowed: {sorted(self.allowed)}"
                )
            return Var(token.text)
        if token.text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        found = token.text or "end of input"
        raise ExpressionSyntaxError(f"Unexpected token '{found}'", token.offset)

    def call(self, name: _Token) -> Expression:
        self.expect("(")
        args = [self.expr()]
        while self.peek().text == "," and self.peek().kind == "op":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name.text]
        if arity is None and len(args) < 2:
            raise ArityError(
                f"'{name.text}' at offset {name.offset} needs at least 2 arguments"
            )
        if arity is not None and len(args) != arity:
            raise ArityError(
                f"'{name.text}' at offset {name.offset} takes {arity} argument(s), "
                f"got {len(args)}"
            )
        return Call(name.text, tuple(args))


def parse_expression(text: str, allowed: Optional[Iterable[str]] = None) -> Expression:
    """Parse ``text`` into an expression tree.

    Args:
        text: Source text
        allowed: Optional set of identifiers the expression may reference

    Returns:
        The parsed expression

    Raises:
        ExpressionSyntaxError: If the text does not follow the grammar
        UnknownIdentifierError: If an identifier is not a known variable
        ArityError: If a function is called with the wrong number of arguments
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError("Empty expression", 0)
    return _Parser(text, allowed).parse()


def as_expression(value: Any) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, bool):
        raise ValueError(f"Invalid expression: {value}")
    if isinstance(value, (int, float)):
        return Num(float(value)) if value >= 0 else Neg(Num(float(-value)))
    if isinstance(value, str):
        try:
            return parse_expression(value)
        except (ExpressionSyntaxError, UnknownIdentifierError, ArityError) as e:
            raise ValueError(str(e)) from e
    raise ValueError(f"Invalid expression: {value!r}")
