from dataclasses import dataclass, field
from fractions import Fraction
import math
import re

import numpy as np

from FinslerErrors import (
    DivisionNearZeroError,
    DomainError,
    EvaluationError,
    ExpressionSyntaxError,
    FinslerLabError,
    UnknownVariableError,
)
import TaylorJets as tj

FUNCTIONS = ("sqrt", "sin", "cos", "exp")
CONSTANTS = {"pi": math.pi}
HOMOGENEITY_TOLERANCE = 1e-10

TOKEN_REGEXP = re.compile(
    r"(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)
WHITESPACE_REGEXP = re.compile(r"\s+")

BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


@dataclass(frozen=True)
class Constant:
    value: float
    position: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Variable:
    name: str
    position: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    position: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    position: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Power:
    base: "Expr"
    exponent: Fraction
    position: int = field(default=0, compare=False)


Expr = Constant | Variable | Unary | Binary | Power


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    position: int


@dataclass
class HomogeneityReport:
    degree: int
    scale: float
    count: int
    max_residual: float
    worst_point: dict
    tolerance: float
    passed: bool


def source_variables(dim):
    return [f"t{i + 1}" for i in range(dim)] + [f"s{i + 1}" for i in range(dim)]


def target_variables(dim):
    return [f"x{i + 1}" for i in range(dim)] + [f"y{i + 1}" for i in range(dim)]


def tokenize(text):
    """Split expression text into tokens carrying 1-based positions."""
    tokens = []
    pos = 0
    while pos < len(text):
        space = WHITESPACE_REGEXP.match(text, pos)
        if space:
            pos = space.end()
            continue
        match = TOKEN_REGEXP.match(text, pos)
        if not match:
            raise ExpressionSyntaxError(pos + 1, f"Unexpected character '{text[pos]}'")
        tokens.append(Token(match.lastgroup, match.group(), pos + 1))
        pos = match.end()
    tokens.append(Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    # expression = term { ("+" | "-") term }
    # term       = unary { ("*" | "/") unary }
    # unary      = ("-" | "+") unary | power
    # power      = primary [ "^" exponent ]

    def __init__(self, text, declared_vars):
        self.tokens = tokenize(text)
        self.index = 0
        self.declared = set(declared_vars)

    @property
    def peek(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.tokens[self.index]
        self.index += 1
        return token

    def at_op(self, *symbols):
        return self.peek.kind == "op" and self.peek.text in symbols

    def expect(self, symbol):
        if not self.at_op(symbol):
            self.fail(f"Expected '{symbol}'")
        return self.advance()

    def fail(self, message):
        token = self.peek
        if token.kind == "end":
            raise ExpressionSyntaxError(token.position, f"{message}, found end of input")
        raise ExpressionSyntaxError(token.position, f"{message}, found '{token.text}'")

    def parse(self):
        node = self.parse_expression()
        if self.peek.kind != "end":
            self.fail("Expected operator or end of input")
        return node

    def parse_expression(self):
        node = self.parse_term()
        while self.at_op("+", "-"):
            token = self.advance()
            op = "add" if token.text == "+" else "sub"
            node = Binary(op, node, self.parse_term(), token.position)
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.at_op("*", "/"):
            token = self.advance()
            op = "mul" if token.text == "*" else "div"
            node = Binary(op, node, self.parse_unary(), token.position)
        return node

    def parse_unary(self):
        if self.at_op("-"):
            token = self.advance()
            return Unary("neg", self.parse_unary(), token.position)
        if self.at_op("+"):
            self.advance()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self):
        base = self.parse_primary()
        if self.at_op("^"):
            token = self.advance()
            return Power(base, self.parse_exponent(), token.position)
        return base

    def parse_sign(self):
        sign = 1
        while self.at_op("-", "+"):
            if self.advance().text == "-":
                sign = -sign
        return sign

    def parse_number(self):
        if self.peek.kind != "number":
            self.fail("Expected a rational exponent")
        return Fraction(self.advance().text)

    def parse_exponent(self):
        # Exponents are rational literals: 2, -1, 0.5, (1/2), (-3/2)
        sign = self.parse_sign()
        if not self.at_op("("):
            return sign * self.parse_number()
        self.advance()
        sign *= self.parse_sign()
        value = self.parse_number()
        if self.at_op("/"):
            self.advance()
            position = self.peek.position
            denominator = self.parse_sign() * self.parse_number()
            if denominator == 0:
                raise ExpressionSyntaxError(position, "Zero denominator in exponent")
            value = value / denominator
        self.expect(")")
        return sign * value

    def parse_primary(self):
        token = self.peek
        if token.kind == "number":
            self.advance()
            return Constant(float(token.text), token.position)
        if token.kind == "name":
            self.advance()
            if token.text in FUNCTIONS:
                self.expect("(")
                argument = self.parse_expression()
                self.expect(")")
                return Unary(token.text, argument, token.position)
            if token.text in self.declared:
                return Variable(token.text, token.position)
            if token.text in CONSTANTS:
                return Constant(CONSTANTS[token.text], token.position)
            raise UnknownVariableError(token.text, token.position)
        if self.at_op("("):
            self.advance()
            node = self.parse_expression()
            self.expect(")")
            return node
        self.fail("Expected number, variable, function or '('")


def parse(text, declared_vars):
    """Parse expression text into an AST.

    Parameters
    ----------
    text : str
        Infix expression, for example "sqrt(s1^2 + s2^2) + 0.3*s1"
    declared_vars : list[str]
        Names of the variables the expression may use

    Returns
    -------
    Expr
        Abstract syntax tree
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError(1, "Empty expression")
    return _Parser(text, declared_vars).parse()


def _format_exponent(exponent):
    if exponent.denominator == 1 and exponent >= 0:
        return f"{exponent.numerator}"
    if exponent.denominator == 1:
        return f"({exponent.numerator})"
    return f"({exponent.numerator}/{exponent.denominator})"


def to_text(e):
    """Print an AST as text that parses back to the same tree."""
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return f"(-{to_text(e.operand)})"
        return f"{e.op}({to_text(e.operand)})"
    if isinstance(e, Binary):
        return f"({to_text(e.left)} {BINARY_SYMBOLS[e.op]} {to_text(e.right)})"
    base = to_text(e.base)
    if isinstance(e.base, (Power, Constant)):
        base = f"({base})"
    return f"{base}^{_format_exponent(e.exponent)}"


def free_variables(e):
    if isinstance(e, Variable):
        return {e.name}
    if isinstance(e, Constant):
        return set()
    if isinstance(e, Unary):
        return free_variables(e.operand)
    if isinstance(e, Binary):
        return free_variables(e.left) | free_variables(e.right)
    return free_variables(e.base)


def substitute(e, replacements):
    """Replace variables by expressions, structurally."""
    if isinstance(e, Variable):
        return replacements.get(e.name, e)
    if isinstance(e, Constant):
        return e
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.operand, replacements), e.position)
    if isinstance(e, Binary):
        return Binary(
            e.op,
            substitute(e.left, replacements),
            substitute(e.right, replacements),
            e.position,
        )
    return Power(substitute(e.base, replacements), e.exponent, e.position)


def _eval_taylor_node(e, bindings, num_vars, order):
    if isinstance(e, Constant):
        return tj.constant(e.value, num_vars, order)
    if isinstance(e, Variable):
        if e.name not in bindings:
            raise UnknownVariableError(e.name, e.position)
        return bindings[e.name]
    try:
        if isinstance(e, Unary):
            operand = _eval_taylor_node(e.operand, bindings, num_vars, order)
            if e.op == "neg":
                return tj.arith("neg", operand)
            return tj.elementary(e.op, operand)
        if isinstance(e, Binary):
            left = _eval_taylor_node(e.left, bindings, num_vars, order)
            right = _eval_taylor_node(e.right, bindings, num_vars, order)
            return tj.arith(e.op, left, right)
        base = _eval_taylor_node(e.base, bindings, num_vars, order)
        return tj.elementary("pow_rational", base, e.exponent)
    except (EvaluationError, UnknownVariableError):
        raise
    except FinslerLabError as exc:
        raise EvaluationError(e.position, exc) from exc


def eval_taylor(e, bindings):
    """Evaluate an AST in Taylor arithmetic.

    Parameters
    ----------
    e : Expr
        Expression
    bindings : dict[str, TaylorValue]
        Series for every variable of the expression, sharing num_vars
        and order

    Returns
    -------
    TaylorValue
        Expansion of the expression
    """
    reference = next(iter(bindings.values()))
    return _eval_taylor_node(e, bindings, reference.num_vars, reference.order)


def _real_power(base, exponent):
    if exponent.denominator == 1:
        if exponent < 0 and abs(base) < tj.EPSILON_DIV:
            raise DomainError(f"Negative power of {base}")
        return tj.integer_power(base, exponent.numerator)
    if base < tj.EPSILON_DIV:
        raise DomainError(f"Rational power {exponent} of non-positive value {base}")
    return base ** float(exponent)


def _evaluate_node(e, values):
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        if e.name not in values:
            raise UnknownVariableError(e.name, e.position)
        return float(values[e.name])
    try:
        if isinstance(e, Unary):
            operand = _evaluate_node(e.operand, values)
            if e.op == "neg":
                return -operand
            if e.op == "sqrt":
                if operand < tj.EPSILON_DIV:
                    raise DomainError(f"Square root of non-positive value {operand}")
                return math.sqrt(operand)
            return {"sin": math.sin, "cos": math.cos, "exp": math.exp}[e.op](operand)
        if isinstance(e, Binary):
            left = _evaluate_node(e.left, values)
            right = _evaluate_node(e.right, values)
            if e.op == "add":
                return left + right
            if e.op == "sub":
                return left - right
            if e.op == "mul":
                return left * right
            if abs(right) < tj.EPSILON_DIV:
                raise DivisionNearZeroError(f"Divisor {right} is below {tj.EPSILON_DIV}")
            return left / right
        return _real_power(_evaluate_node(e.base, values), e.exponent)
    except (EvaluationError, UnknownVariableError):
        raise
    except FinslerLabError as exc:
        raise EvaluationError(e.position, exc) from exc
    except (OverflowError, ValueError) as exc:
        raise EvaluationError(e.position, DomainError(str(exc))) from exc


def evaluate(e, values):
    """Evaluate an AST at a point, in plain floating point."""
    return _evaluate_node(e, values)


def check_homogeneity(
    e, s_vars, degree, sample_points, scale, tolerance=HOMOGENEITY_TOLERANCE
):
    """Check positive homogeneity of an expression in a group of
    variables.

    Parameters
    ----------
    e : Expr
        Expression
    s_vars : list[str]
        Names of the variables that are rescaled
    degree : int
        Expected homogeneity degree
    sample_points : list[dict]
        Points, as maps from variable name to value
    scale : float
        Positive rescaling factor
    tolerance : float
        Largest admissible relative residual

    Returns
    -------
    HomogeneityReport
        Worst residual |f(t, scale s) - scale^degree f(t, s)| / max(1,
        |f(t, s)|) over the samples
    """
    if scale <= 0:
        raise ValueError(f"Rescaling factor must be positive, got {scale}")
    max_residual = 0.0
    worst_point = {}
    for point in sample_points:
        base_value = evaluate(e, point)
        scaled = dict(point)
        for name in s_vars:
            scaled[name] = scale * point[name]
        residual = abs(evaluate(e, scaled) - scale**degree * base_value) / max(
            1.0, abs(base_value)
        )
        if residual > max_residual or not worst_point:
            max_residual = max(max_residual, residual)
            worst_point = dict(point)
    return HomogeneityReport(
        degree=degree,
        scale=scale,
        count=len(sample_points),
        max_residual=max_residual,
        worst_point=worst_point,
        tolerance=tolerance,
        passed=bool(np.isfinite(max_residual) and max_residual <= tolerance),
    )
