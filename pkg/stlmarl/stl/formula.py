"""
Abstract syntax of STL specifications: arithmetic expressions over named
trace channels, predicates comparing them against constants, Boolean
connectives and bounded temporal operators with integer step intervals.
"""

from dataclasses import dataclass, field
from math import isfinite
from typing import List, Literal, Optional, Tuple, Union

class StlError(ValueError):
    """Base class of all errors raised while building, parsing or evaluating STL formulas."""

class IntervalError(StlError):
    pass


@dataclass(frozen=True)
class Horizon:
    """The interval bound `T - offset`, resolved against a horizon at evaluation time."""
    offset: int = 0

    def __post_init__(self):
        if self.offset < 0:
            raise IntervalError(f"Horizon offset must be non-negative, got T-{self.offset}!")

    def resolve(self, horizon: int) -> int:
        return horizon - self.offset

    def __str__(self):
        return f"T-{self.offset}" if self.offset else "T"

Bound = Union[int, Horizon]

def _resolve(bound: Bound, horizon: int) -> int:
    return bound.resolve(horizon) if isinstance(bound, Horizon) else bound


@dataclass(frozen=True)
class Interval:
    lower: Bound
    upper: Bound

    def __post_init__(self):
        for bound in (self.lower, self.upper):
            if isinstance(bound, int) and bound < 0:
                raise IntervalError(f"Interval bounds must be non-negative, got {self}!")
        if isinstance(self.lower, int) and isinstance(self.upper, int) and self.lower > self.upper:
            raise IntervalError(f"Interval lower bound exceeds upper bound in {self}!")
        if isinstance(self.lower, Horizon) and isinstance(self.upper, int):
            raise IntervalError(f"Horizon-relative lower bound needs a horizon-relative upper bound in {self}!")
        if isinstance(self.lower, Horizon) and isinstance(self.upper, Horizon) and self.lower.offset < self.upper.offset:
            raise IntervalError(f"Interval lower bound exceeds upper bound in {self}!")

    @property
    def is_horizon_relative(self) -> bool:
        return isinstance(self.lower, Horizon) or isinstance(self.upper, Horizon)

    def resolve(self, horizon: int) -> Tuple[int, int]:
        lower, upper = _resolve(self.lower, horizon), _resolve(self.upper, horizon)
        if lower < 0 or lower > upper:
            raise IntervalError(f"Interval {self} is empty for horizon T={horizon}!")
        return lower, upper

    def __str__(self):
        return f"[{self.lower},{self.upper}]"


class Expr:
    """Arithmetic over trace channels; subclasses are immutable dataclasses."""

    def __add__(self, other): return BinOp("+", self, _lift(other))
    def __sub__(self, other): return BinOp("-", self, _lift(other))
    def __mul__(self, other): return BinOp("*", self, _lift(other))
    def __truediv__(self, other): return BinOp("/", self, _lift(other))
    def __neg__(self): return Neg(self)

    def __ge__(self, constant): return Predicate(self, ">=", float(constant))
    def __le__(self, constant): return Predicate(self, "<=", float(constant))

    def __str__(self):
        return format_expr(self)

def _lift(value) -> Expr:
    return value if isinstance(value, Expr) else Const(float(value))

@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not isfinite(self.value):
            raise StlError(f"Constants must be finite, got {self.value}!")

@dataclass(frozen=True)
class Channel(Expr):
    name: str

@dataclass(frozen=True)
class BinOp(Expr):
    op: Literal["+", "-", "*", "/"]
    left: Expr
    right: Expr

@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

@dataclass(frozen=True)
class Call(Expr):
    func: Literal["abs", "sqrt", "min", "max"]
    args: Tuple[Expr, ...]

    def __post_init__(self):
        arity = {"abs": 1, "sqrt": 1, "min": 2, "max": 2}
        if self.func not in arity:
            raise StlError(f"Unknown operator '{self.func}'!")
        if len(self.args) != arity[self.func]:
            raise StlError(f"'{self.func}' expects {arity[self.func]} argument(s), got {len(self.args)}!")


class Formula:
    """STL formula; subclasses are immutable dataclasses and compare structurally."""

    def __and__(self, other): return And(self, other)
    def __or__(self, other): return Or(self, other)
    def __invert__(self): return Not(self)

    def __str__(self):
        return format_formula(self)

@dataclass(frozen=True)
class Predicate(Formula):
    expr: Expr
    op: Literal[">=", "<="]
    constant: float

    def __post_init__(self):
        if self.op not in (">=", "<="):
            raise StlError(f"Unknown comparator '{self.op}'!")
        if not isfinite(self.constant):
            raise StlError(f"Predicate constants must be finite, got {self.constant}!")

@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

@dataclass(frozen=True)
class Always(Formula):
    interval: Interval
    arg: Formula

@dataclass(frozen=True)
class Eventually(Formula):
    interval: Interval
    arg: Formula

@dataclass(frozen=True)
class Until(Formula):
    interval: Interval
    left: Formula
    right: Formula


def format_expr(expr: Expr) -> str:
    match expr:
        case Const(value):
            return repr(value)
        case Channel(name):
            return name
        case BinOp(op, left, right):
            return f"({format_expr(left)} {op} {format_expr(right)})"
        case Neg(Const() as arg):
            # a bare "-" before a literal reads back as a negative constant
            return f"-({format_expr(arg)})"
        case Neg(arg):
            return f"-{format_expr(arg)}"
        case Call(func, args):
            return f"{func}({', '.join(format_expr(arg) for arg in args)})"
    raise StlError(f"Not an expression: {expr!r}")

def format_formula(formula: Formula) -> str:
    """Fully parenthesized text which `parse_formula` maps back to an equal AST."""
    def atom(sub: Formula) -> str:
        return f"({format_formula(sub)})"

    match formula:
        case Predicate(expr, op, constant):
            return f"{format_expr(expr)} {op} {constant!r}"
        case Not(arg):
            return f"!{atom(arg)}"
        case And(left, right):
            return f"{atom(left)} & {atom(right)}"
        case Or(left, right):
            return f"{atom(left)} | {atom(right)}"
        case Always(interval, arg):
            return f"G{interval} {atom(arg)}"
        case Eventually(interval, arg):
            return f"F{interval} {atom(arg)}"
        case Until(interval, left, right):
            return f"{atom(left)} U{interval} {atom(right)}"
    raise StlError(f"Not a formula: {formula!r}")

def channels_of(node: Union[Formula, Expr]) -> frozenset:
    """Names of all trace channels a formula or expression reads."""
    match node:
        case Channel(name):
            return frozenset([name])
        case Const():
            return frozenset()
        case Predicate(expr=expr):
            return channels_of(expr)
        case Neg(arg) | Not(arg) | Always(arg=arg) | Eventually(arg=arg):
            return channels_of(arg)
        case BinOp(left=left, right=right) | And(left, right) | Or(left, right) | Until(left=left, right=right):
            return channels_of(left) | channels_of(right)
        case Call(args=args):
            return frozenset().union(*map(channels_of, args))
    raise StlError(f"Not a formula or expression: {node!r}")


@dataclass(frozen=True)
class FormulaConfig:
    """
    Thresholds and weights shared by the environment specifications and the
    weighted STL reward `sum_j weights[j] * rho_j + offset`.
    """
    eps1: float = 0.1
    eps2: float = 0.1
    d_safe: float = 0.15
    # defaults to the episode length of the environment
    horizon: Optional[int] = None
    tau: int = 20
    t_max: int = 50
    # inner hold window of eventually-always coverage specifications
    hold: int = 3
    weights: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    offset: float = 0.0

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0 or self.d_safe <= 0:
            raise StlError("Thresholds eps1, eps2 and d_safe must be positive!")
        if self.horizon is not None and self.horizon < 1:
            raise StlError(f"Horizon must be at least one step, got {self.horizon}!")
        if self.tau < 0 or self.t_max < 1 or self.hold < 0:
            raise StlError("tau and hold must be non-negative and t_max positive!")
        if not all(isfinite(weight) for weight in (*self.weights, self.offset)):
            raise StlError("Reward weights and offset must be finite!")
        object.__setattr__(self, "weights", tuple(float(weight) for weight in self.weights))

    def weight(self, j: int) -> float:
        return self.weights[j] if j < len(self.weights) else 1.0
