from math import inf, isfinite, sqrt
from typing import Dict, Optional, Sequence, Tuple

from .formula import (
    Always,
    And,
    BinOp,
    Call,
    Channel,
    Const,
    Eventually,
    Expr,
    Formula,
    Interval,
    Neg,
    Not,
    Or,
    Predicate,
    Until,
)
from .trace import EmptyWindowError, EvaluationError, Trace

def _check_index(trace: Trace, t: int):
    if not 0 <= t < trace.length:
        raise EvaluationError(f"Time step {t} is out of range for a trace of length {trace.length}!")

def _finite(value: float, expr: Expr, t: int) -> float:
    if not isfinite(value):
        raise EvaluationError(f"Expression '{expr}' is not finite at step {t}!")
    return value

def _eval(expr: Expr, trace: Trace, t: int) -> float:
    match expr:
        case Const(value):
            return value
        case Channel(name):
            return _finite(float(trace[name][t]), expr, t)
        case Neg(arg):
            return -_eval(arg, trace, t)
        case BinOp(op, left, right):
            lhs, rhs = _eval(left, trace, t), _eval(right, trace, t)
            match op:
                case "+":
                    return _finite(lhs + rhs, expr, t)
                case "-":
                    return _finite(lhs - rhs, expr, t)
                case "*":
                    return _finite(lhs * rhs, expr, t)
                case "/":
                    if rhs == 0:
                        raise EvaluationError(f"Division by zero in '{expr}' at step {t}!")
                    return _finite(lhs / rhs, expr, t)
        case Call("abs", (arg,)):
            return abs(_eval(arg, trace, t))
        case Call("sqrt", (arg,)):
            if (value := _eval(arg, trace, t)) < 0:
                raise EvaluationError(f"Square root of negative value {value} in '{expr}' at step {t}!")
            return sqrt(value)
        case Call("min", (left, right)):
            return min(_eval(left, trace, t), _eval(right, trace, t))
        case Call("max", (left, right)):
            return max(_eval(left, trace, t), _eval(right, trace, t))
    raise EvaluationError(f"Cannot evaluate {expr!r}!")

def eval_expr(expr: Expr, trace: Trace, t: int) -> float:
    """Value of `expr` at step `t` of `trace`."""
    _check_index(trace, t)
    return _eval(expr, trace, t)


class _Semantics:
    """Quantitative semantics over one finite trace, memoized per (subformula, step)."""

    def __init__(self, trace: Trace, horizon: int):
        self.trace, self.horizon = trace, horizon
        self.memo: Dict[Tuple[int, int], float] = dict()

    def window(self, interval: Interval, t: int) -> range:
        lower, upper = interval.resolve(self.horizon)
        start, stop = t + lower, min(t + upper, self.trace.length - 1)
        if start > stop:
            raise EmptyWindowError(
                f"Interval {interval} at step {t} lies beyond the end of the trace (length {self.trace.length})!"
            )
        return range(start, stop + 1)

    def __call__(self, formula: Formula, t: int) -> float:
        key = (id(formula), t)
        if (value := self.memo.get(key)) is None:
            value = self.memo[key] = self.evaluate(formula, t)
        return value

    def evaluate(self, formula: Formula, t: int) -> float:
        match formula:
            case Predicate(expr, ">=", constant):
                return _eval(expr, self.trace, t) - constant
            case Predicate(expr, "<=", constant):
                return constant - _eval(expr, self.trace, t)
            case Not(arg):
                return -self(arg, t)
            case And(left, right):
                return min(self(left, t), self(right, t))
            case Or(left, right):
                return max(self(left, t), self(right, t))
            case Always(interval, arg):
                return min(self(arg, step) for step in self.window(interval, t))
            case Eventually(interval, arg):
                return max(self(arg, step) for step in self.window(interval, t))
            case Until(interval, left, right):
                window, best, prefix = self.window(interval, t), -inf, inf
                for step in range(t, window.stop):
                    prefix = min(prefix, self(left, step))
                    if step >= window.start:
                        best = max(best, min(self(right, step), prefix))
                return best
        raise EvaluationError(f"Cannot evaluate {formula!r}!")

def robustness(formula: Formula, trace: Trace, t: int = 0, horizon: Optional[int] = None) -> float:
    """
    Robustness of `formula` on `trace` at step `t`. Temporal windows are
    clamped to the end of the trace and must not become empty. Bounds written
    relative to `T` resolve against `horizon`, which defaults to the trace
    length.
    """
    _check_index(trace, t)
    return _Semantics(trace, trace.length if horizon is None else horizon)(formula, t)

def satisfies(formula: Formula, trace: Trace, t: int = 0, horizon: Optional[int] = None) -> bool:
    return robustness(formula, trace, t, horizon) >= 0

def window_robustness(formula: Formula, trace: Trace, window_start: int, window_len: int) -> float:
    """
    Robustness over the partial trajectory of `window_len` steps starting at
    `window_start`, evaluated at the first step of the window with the window
    length as horizon.
    """
    return robustness(formula, trace.window(window_start, window_len), 0, horizon=window_len)

def weighted_robustness(
    formulas: Sequence[Formula],
    trace: Trace,
    window_start: int,
    window_len: int,
    weights: Sequence[float] = (),
    offset: float = 0.0,
) -> float:
    """`sum_j weights[j] * window_robustness(formulas[j], ...) + offset`; missing weights default to one."""
    window = trace.window(window_start, window_len)
    return sum(
        (weights[j] if j < len(weights) else 1.0) * robustness(formula, window, 0, horizon=window_len)
        for j, formula in enumerate(formulas)
    ) + offset
