from functools import cache, reduce

from lark import Lark, Transformer
from lark.exceptions import UnexpectedEOF, UnexpectedInput, VisitError

from .formula import (
    Always,
    And,
    BinOp,
    Call,
    Channel,
    Const,
    Eventually,
    Formula,
    Horizon,
    Interval,
    IntervalError,
    Neg,
    Not,
    Or,
    Predicate,
    StlError,
    Until,
)

GRAMMAR = r'''
formula: disj
disj: conj ("|" conj)*
conj: unary ("&" unary)*

?unary: "!" unary -> negation
    | TEMPORAL interval unary -> temporal
    | atom TEMPORAL interval unary -> until
    | atom

?atom: "(" disj ")"
    | expr COMPARATOR SIGNED_NUMBER -> predicate

interval: "[" bound "," bound "]"
bound: SIGNED_INT -> step_bound
    | "T" -> horizon_bound
    | "T" "-" INT -> horizon_bound

?expr: term (ADD_OP term)*
?term: factor (MUL_OP factor)*
?factor: NUMBER -> const
    | operand
?operand: "-" NUMBER -> negative_const
    | "-" operand -> neg
    | CNAME -> channel
    | CNAME "(" expr ("," expr)* ")" -> call
    | "(" expr ")"

TEMPORAL: /[A-Za-z_]\w*(?=\s*\[)/
COMPARATOR: ">=" | "<="
ADD_OP: "+" | "-"
MUL_OP: "*" | "/"

%import common.CNAME
%import common.INT
%import common.NUMBER
%import common.SIGNED_INT
%import common.SIGNED_NUMBER
%import common.WS
%ignore WS
'''

# the grammar is unambiguous but not LALR(1): "(" opens either a formula or an expression
_parser = Lark(GRAMMAR, start="formula", parser="earley")

class StlSyntaxError(StlError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line, self.column = line, column

class FormulaTransformer(Transformer):
    """Maps lark parse trees onto the formula dataclasses."""

    def formula(self, children):
        return children[0]

    def disj(self, children):
        return reduce(Or, children)

    def conj(self, children):
        return reduce(And, children)

    def negation(self, children):
        return Not(children[0])

    def temporal(self, children):
        op, interval, arg = children
        match str(op):
            case "G":
                return Always(interval, arg)
            case "F":
                return Eventually(interval, arg)
        raise StlSyntaxError(f"unknown operator '{op}' (expected G or F)", op.line, op.column)

    def until(self, children):
        left, op, interval, right = children
        if str(op) != "U":
            raise StlSyntaxError(f"unknown operator '{op}' (expected U)", op.line, op.column)
        return Until(interval, left, right)

    def predicate(self, children):
        expr, comparator, constant = children
        return Predicate(expr, str(comparator), float(constant))

    def interval(self, children):
        return Interval(*children)

    def step_bound(self, children):
        (token,) = children
        if (bound := int(token)) < 0:
            raise IntervalError(f"line {token.line}, column {token.column}: negative interval bound {bound}")
        return bound

    def horizon_bound(self, children):
        return Horizon(int(children[0]) if children else 0)

    def _fold(self, children):
        expr = children[0]
        for op, right in zip(children[1::2], children[2::2]):
            expr = BinOp(str(op), expr, right)
        return expr

    expr = term = _fold

    def const(self, children):
        return Const(float(children[0]))

    def negative_const(self, children):
        return Const(-float(children[0]))

    def channel(self, children):
        return Channel(str(children[0]))

    def neg(self, children):
        return Neg(children[0])

    def call(self, children):
        name, *args = children
        match str(name), len(args):
            case ("abs" | "sqrt") as func, 1:
                return Call(func, (args[0],))
            case ("min" | "max") as func, arity if arity >= 2:
                return reduce(lambda left, right: Call(func, (left, right)), args)
            case ("abs" | "sqrt" | "min" | "max") as func, arity:
                raise StlSyntaxError(f"wrong number of arguments ({arity}) for '{func}'", name.line, name.column)
        raise StlSyntaxError(f"unknown operator '{name}'", name.line, name.column)

def _end_of(text: str):
    lines = text.split("\n")
    return len(lines), len(lines[-1]) + 1

@cache
def parse_formula(text: str) -> Formula:
    """
    Parse an STL formula, e.g. `G[0,T-1] (min(x, y) >= 0.5) | F[0,5] (z <= 1)`.
    Raises `StlSyntaxError` with line and column information on malformed
    input and `IntervalError` on malformed intervals.
    """
    try:
        tree = _parser.parse(text)
    except UnexpectedEOF:
        raise StlSyntaxError("unexpected end of input", *_end_of(text)) from None
    except UnexpectedInput as e:
        found = text[e.pos_in_stream:e.pos_in_stream + 1] if e.pos_in_stream is not None else ""
        if e.line is None or e.line < 0:
            raise StlSyntaxError("unexpected end of input", *_end_of(text)) from None
        raise StlSyntaxError(f"unexpected input {found!r}", e.line, e.column) from None
    try:
        return FormulaTransformer().transform(tree)
    except VisitError as e:
        if isinstance(e.orig_exc, StlError):
            raise e.orig_exc from None
        raise

def load_formulas(path: str) -> list[Formula]:
    """Read one formula per non-empty line; lines starting with `#` are comments."""
    with open(path) as f:
        lines = [line.strip() for line in f]
    return [parse_formula(line) for line in lines if line and not line.startswith("#")]
