"""Rate-expression language.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' factor)?
    base   := number | 'x' '[' ident ']' | func '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' base
    func   := exp | log | pow | step | min | max

Expressions are parsed into a small tuple AST, printed back in a fully
parenthesised canonical form, and compiled to postfix bytecode that the
numba kernels evaluate.
"""

from __future__ import annotations

import math
import re
from typing import Sequence

import numpy as np

from ._accel import njit
from .errors import DomainError, ParseError

# opcodes
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW = 0, 1, 2, 3, 4, 5, 6
OP_NEG, OP_EXP, OP_LOG, OP_STEP, OP_MIN, OP_MAX = 7, 8, 9, 10, 11, 12

_BINOPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_UNARY = {"exp": OP_EXP, "log": OP_LOG, "step": OP_STEP}
FUNCS = ("exp", "log", "pow", "step", "min", "max")

_TOKEN = re.compile(
    r"""(?P<ws>[ \t\r\n]+)
      |(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      |(?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      |(?P<op>[-+*/^(),\[\]])""",
    re.VERBOSE,
)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            line, col = _position(text, pos)
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, species: Sequence[str]):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.index = {s: j for j, s in enumerate(species)}

    def error(self, msg: str, tok=None):
        tok = tok or self.toks[self.i]
        line, col = _position(self.text, tok[2])
        raise ParseError(msg, line, col)

    def peek(self):
        return self.toks[self.i]

    def take(self, value: str | None = None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("bin", op, node, self.factor())
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^":
            self.take()
            node = ("bin", "^", node, self.factor())
        return node

    def base(self):
        tok = self.peek()
        kind, val = tok[0], tok[1]
        if kind == "num":
            self.take()
            return ("num", float(val))
        if kind == "op" and val == "-":
            self.take()
            return ("neg", self.base())
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if kind == "ident" and val == "x" and self.toks[self.i + 1][1] == "[":
            self.take()
            self.take("[")
            name = self.peek()
            if name[0] != "ident":
                self.error("expected species name")
            if name[1] not in self.index:
                self.error(f"unknown species {name[1]!r}")
            self.take()
            self.take("]")
            return ("var", name[1], self.index[name[1]])
        if kind == "ident" and val in FUNCS:
            self.take()
            self.take("(")
            args = [self.expr()]
            while self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
            self.take(")")
            want = {"exp": 1, "log": 1, "step": 1, "pow": 2}.get(val)
            if want is not None and len(args) != want:
                self.error(f"{val} takes {want} argument(s), got {len(args)}", tok)
            return ("call", val, tuple(args))
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token {val!r}")


def parse_expression(text: str, species: Sequence[str]):
    """Parse ``text`` into an AST; raises :class:`ParseError` with line/column."""
    return _Parser(text, species).parse()


def format_expression(node) -> str:
    """Canonical, fully parenthesised text. Re-parsing yields the same AST."""
    tag = node[0]
    if tag == "num":
        return repr(float(node[1]))
    if tag == "var":
        return f"x[{node[1]}]"
    if tag == "neg":
        return f"-({format_expression(node[1])})"
    if tag == "bin":
        return f"({format_expression(node[2])} {node[1]} {format_expression(node[3])})"
    return f"{node[1]}(" + ", ".join(format_expression(a) for a in node[2]) + ")"


def compile_expression(node, consts: list[float]) -> list[tuple[int, int]]:
    """Postfix code as (opcode, arg) pairs; constants appended to ``consts``."""
    code: list[tuple[int, int]] = []

    def emit(n):
        tag = n[0]
        if tag == "num":
            consts.append(float(n[1]))
            code.append((OP_CONST, len(consts) - 1))
        elif tag == "var":
            code.append((OP_VAR, n[2]))
        elif tag == "neg":
            emit(n[1])
            code.append((OP_NEG, 0))
        elif tag == "bin":
            emit(n[2])
            emit(n[3])
            code.append((_BINOPS[n[1]], 0))
        else:
            name, args = n[1], n[2]
            emit(args[0])
            if name in _UNARY:
                code.append((_UNARY[name], 0))
            elif name == "pow":
                emit(args[1])
                code.append((OP_POW, 0))
            else:
                op = OP_MIN if name == "min" else OP_MAX
                for a in args[1:]:
                    emit(a)
                    code.append((op, 0))

    emit(node)
    return code


def max_stack_depth(code: list[tuple[int, int]]) -> int:
    depth = best = 0
    for op, _ in code:
        if op in (OP_CONST, OP_VAR):
            depth += 1
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_MIN, OP_MAX):
            depth -= 1
        best = max(best, depth)
    return best


@njit
def _pow(a, b):
    if a == 0.0 and b < 0.0:
        return np.inf
    if a < 0.0 and b != math.floor(b):
        return np.nan
    if b == 0.0:
        return 1.0
    return a**b


@njit
def eval_code(ops, args, consts, start, stop, x, stack):
    """Evaluate one compiled expression. NaN signals a domain error."""
    sp = 0
    for i in range(start, stop):
        op = ops[i]
        if op == OP_CONST:
            stack[sp] = consts[args[i]]
            sp += 1
            continue
        if op == OP_VAR:
            stack[sp] = x[args[i]]
            sp += 1
            continue
        if op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
            continue
        if op == OP_EXP:
            a = stack[sp - 1]
            stack[sp - 1] = math.exp(a) if a < 709.0 else np.inf
            continue
        if op == OP_LOG:
            a = stack[sp - 1]
            if a < 0.0 or a != a:
                return np.nan
            stack[sp - 1] = -np.inf if a == 0.0 else math.log(a)
            continue
        if op == OP_STEP:
            a = stack[sp - 1]
            if a != a:
                return np.nan
            stack[sp - 1] = 1.0 if a >= 0.0 else 0.0
            continue
        b = stack[sp - 1]
        a = stack[sp - 2]
        sp -= 1
        if op == OP_ADD:
            r = a + b
        elif op == OP_SUB:
            r = a - b
        elif op == OP_MUL:
            r = a * b
        elif op == OP_DIV:
            if b == 0.0:
                if a == 0.0 or a != a:
                    return np.nan
                r = np.inf if (a > 0.0) == (math.copysign(1.0, b) > 0.0) else -np.inf
            else:
                r = a / b
        elif op == OP_POW:
            r = _pow(a, b)
        elif op == OP_MIN:
            r = a if a <= b else b
        else:
            r = a if a >= b else b
        if r != r:
            return np.nan
        stack[sp - 1] = r
    return stack[0]


class CompiledExpression:
    """Stand-alone compiled expression, mainly for tests and the CLI."""

    def __init__(self, text: str, species: Sequence[str]):
        self.ast = parse_expression(text, species)
        consts: list[float] = []
        code = compile_expression(self.ast, consts)
        self.ops = np.array([c[0] for c in code], dtype=np.int64)
        self.args = np.array([c[1] for c in code], dtype=np.int64)
        self.consts = np.array(consts if consts else [0.0], dtype=np.float64)
        self.stack = np.zeros(max(1, max_stack_depth(code)), dtype=np.float64)

    def __call__(self, x) -> float:
        xv = np.asarray(x, dtype=np.float64)
        val = float(eval_code(self.ops, self.args, self.consts, 0, len(self.ops), xv, self.stack))
        if val != val:
            raise DomainError(f"expression undefined at x={xv.tolist()}")
        return val


# ---------------------------------------------------------------- signed-log evaluation
#
# Values are carried as sign * exp(L) so that rates such as exp(-k/x) keep a
# finite logarithm far below the double-precision underflow threshold. Zero
# is (0, -inf).


@njit
def _slog(v):
    if v != v:
        return 0.0, np.nan
    if v == 0.0:
        return 0.0, -np.inf
    if v > 0.0:
        return 1.0, math.log(v) if v != np.inf else np.inf
    return -1.0, math.log(-v) if v != -np.inf else np.inf


@njit
def _sl_real(s, L):
    if s == 0.0:
        return 0.0
    if L > 709.0:
        return s * np.inf
    return s * math.exp(L)


@njit
def _sl_add(sa, La, sb, Lb):
    if sa == 0.0:
        return sb, Lb
    if sb == 0.0:
        return sa, La
    if La == np.inf and Lb == np.inf:
        if sa == sb:
            return sa, np.inf
        return 0.0, np.nan
    if La >= Lb:
        hi_s, hi_L, lo_s, lo_L = sa, La, sb, Lb
    else:
        hi_s, hi_L, lo_s, lo_L = sb, Lb, sa, La
    if hi_L == np.inf:
        return hi_s, np.inf
    if hi_s == lo_s:
        return hi_s, hi_L + math.log1p(math.exp(lo_L - hi_L))
    if lo_L == hi_L:
        return 0.0, -np.inf
    return hi_s, hi_L + math.log1p(-math.exp(lo_L - hi_L))


@njit
def _sl_less(sa, La, sb, Lb):
    if sa != sb:
        return sa < sb
    if sa > 0.0:
        return La < Lb
    if sa < 0.0:
        return La > Lb
    return False


@njit
def eval_code_log(ops, args, consts, start, stop, x, ss, sL):
    """Signed-log twin of :func:`eval_code`; returns ``(sign, log|value|)``.

    A NaN logarithm signals a domain error.
    """
    sp = 0
    for i in range(start, stop):
        op = ops[i]
        if op == OP_CONST:
            s, L = _slog(consts[args[i]])
            ss[sp] = s
            sL[sp] = L
            sp += 1
            continue
        if op == OP_VAR:
            s, L = _slog(x[args[i]])
            ss[sp] = s
            sL[sp] = L
            sp += 1
            continue
        if op == OP_NEG:
            ss[sp - 1] = -ss[sp - 1]
            continue
        if op == OP_EXP:
            a = _sl_real(ss[sp - 1], sL[sp - 1])
            if a == -np.inf:
                ss[sp - 1] = 0.0
                sL[sp - 1] = -np.inf
            else:
                ss[sp - 1] = 1.0
                sL[sp - 1] = a
            continue
        if op == OP_LOG:
            s = ss[sp - 1]
            if s < 0.0:
                return 0.0, np.nan
            if s == 0.0:
                ss[sp - 1] = -1.0
                sL[sp - 1] = np.inf
            else:
                s2, L2 = _slog(sL[sp - 1])
                ss[sp - 1] = s2
                sL[sp - 1] = L2
            continue
        if op == OP_STEP:
            ss[sp - 1] = 1.0 if ss[sp - 1] >= 0.0 else 0.0
            sL[sp - 1] = 0.0 if ss[sp - 1] > 0.0 else -np.inf
            continue
        sb, Lb = ss[sp - 1], sL[sp - 1]
        sa, La = ss[sp - 2], sL[sp - 2]
        sp -= 1
        if op == OP_ADD:
            rs, rL = _sl_add(sa, La, sb, Lb)
        elif op == OP_SUB:
            rs, rL = _sl_add(sa, La, -sb, Lb)
        elif op == OP_MUL:
            if sa == 0.0 or sb == 0.0:
                if (sa == 0.0 and Lb == np.inf) or (sb == 0.0 and La == np.inf):
                    return 0.0, np.nan
                rs, rL = 0.0, -np.inf
            else:
                rs, rL = sa * sb, La + Lb
        elif op == OP_DIV:
            if sb == 0.0:
                if sa == 0.0:
                    return 0.0, np.nan
                rs, rL = sa, np.inf
            elif La == np.inf and Lb == np.inf:
                return 0.0, np.nan
            else:
                rs, rL = sa * sb, La - Lb
        elif op == OP_POW:
            b = _sl_real(sb, Lb)
            if sa == 0.0:
                if b > 0.0:
                    rs, rL = 0.0, -np.inf
                elif b == 0.0:
                    rs, rL = 1.0, 0.0
                else:
                    rs, rL = 1.0, np.inf
            elif b == 0.0:
                rs, rL = 1.0, 0.0
            elif sa < 0.0:
                if b != math.floor(b):
                    return 0.0, np.nan
                rs = -1.0 if abs(b) % 2.0 == 1.0 else 1.0
                rL = b * La
            else:
                rs, rL = 1.0, b * La
        elif op == OP_MIN:
            if _sl_less(sb, Lb, sa, La):
                rs, rL = sb, Lb
            else:
                rs, rL = sa, La
        else:
            if _sl_less(sa, La, sb, Lb):
                rs, rL = sb, Lb
            else:
                rs, rL = sa, La
        if rL != rL:
            return 0.0, np.nan
        if rL == -np.inf:
            rs = 0.0
        ss[sp - 1] = rs
        sL[sp - 1] = rL
    return ss[0], sL[0]
