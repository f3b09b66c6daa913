"""Step-budgeted evaluator.

Evaluation is a pure function of (program, method, state, args, caller).
The primitive table below is the whole world a contract can reach: there
is no I/O, clock, randomness or host access.  Every special-form reduction
and every procedure application costs one step.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass
from typing import Any, Callable

from .reader import STATE_NAME, Program
from .values import Assoc, Symbol, ValueEncodingError, encode_value

DEFAULT_MAX_STEPS = 1_000_000
MAX_DEPTH = 2_000
# size caps keep one step from doing unbounded work (repeated squaring/doubling)
MAX_INT_BITS = 4096
MAX_STRING_LENGTH = 1 << 20


class EvalError(Exception):
    """Any failure while evaluating contract code."""


class UnknownMethod(EvalError):
    pass


class ArityError(EvalError):
    pass


class ContractTypeError(EvalError):
    pass


class BudgetExhausted(EvalError):
    pass


class DepthExceeded(EvalError):
    pass


class ContractRaised(EvalError):
    """The contract called ``(error msg)``."""


class BadMethodResult(EvalError):
    pass


@dataclass
class StepBudget:
    max_steps: int = DEFAULT_MAX_STEPS
    used: int = 0


class Env:
    __slots__ = ("vars", "parent")

    def __init__(self, vars: dict, parent: Env | None):
        self.vars = vars
        self.parent = parent

    def lookup(self, name: str) -> Any:
        env: Env | None = self
        while env is not None:
            if name in env.vars:
                return env.vars[name]
            env = env.parent
        raise EvalError(f"unbound variable '{name}'")


class Closure:
    __slots__ = ("params", "nparams", "init", "last", "env", "name")

    def __init__(self, params: tuple[str, ...], body: tuple, env: Env, name: str = "lambda"):
        self.params = params
        self.nparams = len(params)
        self.init = body[:-1]
        self.last = body[-1]
        self.env = env
        self.name = name

    def __repr__(self) -> str:
        return f"<procedure {self.name}>"


# -- primitives ---------------------------------------------------------------

def _int(v: Any, who: str) -> int:
    if type(v) is not int:
        raise ContractTypeError(f"{who}: expected integer, got {_typename(v)}")
    return v


def _str(v: Any, who: str) -> str:
    if type(v) is not str:
        raise ContractTypeError(f"{who}: expected string, got {_typename(v)}")
    return v


def _bool(v: Any, who: str) -> bool:
    if type(v) is not bool:
        raise ContractTypeError(f"{who}: expected boolean, got {_typename(v)}")
    return v


def _list(v: Any, who: str) -> tuple:
    if type(v) is not tuple:
        raise ContractTypeError(f"{who}: expected list, got {_typename(v)}")
    return v


def _assoc(v: Any, who: str) -> Assoc:
    if type(v) is not Assoc:
        raise ContractTypeError(f"{who}: expected assoc, got {_typename(v)}")
    return v


def _typename(v: Any) -> str:
    return {
        bool: "boolean", int: "integer", str: "string", Symbol: "symbol",
        tuple: "list", Assoc: "assoc", Closure: "procedure",
    }.get(type(v), type(v).__name__)


def _arity(args: list, lo: int, hi: int | None, who: str) -> None:
    if len(args) < lo or (hi is not None and len(args) > hi):
        want = str(lo) if hi == lo else f"{lo}..{'' if hi is None else hi}"
        raise ArityError(f"{who}: expected {want} arguments, got {len(args)}")


def _bounded(n: int, who: str) -> int:
    if n.bit_length() > MAX_INT_BITS:
        raise EvalError(f"{who}: integer exceeds {MAX_INT_BITS} bits")
    return n


def _add(args, ctx):
    return _bounded(sum(_int(a, "+") for a in args), "+")


def _sub(args, ctx):
    _arity(args, 1, None, "-")
    first = _int(args[0], "-")
    if len(args) == 1:
        return -first
    return _bounded(first - sum(_int(a, "-") for a in args[1:]), "-")


def _mul(args, ctx):
    out = 1
    for a in args:
        out = _bounded(out * _int(a, "*"), "*")
    return out


def _divmod_trunc(args, who):
    _arity(args, 2, 2, who)
    a, b = _int(args[0], who), _int(args[1], who)
    if b == 0:
        raise EvalError(f"{who}: division by zero")
    q = abs(a) // abs(b)
    if (a < 0) != (b < 0):
        q = -q
    return q, a - b * q


def _compare(op: Callable[[int, int], bool], who: str):
    def prim(args, ctx):
        _arity(args, 2, None, who)
        nums = [_int(a, who) for a in args]
        return all(op(x, y) for x, y in zip(nums, nums[1:]))
    return prim


def _not(args, ctx):
    _arity(args, 1, 1, "not")
    return not _bool(args[0], "not")


def _cons(args, ctx):
    _arity(args, 2, 2, "cons")
    return (args[0],) + _list(args[1], "cons")


def _car(args, ctx):
    _arity(args, 1, 1, "car")
    lst = _list(args[0], "car")
    if not lst:
        raise EvalError("car: empty list")
    return lst[0]


def _cdr(args, ctx):
    _arity(args, 1, 1, "cdr")
    lst = _list(args[0], "cdr")
    if not lst:
        raise EvalError("cdr: empty list")
    return lst[1:]


def _null(args, ctx):
    _arity(args, 1, 1, "null?")
    return _list(args[0], "null?") == ()


def _length(args, ctx):
    _arity(args, 1, 1, "length")
    return len(_list(args[0], "length"))


def _make_assoc(args, ctx):
    if len(args) % 2:
        raise ArityError("assoc: expected key/value pairs")
    items = {}
    for k, v in zip(args[::2], args[1::2]):
        items[_str(k, "assoc")] = v
    return Assoc(items)


def _assoc_get(args, ctx):
    _arity(args, 2, 3, "assoc-get")
    a, k = _assoc(args[0], "assoc-get"), _str(args[1], "assoc-get")
    if k in a:
        return a[k]
    if len(args) == 3:
        return args[2]
    raise EvalError(f"assoc-get: missing key {k!r}")


def _assoc_set(args, ctx):
    _arity(args, 3, 3, "assoc-set")
    return _assoc(args[0], "assoc-set").set(_str(args[1], "assoc-set"), args[2])


def _assoc_del(args, ctx):
    _arity(args, 2, 2, "assoc-del")
    return _assoc(args[0], "assoc-del").delete(_str(args[1], "assoc-del"))


def _assoc_keys(args, ctx):
    _arity(args, 1, 1, "assoc-keys")
    return tuple(_assoc(args[0], "assoc-keys"))


def _assoc_has(args, ctx):
    _arity(args, 2, 2, "assoc-has?")
    return _str(args[1], "assoc-has?") in _assoc(args[0], "assoc-has?")


def _string_append(args, ctx):
    out = "".join(_str(a, "string-append") for a in args)
    if len(out) > MAX_STRING_LENGTH:
        raise EvalError(f"string-append: result exceeds {MAX_STRING_LENGTH} characters")
    return out


def _string_eq(args, ctx):
    _arity(args, 2, None, "string=?")
    strs = [_str(a, "string=?") for a in args]
    return all(s == strs[0] for s in strs)


def _string_length(args, ctx):
    _arity(args, 1, 1, "string-length")
    return len(_str(args[0], "string-length"))


def _number_to_string(args, ctx):
    _arity(args, 1, 1, "number->string")
    return str(_int(args[0], "number->string"))


def _encode(v: Any, who: str) -> bytes:
    try:
        return encode_value(v)
    except ValueEncodingError as exc:
        raise ContractTypeError(f"{who}: {exc}") from None


def _equal(args, ctx):
    _arity(args, 2, 2, "equal?")
    return _encode(args[0], "equal?") == _encode(args[1], "equal?")


def _digest(args, ctx):
    _arity(args, 1, 1, "digest")
    return hashlib.sha256(_encode(args[0], "digest")).hexdigest()


def _caller(args, ctx):
    _arity(args, 0, 0, "caller")
    if ctx.caller is None:
        raise EvalError("caller: no invoking channel key")
    return ctx.caller


def _error(args, ctx):
    _arity(args, 1, 1, "error")
    raise ContractRaised(_str(args[0], "error"))


PRIMITIVES: dict[str, Callable[[list, Any], Any]] = {
    "+": _add,
    "-": _sub,
    "*": _mul,
    "quotient": lambda args, ctx: _divmod_trunc(args, "quotient")[0],
    "remainder": lambda args, ctx: _divmod_trunc(args, "remainder")[1],
    "=": _compare(lambda a, b: a == b, "="),
    "<": _compare(lambda a, b: a < b, "<"),
    ">": _compare(lambda a, b: a > b, ">"),
    "<=": _compare(lambda a, b: a <= b, "<="),
    ">=": _compare(lambda a, b: a >= b, ">="),
    "not": _not,
    "cons": _cons,
    "car": _car,
    "cdr": _cdr,
    "list": lambda args, ctx: tuple(args),
    "null?": _null,
    "length": _length,
    "assoc": _make_assoc,
    "assoc-get": _assoc_get,
    "assoc-set": _assoc_set,
    "assoc-del": _assoc_del,
    "assoc-keys": _assoc_keys,
    "assoc-has?": _assoc_has,
    "string-append": _string_append,
    "string=?": _string_eq,
    "string-length": _string_length,
    "number->string": _number_to_string,
    "equal?": _equal,
    "digest": _digest,
    "caller": _caller,
    "error": _error,
}


# -- evaluation ---------------------------------------------------------------

_QUOTE = "quote"
_IF = "if"
_LET = "let"
_LAMBDA = "lambda"
_BEGIN = "begin"
_AND = "and"
_OR = "or"


class _Machine:
    def __init__(self, budget: StepBudget, caller: str | None):
        self.budget = budget
        self.caller = caller

    def eval(self, x: Any, env: Env, depth: int) -> Any:
        if depth > MAX_DEPTH:
            raise DepthExceeded(f"nesting deeper than {MAX_DEPTH}")
        budget = self.budget
        deeper = depth + 1
        while True:
            t = type(x)
            if t is Symbol:
                return env.lookup(x)
            if t is not tuple:
                return x
            head = x[0]
            fn: Any = None
            if type(head) is Symbol:
                if head in _SPECIAL:
                    budget.used += 1
                    if budget.used > budget.max_steps:
                        raise BudgetExhausted(f"step budget of {budget.max_steps} exhausted")
                    if head == _QUOTE:
                        return x[1]
                    if head == _IF:
                        test = self.eval(x[1], env, deeper)
                        if type(test) is not bool:
                            raise ContractTypeError(f"if: condition must be boolean, got {_typename(test)}")
                        x = x[2] if test else x[3]
                        continue
                    if head == _BEGIN:
                        for sub in x[1:-1]:
                            self.eval(sub, env, deeper)
                        x = x[-1]
                        continue
                    if head == _LET:
                        frame = {name: self.eval(expr, env, deeper) for name, expr in x[1]}
                        env = Env(frame, env)
                        for sub in x[2:-1]:
                            self.eval(sub, env, deeper)
                        x = x[-1]
                        continue
                    if head == _LAMBDA:
                        return Closure(tuple(str(p) for p in x[1]), x[2:], env)
                    # and / or
                    stop = head == _OR
                    if len(x) == 1:
                        return not stop
                    for sub in x[1:-1]:
                        if _bool(self.eval(sub, env, deeper), str(head)) is stop:
                            return stop
                    return _bool(self.eval(x[-1], env, deeper), str(head))
                fn = _PRIMS_GET(head)
                if fn is None:
                    e: Env | None = env
                    while e is not None:
                        if head in e.vars:
                            fn = e.vars[head]
                            break
                        e = e.parent
                    else:
                        raise EvalError(f"unbound variable '{head}'")
            else:
                fn = self.eval(head, env, deeper)
            if len(x) == 1:
                args = []
            else:
                args = []
                for a in x[1:]:
                    ta = type(a)
                    if ta is tuple or ta is Symbol:
                        args.append(self.eval(a, env, deeper))
                    else:
                        args.append(a)
            budget.used += 1
            if budget.used > budget.max_steps:
                raise BudgetExhausted(f"step budget of {budget.max_steps} exhausted")
            if type(fn) is Closure:
                if fn.nparams:
                    if len(args) != fn.nparams:
                        raise ArityError(f"{fn.name}: expected {fn.nparams} arguments, got {len(args)}")
                    env = Env(dict(zip(fn.params, args)), fn.env)
                elif args:
                    raise ArityError(f"{fn.name}: expected 0 arguments, got {len(args)}")
                else:
                    env = fn.env
                for sub in fn.init:
                    self.eval(sub, env, deeper)
                x = fn.last
                continue
            if fn in _PRIM_VALUES:
                return fn(args, self)
            raise ContractTypeError(f"cannot apply {_typename(fn)}")


_SPECIAL = frozenset({_QUOTE, _IF, _LET, _LAMBDA, _BEGIN, _AND, _OR})
_PRIM_VALUES = frozenset(PRIMITIVES.values())
_PRIMS_GET = PRIMITIVES.get


def _ensure_stack() -> None:
    # each nesting level is one Python frame; leave generous headroom
    need = MAX_DEPTH * 2 + 1000
    if sys.getrecursionlimit() < need:
        sys.setrecursionlimit(need)


def eval_method(
    program: Program,
    method: str,
    state: Any,
    args: list | tuple,
    budget: StepBudget | None = None,
    caller: str | None = None,
) -> tuple[Any, Any]:
    """Run ``method`` and return ``(new_state, result)``.

    The method body must evaluate to a two-element list.  ``state`` is bound
    to the current state inside every method body; ``(caller)`` returns the
    channel key hex supplied here.
    """
    if method not in program.methods:
        raise UnknownMethod(f"unknown method '{method}'")
    m = program.methods[method]
    if len(args) != len(m.params):
        raise ArityError(f"{method}: expected {len(m.params)} arguments, got {len(args)}")
    budget = budget if budget is not None else StepBudget()
    _ensure_stack()

    genv = Env({STATE_NAME: state}, None)
    for other in program.methods.values():
        genv.vars[other.name] = Closure(other.params, (other.body,), genv, other.name)

    machine = _Machine(budget, caller)
    env = Env(dict(zip(m.params, args)), genv)
    out = machine.eval(m.body, env, 0)
    if type(out) is not tuple or len(out) != 2:
        raise BadMethodResult(f"{method}: body must return (new-state result)")
    new_state, result = out
    for part, label in ((new_state, "new state"), (result, "result")):
        try:
            encode_value(part)
        except ValueEncodingError:
            raise BadMethodResult(f"{method}: {label} is not a data value") from None
    return new_state, result


def evaluate(expr_text: str, state: Any = None, budget: StepBudget | None = None, caller: str | None = None) -> Any:
    """Evaluate a standalone expression (handy for tests and the REPL-ish CLI)."""
    from .reader import check_syntax, read_all, reserved_names

    data = read_all(expr_text)
    if len(data) != 1:
        raise EvalError("expected exactly one expression")
    check_syntax(data[0], reserved_names())
    _ensure_stack()
    env = Env({STATE_NAME: state if state is not None else Assoc()}, None)
    return _Machine(budget or StepBudget(), caller).eval(data[0], env, 0)
