"""Reader and canonical printer for contract source.

Contract source looks like::

    (contract
      (method init () (list (assoc) 0))
      (method get () (list state (assoc-get state "count" 0))))

The canonical text is the single rendering every party hashes: tokens
separated by single spaces, no comments, ``'x`` expanded to ``(quote x)``,
no trailing newline.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Any

from .values import Symbol

_INT_RE = re.compile(r"[+-]?[0-9]+\Z")
_DELIMS = set("()\";'") | set(" \t\r\n\f\v")
_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"'}
_UNESCAPES = {"\n": "\\n", "\t": "\\t", "\\": "\\\\", '"': '\\"'}

SPECIAL_FORMS = frozenset({"quote", "if", "let", "lambda", "begin", "and", "or"})
STATE_NAME = "state"
STRUCTURE_WORDS = frozenset({"contract", "method"})


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f" at line {line}, column {column}" if line else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class _Token:
    kind: str  # "(", ")", "'", "atom", "string"
    text: Any
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(ch: str) -> None:
        nonlocal line, col
        if ch == "\n":
            line, col = line + 1, 1
        else:
            col += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n\f\v":
            advance(ch)
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                advance(text[i])
                i += 1
        elif ch in "()'":
            tokens.append(_Token(ch, ch, line, col))
            advance(ch)
            i += 1
        elif ch == '"':
            start_line, start_col = line, col
            advance(ch)
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise ParseError("unterminated string", start_line, start_col)
                c = text[i]
                if c == '"':
                    advance(c)
                    i += 1
                    break
                if c == "\\":
                    nxt = text[i + 1] if i + 1 < n else ""
                    if nxt not in _ESCAPES:
                        raise ParseError(f"bad escape \\{nxt}", line, col)
                    buf.append(_ESCAPES[nxt])
                    advance(c)
                    advance(nxt)
                    i += 2
                    continue
                buf.append(c)
                advance(c)
                i += 1
            tokens.append(_Token("string", "".join(buf), start_line, start_col))
        else:
            start = i
            start_line, start_col = line, col
            while i < n and text[i] not in _DELIMS:
                advance(text[i])
                i += 1
            tokens.append(_Token("atom", text[start:i], start_line, start_col))
    return tokens


def _atom(tok: _Token) -> Any:
    word = tok.text
    if _INT_RE.match(word):
        return int(word)
    if word == "#t":
        return True
    if word == "#f":
        return False
    if word.startswith("#"):
        raise ParseError(f"unknown literal {word}", tok.line, tok.col)
    return Symbol(word)


def read_all(text: str) -> list[Any]:
    """Read every datum in ``text``; lists become tuples."""
    tokens = _tokenize(text)
    pos = 0

    def read() -> Any:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok.kind == "(":
            items = []
            while True:
                if pos >= len(tokens):
                    raise ParseError("unclosed '('", tok.line, tok.col)
                if tokens[pos].kind == ")":
                    pos += 1
                    return tuple(items)
                items.append(read())
        if tok.kind == ")":
            raise ParseError("unexpected ')'", tok.line, tok.col)
        if tok.kind == "'":
            if pos >= len(tokens):
                raise ParseError("quote with nothing to quote", tok.line, tok.col)
            return (Symbol("quote"), read())
        if tok.kind == "string":
            return tok.text
        return _atom(tok)

    data = []
    while pos < len(tokens):
        data.append(read())
    return data


def render(datum: Any) -> str:
    t = type(datum)
    if t is tuple:
        return "(" + " ".join(render(x) for x in datum) + ")"
    if t is bool:
        return "#t" if datum else "#f"
    if t is int:
        return str(datum)
    if t is str:
        return '"' + "".join(_UNESCAPES.get(c, c) for c in datum) + '"'
    if t is Symbol:
        return str(datum)
    raise TypeError(f"cannot render {t.__name__}")


@dataclass(frozen=True)
class Method:
    name: str
    params: tuple[str, ...]
    body: Any


@dataclass(frozen=True)
class Program:
    methods: dict[str, Method]
    canonical_text: str

    @property
    def code_hash(self) -> bytes:
        return hashlib.sha256(self.canonical_text.encode("utf-8")).digest()


def reserved_names() -> frozenset[str]:
    from .evaluator import PRIMITIVES

    return SPECIAL_FORMS | STRUCTURE_WORDS | frozenset(PRIMITIVES) | {STATE_NAME}


def _check_binding(name: Any, reserved: frozenset[str], what: str) -> str:
    if type(name) is not Symbol:
        raise ParseError(f"{what} must be a symbol, got {render(name)}")
    if name in reserved:
        raise ParseError(f"{what} '{name}' collides with a reserved name")
    return str(name)


def _check_params(params: Any, reserved: frozenset[str], what: str) -> tuple[str, ...]:
    if type(params) is not tuple:
        raise ParseError(f"{what} parameter list must be a list")
    names = tuple(_check_binding(p, reserved, "parameter") for p in params)
    if len(set(names)) != len(names):
        raise ParseError(f"{what} has duplicate parameters")
    return names


def check_syntax(x: Any, reserved: frozenset[str]) -> None:
    """Validate special-form shapes once, so evaluation can trust them."""
    if type(x) is not tuple:
        return
    if not x:
        raise ParseError("empty application ()")
    head = x[0]
    if type(head) is Symbol and head in SPECIAL_FORMS:
        if head == "quote":
            if len(x) != 2:
                raise ParseError("quote takes exactly one datum")
            return
        if head == "if":
            if len(x) != 4:
                raise ParseError("if needs condition, consequent and alternative")
        elif head in ("begin",):
            if len(x) < 2:
                raise ParseError("begin needs at least one expression")
        elif head == "lambda":
            if len(x) < 3:
                raise ParseError("lambda needs parameters and a body")
            _check_params(x[1], reserved, "lambda")
            for body in x[2:]:
                check_syntax(body, reserved)
            return
        elif head == "let":
            if len(x) < 3 or type(x[1]) is not tuple:
                raise ParseError("let needs a binding list and a body")
            seen = set()
            for binding in x[1]:
                if type(binding) is not tuple or len(binding) != 2:
                    raise ParseError("let binding must be (name expr)")
                name = _check_binding(binding[0], reserved, "let variable")
                if name in seen:
                    raise ParseError(f"let binds '{name}' twice")
                seen.add(name)
                check_syntax(binding[1], reserved)
            for body in x[2:]:
                check_syntax(body, reserved)
            return
        for arg in x[1:]:
            check_syntax(arg, reserved)
        return
    for item in x:
        check_syntax(item, reserved)


def parse(text: str) -> Program:
    data = read_all(text)
    if len(data) != 1:
        raise ParseError(f"expected exactly one (contract ...) form, found {len(data)}")
    form = data[0]
    if type(form) is not tuple or not form or form[0] != Symbol("contract") or type(form[0]) is not Symbol:
        raise ParseError("top-level form must be (contract ...)")
    reserved = reserved_names()
    methods: dict[str, Method] = {}
    for m in form[1:]:
        if type(m) is not tuple or len(m) != 4 or m[0] != "method" or type(m[0]) is not Symbol:
            raise ParseError("each contract entry must be (method NAME (PARAMS...) BODY)")
        name = _check_binding(m[1], reserved, "method name")
        if name in methods:
            raise ParseError(f"duplicate method '{name}'")
        params = _check_params(m[2], reserved, f"method '{name}'")
        check_syntax(m[3], reserved)
        methods[name] = Method(name, params, m[3])
    return Program(methods, render(form))


def canonicalize(program: Program) -> str:
    parts = ["contract"]
    for m in program.methods.values():
        params = "(" + " ".join(m.params) + ")"
        parts.append(f"(method {m.name} {params} {render(m.body)})")
    return "(" + " ".join(parts) + ")"
