"""Contract values and their canonical byte encoding.

Python types used for contract values:

    integer  -> int (never bool)
    boolean  -> bool
    string   -> str (exact type, not Symbol)
    symbol   -> Symbol
    list     -> tuple
    assoc    -> Assoc

Equality between values is defined by their encodings, since Python's own
``==`` conflates ``True`` with ``1`` and ``Symbol("a")`` with ``"a"``.
"""

from __future__ import annotations

import struct
from typing import Any, Iterator, Mapping, Union


class Symbol(str):
    __slots__ = ()

    def __repr__(self) -> str:
        return f"Symbol({str(self)!r})"


class Assoc(Mapping[str, Any]):
    """Immutable string-keyed map; every update returns a new Assoc."""

    __slots__ = ("_items",)

    def __init__(self, items: Mapping[str, Any] | None = None):
        self._items = dict(items or {})

    def __getitem__(self, key: str) -> Any:
        return self._items[key]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._items))

    def __len__(self) -> int:
        return len(self._items)

    def set(self, key: str, value: Any) -> Assoc:
        items = dict(self._items)
        items[key] = value
        return Assoc(items)

    def delete(self, key: str) -> Assoc:
        items = dict(self._items)
        items.pop(key, None)
        return Assoc(items)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Assoc):
            return NotImplemented
        return values_equal(self, other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {self._items[k]!r}" for k in self)
        return f"Assoc({{{inner}}})"


Value = Union[int, bool, str, Symbol, tuple, Assoc]

EMPTY_STATE = Assoc()


class ValueEncodingError(ValueError):
    pass


_LEN = struct.Struct(">I")


def encode_value(v: Any) -> bytes:
    out = bytearray()
    _enc(v, out)
    return bytes(out)


def _enc(v: Any, out: bytearray) -> None:
    t = type(v)
    if t is bool:
        out += b"T" if v else b"F"
    elif t is int:
        mag = abs(v)
        raw = mag.to_bytes((mag.bit_length() + 7) // 8, "big")
        out += b"I" + (b"-" if v < 0 else b"+") + _LEN.pack(len(raw)) + raw
    elif t is str:
        raw = v.encode("utf-8")
        out += b"S" + _LEN.pack(len(raw)) + raw
    elif t is Symbol:
        raw = str(v).encode("utf-8")
        out += b"Y" + _LEN.pack(len(raw)) + raw
    elif t is tuple:
        out += b"L" + _LEN.pack(len(v))
        for item in v:
            _enc(item, out)
    elif t is Assoc:
        keys = sorted(v._items, key=lambda k: k.encode("utf-8"))
        out += b"A" + _LEN.pack(len(keys))
        for k in keys:
            raw = k.encode("utf-8")
            out += _LEN.pack(len(raw)) + raw
            _enc(v._items[k], out)
    else:
        raise ValueEncodingError(f"not a data value: {t.__name__}")


def decode_value(data: bytes) -> Any:
    v, pos = _dec(data, 0)
    if pos != len(data):
        raise ValueEncodingError("trailing bytes")
    return v


def _raw(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(data):
        raise ValueEncodingError("truncated length")
    n = _LEN.unpack_from(data, pos)[0]
    pos += 4
    if pos + n > len(data):
        raise ValueEncodingError("truncated payload")
    return data[pos:pos + n], pos + n


def _text(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueEncodingError("invalid utf-8") from exc


def _dec(data: bytes, pos: int) -> tuple[Any, int]:
    tag = data[pos:pos + 1]
    pos += 1
    if tag == b"T":
        return True, pos
    if tag == b"F":
        return False, pos
    if tag == b"I":
        sign = data[pos:pos + 1]
        if sign not in (b"+", b"-"):
            raise ValueEncodingError("bad sign")
        raw, pos = _raw(data, pos + 1)
        if raw[:1] == b"\x00" or (sign == b"-" and not raw):
            raise ValueEncodingError("non-minimal integer")
        mag = int.from_bytes(raw, "big")
        return (-mag if sign == b"-" else mag), pos
    if tag == b"S":
        raw, pos = _raw(data, pos)
        return _text(raw), pos
    if tag == b"Y":
        raw, pos = _raw(data, pos)
        return Symbol(_text(raw)), pos
    if tag == b"L":
        if pos + 4 > len(data):
            raise ValueEncodingError("truncated length")
        n = _LEN.unpack_from(data, pos)[0]
        pos += 4
        items = []
        for _ in range(n):
            item, pos = _dec(data, pos)
            items.append(item)
        return tuple(items), pos
    if tag == b"A":
        if pos + 4 > len(data):
            raise ValueEncodingError("truncated length")
        n = _LEN.unpack_from(data, pos)[0]
        pos += 4
        items: dict[str, Any] = {}
        prev = None
        for _ in range(n):
            raw, pos = _raw(data, pos)
            if prev is not None and raw <= prev:
                raise ValueEncodingError("assoc keys not strictly ascending")
            prev = raw
            items[_text(raw)], pos = _dec(data, pos)
        return Assoc(items), pos
    raise ValueEncodingError(f"unknown tag {tag!r}")


def values_equal(a: Any, b: Any) -> bool:
    return encode_value(a) == encode_value(b)


def is_data(v: Any) -> bool:
    try:
        encode_value(v)
    except ValueEncodingError:
        return False
    return True


def to_json(v: Any) -> Any:
    """Render a value as JSON-compatible data (assoc -> object, list -> array)."""
    t = type(v)
    if t in (bool, int, str):
        return v
    if t is Symbol:
        return {"$symbol": str(v)}
    if t is tuple:
        return [to_json(x) for x in v]
    if t is Assoc:
        return {k: to_json(v[k]) for k in v}
    raise ValueEncodingError(f"not a data value: {t.__name__}")


def from_json(obj: Any) -> Any:
    if isinstance(obj, bool) or isinstance(obj, int) or isinstance(obj, str):
        return obj
    if isinstance(obj, list):
        return tuple(from_json(x) for x in obj)
    if isinstance(obj, dict):
        if set(obj) == {"$symbol"}:
            return Symbol(obj["$symbol"])
        return Assoc({str(k): from_json(x) for k, x in obj.items()})
    raise ValueEncodingError(f"no contract value for JSON {type(obj).__name__}")
