"""Deterministic binary encoding for everything that gets hashed or signed.

Every value maps to exactly one byte string and decoding is strict: any
input that is not the canonical encoding of some value is rejected.  This
is what lets a hash or a signature computed by one party be recomputed
byte-for-byte by any other party.

Supported values: ``None``, ``bool``, ``int``, ``bytes``, ``str``,
``list``/``tuple`` and ``dict`` with ``str`` keys.  Dict keys are sorted by
their UTF-8 encoding.
"""

from __future__ import annotations

import struct
from typing import Any

_NONE = b"n"
_TRUE = b"t"
_FALSE = b"f"
_INT = b"i"
_BYTES = b"b"
_STR = b"s"
_LIST = b"l"
_MAP = b"m"

_LEN = struct.Struct(">I")


class EncodingError(ValueError):
    """Raised for values that cannot be encoded or bytes that are not canonical."""


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out += _NONE
    elif value is True:
        out += _TRUE
    elif value is False:
        out += _FALSE
    elif isinstance(value, int):
        mag = abs(value)
        raw = mag.to_bytes((mag.bit_length() + 7) // 8, "big")
        out += _INT
        out += b"-" if value < 0 else b"+"
        out += _LEN.pack(len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        out += _BYTES + _LEN.pack(len(raw)) + raw
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += _STR + _LEN.pack(len(raw)) + raw
    elif isinstance(value, (list, tuple)):
        out += _LIST + _LEN.pack(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        keys = []
        for k in value:
            if not isinstance(k, str):
                raise EncodingError(f"map keys must be str, got {type(k).__name__}")
            keys.append((k.encode("utf-8"), k))
        keys.sort()
        out += _MAP + _LEN.pack(len(keys))
        for raw, k in keys:
            out += _STR + _LEN.pack(len(raw)) + raw
            _encode_into(value[k], out)
    else:
        raise EncodingError(f"cannot encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    value, pos = _decode_at(bytes(data), 0)
    if pos != len(data):
        raise EncodingError(f"trailing bytes at offset {pos}")
    return value


def _read_len(data: bytes, pos: int) -> tuple[int, int]:
    if pos + 4 > len(data):
        raise EncodingError("truncated length prefix")
    return _LEN.unpack_from(data, pos)[0], pos + 4


def _read_raw(data: bytes, pos: int) -> tuple[bytes, int]:
    n, pos = _read_len(data, pos)
    if pos + n > len(data):
        raise EncodingError("truncated payload")
    return data[pos:pos + n], pos + n


def _decode_at(data: bytes, pos: int) -> tuple[Any, int]:
    if pos >= len(data):
        raise EncodingError("unexpected end of input")
    tag = data[pos:pos + 1]
    pos += 1
    if tag == _NONE:
        return None, pos
    if tag == _TRUE:
        return True, pos
    if tag == _FALSE:
        return False, pos
    if tag == _INT:
        sign = data[pos:pos + 1]
        if sign not in (b"+", b"-"):
            raise EncodingError("bad integer sign")
        raw, pos = _read_raw(data, pos + 1)
        if raw[:1] == b"\x00" or (sign == b"-" and not raw):
            raise EncodingError("non-minimal integer")
        mag = int.from_bytes(raw, "big")
        return (-mag if sign == b"-" else mag), pos
    if tag == _BYTES:
        return _read_raw(data, pos)
    if tag == _STR:
        raw, pos = _read_raw(data, pos)
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise EncodingError("invalid utf-8") from exc
    if tag == _LIST:
        n, pos = _read_len(data, pos)
        items = []
        for _ in range(n):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return items, pos
    if tag == _MAP:
        n, pos = _read_len(data, pos)
        result: dict[str, Any] = {}
        prev: bytes | None = None
        for _ in range(n):
            if data[pos:pos + 1] != _STR:
                raise EncodingError("map key is not a string")
            raw, pos = _read_raw(data, pos + 1)
            if prev is not None and raw <= prev:
                raise EncodingError("map keys not strictly ascending")
            prev = raw
            try:
                key = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise EncodingError("invalid utf-8 key") from exc
            result[key], pos = _decode_at(data, pos)
        return result, pos
    raise EncodingError(f"unknown tag {tag!r} at offset {pos - 1}")
