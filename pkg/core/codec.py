#!/usr/bin/env python3
"""
Cert Relay - Canonical Codec
证书中继 - 规范二进制编码

长度前缀、字段有序的二进制格式。签名与哈希都建立在这些字节之上，
因此同一值永远只有一种编码。
"""

import hashlib
import struct
from typing import Callable, Iterable, List, TypeVar

from .group import GroupBackend, GroupElement, Scalar

T = TypeVar("T")


class CodecError(ValueError):
    """非规范或截断的编码"""


def digest(domain: str, data: bytes) -> bytes:
    """带域标签的 SHA-256"""
    tag = domain.encode("utf-8")
    return hashlib.sha256(len(tag).to_bytes(1, "big") + tag + data).digest()


class Writer:
    """规范编码写入器"""

    def __init__(self):
        self._parts: List[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Writer":
        if not (0 <= value < 2 ** 32):
            raise ValueError(f"u32 must be in [0, 2^32), got {value}")
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Writer":
        if not (0 <= value < 2 ** 64):
            raise ValueError(f"u64 must be in [0, 2^64), got {value}")
        self._parts.append(struct.pack(">Q", value))
        return self

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def element(self, element: GroupElement) -> "Writer":
        return self.blob(element.encode())

    def scalar(self, scalar: Scalar) -> "Writer":
        return self.blob(scalar.to_bytes())

    def seq(self, items: Iterable[T], write_item: Callable[["Writer", T], object]) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for item in items:
            write_item(self, item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """规范编码读取器；任何越界或剩余字节都抛出 CodecError"""

    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def _take(self, size: int) -> bytes:
        if self._pos + size > len(self._data):
            raise CodecError(f"truncated input at offset {self._pos}, need {size} bytes")
        chunk = self._data[self._pos:self._pos + size]
        self._pos += size
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError(f"invalid utf-8 text: {e}") from e

    def element(self, group: GroupBackend) -> GroupElement:
        try:
            return group.decode_element(self.blob())
        except CodecError:
            raise
        except ValueError as e:
            raise CodecError(str(e)) from e

    def scalar(self, group: GroupBackend) -> Scalar:
        try:
            return group.decode_scalar(self.blob())
        except CodecError:
            raise
        except ValueError as e:
            raise CodecError(str(e)) from e

    def seq(self, read_item: Callable[["Reader"], T]) -> List[T]:
        count = self.u32()
        if count > len(self._data) - self._pos:
            raise CodecError(f"sequence length {count} exceeds remaining input")
        return [read_item(self) for _ in range(count)]

    def expect_end(self):
        if self._pos != len(self._data):
            raise CodecError(f"{len(self._data) - self._pos} trailing bytes")
