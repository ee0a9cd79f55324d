#!/usr/bin/env python3
"""
Cert Relay - Prime-Order Group
证书中继 - 素数阶群与标量域

ICE-FROST 全部算术的底层抽象。两个后端共享同一接口：
- secp256k1: 生产强度椭圆曲线群（coincurve / libsecp256k1）
- inspection: 模 47 乘法群的 23 阶子群，生成元 2，可手算校验的测试向量

群运算按乘法记号书写：g ** s 表示幂，A * B 表示群运算。
"""

import hashlib
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from coincurve import PrivateKey as _SK, PublicKey as _PK
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

logger = logging.getLogger("CertRelay.group")


class DecryptionError(ValueError):
    """认证解密失败：密文被篡改或密钥不匹配"""


# ==================== 标量 ====================
class Scalar:
    """Z_q 中的元素，q 为群阶"""

    __slots__ = ("group", "value")

    def __init__(self, group: "GroupBackend", value: int):
        self.group = group
        self.value = value % group.order

    def _coerce(self, other: Any) -> Optional[int]:
        if isinstance(other, Scalar):
            if other.group.name != self.group.name:
                raise ValueError(f"scalar backends must match, got {self.group.name} and {other.group.name}")
            return other.value
        if isinstance(other, int):
            return other
        return None

    def __add__(self, other):
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return Scalar(self.group, self.value + v)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return Scalar(self.group, self.value - v)

    def __rsub__(self, other):
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return Scalar(self.group, v - self.value)

    def __mul__(self, other):
        v = self._coerce(other)
        if v is None:
            return NotImplemented
        return Scalar(self.group, self.value * v)

    __rmul__ = __mul__

    def __neg__(self) -> "Scalar":
        return Scalar(self.group, -self.value)

    def __pow__(self, exponent: int) -> "Scalar":
        if exponent < 0:
            return self.inverse() ** (-exponent)
        return Scalar(self.group, pow(self.value, exponent, self.group.order))

    def inverse(self) -> "Scalar":
        if self.value == 0:
            raise ZeroDivisionError("cannot invert zero scalar")
        return Scalar(self.group, pow(self.value, -1, self.group.order))

    def is_zero(self) -> bool:
        return self.value == 0

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(self.group.scalar_size, "big")

    def hex(self) -> str:
        return self.to_bytes().hex()

    def __int__(self) -> int:
        return self.value

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Scalar):
            return self.group.name == other.group.name and self.value == other.value
        if isinstance(other, int):
            return self.value == other % self.group.order
        return False

    def __hash__(self) -> int:
        return hash((self.group.name, self.value))

    def __repr__(self) -> str:
        h = self.hex()
        return f"Scalar({h[:16]}…)" if len(h) > 16 else f"Scalar({self.value})"


# ==================== 群元素 ====================
class GroupElement:
    """群 G 中的元素；内部表示由后端决定，相等性按规范编码比较"""

    __slots__ = ("group", "raw", "_encoded")

    def __init__(self, group: "GroupBackend", raw: Any):
        self.group = group
        self.raw = raw
        self._encoded: Optional[bytes] = None

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        if not isinstance(other, GroupElement):
            return NotImplemented
        if other.group.name != self.group.name:
            raise ValueError(f"element backends must match, got {self.group.name} and {other.group.name}")
        return GroupElement(self.group, self.group._op(self.raw, other.raw))

    def __pow__(self, exponent: Union[Scalar, int]) -> "GroupElement":
        e = exponent.value if isinstance(exponent, Scalar) else exponent % self.group.order
        return GroupElement(self.group, self.group._exp(self.raw, e))

    def __truediv__(self, other: "GroupElement") -> "GroupElement":
        return self * other.inverse()

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, self.group._inverse(self.raw))

    def is_identity(self) -> bool:
        return self.group._is_identity(self.raw)

    def encode(self) -> bytes:
        if self._encoded is None:
            self._encoded = self.group._encode(self.raw)
        return self._encoded

    def hex(self) -> str:
        return self.encode().hex()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupElement):
            return False
        return self.group.name == other.group.name and self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash((self.group.name, self.encode()))

    def __repr__(self) -> str:
        h = self.hex()
        return f"GroupElement({h[:16]}…)" if len(h) > 16 else f"GroupElement({h})"


# ==================== 后端接口 ====================
class GroupBackend(ABC):
    """
    群后端

    子类实现 _op/_exp/_inverse/_encode/_decode；协议代码只使用公共方法，与后端无关。
    """

    name: str = ""
    order: int = 0
    scalar_size: int = 0
    element_size: int = 0

    # ---- 后端原语 ----
    @abstractmethod
    def _identity_raw(self) -> Any: ...

    @abstractmethod
    def _generator_raw(self) -> Any: ...

    @abstractmethod
    def _op(self, a: Any, b: Any) -> Any: ...

    @abstractmethod
    def _exp(self, a: Any, e: int) -> Any: ...

    @abstractmethod
    def _inverse(self, a: Any) -> Any: ...

    @abstractmethod
    def _is_identity(self, a: Any) -> bool: ...

    @abstractmethod
    def _encode(self, a: Any) -> bytes: ...

    @abstractmethod
    def _decode(self, data: bytes) -> Any: ...

    def _base_exp(self, e: int) -> Any:
        return self._exp(self._generator_raw(), e)

    # ---- 公共接口 ----
    def scalar(self, value: int) -> Scalar:
        return Scalar(self, value)

    def identity(self) -> GroupElement:
        return GroupElement(self, self._identity_raw())

    def generator(self) -> GroupElement:
        return GroupElement(self, self._generator_raw())

    def base_exp(self, exponent: Union[Scalar, int]) -> GroupElement:
        """计算 g^exponent"""
        e = exponent.value if isinstance(exponent, Scalar) else exponent % self.order
        return GroupElement(self, self._base_exp(e))

    def product(self, elements: Iterable[GroupElement]) -> GroupElement:
        acc = self.identity()
        for element in elements:
            acc = acc * element
        return acc

    def decode_element(self, data: bytes) -> GroupElement:
        """解码群元素；非规范或不在群内的编码抛出 ValueError"""
        if len(data) != self.element_size:
            raise ValueError(f"element encoding must be {self.element_size} bytes, got {len(data)}")
        element = GroupElement(self, self._decode(bytes(data)))
        element._encoded = bytes(data)
        return element

    def decode_scalar(self, data: bytes) -> Scalar:
        if len(data) != self.scalar_size:
            raise ValueError(f"scalar encoding must be {self.scalar_size} bytes, got {len(data)}")
        value = int.from_bytes(data, "big")
        if value >= self.order:
            raise ValueError(f"scalar must be < group order, got {value}")
        return Scalar(self, value)

    def random_scalar(self, rng: np.random.Generator) -> Scalar:
        """[1, q-1] 内均匀随机标量（超采样 16 字节后取模）"""
        raw = int.from_bytes(rng.bytes(self.scalar_size + 16), "big")
        return Scalar(self, raw % (self.order - 1) + 1)

    def hash_to_scalar(self, domain_tag: str, data: bytes) -> Scalar:
        return hash_to_scalar(self, domain_tag, data)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


# ==================== secp256k1 后端 ====================
SECP256K1_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141


class Secp256k1Backend(GroupBackend):
    """secp256k1，单位元用 None 表示并编码为 33 个零字节"""

    name = "secp256k1"
    order = SECP256K1_ORDER
    scalar_size = 32
    element_size = 33

    _IDENTITY_BYTES = b"\x00" * 33

    def _identity_raw(self):
        return None

    def _generator_raw(self):
        return _SK((1).to_bytes(32, "big")).public_key

    def _negate(self, pk: _PK) -> _PK:
        raw = bytearray(pk.format(compressed=True))
        raw[0] ^= 0x01
        return _PK(bytes(raw))

    def _op(self, a, b):
        if a is None:
            return b
        if b is None:
            return a
        if a.format() == self._negate(b).format():
            return None
        return _PK.combine_keys([a, b])

    def _exp(self, a, e: int):
        if a is None or e == 0:
            return None
        return a.multiply(e.to_bytes(32, "big"))

    def _base_exp(self, e: int):
        if e == 0:
            return None
        return _SK(e.to_bytes(32, "big")).public_key

    def _inverse(self, a):
        if a is None:
            return None
        return self._negate(a)

    def _is_identity(self, a) -> bool:
        return a is None

    def _encode(self, a) -> bytes:
        if a is None:
            return self._IDENTITY_BYTES
        return a.format(compressed=True)

    def _decode(self, data: bytes):
        if data == self._IDENTITY_BYTES:
            return None
        if data[0] not in (0x02, 0x03):
            raise ValueError("secp256k1 element must use compressed encoding")
        try:
            return _PK(data)
        except Exception as e:
            raise ValueError(f"invalid secp256k1 point: {e}") from e


# ==================== 检视后端 ====================
class InspectionBackend(GroupBackend):
    """Z_47^* 的 23 阶子群，生成元 2"""

    name = "inspection"
    modulus = 47
    order = 23
    scalar_size = 1
    element_size = 1
    g = 2

    def __init__(self):
        if pow(self.g, self.order, self.modulus) != 1 or pow(self.g, 2, self.modulus) == 1:
            raise ValueError("inspection generator must have order exactly 23")

    def _identity_raw(self):
        return 1

    def _generator_raw(self):
        return self.g

    def _op(self, a, b):
        return (a * b) % self.modulus

    def _exp(self, a, e: int):
        return pow(a, e, self.modulus)

    def _inverse(self, a):
        return pow(a, -1, self.modulus)

    def _is_identity(self, a) -> bool:
        return a == 1

    def _encode(self, a) -> bytes:
        return bytes([a])

    def _decode(self, data: bytes):
        value = data[0]
        if not (1 <= value < self.modulus) or pow(value, self.order, self.modulus) != 1:
            raise ValueError(f"{value} is not in the order-23 subgroup mod 47")
        return value


SECP256K1 = Secp256k1Backend()
INSPECTION = InspectionBackend()

_BACKENDS: Dict[str, GroupBackend] = {
    SECP256K1.name: SECP256K1,
    INSPECTION.name: INSPECTION,
}


def get_backend(name: str) -> GroupBackend:
    """按名称获取群后端"""
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend must be one of {sorted(_BACKENDS)}, got {name!r}") from None


# ==================== 多项式与插值 ====================
def poly_eval(coeffs: Sequence[Scalar], x: Union[Scalar, int]) -> Scalar:
    """
    Horner 法求值 Σ coeffs[j]·x^j mod q

    Args:
        coeffs: 非空系数序列（常数项在前）
        x: 求值点
    """
    if not coeffs:
        raise ValueError("coeffs must be non-empty, got []")
    group = coeffs[0].group
    xv = x.value if isinstance(x, Scalar) else x
    acc = group.scalar(0)
    for c in reversed(coeffs):
        acc = acc * xv + c
    return acc


def lagrange_coeff(group: GroupBackend, indices: Iterable[int], i: int) -> Scalar:
    """
    在 0 处插值的 Lagrange 系数 λ_i = Π_{j≠i} j·(j−i)^{-1}

    Args:
        group: 群后端（提供 q）
        indices: 互不相同的非零索引集合
        i: indices 中的一个索引
    """
    S = list(indices)
    reduced = [j % group.order for j in S]
    if any(r == 0 for r in reduced):
        raise ValueError(f"indices must be nonzero mod q, got {S}")
    if len(set(reduced)) != len(reduced):
        raise ValueError(f"indices must be distinct, got {S}")
    if i not in S:
        raise ValueError(f"i must be in S, got {i} not in {S}")
    num = group.scalar(1)
    den = group.scalar(1)
    for j in S:
        if j == i:
            continue
        num = num * j
        den = den * (j - i)
    return num * den.inverse()


def commitment_eval(commitments: Sequence[GroupElement], x: int) -> GroupElement:
    """Π_k φ_k^{x^k}：在指数上对承诺多项式求值"""
    group = commitments[0].group
    acc = group.identity()
    power = group.scalar(1)
    for phi in commitments:
        acc = acc * (phi ** power)
        power = power * x
    return acc


# ==================== 哈希到标量 ====================
def hash_to_scalar(group: GroupBackend, domain_tag: str, data: bytes) -> Scalar:
    """
    带域分隔标签的哈希，输出落在 [1, q-1]

    不同标签给出独立函数（H / H1 / H2）。
    """
    tag = domain_tag.encode("utf-8")
    h = hashlib.sha512()
    h.update(b"cert-relay/h2s/v1")
    h.update(len(tag).to_bytes(2, "big"))
    h.update(tag)
    h.update(data)
    return Scalar(group, int.from_bytes(h.digest(), "big") % (group.order - 1) + 1)


# ==================== 对称密钥与认证加密 ====================
NONCE_SIZE = 12


@dataclass(frozen=True)
class SymmetricKey:
    """由 DH 元素派生的 AES-256-GCM 密钥"""
    material: bytes

    def __repr__(self) -> str:
        return f"SymmetricKey({self.material[:4].hex()}…)"


def derive_symmetric_key(dh: GroupElement) -> SymmetricKey:
    """K(dh)：HKDF-SHA256 从 DH 元素的规范编码派生 32 字节密钥"""
    hkdf = HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"cert-relay/dkg-share/" + dh.group.name.encode("ascii"),
    )
    return SymmetricKey(hkdf.derive(dh.encode()))


def encrypt(key: SymmetricKey, plaintext: bytes, rng: Optional[np.random.Generator] = None,
            aad: bytes = b"") -> bytes:
    """
    AES-GCM 加密，输出 nonce || ciphertext

    Args:
        rng: 提供 nonce 的随机流（None 时使用 os.urandom）
    """
    nonce = rng.bytes(NONCE_SIZE) if rng is not None else os.urandom(NONCE_SIZE)
    return nonce + AESGCM(key.material).encrypt(nonce, plaintext, aad)


def decrypt(key: SymmetricKey, ciphertext: bytes, aad: bytes = b"") -> bytes:
    """AES-GCM 解密；失败抛出 DecryptionError"""
    if len(ciphertext) < NONCE_SIZE + 16:
        raise DecryptionError(f"ciphertext too short: {len(ciphertext)} bytes")
    nonce, body = ciphertext[:NONCE_SIZE], ciphertext[NONCE_SIZE:]
    try:
        return AESGCM(key.material).decrypt(nonce, body, aad)
    except InvalidTag as e:
        raise DecryptionError("authentication tag mismatch") from e


# ==================== 十六进制编码 ====================
def element_from_hex(group: GroupBackend, text: str) -> GroupElement:
    return group.decode_element(bytes.fromhex(text))


def scalar_from_hex(group: GroupBackend, text: str) -> Scalar:
    return group.decode_scalar(bytes.fromhex(text))


def elements_hex(elements: Sequence[GroupElement]) -> List[str]:
    return [e.hex() for e in elements]
