#!/usr/bin/env python3
"""
Cert Relay - Certificates
证书中继 - 证书数据模型与内在有效性

功能：
- 跨子网消息（资产转移 / 合约调用）与子网交易
- 玩具状态转移函数 apply_stf（销毁-铸造语义）
- 可插拔有效性证明：重执行后端（证明中携带前状态见证）
- Merkle 包含证明（叶 0x00 / 内部节点 0x01 域分隔，奇数层复制末尾叶）
- valid_cert：无状态、单调的证书校验谓词
"""

import functools
import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from .codec import CodecError, Reader, Writer, digest
from .group import GroupElement, get_backend
from .ice_frost import Misbehavior, SubnetSigner, ThresholdSignature, verify_signature

logger = logging.getLogger("CertRelay.certificate")


class StfRejection(ValueError):
    """批次被状态转移函数整体拒绝"""


# ==================== 子网标识 ====================
@dataclass(frozen=True, order=True)
class SubnetId:
    """子网的静态 ICE-FROST 群公钥 Y 的规范编码"""
    backend: str
    key: bytes

    @classmethod
    def from_group_key(cls, Y: GroupElement) -> "SubnetId":
        return cls(Y.group.name, Y.encode())

    def public_key(self) -> GroupElement:
        return get_backend(self.backend).decode_element(self.key)

    def hex(self) -> str:
        return self.key.hex()

    def short(self) -> str:
        return self.key.hex()[:12]

    def write(self, w: Writer) -> Writer:
        return w.text(self.backend).blob(self.key)

    @classmethod
    def read(cls, r: Reader) -> "SubnetId":
        backend = r.text()
        key = r.blob()
        try:
            get_backend(backend).decode_element(key)
        except ValueError as e:
            raise CodecError(f"invalid subnet id: {e}") from e
        return cls(backend, key)

    def __repr__(self) -> str:
        return f"SubnetId({self.short()})"


# ==================== 跨子网消息 ====================
@dataclass(frozen=True)
class TransferAsset:
    target_subnet: SubnetId
    asset_id: str
    recipient: str
    amount: int

    TAG = 1

    def write(self, w: Writer) -> Writer:
        w.u8(self.TAG)
        self.target_subnet.write(w)
        return w.text(self.asset_id).text(self.recipient).u64(self.amount)

    def to_dict(self) -> Dict:
        return {"kind": "transfer_asset", "target_subnet": self.target_subnet.hex(),
                "asset_id": self.asset_id, "recipient": self.recipient, "amount": self.amount}


@dataclass(frozen=True)
class ContractCall:
    target_subnet: SubnetId
    contract_addr: str
    func_name: str
    func_args: bytes = b""

    TAG = 2

    def write(self, w: Writer) -> Writer:
        w.u8(self.TAG)
        self.target_subnet.write(w)
        return w.text(self.contract_addr).text(self.func_name).blob(self.func_args)

    def to_dict(self) -> Dict:
        return {"kind": "contract_call", "target_subnet": self.target_subnet.hex(),
                "contract_addr": self.contract_addr, "func_name": self.func_name,
                "func_args": self.func_args.hex()}


CrossSubnetMessage = Union[TransferAsset, ContractCall]


def read_message(r: Reader) -> CrossSubnetMessage:
    tag = r.u8()
    if tag == TransferAsset.TAG:
        return TransferAsset(SubnetId.read(r), r.text(), r.text(), r.u64())
    if tag == ContractCall.TAG:
        return ContractCall(SubnetId.read(r), r.text(), r.text(), r.blob())
    raise CodecError(f"unknown cross-subnet message tag {tag}")


def message_digest(message: CrossSubnetMessage) -> bytes:
    return digest("xs-message", message.write(Writer()).getvalue())


# ==================== 交易 ====================
@dataclass(frozen=True)
class LocalTransfer:
    sender: str
    recipient: str
    asset_id: str
    amount: int

    TAG = 1

    def write(self, w: Writer) -> Writer:
        return w.u8(self.TAG).text(self.sender).text(self.recipient).text(self.asset_id).u64(self.amount)

    def to_dict(self) -> Dict:
        return {"kind": "local_transfer", "from": self.sender, "to": self.recipient,
                "asset_id": self.asset_id, "amount": self.amount}


@dataclass(frozen=True)
class OutboundXS:
    sender: str
    message: CrossSubnetMessage

    TAG = 2

    def write(self, w: Writer) -> Writer:
        w.u8(self.TAG).text(self.sender)
        return self.message.write(w)

    def to_dict(self) -> Dict:
        return {"kind": "outbound_xs", "from": self.sender, "message": self.message.to_dict()}


@dataclass(frozen=True)
class InboundMint:
    message_digest: bytes
    recipient: str
    asset_id: str
    amount: int

    TAG = 3

    def write(self, w: Writer) -> Writer:
        return w.u8(self.TAG).blob(self.message_digest).text(self.recipient).text(self.asset_id).u64(self.amount)

    def to_dict(self) -> Dict:
        return {"kind": "inbound_mint", "message_digest": self.message_digest.hex(),
                "recipient": self.recipient, "asset_id": self.asset_id, "amount": self.amount}


@dataclass(frozen=True)
class InboundCall:
    """合约调用的接收端：只记录摘要（不透明载荷交付）"""
    message_digest: bytes
    contract_addr: str
    func_name: str

    TAG = 4

    def write(self, w: Writer) -> Writer:
        return w.u8(self.TAG).blob(self.message_digest).text(self.contract_addr).text(self.func_name)

    def to_dict(self) -> Dict:
        return {"kind": "inbound_call", "message_digest": self.message_digest.hex(),
                "contract_addr": self.contract_addr, "func_name": self.func_name}


Transaction = Union[LocalTransfer, OutboundXS, InboundMint, InboundCall]


def read_transaction(r: Reader) -> Transaction:
    tag = r.u8()
    if tag == LocalTransfer.TAG:
        return LocalTransfer(r.text(), r.text(), r.text(), r.u64())
    if tag == OutboundXS.TAG:
        return OutboundXS(r.text(), read_message(r))
    if tag == InboundMint.TAG:
        return InboundMint(r.blob(), r.text(), r.text(), r.u64())
    if tag == InboundCall.TAG:
        return InboundCall(r.blob(), r.text(), r.text())
    raise CodecError(f"unknown transaction tag {tag}")


def encode_transaction(tx: Transaction) -> bytes:
    return tx.write(Writer()).getvalue()


# ==================== 子网状态 ====================
BalanceKey = Tuple[str, str]


@dataclass(frozen=True)
class SubnetState:
    """
    子网状态 𝒮_k

    balances 以排序元组保存 ((account, asset), amount)，零余额不出现，
    使相等状态必有相同编码。
    """
    owner: SubnetId
    balances: Tuple[Tuple[BalanceKey, int], ...] = ()
    received_log: FrozenSet[bytes] = frozenset()
    height: int = 0

    @classmethod
    def genesis(cls, owner: SubnetId, balances: Optional[Dict[BalanceKey, int]] = None) -> "SubnetState":
        return cls(owner, _normalize_balances(balances or {}), frozenset(), 0)

    def balance_map(self) -> Dict[BalanceKey, int]:
        return dict(self.balances)

    def balance(self, account: str, asset_id: str) -> int:
        return self.balance_map().get((account, asset_id), 0)

    def supply(self, asset_id: str) -> int:
        return sum(v for (_, asset), v in self.balances if asset == asset_id)

    def assets(self) -> List[str]:
        return sorted({asset for (_, asset), _ in self.balances})

    def write(self, w: Writer) -> Writer:
        self.owner.write(w)
        w.seq(self.balances, lambda wr, item: wr.text(item[0][0]).text(item[0][1]).u64(item[1]))
        w.seq(sorted(self.received_log), lambda wr, d: wr.blob(d))
        return w.u64(self.height)

    @classmethod
    def read(cls, r: Reader) -> "SubnetState":
        owner = SubnetId.read(r)
        balances = r.seq(lambda rd: ((rd.text(), rd.text()), rd.u64()))
        received = r.seq(lambda rd: rd.blob())
        height = r.u64()
        if [k for k, _ in balances] != sorted(k for k, _ in balances) or any(v == 0 for _, v in balances):
            raise CodecError("balances must be sorted with no zero entries")
        if received != sorted(set(received)):
            raise CodecError("received_log must be sorted without duplicates")
        return cls(owner, tuple(balances), frozenset(received), height)

    def commitment(self) -> "StateCommitment":
        return StateCommitment(digest("subnet-state", self.write(Writer()).getvalue()))

    def to_dict(self) -> Dict:
        return {
            "owner": self.owner.hex(),
            "balances": [{"account": a, "asset_id": s, "amount": v} for (a, s), v in self.balances],
            "received_log": sorted(d.hex() for d in self.received_log),
            "height": self.height,
        }


def _normalize_balances(balances: Dict[BalanceKey, int]) -> Tuple[Tuple[BalanceKey, int], ...]:
    for key, v in balances.items():
        if v < 0:
            raise ValueError(f"balance must be non-negative, got {v} for {key}")
    return tuple(sorted((k, v) for k, v in balances.items() if v != 0))


@dataclass(frozen=True)
class StateCommitment:
    digest: bytes

    def hex(self) -> str:
        return self.digest.hex()

    def __repr__(self) -> str:
        return f"StateCommitment({self.digest.hex()[:12]})"


# ==================== 状态转移函数 ====================
def _check_amount(amount) -> int:
    if isinstance(amount, bool) or not isinstance(amount, int) or amount <= 0:
        raise StfRejection(f"amount must be a positive integer, got {amount!r}")
    if amount >= 2 ** 64:
        raise StfRejection(f"amount must fit in 64 bits, got {amount}")
    return amount


def apply_stf(state: SubnetState, txs: Sequence[Transaction]) -> SubnetState:
    """
    按顺序执行交易，任何一笔失败则整批拒绝

    Raises:
        StfRejection: 余额不足、重复的入站摘要或畸形交易
    """
    balances = state.balance_map()
    received = set(state.received_log)

    def debit(account: str, asset_id: str, amount: int):
        have = balances.get((account, asset_id), 0)
        if have < amount:
            raise StfRejection(f"insufficient balance: {account} holds {have} {asset_id}, needs {amount}")
        balances[(account, asset_id)] = have - amount

    def credit(account: str, asset_id: str, amount: int):
        balances[(account, asset_id)] = balances.get((account, asset_id), 0) + amount

    for tx in txs:
        if isinstance(tx, LocalTransfer):
            amount = _check_amount(tx.amount)
            debit(tx.sender, tx.asset_id, amount)
            credit(tx.recipient, tx.asset_id, amount)
        elif isinstance(tx, OutboundXS):
            message = tx.message
            if message.target_subnet == state.owner:
                raise StfRejection("cross-subnet message must target another subnet")
            if isinstance(message, TransferAsset):
                debit(tx.sender, message.asset_id, _check_amount(message.amount))
            elif not isinstance(message, ContractCall):
                raise StfRejection(f"malformed cross-subnet message {message!r}")
        elif isinstance(tx, InboundMint):
            amount = _check_amount(tx.amount)
            if tx.message_digest in received:
                raise StfRejection(f"duplicate inbound message {tx.message_digest.hex()[:12]}")
            received.add(tx.message_digest)
            credit(tx.recipient, tx.asset_id, amount)
        elif isinstance(tx, InboundCall):
            if tx.message_digest in received:
                raise StfRejection(f"duplicate inbound message {tx.message_digest.hex()[:12]}")
            received.add(tx.message_digest)
        else:
            raise StfRejection(f"malformed transaction {tx!r}")

    return SubnetState(state.owner, _normalize_balances(balances), frozenset(received), state.height + 1)


# ==================== Merkle 树 ====================
EMPTY_ROOT = hashlib.sha256(b"\x02").digest()


def hash_leaf(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def hash_internal(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


@dataclass(frozen=True)
class MerklePath:
    leaf_index: int
    siblings: Tuple[bytes, ...]

    def write(self, w: Writer) -> Writer:
        return w.u32(self.leaf_index).seq(self.siblings, lambda wr, s: wr.blob(s))

    @classmethod
    def read(cls, r: Reader) -> "MerklePath":
        return cls(r.u32(), tuple(r.seq(lambda rd: rd.blob())))

    def to_dict(self) -> Dict:
        return {"leaf_index": self.leaf_index, "siblings": [s.hex() for s in self.siblings]}


def _levels(leaves: Sequence[bytes]) -> List[List[bytes]]:
    level = [hash_leaf(leaf) for leaf in leaves]
    levels = [level]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level = level + [level[-1]]
            levels[-1] = level
        level = [hash_internal(level[k], level[k + 1]) for k in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return EMPTY_ROOT
    return _levels(leaves)[-1][0]


def merkle_path(leaves: Sequence[bytes], index: int) -> MerklePath:
    if not (0 <= index < len(leaves)):
        raise ValueError(f"index must be in [0, {len(leaves)}), got {index}")
    siblings = []
    pos = index
    for level in _levels(leaves)[:-1]:
        siblings.append(level[pos ^ 1])
        pos //= 2
    return MerklePath(index, tuple(siblings))


def verify_merkle_path(leaf: bytes, path: MerklePath, root: bytes) -> bool:
    node = hash_leaf(leaf)
    pos = path.leaf_index
    for sibling in path.siblings:
        node = hash_internal(sibling, node) if pos & 1 else hash_internal(node, sibling)
        pos //= 2
    return pos == 0 and node == root


# ==================== 状态转移证明（重执行后端） ====================
def _binding(prev_hash: StateCommitment, new_hash: StateCommitment, batch_root: bytes) -> bytes:
    return digest("transition-binding", Writer().blob(prev_hash.digest).blob(new_hash.digest).blob(batch_root).getvalue())


@dataclass(frozen=True)
class TransitionProof:
    """重执行证明：前状态见证 + 交易批次 + 批次根 + 绑定摘要"""
    pre_state: SubnetState
    tx_batch: Tuple[Transaction, ...]
    batch_root: bytes
    binding: bytes

    def write(self, w: Writer) -> Writer:
        self.pre_state.write(w)
        w.seq(self.tx_batch, lambda wr, tx: tx.write(wr))
        return w.blob(self.batch_root).blob(self.binding)

    @classmethod
    def read(cls, r: Reader) -> "TransitionProof":
        return cls(SubnetState.read(r), tuple(r.seq(read_transaction)), r.blob(), r.blob())

    def to_dict(self) -> Dict:
        return {
            "pre_state": self.pre_state.to_dict(),
            "tx_batch": [tx.to_dict() for tx in self.tx_batch],
            "batch_root": self.batch_root.hex(),
            "binding": self.binding.hex(),
        }


def claim_transition(prev: SubnetState, txs: Sequence[Transaction],
                     claimed_hash: StateCommitment) -> TransitionProof:
    """为声明的新状态组装证明，不执行批次（无效声明会在校验时被拒绝）"""
    batch = tuple(txs)
    root = merkle_root([encode_transaction(tx) for tx in batch])
    return TransitionProof(prev, batch, root, _binding(prev.commitment(), claimed_hash, root))


def prove_transition(prev: SubnetState, txs: Sequence[Transaction]) -> Tuple[TransitionProof, StateCommitment]:
    """
    生成状态转移证明

    Raises:
        StfRejection: 批次无效（无效转移不存在证明）
    """
    new_hash = apply_stf(prev, txs).commitment()
    return claim_transition(prev, txs, new_hash), new_hash


def collect_xs(batch: Sequence[Transaction]) -> Tuple[Tuple[CrossSubnetMessage, ...], Tuple[MerklePath, ...]]:
    """批次中的跨子网消息及其到批次根的包含路径"""
    leaves = [encode_transaction(tx) for tx in batch]
    xs_list, paths = [], []
    for idx, tx in enumerate(batch):
        if isinstance(tx, OutboundXS):
            xs_list.append(tx.message)
            paths.append(merkle_path(leaves, idx))
    return tuple(xs_list), tuple(paths)


def verify_transition(proof: TransitionProof, prev_hash: StateCommitment, new_hash: StateCommitment) -> bool:
    """Verif_C：绑定摘要一致，且从前状态见证重执行批次得到相同承诺"""
    try:
        if proof.binding != _binding(prev_hash, new_hash, proof.batch_root):
            return False
        if merkle_root([encode_transaction(tx) for tx in proof.tx_batch]) != proof.batch_root:
            return False
        if proof.pre_state.commitment() != prev_hash:
            return False
        return apply_stf(proof.pre_state, proof.tx_batch).commitment() == new_hash
    except (StfRejection, ValueError, TypeError, AttributeError):
        return False


# ==================== 证书 ====================
@dataclass(frozen=True, eq=False)
class Certificate:
    subnet_id: SubnetId
    prev_state_hash: StateCommitment
    state_hash: StateCommitment
    proof: TransitionProof
    xs_list: Tuple[CrossSubnetMessage, ...]
    proof_xs_list: Tuple[MerklePath, ...]
    signature: ThresholdSignature

    @cached_property
    def signing_payload(self) -> bytes:
        return certificate_payload(self.subnet_id, self.prev_state_hash, self.state_hash,
                                   self.proof, self.xs_list, self.proof_xs_list)

    @cached_property
    def encoded(self) -> bytes:
        return Writer().blob(self.signing_payload).blob(self.signature.encode()).getvalue()

    @cached_property
    def digest(self) -> bytes:
        return digest("certificate", self.encoded)

    def slot(self) -> Tuple[SubnetId, StateCommitment]:
        """链上槽位 (subnet_id, prev_state_hash)"""
        return (self.subnet_id, self.prev_state_hash)

    def target_subnets(self) -> FrozenSet[SubnetId]:
        return frozenset(m.target_subnet for m in self.xs_list)

    def short(self) -> str:
        return self.digest.hex()[:12]

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        """
        解码二进制证书

        Raises:
            CodecError: 截断、非规范或字段无效
        """
        outer = Reader(data)
        payload = outer.blob()
        sig_bytes = outer.blob()
        outer.expect_end()
        r = Reader(payload)
        subnet_id = SubnetId.read(r)
        prev_hash = StateCommitment(r.blob())
        new_hash = StateCommitment(r.blob())
        proof = TransitionProof.read(r)
        xs_list = tuple(r.seq(read_message))
        paths = tuple(r.seq(MerklePath.read))
        r.expect_end()
        sr = Reader(sig_bytes)
        signature = ThresholdSignature.read(sr)
        sr.expect_end()
        return cls(subnet_id, prev_hash, new_hash, proof, xs_list, paths, signature)

    def to_dict(self) -> Dict:
        """JSON 调试渲染"""
        return {
            "digest": self.digest.hex(),
            "subnet_id": self.subnet_id.hex(),
            "backend": self.subnet_id.backend,
            "prev_state_hash": self.prev_state_hash.hex(),
            "state_hash": self.state_hash.hex(),
            "proof": self.proof.to_dict(),
            "xs_list": [m.to_dict() for m in self.xs_list],
            "proof_xs_list": [p.to_dict() for p in self.proof_xs_list],
            "signature": self.signature.to_dict(),
        }

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Certificate) and self.digest == other.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def __repr__(self) -> str:
        return f"Certificate({self.subnet_id.short()}@{self.proof.pre_state.height + 1}, {self.short()})"


def certificate_payload(subnet_id: SubnetId, prev_hash: StateCommitment, new_hash: StateCommitment,
                        proof: TransitionProof, xs_list: Sequence[CrossSubnetMessage],
                        paths: Sequence[MerklePath]) -> bytes:
    """签名覆盖的全部字段（签名本身除外）的规范编码"""
    w = Writer()
    subnet_id.write(w)
    w.blob(prev_hash.digest).blob(new_hash.digest)
    proof.write(w)
    w.seq(xs_list, lambda wr, m: m.write(wr))
    w.seq(paths, lambda wr, p: p.write(wr))
    return w.getvalue()


def xs_reference(cert: Certificate, index: int) -> bytes:
    """
    入站交易引用的消息摘要：绑定来源证书与序号，
    使内容相同的两条消息在接收端也不会冲突
    """
    if not (0 <= index < len(cert.xs_list)):
        raise ValueError(f"index must be in [0, {len(cert.xs_list)}), got {index}")
    data = cert.digest + index.to_bytes(4, "big") + message_digest(cert.xs_list[index])
    return digest("xs-reference", data)


def verify_inclusion(cert: Certificate) -> bool:
    """Verify_incl：每条跨子网消息都有到 batch_root 的有效路径，且对应批次中的 OutboundXS"""
    try:
        if len(cert.xs_list) != len(cert.proof_xs_list):
            return False
        batch = cert.proof.tx_batch
        for message, path in zip(cert.xs_list, cert.proof_xs_list):
            if message.target_subnet == cert.subnet_id:
                return False
            if not (0 <= path.leaf_index < len(batch)):
                return False
            tx = batch[path.leaf_index]
            if not isinstance(tx, OutboundXS) or tx.message != message:
                return False
            if not verify_merkle_path(encode_transaction(tx), path, cert.proof.batch_root):
                return False
        return True
    except (ValueError, TypeError, AttributeError):
        return False


@functools.lru_cache(maxsize=8192)
def valid_cert(cert: Certificate) -> bool:
    """
    证书内在有效性谓词

    只依赖证书字节：无状态，因此单调。按证书摘要缓存。
    """
    return (cert.proof.pre_state.owner == cert.subnet_id
            and verify_transition(cert.proof, cert.prev_state_hash, cert.state_hash)
            and verify_inclusion(cert))


@functools.lru_cache(maxsize=8192)
def verify_certificate_signature(cert: Certificate) -> bool:
    """ICE-FROST 签名在 subnet_id 下校验"""
    try:
        Y = cert.subnet_id.public_key()
    except ValueError:
        return False
    return verify_signature(Y, cert.signing_payload, cert.signature)


def build_and_sign_certificate(signer: SubnetSigner, prev_state: SubnetState, txs: Sequence[Transaction],
                               misbehaviors: Sequence[Misbehavior] = ()) -> Tuple[Certificate, SubnetState]:
    """
    执行批次、生成证明、收集跨子网消息并门限签名

    Returns:
        (certificate, new_state)

    Raises:
        StfRejection: 批次无效
        SigningAborted: 门限签名中止
    """
    subnet_id = SubnetId.from_group_key(signer.group_key)
    if prev_state.owner != subnet_id:
        raise ValueError(f"prev_state must belong to subnet {subnet_id.short()}, got {prev_state.owner.short()}")
    new_state = apply_stf(prev_state, txs)
    new_hash = new_state.commitment()
    proof = claim_transition(prev_state, txs, new_hash)
    xs_list, paths = collect_xs(proof.tx_batch)
    payload = certificate_payload(subnet_id, prev_state.commitment(), new_hash, proof, xs_list, paths)
    outcome = signer.sign(payload, misbehaviors)
    cert = Certificate(subnet_id, prev_state.commitment(), new_hash, proof, xs_list, paths, outcome.signature)
    logger.debug(f"构建证书 {cert!r}: {len(txs)} 笔交易, {len(xs_list)} 条跨子网消息")
    return cert, new_state


