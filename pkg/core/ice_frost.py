#!/usr/bin/env python3
"""
Cert Relay - ICE-FROST Threshold Signatures
证书中继 - ICE-FROST 鲁棒门限 Schnorr 签名

功能：
- 两轮分布式密钥生成（Feldman 承诺 + 两个知识证明 + 成对 DH 加密份额）
- 投诉 / 裁决 / 排除
- 两轮门限签名，逐份响应校验，排除作恶者后重试
- 份额刷新（零共享 / 成员变更时的再分发），群公钥 Y 保持不变

广播信道由 BulletinBoard 建模：发布即对所有人可见且带发布者身份。
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .codec import CodecError, Reader, Writer
from .group import (
    DecryptionError,
    GroupBackend,
    GroupElement,
    Scalar,
    commitment_eval,
    decrypt,
    derive_symmetric_key,
    element_from_hex,
    elements_hex,
    encrypt,
    get_backend,
    hash_to_scalar,
    lagrange_coeff,
    poly_eval,
    scalar_from_hex,
)
from .randomness import sample_without_replacement

logger = logging.getLogger("CertRelay.ice_frost")

TAG_H = "H"
TAG_H1 = "H1"
TAG_H2 = "H2"


class KeygenAborted(RuntimeError):
    """未排除参与者数量低于中止下限"""


class SigningAborted(RuntimeError):
    """排除作恶签名者后剩余人数不足 t"""


class NonceReuseError(RuntimeError):
    """签名会话的一次性 nonce 已被消费"""


# ==================== 上下文与阶段 ====================
@dataclass(frozen=True)
class SessionContext:
    """上下文串 Φ = (session id, epoch, subnet id)，防止跨会话重放"""
    session_id: str
    epoch: int = 0
    subnet_id: str = ""

    def encode(self) -> bytes:
        return Writer().text(self.session_id).u32(self.epoch).text(self.subnet_id).getvalue()

    def to_dict(self) -> Dict:
        return {"session_id": self.session_id, "epoch": self.epoch, "subnet_id": self.subnet_id}


class KeygenPhase(str, Enum):
    ROUND1 = "round1"
    ROUND2 = "round2"
    DONE = "done"
    ABORTED = "aborted"


class DealingMode(str, Enum):
    """份额发放模式"""
    FRESH = "fresh"                 # 初始密钥生成
    ZERO = "zero"                   # 刷新：共享 0
    REDISTRIBUTE = "redistribute"   # 刷新：成员加入时再分发 λ_i·s_i


def default_abort_floor(t: int, n: int, fraction: float = 2 / 3) -> int:
    """中止下限 max(t, ⌈fraction·n⌉)"""
    return max(t, math.ceil(fraction * n - 1e-9))


# ==================== 广播载荷 ====================
@dataclass(frozen=True)
class SchnorrProof:
    """知识证明 (R, μ)"""
    R: GroupElement
    mu: Scalar


@dataclass(frozen=True)
class Round1Broadcast:
    """第一轮广播 (C_i, σ_i, pk_i, τ_i)；非发放者的 commitments 为空、sigma 为 None"""
    sender: int
    commitments: Tuple[GroupElement, ...]
    sigma: Optional[SchnorrProof]
    pk: GroupElement
    tau: SchnorrProof


@dataclass(frozen=True)
class EncryptedShare:
    """((i, l), e_il)"""
    dealer: int
    recipient: int
    ciphertext: bytes


@dataclass(frozen=True)
class DleqProof:
    """证明 log_g pk_i = log_{pk_l} k_il 的 (A_1, A_2, z)"""
    A1: GroupElement
    A2: GroupElement
    z: Scalar


@dataclass(frozen=True)
class Complaint:
    accuser: int
    accused: int
    revealed_dh: GroupElement
    proof: DleqProof


@dataclass(frozen=True)
class Verdict:
    """裁决结果：excluded 为被排除的一方"""
    excluded: int
    accuser: int
    accused: int
    reason: str


# ==================== 公告板（转录本） ====================
class BulletinBoard:
    """
    认证广播信道 / 公开转录本

    每条发布都附带发布者；记录顺序即发布顺序，可导出为 JSON-lines 供重放裁决。
    """

    def __init__(self, group: GroupBackend, context: SessionContext):
        self.group = group
        self.context = context
        self.round1: Dict[int, Round1Broadcast] = {}
        self.shares: Dict[Tuple[int, int], EncryptedShare] = {}
        self.complaints: List[Complaint] = []
        self.notices: List[Tuple[int, int, str]] = []
        self.group_keys: Dict[int, GroupElement] = {}
        self._records: List[Dict] = [{
            "type": "context", "backend": group.name, **context.to_dict(),
        }]

    # ---- 发布 ----
    def publish_round1(self, payload: Round1Broadcast):
        if payload.sender in self.round1:
            raise ValueError(f"round-1 payload already published by {payload.sender}")
        self.round1[payload.sender] = payload
        self._records.append(_round1_record(payload))

    def publish_share(self, share: EncryptedShare):
        self.shares[(share.dealer, share.recipient)] = share
        self._records.append({
            "type": "share", "dealer": share.dealer, "recipient": share.recipient,
            "ciphertext": share.ciphertext.hex(),
        })

    def publish_complaint(self, complaint: Complaint):
        self.complaints.append(complaint)
        self._records.append(_complaint_record(complaint))

    def publish_notice(self, reporter: int, accused: int, reason: str):
        """(malicious, P_l) 广播"""
        self.notices.append((reporter, accused, reason))
        self._records.append({"type": "malicious", "reporter": reporter, "accused": accused, "reason": reason})

    def publish_group_key(self, sender: int, Y: GroupElement):
        self.group_keys[sender] = Y
        self._records.append({"type": "group_key", "sender": sender, "Y": Y.hex()})

    # ---- 转录本 ----
    def records(self) -> List[Dict]:
        return list(self._records)

    @classmethod
    def from_records(cls, records: Iterable[Dict]) -> "BulletinBoard":
        """从 JSON-lines 记录重建公告板（第一条必须是 context）"""
        records = iter(records)
        head = next(records, None)
        if head is None or head.get("type") != "context":
            raise ValueError("transcript must start with a context record")
        group = get_backend(head["backend"])
        board = cls(group, SessionContext(head["session_id"], head["epoch"], head["subnet_id"]))
        for rec in records:
            kind = rec.get("type")
            if kind == "round1":
                board.publish_round1(_round1_from_record(group, rec))
            elif kind == "share":
                board.publish_share(EncryptedShare(rec["dealer"], rec["recipient"], bytes.fromhex(rec["ciphertext"])))
            elif kind == "complaint":
                board.publish_complaint(_complaint_from_record(group, rec))
            elif kind == "malicious":
                board.publish_notice(rec["reporter"], rec["accused"], rec["reason"])
            elif kind == "group_key":
                board.publish_group_key(rec["sender"], element_from_hex(group, rec["Y"]))
        return board


def _proof_record(proof: Optional[SchnorrProof]) -> Optional[Dict]:
    if proof is None:
        return None
    return {"R": proof.R.hex(), "mu": proof.mu.hex()}


def _proof_from_record(group: GroupBackend, rec: Optional[Dict]) -> Optional[SchnorrProof]:
    if rec is None:
        return None
    return SchnorrProof(element_from_hex(group, rec["R"]), scalar_from_hex(group, rec["mu"]))


def _round1_record(payload: Round1Broadcast) -> Dict:
    return {
        "type": "round1",
        "sender": payload.sender,
        "commitments": elements_hex(payload.commitments),
        "sigma": _proof_record(payload.sigma),
        "pk": payload.pk.hex(),
        "tau": _proof_record(payload.tau),
    }


def _round1_from_record(group: GroupBackend, rec: Dict) -> Round1Broadcast:
    return Round1Broadcast(
        sender=rec["sender"],
        commitments=tuple(element_from_hex(group, c) for c in rec["commitments"]),
        sigma=_proof_from_record(group, rec["sigma"]),
        pk=element_from_hex(group, rec["pk"]),
        tau=_proof_from_record(group, rec["tau"]),
    )


def _complaint_record(c: Complaint) -> Dict:
    return {
        "type": "complaint", "accuser": c.accuser, "accused": c.accused,
        "revealed_dh": c.revealed_dh.hex(),
        "proof": {"A1": c.proof.A1.hex(), "A2": c.proof.A2.hex(), "z": c.proof.z.hex()},
    }


def _complaint_from_record(group: GroupBackend, rec: Dict) -> Complaint:
    p = rec["proof"]
    return Complaint(
        accuser=rec["accuser"],
        accused=rec["accused"],
        revealed_dh=element_from_hex(group, rec["revealed_dh"]),
        proof=DleqProof(
            element_from_hex(group, p["A1"]),
            element_from_hex(group, p["A2"]),
            scalar_from_hex(group, p["z"]),
        ),
    )


# ==================== 知识证明 ====================
def _pok_challenge(group: GroupBackend, label: str, index: int, context: SessionContext,
                   public: GroupElement, R: GroupElement) -> Scalar:
    data = Writer().text(label).u32(index).blob(context.encode()).element(public).element(R).getvalue()
    return hash_to_scalar(group, TAG_H, data)


def prove_knowledge(group: GroupBackend, label: str, index: int, context: SessionContext,
                    secret: Scalar, public: GroupElement, rng: np.random.Generator) -> SchnorrProof:
    """Schnorr 知识证明：R = g^k, c = H(index, Φ, public, R), μ = k + secret·c"""
    k = group.random_scalar(rng)
    R = group.base_exp(k)
    c = _pok_challenge(group, label, index, context, public, R)
    return SchnorrProof(R, k + secret * c)


def verify_knowledge(group: GroupBackend, label: str, index: int, context: SessionContext,
                     public: GroupElement, proof: SchnorrProof) -> bool:
    """检查 R = g^μ · public^{-c}"""
    c = _pok_challenge(group, label, index, context, public, proof.R)
    return proof.R == group.base_exp(proof.mu) * (public ** (-c))


def _share_aad(context: SessionContext, dealer: int, recipient: int) -> bytes:
    return Writer().blob(context.encode()).u32(dealer).u32(recipient).getvalue()


def verify_round1(group: GroupBackend, payload: Round1Broadcast, context: SessionContext, t: int,
                  is_dealer: bool = True, expected_constant: Optional[GroupElement] = None) -> bool:
    """
    校验第一轮载荷

    Args:
        is_dealer: 发送者是否发放份额（再分发刷新中加入者不发放）
        expected_constant: 若给出，φ_{l0} 必须等于它（零共享 = 单位元，再分发 = Y_l^{λ_l}）

    Returns:
        True 表示 ok；False 表示 malicious(sender)
    """
    try:
        if payload.pk.group.name != group.name:
            return False
        if not verify_knowledge(group, "ephemeral", payload.sender, context, payload.pk, payload.tau):
            return False
        if not is_dealer:
            return len(payload.commitments) == 0 and payload.sigma is None
        if len(payload.commitments) != t or payload.sigma is None:
            return False
        if any(c.group.name != group.name for c in payload.commitments):
            return False
        if expected_constant is not None and payload.commitments[0] != expected_constant:
            return False
        return verify_knowledge(group, "coeff", payload.sender, context, payload.commitments[0], payload.sigma)
    except (ValueError, ZeroDivisionError, AttributeError):
        return False


# ==================== 投诉证明 ====================
def _dleq_challenge(group: GroupBackend, pk_i: GroupElement, pk_l: GroupElement, k_il: GroupElement,
                    A1: GroupElement, A2: GroupElement) -> Scalar:
    data = Writer().element(pk_i).element(pk_l).element(k_il).element(A1).element(A2).getvalue()
    return hash_to_scalar(group, TAG_H, data)


def make_complaint(group: GroupBackend, accuser: int, accused: int, sk_i: Scalar, pk_i: GroupElement,
                   pk_l: GroupElement, rng: np.random.Generator) -> Complaint:
    """公开 k_il = pk_l^{sk_i} 并证明其构造正确"""
    k_il = pk_l ** sk_i
    r = group.random_scalar(rng)
    A1 = group.base_exp(r)
    A2 = pk_l ** r
    h = _dleq_challenge(group, pk_i, pk_l, k_il, A1, A2)
    return Complaint(accuser, accused, k_il, DleqProof(A1, A2, r + h * sk_i))


def verify_complaint_proof(group: GroupBackend, complaint: Complaint, pk_i: GroupElement,
                           pk_l: GroupElement) -> bool:
    """A_1·pk_i^h = g^z 且 A_2·k_il^h = pk_l^z"""
    p = complaint.proof
    h = _dleq_challenge(group, pk_i, pk_l, complaint.revealed_dh, p.A1, p.A2)
    return (p.A1 * (pk_i ** h) == group.base_exp(p.z)
            and p.A2 * (complaint.revealed_dh ** h) == pk_l ** p.z)


def adjudicate_complaint(complaint: Complaint, transcript: BulletinBoard) -> Verdict:
    """
    裁决投诉（任何验证者仅凭投诉与公开转录本得到相同结论）

    - 证明无效 → 排除投诉者
    - 未发布对应密文 → 排除被投诉的发放者
    - 解密失败或份额不满足承诺 → 排除发放者
    - 份额正确 → 排除投诉者
    """
    group = transcript.group
    i, l = complaint.accuser, complaint.accused
    r1_i = transcript.round1.get(i)
    r1_l = transcript.round1.get(l)
    if r1_i is None:
        return Verdict(i, i, l, "unknown_accuser")
    if r1_l is None or not r1_l.commitments:
        return Verdict(l, i, l, "accused_not_dealer")

    try:
        proof_ok = verify_complaint_proof(group, complaint, r1_i.pk, r1_l.pk)
    except (ValueError, ZeroDivisionError):
        proof_ok = False
    if not proof_ok:
        return Verdict(i, i, l, "invalid_complaint_proof")

    entry = transcript.shares.get((l, i))
    if entry is None:
        return Verdict(l, i, l, "missing_share")

    key = derive_symmetric_key(complaint.revealed_dh)
    try:
        delta = group.decode_scalar(decrypt(key, entry.ciphertext, _share_aad(transcript.context, l, i)))
    except (DecryptionError, ValueError):
        return Verdict(l, i, l, "undecryptable_share")

    if group.base_exp(delta) == commitment_eval(r1_l.commitments, i):
        return Verdict(i, i, l, "false_accusation")
    return Verdict(l, i, l, "bad_share")


def compute_verification_share(commitment_transcript: Mapping[int, Sequence[GroupElement]], i: int) -> GroupElement:
    """Y_i = Π_j Π_k φ_jk^{i^k}，j 取遍未排除的发放者"""
    if not commitment_transcript:
        raise ValueError("commitment transcript must be non-empty")
    parts = [commitment_eval(C, i) for _, C in sorted(commitment_transcript.items())]
    acc = parts[0]
    for p in parts[1:]:
        acc = acc * p
    return acc


# ==================== 密钥材料 ====================
@dataclass
class KeyMaterial:
    """
    长期签名材料

    share = s_i, verification_share = Y_i = g^{s_i}, group_key = Y。
    verification_shares 是所有持有者的公开 Y_j，用于签名聚合时逐份校验。
    """
    index: int
    t: int
    share: Scalar
    verification_share: GroupElement
    group_key: GroupElement
    epoch: int
    verification_shares: Dict[int, GroupElement] = field(default_factory=dict)

    @property
    def group(self) -> GroupBackend:
        return self.share.group


@dataclass
class DealingPlan:
    """单个参与者在一次发放会话中的角色"""
    mode: DealingMode = DealingMode.FRESH
    dealers: Optional[FrozenSet[int]] = None             # None = 全部参与者
    constant: Optional[Scalar] = None                    # 本人 a_{i0}；None = 随机
    expected_constants: Dict[int, GroupElement] = field(default_factory=dict)
    prior_share: Optional[Scalar] = None                 # ZERO 模式：旧 s_i
    prior_verification_shares: Dict[int, GroupElement] = field(default_factory=dict)
    group_key: Optional[GroupElement] = None             # ZERO / REDISTRIBUTE：静态 Y


# ==================== 密钥生成会话 ====================
class KeygenSession:
    """
    单个参与者的密钥生成状态机

    round1 → round2 → done，或在排除过多时进入 aborted。
    """

    def __init__(self, group: GroupBackend, my_index: int, t: int, participants: Iterable[int],
                 context: SessionContext, rng: np.random.Generator,
                 plan: Optional[DealingPlan] = None, abort_floor: Optional[int] = None,
                 coefficients: Optional[Sequence[Scalar]] = None):
        participants = frozenset(participants)
        if my_index <= 0 or my_index not in participants:
            raise ValueError(f"my_index must be a nonzero member of participants, got {my_index}")
        if any(p <= 0 for p in participants):
            raise ValueError(f"participant indices must be nonzero, got {sorted(participants)}")
        if not (1 <= t <= len(participants)):
            raise ValueError(f"t must be in [1, {len(participants)}], got {t}")

        self.group = group
        self.my_index = my_index
        self.t = t
        self.participants = participants
        self.context = context
        self.rng = rng
        self.plan = plan or DealingPlan()
        self.dealers = frozenset(self.plan.dealers) if self.plan.dealers is not None else participants
        self.is_dealer = my_index in self.dealers
        self.abort_floor = abort_floor if abort_floor is not None else default_abort_floor(t, len(participants))

        self.coeffs: List[Scalar] = []
        if self.is_dealer:
            if coefficients is not None:
                if len(coefficients) != t:
                    raise ValueError(f"coefficients must have length t={t}, got {len(coefficients)}")
                self.coeffs = list(coefficients)
            else:
                a0 = self.plan.constant if self.plan.constant is not None else group.random_scalar(rng)
                self.coeffs = [a0] + [group.random_scalar(rng) for _ in range(t - 1)]
        self.eph_sk: Scalar = group.random_scalar(rng)
        self.eph_pk: GroupElement = group.base_exp(self.eph_sk)

        self.commitments_received: Dict[int, Tuple[GroupElement, ...]] = {}
        self.pks: Dict[int, GroupElement] = {}
        self.shares_received: Dict[int, Scalar] = {}
        self.excluded: Set[int] = set()
        self.phase = KeygenPhase.ROUND1
        self._round1_emitted = False

    # ---- Round 1 ----
    def keygen_round1(self) -> Round1Broadcast:
        """生成承诺向量与两个知识证明"""
        if self.phase != KeygenPhase.ROUND1:
            raise RuntimeError(f"keygen_round1 requires phase round1, got {self.phase.value}")
        if self._round1_emitted:
            raise RuntimeError("keygen_round1 already emitted")
        self._round1_emitted = True

        commitments: Tuple[GroupElement, ...] = ()
        sigma = None
        if self.is_dealer:
            commitments = tuple(self.group.base_exp(a) for a in self.coeffs)
            sigma = prove_knowledge(self.group, "coeff", self.my_index, self.context,
                                    self.coeffs[0], commitments[0], self.rng)
        tau = prove_knowledge(self.group, "ephemeral", self.my_index, self.context,
                              self.eph_sk, self.eph_pk, self.rng)
        return Round1Broadcast(self.my_index, commitments, sigma, self.eph_pk, tau)

    def _expected_constant(self, sender: int) -> Optional[GroupElement]:
        if self.plan.mode == DealingMode.ZERO:
            return self.group.identity()
        if self.plan.mode == DealingMode.REDISTRIBUTE:
            return self.plan.expected_constants.get(sender)
        return None

    def receive_round1(self, payload: Round1Broadcast) -> bool:
        """
        处理一条第一轮广播

        Returns:
            True 接受；False 表示发送者被记为 malicious 并排除
        """
        sender = payload.sender
        if sender not in self.participants:
            return False
        ok = verify_round1(self.group, payload, self.context, self.t,
                           is_dealer=sender in self.dealers,
                           expected_constant=self._expected_constant(sender))
        if not ok:
            if sender not in self.excluded:
                logger.info(f"[{self.context.session_id}] P{self.my_index} 排除 P{sender}: round-1 校验失败")
            self.excluded.add(sender)
            return False
        self.pks[sender] = payload.pk
        if sender in self.dealers:
            self.commitments_received[sender] = payload.commitments
        return True

    def _remaining(self) -> int:
        return len(self.participants - self.excluded)

    def _check_floor(self):
        if self._remaining() < self.abort_floor:
            self.phase = KeygenPhase.ABORTED
            raise KeygenAborted(
                f"{self._remaining()} participants remain, below abort floor {self.abort_floor}"
            )

    def begin_round2(self):
        """第一轮结束：未发布者视为排除，检查中止下限"""
        if self.phase != KeygenPhase.ROUND1:
            raise RuntimeError(f"begin_round2 requires phase round1, got {self.phase.value}")
        for p in self.participants:
            if p not in self.pks:
                self.excluded.add(p)
        self._check_floor()
        self.phase = KeygenPhase.ROUND2

    # ---- Round 2 ----
    def _share_for(self, recipient: int) -> Scalar:
        return poly_eval(self.coeffs, recipient)

    def _channel_key(self, other: int):
        return derive_symmetric_key(self.pks[other] ** self.eph_sk)

    def keygen_round2_send(self, recipient: int) -> EncryptedShare:
        """用成对 DH 密钥 k_il = K(pk_l^{sk_i}) 加密 f_i(l)"""
        if self.phase != KeygenPhase.ROUND2:
            raise RuntimeError(f"keygen_round2_send requires phase round2, got {self.phase.value}")
        if not self.is_dealer:
            raise RuntimeError(f"P{self.my_index} is not a dealer in this session")
        if recipient == self.my_index or recipient not in self.participants or recipient in self.excluded:
            raise ValueError(f"recipient must be another non-excluded participant, got {recipient}")
        ciphertext = encrypt(self._channel_key(recipient), self._share_for(recipient).to_bytes(), self.rng,
                             aad=_share_aad(self.context, self.my_index, recipient))
        return EncryptedShare(self.my_index, recipient, ciphertext)

    def keygen_round2_receive(self, dealer: int, ciphertext: Optional[bytes]) -> Optional[Complaint]:
        """
        解密并校验 g^δ = Π_k φ_lk^{i^k}

        Returns:
            None 表示接受；否则返回需要发布的 Complaint
        """
        if dealer not in self.commitments_received:
            raise ValueError(f"commitments from dealer {dealer} were not accepted")
        delta = None
        if ciphertext is not None:
            try:
                plain = decrypt(self._channel_key(dealer), ciphertext,
                                _share_aad(self.context, dealer, self.my_index))
                delta = self.group.decode_scalar(plain)
            except (DecryptionError, ValueError):
                delta = None
        if delta is not None and self.group.base_exp(delta) == commitment_eval(
                self.commitments_received[dealer], self.my_index):
            self.shares_received[dealer] = delta
            return None
        logger.info(f"[{self.context.session_id}] P{self.my_index} 投诉 P{dealer}")
        return make_complaint(self.group, self.my_index, dealer, self.eph_sk, self.eph_pk,
                              self.pks[dealer], self.rng)

    def adjudicate(self, complaint: Complaint, transcript: BulletinBoard) -> Verdict:
        verdict = adjudicate_complaint(complaint, transcript)
        if verdict.excluded not in self.excluded:
            logger.info(f"[{self.context.session_id}] P{self.my_index} 裁决排除 P{verdict.excluded} ({verdict.reason})")
        self.excluded.add(verdict.excluded)
        self.shares_received.pop(verdict.excluded, None)
        return verdict

    # ---- 完成 ----
    def finalize_keygen(self) -> KeyMaterial:
        """s_i = Σ f_l(i)，Y_i = g^{s_i}，Y = Π φ_{j0}；随后擦除逐发放者份额"""
        if self.phase != KeygenPhase.ROUND2:
            raise RuntimeError(f"finalize_keygen requires phase round2, got {self.phase.value}")
        self._check_floor()
        if self.my_index in self.excluded:
            self.phase = KeygenPhase.ABORTED
            raise KeygenAborted(f"P{self.my_index} was excluded")

        live_dealers = sorted(self.dealers - self.excluded)
        if not live_dealers:
            self.phase = KeygenPhase.ABORTED
            raise KeygenAborted("no non-excluded dealers remain")
        missing = [l for l in live_dealers if l != self.my_index and l not in self.shares_received]
        if missing:
            raise RuntimeError(f"shares missing from dealers {missing}")

        s = self.group.scalar(0)
        for l in live_dealers:
            s = s + (self._share_for(self.my_index) if l == self.my_index else self.shares_received[l])
        transcript = {l: self.commitments_received[l] for l in live_dealers}
        holders = sorted(self.participants - self.excluded)

        if self.plan.mode == DealingMode.ZERO:
            if self.plan.prior_share is None or self.plan.group_key is None:
                raise ValueError("zero-sharing requires prior_share and group_key")
            s = self.plan.prior_share + s
            Y = self.plan.group_key
            shares_pub = {
                j: self.plan.prior_verification_shares[j] * compute_verification_share(transcript, j)
                for j in holders
            }
            epoch = self.context.epoch
        else:
            Y = self.group.product(C[0] for C in transcript.values())
            if self.plan.mode == DealingMode.REDISTRIBUTE and Y != self.plan.group_key:
                self.phase = KeygenPhase.ABORTED
                raise KeygenAborted("redistributed constants do not reproduce the group key")
            shares_pub = {j: compute_verification_share(transcript, j) for j in holders}
            epoch = self.context.epoch

        self.shares_received.clear()
        self.coeffs = []
        self.phase = KeygenPhase.DONE
        return KeyMaterial(
            index=self.my_index,
            t=self.t,
            share=s,
            verification_share=self.group.base_exp(s),
            group_key=Y,
            epoch=epoch,
            verification_shares=shares_pub,
        )


# ==================== 作恶脚本 ====================
class MisbehaviorKind(str, Enum):
    BAD_POK = "bad_pok"                   # σ 中 μ+1
    BAD_SHARE = "bad_share"               # 发给 target 的份额 +1
    GARBLED_SHARE = "garbled_share"       # 发给 target 的密文翻转一位
    WITHHELD_SHARE = "withheld_share"     # 不向 target 发布密文
    BOGUS_COMPLAINT = "bogus_complaint"   # 对 target 发起证明无效的投诉
    FALSE_COMPLAINT = "false_complaint"   # 对 target 发起证明有效但份额正确的投诉
    BAD_RESPONSE = "bad_response"         # 签名响应 z_i+1


@dataclass(frozen=True)
class Misbehavior:
    kind: MisbehaviorKind
    actor: int
    target: Optional[int] = None

    def targets(self, recipient: int) -> bool:
        return self.target is None or self.target == recipient


@dataclass
class KeygenOutcome:
    """一次发放会话的结果（仅报告诚实参与者视角）"""
    key_material: Dict[int, KeyMaterial]
    excluded: Dict[int, FrozenSet[int]]
    group_key: Optional[GroupElement]
    transcript: BulletinBoard
    verdicts: List[Verdict]
    aborted: bool = False

    @property
    def consistent(self) -> bool:
        """所有诚实参与者的排除集合一致，且公布的 Y 一致"""
        if len(set(self.excluded.values())) > 1:
            return False
        keys = {km.group_key for km in self.key_material.values()}
        return len(keys) <= 1

    @property
    def consensus_excluded(self) -> FrozenSet[int]:
        if not self.excluded:
            return frozenset()
        return next(iter(self.excluded.values()))


def _run_dealing(group: GroupBackend, participants: Sequence[int], t: int, context: SessionContext,
                 rng: np.random.Generator, plans: Mapping[int, DealingPlan],
                 misbehaviors: Sequence[Misbehavior] = (), abort_floor: Optional[int] = None) -> KeygenOutcome:
    participants = sorted(participants)
    actors = {m.actor for m in misbehaviors}
    honest = [i for i in participants if i not in actors]
    board = BulletinBoard(group, context)
    sessions = {
        i: KeygenSession(group, i, t, participants, context, rng, plan=plans.get(i), abort_floor=abort_floor)
        for i in participants
    }

    def behaviors(actor: int, kind: MisbehaviorKind) -> List[Misbehavior]:
        return [m for m in misbehaviors if m.actor == actor and m.kind == kind]

    # Round 1
    for i in participants:
        payload = sessions[i].keygen_round1()
        if behaviors(i, MisbehaviorKind.BAD_POK) and payload.sigma is not None:
            payload = replace(payload, sigma=SchnorrProof(payload.sigma.R, payload.sigma.mu + 1))
        board.publish_round1(payload)
    for i in participants:
        for payload in list(board.round1.values()):
            if not sessions[i].receive_round1(payload):
                board.publish_notice(i, payload.sender, "round1")

    aborted = False
    for i in participants:
        try:
            sessions[i].begin_round2()
        except KeygenAborted as e:
            if i in honest:
                logger.warning(f"[{context.session_id}] 密钥生成中止: {e}")
                aborted = True
    active = [i for i in participants if sessions[i].phase == KeygenPhase.ROUND2]
    recorder = honest[0] if honest else participants[0]

    verdicts: List[Verdict] = []
    if not aborted:
        # Round 2: 发放
        for i in active:
            s = sessions[i]
            if not s.is_dealer or i in s.excluded:
                continue
            for l in participants:
                if l == i or l in s.excluded:
                    continue
                if any(m.targets(l) for m in behaviors(i, MisbehaviorKind.WITHHELD_SHARE)):
                    continue
                if any(m.targets(l) for m in behaviors(i, MisbehaviorKind.BAD_SHARE)):
                    bad = (s._share_for(l) + 1).to_bytes()
                    enc = EncryptedShare(i, l, encrypt(s._channel_key(l), bad, rng, aad=_share_aad(context, i, l)))
                else:
                    enc = s.keygen_round2_send(l)
                if any(m.targets(l) for m in behaviors(i, MisbehaviorKind.GARBLED_SHARE)):
                    flipped = bytearray(enc.ciphertext)
                    flipped[-1] ^= 0x01
                    enc = EncryptedShare(i, l, bytes(flipped))
                board.publish_share(enc)

        # Round 2: 接收与投诉
        for i in active:
            s = sessions[i]
            if i in s.excluded:
                continue
            for l in sorted(s.commitments_received):
                if l == i or l in s.excluded:
                    continue
                entry = board.shares.get((l, i))
                complaint = s.keygen_round2_receive(l, entry.ciphertext if entry else None)
                if complaint is not None:
                    board.publish_complaint(complaint)
            for m in behaviors(i, MisbehaviorKind.FALSE_COMPLAINT) + behaviors(i, MisbehaviorKind.BOGUS_COMPLAINT):
                if m.target is None or m.target not in s.pks:
                    continue
                complaint = make_complaint(group, i, m.target, s.eph_sk, s.eph_pk, s.pks[m.target], rng)
                if m.kind == MisbehaviorKind.BOGUS_COMPLAINT:
                    complaint = replace(complaint, proof=replace(complaint.proof, z=complaint.proof.z + 1))
                board.publish_complaint(complaint)

        # 裁决：每个参与者独立裁决公告板上的全部投诉
        for i in active:
            for complaint in board.complaints:
                v = sessions[i].adjudicate(complaint, board)
                if i == recorder:
                    verdicts.append(v)

    key_material: Dict[int, KeyMaterial] = {}
    excluded: Dict[int, FrozenSet[int]] = {}
    for i in honest:
        excluded[i] = frozenset(sessions[i].excluded)
        if aborted:
            continue
        try:
            km = sessions[i].finalize_keygen()
        except KeygenAborted as e:
            logger.warning(f"[{context.session_id}] P{i} 中止: {e}")
            aborted = True
            continue
        key_material[i] = km
        board.publish_group_key(i, km.group_key)

    if aborted:
        key_material = {}
    outcome = KeygenOutcome(
        key_material=key_material,
        excluded=excluded,
        group_key=next(iter(key_material.values())).group_key if key_material else None,
        transcript=board,
        verdicts=verdicts,
        aborted=aborted,
    )
    if not aborted:
        logger.info(
            f"[{context.session_id}] 发放完成: {len(key_material)} 个诚实持有者, "
            f"排除={sorted(outcome.consensus_excluded)}, 一致={outcome.consistent}"
        )
    return outcome


def run_keygen(group: GroupBackend, participants: Sequence[int], t: int, context: SessionContext,
               rng: np.random.Generator, misbehaviors: Sequence[Misbehavior] = (),
               abort_floor: Optional[int] = None) -> KeygenOutcome:
    """
    驱动所有参与者完成一次密钥生成

    Args:
        participants: 索引 1..n
        misbehaviors: 作恶脚本（作恶者不计入诚实视角）
    """
    plans = {i: DealingPlan() for i in participants}
    return _run_dealing(group, participants, t, context, rng, plans, misbehaviors, abort_floor)


# ==================== 门限签名 ====================
@dataclass(frozen=True)
class NonceCommitment:
    index: int
    D: GroupElement
    E: GroupElement


@dataclass(frozen=True)
class ThresholdSignature:
    """σ = (R, z)"""
    R: GroupElement
    z: Scalar

    def encode(self) -> bytes:
        return Writer().text(self.R.group.name).element(self.R).scalar(self.z).getvalue()

    @classmethod
    def read(cls, reader: Reader) -> "ThresholdSignature":
        try:
            group = get_backend(reader.text())
        except ValueError as e:
            raise CodecError(str(e)) from e
        return cls(reader.element(group), reader.scalar(group))

    def to_dict(self) -> Dict:
        return {"R": self.R.hex(), "z": self.z.hex()}


def encode_commitment_list(commitments: Mapping[int, NonceCommitment]) -> bytes:
    """B = <(l, D_l, E_l)>，按索引排序"""
    w = Writer()
    w.seq(sorted(commitments.values(), key=lambda c: c.index),
          lambda wr, c: wr.u32(c.index).element(c.D).element(c.E))
    return w.getvalue()


def binding_factor(group: GroupBackend, index: int, message: bytes, B: bytes) -> Scalar:
    """ρ_l = H1(l, m, B)"""
    return hash_to_scalar(group, TAG_H1, Writer().u32(index).blob(message).blob(B).getvalue())


def signing_challenge(group: GroupBackend, R: GroupElement, Y: GroupElement, message: bytes) -> Scalar:
    """c = H2(R, Y, m)"""
    return hash_to_scalar(group, TAG_H2, Writer().element(R).element(Y).blob(message).getvalue())


def group_commitment(group: GroupBackend, commitments: Mapping[int, NonceCommitment],
                     message: bytes) -> Tuple[GroupElement, Dict[int, Scalar]]:
    """R = Π D_l·E_l^{ρ_l}，返回 (R, {l: ρ_l})"""
    B = encode_commitment_list(commitments)
    rhos = {l: binding_factor(group, l, message, B) for l in commitments}
    R = group.product(c.D * (c.E ** rhos[l]) for l, c in sorted(commitments.items()))
    return R, rhos


def compute_response(d: Scalar, e: Scalar, rho: Scalar, lam: Scalar, share: Scalar, c: Scalar) -> Scalar:
    """z_i = d_i + e_i·ρ_i + λ_i·s_i·c"""
    return d + e * rho + lam * share * c


def verify_response(group: GroupBackend, z: Scalar, commitment: NonceCommitment, rho: Scalar,
                    Y_l: GroupElement, c: Scalar, lam: Scalar) -> bool:
    """g^{z_l} = R_l · Y_l^{c·λ_l}，R_l = D_l·E_l^{ρ_l}"""
    R_l = commitment.D * (commitment.E ** rho)
    return group.base_exp(z) == R_l * (Y_l ** (c * lam))


def combine_responses(R: GroupElement, responses: Mapping[int, Scalar]) -> ThresholdSignature:
    """z = Σ z_i（不做逐份校验）"""
    z = R.group.scalar(0)
    for _, zi in sorted(responses.items()):
        z = z + zi
    return ThresholdSignature(R, z)


def verify_signature(Y: GroupElement, message: bytes, signature: ThresholdSignature) -> bool:
    """g^z = R·Y^c，c = H2(R, Y, m)；任何异常输入返回 False"""
    try:
        group = Y.group
        if signature.R.group.name != group.name or signature.z.group.name != group.name:
            return False
        c = signing_challenge(group, signature.R, Y, message)
        return group.base_exp(signature.z) == signature.R * (Y ** c)
    except (ValueError, AttributeError, ZeroDivisionError):
        return False


class SigningSession:
    """
    单个签名者的两轮签名状态机

    nonce 在发出响应前被擦除；第二次调用任一轮都会抛出 NonceReuseError。
    """

    def __init__(self, key: KeyMaterial, signer_set: Iterable[int], message: bytes, rng: np.random.Generator):
        S = sorted(set(signer_set))
        if len(S) < key.t:
            raise ValueError(f"signer set must have at least t={key.t} members, got {len(S)}")
        if key.index not in S:
            raise ValueError(f"signer {key.index} must be in the signer set {S}")
        self.key = key
        self.group = key.group
        self.signer_set = S
        self.message = bytes(message)
        self.rng = rng
        self.nonces: Optional[Tuple[Scalar, Scalar]] = None
        self.nonce_commitments: Dict[int, NonceCommitment] = {}
        self.responses: Dict[int, Scalar] = {}
        self._round1_done = False

    def sign_round1(self) -> NonceCommitment:
        """采样一次性 nonce (d_i, e_i)，广播 (D_i, E_i)"""
        if self._round1_done:
            raise NonceReuseError(f"signer {self.key.index} already committed to nonces in this session")
        self._round1_done = True
        d = self.group.random_scalar(self.rng)
        e = self.group.random_scalar(self.rng)
        self.nonces = (d, e)
        commitment = NonceCommitment(self.key.index, self.group.base_exp(d), self.group.base_exp(e))
        self.nonce_commitments[self.key.index] = commitment
        return commitment

    def sign_round2(self, commitments: Mapping[int, NonceCommitment]) -> Scalar:
        """计算 z_i；nonce 在返回前擦除"""
        if self.nonces is None:
            raise NonceReuseError(f"signer {self.key.index} has no live nonces")
        if set(commitments) != set(self.signer_set):
            raise ValueError(f"commitments must cover the signer set {self.signer_set}, got {sorted(commitments)}")
        if commitments[self.key.index] != self.nonce_commitments[self.key.index]:
            raise ValueError(f"commitment list carries a foreign commitment for signer {self.key.index}")
        self.nonce_commitments = dict(commitments)
        R, rhos = group_commitment(self.group, commitments, self.message)
        c = signing_challenge(self.group, R, self.key.group_key, self.message)
        lam = lagrange_coeff(self.group, self.signer_set, self.key.index)
        d, e = self.nonces
        self.nonces = None
        z = compute_response(d, e, rhos[self.key.index], lam, self.key.share, c)
        self.responses[self.key.index] = z
        return z


def aggregate(group: GroupBackend, Y: GroupElement, verification_shares: Mapping[int, GroupElement],
              message: bytes, commitments: Mapping[int, NonceCommitment],
              responses: Mapping[int, Scalar]) -> Tuple[Optional[ThresholdSignature], FrozenSet[int]]:
    """
    逐份校验后聚合

    Returns:
        (signature, malicious)：有作恶者时 signature 为 None
    """
    S = sorted(commitments)
    R, rhos = group_commitment(group, commitments, message)
    c = signing_challenge(group, R, Y, message)
    malicious = set()
    for l in S:
        z = responses.get(l)
        Y_l = verification_shares.get(l)
        if z is None or Y_l is None:
            malicious.add(l)
            continue
        if not verify_response(group, z, commitments[l], rhos[l], Y_l, c, lagrange_coeff(group, S, l)):
            malicious.add(l)
    if malicious:
        return None, frozenset(malicious)
    return combine_responses(R, {l: responses[l] for l in S}), frozenset()


@dataclass
class SigningOutcome:
    signature: ThresholdSignature
    signers: List[int]
    excluded: FrozenSet[int]
    attempts: int


def threshold_sign(holders: Mapping[int, KeyMaterial], message: bytes, rng: np.random.Generator,
                   signer_set: Optional[Iterable[int]] = None, misbehaviors: Sequence[Misbehavior] = (),
                   max_attempts: int = 8) -> SigningOutcome:
    """
    运行两轮签名；作恶签名者被识别并排除后重回第一轮

    Raises:
        SigningAborted: 剩余签名者少于 t 或超过重试上限
    """
    if not holders:
        raise ValueError("holders must be non-empty")
    first = next(iter(holders.values()))
    group, t, Y = first.group, first.t, first.group_key
    S = sorted(signer_set) if signer_set is not None else sorted(holders)
    unknown = [i for i in S if i not in holders]
    if unknown:
        raise ValueError(f"signers {unknown} hold no key material")
    bad = {m.actor for m in misbehaviors if m.kind == MisbehaviorKind.BAD_RESPONSE}
    excluded: Set[int] = set()

    for attempt in range(1, max_attempts + 1):
        if len(S) < t:
            raise SigningAborted(f"{len(S)} signers remain, below threshold t={t}")
        sessions = {i: SigningSession(holders[i], S, message, rng) for i in S}
        commitments = {i: sessions[i].sign_round1() for i in S}
        responses = {}
        for i in S:
            z = sessions[i].sign_round2(commitments)
            responses[i] = z + 1 if i in bad else z
        signature, malicious = aggregate(group, Y, first.verification_shares, message, commitments, responses)
        if signature is not None:
            return SigningOutcome(signature, S, frozenset(excluded), attempt)
        logger.info(f"签名第 {attempt} 轮识别作恶签名者 {sorted(malicious)}，重试")
        excluded |= malicious
        S = [i for i in S if i not in malicious]
    raise SigningAborted(f"signing did not complete within {max_attempts} attempts")


# ==================== 份额刷新 ====================
@dataclass
class RefreshOutcome:
    key_material: Dict[int, KeyMaterial]
    excluded: FrozenSet[int]
    mode: DealingMode
    attempts: int


def refresh_shares(holders: Mapping[int, KeyMaterial], participants: Sequence[int], rng: np.random.Generator,
                   session_id: str = "refresh", subnet_id: str = "",
                   misbehaviors: Sequence[Misbehavior] = (), abort_floor: Optional[int] = None,
                   max_attempts: int = 4) -> RefreshOutcome:
    """
    刷新签名份额，群公钥保持不变、epoch + 1

    - 新集合不含新成员：所有参与者共享 0，s_i' = s_i + Σ 零份额
    - 新集合含新成员：延续持有者以 λ_i·s_i 为常数项再分发；φ_{i0} 必须等于 Y_i^{λ_i}

    Raises:
        KeygenAborted: 排除后人数不足
    """
    if not holders:
        raise ValueError("holders must be non-empty")
    first = next(iter(holders.values()))
    group, t, Y = first.group, first.t, first.group_key
    if any(km.group_key != Y or km.epoch != first.epoch for km in holders.values()):
        raise ValueError("holders must share one group key and epoch")
    new_set = sorted(set(participants))
    if len(new_set) < t:
        raise ValueError(f"new participant set must have at least t={t} members, got {len(new_set)}")
    epoch = first.epoch + 1
    old_pub = first.verification_shares
    continuing = sorted(set(new_set) & set(holders))
    joining = [j for j in new_set if j not in holders]

    if not joining:
        context = SessionContext(f"{session_id}/epoch-{epoch}", epoch, subnet_id)
        plans = {
            i: DealingPlan(
                mode=DealingMode.ZERO,
                constant=group.scalar(0),
                prior_share=holders[i].share,
                prior_verification_shares=old_pub,
                group_key=Y,
            )
            for i in new_set
        }
        outcome = _run_dealing(group, new_set, t, context, rng, plans, misbehaviors, abort_floor)
        if outcome.aborted:
            raise KeygenAborted("zero-sharing refresh aborted")
        return RefreshOutcome(outcome.key_material, outcome.consensus_excluded, DealingMode.ZERO, 1)

    dealers = list(continuing)
    excluded: Set[int] = set()
    for attempt in range(1, max_attempts + 1):
        if len(dealers) < t:
            raise KeygenAborted(f"{len(dealers)} continuing holders remain, below threshold t={t}")
        context = SessionContext(f"{session_id}/epoch-{epoch}/try-{attempt}", epoch, subnet_id)
        expected = {l: old_pub[l] ** lagrange_coeff(group, dealers, l) for l in dealers}
        members = [i for i in new_set if i not in excluded]
        plans = {}
        for i in members:
            plans[i] = DealingPlan(
                mode=DealingMode.REDISTRIBUTE,
                dealers=frozenset(dealers),
                constant=lagrange_coeff(group, dealers, i) * holders[i].share if i in dealers else None,
                expected_constants=expected,
                group_key=Y,
            )
        outcome = _run_dealing(group, members, t, context, rng, plans, misbehaviors, abort_floor)
        bad_dealers = outcome.consensus_excluded & set(dealers)
        if not outcome.aborted and not bad_dealers:
            excluded |= outcome.consensus_excluded
            return RefreshOutcome(outcome.key_material, frozenset(excluded), DealingMode.REDISTRIBUTE, attempt)
        if outcome.aborted and not outcome.consensus_excluded:
            raise KeygenAborted("redistribution aborted without identifying a culprit")
        logger.info(f"再分发第 {attempt} 轮排除 {sorted(outcome.consensus_excluded)}，重试")
        excluded |= outcome.consensus_excluded
        dealers = [l for l in dealers if l not in excluded]
    raise KeygenAborted(f"redistribution did not complete within {max_attempts} attempts")


# ==================== 子网签名者 ====================
class SubnetSigner:
    """
    子网的门限签名门面

    持有全部诚实持有者的 KeyMaterial（模拟器中由子网参与者共同代表），
    每次签名随机选取 |S| ≥ t 的签名者集合。
    """

    def __init__(self, holders: Mapping[int, KeyMaterial], rng: np.random.Generator,
                 signer_count: Optional[int] = None, max_attempts: int = 8):
        if not holders:
            raise ValueError("holders must be non-empty")
        self.holders: Dict[int, KeyMaterial] = dict(holders)
        first = next(iter(self.holders.values()))
        self.group = first.group
        self.t = first.t
        self.group_key = first.group_key
        self.epoch = first.epoch
        self.rng = rng
        self.signer_count = signer_count
        self.max_attempts = max_attempts
        self.sign_count = 0

    def select_signers(self) -> List[int]:
        pool = sorted(self.holders)
        size = len(pool) if self.signer_count is None else max(self.t, min(self.signer_count, len(pool)))
        return sorted(sample_without_replacement(self.rng, pool, size))

    def sign(self, message: bytes, misbehaviors: Sequence[Misbehavior] = ()) -> SigningOutcome:
        outcome = threshold_sign(self.holders, message, self.rng, self.select_signers(),
                                 misbehaviors, self.max_attempts)
        self.sign_count += 1
        return outcome

    def refresh(self, participants: Sequence[int], session_id: str = "refresh",
                misbehaviors: Sequence[Misbehavior] = ()) -> "SubnetSigner":
        outcome = refresh_shares(self.holders, participants, self.rng, session_id=session_id,
                                 subnet_id=self.group_key.hex(), misbehaviors=misbehaviors)
        return SubnetSigner(outcome.key_material, self.rng, self.signer_count, self.max_attempts)

    @classmethod
    def from_keygen(cls, outcome: KeygenOutcome, rng: np.random.Generator,
                    signer_count: Optional[int] = None) -> "SubnetSigner":
        if outcome.aborted or not outcome.key_material:
            raise KeygenAborted("cannot build a signer from an aborted keygen")
        return cls(outcome.key_material, rng, signer_count)
