#!/usr/bin/env python3
"""
Cert Relay - Weak Causal Probabilistic Reliable Broadcast
证书中继 - 弱因果概率可靠广播 (WCPRB)

在 PRB 之上叠加：
- valid_deps / valid / valid_prime 谓词
- pending 集合与不动点交付循环
- 证书提交与本地状态更新（history / deps / pending）
- 孤立 pending 条目回收
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Type

import numpy as np

from .certificate import (Certificate, StateCommitment, SubnetId, valid_cert,
                          verify_certificate_signature)
from .codec import Reader, Writer, digest
from .prb import GossipConfig, InstanceId, PrbProcess, SampleConfig, Transport
from .trace import TraceLogger

logger = logging.getLogger("CertRelay.wcprb")


class SubmissionRejected(ValueError):
    """源端拒绝：消息在本地不满足 Valid"""


# ==================== 证书消息 ====================
@dataclass(frozen=True, eq=False)
class CertificateMessage:
    """
    WCPRB 负载 m = (Cert, deps)

    deps 以完整副本随消息携带，按摘要排序后编码。
    """
    cert: Certificate
    deps: Tuple[Certificate, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(set(self.deps), key=lambda c: c.digest))
        object.__setattr__(self, "deps", ordered)

    @cached_property
    def encoded(self) -> bytes:
        w = Writer().blob(self.cert.encoded)
        return w.seq(self.deps, lambda wr, c: wr.blob(c.encoded)).getvalue()

    @cached_property
    def digest(self) -> bytes:
        return digest("certificate-message", self.encoded)

    @property
    def instance_id(self) -> InstanceId:
        return self.cert.slot()

    def encode(self) -> bytes:
        return self.encoded

    @classmethod
    def decode(cls, data: bytes) -> "CertificateMessage":
        r = Reader(data)
        cert = Certificate.decode(r.blob())
        deps = r.seq(lambda rd: Certificate.decode(rd.blob()))
        r.expect_end()
        return cls(cert, tuple(deps))

    def short(self) -> str:
        return self.digest.hex()[:12]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CertificateMessage) and self.digest == other.digest

    def __hash__(self) -> int:
        return hash(self.digest)


# ==================== 本地账本 ====================
@dataclass
class ProcessLedger:
    """
    进程本地状态

    Attributes:
        genesis: 注册表中的子网创世承诺（只读引用）
        history: 子网 → 按链序排列的已接受证书
        deps: 待附到下次提交的入站证书
        pending: 消息摘要 → (消息, 到达时间)
        subnet: 所属子网；None 表示纯 TCE 进程
    """
    genesis: Mapping[SubnetId, StateCommitment]
    subnet: Optional[SubnetId] = None
    history: Dict[SubnetId, List[Certificate]] = field(default_factory=dict)
    deps: Set[Certificate] = field(default_factory=set)
    pending: Dict[bytes, Tuple[CertificateMessage, float]] = field(default_factory=dict)
    known: Set[bytes] = field(default_factory=set)
    slots: Dict[Tuple[SubnetId, StateCommitment], bytes] = field(default_factory=dict)
    tips: Dict[SubnetId, StateCommitment] = field(default_factory=dict)

    def tip(self, subnet_id: SubnetId) -> Optional[StateCommitment]:
        """最新 state_hash；无历史时为创世承诺；未注册子网为 None"""
        tip = self.tips.get(subnet_id)
        if tip is not None:
            return tip
        return self.genesis.get(subnet_id)

    def contains(self, cert: Certificate) -> bool:
        return cert.digest in self.known

    def file(self, cert: Certificate) -> bool:
        """将证书归档到其子网历史；已存在则忽略"""
        if cert.digest in self.known:
            return False
        self.history.setdefault(cert.subnet_id, []).append(cert)
        self.known.add(cert.digest)
        self.slots[cert.slot()] = cert.digest
        if cert.prev_state_hash == self.tip(cert.subnet_id):
            self.tips[cert.subnet_id] = cert.state_hash
        return True

    def slot_taken_by_other(self, cert: Certificate) -> bool:
        owner = self.slots.get(cert.slot())
        return owner is not None and owner != cert.digest

    def all_certificates(self) -> Set[Certificate]:
        return {c for certs in self.history.values() for c in certs}


# ==================== 谓词 ====================
def valid_deps(ledger: ProcessLedger, deps: Iterable[Certificate]) -> bool:
    """每个依赖都已在其子网历史中；空依赖恒为真"""
    return all(ledger.contains(dep) for dep in deps)


def linkage(ledger: ProcessLedger, cert: Certificate) -> bool:
    """链接检查：prev_state_hash 等于该子网最新 state_hash（或创世承诺）；已接受的证书保持为真"""
    if ledger.contains(cert):
        return True
    tip = ledger.tip(cert.subnet_id)
    return tip is not None and cert.prev_state_hash == tip


def valid(ledger: ProcessLedger, m: CertificateMessage) -> bool:
    """Valid(m) = valid_cert ∧ valid_deps ∧ linkage"""
    return valid_cert(m.cert) and valid_deps(ledger, m.deps) and linkage(ledger, m.cert)


def valid_prime(ledger: ProcessLedger, m: CertificateMessage) -> bool:
    """valid_cert 已在 gossip 门检查时使用：只剩 valid_deps ∧ linkage"""
    return valid_deps(ledger, m.deps) and linkage(ledger, m.cert)


def tce_state(processes: Iterable["TceProcess"]) -> Set[Certificate]:
    """所有进程 history 的并集"""
    state: Set[Certificate] = set()
    for process in processes:
        state |= process.ledger.all_certificates()
    return state


# ==================== TCE 进程 ====================
@dataclass(frozen=True)
class GcTick:
    """孤立条目回收定时器"""
    kind = "gc"
    sender: int


class TceProcess:
    """
    TCE 进程：PRB 反应器 + WCPRB 账本

    Args:
        pid: 进程编号
        transport: 模拟器接口
        registry_ids: 已注册 TCE 进程
        genesis: 注册子网的创世承诺
        subnet: 本进程所属子网（可为 None）
        validate_at_prb: 启用 Valid'（gossip 门叠加 valid_cert）
        pending_gc_horizon: 孤立条目回收时限（事件时间）
        trace: 轨迹记录器（None 时不记录）
        audit_validity: 记录每次 valid(m) 求值
        prb_cls: PRB 反应器类（拜占庭进程替换为恶意实现）
    """

    def __init__(self, pid: int, transport: Transport, registry_ids: Sequence[int],
                 genesis: Mapping[SubnetId, StateCommitment], sample_config: SampleConfig,
                 gossip_config: GossipConfig, rng: np.random.Generator, subnet: Optional[SubnetId] = None,
                 validate_at_prb: bool = False, pending_gc_horizon: float = 200.0,
                 trace: Optional[TraceLogger] = None, audit_validity: bool = False,
                 prb_cls: Type[PrbProcess] = PrbProcess):
        self.pid = pid
        self.transport = transport
        self.ledger = ProcessLedger(genesis=genesis, subnet=subnet)
        self.validate_at_prb = validate_at_prb
        self.pending_gc_horizon = pending_gc_horizon
        self.trace = trace
        self.audit_validity = audit_validity
        self.pending_high_water = 0
        self.pending_gc_count = 0
        self.rejected_count = 0
        self._gc_scheduled = False
        self.delivery_listeners: List[Callable[["TceProcess", CertificateMessage], None]] = []
        self.prb = prb_cls(pid, transport, registry_ids, sample_config, gossip_config, rng,
                           verify_payload=self.gossip_gate, on_deliver=self.on_prb_deliver)

    # ---------- 事件入口 ----------
    def start(self):
        self.prb.start()

    def handle(self, message):
        if isinstance(message, GcTick):
            self._gc_scheduled = False
            self.drain_pending()
        else:
            self.prb.handle(message)

    # ---------- gossip 门 ----------
    def gossip_gate(self, payload) -> bool:
        """注册子网 + 签名校验；validate_at_prb 时叠加 valid_cert"""
        if not isinstance(payload, CertificateMessage):
            return False
        cert = payload.cert
        if cert.subnet_id not in self.ledger.genesis:
            return False
        if not verify_certificate_signature(cert):
            return False
        if not all(verify_certificate_signature(dep) for dep in payload.deps):
            return False
        if self.validate_at_prb and not valid_cert(cert):
            return False
        return True

    # ---------- Valid ----------
    def is_valid(self, m: CertificateMessage) -> bool:
        result = valid_prime(self.ledger, m) if self.validate_at_prb else valid(self.ledger, m)
        if self.audit_validity and self.trace is not None:
            self.trace.log("valid", self.transport.now, pid=self.pid, msg=m.digest.hex()[:16], value=result)
        return result

    # ---------- 广播与提交 ----------
    def wcprb_broadcast(self, m: CertificateMessage):
        """
        Valid(m) 成立时进入 PRB

        Raises:
            SubmissionRejected: 签名无效或 Valid(m) 不成立
        """
        if not verify_certificate_signature(m.cert) or not valid(self.ledger, m):
            self.rejected_count += 1
            logger.warning(f"[{self.pid}] 源端拒绝 {m.cert!r}")
            if self.trace is not None:
                self.trace.log("rejected", self.transport.now, pid=self.pid,
                               cert=m.cert.digest.hex(), subnet=m.cert.subnet_id.hex())
            raise SubmissionRejected(f"certificate {m.cert.short()} is not valid at process {self.pid}")
        if self.trace is not None:
            self.trace.log("broadcast", self.transport.now, pid=self.pid, cert=m.cert.digest.hex(),
                           subnet=m.cert.subnet_id.hex(), msg=m.digest.hex()[:16])
        self.prb.prb_broadcast(m)

    def submit(self, m: CertificateMessage):
        """广播成功后清空 deps；被拒绝时 deps 保持不变"""
        self.wcprb_broadcast(m)
        self.ledger.deps = set()

    # ---------- 交付 ----------
    def on_prb_deliver(self, m: CertificateMessage):
        self.ledger.pending[m.digest] = (m, self.transport.now)
        self.pending_high_water = max(self.pending_high_water, len(self.ledger.pending))
        self.drain_pending()

    def drain_pending(self):
        """反复交付任一满足 Valid 的 pending 消息，直到不动点；随后回收孤立条目"""
        progress = True
        while progress:
            progress = False
            for key, (m, _) in list(self.ledger.pending.items()):
                if self.ledger.contains(m.cert):
                    del self.ledger.pending[key]
                    continue
                if self.ledger.slot_taken_by_other(m.cert):
                    continue
                if self.is_valid(m):
                    del self.ledger.pending[key]
                    self.on_wcprb_deliver(m)
                    progress = True
                    break
        self._collect_orphans()

    def on_wcprb_deliver(self, m: CertificateMessage):
        """状态更新：依赖与证书归档；若本子网是目标则加入 deps"""
        for dep in m.deps:
            self.ledger.file(dep)
        self.ledger.file(m.cert)
        addressed = self.ledger.subnet is not None and self.ledger.subnet in m.cert.target_subnets()
        if addressed:
            self.ledger.deps.add(m.cert)
        if self.trace is not None:
            self.trace.log(
                "deliver", self.transport.now, pid=self.pid,
                cert=m.cert.digest.hex(), subnet=m.cert.subnet_id.hex(),
                prev=m.cert.prev_state_hash.hex(), state=m.cert.state_hash.hex(),
                deps=[d.digest.hex() for d in m.deps], pending=len(self.ledger.pending),
            )
        for listener in self.delivery_listeners:
            listener(self, m)

    def _collect_orphans(self):
        now = self.transport.now
        waiting = False
        for key, (m, arrived) in list(self.ledger.pending.items()):
            if not self.ledger.slot_taken_by_other(m.cert):
                continue
            if now - arrived >= self.pending_gc_horizon:
                del self.ledger.pending[key]
                self.pending_gc_count += 1
                logger.warning(f"[{self.pid}] 回收孤立条目 {m.cert!r}")
                if self.trace is not None:
                    self.trace.log("gc", now, pid=self.pid, cert=m.cert.digest.hex())
            else:
                waiting = True
        if waiting and not self._gc_scheduled:
            self._gc_scheduled = True
            self.transport.schedule(self.pid, self.pending_gc_horizon, GcTick(self.pid))

    # ---------- 查询 ----------
    def delivered(self) -> Set[Certificate]:
        return self.ledger.all_certificates()

    def message_counts(self) -> Dict[str, int]:
        return self.prb.message_counts()
