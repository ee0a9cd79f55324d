#!/usr/bin/env python3
"""
Cert Relay - Probabilistic Reliable Broadcast
证书中继 - 基于采样的概率可靠广播 (PRB)

每个进程随机抽取三个样本：
- Echo 样本 𝓔：收集 Echo，达到 E 后发送 Ready
- Ready 样本 𝓡：收集 Ready，达到 R 后放大 Ready
- Delivery 样本 𝓓：收集 Ready，超过 D 后交付

底层的不可靠广播 (pb) 由多轮推送 gossip 实现。
每个进程是单线程确定性反应器，只由模拟器事件驱动。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, ClassVar, Dict, FrozenSet, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from .certificate import StateCommitment, SubnetId
from .codec import Writer
from .randomness import sample_without_replacement

logger = logging.getLogger("CertRelay.prb")

InstanceId = Tuple[SubnetId, StateCommitment]


def encode_instance_id(instance_id: InstanceId, w: Optional[Writer] = None) -> Writer:
    w = w if w is not None else Writer()
    subnet_id, prev_hash = instance_id
    subnet_id.write(w)
    return w.blob(prev_hash.digest)


# ==================== 样本配置 ====================
class SampleKind(str, Enum):
    ECHO = "echo"
    READY = "ready"
    DELIVERY = "delivery"


@dataclass(frozen=True)
class SampleConfig:
    """
    样本大小与阈值

    阈值必须严格小于对应样本大小；交付需要超过 D 个 Ready。
    """
    echo_size: int
    ready_size: int
    delivery_size: int
    E: int
    R: int
    D: int
    sample_rate_K: float = 4.0

    def __post_init__(self):
        for name in ("echo_size", "ready_size", "delivery_size"):
            value = getattr(self, name)
            if value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        for threshold, size, label in ((self.E, self.echo_size, "E"),
                                       (self.R, self.ready_size, "R"),
                                       (self.D, self.delivery_size, "D")):
            if not (1 <= threshold < size):
                raise ValueError(f"{label} must be in [1, sample size {size}), got {threshold}")

    @classmethod
    def for_system(cls, n: int, K: float = 4.0, echo_fraction: float = 2 / 3,
                   ready_fraction: float = 1 / 3, delivery_fraction: float = 2 / 3,
                   size: Optional[int] = None) -> "SampleConfig":
        """
        按系统规模构造默认配置

        Args:
            n: 注册进程数
            K: 样本大小倍数，size = ceil(K * ln n)
            size: 强制固定样本大小（对照实验），覆盖 K

        Returns:
            SampleConfig，样本大小截断到 n - 1
        """
        if n < 3:
            raise ValueError(f"n must be >= 3, got {n}")
        if size is None:
            if K <= 0:
                raise ValueError(f"K must be positive, got {K}")
            size = math.ceil(K * math.log(n))
        size = min(size, n - 1)
        return cls(
            echo_size=size,
            ready_size=size,
            delivery_size=size,
            E=_threshold(size, echo_fraction),
            R=_threshold(size, ready_fraction),
            D=_threshold(size, delivery_fraction),
            sample_rate_K=K,
        )

    def max_size(self) -> int:
        return max(self.echo_size, self.ready_size, self.delivery_size)

    def size_of(self, kind: SampleKind) -> int:
        return {SampleKind.ECHO: self.echo_size,
                SampleKind.READY: self.ready_size,
                SampleKind.DELIVERY: self.delivery_size}[kind]

    def to_dict(self) -> Dict:
        return {
            "echo_size": self.echo_size, "ready_size": self.ready_size, "delivery_size": self.delivery_size,
            "E": self.E, "R": self.R, "D": self.D, "K": self.sample_rate_K,
        }


def _threshold(size: int, fraction: float) -> int:
    # 阈值至少为 1，且严格小于样本大小
    return max(1, min(size - 1, math.ceil(fraction * size)))


@dataclass(frozen=True)
class GossipConfig:
    fanout: int
    rounds: int = 3
    interval: float = 1.0

    def __post_init__(self):
        if self.fanout < 1:
            raise ValueError(f"fanout must be >= 1, got {self.fanout}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.interval <= 0:
            raise ValueError(f"interval must be positive, got {self.interval}")

    @classmethod
    def for_system(cls, n: int, fanout: Optional[int] = None, rounds: int = 3,
                   interval: float = 1.0) -> "GossipConfig":
        if fanout is None:
            fanout = math.ceil(math.log(n)) + 1
        return cls(min(fanout, max(1, n - 1)), rounds, interval)


# ==================== 样本 ====================
@dataclass
class ProcessSamples:
    """监听集合 (𝓔, 𝓡, 𝓓) 与发送集合 (Ẽ, R̃, D̃)"""
    echo: FrozenSet[int]
    ready: FrozenSet[int]
    delivery: FrozenSet[int]
    echo_subscribers: Set[int] = field(default_factory=set)
    ready_subscribers: Set[int] = field(default_factory=set)
    delivery_subscribers: Set[int] = field(default_factory=set)

    def listen_set(self, kind: SampleKind) -> FrozenSet[int]:
        return {SampleKind.ECHO: self.echo, SampleKind.READY: self.ready,
                SampleKind.DELIVERY: self.delivery}[kind]

    def subscribers(self, kind: SampleKind) -> Set[int]:
        return {SampleKind.ECHO: self.echo_subscribers, SampleKind.READY: self.ready_subscribers,
                SampleKind.DELIVERY: self.delivery_subscribers}[kind]

    def ready_targets(self) -> List[int]:
        """Ready 发往 R̃ ∪ D̃"""
        return sorted(self.ready_subscribers | self.delivery_subscribers)


def init_samples(self_id: int, registry_ids: Sequence[int], config: SampleConfig,
                 rng: np.random.Generator) -> ProcessSamples:
    """
    从注册表中均匀无放回地抽取三个样本（不含自身）

    Raises:
        ValueError: 注册表过小
    """
    peers = [pid for pid in registry_ids if pid != self_id]
    if len(peers) < config.max_size():
        raise ValueError(f"registry must have at least {config.max_size()} peers besides {self_id}, "
                         f"got {len(peers)}")
    return ProcessSamples(
        echo=frozenset(sample_without_replacement(rng, peers, config.echo_size)),
        ready=frozenset(sample_without_replacement(rng, peers, config.ready_size)),
        delivery=frozenset(sample_without_replacement(rng, peers, config.delivery_size)),
    )


# ==================== 线路消息 ====================
class MessageKind(str, Enum):
    SUBSCRIBE = "subscribe"
    GOSSIP = "gossip"
    ECHO = "echo"
    READY = "ready"
    TICK = "tick"


class Payload(Protocol):
    """PRB 承载的负载：需要摘要、实例号与规范编码"""
    digest: bytes
    instance_id: InstanceId

    def encode(self) -> bytes: ...


@dataclass(frozen=True)
class Subscribe:
    kind: ClassVar[MessageKind] = MessageKind.SUBSCRIBE
    sender: int
    sample: SampleKind

    def encode(self) -> bytes:
        return Writer().u8(0).u32(self.sender).text(self.sample.value).getvalue()


@dataclass(frozen=True)
class Gossip:
    kind: ClassVar[MessageKind] = MessageKind.GOSSIP
    sender: int
    payload: Payload

    @property
    def instance_id(self) -> InstanceId:
        return self.payload.instance_id

    @property
    def digest(self) -> bytes:
        return self.payload.digest

    def encode(self) -> bytes:
        w = Writer().u8(1).u32(self.sender)
        encode_instance_id(self.instance_id, w)
        return w.blob(self.digest).blob(self.payload.encode()).getvalue()


@dataclass(frozen=True)
class Echo:
    kind: ClassVar[MessageKind] = MessageKind.ECHO
    sender: int
    instance_id: InstanceId
    digest: bytes

    def encode(self) -> bytes:
        w = Writer().u8(2).u32(self.sender)
        return encode_instance_id(self.instance_id, w).blob(self.digest).getvalue()


@dataclass(frozen=True)
class Ready:
    kind: ClassVar[MessageKind] = MessageKind.READY
    sender: int
    instance_id: InstanceId
    digest: bytes

    def encode(self) -> bytes:
        w = Writer().u8(3).u32(self.sender)
        return encode_instance_id(self.instance_id, w).blob(self.digest).getvalue()


@dataclass(frozen=True)
class GossipTick:
    """自定时器：剩余推送轮次"""
    kind: ClassVar[MessageKind] = MessageKind.TICK
    sender: int
    digest: bytes
    remaining: int


class Transport(Protocol):
    """模拟器暴露给反应器的接口"""

    @property
    def now(self) -> float: ...

    def send(self, sender: int, dest: int, message) -> None: ...

    def schedule(self, pid: int, delay: float, message) -> None: ...


# ==================== 广播实例 ====================
@dataclass
class BroadcastInstance:
    instance_id: InstanceId
    candidates: Dict[bytes, Payload] = field(default_factory=dict)
    echo_counts: Dict[bytes, Set[int]] = field(default_factory=dict)
    ready_counts: Dict[bytes, Set[int]] = field(default_factory=dict)
    delivery_counts: Dict[bytes, Set[int]] = field(default_factory=dict)
    echo_sent: Optional[bytes] = None
    ready_sent: Optional[bytes] = None
    delivered: Optional[Payload] = None


# ==================== PRB 进程 ====================
class PrbProcess:
    """
    PRB 反应器

    Args:
        pid: 进程编号
        transport: 模拟器接口
        registry_ids: 已注册 TCE 进程（样本与 gossip 对象的来源）
        sample_config / gossip_config: 参数
        rng: 本进程的随机流
        verify_payload: gossip 门：签名校验（可叠加 valid_cert）
        on_deliver: PRB 交付回调
    """

    def __init__(self, pid: int, transport: Transport, registry_ids: Sequence[int],
                 sample_config: SampleConfig, gossip_config: GossipConfig, rng: np.random.Generator,
                 verify_payload: Callable[[Payload], bool],
                 on_deliver: Optional[Callable[[Payload], None]] = None):
        self.pid = pid
        self.transport = transport
        self.registry_ids = list(registry_ids)
        self._peers = [p for p in self.registry_ids if p != pid]
        self.sample_config = sample_config
        self.gossip_config = gossip_config
        self.rng = rng
        self.verify_payload = verify_payload
        self.on_deliver = on_deliver
        self.samples: Optional[ProcessSamples] = None
        self.instances: Dict[InstanceId, BroadcastInstance] = {}
        self.seen: Dict[bytes, Payload] = {}
        self.rejected: Set[bytes] = set()
        self.sent: Dict[MessageKind, int] = {k: 0 for k in MessageKind if k != MessageKind.TICK}

    # ---------- 基础 ----------
    def _send(self, dest: int, message):
        self.sent[message.kind] += 1
        self.transport.send(self.pid, dest, message)

    def _instance(self, instance_id: InstanceId) -> BroadcastInstance:
        inst = self.instances.get(instance_id)
        if inst is None:
            inst = BroadcastInstance(instance_id)
            self.instances[instance_id] = inst
        return inst

    def start(self):
        """抽取样本并向每个样本成员发送订阅"""
        self.samples = init_samples(self.pid, self.registry_ids, self.sample_config, self.rng)
        for kind in SampleKind:
            for member in sorted(self.samples.listen_set(kind)):
                self._send(member, Subscribe(self.pid, kind))

    def handle(self, message):
        """按消息类型分派"""
        kind = message.kind
        if kind is MessageKind.GOSSIP:
            self.on_pb_receive(message.payload)
        elif kind is MessageKind.ECHO:
            self.on_echo(message.instance_id, message.digest, message.sender)
        elif kind is MessageKind.READY:
            self.on_ready(message.instance_id, message.digest, message.sender)
        elif kind is MessageKind.TICK:
            self._gossip_round(message.digest, message.remaining)
        elif kind is MessageKind.SUBSCRIBE:
            self.on_subscribe(message.sender, message.sample)

    # ---------- 订阅 ----------
    def on_subscribe(self, sender: int, sample: SampleKind):
        """
        记录订阅者；已发出的 Echo/Ready 补发给迟到的订阅者
        """
        subs = self.samples.subscribers(sample)
        if sender in subs:
            return
        subs.add(sender)
        for inst in self.instances.values():
            if sample is SampleKind.ECHO and inst.echo_sent is not None:
                self._send(sender, Echo(self.pid, inst.instance_id, inst.echo_sent))
            elif sample is not SampleKind.ECHO and inst.ready_sent is not None:
                self._send(sender, Ready(self.pid, inst.instance_id, inst.ready_sent))

    # ---------- pb：推送 gossip ----------
    def prb_broadcast(self, payload: Payload):
        """源进程广播：自身也 pb 接收该负载"""
        logger.debug(f"[{self.pid}] prb_broadcast {payload.digest.hex()[:12]}")
        self.on_pb_receive(payload)

    def on_pb_receive(self, payload: Payload):
        digest = payload.digest
        if digest in self.seen or digest in self.rejected:
            return
        if not self.verify_payload(payload):
            self.rejected.add(digest)
            logger.debug(f"[{self.pid}] gossip 门丢弃 {digest.hex()[:12]}")
            return
        self.seen[digest] = payload
        self._gossip_round(digest, self.gossip_config.rounds)
        self.on_gossip(payload)

    def _gossip_round(self, digest: bytes, remaining: int):
        payload = self.seen.get(digest)
        if payload is None or remaining <= 0:
            return
        fanout = min(self.gossip_config.fanout, len(self._peers))
        for peer in sample_without_replacement(self.rng, self._peers, fanout):
            self._send(peer, Gossip(self.pid, payload))
        if remaining > 1:
            self.transport.schedule(self.pid, self.gossip_config.interval,
                                    GossipTick(self.pid, digest, remaining - 1))

    # ---------- PRB ----------
    def on_gossip(self, payload: Payload):
        """
        签名正确的负载：每实例第一个触发 Echo，其余只记录
        """
        inst = self._instance(payload.instance_id)
        inst.candidates.setdefault(payload.digest, payload)
        if inst.echo_sent is None:
            inst.echo_sent = payload.digest
            for dest in sorted(self.samples.echo_subscribers):
                self._send(dest, Echo(self.pid, inst.instance_id, payload.digest))
        self._try_deliver(inst, payload.digest)

    def on_echo(self, instance_id: InstanceId, digest: bytes, sender: int):
        if sender not in self.samples.echo:
            return
        inst = self._instance(instance_id)
        senders = inst.echo_counts.setdefault(digest, set())
        senders.add(sender)
        if len(senders) >= self.sample_config.E:
            self._send_ready(inst, digest)

    def on_ready(self, instance_id: InstanceId, digest: bytes, sender: int):
        in_ready = sender in self.samples.ready
        in_delivery = sender in self.samples.delivery
        if not (in_ready or in_delivery):
            return
        inst = self._instance(instance_id)
        if in_ready:
            senders = inst.ready_counts.setdefault(digest, set())
            senders.add(sender)
            if len(senders) >= self.sample_config.R:
                self._send_ready(inst, digest)
        if in_delivery:
            inst.delivery_counts.setdefault(digest, set()).add(sender)
            self._try_deliver(inst, digest)

    def _send_ready(self, inst: BroadcastInstance, digest: bytes):
        if inst.ready_sent is not None:
            return
        inst.ready_sent = digest
        for dest in self.samples.ready_targets():
            self._send(dest, Ready(self.pid, inst.instance_id, digest))

    def _try_deliver(self, inst: BroadcastInstance, digest: bytes):
        if inst.delivered is not None:
            return
        if len(inst.delivery_counts.get(digest, ())) <= self.sample_config.D:
            return
        payload = inst.candidates.get(digest)
        if payload is None:
            # Ready 已足够但尚未收到负载，等待 gossip
            return
        inst.delivered = payload
        logger.debug(f"[{self.pid}] prb 交付 {digest.hex()[:12]}")
        if self.on_deliver is not None:
            self.on_deliver(payload)

    # ---------- 统计 ----------
    def delivered_digests(self) -> Dict[InstanceId, bytes]:
        return {iid: inst.delivered.digest for iid, inst in self.instances.items() if inst.delivered is not None}

    def message_counts(self) -> Dict[str, int]:
        return {k.value: v for k, v in self.sent.items()}
