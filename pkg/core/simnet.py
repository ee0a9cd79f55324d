#!/usr/bin/env python3
"""
Cert Relay - Discrete-Event Network Simulator
证书中继 - 确定性离散事件网络模拟器

承载 TCE 进程与子网执行体：
- 注册表（Sybil 门）：未注册发送者的消息被所有正确进程丢弃
- 每个子网一次 ICE-FROST 密钥生成，创世承诺登记在注册表
- 子网执行体：构建批次、签名证书、经指定提交者提交
- 脚本化拜占庭对手：双花、静默、延迟、畸形证书、DKG/签名作恶、未注册节点

事件时间驱动，种子完全决定一次运行：同一 SimConfig 两次运行的轨迹逐字节相同。
"""

import heapq
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Type, Union

import numpy as np

from config.settings import SCHEMA_VERSION, get_sim_config
from .certificate import (
    Certificate,
    ContractCall,
    InboundCall,
    InboundMint,
    LocalTransfer,
    MerklePath,
    OutboundXS,
    StateCommitment,
    SubnetId,
    SubnetState,
    Transaction,
    TransferAsset,
    build_and_sign_certificate,
    certificate_payload,
    xs_reference,
)
from .group import get_backend
from .ice_frost import (
    KeygenAborted,
    Misbehavior,
    MisbehaviorKind,
    SessionContext,
    SubnetSigner,
    default_abort_floor,
    run_keygen,
)
from .prb import Echo, Gossip, GossipConfig, PrbProcess, Ready, SampleConfig, SampleKind, Subscribe
from .randomness import make_rng, sample_without_replacement
from .trace import TraceLogger
from .wcprb import CertificateMessage, SubmissionRejected, TceProcess

logger = logging.getLogger("CertRelay.simnet")


class ConfigError(ValueError):
    """配置或场景文档无效（在任何事件执行前抛出）"""


class RegistrationError(ValueError):
    """重复注册或注册表不一致"""


# ==================== 子网与对手脚本 ====================
@dataclass
class SubnetSpec:
    """
    子网花名册条目

    Attributes:
        name: 子网名称
        submitter: 指定提交者的 TCE 进程号（None = 按序号分配）
        t, n: ICE-FROST 门限参数
        certificates: 计划提交的证书数量
        batch_size: 每批随机转账笔数
        xs_rate: 跨子网转账比例
        call_rate: 跨子网合约调用比例
        accounts: 账户数量
        assets: 资产列表
        initial_balance: 每账户每资产初始余额
        cert_interval: 前一证书交付后到构建下一证书的间隔（事件时间）
    """
    name: str = "subnet-0"
    submitter: Optional[int] = None
    t: int = 2
    n: int = 3
    certificates: int = 1
    batch_size: int = 4
    xs_rate: float = 0.3
    call_rate: float = 0.0
    accounts: int = 4
    assets: Tuple[str, ...] = ("RELAY",)
    initial_balance: int = 1000
    cert_interval: float = 1.0

    def to_dict(self) -> Dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["assets"] = list(self.assets)
        return data


@dataclass(frozen=True)
class Equivocate:
    """在 slot 处构建两张冲突证书，分别 gossip 给两半进程"""
    subnet: str
    slot: int = 1
    amplify: bool = True


@dataclass(frozen=True)
class Reorg:
    """slot 被交付后再提交一张冲突证书"""
    subnet: str
    slot: int = 1


@dataclass(frozen=True)
class BogusCert:
    """在 slot 处提交签名正确但内在无效的证书"""
    subnet: str
    slot: int = 1
    kind: str = "state_hash"


@dataclass(frozen=True)
class Mute:
    processes: Tuple[int, ...] = ()
    count: int = 0


@dataclass(frozen=True)
class Delay:
    """发送方在 [start, end) 内的消息延迟乘以 factor"""
    processes: Tuple[int, ...] = ()
    factor: float = 5.0
    start: float = 0.0
    end: float = math.inf


@dataclass(frozen=True)
class BadShare:
    subnet: str
    dealer: int
    target: Optional[int] = None


@dataclass(frozen=True)
class BadPoK:
    subnet: str
    dealer: int


@dataclass(frozen=True)
class BogusComplaint:
    subnet: str
    accuser: int
    accused: int
    provable: bool = False


@dataclass(frozen=True)
class BadResponse:
    subnet: str
    signer: int


@dataclass(frozen=True)
class Rogue:
    count: int = 1


Behavior = Union[Equivocate, Reorg, BogusCert, Mute, Delay, BadShare, BadPoK, BogusComplaint, BadResponse, Rogue]

BEHAVIOR_TYPES: Dict[str, Type] = {
    "equivocate": Equivocate,
    "reorg": Reorg,
    "bogus_cert": BogusCert,
    "mute": Mute,
    "delay": Delay,
    "bad_share": BadShare,
    "bad_pok": BadPoK,
    "bogus_complaint": BogusComplaint,
    "bad_response": BadResponse,
    "rogue": Rogue,
}

BOGUS_KINDS = ("state_hash", "proof", "inclusion")


@dataclass
class AdversaryScript:
    behaviors: List[Behavior] = field(default_factory=list)

    def of_type(self, cls: Type) -> List:
        return [b for b in self.behaviors if isinstance(b, cls)]

    def for_subnet(self, cls: Type, subnet: str) -> List:
        return [b for b in self.of_type(cls) if b.subnet == subnet]

    def controlled_subnets(self) -> Set[str]:
        """对手控制提交者的子网"""
        return {b.subnet for b in self.behaviors if isinstance(b, (Equivocate, Reorg, BogusCert))}

    def amplifies(self) -> bool:
        return any(isinstance(b, Reorg) or (isinstance(b, Equivocate) and b.amplify) for b in self.behaviors)

    @classmethod
    def from_list(cls, items: Iterable[Dict]) -> "AdversaryScript":
        behaviors = []
        for item in items:
            item = dict(item)
            kind = item.pop("type", None)
            behavior_cls = BEHAVIOR_TYPES.get(kind)
            if behavior_cls is None:
                raise ConfigError(f"unknown adversary behavior type: {kind!r}")
            known = {f.name for f in fields(behavior_cls)}
            extra = set(item) - known
            if extra:
                raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
            if "processes" in item:
                item["processes"] = tuple(item["processes"])
            if "end" in item and item["end"] is None:
                item["end"] = math.inf
            try:
                behaviors.append(behavior_cls(**item))
            except TypeError as e:
                raise ConfigError(f"invalid {kind} behavior: {e}") from e
        return cls(behaviors)

    def to_list(self) -> List[Dict]:
        out = []
        reverse = {v: k for k, v in BEHAVIOR_TYPES.items()}
        for b in self.behaviors:
            data = {"type": reverse[type(b)]}
            for f in fields(b):
                value = getattr(b, f.name)
                if isinstance(value, tuple):
                    value = list(value)
                if value == math.inf:
                    value = None
                data[f.name] = value
            out.append(data)
        return out


# ==================== 模拟配置 ====================
@dataclass
class SimConfig:
    n: int = 6
    byzantine_fraction: float = 0.0
    seed: int = 1
    horizon: float = 1000.0
    backend: str = "secp256k1"
    latency: Dict[str, Any] = field(default_factory=dict)
    samples: Dict[str, Any] = field(default_factory=dict)
    gossip: Dict[str, Any] = field(default_factory=dict)
    subnets: List[SubnetSpec] = field(default_factory=lambda: [SubnetSpec()])
    adversary: AdversaryScript = field(default_factory=AdversaryScript)
    validate_at_prb: bool = False
    pending_gc_horizon: float = 200.0
    trace_messages: bool = False
    audit_validity: bool = True
    abort_floor_fraction: float = 2 / 3
    signer_count: Optional[int] = None
    warmup: float = 5.0

    @classmethod
    def from_dict(cls, data: Dict) -> "SimConfig":
        """
        从 JSON 文档构造；缺省键取 config.settings 的默认值

        Raises:
            ConfigError: 版本不符、未知键或取值无效
        """
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version}")
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")

        defaults = get_sim_config()
        merged: Dict[str, Any] = {k: v for k, v in defaults.items() if k in known}
        for key in ("latency", "samples", "gossip"):
            merged[key] = {**defaults[key], **data.pop(key, {})}
        merged.update(data)

        subnets = merged.get("subnets")
        if subnets is not None:
            parsed = []
            for i, item in enumerate(subnets):
                if isinstance(item, SubnetSpec):
                    parsed.append(item)
                    continue
                item = dict(item)
                item.setdefault("name", f"subnet-{i}")
                spec_keys = {f.name for f in fields(SubnetSpec)}
                bad = set(item) - spec_keys
                if bad:
                    raise ConfigError(f"unknown subnet keys: {sorted(bad)}")
                if "assets" in item:
                    item["assets"] = tuple(item["assets"])
                parsed.append(SubnetSpec(**item))
            merged["subnets"] = parsed
        adversary = merged.get("adversary")
        if adversary is None:
            merged["adversary"] = AdversaryScript()
        elif not isinstance(adversary, AdversaryScript):
            merged["adversary"] = AdversaryScript.from_list(adversary)
        try:
            config = cls(**merged)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        config.validate()
        return config

    def to_dict(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "byzantine_fraction": self.byzantine_fraction,
            "seed": self.seed,
            "horizon": self.horizon,
            "backend": self.backend,
            "latency": dict(self.latency),
            "samples": dict(self.samples),
            "gossip": dict(self.gossip),
            "subnets": [s.to_dict() for s in self.subnets],
            "adversary": self.adversary.to_list(),
            "validate_at_prb": self.validate_at_prb,
            "pending_gc_horizon": self.pending_gc_horizon,
            "trace_messages": self.trace_messages,
            "audit_validity": self.audit_validity,
            "abort_floor_fraction": self.abort_floor_fraction,
            "signer_count": self.signer_count,
            "warmup": self.warmup,
        }

    def sample_config(self) -> SampleConfig:
        s = self.samples
        return SampleConfig.for_system(
            self.n, K=s.get("K", 4.0),
            echo_fraction=s.get("echo_fraction", 2 / 3),
            ready_fraction=s.get("ready_fraction", 1 / 3),
            delivery_fraction=s.get("delivery_fraction", 2 / 3),
            size=s.get("size"),
        )

    def gossip_config(self) -> GossipConfig:
        g = self.gossip
        return GossipConfig.for_system(self.n, g.get("fanout"), g.get("rounds", 3), g.get("interval", 1.0))

    def submitter_of(self, index: int) -> int:
        spec = self.subnets[index]
        return index if spec.submitter is None else spec.submitter

    def validate(self):
        """
        Raises:
            ConfigError: 任一取值无效
        """
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        if not (0 <= self.byzantine_fraction < 1 / 3):
            raise ConfigError(f"byzantine_fraction must be in [0, 1/3), got {self.byzantine_fraction}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        try:
            get_backend(self.backend)
            self.sample_config()
            self.gossip_config()
            LatencyModel.from_dict(self.latency, np.random.default_rng(0))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not self.subnets:
            raise ConfigError("at least one subnet is required")
        names = [s.name for s in self.subnets]
        if len(set(names)) != len(names):
            raise ConfigError(f"subnet names must be unique, got {names}")
        submitters = [self.submitter_of(i) for i in range(len(self.subnets))]
        if len(set(submitters)) != len(submitters):
            raise ConfigError(f"submitters must be distinct, got {submitters}")
        for spec, pid in zip(self.subnets, submitters):
            if not (0 <= pid < self.n):
                raise ConfigError(f"submitter of {spec.name} must be in [0, {self.n}), got {pid}")
            if not (1 <= spec.t <= spec.n):
                raise ConfigError(f"t must be in [1, n] for {spec.name}, got t={spec.t}, n={spec.n}")
            if spec.certificates < 0 or spec.batch_size < 0:
                raise ConfigError(f"certificates and batch_size must be non-negative for {spec.name}")
            if not (0 <= spec.xs_rate + spec.call_rate <= 1):
                raise ConfigError(f"xs_rate + call_rate must be in [0, 1] for {spec.name}")
            if spec.accounts < 2 or not spec.assets:
                raise ConfigError(f"{spec.name} needs >= 2 accounts and >= 1 asset")
        self._validate_adversary(set(names))

    def _validate_adversary(self, names: Set[str]):
        for b in self.adversary.behaviors:
            subnet = getattr(b, "subnet", None)
            if subnet is not None and subnet not in names:
                raise ConfigError(f"{type(b).__name__} references unknown subnet {subnet!r}")
            spec = next((s for s in self.subnets if s.name == subnet), None)
            if isinstance(b, (Equivocate, Reorg, BogusCert)) and not (1 <= b.slot <= spec.certificates):
                raise ConfigError(f"slot must be in [1, {spec.certificates}], got {b.slot}")
            if isinstance(b, BogusCert) and b.kind not in BOGUS_KINDS:
                raise ConfigError(f"bogus cert kind must be one of {BOGUS_KINDS}, got {b.kind!r}")
            for attr in ("dealer", "signer", "accuser", "accused"):
                idx = getattr(b, attr, None)
                if idx is not None and not (1 <= idx <= spec.n):
                    raise ConfigError(f"{attr} must be in [1, {spec.n}], got {idx}")
            for pid in getattr(b, "processes", ()):
                if not (0 <= pid < self.n):
                    raise ConfigError(f"process id must be in [0, {self.n}), got {pid}")
            if isinstance(b, (Mute, Rogue)) and b.count < 0:
                raise ConfigError(f"count must be non-negative, got {b.count}")


# ==================== 注册表 ====================
class Registry:
    """Sybil 门：只接受已注册进程，子网需登记创世承诺"""

    def __init__(self):
        self.processes: Set[int] = set()
        self.subnets: Dict[SubnetId, StateCommitment] = {}

    def register_process(self, pid: int):
        if pid in self.processes:
            raise RegistrationError(f"process {pid} is already registered")
        self.processes.add(pid)

    def register_subnet(self, subnet_id: SubnetId, genesis: StateCommitment):
        if subnet_id in self.subnets:
            raise RegistrationError(f"subnet {subnet_id.short()} is already registered")
        self.subnets[subnet_id] = genesis

    def gate(self, sender: int) -> bool:
        return sender in self.processes

    def process_ids(self) -> List[int]:
        return sorted(self.processes)


# ==================== 延迟模型 ====================
class LatencyModel:
    """逐消息事件时间延迟；批量预抽样本"""

    BATCH = 4096

    def __init__(self, family: str, rng: np.random.Generator, median: float = 1.0, sigma: float = 0.5,
                 low: float = 0.5, high: float = 1.5):
        if family not in ("lognormal", "uniform", "constant"):
            raise ValueError(f"latency family must be lognormal, uniform or constant, got {family!r}")
        if median <= 0:
            raise ValueError(f"median must be positive, got {median}")
        if family == "uniform" and not (0 < low <= high):
            raise ValueError(f"uniform bounds must satisfy 0 < low <= high, got {low}, {high}")
        self.family = family
        self.rng = rng
        self.median = median
        self.sigma = sigma
        self.low = low
        self.high = high
        self._buffer: List[float] = []

    @classmethod
    def from_dict(cls, data: Dict, rng: np.random.Generator) -> "LatencyModel":
        return cls(data.get("family", "lognormal"), rng, data.get("median", 1.0), data.get("sigma", 0.5),
                   data.get("low", 0.5), data.get("high", 1.5))

    def _refill(self):
        if self.family == "lognormal":
            values = self.rng.lognormal(math.log(self.median), self.sigma, self.BATCH)
        elif self.family == "uniform":
            values = self.rng.uniform(self.low, self.high, self.BATCH)
        else:
            values = np.full(self.BATCH, self.median)
        self._buffer = values[::-1].tolist()

    def draw(self) -> float:
        if not self._buffer:
            self._refill()
        return self._buffer.pop()


# ==================== 事件队列 ====================
class EventQueue:
    """(事件时间, 计数器, 目的地, 消息) 小顶堆；计数器保证同时事件的确定顺序"""

    def __init__(self):
        self._heap: List[Tuple[float, int, int, Any]] = []
        self._counter = 0

    def push(self, time: float, dest: int, message: Any):
        heapq.heappush(self._heap, (time, self._counter, dest, message))
        self._counter += 1

    def pop(self) -> Tuple[float, int, Any]:
        time, _, dest, message = heapq.heappop(self._heap)
        return time, dest, message

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


# ==================== 拜占庭 PRB 实现 ====================
class SilentPrb(PrbProcess):
    """静默进程：抽取样本但不发送任何消息"""

    def start(self):
        pass

    def handle(self, message):
        pass

    def prb_broadcast(self, payload):
        pass


class AmplifyingPrb(PrbProcess):
    """协同作恶进程：对同一实例的每个负载都发送 Echo 与 Ready"""

    def on_gossip(self, payload):
        inst = self._instance(payload.instance_id)
        if payload.digest in inst.candidates:
            return
        inst.candidates[payload.digest] = payload
        if inst.echo_sent is None:
            inst.echo_sent = payload.digest
        for dest in sorted(self.samples.echo_subscribers):
            self._send(dest, Echo(self.pid, inst.instance_id, payload.digest))
        for dest in self.samples.ready_targets():
            self._send(dest, Ready(self.pid, inst.instance_id, payload.digest))
        self._try_deliver(inst, payload.digest)


# ==================== 模拟结果 ====================
@dataclass
class SimResult:
    config: SimConfig
    trace: TraceLogger
    summary: Dict
    simulator: "Simulator"

    @property
    def digest(self) -> str:
        return self.trace.digest()


# ==================== 子网执行体 ====================
ACTOR_BASE = -1


class SubnetActor:
    """
    子网执行体：维护子网状态，构建、签名并经指定提交者提交证书
    """

    def __init__(self, sim: "Simulator", index: int, spec: SubnetSpec, signer: SubnetSigner,
                 genesis: SubnetState, submitter: TceProcess, rng: np.random.Generator):
        self.sim = sim
        self.index = index
        self.actor_id = ACTOR_BASE - index
        self.spec = spec
        self.signer = signer
        self.subnet_id = genesis.owner
        self.rng = rng
        self.submitter = submitter
        self.states: List[SubnetState] = [genesis]
        self.chain: List[Certificate] = []
        self.candidates: Dict[bytes, Tuple[Certificate, SubnetState, Dict[str, int], Dict[str, int]]] = {}
        self.burned: Dict[str, int] = {}
        self.minted: Dict[str, int] = {}
        self.flow: Dict[bytes, Tuple[Dict[str, int], Dict[str, int]]] = {}
        self.transfer_counts: Dict[bytes, int] = {}
        self.transfers = 0                   # 已采纳链上的本地 + 跨子网转账笔数
        self.waiting: Optional[int] = None
        self.stalled = False
        submitter.delivery_listeners.append(self.on_delivered)

    @property
    def state(self) -> SubnetState:
        return self.states[-1]

    @property
    def height(self) -> int:
        return self.state.height

    def accounts(self) -> List[str]:
        return [f"acct{j}" for j in range(self.spec.accounts)]

    # ---------- 批次 ----------
    def build_batch(self) -> List[Transaction]:
        """入站铸造在前，随后是随机本地转账 / 跨子网转账 / 合约调用"""
        spec = self.spec
        balances = self.state.balance_map()
        txs: List[Transaction] = []
        used: Set[bytes] = set()
        for dep in sorted(self.submitter.ledger.deps, key=lambda c: c.digest):
            for idx, message in enumerate(dep.xs_list):
                if message.target_subnet != self.subnet_id:
                    continue
                ref = xs_reference(dep, idx)
                if ref in self.state.received_log or ref in used:
                    continue
                used.add(ref)
                if isinstance(message, TransferAsset):
                    txs.append(InboundMint(ref, message.recipient, message.asset_id, message.amount))
                    key = (message.recipient, message.asset_id)
                    balances[key] = balances.get(key, 0) + message.amount
                else:
                    txs.append(InboundCall(ref, message.contract_addr, message.func_name))

        accounts = self.accounts()
        others = sorted(sid for sid in self.sim.registry.subnets if sid != self.subnet_id)
        for _ in range(spec.batch_size):
            funded = sorted(k for k, v in balances.items() if v > 0)
            if not funded:
                break
            sender, asset = funded[int(self.rng.integers(len(funded)))]
            amount = int(self.rng.integers(1, min(balances[(sender, asset)], 100) + 1))
            recipient = accounts[int(self.rng.integers(len(accounts)))]
            u = float(self.rng.random())
            if others and u < spec.xs_rate:
                target = others[int(self.rng.integers(len(others)))]
                txs.append(OutboundXS(sender, TransferAsset(target, asset, recipient, amount)))
                balances[(sender, asset)] -= amount
            elif others and u < spec.xs_rate + spec.call_rate:
                target = others[int(self.rng.integers(len(others)))]
                args = self.rng.bytes(4)
                txs.append(OutboundXS(sender, ContractCall(target, "contract0", "ping", args)))
            else:
                if recipient == sender:
                    recipient = accounts[(accounts.index(sender) + 1) % len(accounts)]
                txs.append(LocalTransfer(sender, recipient, asset, amount))
                balances[(sender, asset)] -= amount
                balances[(recipient, asset)] = balances.get((recipient, asset), 0) + amount
        return txs

    def _build(self, prev: SubnetState, txs: List[Transaction],
               misbehaviors: Sequence[Misbehavior] = ()) -> Tuple[Certificate, SubnetState]:
        cert, new_state = build_and_sign_certificate(self.signer, prev, txs, misbehaviors)
        burned: Dict[str, int] = {}
        minted: Dict[str, int] = {}
        for tx in txs:
            if isinstance(tx, OutboundXS) and isinstance(tx.message, TransferAsset):
                burned[tx.message.asset_id] = burned.get(tx.message.asset_id, 0) + tx.message.amount
            elif isinstance(tx, InboundMint):
                minted[tx.asset_id] = minted.get(tx.asset_id, 0) + tx.amount
        self.flow[cert.digest] = (burned, minted)
        self.transfer_counts[cert.digest] = sum(
            1 for tx in txs
            if isinstance(tx, LocalTransfer) or (isinstance(tx, OutboundXS) and isinstance(tx.message, TransferAsset))
        )
        self.candidates[cert.digest] = (cert, new_state, burned, minted)
        return cert, new_state

    def _signing_misbehaviors(self) -> List[Misbehavior]:
        return [Misbehavior(MisbehaviorKind.BAD_RESPONSE, b.signer)
                for b in self.sim.config.adversary.for_subnet(BadResponse, self.spec.name)]

    # ---------- 生命周期 ----------
    def on_timer(self, message):
        self.build_and_submit()

    def build_and_submit(self):
        slot = self.height + 1
        if slot > self.spec.certificates or self.stalled:
            return
        adversary = self.sim.config.adversary
        equivocation = next((b for b in adversary.for_subnet(Equivocate, self.spec.name) if b.slot == slot), None)
        bogus = next((b for b in adversary.for_subnet(BogusCert, self.spec.name) if b.slot == slot), None)
        txs = self.build_batch()
        cert, new_state = self._build(self.state, txs, self._signing_misbehaviors())
        self.sim.trace.log("sign", self.sim.now, subnet=self.subnet_id.hex(), slot=slot,
                           cert=cert.digest.hex(), epoch=self.signer.epoch)
        m = CertificateMessage(cert, tuple(self.submitter.ledger.deps))

        if bogus is not None:
            self.sim.inject_bogus(self, cert, bogus)
            self.stalled = True
            return
        if equivocation is not None:
            alt_txs = self.build_batch()
            alt, _ = self._build(self.state, alt_txs, self._signing_misbehaviors())
            m_alt = CertificateMessage(alt, m.deps)
            if m_alt.digest == m.digest:
                logger.warning(f"{self.spec.name} 双花批次相同，退化为诚实提交")
            else:
                self._adopt(cert, new_state)
                self.sim.equivocate(self, m, m_alt)
                self.submitter.ledger.deps = set()
                self.waiting = slot
                return
        try:
            self.submitter.submit(m)
        except SubmissionRejected as e:
            logger.warning(f"{self.spec.name} 提交被拒绝: {e}")
            self.stalled = True
            return
        self._adopt(cert, new_state)
        self.waiting = slot

    def _adopt(self, cert: Certificate, new_state: SubnetState):
        """采纳构建的证书（余额立即扣减，在途价值立即计入）"""
        burned, minted = self.flow[cert.digest]
        self.chain.append(cert)
        self.states.append(new_state)
        for asset, v in burned.items():
            self.burned[asset] = self.burned.get(asset, 0) + v
        for asset, v in minted.items():
            self.minted[asset] = self.minted.get(asset, 0) + v
        self.transfers += self.transfer_counts[cert.digest]
        self.sim.record_supply()

    def _unadopt_tip(self):
        cert = self.chain.pop()
        self.states.pop()
        burned, minted = self.flow[cert.digest]
        for asset, v in burned.items():
            self.burned[asset] -= v
        for asset, v in minted.items():
            self.minted[asset] -= v
        self.transfers -= self.transfer_counts[cert.digest]

    def on_delivered(self, process: TceProcess, m: CertificateMessage):
        cert = m.cert
        if cert.subnet_id != self.subnet_id or self.waiting is None:
            return
        slot = self.waiting
        if cert.prev_state_hash != self.states[slot - 1].commitment():
            return
        if cert != self.chain[slot - 1]:
            candidate = self.candidates.get(cert.digest)
            if candidate is None:
                return
            # 双花时交付的是另一张证书：切换采纳
            self._unadopt_tip()
            self._adopt(candidate[0], candidate[1])
        self.waiting = None
        for reorg in self.sim.config.adversary.for_subnet(Reorg, self.spec.name):
            if reorg.slot == slot:
                self.sim.inject_reorg(self, slot)
        if self.height < self.spec.certificates:
            self.sim.schedule(self.actor_id, self.spec.cert_interval, "build")

    def build_conflicting(self, slot: int) -> Certificate:
        """以 slot 的前状态构建与已采纳证书冲突的证书"""
        prev = self.states[slot - 1]
        for _ in range(8):
            txs = self.build_batch()
            cert, _ = build_and_sign_certificate(self.signer, prev, txs)
            if cert != self.chain[slot - 1]:
                return cert
        raise RuntimeError(f"could not build a conflicting certificate for slot {slot}")


# ==================== 模拟器 ====================
class Simulator:
    """
    离散事件模拟器

    也是各进程看到的 Transport：now / send / schedule。
    """

    def __init__(self, config: SimConfig, trace_path: Optional[str] = None):
        config.validate()
        self.config = config
        self.trace = TraceLogger(trace_path)
        self.registry = Registry()
        self.queue = EventQueue()
        self._now = 0.0
        self.processes: Dict[int, TceProcess] = {}
        self.actors: List[SubnetActor] = []
        self.byzantine: Set[int] = set()
        self.muted: Set[int] = set()
        self.rogues: List[int] = []
        self.gate_drops = 0
        self.events_processed = 0
        self.echo_by_payload: Dict[str, int] = {}
        self.keygen_reports: List[Dict] = []
        self.latency = LatencyModel.from_dict(config.latency, make_rng(config.seed, "latency"))
        self.sample_config = config.sample_config()
        self.gossip_config = config.gossip_config()
        self._delays = config.adversary.of_type(Delay)

    # ---------- Transport ----------
    @property
    def now(self) -> float:
        return self._now

    def send(self, sender: int, dest: int, message):
        delay = self.latency.draw()
        for d in self._delays:
            if sender in d.processes and d.start <= self._now < d.end:
                delay *= d.factor
        if isinstance(message, Echo):
            key = message.digest.hex()[:16]
            self.echo_by_payload[key] = self.echo_by_payload.get(key, 0) + 1
        if self.config.trace_messages:
            self.trace.log("msg", self._now, src=sender, dst=dest, kind=message.kind.value)
        self.queue.push(self._now + delay, dest, message)

    def schedule(self, pid: int, delay: float, message):
        self.queue.push(self._now + delay, pid, message)

    # ---------- 对手注入 ----------
    def inject_adversary(self, script: AdversaryScript):
        """在运行前替换对手脚本；引用不存在的实体时抛出 ConfigError"""
        if self.processes:
            raise ConfigError("adversary must be injected before the run starts")
        self.config = replace(self.config, adversary=script)
        self.config.validate()
        self._delays = script.of_type(Delay)

    def equivocate(self, actor: SubnetActor, m_a: CertificateMessage, m_b: CertificateMessage):
        """向互不相交的两半进程分别 gossip 两张冲突证书"""
        origin = actor.submitter
        peers = [p for p in self.registry.process_ids() if p != origin.pid]
        rng = make_rng(self.config.seed, "equivocate", actor.index, actor.height)
        order = sample_without_replacement(rng, peers, len(peers))
        half = len(order) // 2
        for i, peer in enumerate(order):
            origin.prb._send(peer, Gossip(origin.pid, m_a if i < half else m_b))
        self.trace.log("equivocate", self._now, subnet=actor.subnet_id.hex(), slot=actor.height,
                       prev=m_a.cert.prev_state_hash.hex(), certs=[m_a.cert.digest.hex(), m_b.cert.digest.hex()])
        logger.info(f"{actor.spec.name} 在高度 {actor.height} 双花: {m_a.cert!r} / {m_b.cert!r}")
        origin.prb.on_pb_receive(m_a)
        origin.prb.on_pb_receive(m_b)

    def inject_reorg(self, actor: SubnetActor, slot: int):
        cert = actor.build_conflicting(slot)
        m = CertificateMessage(cert, ())
        self.trace.log("reorg", self._now, subnet=actor.subnet_id.hex(), slot=slot, cert=cert.digest.hex())
        logger.info(f"{actor.spec.name} 对已交付高度 {slot} 发起重组 {cert!r}")
        actor.submitter.prb.prb_broadcast(m)

    def inject_bogus(self, actor: SubnetActor, cert: Certificate, behavior: BogusCert):
        bogus = malform_certificate(actor.signer, cert, behavior.kind)
        m = CertificateMessage(bogus, tuple(actor.submitter.ledger.deps))
        self.trace.log("bogus", self._now, subnet=actor.subnet_id.hex(), kind=behavior.kind,
                       cert=bogus.digest.hex(), msg=m.digest.hex()[:16])
        logger.info(f"{actor.spec.name} 提交畸形证书 ({behavior.kind}) {bogus!r}")
        actor.submitter.prb.prb_broadcast(m)

    # ---------- 准备阶段 ----------
    def _select_byzantine(self) -> Set[int]:
        config = self.config
        controlled = config.adversary.controlled_subnets()
        byzantine = {config.submitter_of(i) for i, s in enumerate(config.subnets) if s.name in controlled}
        honest_submitters = {config.submitter_of(i) for i, s in enumerate(config.subnets)
                             if s.name not in controlled}
        count = int(math.floor(config.byzantine_fraction * config.n))
        pool = [p for p in range(config.n) if p not in byzantine and p not in honest_submitters]
        extra = max(0, count - len(byzantine))
        rng = make_rng(config.seed, "byzantine")
        byzantine |= set(sample_without_replacement(rng, pool, min(extra, len(pool))))
        return byzantine

    def _select_muted(self) -> Set[int]:
        muted: Set[int] = set()
        honest_submitters = {self.config.submitter_of(i) for i in range(len(self.config.subnets))}
        for i, b in enumerate(self.config.adversary.of_type(Mute)):
            muted |= set(b.processes)
            if b.count:
                pool = [p for p in range(self.config.n)
                        if p not in muted and p not in self.byzantine and p not in honest_submitters]
                rng = make_rng(self.config.seed, "mute", i)
                muted |= set(sample_without_replacement(rng, pool, min(b.count, len(pool))))
        return muted - self.byzantine

    def _keygen(self, index: int, spec: SubnetSpec) -> SubnetSigner:
        config = self.config
        group = get_backend(config.backend)
        misbehaviors: List[Misbehavior] = []
        adversary = config.adversary
        for b in adversary.for_subnet(BadShare, spec.name):
            misbehaviors.append(Misbehavior(MisbehaviorKind.BAD_SHARE, b.dealer, b.target))
        for b in adversary.for_subnet(BadPoK, spec.name):
            misbehaviors.append(Misbehavior(MisbehaviorKind.BAD_POK, b.dealer))
        for b in adversary.for_subnet(BogusComplaint, spec.name):
            kind = MisbehaviorKind.FALSE_COMPLAINT if b.provable else MisbehaviorKind.BOGUS_COMPLAINT
            misbehaviors.append(Misbehavior(kind, b.accuser, b.accused))
        context = SessionContext(f"keygen/{spec.name}", 0, spec.name)
        floor = default_abort_floor(spec.t, spec.n, config.abort_floor_fraction)
        outcome = run_keygen(group, list(range(1, spec.n + 1)), spec.t, context,
                             make_rng(config.seed, "keygen", index), misbehaviors, floor)
        if outcome.aborted:
            raise KeygenAborted(f"keygen for {spec.name} aborted")
        report = {
            "subnet_name": spec.name,
            "group_key": outcome.group_key.hex(),
            "excluded": sorted(outcome.consensus_excluded),
            "consistent": outcome.consistent,
            "verdicts": [v.reason for v in outcome.verdicts],
        }
        self.keygen_reports.append(report)
        self.trace.log("keygen", 0.0, **report)
        return SubnetSigner.from_keygen(outcome, make_rng(config.seed, "signing", index), config.signer_count)

    def setup(self):
        """注册阶段：进程注册、子网 DKG 与创世登记、进程与执行体实例化"""
        config = self.config
        self.trace.log("config", 0.0, config=config.to_dict())
        for pid in range(config.n):
            self.registry.register_process(pid)
        self.byzantine = self._select_byzantine()
        self.muted = self._select_muted()

        signers = [self._keygen(i, spec) for i, spec in enumerate(config.subnets)]
        geneses: List[SubnetState] = []
        for spec, signer in zip(config.subnets, signers):
            owner = SubnetId.from_group_key(signer.group_key)
            balances = {(a, asset): spec.initial_balance
                        for a in [f"acct{j}" for j in range(spec.accounts)] for asset in spec.assets}
            genesis = SubnetState.genesis(owner, balances)
            self.registry.register_subnet(owner, genesis.commitment())
            geneses.append(genesis)
            self.trace.log("register", 0.0, subnet=owner.hex(), name=spec.name,
                           genesis=genesis.commitment().hex())

        subnet_of = {config.submitter_of(i): geneses[i].owner for i in range(len(config.subnets))}
        registry_ids = self.registry.process_ids()
        byz_cls = AmplifyingPrb if config.adversary.amplifies() else SilentPrb
        controlled = {config.submitter_of(i) for i, s in enumerate(config.subnets)
                      if s.name in config.adversary.controlled_subnets()}
        for pid in registry_ids:
            if pid in self.muted:
                prb_cls = SilentPrb
            elif pid in controlled:
                prb_cls = AmplifyingPrb
            elif pid in self.byzantine:
                prb_cls = byz_cls
            else:
                prb_cls = PrbProcess
            correct = prb_cls is PrbProcess
            self.processes[pid] = TceProcess(
                pid, self, registry_ids, self.registry.subnets, self.sample_config, self.gossip_config,
                make_rng(config.seed, "process", pid), subnet=subnet_of.get(pid),
                validate_at_prb=config.validate_at_prb, pending_gc_horizon=config.pending_gc_horizon,
                trace=self.trace if correct else None, audit_validity=config.audit_validity,
                prb_cls=prb_cls,
            )
        for i, spec in enumerate(config.subnets):
            actor = SubnetActor(self, i, spec, signers[i], geneses[i],
                                self.processes[config.submitter_of(i)], make_rng(config.seed, "actor", i))
            self.actors.append(actor)
        self.record_supply()

    def correct_ids(self) -> List[int]:
        return sorted(set(self.processes) - self.byzantine - self.muted)

    # ---------- 运行 ----------
    def run(self) -> SimResult:
        """
        执行注册、DKG、工作负载并排空事件队列（或到达 horizon）

        Returns:
            SimResult
        """
        self.setup()
        for pid in sorted(self.processes):
            self.processes[pid].start()
        for actor in self.actors:
            if actor.spec.certificates > 0:
                self.schedule(actor.actor_id, self.config.warmup, "build")
        for b in self.config.adversary.of_type(Rogue):
            self._launch_rogues(b)

        horizon = self.config.horizon
        while self.queue:
            if self.queue.peek_time() > horizon:
                break
            time, dest, message = self.queue.pop()
            self._now = time
            self.events_processed += 1
            self._dispatch(dest, message)

        self.trace.log("summary", self._now, **self.summary())
        self.trace.close()
        logger.info(f"模拟结束: t={self._now:.2f}, 事件 {self.events_processed}, 轨迹 {self.trace.event_count} 条")
        return SimResult(self.config, self.trace, self.trace.events[-1], self)

    def _dispatch(self, dest: int, message):
        if dest < 0:
            self.actors[ACTOR_BASE - dest].on_timer(message)
            return
        process = self.processes.get(dest)
        if process is None:
            return
        if not self.registry.gate(message.sender):
            self.gate_drops += 1
            return
        process.handle(message)

    def _launch_rogues(self, behavior: Rogue):
        """未注册进程广播来自未注册子网的证书"""
        if behavior.count == 0:
            return
        group = get_backend(self.config.backend)
        rng = make_rng(self.config.seed, "rogue")
        outcome = run_keygen(group, [1, 2, 3], 2, SessionContext("keygen/rogue"), rng)
        signer = SubnetSigner.from_keygen(outcome, rng)
        owner = SubnetId.from_group_key(signer.group_key)
        genesis = SubnetState.genesis(owner, {("acct0", "RELAY"): 10})
        cert, _ = build_and_sign_certificate(signer, genesis, [LocalTransfer("acct0", "acct1", "RELAY", 1)])
        m = CertificateMessage(cert, ())
        base = self.config.n
        peers = self.registry.process_ids()
        for k in range(behavior.count):
            rogue = base + len(self.rogues)
            self.rogues.append(rogue)
            for peer in sample_without_replacement(rng, peers, min(self.gossip_config.fanout, len(peers))):
                self.queue.push(self.config.warmup, peer, Gossip(rogue, m))
                self.queue.push(self.config.warmup, peer, Subscribe(rogue, SampleKind.ECHO))
                self.queue.push(self.config.warmup, peer, Echo(rogue, m.instance_id, m.digest))
        self.trace.log("rogue", self._now, count=behavior.count, cert=cert.digest.hex())

    # ---------- 审计记录 ----------
    def record_supply(self):
        """全局供给：各子网余额 + 在途（已销毁未铸造）"""
        totals: Dict[str, int] = {}
        for actor in self.actors:
            for (_, asset), v in actor.state.balances:
                totals[asset] = totals.get(asset, 0) + v
            for asset, v in actor.burned.items():
                totals[asset] = totals.get(asset, 0) + v
            for asset, v in actor.minted.items():
                totals[asset] = totals.get(asset, 0) - v
        if self.actors:
            self.trace.log("supply", self._now, totals=dict(sorted(totals.items())))

    def summary(self) -> Dict:
        correct = self.correct_ids()
        per_process = []
        for pid in correct:
            counts = self.processes[pid].message_counts()
            per_process.append([pid, counts["subscribe"], counts["gossip"], counts["echo"], counts["ready"]])
        return {
            "n": self.config.n,
            "seed": self.config.seed,
            "correct": correct,
            "byzantine": sorted(self.byzantine),
            "muted": sorted(self.muted),
            "rogues": list(self.rogues),
            "subnets": {a.subnet_id.hex(): a.spec.name for a in self.actors},
            "submitters": {a.subnet_id.hex(): a.submitter.pid for a in self.actors},
            "subnet_heights": {a.spec.name: a.height for a in self.actors},
            "transfers": sum(a.transfers for a in self.actors),
            "broadcasts": len(self.trace.events_by_type("broadcast")),
            "events": self.events_processed,
            "messages": per_process,
            "gate_drops": self.gate_drops,
            "pending_gc_count": sum(p.pending_gc_count for p in self.processes.values()),
            "pending_high_water": max((self.processes[p].pending_high_water for p in correct), default=0),
            "pending_final": {str(p): len(self.processes[p].ledger.pending) for p in correct
                              if self.processes[p].ledger.pending},
            "echo_by_payload": dict(sorted(self.echo_by_payload.items())),
            "keygen": self.keygen_reports,
            "end_time": round(self._now, 9),
        }


# ==================== 畸形证书 ====================
def malform_certificate(signer: SubnetSigner, cert: Certificate, kind: str) -> Certificate:
    """
    对证书做一处篡改并重新签名（签名有效，内在有效性无效）

    Args:
        kind: state_hash | proof | inclusion
    """
    if kind == "state_hash":
        changes = {"state_hash": StateCommitment(bytes(b ^ 0xFF for b in cert.state_hash.digest))}
    elif kind == "proof":
        batch = list(cert.proof.tx_batch)
        batch.append(LocalTransfer("acct0", "acct1", "RELAY", 1))
        changes = {"proof": replace(cert.proof, tx_batch=tuple(batch))}
    elif kind == "inclusion":
        fake = TransferAsset(cert.subnet_id, "RELAY", "acct0", 1)
        changes = {"xs_list": cert.xs_list + (fake,),
                   "proof_xs_list": cert.proof_xs_list + (MerklePath(0, ()),)}
    else:
        raise ValueError(f"kind must be one of {BOGUS_KINDS}, got {kind!r}")
    draft = replace(cert, **changes)
    payload = certificate_payload(draft.subnet_id, draft.prev_state_hash, draft.state_hash,
                                  draft.proof, draft.xs_list, draft.proof_xs_list)
    return replace(draft, signature=signer.sign(payload).signature)


def run_simulation(config: SimConfig, trace_path: Optional[str] = None) -> SimResult:
    """运行一次模拟并返回轨迹与汇总"""
    return Simulator(config, trace_path).run()


def inject_adversary(simulator: Simulator, script: AdversaryScript) -> Simulator:
    simulator.inject_adversary(script)
    return simulator
