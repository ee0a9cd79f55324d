#!/usr/bin/env python3
"""
Simulator 单元测试

测试覆盖:
1. 配置校验与 JSON 文档解析
2. 注册表、延迟模型、事件队列
3. 确定性：同一配置轨迹逐字节相同
4. 诚实运行：全员交付、弱因果序、资产守恒、转账计数、合约调用送达
5. 对手脚本：双花、重组、畸形证书、静默、延迟、未注册节点、DKG/签名作恶
"""

import math
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from config.settings import validate_settings
from core.certificate import ContractCall, xs_reference
from core.harness import audit_trace
from core.simnet import (
    AdversaryScript,
    BadResponse,
    BadShare,
    BogusCert,
    ConfigError,
    Delay,
    Equivocate,
    EventQueue,
    LatencyModel,
    Mute,
    RegistrationError,
    Registry,
    Reorg,
    Rogue,
    SimConfig,
    Simulator,
    SubnetSpec,
    malform_certificate,
    run_simulation,
)
from core.trace import TraceReplayer


def small_config(n: int = 16, seed: int = 1, subnets=None, behaviors=(), **kwargs) -> SimConfig:
    if subnets is None:
        subnets = [SubnetSpec("subnet-0", certificates=2, batch_size=3, xs_rate=0.0)]
    return SimConfig(n=n, seed=seed, subnets=subnets, adversary=AdversaryScript(list(behaviors)), **kwargs)


def two_subnets(certificates: int = 2, xs_rate: float = 0.5):
    return [SubnetSpec("subnet-0", certificates=certificates, batch_size=3, xs_rate=xs_rate),
            SubnetSpec("subnet-1", certificates=certificates, batch_size=3, xs_rate=xs_rate)]


def delivered_certs(result, pid):
    return [e["cert"] for e in result.trace.events_by_type("deliver") if e["pid"] == pid]


class TestConfigValidation:
    """配置校验在任何事件执行前进行"""

    @pytest.mark.parametrize("kwargs,message", [
        ({"n": 2}, "n must be >= 3"),
        ({"byzantine_fraction": 0.34}, r"byzantine_fraction must be in \[0, 1/3\)"),
        ({"subnets": []}, "at least one subnet is required"),
        ({"subnets": [SubnetSpec("a"), SubnetSpec("a", submitter=1)]}, "subnet names must be unique"),
        ({"subnets": [SubnetSpec("a", submitter=1), SubnetSpec("b", submitter=1)]}, "submitters must be distinct"),
        ({"horizon": 0}, "horizon must be positive"),
        ({"backend": "ed25519"}, "backend must be one of"),
    ])
    def test_invalid_values(self, kwargs, message):
        with pytest.raises(ConfigError, match=message):
            SimConfig(**kwargs).validate()

    @pytest.mark.parametrize("behavior,message", [
        (Equivocate("subnet-0", slot=5), r"slot must be in \[1, 2\]"),
        (BogusCert("subnet-0", kind="garbage"), "bogus cert kind must be one of"),
        (Reorg("nowhere"), "references unknown subnet"),
        (BadShare("subnet-0", dealer=9), r"dealer must be in \[1, 3\]"),
        (Mute(processes=(99,)), r"process id must be in \[0, 16\)"),
    ])
    def test_invalid_adversary(self, behavior, message):
        with pytest.raises(ConfigError, match=message):
            small_config(behaviors=[behavior]).validate()

    def test_default_settings_valid(self):
        assert validate_settings() == []
        assert SimConfig.from_dict({}).n == SimConfig().n

    def test_from_dict_rejects_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version must be 1"):
            SimConfig.from_dict({"schema_version": 2})

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            SimConfig.from_dict({"n": 10, "colour": "blue"})
        with pytest.raises(ConfigError, match="unknown subnet keys"):
            SimConfig.from_dict({"subnets": [{"name": "a", "size": 3}]})

    def test_unknown_behavior(self):
        with pytest.raises(ConfigError, match="unknown adversary behavior type"):
            AdversaryScript.from_list([{"type": "teleport"}])
        with pytest.raises(ConfigError, match="unknown keys for mute"):
            AdversaryScript.from_list([{"type": "mute", "volume": 3}])

    def test_document_roundtrip(self):
        doc = {
            "n": 20,
            "subnets": [{"name": "alpha", "certificates": 2, "assets": ["RELAY", "ETH"]}],
            "adversary": [{"type": "delay", "processes": [3, 4], "factor": 2.0, "end": None},
                          {"type": "mute", "count": 2}],
        }
        config = SimConfig.from_dict(doc)
        assert config.subnets[0].assets == ("RELAY", "ETH")
        assert config.adversary.of_type(Delay)[0].end == math.inf
        assert SimConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()


class TestInfrastructure:
    """注册表、延迟模型与事件队列"""

    def test_registry(self):
        registry = Registry()
        registry.register_process(3)
        with pytest.raises(RegistrationError, match="already registered"):
            registry.register_process(3)
        assert registry.gate(3)
        assert not registry.gate(4)

    def test_latency_families(self):
        rng = np.random.default_rng(1)
        assert LatencyModel("constant", rng, median=2.0).draw() == 2.0
        draws = [LatencyModel("uniform", rng, low=1.0, high=2.0).draw() for _ in range(50)]
        assert all(1.0 <= d <= 2.0 for d in draws)
        with pytest.raises(ValueError, match="latency family must be"):
            LatencyModel("pareto", rng)
        with pytest.raises(ValueError, match="median must be positive"):
            LatencyModel("lognormal", rng, median=0)

    def test_event_queue_ties_fifo(self):
        queue = EventQueue()
        queue.push(1.0, 0, "first")
        queue.push(0.5, 1, "early")
        queue.push(1.0, 2, "second")
        assert [queue.pop()[2] for _ in range(3)] == ["early", "first", "second"]
        assert queue.peek_time() is None

    def test_inject_after_start_rejected(self):
        sim = Simulator(small_config(n=8))
        sim.run()
        with pytest.raises(ConfigError, match="adversary must be injected before the run starts"):
            sim.inject_adversary(AdversaryScript([Mute(count=1)]))

    def test_malform_unknown_kind(self):
        result = run_simulation(small_config(n=8))
        actor = result.simulator.actors[0]
        with pytest.raises(ValueError, match="kind must be one of"):
            malform_certificate(actor.signer, actor.chain[0], "signature")


class TestDeterminism:
    """种子完全决定运行"""

    def test_same_seed_same_trace(self):
        a = run_simulation(small_config(seed=7, subnets=two_subnets()))
        b = run_simulation(small_config(seed=7, subnets=two_subnets()))
        assert a.digest == b.digest

    def test_different_seed_differs(self):
        a = run_simulation(small_config(seed=7))
        b = run_simulation(small_config(seed=8))
        assert a.digest != b.digest

    def test_trace_file(self, tmp_path):
        path = tmp_path / "run.jsonl.gz"
        result = run_simulation(small_config(seed=3), trace_path=str(path))
        replayer = TraceReplayer(str(path))
        replayed = list(replayer.replay())
        assert len(replayed) == result.trace.event_count
        assert replayed[-1]["type"] == "summary"
        assert len(replayer.get_events_by_type("deliver")) == len(result.trace.events_by_type("deliver"))


class TestHonestRun:
    """诚实网络"""

    @pytest.fixture(scope="class")
    def result(self):
        return run_simulation(small_config(n=20, seed=11, subnets=two_subnets(certificates=3, xs_rate=0.6)))

    def test_everyone_delivers_everything(self, result):
        m = audit_trace(result.trace.events)
        assert m.expected_deliveries == 6 * 20
        assert m.delivery_rate == 1.0
        assert result.summary["subnet_heights"] == {"subnet-0": 3, "subnet-1": 3}

    def test_safety_properties(self, result):
        m = audit_trace(result.trace.events)
        assert m.consistency_violations == 0
        assert m.weak_causal_violations == 0
        assert m.dep_violations == 0
        assert m.duplicate_deliveries == 0
        assert m.integrity_violations == 0
        assert m.monotonicity_violations == 0
        assert m.conservation_violations == 0

    def test_chain_order_per_process(self, result):
        """每个进程按链序交付同一子网的证书"""
        actor = result.simulator.actors[0]
        chain = [c.digest.hex() for c in actor.chain]
        for pid in result.summary["correct"]:
            mine = [c for c in delivered_certs(result, pid) if c in chain]
            assert mine == chain

    def test_summary_fields(self, result):
        summary = result.summary
        assert summary["correct"] == list(range(20))
        assert summary["broadcasts"] == 6
        assert summary["gate_drops"] == 0
        assert len(summary["keygen"]) == 2

    def test_transfer_count(self, result):
        """无合约调用且账户充足：每个批次槽位都是一笔转账"""
        assert result.summary["transfers"] == 2 * 3 * 3
        assert sum(a.transfers for a in result.simulator.actors) == 18
        assert audit_trace(result.trace.events).transfers == 18


class TestContractCalls:
    """跨子网合约调用：源端不销毁，目标端以 InboundCall 记入 received_log"""

    @pytest.fixture(scope="class")
    def result(self):
        subnets = [SubnetSpec(f"subnet-{i}", certificates=4, batch_size=2, xs_rate=0.0, call_rate=1.0)
                   for i in range(2)]
        return run_simulation(small_config(n=16, seed=4, subnets=subnets))

    def test_no_transfers_no_value_moved(self, result):
        assert result.summary["transfers"] == 0
        for actor in result.simulator.actors:
            assert actor.state.balance_map() == actor.states[0].balance_map()
            assert actor.burned == {} and actor.minted == {}
        assert audit_trace(result.trace.events).conservation_violations == 0

    def test_calls_applied_at_target(self, result):
        first, second = result.simulator.actors
        received = 0
        for actor, source in ((first, second), (second, first)):
            sent = {xs_reference(cert, idx)
                    for cert in source.chain for idx, message in enumerate(cert.xs_list)
                    if isinstance(message, ContractCall) and message.target_subnet == actor.subnet_id}
            assert actor.state.received_log <= sent
            received += len(actor.state.received_log)
        assert received > 0


class TestAdversaries:
    """脚本化对手"""

    def test_equivocation_is_consistent(self):
        config = small_config(n=60, seed=5, byzantine_fraction=0.1,
                              behaviors=[Equivocate("subnet-0", slot=1)])
        result = run_simulation(config)
        assert len(result.summary["byzantine"]) == 6
        assert result.trace.events_by_type("equivocate")
        m = audit_trace(result.trace.events)
        assert m.consistency_violations == 0
        assert m.duplicate_deliveries == 0

    def test_reorg_never_delivered(self):
        config = small_config(n=24, seed=2, subnets=two_subnets(), behaviors=[Reorg("subnet-0", slot=1)])
        result = run_simulation(config)
        assert result.trace.events_by_type("reorg")
        m = audit_trace(result.trace.events)
        assert m.reorg_deliveries == 0
        assert m.consistency_violations == 0

    @pytest.mark.parametrize("kind", ["state_hash", "proof", "inclusion"])
    def test_bogus_never_delivered(self, kind):
        config = small_config(n=16, seed=3, behaviors=[BogusCert("subnet-0", slot=1, kind=kind)])
        result = run_simulation(config)
        m = audit_trace(result.trace.events)
        assert m.bogus_deliveries == 0
        assert result.summary["subnet_heights"]["subnet-0"] == 0

    def test_bogus_gated_at_prb(self):
        config = small_config(n=16, seed=3, validate_at_prb=True, behaviors=[BogusCert("subnet-0", slot=1)])
        m = audit_trace(run_simulation(config).trace.events)
        assert m.bogus_deliveries == 0
        assert m.bogus_echoes == 0

    def test_muted_processes_do_not_block(self):
        config = small_config(n=40, seed=4, behaviors=[Mute(processes=(5, 6, 7))])
        result = run_simulation(config)
        assert result.summary["muted"] == [5, 6, 7]
        assert 5 not in result.summary["correct"]
        assert audit_trace(result.trace.events).delivery_rate == 1.0

    def test_delayed_processes_still_deliver(self):
        config = small_config(n=20, seed=6, behaviors=[Delay(processes=(3, 4), factor=10.0)])
        result = run_simulation(config)
        assert audit_trace(result.trace.events).delivery_rate == 1.0

    def test_rogues_dropped_at_gate(self):
        config = small_config(n=12, seed=8, behaviors=[Rogue(count=2)])
        result = run_simulation(config)
        assert result.summary["rogues"] == [12, 13]
        assert result.summary["gate_drops"] > 0
        rogue_cert = result.trace.events_by_type("rogue")[0]["cert"]
        assert all(e["cert"] != rogue_cert for e in result.trace.events_by_type("deliver"))

    def test_dkg_misbehavior_excluded(self):
        subnets = [SubnetSpec("subnet-0", t=3, n=5, certificates=1, batch_size=2, xs_rate=0.0)]
        config = small_config(n=10, seed=9, subnets=subnets, behaviors=[BadShare("subnet-0", dealer=2, target=4)])
        result = run_simulation(config)
        assert result.summary["keygen"][0]["excluded"] == [2]
        assert audit_trace(result.trace.events).delivery_rate == 1.0

    def test_bad_response_retried(self):
        subnets = [SubnetSpec("subnet-0", t=2, n=4, certificates=2, batch_size=2, xs_rate=0.0)]
        config = small_config(n=10, seed=10, subnets=subnets, behaviors=[BadResponse("subnet-0", signer=1)])
        result = run_simulation(config)
        assert result.summary["subnet_heights"]["subnet-0"] == 2


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
