#!/usr/bin/env python3
"""
WCPRB 单元测试

测试覆盖:
1. CertificateMessage: 依赖去重排序、按摘要相等、编解码
2. ProcessLedger: 链尖推进、槽位占用
3. 谓词: valid_deps / linkage / valid / valid_prime 及单调性
4. TceProcess: 源端拒绝、gossip 门、pending 不动点交付、入站 deps、孤立条目回收
"""

import sys
from dataclasses import replace
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from core.certificate import (
    LocalTransfer,
    OutboundXS,
    SubnetId,
    SubnetState,
    TransferAsset,
    build_and_sign_certificate,
    valid_cert,
)
from core.group import SECP256K1
from core.ice_frost import SessionContext, SubnetSigner, run_keygen
from core.prb import GossipConfig, SampleConfig
from core.randomness import make_rng
from core.simnet import malform_certificate
from core.wcprb import (
    CertificateMessage,
    GcTick,
    ProcessLedger,
    SubmissionRejected,
    TceProcess,
    linkage,
    tce_state,
    valid,
    valid_deps,
    valid_prime,
)


# ==================== 夹具 ====================

class ManualTransport:
    """记录发送；时间由测试推进"""

    def __init__(self):
        self.time = 0.0
        self.sent = []
        self.scheduled = []

    @property
    def now(self) -> float:
        return self.time

    def send(self, sender, dest, message):
        self.sent.append((sender, dest, message))

    def schedule(self, pid, delay, message):
        self.scheduled.append((self.time + delay, pid, message))


def make_signer(label: str) -> SubnetSigner:
    rng = make_rng(5, "wcprb-tests", label)
    outcome = run_keygen(SECP256K1, [1, 2, 3], 2, SessionContext(label), rng)
    return SubnetSigner.from_keygen(outcome, rng)


@pytest.fixture(scope="module")
def chain():
    """子网 A 的三张证书 (a1 → a2) 与 a1 的双发版本 a1x，以及发往 B 的 a_xs"""
    signer_a, signer_b = make_signer("subnet-a"), make_signer("subnet-b")
    id_a = SubnetId.from_group_key(signer_a.group_key)
    id_b = SubnetId.from_group_key(signer_b.group_key)
    genesis_a = SubnetState.genesis(id_a, {("alice", "RELAY"): 100})
    genesis_b = SubnetState.genesis(id_b, {("bob", "RELAY"): 50})
    a1, s1 = build_and_sign_certificate(signer_a, genesis_a, [LocalTransfer("alice", "carol", "RELAY", 10)])
    a2, s2 = build_and_sign_certificate(signer_a, s1, [LocalTransfer("carol", "alice", "RELAY", 5)])
    a1x, _ = build_and_sign_certificate(signer_a, genesis_a, [LocalTransfer("alice", "dave", "RELAY", 10)])
    a_xs, _ = build_and_sign_certificate(signer_a, s2, [OutboundXS("alice", TransferAsset(id_b, "RELAY", "bob", 3))])
    b1, _ = build_and_sign_certificate(signer_b, genesis_b, [LocalTransfer("bob", "erin", "RELAY", 1)])
    return {
        "id_a": id_a, "id_b": id_b,
        "genesis": {id_a: genesis_a.commitment(), id_b: genesis_b.commitment()},
        "a1": a1, "a2": a2, "a1x": a1x, "a_xs": a_xs, "b1": b1,
    }


def make_process(chain, subnet=None, validate_at_prb=False, horizon=50.0, pid=0):
    transport = ManualTransport()
    proc = TceProcess(pid, transport, list(range(10)), chain["genesis"], SampleConfig(4, 4, 4, 2, 1, 2),
                      GossipConfig(2), make_rng(1, "tce", pid), subnet=subnet,
                      validate_at_prb=validate_at_prb, pending_gc_horizon=horizon)
    proc.start()
    return proc


class TestCertificateMessage:
    """WCPRB 负载"""

    def test_deps_sorted_and_deduplicated(self, chain):
        m = CertificateMessage(chain["b1"], (chain["a2"], chain["a1"], chain["a2"]))
        assert len(m.deps) == 2
        assert [d.digest for d in m.deps] == sorted(d.digest for d in m.deps)

    def test_equality_ignores_dep_order(self, chain):
        left = CertificateMessage(chain["b1"], (chain["a1"], chain["a2"]))
        right = CertificateMessage(chain["b1"], (chain["a2"], chain["a1"]))
        assert left == right
        assert len({left, right}) == 1
        assert left != CertificateMessage(chain["b1"])

    def test_decode(self, chain):
        m = CertificateMessage(chain["b1"], (chain["a_xs"],))
        decoded = CertificateMessage.decode(m.encode())
        assert decoded == m
        assert decoded.instance_id == chain["b1"].slot()


class TestLedger:
    """进程本地账本"""

    def test_tip_starts_at_genesis(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        assert ledger.tip(chain["id_a"]) == chain["a1"].prev_state_hash
        assert ledger.tip(SubnetId.from_group_key(SECP256K1.base_exp(99))) is None

    def test_file_advances_tip(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        assert ledger.file(chain["a1"])
        assert not ledger.file(chain["a1"])
        assert ledger.tip(chain["id_a"]) == chain["a1"].state_hash
        assert ledger.history[chain["id_a"]] == [chain["a1"]]

    def test_slot_taken_by_other(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        ledger.file(chain["a1"])
        assert ledger.slot_taken_by_other(chain["a1x"])
        assert not ledger.slot_taken_by_other(chain["a1"])


class TestPredicates:
    """Valid 谓词"""

    def test_valid_deps(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        assert valid_deps(ledger, [])
        assert not valid_deps(ledger, [chain["a1"]])
        ledger.file(chain["a1"])
        assert valid_deps(ledger, [chain["a1"]])

    def test_linkage_follows_tip(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        assert linkage(ledger, chain["a1"])
        assert not linkage(ledger, chain["a2"])
        ledger.file(chain["a1"])
        assert linkage(ledger, chain["a2"])
        assert not linkage(ledger, chain["a1x"])

    def test_valid_is_monotone(self, chain):
        """一旦为真，后续交付不会使其变假"""
        ledger = ProcessLedger(chain["genesis"])
        m1 = CertificateMessage(chain["a1"])
        assert valid(ledger, m1)
        ledger.file(chain["a1"])
        ledger.file(chain["a2"])
        ledger.file(chain["b1"])
        assert valid(ledger, m1)

    def test_conflicting_sibling_stays_invalid(self, chain):
        """同一前状态的两张证书各自 valid_cert；归档其一后另一张永不 Valid"""
        a1, a1x = chain["a1"], chain["a1x"]
        assert valid_cert(a1) and valid_cert(a1x)
        assert a1.slot() == a1x.slot()
        ledger = ProcessLedger(chain["genesis"])
        assert valid(ledger, CertificateMessage(a1x))
        ledger.file(a1)
        assert not valid(ledger, CertificateMessage(a1x))
        ledger.file(chain["a2"])
        ledger.file(chain["b1"])
        assert not valid(ledger, CertificateMessage(a1x))
        assert not valid_prime(ledger, CertificateMessage(a1x))

    def test_valid_prime_skips_cert_check(self, chain):
        ledger = ProcessLedger(chain["genesis"])
        m = CertificateMessage(chain["b1"], (chain["a1"],))
        assert not valid(ledger, m)
        assert not valid_prime(ledger, m)
        ledger.file(chain["a1"])
        assert valid(ledger, m) and valid_prime(ledger, m)


class TestTceProcess:
    """TCE 进程"""

    def test_submit_and_source_rejection(self, chain):
        proc = make_process(chain, subnet=chain["id_a"])
        proc.ledger.deps = {chain["b1"]}
        with pytest.raises(SubmissionRejected, match="is not valid at process 0"):
            proc.submit(CertificateMessage(chain["a2"]))
        assert proc.ledger.deps == {chain["b1"]}
        assert proc.rejected_count == 1
        proc.ledger.file(chain["b1"])
        proc.submit(CertificateMessage(chain["a1"], (chain["b1"],)))
        assert proc.ledger.deps == set()
        assert any(msg.kind.value == "gossip" for _, _, msg in proc.transport.sent)

    def test_gossip_gate(self, chain):
        proc = make_process(chain)
        assert proc.gossip_gate(CertificateMessage(chain["a1"]))
        assert not proc.gossip_gate("not a message")
        stranger = make_process({**chain, "genesis": {chain["id_b"]: chain["genesis"][chain["id_b"]]}})
        assert not stranger.gossip_gate(CertificateMessage(chain["a1"]))

    def test_gate_rejects_bad_signature(self, chain):
        proc = make_process(chain)
        forged = replace(chain["a1"], signature=chain["a2"].signature)
        assert not proc.gossip_gate(CertificateMessage(forged))
        assert not proc.gossip_gate(CertificateMessage(chain["b1"], (forged,)))

    def test_gate_checks_validity_when_enabled(self, chain):
        signer = make_signer("subnet-a")
        bogus = malform_certificate(signer, chain["a1"], "state_hash")
        assert not make_process(chain, validate_at_prb=True).gossip_gate(CertificateMessage(bogus))
        assert make_process(chain, validate_at_prb=False).gossip_gate(CertificateMessage(bogus))

    def test_pending_fixed_point(self, chain):
        """先到的后继证书在前驱交付后一并交付，顺序保持链序"""
        proc = make_process(chain)
        proc.on_prb_deliver(CertificateMessage(chain["a2"]))
        assert len(proc.ledger.pending) == 1
        proc.on_prb_deliver(CertificateMessage(chain["a1"]))
        assert proc.ledger.pending == {}
        assert proc.ledger.history[chain["id_a"]] == [chain["a1"], chain["a2"]]
        assert proc.pending_high_water == 2

    def test_inbound_certificate_added_to_deps(self, chain):
        proc = make_process(chain, subnet=chain["id_b"])
        for name in ("a1", "a2", "a_xs"):
            proc.on_prb_deliver(CertificateMessage(chain[name]))
        assert proc.ledger.deps == {chain["a_xs"]}
        assert proc.delivered() == {chain["a1"], chain["a2"], chain["a_xs"]}

    def test_orphan_collection(self, chain):
        proc = make_process(chain, horizon=10.0)
        proc.on_prb_deliver(CertificateMessage(chain["a1"]))
        proc.on_prb_deliver(CertificateMessage(chain["a1x"]))
        assert len(proc.ledger.pending) == 1
        assert any(isinstance(msg, GcTick) for _, _, msg in proc.transport.scheduled)
        proc.transport.time = 10.0
        proc.handle(GcTick(0))
        assert proc.ledger.pending == {}
        assert proc.pending_gc_count == 1
        assert chain["a1x"] not in proc.delivered()

    def test_tce_state_union(self, chain):
        p1, p2 = make_process(chain, pid=1), make_process(chain, pid=2)
        p1.on_prb_deliver(CertificateMessage(chain["a1"]))
        p2.on_prb_deliver(CertificateMessage(chain["b1"]))
        assert tce_state([p1, p2]) == {chain["a1"], chain["b1"]}


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
