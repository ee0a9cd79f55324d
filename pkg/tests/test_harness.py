#!/usr/bin/env python3
"""
Harness & CLI 单元测试

测试覆盖:
1. audit_trace: 合成轨迹上的各项违规计数与转账计数
2. MetricsSummary.merge: 与合并顺序无关
3. Scenario: 文档解析与错误
4. run_scenario / report_traces / sweep 参数校验
5. RunMetadataRecorder
6. 命令行退出码
"""

import json
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pandas as pd
import pytest

from config.settings import SCENARIO_DIR
from core.harness import (
    ASSERTIONS,
    MetricsSummary,
    Scenario,
    audit_trace,
    list_scenarios,
    report_traces,
    run_scenario,
    sweep_message_complexity,
    write_csv,
)
from core.run_metadata import RunMetadataRecorder, get_latest_run, list_runs
from core.simnet import ConfigError
from run import EXIT_FAILED, EXIT_OK, EXIT_USAGE, cli


# ==================== 合成轨迹 ====================

def deliver(t, pid, cert, prev, state, deps=(), subnet="S"):
    return {"type": "deliver", "t": t, "pid": pid, "cert": cert, "subnet": subnet,
            "prev": prev, "state": state, "deps": list(deps), "pending": 0}


def summary(correct=(0, 1), broadcasts=2, **extra):
    record = {"type": "summary", "t": 99.0, "correct": list(correct), "submitters": {"S": 0},
              "broadcasts": broadcasts, "messages": [[0, 2, 10, 4, 4], [1, 2, 8, 4, 4]],
              "echo_by_payload": {}, "gate_drops": 0, "pending_gc_count": 0, "pending_high_water": 1}
    record.update(extra)
    return record


def honest_events():
    return [
        {"type": "register", "t": 0.0, "subnet": "S", "genesis": "g0"},
        {"type": "supply", "t": 0.0, "totals": {"RELAY": 100}},
        {"type": "broadcast", "t": 1.0, "pid": 0, "cert": "c1", "subnet": "S", "msg": "m1"},
        deliver(2.0, 0, "c1", "g0", "s1"),
        deliver(3.0, 1, "c1", "g0", "s1"),
        {"type": "supply", "t": 3.5, "totals": {"RELAY": 100}},
        {"type": "broadcast", "t": 4.0, "pid": 0, "cert": "c2", "subnet": "S", "msg": "m2"},
        deliver(5.0, 0, "c2", "s1", "s2", deps=["c1"]),
        deliver(6.0, 1, "c2", "s1", "s2", deps=["c1"]),
        summary(),
    ]


class TestAuditTrace:
    """轨迹审计"""

    def test_honest_trace(self):
        m = audit_trace(honest_events())
        assert m.expected_deliveries == 4
        assert m.deliveries == 4
        assert m.full_delivery_runs == 1
        assert m.latencies == [1.0, 1.0, 2.0, 2.0]
        assert m.msg_mean == pytest.approx(8.5)
        assert m.msg_max == pytest.approx(9.0)
        for name in ("consistency_violations", "weak_causal_violations", "dep_violations",
                     "duplicate_deliveries", "integrity_violations", "conservation_violations"):
            assert getattr(m, name) == 0, name

    def test_missing_summary(self):
        with pytest.raises(ValueError, match="trace must end with a summary record"):
            audit_trace(honest_events()[:-1])

    def test_out_of_order_delivery(self):
        events = honest_events()
        events[4] = deliver(3.0, 1, "c2", "s1", "s2")
        events.pop(8)
        m = audit_trace(events)
        assert m.weak_causal_violations == 1
        assert m.deliveries == 3
        assert m.full_delivery_runs == 0

    def test_duplicate_and_missing_dep(self):
        events = honest_events()
        events.insert(4, deliver(2.5, 0, "c1", "g0", "s1"))
        events.insert(-1, deliver(7.0, 0, "c3", "s2", "s3", deps=["elsewhere"]))
        m = audit_trace(events)
        assert m.duplicate_deliveries == 1
        assert m.dep_violations == 1
        assert m.integrity_violations == 1

    def test_conflicting_slot(self):
        events = honest_events()
        events[4] = deliver(3.0, 1, "c1-fork", "g0", "s1x")
        m = audit_trace(events)
        assert m.consistency_violations == 1
        assert m.integrity_violations == 1

    def test_adversarial_subnet_not_held_to_integrity(self):
        events = honest_events()
        events[4] = deliver(3.0, 1, "c1-fork", "g0", "s1x")
        events[-1] = summary(correct=(1,), submitters={"S": 0})
        m = audit_trace(events)
        assert m.integrity_violations == 0

    def test_monotonicity_and_conservation(self):
        events = honest_events()
        events.insert(3, {"type": "valid", "t": 1.5, "pid": 0, "msg": "m1", "value": True})
        events.insert(4, {"type": "valid", "t": 1.6, "pid": 0, "msg": "m1", "value": False})
        events.insert(-1, {"type": "supply", "t": 8.0, "totals": {"RELAY": 101}})
        m = audit_trace(events)
        assert m.monotonicity_violations == 1
        assert m.conservation_violations == 1

    def test_transfer_count_threshold(self):
        """transfers 来自 summary；每次运行至少 500 笔才算达标"""
        check = ASSERTIONS["transfers_500"][1]
        events = honest_events()
        events[-1] = summary(transfers=499)
        short = audit_trace(events)
        assert short.transfers == 499
        assert not check(short)
        events[-1] = summary(transfers=612)
        enough = audit_trace(events)
        assert check(enough)
        merged = enough.merge(short)
        assert merged.transfers == 1111
        assert merged.transfers_min == 499
        assert merged.to_row()["transfers"] == 1111
        assert not check(merged)
        assert MetricsSummary().merge(enough).transfers_min == 612
        assert audit_trace(honest_events()).transfers == 0

    def test_bogus_and_reorg(self):
        events = honest_events()
        events.insert(-1, {"type": "reorg", "t": 6.5, "cert": "c2"})
        events.insert(-1, {"type": "bogus", "t": 6.6, "cert": "cb", "msg": "mb"})
        events[-1] = summary(echo_by_payload={"mb": 5, "m1": 40})
        m = audit_trace(events)
        assert m.reorg_deliveries == 1
        assert m.bogus_deliveries == 0
        assert m.bogus_echoes == 5


class TestMetricsMerge:
    """合并与顺序无关"""

    def test_merge_commutes(self):
        a = audit_trace(honest_events())
        events = honest_events()
        events[4] = deliver(3.0, 1, "c1-fork", "g0", "s1x")
        b = audit_trace(events)
        ab, ba = a.merge(b), b.merge(a)
        assert ab.to_row() == ba.to_row()
        assert ab.latencies == ba.latencies
        assert ab.runs == 2
        assert ab.consistency_violations == 1

    def test_empty_rates(self):
        m = MetricsSummary()
        assert m.delivery_rate == 1.0
        assert m.msg_mean == 0.0
        assert m.latency_stats()["p95"] == 0.0


class TestScenario:
    """场景文档"""

    def test_unknown_assertion(self):
        with pytest.raises(ConfigError, match="unknown assertions"):
            Scenario("x", assertions=["telepathy"])

    def test_reps_positive(self):
        with pytest.raises(ConfigError, match="reps must be >= 1"):
            Scenario("x", reps=0)

    def test_from_dict_errors(self):
        with pytest.raises(ConfigError, match="schema_version must be 1"):
            Scenario.from_dict({"schema_version": 3, "name": "x"})
        with pytest.raises(ConfigError, match="scenario must have a name"):
            Scenario.from_dict({"config": {}})
        with pytest.raises(ConfigError, match="unknown scenario keys"):
            Scenario.from_dict({"name": "x", "owner": "me"})
        with pytest.raises(ConfigError, match="n must be >= 3"):
            Scenario.from_dict({"name": "x", "config": {"n": 1}})

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot load scenario"):
            Scenario.load(str(tmp_path / "missing.json"))
        broken = tmp_path / "broken.json"
        broken.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="cannot load scenario"):
            Scenario.load(str(broken))
        listed = tmp_path / "list.json"
        listed.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="must be a JSON object"):
            Scenario.load(str(listed))

    def test_bundled_scenarios_load(self):
        entries = [e for e in list_scenarios(str(SCENARIO_DIR)) if e["source"] != "builtin"]
        assert {e["name"] for e in entries} >= {"honest", "doublespend", "causal", "mute"}
        assert not any(e["description"].startswith("无效") for e in entries)

    def test_roundtrip(self):
        scenario = Scenario.load(str(SCENARIO_DIR / "honest.json"))
        assert Scenario.from_dict(scenario.to_dict()) == scenario


class TestRunScenario:
    """小规模场景运行"""

    @pytest.fixture(scope="class")
    def tiny(self):
        return Scenario("tiny", config={"n": 12, "subnets": [
            {"name": "subnet-0", "certificates": 2, "batch_size": 3, "xs_rate": 0.0}]},
            assertions=["all_delivered", "consistency", "weak_causal", "integrity"], reps=2)

    def test_passes_and_is_reproducible(self, tiny):
        first = run_scenario(tiny, workers=2)
        second = run_scenario(tiny, workers=1)
        assert first.passed
        assert [r["seed"] for r in first.runs] == [1, 2]
        assert [r["digest"] for r in first.runs] == [r["digest"] for r in second.runs]
        assert first.metrics.to_row() == second.metrics.to_row()

    def test_traces_replayed(self, tiny, tmp_path):
        result = run_scenario(tiny, trace_dir=str(tmp_path))
        paths = [r["trace"] for r in result.runs]
        assert all(Path(p).exists() for p in paths)
        frame = report_traces(paths)
        assert len(frame) == 2
        assert (frame["delivery_rate"] == 1.0).all()
        assert (frame["t_end"] > 0).all()
        assert len(report_traces([str(tmp_path)])) == 2

    def test_write_csv(self, tiny, tmp_path):
        result = run_scenario(tiny, reps=1)
        path = write_csv([result.to_row()], str(tmp_path / "out" / "tiny.csv"))
        frame = pd.read_csv(path)
        assert frame.loc[0, "scenario"] == "tiny"
        assert bool(frame.loc[0, "passed"])


class TestSweep:
    """消息复杂度扫描"""

    def test_needs_three_values(self):
        with pytest.raises(ValueError, match="at least 3 distinct values"):
            sweep_message_complexity([16, 16, 32], reps=1)
        with pytest.raises(ValueError, match="reps must be >= 1"):
            sweep_message_complexity([16, 32, 64], reps=0)

    def test_small_sweep(self):
        report = sweep_message_complexity([16, 32, 64], reps=2, workers=2, control=False)
        frame = report.to_frame()
        assert list(frame["n"]) == [16, 32, 64]
        assert report.observed_ratio > 1.0
        assert report.control_ratio is None


class TestRunMetadata:
    """运行元信息"""

    def test_finalize_writes_file(self, tmp_path):
        recorder = RunMetadataRecorder("run-scenario tiny", 7, {"n": 12}, output_dir=str(tmp_path))
        assert "_run-scenario-tiny_" in recorder.run_id
        recorder.record_trace(7, "ab" * 32, "trace.jsonl.gz")
        recorder.add_artifact("trace.jsonl.gz")
        recorder.finalize(True, {"delivery_rate": 1.0})
        data = json.loads(recorder.filepath.read_text(encoding="utf-8"))
        assert data["seed"] == 7
        assert data["passed"] is True
        assert data["trace_digests"] == {"7": "ab" * 32}
        assert data["artifacts"] == ["trace.jsonl.gz"]
        assert list_runs(str(tmp_path))[0]["run_id"] == recorder.run_id
        assert get_latest_run(str(tmp_path))["command"] == "run-scenario tiny"

    def test_filter_by_command(self, tmp_path):
        RunMetadataRecorder("sweep", 1, output_dir=str(tmp_path)).finalize(True)
        RunMetadataRecorder("run-scenario honest", 1, output_dir=str(tmp_path)).finalize(False)
        (tmp_path / "broken.json").write_text("{", encoding="utf-8")
        assert len(list_runs(str(tmp_path))) == 2
        assert [r["command"] for r in list_runs(str(tmp_path), command="run-scenario")] == ["run-scenario honest"]
        assert get_latest_run(str(tmp_path), command="acceptance") is None


class TestCli:
    """命令行退出码"""

    def test_no_command(self):
        assert cli([]) == EXIT_USAGE

    def test_unknown_flag(self):
        assert cli(["--frobnicate"]) == EXIT_USAGE

    def test_keygen_demo(self, tmp_path):
        transcript = tmp_path / "dkg.jsonl"
        assert cli(["keygen-demo", "--t", "2", "--n", "3", "--transcript", str(transcript)]) == EXIT_OK
        assert transcript.exists()

    def test_keygen_demo_inspection_backend(self):
        assert cli(["--backend", "inspection", "keygen-demo"]) == EXIT_OK

    def test_sign_demo_with_bad_response(self):
        assert cli(["sign-demo", "--t", "2", "--n", "4", "--bad-response", "2"]) == EXIT_OK

    def test_make_and_verify_cert(self, tmp_path):
        path = tmp_path / "demo.cert"
        assert cli(["make-cert", str(path)]) == EXIT_OK
        assert cli(["verify-cert", str(path), "--json"]) == EXIT_OK
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0x01
        flipped = tmp_path / "flipped.cert"
        flipped.write_bytes(bytes(data))
        assert cli(["verify-cert", str(flipped)]) == EXIT_FAILED

    def test_bad_scenario_file(self, tmp_path):
        assert cli(["run-scenario", str(tmp_path / "nope.json")]) == EXIT_USAGE

    def test_bad_sweep_values(self):
        assert cli(["sweep", "--n", "10,x"]) == EXIT_USAGE

    def test_list_scenarios(self):
        assert cli(["list-scenarios"]) == EXIT_OK

    def test_report(self, tmp_path):
        scenario = tmp_path / "small.json"
        scenario.write_text(json.dumps({
            "schema_version": 1, "name": "small", "assertions": ["all_delivered"],
            "config": {"n": 10, "subnets": [{"name": "subnet-0", "certificates": 1, "xs_rate": 0.0}]},
        }), encoding="utf-8")
        traces = tmp_path / "traces"
        assert cli(["--seed", "3", "run-scenario", str(scenario), "--trace-dir", str(traces)]) == EXIT_OK
        files = sorted(str(p) for p in traces.glob("*.jsonl.gz"))
        assert len(files) == 1
        assert cli(["report", *files, "--csv", str(tmp_path / "report.csv")]) == EXIT_OK
        assert cli(["report", str(traces)]) == EXIT_OK


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
