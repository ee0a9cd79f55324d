#!/usr/bin/env python3
"""
ICE-FROST 单元测试

测试覆盖:
1. 诚实密钥生成: Y = Π φ_i0，Y_i = g^{s_i}，所有人一致
2. 作恶识别: 错误份额 / 错误 PoK / 无效投诉 / 诬告 → 排除正确的一方
3. 转录本重放: 从 JSONL 重载后裁决结论相同
4. 门限签名: t 子集签名有效，不足门限失败，作恶响应被识别后重试
5. nonce 一次性
6. 份额刷新: Y 不变、epoch 递增、成员变更
"""

import itertools
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest
from hypothesis import given, settings, strategies as st

from core.codec import Reader
from core.group import INSPECTION, SECP256K1, lagrange_coeff
from core.ice_frost import (
    BulletinBoard,
    DealingMode,
    KeygenAborted,
    KeygenSession,
    Misbehavior,
    MisbehaviorKind,
    NonceReuseError,
    SessionContext,
    SigningAborted,
    SigningSession,
    SubnetSigner,
    ThresholdSignature,
    adjudicate_complaint,
    default_abort_floor,
    refresh_shares,
    run_keygen,
    threshold_sign,
    verify_signature,
)
from core.randomness import make_rng
from core.trace import TraceReplayer, write_jsonl


# ==================== 辅助函数 ====================

def keygen(t: int, n: int, seed: int = 1, misbehaviors=(), group=SECP256K1, label: str = "test"):
    rng = make_rng(seed, "keygen", label)
    return run_keygen(group, list(range(1, n + 1)), t, SessionContext(f"test/{label}"), rng, misbehaviors), rng


@pytest.fixture
def outcome_2_of_3():
    outcome, rng = keygen(2, 3)
    return outcome, rng


class TestHonestKeygen:
    """诚实密钥生成"""

    def test_group_key_consistent(self, outcome_2_of_3):
        outcome, _ = outcome_2_of_3
        assert not outcome.aborted
        assert outcome.consistent
        assert outcome.consensus_excluded == frozenset()
        assert sorted(outcome.key_material) == [1, 2, 3]
        keys = {km.group_key for km in outcome.key_material.values()}
        assert keys == {outcome.group_key}

    def test_group_key_is_product_of_constants(self, outcome_2_of_3):
        outcome, _ = outcome_2_of_3
        constants = [p.commitments[0] for p in outcome.transcript.round1.values()]
        assert SECP256K1.product(constants) == outcome.group_key

    def test_verification_shares(self, outcome_2_of_3):
        outcome, _ = outcome_2_of_3
        for i, km in outcome.key_material.items():
            assert km.verification_share == SECP256K1.base_exp(km.share)
            assert km.verification_shares[i] == km.verification_share

    def test_shares_interpolate_to_secret(self, outcome_2_of_3):
        """任意 t 个份额在指数上插值得到 Y"""
        outcome, _ = outcome_2_of_3
        holders = outcome.key_material
        for S in itertools.combinations(sorted(holders), 2):
            secret = SECP256K1.scalar(0)
            for i in S:
                secret = secret + lagrange_coeff(SECP256K1, S, i) * holders[i].share
            assert SECP256K1.base_exp(secret) == outcome.group_key

    def test_group_key_published_on_board(self, outcome_2_of_3):
        outcome, _ = outcome_2_of_3
        assert set(outcome.transcript.group_keys.values()) == {outcome.group_key}

    def test_inspection_backend(self):
        outcome, _ = keygen(2, 3, group=INSPECTION, label="inspection")
        assert outcome.consistent
        assert outcome.group_key.group is INSPECTION

    def test_invalid_parameters(self):
        rng = make_rng(1, "params")
        ctx = SessionContext("params")
        with pytest.raises(ValueError, match="t must be in"):
            KeygenSession(SECP256K1, 1, 4, [1, 2, 3], ctx, rng)
        with pytest.raises(ValueError, match="my_index must be a nonzero member"):
            KeygenSession(SECP256K1, 5, 2, [1, 2, 3], ctx, rng)

    def test_abort_floor(self):
        assert default_abort_floor(2, 3) == 2
        assert default_abort_floor(3, 5) == 4
        assert default_abort_floor(5, 9) == 6


class TestMisbehavior:
    """作恶识别与排除"""

    @pytest.mark.parametrize("behavior,culprit", [
        (Misbehavior(MisbehaviorKind.BAD_SHARE, 2, 4), 2),
        (Misbehavior(MisbehaviorKind.GARBLED_SHARE, 3, 1), 3),
        (Misbehavior(MisbehaviorKind.BAD_POK, 3), 3),
        (Misbehavior(MisbehaviorKind.BOGUS_COMPLAINT, 4, 1), 4),
        (Misbehavior(MisbehaviorKind.FALSE_COMPLAINT, 5, 2), 5),
    ], ids=lambda v: v.kind.value if isinstance(v, Misbehavior) else str(v))
    def test_culprit_excluded_everywhere(self, behavior, culprit):
        outcome, _ = keygen(3, 5, misbehaviors=[behavior], label=behavior.kind.value)
        assert not outcome.aborted
        assert outcome.consistent
        assert all(ex == frozenset({culprit}) for ex in outcome.excluded.values())
        assert culprit not in outcome.key_material

    def test_bad_share_verdict_reason(self):
        outcome, _ = keygen(3, 5, misbehaviors=[Misbehavior(MisbehaviorKind.BAD_SHARE, 2, 4)], label="reason")
        reasons = {(v.excluded, v.reason) for v in outcome.verdicts}
        assert (2, "bad_share") in reasons

    def test_false_complaint_verdict_reason(self):
        outcome, _ = keygen(3, 5, misbehaviors=[Misbehavior(MisbehaviorKind.FALSE_COMPLAINT, 5, 2)],
                            label="false")
        assert [(v.excluded, v.reason) for v in outcome.verdicts] == [(5, "false_accusation")]

    def test_withheld_share_excludes_dealer(self):
        outcome, _ = keygen(3, 5, misbehaviors=[Misbehavior(MisbehaviorKind.WITHHELD_SHARE, 1, 3)],
                            label="withheld")
        assert outcome.consensus_excluded == frozenset({1})

    def test_too_many_exclusions_abort(self):
        bad = [Misbehavior(MisbehaviorKind.BAD_POK, 1), Misbehavior(MisbehaviorKind.BAD_POK, 2)]
        outcome, _ = keygen(3, 5, misbehaviors=bad, label="abort")
        assert outcome.aborted
        assert outcome.key_material == {}
        assert outcome.group_key is None

    def test_group_key_excludes_bad_dealer_constant(self):
        outcome, _ = keygen(3, 5, misbehaviors=[Misbehavior(MisbehaviorKind.BAD_SHARE, 2, 4)], label="const")
        constants = [p.commitments[0] for i, p in outcome.transcript.round1.items() if i != 2]
        assert SECP256K1.product(constants) == outcome.group_key


class TestTranscriptReplay:
    """公告板导出 JSONL 后重放裁决"""

    def test_replayed_verdicts_match(self, tmp_path):
        outcome, _ = keygen(3, 5, misbehaviors=[Misbehavior(MisbehaviorKind.BAD_SHARE, 2, 4)], label="replay")
        path = tmp_path / "transcript.jsonl"
        write_jsonl(str(path), outcome.transcript.records())
        board = BulletinBoard.from_records(TraceReplayer(str(path)).replay())
        assert len(board.complaints) == len(outcome.transcript.complaints) >= 1
        replayed = [adjudicate_complaint(c, board) for c in board.complaints]
        assert [(v.excluded, v.reason) for v in replayed] == \
            [(v.excluded, v.reason) for v in outcome.verdicts]

    def test_transcript_requires_context(self):
        with pytest.raises(ValueError, match="must start with a context record"):
            BulletinBoard.from_records([{"type": "share"}])


class TestThresholdSigning:
    """两轮门限签名"""

    def test_every_t_subset_signs(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        message = b"certificate payload"
        for S in itertools.combinations([1, 2, 3], 2):
            signing = threshold_sign(outcome.key_material, message, rng, S)
            assert verify_signature(outcome.group_key, message, signing.signature)
            assert signing.attempts == 1

    def test_wrong_message_rejected(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        sig = threshold_sign(outcome.key_material, b"m1", rng).signature
        assert not verify_signature(outcome.group_key, b"m2", sig)

    def test_signature_encoding_roundtrip(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        sig = threshold_sign(outcome.key_material, b"m", rng).signature
        assert ThresholdSignature.read(Reader(sig.encode())) == sig

    def test_below_threshold_rejected(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        with pytest.raises(SigningAborted):
            threshold_sign(outcome.key_material, b"m", rng, [1])

    def test_bad_response_identified_and_retried(self):
        outcome, rng = keygen(3, 5, label="bad-response")
        signing = threshold_sign(outcome.key_material, b"m", rng, [1, 2, 3, 4, 5],
                                 [Misbehavior(MisbehaviorKind.BAD_RESPONSE, 2)])
        assert signing.excluded == frozenset({2})
        assert signing.attempts == 2
        assert 2 not in signing.signers
        assert verify_signature(outcome.group_key, b"m", signing.signature)

    def test_bad_response_below_threshold_aborts(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        with pytest.raises(SigningAborted):
            threshold_sign(outcome.key_material, b"m", rng, [1, 2], [Misbehavior(MisbehaviorKind.BAD_RESPONSE, 1)])

    def test_nonce_single_use(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        session = SigningSession(outcome.key_material[1], [1, 2], b"m", rng)
        session.sign_round1()
        with pytest.raises(NonceReuseError):
            session.sign_round1()

    def test_nonces_erased_after_response(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        sessions = {i: SigningSession(outcome.key_material[i], [1, 2], b"m", rng) for i in (1, 2)}
        commitments = {i: s.sign_round1() for i, s in sessions.items()}
        sessions[1].sign_round2(commitments)
        assert sessions[1].nonces is None
        with pytest.raises(NonceReuseError):
            sessions[1].sign_round2(commitments)

    def test_signer_set_below_t(self, outcome_2_of_3):
        outcome, rng = outcome_2_of_3
        with pytest.raises(ValueError, match="signer set must have at least t=2"):
            SigningSession(outcome.key_material[1], [1], b"m", rng)

    @settings(max_examples=10, deadline=None)
    @given(message=st.binary(min_size=0, max_size=64))
    def test_any_message(self, message):
        outcome, rng = keygen(2, 3, label="hypothesis")
        sig = threshold_sign(outcome.key_material, message, rng).signature
        assert verify_signature(outcome.group_key, message, sig)


class TestRefresh:
    """份额刷新"""

    def test_zero_sharing_keeps_group_key(self):
        outcome, rng = keygen(2, 3, label="refresh")
        refreshed = refresh_shares(outcome.key_material, [1, 2, 3], rng)
        assert refreshed.mode == DealingMode.ZERO
        holders = refreshed.key_material
        assert all(km.group_key == outcome.group_key for km in holders.values())
        assert all(km.epoch == 1 for km in holders.values())
        assert any(holders[i].share != outcome.key_material[i].share for i in holders)
        sig = threshold_sign(holders, b"epoch 1", rng).signature
        assert verify_signature(outcome.group_key, b"epoch 1", sig)

    def test_redistribution_with_new_member(self):
        outcome, rng = keygen(3, 5, label="churn")
        refreshed = refresh_shares(outcome.key_material, [1, 2, 3, 4, 6], rng)
        assert refreshed.mode == DealingMode.REDISTRIBUTE
        assert sorted(refreshed.key_material) == [1, 2, 3, 4, 6]
        first = refreshed.key_material[6]
        assert first.group_key.encode() == outcome.group_key.encode()
        sig = threshold_sign(refreshed.key_material, b"new member", rng, [2, 4, 6]).signature
        assert verify_signature(outcome.group_key, b"new member", sig)

    def test_subnet_signer_refresh(self):
        outcome, rng = keygen(2, 3, label="signer")
        signer = SubnetSigner.from_keygen(outcome, rng, signer_count=2)
        assert signer.epoch == 0
        refreshed = signer.refresh([1, 2, 3, 4])
        assert refreshed.epoch == 1
        assert refreshed.group_key == signer.group_key
        outcome_sig = refreshed.sign(b"hello")
        assert len(outcome_sig.signers) == 2
        assert verify_signature(signer.group_key, b"hello", outcome_sig.signature)

    def test_refresh_too_few_members(self):
        outcome, rng = keygen(3, 5, label="few")
        with pytest.raises(ValueError, match="at least t=3 members"):
            refresh_shares(outcome.key_material, [1, 2], rng)

    def test_signer_from_aborted_keygen(self):
        bad = [Misbehavior(MisbehaviorKind.BAD_POK, 1), Misbehavior(MisbehaviorKind.BAD_POK, 2)]
        outcome, rng = keygen(3, 5, misbehaviors=bad, label="aborted-signer")
        with pytest.raises(KeygenAborted):
            SubnetSigner.from_keygen(outcome, rng)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
