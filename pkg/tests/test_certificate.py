#!/usr/bin/env python3
"""
Certificate 单元测试

测试覆盖:
1. 状态转移函数: 本地转账、销毁、铸造、重复入站拒绝、整批原子性
2. Merkle 包含证明
3. 证书构建与 valid_cert / 签名校验（同一前状态的冲突证书同样有效）
4. 单字段篡改全部被拒绝
5. 规范编解码与畸形输入
6. 与独立重执行预言机一致（hypothesis）
"""

import sys
from dataclasses import replace
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest
from hypothesis import given, settings, strategies as st

from core.certificate import (
    Certificate,
    ContractCall,
    InboundCall,
    InboundMint,
    LocalTransfer,
    OutboundXS,
    StateCommitment,
    StfRejection,
    SubnetId,
    SubnetState,
    TransferAsset,
    apply_stf,
    build_and_sign_certificate,
    claim_transition,
    collect_xs,
    merkle_path,
    merkle_root,
    message_digest,
    prove_transition,
    valid_cert,
    verify_certificate_signature,
    verify_inclusion,
    verify_merkle_path,
    verify_transition,
    xs_reference,
)
from core.codec import CodecError
from core.group import SECP256K1
from core.harness import perturbations, reference_execute
from core.ice_frost import SessionContext, SubnetSigner, run_keygen
from core.randomness import make_rng


# ==================== 辅助函数 ====================

@pytest.fixture(scope="module")
def signer():
    rng = make_rng(1, "certificate-tests")
    outcome = run_keygen(SECP256K1, [1, 2, 3], 2, SessionContext("certificate-tests"), rng)
    return SubnetSigner.from_keygen(outcome, rng)


@pytest.fixture(scope="module")
def owner(signer):
    return SubnetId.from_group_key(signer.group_key)


@pytest.fixture(scope="module")
def other():
    return SubnetId.from_group_key(SECP256K1.base_exp(424242))


@pytest.fixture
def genesis(owner):
    return SubnetState.genesis(owner, {("alice", "RELAY"): 100, ("bob", "RELAY"): 20, ("alice", "ETH"): 5})


@pytest.fixture
def mixed_batch(other):
    return [
        LocalTransfer("alice", "bob", "RELAY", 30),
        OutboundXS("bob", TransferAsset(other, "RELAY", "carol", 10)),
        OutboundXS("alice", ContractCall(other, "0xc0ffee", "ping", b"\x01")),
        InboundMint(b"\x11" * 32, "dave", "ETH", 3),
    ]


class TestStateTransition:
    """apply_stf"""

    def test_local_transfer(self, genesis):
        new = apply_stf(genesis, [LocalTransfer("alice", "bob", "RELAY", 30)])
        assert new.balance("alice", "RELAY") == 70
        assert new.balance("bob", "RELAY") == 50
        assert new.height == 1

    def test_burn_and_mint(self, genesis, other):
        new = apply_stf(genesis, [
            OutboundXS("alice", TransferAsset(other, "RELAY", "carol", 40)),
            InboundMint(b"\x01" * 32, "erin", "RELAY", 7),
        ])
        assert new.supply("RELAY") == 120 - 40 + 7
        assert b"\x01" * 32 in new.received_log

    def test_contract_call_burns_nothing(self, genesis, other):
        new = apply_stf(genesis, [OutboundXS("alice", ContractCall(other, "c", "f")),
                                  InboundCall(b"\x02" * 32, "c", "f")])
        assert new.balance_map() == genesis.balance_map()
        assert b"\x02" * 32 in new.received_log

    def test_insufficient_balance_rejects_batch(self, genesis):
        with pytest.raises(StfRejection, match="insufficient balance"):
            apply_stf(genesis, [LocalTransfer("alice", "bob", "RELAY", 10),
                                LocalTransfer("bob", "alice", "RELAY", 500)])
        assert genesis.balance("alice", "RELAY") == 100

    def test_duplicate_inbound_rejected(self, genesis):
        mint = InboundMint(b"\x03" * 32, "erin", "RELAY", 1)
        state = apply_stf(genesis, [mint])
        with pytest.raises(StfRejection, match="duplicate inbound message"):
            apply_stf(state, [mint])

    def test_self_targeted_xs_rejected(self, genesis, owner):
        with pytest.raises(StfRejection, match="must target another subnet"):
            apply_stf(genesis, [OutboundXS("alice", TransferAsset(owner, "RELAY", "bob", 1))])

    @pytest.mark.parametrize("amount", [0, -5])
    def test_non_positive_amount(self, genesis, amount):
        with pytest.raises(StfRejection, match="amount must be a positive integer"):
            apply_stf(genesis, [LocalTransfer("alice", "bob", "RELAY", amount)])

    def test_bool_amount_rejected(self, genesis):
        with pytest.raises(StfRejection, match="amount must be a positive integer"):
            apply_stf(genesis, [LocalTransfer("alice", "bob", "RELAY", True)])

    def test_amount_over_64_bits(self, genesis):
        with pytest.raises(StfRejection, match="amount must fit in 64 bits"):
            apply_stf(genesis, [InboundMint(b"\x05" * 32, "erin", "RELAY", 2 ** 64)])

    def test_zero_balances_dropped(self, genesis):
        new = apply_stf(genesis, [LocalTransfer("alice", "bob", "ETH", 5)])
        assert ("alice", "ETH") not in new.balance_map()

    def test_negative_genesis_balance(self, owner):
        with pytest.raises(ValueError, match="balance must be non-negative"):
            SubnetState.genesis(owner, {("alice", "RELAY"): -1})

    def test_commitment_changes_with_state(self, genesis):
        new = apply_stf(genesis, [LocalTransfer("alice", "bob", "RELAY", 1)])
        assert new.commitment() != genesis.commitment()
        assert genesis.commitment() == SubnetState.genesis(genesis.owner, genesis.balance_map()).commitment()


class TestMerkle:
    """Merkle 包含证明"""

    @pytest.mark.parametrize("size", [1, 2, 3, 5, 8])
    def test_every_leaf_verifies(self, size):
        leaves = [bytes([i]) * 4 for i in range(size)]
        root = merkle_root(leaves)
        for i, leaf in enumerate(leaves):
            assert verify_merkle_path(leaf, merkle_path(leaves, i), root)

    def test_wrong_leaf_fails(self):
        leaves = [b"a", b"b", b"c"]
        root = merkle_root(leaves)
        assert not verify_merkle_path(b"x", merkle_path(leaves, 0), root)

    def test_odd_level_padding_distinct(self):
        """单叶树与两片相同叶的树根不同"""
        assert merkle_root([b"a"]) != merkle_root([b"a", b"a"])

    def test_path_index_range(self):
        with pytest.raises(ValueError, match="index must be in"):
            merkle_path([b"a"], 1)


class TestCertificate:
    """证书构建与校验"""

    def test_valid_certificate(self, signer, genesis, mixed_batch):
        cert, new_state = build_and_sign_certificate(signer, genesis, mixed_batch)
        assert valid_cert(cert)
        assert verify_certificate_signature(cert)
        assert cert.prev_state_hash == genesis.commitment()
        assert cert.state_hash == new_state.commitment()
        assert len(cert.xs_list) == 2
        assert verify_inclusion(cert)

    def test_empty_batch(self, signer, genesis):
        cert, new_state = build_and_sign_certificate(signer, genesis, [])
        assert valid_cert(cert)
        assert cert.xs_list == ()
        assert new_state.height == 1

    def test_invalid_batch_has_no_certificate(self, signer, genesis):
        with pytest.raises(StfRejection):
            build_and_sign_certificate(signer, genesis, [LocalTransfer("nobody", "bob", "RELAY", 1)])

    def test_prev_state_must_belong_to_signer(self, signer, other):
        foreign = SubnetState.genesis(other, {("a", "X"): 1})
        with pytest.raises(ValueError, match="prev_state must belong to subnet"):
            build_and_sign_certificate(signer, foreign, [])

    def test_every_field_perturbation_rejected(self, signer, genesis, mixed_batch, other):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        for field_name, tampered in perturbations(cert, other).items():
            if field_name == "signature":
                assert not verify_certificate_signature(tampered), field_name
            else:
                assert not valid_cert(tampered), field_name

    def test_same_predecessor_both_valid(self, signer, genesis, mixed_batch):
        """同一前状态、不同批次的两张证书都通过 valid_cert，占用同一槽位"""
        first, first_state = build_and_sign_certificate(signer, genesis, mixed_batch)
        second, second_state = build_and_sign_certificate(
            signer, genesis, [LocalTransfer("alice", "bob", "ETH", 2)])
        assert valid_cert(first) and valid_cert(second)
        assert verify_certificate_signature(first) and verify_certificate_signature(second)
        assert first.slot() == second.slot() == (genesis.owner, genesis.commitment())
        assert first.digest != second.digest
        assert first.state_hash != second.state_hash
        assert first_state.height == second_state.height == 1

    def test_false_claim_rejected(self, genesis, mixed_batch):
        claimed = StateCommitment(b"\x00" * 32)
        proof = claim_transition(genesis, mixed_batch, claimed)
        assert not verify_transition(proof, genesis.commitment(), claimed)

    def test_prove_transition(self, genesis, mixed_batch):
        proof, new_hash = prove_transition(genesis, mixed_batch)
        assert verify_transition(proof, genesis.commitment(), new_hash)

    def test_collect_xs_paths(self, mixed_batch):
        xs_list, paths = collect_xs(mixed_batch)
        assert [p.leaf_index for p in paths] == [1, 2]
        assert xs_list[0] == mixed_batch[1].message

    def test_signature_over_other_payload(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        other_cert, _ = build_and_sign_certificate(signer, genesis, [])
        swapped = replace(cert, signature=other_cert.signature)
        assert not verify_certificate_signature(swapped)

    def test_equality_by_digest(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        assert Certificate.decode(cert.encoded) == cert
        assert hash(Certificate.decode(cert.encoded)) == hash(cert)
        assert cert.slot() == (cert.subnet_id, genesis.commitment())
        assert cert.target_subnets() == frozenset({mixed_batch[1].message.target_subnet})

    def test_xs_reference(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        refs = {xs_reference(cert, i) for i in range(len(cert.xs_list))}
        assert len(refs) == 2
        assert xs_reference(cert, 0) != message_digest(cert.xs_list[0])
        with pytest.raises(ValueError, match="index must be in"):
            xs_reference(cert, 2)

    def test_to_dict(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        data = cert.to_dict()
        assert data["digest"] == cert.digest.hex()
        assert len(data["proof"]["tx_batch"]) == 4


class TestCodec:
    """规范编解码"""

    def test_truncated_input(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        with pytest.raises(CodecError):
            Certificate.decode(cert.encoded[:-1])

    def test_trailing_bytes(self, signer, genesis, mixed_batch):
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        with pytest.raises(CodecError, match="trailing bytes"):
            Certificate.decode(cert.encoded + b"\x00")

    def test_bit_flip_never_validates(self, signer, genesis, mixed_batch):
        """任意位置翻转一位：解码失败或校验失败"""
        cert, _ = build_and_sign_certificate(signer, genesis, mixed_batch)
        data = cert.encoded
        for pos in range(0, len(data), max(1, len(data) // 64)):
            flipped = data[:pos] + bytes([data[pos] ^ 0x01]) + data[pos + 1:]
            try:
                decoded = Certificate.decode(flipped)
            except CodecError:
                continue
            assert not (valid_cert(decoded) and verify_certificate_signature(decoded)), pos


class TestOracleAgreement:
    """valid_cert 与独立重执行预言机一致"""

    @settings(max_examples=60, deadline=None)
    @given(
        amounts=st.lists(st.integers(min_value=0, max_value=150), min_size=0, max_size=5),
        claim_honestly=st.booleans(),
    )
    def test_agreement(self, signer, owner, other, amounts, claim_honestly):
        state = SubnetState.genesis(owner, {("a0", "X"): 100, ("a1", "X"): 50})
        batch = []
        for k, amount in enumerate(amounts):
            if k % 2 == 0:
                batch.append(LocalTransfer("a0", "a1", "X", amount))
            else:
                batch.append(OutboundXS("a1", TransferAsset(other, "X", "z", amount)))
        expected = reference_execute(state, batch)
        if expected is not None and claim_honestly:
            claimed = expected.commitment()
        else:
            claimed = replace(state, height=state.height + 2).commitment()
        placeholder = signer.sign(b"placeholder").signature
        proof = claim_transition(state, batch, claimed)
        xs_list, paths = collect_xs(proof.tx_batch)
        cert = Certificate(owner, state.commitment(), claimed, proof, xs_list, paths, placeholder)
        assert valid_cert(cert) == (expected is not None and claim_honestly)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
