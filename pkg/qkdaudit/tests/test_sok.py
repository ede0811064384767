import pytest

from qkdaudit.group import (
    RandomSource,
    counting,
    gt_equal,
    gt_exp,
    multi_pairing,
    pairing,
    points_equal,
)
from qkdaudit.policy import (
    AttributeVector,
    Policy,
    PolicyUnsatisfied,
    attribute_scalar,
    pedersen_message,
)
from qkdaudit.protocol import register
from qkdaudit.pseudonym import key_gen, nym_gen, session_scope
from qkdaudit.sok import (
    InvalidCredential,
    ProofContext,
    blind_credential,
    precompute,
    prove_credential,
    prove_link,
    prove_registration,
    verify_credential,
    verify_link,
    verify_registration,
)

from conftest import SLOW

SID = b"\x07" * 24
CTX = ProofContext(prefix=b"earlier hops")


@pytest.fixture(scope="module")
def nym(node_keys):
    return nym_gen(node_keys.sk, session_scope(SID))


@pytest.fixture(scope="module")
def constants(params, issuer_keys):
    return precompute(params, issuer_keys.pk)


@pytest.fixture(scope="module")
def proof(node_keys, attrs, credential, policy, nym, issuer_keys, params):
    return prove_credential(node_keys.sk, attrs, credential, policy, SID, nym, CTX,
                            issuer_keys.pk, params, RandomSource(30))


def test_registration_proof(node_keys):
    proof = prove_registration(node_keys.sk, node_keys.pk, b"nonce-1", RandomSource(31))
    assert verify_registration(node_keys.pk, b"nonce-1", proof)
    assert not verify_registration(node_keys.pk, b"nonce-2", proof), "proof must bind the nonce"
    other = key_gen(RandomSource(32))
    assert not verify_registration(other.pk, b"nonce-1", proof)


def test_link_proof_binds_context_and_key(node_keys, nym):
    link = prove_link(node_keys.sk, SID, nym, node_keys.pk, CTX, RandomSource(33))
    assert verify_link(link, SID, nym, node_keys.pk, CTX)
    assert not verify_link(link, SID, nym, node_keys.pk, ProofContext(prefix=b"other"))
    other = key_gen(RandomSource(34))
    assert not verify_link(link, SID, nym, other.pk, CTX)
    assert not verify_link(link, b"\x08" * 24, nym, node_keys.pk, CTX)


def test_link_proof_costs(node_keys, nym):
    with counting() as ops:
        link = prove_link(node_keys.sk, SID, nym, node_keys.pk, CTX, RandomSource(35))
    assert ops.as_tuple() == (2, 0, 0, 0)
    with counting() as ops:
        verify_link(link, SID, nym, node_keys.pk, CTX)
    assert ops.as_tuple() == (4, 0, 0, 0)


def test_credential_proof_verifies_with_exact_cost(proof, policy, nym, issuer_keys, params,
                                                   constants):
    """ell+3 G1 and 4 GT exponentiations, 4 pairings"""
    with counting() as ops:
        ok = verify_credential(proof, policy, SID, nym, CTX, issuer_keys.pk, params, constants)
    assert ok
    assert ops.as_tuple() == (params.ell + 3, 0, 4, 4), f"verifier counted {ops}"


def test_credential_proof_prover_cost(node_keys, attrs, credential, policy, nym, issuer_keys,
                                      params):
    """Blinding (4 G1, 1 G2) plus (ell-d)+2 G1, 2 GT and 3 pairings"""
    with counting() as ops:
        prove_credential(node_keys.sk, attrs, credential, policy, SID, nym, CTX, issuer_keys.pk,
                         params, RandomSource(36))
    expected_g1 = 4 + (params.ell - policy.d) + 2
    assert ops.as_tuple() == (expected_g1, 1, 2, 3), f"prover counted {ops}"


def test_credential_proof_binds_context(proof, policy, nym, issuer_keys, params, constants):
    assert not verify_credential(proof, policy, SID, nym, ProofContext(prefix=b"moved"),
                                 issuer_keys.pk, params, constants)


def test_credential_proof_binds_policy_value(proof, nym, issuer_keys, params, constants):
    other = Policy(policy_id=b"repeaters", ell=2, required={0: attribute_scalar("class:other")})
    assert not verify_credential(proof, other, SID, nym, CTX, issuer_keys.pk, params, constants)


def test_credential_proof_rejects_foreign_pseudonym(proof, policy, issuer_keys, params,
                                                    constants):
    stranger = nym_gen(key_gen(RandomSource(37)).sk, session_scope(SID))
    assert not verify_credential(proof, policy, SID, stranger, CTX, issuer_keys.pk, params,
                                 constants)


def test_credential_proof_shape_checks(proof, nym, issuer_keys, params, constants):
    """Wrong number of hidden responses fails before any pairing"""
    wider = Policy(policy_id=b"repeaters", ell=2)
    with counting() as ops:
        assert not verify_credential(proof, wider, SID, nym, CTX, issuer_keys.pk, params,
                                     constants)
    assert ops.pairings == 0


def test_prover_refuses_unsatisfied_policy(node_keys, credential, policy, nym, issuer_keys,
                                           params):
    wrong = AttributeVector.from_labels(["class:other", "site:lab"])
    with pytest.raises(PolicyUnsatisfied):
        prove_credential(node_keys.sk, wrong, credential, policy, SID, nym, CTX, issuer_keys.pk,
                         params, RandomSource(38))


def test_prover_refuses_wrong_attribute_count(node_keys, credential, policy, nym, issuer_keys,
                                              params):
    with pytest.raises(InvalidCredential):
        prove_credential(node_keys.sk, AttributeVector(values=(1,)), credential, policy, SID,
                         nym, CTX, issuer_keys.pk, params, RandomSource(39))


def test_blinding_keeps_the_trapdoor_equations(credential, node_keys, attrs, issuer_keys,
                                               params, constants):
    """e(S', R')^alpha = e(Y, G^) e(G, pk_I) and e(T', R')^beta = e(Y, pk_I) e(msg, G^)"""
    with counting() as ops:
        blinded, alpha, beta = blind_credential(credential, RandomSource(40))
    assert ops.as_tuple() == (4, 1, 0, 0), f"blinding counted {ops}"
    assert not points_equal(blinded.s, credential.s)
    assert not points_equal(blinded.t, credential.t)
    assert gt_equal(gt_exp(pairing(blinded.s, blinded.r_hat), alpha), constants.k1)
    msg = pedersen_message(node_keys.pk, attrs, params)
    rhs = multi_pairing([(params.y, issuer_keys.pk), (msg, params.g_hat)])
    assert gt_equal(gt_exp(pairing(blinded.t, blinded.r_hat), beta), rhs)
    assert not gt_equal(gt_exp(pairing(blinded.t, blinded.r_hat), alpha), rhs)


SLOW_TRIALS = pytest.param(50, marks=[
    pytest.mark.slow, pytest.mark.skipif(not SLOW, reason="set QKDAUDIT_SLOW_TESTS=1")])


@pytest.mark.parametrize("trials", [2, SLOW_TRIALS])
def test_random_registration_and_link_proofs(trials):
    rng = RandomSource(41)
    for _ in range(trials):
        keys = key_gen(rng)
        did, sid = rng.bytes(16), rng.bytes(24)
        assert verify_registration(keys.pk, did, prove_registration(keys.sk, keys.pk, did, rng))
        nym = nym_gen(keys.sk, session_scope(sid))
        link = prove_link(keys.sk, sid, nym, keys.pk, CTX, rng)
        assert verify_link(link, sid, nym, keys.pk, CTX)


@pytest.mark.parametrize("trials", [2, SLOW_TRIALS])
def test_random_credential_proofs(issuer_keys, params, constants, trials):
    """Random keys, attributes and disclosure sets always verify"""
    rng = RandomSource(42)
    for _ in range(trials):
        keys = key_gen(rng)
        values = AttributeVector(values=tuple(rng.scalar() for _ in range(params.ell)))
        shown = [i for i in range(params.ell) if rng.integers(0, 2)]
        policy = Policy(policy_id=b"random", ell=params.ell,
                        required={i: values[i] for i in shown})
        cred = register(issuer_keys, keys, values, params, rng)
        sid = rng.bytes(24)
        nym = nym_gen(keys.sk, session_scope(sid))
        proof = prove_credential(keys.sk, values, cred, policy, sid, nym, CTX, issuer_keys.pk,
                                 params, rng)
        assert verify_credential(proof, policy, sid, nym, CTX, issuer_keys.pk, params,
                                 constants)
