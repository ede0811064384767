"""
Fiat-Shamir signatures of knowledge.

Three proofs are produced by nodes:

- ``RegistrationProof``: Schnorr proof of sk for pk_N = H(setup)^sk, bound to
  the issuer's nonce ``did``.
- ``CredentialProof``: shows a blinded Groth credential on
  pk_N * prod H_i^{a_i}, discloses the attributes the policy pins, hides the
  others and ties the same sk to the session pseudonym.
- ``LinkProof``: equality of discrete logs between the session pseudonym and
  pk_N, letting the next hop check who it received the message from.

Every challenge hashes a length-prefixed transcript, so moving bytes between
fields changes the challenge.
"""
import logging
import struct
from dataclasses import dataclass

from .group import (
    CURVE_ORDER,
    G1_BYTES,
    G2_BYTES,
    SCALAR_BYTES,
    default_rng,
    g1_exp,
    g1_mul,
    gt_bytes,
    gt_exp,
    gt_mul,
    hash_to_scalar,
    is_identity,
    multi_pairing,
    pairing,
    points_equal,
    scalar_inv,
    serialize_g1,
    serialize_g2,
    serialize_scalar,
)
from .groth import GrothSignature, rerandomize
from .policy import PolicyUnsatisfied, encode_policy, evaluate
from .pseudonym import SETUP_SCOPE, scope_base, session_scope

logger = logging.getLogger(__name__)

REG_DST = b"AQKD/v1/reg"
CRED_DST = b"AQKD/v1/cred"
LINK_DST = b"AQKD/v1/link"

LINK_PROOF_BYTES = 2 * SCALAR_BYTES
BLINDED_BYTES = G2_BYTES + 2 * G1_BYTES


class InvalidCredential(ValueError):
    """The credential or attribute vector cannot back a proof."""


class Transcript:
    """Length-prefixed byte transcript hashed into a challenge."""

    def __init__(self, dst):
        self.dst = dst
        self._parts = []

    def append(self, data):
        data = bytes(data)
        self._parts.append(struct.pack(">I", len(data)))
        self._parts.append(data)
        return self

    def append_scalar(self, k):
        return self.append(serialize_scalar(k % CURVE_ORDER))

    def append_g1(self, point):
        return self.append(serialize_g1(point))

    def append_g2(self, point):
        return self.append(serialize_g2(point))

    def append_gt(self, x):
        return self.append(gt_bytes(x))

    def challenge(self):
        return hash_to_scalar(self.dst, b"".join(self._parts))


@dataclass(frozen=True)
class ProofContext:
    """Serialized hops that precede the proving hop on its path."""
    prefix: bytes = b""

    def to_bytes(self):
        return self.prefix


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistrationProof:
    c: int
    z: int


def _registration_challenge(pk_n, t, did):
    return Transcript(REG_DST).append_g1(pk_n).append_g1(t).append(did).challenge()


def prove_registration(sk_n, pk_n, did, rng=None):
    rng = rng or default_rng()
    base = scope_base(SETUP_SCOPE)
    r = rng.scalar()
    t = g1_exp(base, r)
    c = _registration_challenge(pk_n, t, did)
    return RegistrationProof(c=c, z=(r + c * sk_n) % CURVE_ORDER)


def verify_registration(pk_n, did, proof):
    base = scope_base(SETUP_SCOPE)
    t = g1_mul(g1_exp(base, proof.z), g1_exp(pk_n, -proof.c))
    return proof.c == _registration_challenge(pk_n, t, did)


# ---------------------------------------------------------------------------
# Link proofs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkProof:
    c: int
    z: int

    def to_bytes(self):
        return serialize_scalar(self.c) + serialize_scalar(self.z)


def _link_challenge(sid, ctx, nym, pk_n, t1, t2):
    return (Transcript(LINK_DST)
            .append(sid)
            .append(ctx.to_bytes())
            .append_g1(nym.nym)
            .append_g1(pk_n)
            .append_g1(t1)
            .append_g1(t2)
            .challenge())


def prove_link(sk, sid, nym, pk_n, ctx, rng=None):
    """Prove nym = H(sid)^sk and pk_N = H(setup)^sk with one response."""
    rng = rng or default_rng()
    r = rng.scalar()
    t1 = g1_exp(scope_base(session_scope(sid)), r)
    t2 = g1_exp(scope_base(SETUP_SCOPE), r)
    c = _link_challenge(sid, ctx, nym, pk_n, t1, t2)
    return LinkProof(c=c, z=(r + c * sk) % CURVE_ORDER)


def verify_link(proof, sid, nym, pk_n, ctx):
    if nym.scope != session_scope(sid):
        return False
    t1 = g1_mul(g1_exp(scope_base(session_scope(sid)), proof.z), g1_exp(nym.nym, -proof.c))
    t2 = g1_mul(g1_exp(scope_base(SETUP_SCOPE), proof.z), g1_exp(pk_n, -proof.c))
    return proof.c == _link_challenge(sid, ctx, nym, pk_n, t1, t2)


# ---------------------------------------------------------------------------
# Credential proofs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BlindedCredential:
    r_hat: tuple
    s: tuple
    t: tuple

    def to_bytes(self):
        return serialize_g2(self.r_hat) + serialize_g1(self.s) + serialize_g1(self.t)

    def __eq__(self, other):
        if not isinstance(other, BlindedCredential):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())


@dataclass(frozen=True)
class CredentialProof:
    """Blinded credential plus challenge and responses.

    `z_attrs` holds one response per hidden attribute, in ascending index
    order.
    """
    blinded: BlindedCredential
    c: int
    z_sk: int
    z_alpha: int
    z_beta: int
    z_attrs: tuple

    def scalars(self):
        return (self.c, self.z_sk, self.z_alpha, self.z_beta) + tuple(self.z_attrs)


@dataclass(frozen=True)
class IssuerConstants:
    """Pairing values that depend only on the parameters and the issuer key.

    k1 = e(Y, G-hat) * e(G, pk_I), b_setup = e(H(setup), G-hat).
    """
    pk: tuple
    k1: object
    b_setup: object


def precompute(params, pk_i):
    """Issuer constants for the verifier. Compute outside measured scopes."""
    k1 = multi_pairing([(params.y, params.g_hat), (params.g, pk_i)])
    b_setup = pairing(scope_base(SETUP_SCOPE), params.g_hat)
    return IssuerConstants(pk=pk_i, k1=k1, b_setup=b_setup)


def blind_credential(cred, rng=None):
    """Re-randomize `cred` and blind S by 1/alpha and T by 1/beta.

    Returns
    -------
    (BlindedCredential, alpha, beta)
    """
    rng = rng or default_rng()
    fresh = rerandomize(cred, rng)
    alpha = rng.scalar(exclude_one=True)
    beta = rng.scalar(exclude_one=True)
    blinded = BlindedCredential(
        r_hat=fresh.r_hat,
        s=g1_exp(fresh.s, scalar_inv(alpha)),
        t=g1_exp(fresh.t, scalar_inv(beta)),
    )
    return blinded, alpha, beta


def _credential_challenge(pk_i, sid, policy, ctx, blinded, nym, t1, t2, t3):
    return (Transcript(CRED_DST)
            .append_g2(pk_i)
            .append(sid)
            .append(encode_policy(policy))
            .append(ctx.to_bytes())
            .append_g2(blinded.r_hat)
            .append_g1(blinded.s)
            .append_g1(blinded.t)
            .append_g1(nym.nym)
            .append_gt(t1)
            .append_gt(t2)
            .append_g1(t3)
            .challenge())


def prove_credential(sk, attrs, cred, policy, sid, nym, ctx, pk_i, params,
                     rng=None, check_policy=True):
    """Prove possession of a credential that satisfies `policy`.

    Parameters
    ----------
    sk : int
        Node secret key.
    attrs : AttributeVector
        Attributes the credential was issued on.
    cred : GrothSignature
    policy : Policy
    sid : bytes
        Encoded session id.
    nym : Pseudonym
        The node's pseudonym for this session.
    ctx : ProofContext
    pk_i : G2 point
        Issuer public key.
    params : PublicParams
    rng : RandomSource, optional
    check_policy : bool
        Refuse when the attributes fail the policy. Only fault injection
        turns this off.

    Returns
    -------
    CredentialProof
    """
    if len(attrs) != params.ell or policy.ell != params.ell:
        raise InvalidCredential(
            f"attributes ({len(attrs)}) and policy ({policy.ell}) must both have "
            f"{params.ell} entries")
    if not isinstance(cred, GrothSignature) or is_identity(cred.r_hat):
        raise InvalidCredential("credential has a degenerate R-hat")
    if check_policy and not evaluate(policy, attrs):
        raise PolicyUnsatisfied(f"attributes do not satisfy policy {policy.policy_id!r}")

    rng = rng or default_rng()
    blinded, alpha, beta = blind_credential(cred, rng)
    hidden = policy.hidden

    r_alpha = rng.scalar()
    r_beta = rng.scalar()
    r_sk = rng.scalar()
    r_attrs = [rng.scalar() for _ in hidden]

    e1 = pairing(blinded.s, blinded.r_hat)
    e2 = pairing(blinded.t, blinded.r_hat)
    t1 = gt_exp(e1, r_alpha)
    w = g1_mul(g1_exp(scope_base(SETUP_SCOPE), -r_sk),
               *(g1_exp(params.h[i], -r) for i, r in zip(hidden, r_attrs)))
    t2 = gt_mul(gt_exp(e2, r_beta), pairing(w, params.g_hat))
    t3 = g1_exp(scope_base(session_scope(sid)), r_sk)

    c = _credential_challenge(pk_i, sid, policy, ctx, blinded, nym, t1, t2, t3)
    p = CURVE_ORDER
    return CredentialProof(
        blinded=blinded,
        c=c,
        z_sk=(r_sk + c * sk) % p,
        z_alpha=(r_alpha + c * alpha) % p,
        z_beta=(r_beta + c * beta) % p,
        z_attrs=tuple((r + c * attrs[i]) % p for i, r in zip(hidden, r_attrs)),
    )


def verify_credential(proof, policy, sid, nym, ctx, pk_i, params, constants=None):
    """Check a credential proof.

    Costs ell+3 G1 exponentiations, 4 GT exponentiations and 4 pairings when
    `constants` come from :func:`precompute`; without them the constants are
    computed here and counted.
    """
    if constants is None or not points_equal(constants.pk, pk_i):
        constants = precompute(params, pk_i)
    blinded = proof.blinded
    hidden = policy.hidden
    if policy.ell != params.ell or len(proof.z_attrs) != len(hidden):
        logger.debug("credential proof has %d hidden responses, policy expects %d",
                     len(proof.z_attrs), len(hidden))
        return False
    if nym.scope != session_scope(sid):
        return False
    if is_identity(blinded.r_hat) or is_identity(blinded.s) or is_identity(blinded.t):
        return False

    c = proof.c
    e1 = pairing(blinded.s, blinded.r_hat)
    e2 = pairing(blinded.t, blinded.r_hat)
    t1 = gt_mul(gt_exp(e1, proof.z_alpha), gt_exp(constants.k1, -c))

    w = g1_mul(*(g1_exp(params.h[i], -z) for i, z in zip(hidden, proof.z_attrs)),
               *(g1_exp(params.h[i], -c * a) for i, a in policy.required))
    t2 = gt_mul(
        gt_exp(e2, proof.z_beta),
        gt_exp(constants.b_setup, -proof.z_sk),
        multi_pairing([(w, params.g_hat), (g1_exp(params.y, -c), pk_i)]),
    )
    t3 = g1_mul(g1_exp(scope_base(session_scope(sid)), proof.z_sk), g1_exp(nym.nym, -c))

    return c == _credential_challenge(pk_i, sid, policy, ctx, blinded, nym, t1, t2, t3)
