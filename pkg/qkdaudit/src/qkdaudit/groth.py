"""
Groth structure-preserving signatures on a single G1 element.

Keys live in G2, messages and the S, T components in G1. A signature can be
re-randomized by anyone without the secret key.
"""
from dataclasses import dataclass

from .group import (
    CURVE_ORDER,
    G1_BYTES,
    G2_BYTES,
    DecodeError,
    DecodeReason,
    default_rng,
    deserialize_g1,
    deserialize_g2,
    g1_exp,
    g1_inv,
    g1_mul,
    g2_exp,
    gt_is_identity,
    is_identity,
    multi_pairing,
    scalar_inv,
    serialize_g1,
    serialize_g2,
)

SIGNATURE_BYTES = G2_BYTES + 2 * G1_BYTES


@dataclass(frozen=True)
class IssuerKeyPair:
    sk: int
    pk: tuple


@dataclass(frozen=True, eq=False)
class GrothSignature:
    """Signature (R-hat, S, T). Equality compares canonical encodings."""
    r_hat: tuple
    s: tuple
    t: tuple

    def to_bytes(self):
        return serialize_g2(self.r_hat) + serialize_g1(self.s) + serialize_g1(self.t)

    @classmethod
    def from_bytes(cls, data):
        if len(data) != SIGNATURE_BYTES:
            raise DecodeError(DecodeReason.BAD_LENGTH,
                              f"signature needs {SIGNATURE_BYTES} bytes, got {len(data)}")
        offset = 0
        parts = []
        for size, decode in ((G2_BYTES, deserialize_g2), (G1_BYTES, deserialize_g1),
                             (G1_BYTES, deserialize_g1)):
            try:
                parts.append(decode(data[offset:offset + size]))
            except DecodeError as exc:
                raise exc.shifted(offset) from None
            offset += size
        return cls(*parts)

    def __eq__(self, other):
        if not isinstance(other, GrothSignature):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())


def issuer_key_gen(params, rng=None):
    """Sample sk in Z_p^* and return (sk, G-hat^sk)."""
    rng = rng or default_rng()
    sk = rng.scalar()
    return IssuerKeyPair(sk=sk, pk=g2_exp(params.g_hat, sk))


def sign(params, sk, msg, rng=None):
    """Sign the G1 element `msg`.

    Returns (G-hat^r, (Y * G^sk)^(1/r), (Y^sk * msg)^(1/r)) for fresh r.
    """
    if sk % CURVE_ORDER == 0:
        raise ValueError("issuer secret key must be nonzero")
    rng = rng or default_rng()
    r = rng.scalar(exclude_one=True)
    r_inv = scalar_inv(r)
    r_hat = g2_exp(params.g_hat, r)
    s = g1_exp(g1_mul(params.y, g1_exp(params.g, sk)), r_inv)
    t = g1_exp(g1_mul(g1_exp(params.y, sk), msg), r_inv)
    return GrothSignature(r_hat=r_hat, s=s, t=t)


def rerandomize(sig, rng=None):
    """Fresh-looking signature on the same message under the same key."""
    rng = rng or default_rng()
    r = rng.scalar(exclude_one=True)
    r_inv = scalar_inv(r)
    return GrothSignature(
        r_hat=g2_exp(sig.r_hat, r),
        s=g1_exp(sig.s, r_inv),
        t=g1_exp(sig.t, r_inv),
    )


def verify(params, pk, sig, msg):
    """True iff e(S,R)=e(Y,G-hat)e(G,pk) and e(T,R)=e(Y,pk)e(msg,G-hat)."""
    if is_identity(sig.r_hat):
        return False
    first = multi_pairing([
        (sig.s, sig.r_hat),
        (g1_inv(params.y), params.g_hat),
        (g1_inv(params.g), pk),
    ])
    if not gt_is_identity(first):
        return False
    second = multi_pairing([
        (sig.t, sig.r_hat),
        (g1_inv(params.y), pk),
        (g1_inv(msg), params.g_hat),
    ])
    return gt_is_identity(second)
