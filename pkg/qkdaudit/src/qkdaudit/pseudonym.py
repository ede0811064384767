"""
Scope-exclusive pseudonyms: nym = H(scope)^sk.

A node's public key is its pseudonym under the fixed setup scope; inside one
session it shows up under the session scope. The same key always yields the
same pseudonym in a scope, which is what lets a receiver detect a node that
sits on two paths.
"""
from dataclasses import dataclass

from .group import (
    G1_BYTES,
    SCALAR_BYTES,
    DecodeError,
    DecodeReason,
    default_rng,
    deserialize_g1,
    deserialize_scalar,
    g1_exp,
    hash_to_g1,
    serialize_g1,
    serialize_scalar,
)

NYM_DST = b"AQKD/v1/nym"
SETUP_SCOPE = b"AQKD/v1/setup"
SESSION_SCOPE_PREFIX = b"AQKD/v1/sid/"

NODE_KEY_BYTES = SCALAR_BYTES + G1_BYTES


def scope_base(scope):
    """H(scope) in G1."""
    return hash_to_g1(NYM_DST, bytes(scope))


def session_scope(sid_bytes):
    return SESSION_SCOPE_PREFIX + bytes(sid_bytes)


@dataclass(frozen=True, eq=False)
class Pseudonym:
    nym: tuple
    scope: bytes

    def to_bytes(self):
        return serialize_g1(self.nym)

    def __eq__(self, other):
        if not isinstance(other, Pseudonym):
            return NotImplemented
        return self.scope == other.scope and self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash((self.scope, self.to_bytes()))


@dataclass(frozen=True)
class NodeKeyPair:
    sk: int
    pk: tuple

    def to_bytes(self):
        return serialize_scalar(self.sk) + serialize_g1(self.pk)

    @classmethod
    def from_bytes(cls, data):
        if len(data) != NODE_KEY_BYTES:
            raise DecodeError(DecodeReason.BAD_LENGTH,
                              f"node key needs {NODE_KEY_BYTES} bytes, got {len(data)}")
        sk = deserialize_scalar(data[:SCALAR_BYTES])
        try:
            pk = deserialize_g1(data[SCALAR_BYTES:])
        except DecodeError as exc:
            raise exc.shifted(SCALAR_BYTES) from None
        return cls(sk=sk, pk=pk)


def nym_gen(sk, scope):
    if sk == 0:
        raise ValueError("secret key must be nonzero")
    return Pseudonym(nym=g1_exp(scope_base(scope), sk), scope=bytes(scope))


def key_gen(rng=None):
    rng = rng or default_rng()
    sk = rng.scalar()
    return NodeKeyPair(sk=sk, pk=nym_gen(sk, SETUP_SCOPE).nym)
