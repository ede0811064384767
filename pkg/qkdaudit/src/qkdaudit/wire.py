"""
Wire format of hop messages and the on-disk credential store.

Message layout, big-endian::

    "AQKD" | version u8 | sid (nonce 16 | timestamp u64) | policy encoding
    | hop count u16 | hops... | link flag u8 | [link c 32 | link z 32]

and each hop::

    nym 48 | R'' 96 | S'' 48 | T'' 48 | c 32 | z_sk 32 | z_alpha 32 | z_beta 32
    | hidden responses (ell - d) x 32
"""
import struct
from dataclasses import dataclass, replace

from .group import (
    G1_BYTES,
    G2_BYTES,
    SCALAR_BYTES,
    DecodeError,
    DecodeReason,
    deserialize_g1,
    deserialize_g2,
    deserialize_scalar,
    serialize_g1,
    serialize_scalar,
)
from .groth import SIGNATURE_BYTES, GrothSignature
from .policy import AttributeVector, encode_policy, read_policy
from .pseudonym import Pseudonym, session_scope
from .sok import BlindedCredential, CredentialProof, LinkProof, ProofContext

MAGIC = b"AQKD"
VERSION = 1
NONCE_BYTES = 16
SID_BYTES = NONCE_BYTES + 8


@dataclass(frozen=True)
class SessionId:
    nonce: bytes
    timestamp: int

    def __post_init__(self):
        if len(self.nonce) != NONCE_BYTES:
            raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
        if not 0 <= self.timestamp < 2**64:
            raise ValueError("timestamp must fit in an unsigned 64-bit integer")

    @classmethod
    def fresh(cls, rng, now):
        return cls(nonce=rng.bytes(NONCE_BYTES), timestamp=int(now))

    def to_bytes(self):
        return self.nonce + struct.pack(">Q", self.timestamp)

    @classmethod
    def from_bytes(cls, data):
        if len(data) != SID_BYTES:
            raise DecodeError(DecodeReason.BAD_LENGTH,
                              f"session id needs {SID_BYTES} bytes, got {len(data)}")
        return cls(nonce=bytes(data[:NONCE_BYTES]),
                   timestamp=struct.unpack(">Q", data[NONCE_BYTES:])[0])

    @property
    def scope(self):
        return session_scope(self.to_bytes())


@dataclass(frozen=True)
class Hop:
    proof: CredentialProof
    nym: Pseudonym


@dataclass(frozen=True)
class HopMessage:
    """Per-path audit payload. `link` is None only as emitted by the sender."""
    sid: SessionId
    policy: object
    hops: tuple = ()
    link: LinkProof = None

    def appended(self, hop, link):
        return replace(self, hops=self.hops + (hop,), link=link)

    def context(self, upto=None):
        """Context binding the first `upto` hops (default: all of them)."""
        upto = len(self.hops) if upto is None else upto
        return ProofContext(prefix=encode_hops(self.hops[:upto]))


def hop_bytes(ell, d):
    """Encoded size of one hop."""
    return 3 * G1_BYTES + G2_BYTES + (4 + ell - d) * SCALAR_BYTES


def payload_bytes(n, ell, d):
    """Element bytes for n hops and one terminal link proof.

    >>> payload_bytes(100, 20, 10)
    68864
    """
    return 3 * n * G1_BYTES + n * G2_BYTES + ((4 + (ell - d)) * n + 2) * SCALAR_BYTES


def message_payload(messages):
    """Payload of a delivered transmission, counted the way
    :func:`payload_bytes` does: every hop plus one link proof."""
    total = 0
    for msg in messages:
        total += len(msg.hops) * hop_bytes(msg.policy.ell, msg.policy.d)
    return total + 2 * SCALAR_BYTES


def encode_hop(hop):
    proof = hop.proof
    return b"".join([
        serialize_g1(hop.nym.nym),
        proof.blinded.to_bytes(),
        *(serialize_scalar(k) for k in proof.scalars()),
    ])


def encode_hops(hops):
    return struct.pack(">H", len(hops)) + b"".join(encode_hop(h) for h in hops)


def serialize_hop_message(msg):
    out = [
        MAGIC,
        struct.pack(">B", VERSION),
        msg.sid.to_bytes(),
        encode_policy(msg.policy),
        encode_hops(msg.hops),
    ]
    if msg.link is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(msg.link.to_bytes())
    return b"".join(out)


class _Reader:
    """Cursor over a buffer that reports offsets in DecodeErrors."""

    def __init__(self, data):
        self.data = bytes(data)
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise DecodeError(DecodeReason.BAD_LENGTH, f"truncated {what}", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def field(self, n, decode, what):
        at = self.offset
        chunk = self.take(n, what)
        try:
            return decode(chunk)
        except DecodeError as exc:
            raise exc.shifted(at) from None

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack(">H", self.take(2, what))[0]

    def done(self):
        if self.offset != len(self.data):
            raise DecodeError(DecodeReason.BAD_LENGTH,
                              f"{len(self.data) - self.offset} trailing bytes", self.offset)


def _read_hop(reader, scope, n_hidden):
    nym = reader.field(G1_BYTES, deserialize_g1, "nym")
    r_hat = reader.field(G2_BYTES, deserialize_g2, "R''")
    s = reader.field(G1_BYTES, deserialize_g1, "S''")
    t = reader.field(G1_BYTES, deserialize_g1, "T''")
    c, z_sk, z_alpha, z_beta = (reader.field(SCALAR_BYTES, deserialize_scalar, "response")
                                for _ in range(4))
    z_attrs = tuple(reader.field(SCALAR_BYTES, deserialize_scalar, "hidden response")
                    for _ in range(n_hidden))
    proof = CredentialProof(blinded=BlindedCredential(r_hat=r_hat, s=s, t=t),
                            c=c, z_sk=z_sk, z_alpha=z_alpha, z_beta=z_beta, z_attrs=z_attrs)
    return Hop(proof=proof, nym=Pseudonym(nym=nym, scope=scope))


def deserialize_hop_message(data):
    """Decode one message, applying every element check.

    Raises
    ------
    DecodeError
        With the byte offset of the first bad field.
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise DecodeError(DecodeReason.NON_CANONICAL, "bad magic", 0)
    version = reader.u8("version")
    if version != VERSION:
        raise DecodeError(DecodeReason.NON_CANONICAL, f"unknown version {version}", 4)
    sid = reader.field(SID_BYTES, SessionId.from_bytes, "session id")
    try:
        policy, reader.offset = read_policy(reader.data, reader.offset)
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(DecodeReason.NON_CANONICAL, str(exc), reader.offset) from None
    count = reader.u16("hop count")
    n_hidden = policy.ell - policy.d
    hops = tuple(_read_hop(reader, sid.scope, n_hidden) for _ in range(count))
    at = reader.offset
    flag = reader.u8("link flag")
    if flag == 0:
        link = None
    elif flag == 1:
        c = reader.field(SCALAR_BYTES, deserialize_scalar, "link c")
        z = reader.field(SCALAR_BYTES, deserialize_scalar, "link z")
        link = LinkProof(c=c, z=z)
    else:
        raise DecodeError(DecodeReason.NON_CANONICAL, f"link flag {flag}", at)
    reader.done()
    return HopMessage(sid=sid, policy=policy, hops=hops, link=link)


# ---------------------------------------------------------------------------
# Credential store
# ---------------------------------------------------------------------------

STORE_MAGIC = b"AQKC"


@dataclass(frozen=True)
class CredentialRecord:
    node_id: str
    pk: tuple
    attrs: AttributeVector
    cred: GrothSignature


def encode_credential_record(record):
    node_id = record.node_id.encode("utf-8")
    return b"".join([
        struct.pack(">H", len(node_id)),
        node_id,
        serialize_g1(record.pk),
        record.attrs.to_bytes(),
        record.cred.to_bytes(),
    ])


def _read_record(reader, ell):
    id_len = reader.u16("node id length")
    try:
        node_id = reader.take(id_len, "node id").decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError(DecodeReason.NON_CANONICAL, "node id is not utf-8",
                          reader.offset - id_len) from None
    pk = reader.field(G1_BYTES, deserialize_g1, "node pk")
    attrs = reader.field(ell * SCALAR_BYTES, lambda b: AttributeVector.from_bytes(b, ell),
                         "attributes")
    cred = reader.field(SIGNATURE_BYTES, GrothSignature.from_bytes, "credential")
    return CredentialRecord(node_id=node_id, pk=pk, attrs=attrs, cred=cred)


def decode_credential_record(data, ell):
    reader = _Reader(data)
    record = _read_record(reader, ell)
    reader.done()
    return record


def encode_credential_store(records, ell):
    return STORE_MAGIC + struct.pack(">HI", ell, len(records)) + b"".join(
        encode_credential_record(r) for r in records)


def decode_credential_store(data):
    reader = _Reader(data)
    if reader.take(len(STORE_MAGIC), "magic") != STORE_MAGIC:
        raise DecodeError(DecodeReason.NON_CANONICAL, "not a credential store", 0)
    ell, count = struct.unpack(">HI", reader.take(6, "store header"))
    records = [_read_record(reader, ell) for _ in range(count)]
    reader.done()
    return ell, records
