"""
Attribute vectors, the Pedersen-hash credential message and disclosure
policies.

A policy pins the values of some attributes. Those attributes are disclosed
inside the policy encoding; every other attribute stays hidden in the proof.
Minimum-level requirements are expressed by bucketing a level into an
equality label with :func:`level_label`.
"""
import struct
from dataclasses import dataclass, field

from .group import (
    CURVE_ORDER,
    SCALAR_BYTES,
    DecodeError,
    DecodeReason,
    deserialize_scalar,
    g1_exp,
    g1_mul,
    hash_to_scalar,
    serialize_scalar,
)

ATTR_DST = b"AQKD/v1/attr"


class PolicyUnsatisfied(RuntimeError):
    """Raised when a node is asked to prove a policy its attributes fail."""


def attribute_scalar(label):
    """Map an attribute string to a scalar."""
    return hash_to_scalar(ATTR_DST, label.encode("utf-8"))


def level_label(name, level, thresholds):
    """Bucket a numeric level into an equality-checkable label.

    Parameters
    ----------
    name : str
        Attribute name, e.g. ``"cert"``.
    level : int or float
    thresholds : sequence of numbers
        Ascending bucket boundaries.

    Returns
    -------
    str
        ``"<name>>=<t>"`` for the largest threshold not above `level`, or
        ``"<name><<t0>"`` when the level is below every threshold.

    Examples
    --------
    >>> level_label("cert", 3, [1, 2, 4])
    'cert>=2'
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    if thresholds != sorted(thresholds):
        raise ValueError(f"thresholds must be ascending, got {thresholds}")
    reached = [t for t in thresholds if level >= t]
    if not reached:
        return f"{name}<{thresholds[0]}"
    return f"{name}>={reached[-1]}"


@dataclass(frozen=True)
class AttributeVector:
    values: tuple
    labels: tuple = None

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        for v in values:
            if not 0 <= v < CURVE_ORDER:
                raise ValueError("attribute value out of scalar range")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_labels(cls, labels):
        labels = tuple(labels)
        return cls(values=tuple(attribute_scalar(s) for s in labels), labels=labels)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def to_bytes(self):
        return b"".join(serialize_scalar(v) for v in self.values)

    @classmethod
    def from_bytes(cls, data, ell):
        if len(data) != ell * SCALAR_BYTES:
            raise DecodeError(DecodeReason.BAD_LENGTH,
                              f"{ell} attributes need {ell * SCALAR_BYTES} bytes, got {len(data)}")
        values = []
        for i in range(ell):
            chunk = data[i * SCALAR_BYTES:(i + 1) * SCALAR_BYTES]
            try:
                values.append(deserialize_scalar(chunk))
            except DecodeError as exc:
                raise exc.shifted(i * SCALAR_BYTES) from None
        return cls(values=tuple(values))


@dataclass(frozen=True)
class Policy:
    """Equality constraints on disclosed attributes.

    `required` maps a 0-based attribute index to its required value; the
    disclosed set is exactly its key set. Construction order does not matter.
    """
    policy_id: bytes
    ell: int
    required: tuple = field(default=())

    def __post_init__(self):
        items = self.required.items() if isinstance(self.required, dict) else self.required
        required = tuple(sorted((int(i), int(v)) for i, v in items))
        if self.ell < 1 or self.ell > 0xFFFF:
            raise ValueError(f"ell must be in [1, 65535], got {self.ell}")
        if len(self.policy_id) > 0xFFFF:
            raise ValueError("policy_id longer than 65535 bytes")
        indices = [i for i, _ in required]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate policy indices: {indices}")
        for i, v in required:
            if not 0 <= i < self.ell:
                raise ValueError(f"policy index {i} outside [0, {self.ell})")
            if not 0 <= v < CURVE_ORDER:
                raise ValueError("required value out of scalar range")
        object.__setattr__(self, "policy_id", bytes(self.policy_id))
        object.__setattr__(self, "required", required)

    @property
    def disclosed(self):
        return tuple(i for i, _ in self.required)

    @property
    def hidden(self):
        disclosed = set(self.disclosed)
        return tuple(i for i in range(self.ell) if i not in disclosed)

    @property
    def d(self):
        return len(self.required)

    def required_map(self):
        return dict(self.required)


def pedersen_message(pk_n, attrs, params):
    """msg = pk_N * prod_i H_i^{a_i}."""
    if len(attrs) != params.ell:
        raise ValueError(f"expected {params.ell} attributes, got {len(attrs)}")
    terms = [g1_exp(h, a) for h, a in zip(params.h, attrs.values)]
    return g1_mul(pk_n, *terms)


def evaluate(policy, attrs):
    if len(attrs) != policy.ell:
        raise ValueError(f"expected {policy.ell} attributes, got {len(attrs)}")
    return all(attrs[i] == v for i, v in policy.required)


def encode_policy(policy):
    out = [struct.pack(">H", len(policy.policy_id)), policy.policy_id,
           struct.pack(">HH", policy.ell, policy.d)]
    for i, v in policy.required:
        out.append(struct.pack(">H", i))
        out.append(serialize_scalar(v))
    return b"".join(out)


def read_policy(data, offset=0):
    """Decode a policy starting at `offset`; return (policy, end offset)."""
    def take(n):
        nonlocal offset
        if offset + n > len(data):
            raise DecodeError(DecodeReason.BAD_LENGTH, "policy truncated", offset)
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    (id_len,) = struct.unpack(">H", take(2))
    policy_id = take(id_len)
    start = offset
    ell, d = struct.unpack(">HH", take(4))
    required = []
    last = -1
    for _ in range(d):
        at = offset
        (i,) = struct.unpack(">H", take(2))
        if i <= last or i >= ell:
            raise DecodeError(DecodeReason.NON_CANONICAL,
                              "policy indices must be ascending and below ell", at)
        last = i
        at = offset
        try:
            v = deserialize_scalar(take(SCALAR_BYTES))
        except DecodeError as exc:
            raise exc.shifted(at) from None
        required.append((i, v))
    if ell < 1:
        raise DecodeError(DecodeReason.NON_CANONICAL, "policy ell must be >= 1", start)
    return Policy(policy_id=policy_id, ell=ell, required=tuple(required)), offset


def decode_policy(data):
    policy, end = read_policy(data)
    if end != len(data):
        raise DecodeError(DecodeReason.BAD_LENGTH, "trailing bytes after policy", end)
    return policy
