"""
Bilinear-group layer for qkdaudit.

Every protocol module does its BLS12-381 arithmetic through this module:
hashing into G1 and into the scalar field, canonical compressed encodings
with full decode checks, a seedable randomness source and operation counters
that tally full-length exponentiations and pairings.

Two curve backends sit behind the functions below. The native one wraps the
arkworks bindings of ``py_arkworks_bls12381``; the ``py_ecc`` one is pure
Python and always available. ``QKDAUDIT_BACKEND`` picks one of ``auto``
(native when installed and self-consistent, else py_ecc), ``native`` or
``py_ecc``. Fiat-Shamir challenges hash target-group elements in the
backend's own encoding, so proofs verify under the backend that made them.
"""
import hashlib
import logging
import os
import secrets
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, reduce

import numpy as np
from py_ecc.bls.hash import expand_message_xmd
from py_ecc.bls.hash_to_curve import hash_to_G1
from py_ecc.bls.point_compression import (
    compress_G1,
    compress_G2,
    decompress_G1,
    decompress_G2,
)
from py_ecc.optimized_bls12_381 import (
    FQ12,
    G1,
    G2,
    Z1,
    Z2,
    add,
    curve_order,
    eq,
    field_modulus,
    final_exponentiate,
    is_inf,
    multiply,
    neg,
)
from py_ecc.optimized_bls12_381 import pairing as _miller_pairing

logger = logging.getLogger(__name__)

BACKEND_ENV = "QKDAUDIT_BACKEND"
BACKEND_CHOICES = ("auto", "native", "py_ecc")

# Sizes of canonical encodings in bytes
SCALAR_BYTES = 32
G1_BYTES = 48
G2_BYTES = 96

CURVE_ORDER = curve_order
FIELD_MODULUS = field_modulus

_POW_2_381 = 2**381


class DecodeReason(Enum):
    BAD_LENGTH = "BadLength"
    NOT_ON_CURVE = "NotOnCurve"
    NOT_IN_SUBGROUP = "NotInSubgroup"
    NON_CANONICAL = "NonCanonical"


class DecodeError(ValueError):
    """Raised when bytes do not decode to a valid element.

    Attributes
    ----------
    reason : DecodeReason
    offset : int
        Byte offset of the offending field inside the enclosing buffer.
    """

    def __init__(self, reason, detail, offset=0):
        super().__init__(f"{reason.value} at byte {offset}: {detail}")
        self.reason = reason
        self.detail = detail
        self.offset = offset

    def shifted(self, base):
        """Same error, re-anchored inside a larger buffer starting at `base`."""
        return DecodeError(self.reason, self.detail, self.offset + base)


# ---------------------------------------------------------------------------
# Curve backends
# ---------------------------------------------------------------------------

class PyEccBackend:
    """Pure-Python arithmetic on the optimized ``py_ecc`` curve.

    Points are projective tuples of ``FQ``/``FQ2``, GT elements ``FQ12``.
    """
    name = "py_ecc"

    def __init__(self):
        self.g1, self.g2 = G1, G2
        self.g1_zero, self.g2_zero = Z1, Z2
        self.gt_one = FQ12.one()

    def mul(self, point, k):
        return multiply(point, k)

    def add(self, a, b):
        return add(a, b)

    def neg(self, point):
        return neg(point)

    def eq(self, a, b):
        return eq(a, b)

    def is_zero(self, point):
        return is_inf(point)

    def gt_pow(self, x, k):
        return x ** k

    def gt_mul(self, x, y):
        return x * y

    def gt_eq(self, x, y):
        return x == y

    def multi_pairing(self, pairs):
        acc = self.gt_one
        for a, b in pairs:
            if is_inf(a) or is_inf(b):
                continue
            acc = acc * _miller_pairing(b, a, final_exponentiate=False)
        return final_exponentiate(acc)

    def from_py_ecc_g1(self, point):
        return point

    def compress_g1(self, point):
        return compress_G1(point).to_bytes(G1_BYTES, "big")

    def compress_g2(self, point):
        z1, z2 = compress_G2(point)
        return z1.to_bytes(G2_BYTES // 2, "big") + z2.to_bytes(G2_BYTES // 2, "big")

    def decode_g1(self, data):
        try:
            point = decompress_G1(int.from_bytes(data, "big"))
        except ValueError as exc:
            raise DecodeError(DecodeReason.NOT_ON_CURVE, f"G1: {exc}") from None
        if not is_inf(multiply(point, CURVE_ORDER)):
            raise DecodeError(DecodeReason.NOT_IN_SUBGROUP, "G1: outside prime-order subgroup")
        return point

    def decode_g2(self, data):
        z1 = int.from_bytes(data[:48], "big")
        z2 = int.from_bytes(data[48:], "big")
        try:
            point = decompress_G2((z1, z2))
        except ValueError as exc:
            raise DecodeError(DecodeReason.NOT_ON_CURVE, f"G2: {exc}") from None
        if not is_inf(multiply(point, CURVE_ORDER)):
            raise DecodeError(DecodeReason.NOT_IN_SUBGROUP, "G2: outside prime-order subgroup")
        return point

    def gt_bytes(self, x):
        return b"".join(
            ((c if isinstance(c, int) else c.n) % FIELD_MODULUS).to_bytes(G1_BYTES, "big")
            for c in x.coeffs
        )


class ArkworksBackend:
    """Native arithmetic through ``py_arkworks_bls12381``.

    The bindings write GT additively: ``+`` is the group operation and
    ``* Scalar`` the exponentiation.
    """
    name = "native"

    def __init__(self):
        import py_arkworks_bls12381 as ark

        self._G1Point, self._G2Point = ark.G1Point, ark.G2Point
        self._GT, self._Scalar = ark.GT, ark.Scalar
        self.g1, self.g2 = ark.G1Point(), ark.G2Point()
        self.g1_zero, self.g2_zero = ark.G1Point.identity(), ark.G2Point.identity()
        self.gt_one = ark.GT.pairing(self.g1_zero, self.g2)

    def _scalar(self, k):
        return self._Scalar.from_le_bytes(k.to_bytes(SCALAR_BYTES, "little"))

    def mul(self, point, k):
        return point * self._scalar(k)

    def add(self, a, b):
        return a + b

    def neg(self, point):
        return -point

    def eq(self, a, b):
        return a == b

    def is_zero(self, point):
        if isinstance(point, self._G2Point):
            return point == self.g2_zero
        return point == self.g1_zero

    def gt_pow(self, x, k):
        return x * self._scalar(k)

    def gt_mul(self, x, y):
        return x + y

    def gt_eq(self, x, y):
        return x == y

    def multi_pairing(self, pairs):
        if not pairs:
            return self.gt_one
        return self._GT.multi_pairing([a for a, _ in pairs], [b for _, b in pairs])

    def from_py_ecc_g1(self, point):
        return self._G1Point.from_compressed_bytes_unchecked(
            compress_G1(point).to_bytes(G1_BYTES, "big"))

    def compress_g1(self, point):
        return bytes(point.to_compressed_bytes())

    def compress_g2(self, point):
        return bytes(point.to_compressed_bytes())

    def _decode(self, cls, data, what):
        try:
            cls.from_compressed_bytes_unchecked(bytes(data))
        except Exception as exc:
            raise DecodeError(DecodeReason.NOT_ON_CURVE, f"{what}: {exc}") from None
        try:
            return cls.from_compressed_bytes(bytes(data))
        except Exception:
            raise DecodeError(DecodeReason.NOT_IN_SUBGROUP,
                              f"{what}: outside prime-order subgroup") from None

    def decode_g1(self, data):
        return self._decode(self._G1Point, data, "G1")

    def decode_g2(self, data):
        return self._decode(self._G2Point, data, "G2")

    def gt_bytes(self, x):
        return bytes.fromhex(str(x))

    def self_check(self):
        """Problems that make the bindings unusable here; empty when fine."""
        reference = PyEccBackend()
        problems = []
        if self.compress_g1(self.g1) != reference.compress_g1(G1):
            problems.append("G1 generator encoding differs from the compressed BLS12-381 format")
        if self.compress_g2(self.g2) != reference.compress_g2(G2):
            problems.append("G2 generator encoding differs from the compressed BLS12-381 format")
        if self.compress_g1(self.mul(self.g1, CURVE_ORDER - 1)) != \
                reference.compress_g1(neg(G1)):
            problems.append("scalar multiplication disagrees with py_ecc")
        gen = self._GT.pairing(self.g1, self.g2)
        try:
            stable = (self.gt_bytes(gen) == self.gt_bytes(self._GT.pairing(self.g1, self.g2))
                      and self.gt_bytes(gen) != self.gt_bytes(self.gt_one))
        except ValueError:
            stable = False
        if not stable:
            problems.append("GT elements have no stable byte encoding")
        return problems


def load_backend(choice=None):
    """Backend named by `choice`, or by ``QKDAUDIT_BACKEND`` when omitted."""
    choice = (choice or os.environ.get(BACKEND_ENV) or "auto").lower()
    if choice not in BACKEND_CHOICES:
        raise ValueError(f"Invalid curve backend '{choice}'. "
                         f"Valid options are: {', '.join(BACKEND_CHOICES)}")
    if choice == "py_ecc":
        return PyEccBackend()
    try:
        native = ArkworksBackend()
        problems = native.self_check()
    except Exception as exc:
        problems = [f"{type(exc).__name__}: {exc}"]
    if not problems:
        return native
    if choice == "native":
        raise RuntimeError("native curve backend unusable: " + "; ".join(problems))
    logger.info("using the pure-Python curve backend (%s)", "; ".join(problems))
    return PyEccBackend()


_backend = load_backend()


def backend_name():
    return _backend.name


def g1_generator():
    return _backend.g1


def g2_generator():
    return _backend.g2


def g1_identity():
    return _backend.g1_zero


def g2_identity():
    return _backend.g2_zero


def gt_identity():
    return _backend.gt_one


# ---------------------------------------------------------------------------
# Operation counters
# ---------------------------------------------------------------------------

@dataclass
class OpCounters:
    """Tally of full-length exponentiations and pairings."""
    g1_exp: int = 0
    g2_exp: int = 0
    gt_exp: int = 0
    pairings: int = 0

    def as_tuple(self):
        return (self.g1_exp, self.g2_exp, self.gt_exp, self.pairings)

    def merge(self, other):
        self.g1_exp += other.g1_exp
        self.g2_exp += other.g2_exp
        self.gt_exp += other.gt_exp
        self.pairings += other.pairings
        return self

    def __add__(self, other):
        return OpCounters(*self.as_tuple()).merge(other)

    def __sub__(self, other):
        return OpCounters(*(a - b for a, b in zip(self.as_tuple(), other.as_tuple())))


_scopes = threading.local()


def _active_scopes():
    stack = getattr(_scopes, "stack", None)
    if stack is None:
        stack = _scopes.stack = []
    return stack


def _bump(kind, k=1):
    for scope in _active_scopes():
        setattr(scope, kind, getattr(scope, kind) + k)


def charge(delta):
    """Add a tally measured elsewhere (e.g. in a worker thread) to the
    caller's open counting scopes."""
    for scope in _active_scopes():
        scope.merge(delta)


@contextmanager
def counting():
    """Count the operations performed by the current thread inside the block.

    Examples
    --------
    >>> with counting() as ops:
    ...     g1_exp(g1_generator(), 5)
    >>> ops.g1_exp
    1
    """
    scope = OpCounters()
    stack = _active_scopes()
    stack.append(scope)
    try:
        yield scope
    finally:
        stack.remove(scope)


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def g1_exp(point, k):
    _bump("g1_exp")
    return _backend.mul(point, k % CURVE_ORDER)


def g2_exp(point, k):
    _bump("g2_exp")
    return _backend.mul(point, k % CURVE_ORDER)


def gt_exp(x, k):
    _bump("gt_exp")
    return _backend.gt_pow(x, k % CURVE_ORDER)


def g1_mul(*points):
    """Group operation in G1 (written multiplicatively)."""
    return reduce(_backend.add, points, _backend.g1_zero)


def g2_mul(*points):
    return reduce(_backend.add, points, _backend.g2_zero)


def g1_inv(point):
    return _backend.neg(point)


def gt_mul(*xs):
    return reduce(_backend.gt_mul, xs, _backend.gt_one)


def gt_equal(x, y):
    return _backend.gt_eq(x, y)


def gt_is_identity(x):
    return _backend.gt_eq(x, _backend.gt_one)


def points_equal(a, b):
    return _backend.eq(a, b)


def is_identity(point):
    return _backend.is_zero(point)


def pairing(a, b):
    """e(a, b) for a in G1 and b in G2."""
    return multi_pairing([(a, b)])


def multi_pairing(pairs):
    """Product of e(a_i, b_i) sharing one final exponentiation.

    Each input pair counts as one pairing.
    """
    pairs = list(pairs)
    _bump("pairings", len(pairs))
    return _backend.multi_pairing(pairs)


def scalar_inv(k):
    if k % CURVE_ORDER == 0:
        raise ZeroDivisionError("zero has no inverse mod the group order")
    return pow(k, -1, CURVE_ORDER)


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1024)
def hash_to_g1(domain_tag, data):
    """Hash bytes into G1 with the SSWU hash-to-curve suite.

    Parameters
    ----------
    domain_tag : bytes
        Non-empty domain-separation tag.
    data : bytes
    """
    if not domain_tag:
        raise ValueError("domain_tag must be non-empty")
    return _backend.from_py_ecc_g1(hash_to_G1(bytes(data), bytes(domain_tag), hashlib.sha256))


def hash_to_scalar(domain_tag, transcript):
    """Wide reduction of 64 expanded bytes modulo the group order."""
    if not domain_tag:
        raise ValueError("domain_tag must be non-empty")
    wide = expand_message_xmd(bytes(transcript), bytes(domain_tag), 64, hashlib.sha256)
    return int.from_bytes(wide, "big") % CURVE_ORDER


# ---------------------------------------------------------------------------
# Encodings
# ---------------------------------------------------------------------------

def _need_length(data, size, what):
    if len(data) != size:
        raise DecodeError(DecodeReason.BAD_LENGTH,
                          f"{what} needs {size} bytes, got {len(data)}")


def serialize_scalar(k):
    if not 0 <= k < CURVE_ORDER:
        raise ValueError("scalar out of range")
    out = k.to_bytes(SCALAR_BYTES, "big")
    assert len(out) == SCALAR_BYTES
    return out


def deserialize_scalar(data):
    _need_length(data, SCALAR_BYTES, "scalar")
    k = int.from_bytes(data, "big")
    if k >= CURVE_ORDER:
        raise DecodeError(DecodeReason.NON_CANONICAL, "scalar not reduced")
    return k


def serialize_g1(point):
    out = _backend.compress_g1(point)
    assert len(out) == G1_BYTES
    return out


def serialize_g2(point):
    out = _backend.compress_g2(point)
    assert len(out) == G2_BYTES
    return out


def _check_flags(z, what):
    """Flag bits of a compressed coordinate word: (b, a)."""
    c_flag = (z >> 383) & 1
    b_flag = (z >> 382) & 1
    a_flag = (z >> 381) & 1
    if not c_flag:
        raise DecodeError(DecodeReason.NON_CANONICAL, f"{what}: compression flag unset")
    return b_flag, a_flag


def deserialize_g1(data):
    _need_length(data, G1_BYTES, "G1 element")
    z = int.from_bytes(data, "big")
    b_flag, a_flag = _check_flags(z, "G1")
    x = z % _POW_2_381
    if b_flag:
        if a_flag or x:
            raise DecodeError(DecodeReason.NON_CANONICAL, "G1: malformed infinity")
        return _backend.g1_zero
    if x >= FIELD_MODULUS:
        raise DecodeError(DecodeReason.NON_CANONICAL, "G1: x not reduced")
    if x == 0:
        raise DecodeError(DecodeReason.NON_CANONICAL, "G1: zero x is reserved for infinity")
    return _backend.decode_g1(bytes(data))


def deserialize_g2(data):
    _need_length(data, G2_BYTES, "G2 element")
    z1 = int.from_bytes(data[:48], "big")
    z2 = int.from_bytes(data[48:], "big")
    b_flag, a_flag = _check_flags(z1, "G2")
    x1 = z1 % _POW_2_381
    if z2 >= FIELD_MODULUS:
        raise DecodeError(DecodeReason.NON_CANONICAL, "G2: second word not reduced")
    if b_flag:
        if a_flag or x1 or z2:
            raise DecodeError(DecodeReason.NON_CANONICAL, "G2: malformed infinity")
        return _backend.g2_zero
    if x1 >= FIELD_MODULUS:
        raise DecodeError(DecodeReason.NON_CANONICAL, "G2: x not reduced")
    if x1 == 0 and z2 == 0:
        raise DecodeError(DecodeReason.NON_CANONICAL, "G2: zero x is reserved for infinity")
    return _backend.decode_g2(bytes(data))


def gt_bytes(x):
    """Fixed-width bytes of a GT element, for hashing into transcripts only."""
    return _backend.gt_bytes(x)


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

class RandomSource:
    """Source of scalars and nonces.

    With a seed, draws come from ``numpy.random.default_rng`` and every
    downstream byte is reproducible; without one, from the OS CSPRNG.
    Draws are serialized by a lock so one source may be shared by threads.
    """

    def __init__(self, seed=None):
        self.seed = seed
        self._rng = np.random.default_rng(seed) if seed is not None else None
        self._lock = threading.Lock()

    def bytes(self, n):
        with self._lock:
            if self._rng is None:
                return secrets.token_bytes(n)
            return self._rng.bytes(n)

    def scalar(self, nonzero=True, exclude_one=False):
        while True:
            k = int.from_bytes(self.bytes(64), "big") % CURVE_ORDER
            if nonzero and k == 0:
                continue
            if exclude_one and k == 1:
                continue
            return k

    def integers(self, low, high):
        """Uniform integer in [low, high), for simulator choices."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        span = high - low
        return low + int.from_bytes(self.bytes(8), "big") % span


_default_rng = RandomSource()


def default_rng():
    return _default_rng


# ---------------------------------------------------------------------------
# Public parameters
# ---------------------------------------------------------------------------

PARAMS_DST = b"AQKD/v1/params"


@dataclass(frozen=True)
class PublicParams:
    """Generators G, G-hat, Y and attribute bases H_1..H_ell.

    Y and the H_i are hash-derived from fixed labels, so anyone can recompute
    them. Index ``i`` of ``h`` is attribute ``i`` (0-based).
    """
    ell: int
    g: tuple
    g_hat: tuple
    y: tuple
    h: tuple


@lru_cache(maxsize=None)
def setup(max_attributes):
    """Public parameters for at most `max_attributes` attributes.

    >>> params = setup(4)
    >>> len(params.h)
    4
    """
    if max_attributes < 1:
        raise ValueError("max_attributes must be >= 1")
    y = hash_to_g1(PARAMS_DST, b"AQKD/v1/Y")
    h = tuple(hash_to_g1(PARAMS_DST, f"AQKD/v1/H/{i}".encode()) for i in range(max_attributes))
    return PublicParams(ell=max_attributes, g=_backend.g1, g_hat=_backend.g2, y=y, h=h)
