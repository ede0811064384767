import pytest

from qkdaudit.group import (
    BACKEND_ENV,
    CURVE_ORDER,
    FIELD_MODULUS,
    ArkworksBackend,
    DecodeError,
    DecodeReason,
    PyEccBackend,
    RandomSource,
    backend_name,
    counting,
    deserialize_g1,
    deserialize_g2,
    deserialize_scalar,
    g1_exp,
    g1_generator,
    g2_exp,
    g2_generator,
    gt_equal,
    gt_exp,
    hash_to_g1,
    hash_to_scalar,
    is_identity,
    load_backend,
    multi_pairing,
    pairing,
    points_equal,
    serialize_g1,
    serialize_g2,
    serialize_scalar,
    setup,
)

G1 = g1_generator()
G2 = g2_generator()

FLAG_C = 1 << 383
FLAG_B = 1 << 382
FLAG_A = 1 << 381


def _word(z):
    return z.to_bytes(48, "big")


def _x_with(qr):
    """Smallest x >= 1 for which x^3 + 4 is (or is not) a square mod q."""
    x = 1
    while True:
        rhs = (x ** 3 + 4) % FIELD_MODULUS
        is_square = pow(rhs, (FIELD_MODULUS - 1) // 2, FIELD_MODULUS) == 1
        if is_square == qr:
            return x
        x += 1


def test_counting_scopes_nest():
    """Inner and outer scopes both see operations done inside the inner one"""
    with counting() as outer:
        g1_exp(G1, 5)
        with counting() as inner:
            g2_exp(G2, 3)
            g1_exp(G1, 7)
    assert inner.as_tuple() == (1, 1, 0, 0), f"inner scope counted {inner}"
    assert outer.as_tuple() == (2, 1, 0, 0), f"outer scope counted {outer}"


def test_exponent_reduced_mod_order():
    assert points_equal(g1_exp(G1, CURVE_ORDER + 2), g1_exp(G1, 2))
    assert is_identity(g1_exp(G1, CURVE_ORDER))


def test_multi_pairing_is_product_and_counted():
    """e(6G, H) = e(G, 2H) * e(4G, H); three pairings are charged"""
    with counting() as ops:
        lhs = pairing(g1_exp(G1, 6), G2)
        rhs = multi_pairing([(G1, g2_exp(G2, 2)), (g1_exp(G1, 4), G2)])
    assert gt_equal(lhs, rhs), "pairing is not bilinear"
    assert ops.pairings == 3
    with counting() as ops:
        assert gt_equal(gt_exp(pairing(G1, G2), 6), lhs)
    assert (ops.gt_exp, ops.pairings) == (1, 1)


def test_point_encodings_round_trip():
    p = g1_exp(G1, 12345)
    q = g2_exp(G2, 67890)
    assert points_equal(deserialize_g1(serialize_g1(p)), p)
    assert points_equal(deserialize_g2(serialize_g2(q)), q)
    assert len(serialize_g1(p)) == 48 and len(serialize_g2(q)) == 96


def test_infinity_encoding():
    assert is_identity(deserialize_g1(_word(FLAG_C | FLAG_B)))
    with pytest.raises(DecodeError) as err:
        deserialize_g1(_word(FLAG_C | FLAG_B | FLAG_A))
    assert err.value.reason is DecodeReason.NON_CANONICAL


@pytest.mark.parametrize("data, reason", [
    (b"\x00" * 47, DecodeReason.BAD_LENGTH),
    (_word(FIELD_MODULUS), DecodeReason.NON_CANONICAL),             # compression flag unset
    (_word(FLAG_C | FIELD_MODULUS), DecodeReason.NON_CANONICAL),    # x >= q
    (_word(FLAG_C), DecodeReason.NON_CANONICAL),                    # x == 0 without infinity flag
])
def test_g1_rejects_malformed_words(data, reason):
    with pytest.raises(DecodeError) as err:
        deserialize_g1(data)
    assert err.value.reason is reason


def test_g1_not_on_curve():
    x = _x_with(qr=False)
    with pytest.raises(DecodeError) as err:
        deserialize_g1(_word(FLAG_C | x))
    assert err.value.reason is DecodeReason.NOT_ON_CURVE


def test_g1_not_in_subgroup():
    """Curve points outside the prime-order subgroup are refused"""
    x = _x_with(qr=True)
    with pytest.raises(DecodeError) as err:
        deserialize_g1(_word(FLAG_C | x))
    assert err.value.reason is DecodeReason.NOT_IN_SUBGROUP


def test_g2_rejects_short_and_unreduced():
    with pytest.raises(DecodeError) as err:
        deserialize_g2(b"\x00" * 95)
    assert err.value.reason is DecodeReason.BAD_LENGTH
    good = serialize_g2(G2)
    with pytest.raises(DecodeError) as err:
        deserialize_g2(good[:48] + FIELD_MODULUS.to_bytes(48, "big"))
    assert err.value.reason is DecodeReason.NON_CANONICAL


def test_scalar_encoding():
    assert deserialize_scalar(serialize_scalar(CURVE_ORDER - 1)) == CURVE_ORDER - 1
    with pytest.raises(DecodeError) as err:
        deserialize_scalar(CURVE_ORDER.to_bytes(32, "big"))
    assert err.value.reason is DecodeReason.NON_CANONICAL
    with pytest.raises(ValueError):
        serialize_scalar(-1)


def test_decode_error_shift():
    err = DecodeError(DecodeReason.BAD_LENGTH, "short", 3).shifted(100)
    assert err.offset == 103
    assert "at byte 103" in str(err)


def test_hashing_is_deterministic_and_separated():
    assert hash_to_scalar(b"tag", b"data") == hash_to_scalar(b"tag", b"data")
    assert hash_to_scalar(b"tag", b"data") != hash_to_scalar(b"other", b"data")
    assert 0 <= hash_to_scalar(b"tag", b"data") < CURVE_ORDER
    assert points_equal(hash_to_g1(b"tag", b"x"), hash_to_g1(b"tag", b"x"))
    assert not points_equal(hash_to_g1(b"tag", b"x"), hash_to_g1(b"tag", b"y"))
    with pytest.raises(ValueError):
        hash_to_g1(b"", b"x")


def test_seeded_random_source_is_reproducible():
    a, b = RandomSource(42), RandomSource(42)
    assert [a.scalar() for _ in range(3)] == [b.scalar() for _ in range(3)]
    assert a.bytes(16) == b.bytes(16)
    assert RandomSource(1).scalar() != RandomSource(2).scalar()
    assert 3 <= RandomSource(0).integers(3, 7) < 7
    with pytest.raises(ValueError):
        RandomSource(0).integers(5, 5)


def test_setup_is_cached_and_independent_of_ell():
    params = setup(3)
    assert setup(3) is params
    assert len(params.h) == 3
    assert points_equal(setup(5).h[2], params.h[2]), "H_i must not depend on ell"
    assert not points_equal(params.h[0], params.h[1])
    with pytest.raises(ValueError):
        setup(0)


def test_backend_choice(monkeypatch):
    assert load_backend("py_ecc").name == "py_ecc"
    monkeypatch.setenv(BACKEND_ENV, "py_ecc")
    assert load_backend().name == "py_ecc"
    with pytest.raises(ValueError, match="Valid options"):
        load_backend("relic")
    assert backend_name() in ("native", "py_ecc")


def test_native_backend_agrees_with_py_ecc():
    """Same scalars give the same encodings, and the pairing is bilinear"""
    pytest.importorskip("py_arkworks_bls12381")
    native, reference = ArkworksBackend(), PyEccBackend()
    assert native.self_check() == []
    k = RandomSource(90).scalar()
    assert native.compress_g1(native.mul(native.g1, k)) == \
        reference.compress_g1(reference.mul(reference.g1, k))
    assert native.compress_g2(native.mul(native.g2, k)) == \
        reference.compress_g2(reference.mul(reference.g2, k))
    lhs = native.multi_pairing([(native.mul(native.g1, 6), native.g2)])
    rhs = native.multi_pairing([(native.g1, native.mul(native.g2, 2)),
                                (native.mul(native.g1, 4), native.g2)])
    assert native.gt_eq(lhs, rhs)
    assert native.gt_eq(native.gt_pow(native.multi_pairing([(native.g1, native.g2)]), 6), lhs)
    point = reference.mul(reference.g1, k)
    assert native.compress_g1(native.from_py_ecc_g1(point)) == reference.compress_g1(point)


def test_native_backend_decode_reasons():
    pytest.importorskip("py_arkworks_bls12381")
    native = ArkworksBackend()
    with pytest.raises(DecodeError) as err:
        native.decode_g1(_word(FLAG_C | _x_with(qr=False)))
    assert err.value.reason is DecodeReason.NOT_ON_CURVE
    with pytest.raises(DecodeError) as err:
        native.decode_g1(_word(FLAG_C | _x_with(qr=True)))
    assert err.value.reason is DecodeReason.NOT_IN_SUBGROUP
