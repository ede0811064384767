import pytest

from qkdaudit.group import (
    CURVE_ORDER,
    DecodeError,
    DecodeReason,
    counting,
    g1_mul,
    points_equal,
)
from qkdaudit.policy import (
    AttributeVector,
    Policy,
    attribute_scalar,
    decode_policy,
    encode_policy,
    evaluate,
    level_label,
    pedersen_message,
)


def test_policy_normalizes_required_order():
    a = Policy(policy_id=b"p", ell=4, required={3: 7, 1: 5})
    b = Policy(policy_id=b"p", ell=4, required=[(1, 5), (3, 7)])
    assert a == b
    assert a.disclosed == (1, 3)
    assert a.hidden == (0, 2)
    assert a.d == 2
    assert a.required_map() == {1: 5, 3: 7}


@pytest.mark.parametrize("ell, required", [
    (0, {}),
    (2, {2: 1}),
    (2, [(0, 1), (0, 2)]),
    (2, {0: CURVE_ORDER}),
])
def test_policy_validation(ell, required):
    with pytest.raises(ValueError):
        Policy(policy_id=b"p", ell=ell, required=required)


def test_evaluate(policy, attrs):
    assert evaluate(policy, attrs)
    assert not evaluate(policy, AttributeVector.from_labels(["class:other", "site:lab"]))
    with pytest.raises(ValueError):
        evaluate(policy, AttributeVector(values=(1,)))


def test_empty_policy_accepts_everything():
    assert evaluate(Policy(policy_id=b"any", ell=2), AttributeVector(values=(1, 2)))


def test_policy_encoding(policy):
    data = encode_policy(policy)
    # id length, id, ell, d, one (index, value) pair
    assert len(data) == 2 + len(b"repeaters") + 4 + 2 + 32
    assert decode_policy(data) == policy
    with pytest.raises(DecodeError) as err:
        decode_policy(data + b"\x00")
    assert err.value.reason is DecodeReason.BAD_LENGTH
    with pytest.raises(DecodeError) as err:
        decode_policy(data[:-1])
    assert err.value.reason is DecodeReason.BAD_LENGTH


def test_policy_decoding_rejects_unsorted_indices():
    data = bytearray(encode_policy(Policy(policy_id=b"", ell=3, required={0: 1, 2: 1})))
    # swap index 0 and index 2
    data[6:8] = (2).to_bytes(2, "big")
    data[40:42] = (0).to_bytes(2, "big")
    with pytest.raises(DecodeError) as err:
        decode_policy(bytes(data))
    assert err.value.reason is DecodeReason.NON_CANONICAL
    assert err.value.offset == 40


def test_attribute_labels():
    attrs = AttributeVector.from_labels(["class:repeater", "site:lab"])
    assert attrs[0] == attribute_scalar("class:repeater")
    assert attrs.labels == ("class:repeater", "site:lab")
    assert AttributeVector.from_bytes(attrs.to_bytes(), 2).values == attrs.values
    with pytest.raises(ValueError):
        AttributeVector(values=(CURVE_ORDER,))


@pytest.mark.parametrize("level, expected", [(0, "cert<1"), (1, "cert>=1"), (3, "cert>=2"),
                                             (9, "cert>=4")])
def test_level_label(level, expected):
    assert level_label("cert", level, [1, 2, 4]) == expected


def test_level_label_needs_sorted_thresholds():
    with pytest.raises(ValueError):
        level_label("cert", 1, [4, 2])
    with pytest.raises(ValueError):
        level_label("cert", 1, [])


def test_pedersen_message_costs_one_exponentiation_per_attribute(params, node_keys, attrs):
    with counting() as ops:
        pedersen_message(node_keys.pk, attrs, params)
    assert ops.g1_exp == params.ell
    with pytest.raises(ValueError):
        pedersen_message(node_keys.pk, AttributeVector(values=(1,)), params)


def test_pedersen_message_of_zero_attributes_is_the_key(params, node_keys):
    zeros = AttributeVector(values=(0,) * params.ell)
    assert points_equal(pedersen_message(node_keys.pk, zeros, params), node_keys.pk)


@pytest.mark.parametrize("j", [0, 1])
def test_pedersen_message_absorbs_a_shifted_base(params, node_keys, attrs, j):
    """(pk * H_j, a_j - 1) commits to the same message as (pk, a_j)"""
    values = list(attrs.values)
    values[j] = (values[j] - 1) % CURVE_ORDER
    shifted = pedersen_message(g1_mul(node_keys.pk, params.h[j]),
                               AttributeVector(values=tuple(values)), params)
    assert points_equal(shifted, pedersen_message(node_keys.pk, attrs, params))
