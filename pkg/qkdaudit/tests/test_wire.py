import pytest

from qkdaudit.group import DecodeError, DecodeReason
from qkdaudit.netsim import SessionTranscript
from qkdaudit.policy import encode_policy
from qkdaudit.wire import (
    MAGIC,
    SID_BYTES,
    CredentialRecord,
    SessionId,
    decode_credential_record,
    decode_credential_store,
    deserialize_hop_message,
    encode_credential_record,
    encode_credential_store,
    hop_bytes,
    payload_bytes,
    serialize_hop_message,
)


def _header_len(policy):
    return len(MAGIC) + 1 + SID_BYTES + len(encode_policy(policy)) + 2


def test_payload_for_hundred_repeaters():
    """100 hops, 20 attributes, 10 disclosed"""
    assert payload_bytes(100, 20, 10) == 68864
    assert hop_bytes(20, 10) == 688


def test_payload_matches_delivered_messages(honest_result, policy):
    # two paths of two hops each
    assert honest_result.payload_bytes == payload_bytes(4, policy.ell, policy.d)


def test_message_length(honest_result, policy):
    wire = honest_result.transcript.messages[0]
    expected = _header_len(policy) + 2 * hop_bytes(policy.ell, policy.d) + 1 + 64
    assert len(wire) == expected


def test_message_reencodes_identically(honest_result):
    wire = honest_result.transcript.messages[1]
    assert serialize_hop_message(deserialize_hop_message(wire)) == wire


@pytest.mark.parametrize("cut", [1, 64, 500])
def test_truncated_message(honest_result, cut):
    wire = honest_result.transcript.messages[0]
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(wire[:-cut])
    assert err.value.reason is DecodeReason.BAD_LENGTH


def test_trailing_bytes(honest_result):
    wire = honest_result.transcript.messages[0]
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(wire + b"\x00")
    assert err.value.reason is DecodeReason.BAD_LENGTH
    assert err.value.offset == len(wire)


def test_header_errors(honest_result):
    wire = bytearray(honest_result.transcript.messages[0])
    bad = bytes(b"XQKD" + wire[4:])
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(bad)
    assert err.value.offset == 0
    bad = bytes(wire[:4] + b"\x09" + wire[5:])
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(bad)
    assert err.value.offset == 4
    bad = bytes(wire[:-65] + b"\x02" + wire[-64:])
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(bad)
    assert err.value.reason is DecodeReason.NON_CANONICAL
    assert err.value.offset == len(wire) - 65


def test_error_offset_points_at_bad_field(honest_result, policy):
    """A broken first pseudonym is reported where the first hop starts"""
    wire = bytearray(honest_result.transcript.messages[0])
    start = _header_len(policy)
    wire[start] &= 0x7F
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(bytes(wire))
    assert err.value.offset == start
    assert err.value.reason is DecodeReason.NON_CANONICAL


def test_unreduced_response_rejected(honest_result, policy):
    wire = bytearray(honest_result.transcript.messages[0])
    at = _header_len(policy) + 240  # challenge c of hop 0
    wire[at:at + 32] = b"\xff" * 32
    with pytest.raises(DecodeError) as err:
        deserialize_hop_message(bytes(wire))
    assert err.value.offset == at
    assert err.value.reason is DecodeReason.NON_CANONICAL


def test_session_id():
    sid = SessionId(nonce=b"\x01" * 16, timestamp=1700000000)
    assert SessionId.from_bytes(sid.to_bytes()) == sid
    with pytest.raises(DecodeError):
        SessionId.from_bytes(b"\x00" * 23)
    with pytest.raises(ValueError):
        SessionId(nonce=b"\x01" * 15, timestamp=0)


def test_credential_store(node_keys, attrs, credential):
    record = CredentialRecord(node_id="n1", pk=node_keys.pk, attrs=attrs, cred=credential)
    back = decode_credential_record(encode_credential_record(record), len(attrs))
    assert back.node_id == "n1"
    assert back.attrs.values == attrs.values
    assert back.cred == credential
    ell, records = decode_credential_store(encode_credential_store([record, record], 2))
    assert ell == 2 and len(records) == 2
    with pytest.raises(DecodeError):
        decode_credential_store(encode_credential_store([record], 2)[:-1])


def test_transcript_file(honest_result):
    data = honest_result.transcript.to_bytes()
    back = SessionTranscript.from_bytes(data)
    assert back.messages == honest_result.transcript.messages
    assert back.exit_keys == honest_result.transcript.exit_keys
    with pytest.raises(DecodeError):
        SessionTranscript.from_bytes(data + b"\x00")
    with pytest.raises(DecodeError):
        SessionTranscript.from_bytes(data[:-10])
