"""Identity generation, wire codec and validation."""

import pytest
from hypothesis import given, strategies as st

from rsam.protocol import (
    ClockSkew,
    EmptyDeviceId,
    InvalidTrial,
    MalformedId,
    encode_id,
    generate_client_id,
    parse_id,
    validate_id,
)

NOW = 1500000000000


class TestGenerate:
    def test_base_key_is_encoded_concatenation(self):
        cid = generate_client_id("devA", NOW, "/feeds/posts", 1, False)
        assert cid.base_key == "devA:1500000000000:%2Ffeeds%2Fposts"
        assert cid.trial == 1

    def test_retry_keeps_base_key_and_bumps_trial(self):
        first = generate_client_id("devA", NOW, "/feeds/posts", 1, False)
        second = generate_client_id("devA", NOW, "/feeds/posts", 2, False)
        assert second.base_key == first.base_key
        assert second.trial == 2
        assert first.next_trial() == second

    def test_empty_device_rejected(self):
        with pytest.raises(EmptyDeviceId):
            generate_client_id("", 1, "/x", 1, False)

    def test_trial_below_one_rejected(self):
        with pytest.raises(InvalidTrial):
            generate_client_id("dev", 1, "/x", 0, False)

    def test_deterministic(self):
        a = generate_client_id("dev", NOW, "/p", 3, True)
        b = generate_client_id("dev", NOW, "/p", 3, True)
        assert a == b


class TestWireCodec:
    def test_encode_layout(self):
        cid = generate_client_id("devA", NOW, "/feeds/posts", 1, False)
        assert encode_id(cid) == "devA:1500000000000:%2Ffeeds%2Fposts:1:0"

    def test_parse_trial_and_forced(self):
        cid = parse_id("devA:1500000000000:%2Ffeeds%2Fposts:3:1")
        assert cid.device_id == "devA"
        assert cid.sent_at == NOW
        assert cid.service_path == "/feeds/posts"
        assert cid.trial == 3
        assert cid.forced is True

    @pytest.mark.parametrize(
        "raw",
        [
            "devA:abc:%2Fx:1:0",  # non-numeric timestamp
            "devA:1:%2Fx:zero:0",  # non-numeric trial
            "devA:1:%2Fx:0:0",  # trial below one
            "devA:1:%2Fx:1:2",  # bad forced flag
            "devA:1:%2Fx:1",  # too few fields
            "devA:1:%2Fx:1:0:extra",  # too many fields
            ":1:%2Fx:1:0",  # empty device token
            "devA:1:%2x:1:0",  # truncated percent escape
            "dev a:1:%2Fx:1:0",  # raw space in device token
            "garbage",
            "",
        ],
    )
    def test_malformed_rejected(self, raw):
        with pytest.raises(MalformedId):
            parse_id(raw)


DEVICE_IDS = st.text(min_size=1, max_size=40)
PATHS = st.text(max_size=60)


class TestRoundTrip:
    @given(
        device=DEVICE_IDS,
        sent_at=st.integers(min_value=0, max_value=10**14),
        path=PATHS,
        trial=st.integers(min_value=1, max_value=10**6),
        forced=st.booleans(),
    )
    def test_parse_inverts_encode(self, device, sent_at, path, trial, forced):
        cid = generate_client_id(device, sent_at, path, trial, forced)
        assert parse_id(encode_id(cid)) == cid

    @given(
        device=DEVICE_IDS,
        sent_at=st.integers(min_value=0, max_value=10**14),
        path=PATHS,
        trial=st.integers(min_value=1, max_value=10**6),
        forced=st.booleans(),
    )
    def test_base_key_ignores_behavioral_part(self, device, sent_at, path, trial, forced):
        plain = generate_client_id(device, sent_at, path, 1, False)
        varied = generate_client_id(device, sent_at, path, trial, forced)
        assert plain.base_key == varied.base_key

    @given(
        left=st.tuples(DEVICE_IDS, st.integers(min_value=0, max_value=10**12), PATHS),
        right=st.tuples(DEVICE_IDS, st.integers(min_value=0, max_value=10**12), PATHS),
    )
    def test_base_key_injective_over_identity_triples(self, left, right):
        key_l = generate_client_id(left[0], left[1], left[2]).base_key
        key_r = generate_client_id(right[0], right[1], right[2]).base_key
        if left != right:
            assert key_l != key_r
        else:
            assert key_l == key_r


class TestValidate:
    def test_current_id_accepted(self):
        cid = generate_client_id("dev", NOW, "/x")
        assert validate_id(encode_id(cid), now_ms=NOW) == cid

    def test_future_beyond_skew_rejected(self):
        ten_min = 10 * 60 * 1000
        cid = generate_client_id("dev", NOW + ten_min, "/x")
        with pytest.raises(ClockSkew):
            validate_id(encode_id(cid), now_ms=NOW, max_skew_ms=5 * 60 * 1000)

    def test_future_at_skew_boundary_accepted(self):
        skew = 5 * 60 * 1000
        cid = generate_client_id("dev", NOW + skew, "/x")
        assert validate_id(encode_id(cid), now_ms=NOW, max_skew_ms=skew) == cid

    def test_old_ids_stay_valid(self):
        cid = generate_client_id("dev", 1, "/x")
        assert validate_id(encode_id(cid), now_ms=NOW) == cid

    def test_garbage_rejected(self):
        with pytest.raises(MalformedId):
            validate_id("garbage", now_ms=NOW)
