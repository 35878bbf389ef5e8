"""Durable ledger behavior: keys, latest-success selection, views, recovery."""

import pytest

from rsam.protocol import Lifecycle, body_digest
from rsam.store import (
    RequestRecord,
    RequestStore,
    ResponseOutcome,
    ResponseRecord,
    StoreCorrupt,
    outcome_for_status,
)


def make_record(base_key="dev:1:%2Fx", state=Lifecycle.RECEIVED, **kw) -> RequestRecord:
    body = kw.pop("body", b"payload")
    defaults = dict(
        base_key=base_key,
        device_id="dev",
        method="POST",
        target_path="/x",
        body_digest=body_digest(body),
        body=body,
        lifecycle=state,
        trial_count=1,
        forced=False,
        created_at=1000,
    )
    defaults.update(kw)
    return RequestRecord(**defaults)


def make_response(base_key="dev:1:%2Fx", status=200, received_at=1000, body=b"ok", trial=1):
    return ResponseRecord(
        base_key=base_key,
        status_code=status,
        body=body,
        content_type="text/plain",
        outcome=outcome_for_status(status),
        received_at=received_at,
        trial=trial,
    )


@pytest.fixture
def store(tmp_path):
    s = RequestStore(tmp_path / "store")
    yield s
    s.close()


def test_outcome_classification_boundaries():
    assert outcome_for_status(200) is ResponseOutcome.SUCCESS
    assert outcome_for_status(299) is ResponseOutcome.SUCCESS
    assert outcome_for_status(300) is ResponseOutcome.FAILURE
    assert outcome_for_status(199) is ResponseOutcome.FAILURE
    assert outcome_for_status(500) is ResponseOutcome.FAILURE


def test_put_get_roundtrip(store):
    rec = make_record()
    store.put_request(rec)
    assert store.get_request(rec.base_key) == rec


def test_get_absent(store):
    assert store.get_request("nope") is None


def test_latest_succeeded_picks_max_received_at(store):
    store.put_request(make_record())
    store.add_response(make_response(received_at=5, body=b"old"), Lifecycle.SUCCEEDED, 5)
    store.add_response(make_response(received_at=9, body=b"new"), Lifecycle.SUCCEEDED, 9)
    latest = store.latest_succeeded_response("dev:1:%2Fx")
    assert latest is not None and latest.body == b"new"


def test_latest_succeeded_ignores_failures(store):
    store.put_request(make_record())
    store.add_response(make_response(status=500, received_at=9), Lifecycle.FAILED, 9)
    assert store.latest_succeeded_response("dev:1:%2Fx") is None


def test_latest_succeeded_empty_store(store):
    assert store.latest_succeeded_response("dev:1:%2Fx") is None


def test_latest_succeeded_ttl_cutoff(store):
    store.put_request(make_record())
    store.add_response(make_response(received_at=100), Lifecycle.SUCCEEDED, 100)
    assert store.latest_succeeded_response("dev:1:%2Fx", not_before=50) is not None
    assert store.latest_succeeded_response("dev:1:%2Fx", not_before=101) is None


def test_response_bytes_stored_verbatim(store):
    blob = bytes(range(256)) * 17 + b"\x00\xff trailing \r\n"
    store.put_request(make_record())
    store.add_response(make_response(body=blob), Lifecycle.SUCCEEDED, 1)
    assert store.latest_succeeded_response("dev:1:%2Fx").body == blob


def test_list_requests_empty(store):
    assert store.list_requests() == []


def test_list_requests_filters_and_order(store):
    for i in range(3):
        store.put_request(
            make_record(base_key=f"devA:{i}:%2Fx", device_id="devA", created_at=i)
        )
    store.put_request(make_record(base_key="devB:9:%2Fx", device_id="devB", created_at=9))
    assert len(store.list_requests(device_id="devA")) == 3
    everything = store.list_requests()
    assert [item["created_at"] for item in everything] == [9, 2, 1, 0]


def test_list_requests_state_filter(store):
    store.put_request(make_record(base_key="k1", state=Lifecycle.FAILED))
    store.put_request(make_record(base_key="k2", state=Lifecycle.SUCCEEDED))
    failed = store.list_requests(state="FAILED")
    assert [item["base_key"] for item in failed] == ["k1"]


def test_forwarded_without_response_surfaces_as_doubt_window(store):
    store.put_request(make_record(base_key="k1", state=Lifecycle.FORWARDED, forwarded_at=2))
    listed = store.list_requests()
    assert listed[0]["state"] == "IN_DOUBT_WINDOW"
    # filterable under both names
    assert store.list_requests(state="IN_DOUBT_WINDOW")
    assert store.list_requests(state="FORWARDED")


def test_deleted_records_hidden_everywhere(store):
    store.put_request(make_record(base_key="k1"))
    store.mark_deleted("k1")
    assert store.get_request("k1") is None
    assert store.get_request("k1", include_deleted=True) is not None
    assert store.list_requests() == []


def test_trial_count_never_decreases(store):
    store.put_request(make_record(trial_count=3))
    store.bump_trial("dev:1:%2Fx", 2)
    assert store.get_request("dev:1:%2Fx").trial_count == 3
    store.bump_trial("dev:1:%2Fx", 7)
    assert store.get_request("dev:1:%2Fx").trial_count == 7


def test_durability_across_reopen(tmp_path):
    first = RequestStore(tmp_path / "store")
    first.put_request(make_record())
    first.add_response(make_response(), Lifecycle.SUCCEEDED, 1)
    first.close()

    second = RequestStore(tmp_path / "store")
    report = second.recover_on_startup()
    assert report["requests"] == 1
    assert second.latest_succeeded_response("dev:1:%2Fx").body == b"ok"
    second.close()


def test_recover_preserves_doubt_window(tmp_path):
    first = RequestStore(tmp_path / "store")
    first.put_request(make_record(state=Lifecycle.FORWARDED, forwarded_at=2))
    first.close()

    second = RequestStore(tmp_path / "store")
    report = second.recover_on_startup()
    assert report["in_doubt_window"] == 1
    assert second.get_request("dev:1:%2Fx").lifecycle is Lifecycle.FORWARDED
    second.close()


def test_recover_rejects_corrupt_store(tmp_path):
    directory = tmp_path / "store"
    store = RequestStore(directory)
    store.put_request(make_record())
    store.close()
    db = directory / "rsam-gateway.db"
    db.write_bytes(b"not a database at all" + db.read_bytes()[40:])
    with pytest.raises(StoreCorrupt):
        broken = RequestStore(directory)
        broken.recover_on_startup()
