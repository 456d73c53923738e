import datetime as dt
import json

import pytest
from hypothesis import given, settings, strategies as st

from oracles import chain_links_ok, fold_writes, read_ledger_file, state_digest
from slachain import codec
from slachain.ledger import (
    CONTRACT_KEY,
    EndorsementRejected,
    Ledger,
    LedgerConfig,
    LedgerError,
    LoadError,
    LogicalClock,
    TxValidation,
    block_spans,
    ledger_bytes,
    ledger_from_bytes,
    load,
    persist,
    verify_chain,
    verify_bytes,
    verify_file,
)
from slachain.runtime import ResponseStatus

GW = "examine_captured_eoi_gateway_slo"
UTC = dt.timezone.utc


def payload(id_="1", avail="99.95", loss="0.2"):
    return f'{{"GATEWAY_AVAILABILITY": {avail}, "PACKET_LOSS": {loss}, "ID": "{id_}"}}'


def fill(ledger, contract, n, ids=("1", "2", "3")):
    for i in range(n):
        avail = "99.0" if i % 3 == 0 else "99.95"
        ledger.submit(contract, f"{GW}_update", [payload(ids[i % len(ids)], avail)], "SP1")


def test_genesis():
    ledger = Ledger()
    assert ledger.height == 0
    genesis = ledger.tip
    assert genesis.prev_hash == bytes(32)
    assert genesis.timestamp == dt.datetime(2020, 1, 1, tzinfo=UTC)
    assert LedgerConfig.from_json(genesis.transactions[0].args[0]) == ledger.config
    assert verify_chain(ledger).ok


@pytest.mark.parametrize("kwargs", [
    {"orgs": ()}, {"orgs": ("A", "A")}, {"endorse_quorum": 0}, {"endorse_quorum": 4}, {"block_cut_size": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        LedgerConfig(**kwargs)


def test_auto_cut_and_timestamps(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=4))
    fill(ledger, rpm_contract, 10)
    assert ledger.height == 2 and ledger.pending == 2
    ledger.commit_pending()
    assert [len(b.transactions) for b in ledger.blocks] == [1, 4, 4, 2]
    assert [b.timestamp.second for b in ledger.blocks] == [0, 1, 2, 3]
    assert ledger.cut_block() is None
    empty = ledger.cut_block(flush=True)
    assert empty.transactions == () and ledger.height == 4


def test_handler_clock_is_block_timestamp(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=2))
    for _ in range(5):
        ledger.submit(rpm_contract, f"{GW}_update", [payload(avail="1")], "SP2")
    ledger.commit_pending()
    records = json.loads(ledger.get_state("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_1"))
    stamps = [r["timestamp"] for r in records]
    assert stamps == ["2020-01-01T00:00:01Z"] * 2 + ["2020-01-01T00:00:02Z"] * 2 + ["2020-01-01T00:00:03Z"]
    history = ledger.get_history("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1")
    assert [t.second for _, t in history] == [1, 1, 2, 2, 3]


def test_fifo_order_preserved(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=3))
    ids = [ledger.submit(rpm_contract, f"{GW}_update", [payload(str(i))], "SP1") for i in range(8)]
    ledger.commit_pending()
    committed = [tx.tx_id for b in ledger.blocks[1:] for tx in b.transactions]
    assert committed == ids


def test_identical_submissions_get_distinct_ids(rpm_contract):
    ledger = Ledger()
    a = ledger.submit(rpm_contract, f"{GW}_update", [payload()], "SP1")
    b = ledger.submit(rpm_contract, f"{GW}_update", [payload()], "SP1")
    assert a != b


def test_quorum_and_refusal(rpm_contract):
    ledger = Ledger(LedgerConfig(endorse_quorum=2))
    ledger.peers["SP2"].refuse = True
    ledger.submit(rpm_contract, f"{GW}_update", [payload()], "SP1")   # SP1 + HCP
    ledger.peers["HCP"].refuse = True
    with pytest.raises(EndorsementRejected):
        ledger.submit(rpm_contract, f"{GW}_update", [payload()], "SP1")
    ledger.commit_pending()
    [tx] = ledger.tip.transactions
    assert tx.endorsements == ("HCP", "SP1")


def test_diverging_endorsement_rejected(rpm_contract):
    ledger = Ledger(LedgerConfig(endorse_quorum=3))
    ledger.peers["HCP"].tamper = lambda writes: tuple((k, v + b" ") for k, v in writes)
    with pytest.raises(EndorsementRejected):
        ledger.submit(rpm_contract, f"{GW}_update", [payload()], "SP1")
    assert ledger.pending == 0 and ledger.world_state == {}


def test_unknown_submitter(rpm_contract):
    with pytest.raises(LedgerError):
        Ledger().submit(rpm_contract, f"{GW}_update", [payload()], "mallory")


def test_failed_transaction_committed(rpm_contract):
    ledger = Ledger()
    ledger.submit(rpm_contract, "no_such_method", [], "SP1")
    ledger.submit(rpm_contract, f"{GW}_update", ['{"PACKET_LOSS": 0, "ID": "1"}'], "SP1")
    ledger.commit_pending()
    bad, missing = ledger.tip.transactions
    assert bad.validation is TxValidation.FAILED and bad.writes == ()
    assert missing.validation is TxValidation.FAILED
    assert missing.response_status is ResponseStatus.ERROR
    # missing-metric evidence is kept; the incomplete update is not
    assert [k for k, _ in missing.writes] == ["EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_1"]
    assert ledger.get_state("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1") is None


def test_mvcc_conflict_invalidates_later_tx(rpm_contract):
    ledger = Ledger()
    a = ledger.endorse(rpm_contract, f"{GW}_update", [payload(avail="1")], "SP1")
    b = ledger.endorse(rpm_contract, f"{GW}_update", [payload(avail="2")], "SP2")
    ledger.order(a)
    ledger.order(b)
    ledger.commit_pending()
    first, second = ledger.tip.transactions
    assert first.validation is TxValidation.VALID
    assert second.validation is TxValidation.INVALID
    records = json.loads(ledger.get_state("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_1"))
    assert [r["value"] for r in records] == ["1"]
    assert verify_chain(ledger).ok


def test_pending_reads_see_queued_writes(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=100))
    for v in ("1", "2", "3"):
        ledger.submit(rpm_contract, f"{GW}_update", [payload(avail=v)], "SP1")
    ledger.commit_pending()
    assert all(tx.validation is TxValidation.VALID for tx in ledger.tip.transactions)
    records = json.loads(ledger.get_state("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_1"))
    assert [r["value"] for r in records] == ["1", "2", "3"]


def test_query_is_read_only(rpm_contract):
    ledger = Ledger()
    fill(ledger, rpm_contract, 3)
    ledger.commit_pending()
    height, state = ledger.height, dict(ledger.world_state)
    resp = ledger.query(rpm_contract, f"get_latest_{GW}_update", ["1"])
    assert resp.ok and json.loads(resp.payload)["ID"] == "1"
    ledger.query(rpm_contract, f"{GW}_update", [payload("9")])
    assert ledger.height == height and ledger.world_state == state


def test_history_via_contract(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=1))
    for v in ("99.91", "99.92"):
        ledger.submit(rpm_contract, f"{GW}_update", [payload(avail=v)], "SP1")
    resp = ledger.query(rpm_contract, "history", [GW, "1"])
    entries = json.loads(resp.payload)
    assert [e["timestamp"] for e in entries] == ["2020-01-01T00:00:01Z", "2020-01-01T00:00:02Z"]
    assert [json.loads(e["value"])["GATEWAY_AVAILABILITY"] for e in entries] == [99.91, 99.92]


def test_deploy_round_trip(rpm_contract, tmp_path):
    ledger = Ledger()
    ledger.deploy(rpm_contract)
    ledger.commit_pending()
    assert CONTRACT_KEY in ledger.world_state
    persist(ledger, tmp_path / "l.bin")
    assert load(tmp_path / "l.bin").deployed_contract() == rpm_contract


def test_persist_round_trip_and_oracle(rpm_contract, tmp_path):
    ledger = Ledger(LedgerConfig(block_cut_size=7, clock=LogicalClock(tick=dt.timedelta(minutes=5))))
    fill(ledger, rpm_contract, 30)
    ledger.commit_pending()
    path = tmp_path / "ledger.bin"
    persist(ledger, path)
    data = path.read_bytes()

    blocks, state = read_ledger_file(data)
    assert chain_links_ok(blocks)
    assert state_digest(fold_writes(blocks)) == state_digest(ledger.world_state) == state_digest(state)
    assert [b["hash"] for b in blocks] == [b.block_hash for b in ledger.blocks]

    again = load(path)
    assert again.config == ledger.config
    assert again.blocks == ledger.blocks and again.world_state == ledger.world_state
    assert ledger_bytes(again) == data
    assert again.get_history("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1") == ledger.get_history(
        "EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1")
    assert verify_file(path).ok
    # a reloaded ledger keeps extending the same chain
    again.submit(rpm_contract, f"{GW}_update", [payload()], "HCP")
    again.commit_pending()
    assert verify_chain(again).ok and again.tip.prev_hash == ledger.tip.block_hash


def test_persist_is_atomic(rpm_contract, tmp_path):
    ledger = Ledger()
    path = tmp_path / "l.bin"
    persist(ledger, path)
    assert not (tmp_path / "l.bin.tmp").exists()


def test_in_memory_tamper_detected(rpm_contract):
    import dataclasses

    ledger = Ledger(LedgerConfig(block_cut_size=2))
    fill(ledger, rpm_contract, 8)
    ledger.commit_pending()
    blk = ledger.blocks[2]
    tx = dataclasses.replace(blk.transactions[0], writes=((("X", b"1"),)))
    ledger.blocks[2] = dataclasses.replace(blk, transactions=(tx,) + blk.transactions[1:])
    report = verify_chain(ledger)
    assert not report.ok and report.first_bad_height == 2


def test_state_tamper_detected(rpm_contract):
    ledger = Ledger()
    fill(ledger, rpm_contract, 3)
    ledger.commit_pending()
    ledger.world_state["EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1"] = b"{}"
    report = verify_chain(ledger)
    assert not report.ok and report.state_mismatch


def test_resealed_block_breaks_next_link(rpm_contract):
    import dataclasses

    ledger = Ledger(LedgerConfig(block_cut_size=2))
    fill(ledger, rpm_contract, 6)
    ledger.commit_pending()
    ledger.blocks[1] = dataclasses.replace(ledger.blocks[1], transactions=ledger.blocks[1].transactions[:1]).sealed()
    report = verify_chain(ledger)
    assert not report.ok and report.first_bad_height == 2


def test_truncated_and_garbage_files(rpm_contract, tmp_path):
    ledger = Ledger(LedgerConfig(block_cut_size=2))
    fill(ledger, rpm_contract, 6)
    ledger.commit_pending()
    data = ledger_bytes(ledger)
    with pytest.raises(LoadError) as err:
        ledger_from_bytes(b"NOTALEDGER")
    assert err.value.height == 0
    spans = block_spans(data)
    with pytest.raises(LoadError) as err:
        ledger_from_bytes(data[: spans[2][0] + 20])
    assert err.value.height == 2
    with pytest.raises(LoadError):
        ledger_from_bytes(data + b"\x00")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(data[:-3])
    assert not verify_file(bad).ok


@pytest.fixture(scope="module")
def persisted(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=3))
    fill(ledger, rpm_contract, 24)
    ledger.commit_pending()
    data = ledger_bytes(ledger)
    return data, block_spans(data)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_any_byte_flip_detected(persisted, data):
    raw, spans = persisted
    index = data.draw(st.integers(0, len(spans) - 1))
    start, end = spans[index]
    offset = data.draw(st.integers(start, end - 1))
    mask = data.draw(st.integers(1, 255))
    mutated = bytearray(raw)
    mutated[offset] ^= mask
    report = verify_bytes(bytes(mutated))
    assert not report.ok
    assert report.first_bad_height is not None and report.first_bad_height <= index


@pytest.mark.parametrize("index", [0, 3, -1])
def test_block_kind_swapped_to_state(persisted, index):
    raw, spans = persisted
    start = spans[index][0]
    mutated = bytearray(raw)
    mutated[start] = codec.RECORD_STATE
    report = verify_bytes(bytes(mutated))
    assert not report.ok and report.first_bad_height == range(len(spans))[index]


def test_state_kind_swapped_to_block(persisted):
    raw, spans = persisted
    mutated = bytearray(raw)
    mutated[spans[-1][1]] = codec.RECORD_BLOCK
    report = verify_bytes(bytes(mutated))
    assert not report.ok and report.first_bad_height is None and report.state_mismatch


def test_codec_strictness():
    r = codec.Reader(b"\x02")
    with pytest.raises(codec.DecodeError):
        r.flag()
    with pytest.raises(codec.DecodeError):
        codec.Reader(b"\x00\x00\x00\x05ab").blob()
    with pytest.raises(codec.DecodeError):
        codec.Reader(b"\x00").done()
    assert codec.from_micros(codec.to_micros(dt.datetime(2021, 3, 4, 5, 6, 7, 89, tzinfo=UTC))) == dt.datetime(
        2021, 3, 4, 5, 6, 7, 89, tzinfo=UTC)


def test_genesis_only_round_trip(tmp_path):
    ledger = Ledger()
    persist(ledger, tmp_path / "g.bin")
    again = load(tmp_path / "g.bin")
    assert again.blocks == ledger.blocks and verify_chain(again).ok


@pytest.mark.slow
def test_thousand_block_round_trip(rpm_contract, tmp_path):
    ledger = Ledger(LedgerConfig(block_cut_size=1))
    fill(ledger, rpm_contract, 999)
    assert ledger.height == 999
    before = state_digest(ledger.world_state)
    persist(ledger, tmp_path / "big.bin")
    again = load(tmp_path / "big.bin")
    assert len(again.blocks) == 1000
    assert state_digest(again.world_state) == before
    assert again.tip.block_hash == ledger.tip.block_hash


def test_history_properties(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=2))
    assert ledger.get_history("NEVER") == []
    for v in ("1", "2", "3"):
        ledger.submit(rpm_contract, f"{GW}_update", [payload(avail=v)], "SP1")
    ledger.commit_pending()
    key = "EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1"
    history = ledger.get_history(key)
    assert len(history) == 3
    assert [t for _, t in history] == sorted(t for _, t in history)
    assert history[-1][0] == ledger.get_state(key)


def test_last_writer_wins_within_block(rpm_contract):
    ledger = Ledger()
    ledger.submit(rpm_contract, f"{GW}_update", [payload(avail="99.91")], "SP1")
    ledger.submit(rpm_contract, f"{GW}_update", [payload(avail="99.99")], "SP1")
    ledger.cut_block()
    assert b"99.99" in ledger.get_state("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_1")


def test_replay_after_every_cut(rpm_contract):
    ledger = Ledger(LedgerConfig(block_cut_size=3, auto_cut=False))
    for i in range(10):
        ledger.submit(rpm_contract, f"{GW}_update", [payload(str(i % 2), avail=str(i))], "SP2")
        if i % 2:
            ledger.cut_block()
            assert ledger.replay_state() == ledger.world_state
