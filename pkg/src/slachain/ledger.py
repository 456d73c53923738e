"""A deterministic, single-process consortium ledger.

Transactions follow an execute-order-validate flow:

1. **Endorse** - peers of ``endorse_quorum`` organisations each execute the
   contract method against the current view of the world state; their
   responses and write sets must be identical.
2. **Order** - the endorsed transaction joins a single FIFO queue (solo
   ordering).  A block is cut every ``block_cut_size`` transactions, or on
   demand.
3. **Validate and commit** - each transaction's read set is re-checked
   against the state at its position in the block; stale reads mark it
   invalid and its writes are skipped.  The block is hash-linked to its
   predecessor and the world state advances.

Time is logical: block ``h`` carries ``clock.epoch + h * clock.tick``.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import enum
import json
import os
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import codec
from .codec import DecodeError, Reader, Writer, sha256
from .contract import MonitorContract, contract_from_json, contract_to_json
from .model import SlaError
from .runtime import InvokeResponse, ResponseStatus, invoke

GENESIS_PREV_HASH = bytes(32)
CONFIG_METHOD = "__config__"
DEPLOY_METHOD = "__deploy__"
CONTRACT_KEY = "__CONTRACT__"
ORDERER = "orderer"


class LedgerError(SlaError):
    pass


class EndorsementRejected(LedgerError):
    """Not enough peers endorsed, or their results disagreed."""


class LoadError(LedgerError):
    def __init__(self, message, height=None):
        self.height = height
        super().__init__(message)


class TxValidation(enum.IntEnum):
    VALID = 0
    FAILED = 1    # contract returned an error; its (usually empty) write set still applies
    INVALID = 2   # read set was stale at commit time; writes discarded


@dataclass(frozen=True)
class LogicalClock:
    epoch: dt.datetime = dt.datetime(2020, 1, 1, tzinfo=dt.timezone.utc)
    tick: dt.timedelta = dt.timedelta(seconds=1)

    def at(self, height: int) -> dt.datetime:
        return self.epoch + height * self.tick


@dataclass(frozen=True)
class LedgerConfig:
    orgs: tuple[str, ...] = ("SP1", "SP2", "HCP")
    endorse_quorum: int = 2
    block_cut_size: int = 10
    clock: LogicalClock = field(default_factory=LogicalClock)
    auto_cut: bool = True

    def __post_init__(self):
        object.__setattr__(self, "orgs", tuple(self.orgs))
        if len(set(self.orgs)) != len(self.orgs) or not self.orgs:
            raise ValueError("orgs must be a non-empty list of distinct names")
        if not 1 <= self.endorse_quorum <= len(self.orgs):
            raise ValueError(f"endorse_quorum must be in [1, {len(self.orgs)}]")
        if self.block_cut_size < 1:
            raise ValueError("block_cut_size must be at least 1")

    def to_json(self) -> str:
        return json.dumps({
            "orgs": list(self.orgs),
            "endorse_quorum": self.endorse_quorum,
            "block_cut_size": self.block_cut_size,
            "clock_epoch_us": codec.to_micros(self.clock.epoch),
            "clock_tick_us": self.clock.tick // dt.timedelta(microseconds=1),
            "auto_cut": self.auto_cut,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "LedgerConfig":
        d = json.loads(text)
        clock = LogicalClock(codec.from_micros(d["clock_epoch_us"]),
                             dt.timedelta(microseconds=d["clock_tick_us"]))
        return cls(tuple(d["orgs"]), d["endorse_quorum"], d["block_cut_size"], clock, d["auto_cut"])


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    method: str
    args: tuple[str, ...]
    submitter: str
    nonce: int
    endorsements: tuple[str, ...]
    response_status: ResponseStatus
    response_tag: str
    reads: tuple[tuple[str, bytes | None], ...] = ()
    writes: tuple[tuple[str, bytes], ...] = ()
    validation: TxValidation = TxValidation.VALID

    @property
    def applied(self) -> bool:
        return self.validation is not TxValidation.INVALID

    def encode(self, w: Writer):
        w.raw(self.tx_id)
        w.str(self.method)
        w.u32(len(self.args))
        for a in self.args:
            w.str(a)
        w.str(self.submitter)
        w.u64(self.nonce)
        w.u32(len(self.endorsements))
        for org in self.endorsements:
            w.str(org)
        w.u8(0 if self.response_status is ResponseStatus.OK else 1)
        w.str(self.response_tag)
        w.u8(int(self.validation))
        w.u32(len(self.reads))
        for key, digest in self.reads:
            w.str(key)
            w.u8(digest is not None)
            if digest is not None:
                w.raw(digest)
        w.u32(len(self.writes))
        for key, value in self.writes:
            w.str(key)
            w.blob(value)

    @classmethod
    def decode(cls, r: Reader) -> "Transaction":
        tx_id = r.take(32)
        method = r.str()
        args = tuple(r.str() for _ in range(r.count(4)))
        submitter = r.str()
        nonce = r.u64()
        endorsements = tuple(r.str() for _ in range(r.count(4)))
        status = r.u8()
        if status not in (0, 1):
            raise DecodeError(f"response status byte {status}")
        tag = r.str()
        validation = r.u8()
        if validation not in TxValidation._value2member_map_:
            raise DecodeError(f"validation code {validation}")
        reads = []
        for _ in range(r.count(5)):
            key = r.str()
            reads.append((key, r.take(32) if r.flag() else None))
        writes = []
        for _ in range(r.count(8)):
            key = r.str()
            writes.append((key, r.blob()))
        return cls(tx_id, method, args, submitter, nonce, endorsements,
                   ResponseStatus.OK if status == 0 else ResponseStatus.ERROR, tag,
                   tuple(reads), tuple(writes), TxValidation(validation))


def transaction_id(method: str, args: Sequence[str], submitter: str, nonce: int) -> bytes:
    w = Writer()
    w.str(method)
    w.u32(len(args))
    for a in args:
        w.str(a)
    w.str(submitter)
    w.u64(nonce)
    return sha256(w.getvalue())


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: dt.datetime
    transactions: tuple[Transaction, ...]
    block_hash: bytes = b""

    def body(self) -> bytes:
        w = Writer()
        w.u64(self.height)
        w.raw(self.prev_hash)
        w.i64(codec.to_micros(self.timestamp))
        w.u32(len(self.transactions))
        for tx in self.transactions:
            tx.encode(w)
        return w.getvalue()

    def compute_hash(self) -> bytes:
        return sha256(self.body())

    def sealed(self) -> "Block":
        return dataclasses.replace(self, block_hash=self.compute_hash())

    @classmethod
    def decode(cls, body: bytes, block_hash: bytes) -> "Block":
        r = Reader(body)
        height = r.u64()
        prev = r.take(32)
        ts = codec.from_micros(r.i64())
        txs = tuple(Transaction.decode(r) for _ in range(r.count(32)))
        r.done()
        return cls(height, prev, ts, txs, block_hash)


@dataclass
class Peer:
    """One organisation's endorsing peer.  ``refuse`` and ``tamper`` are test hooks."""

    org: str
    refuse: bool = False
    tamper: Callable[[tuple], tuple] | None = None


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_height: int | None = None
    state_mismatch: bool = False
    detail: str = ""


def _digest(value: bytes | None) -> bytes | None:
    return None if value is None else sha256(value)


class _SimulationView:
    """LedgerStateApi seen by an endorsing peer: committed state plus queued writes."""

    def __init__(self, ledger: "Ledger", pending_time: dt.datetime):
        self.ledger = ledger
        self.pending_time = pending_time
        self.reads: dict[str, bytes | None] = {}
        self.writes: dict[str, bytes] = {}

    def get_state(self, key):
        if key in self.writes:
            return self.writes[key]
        value = self.ledger._pending_value(key)
        self.reads.setdefault(key, _digest(value))
        return value

    def put_state(self, key, value):
        self.writes[key] = bytes(value)

    def get_history(self, key):
        out = list(self.ledger._history.get(key, ()))
        for tx in self.ledger._queue:
            out.extend((v, self.pending_time) for k, v in tx.writes if k == key)
        return out


class _ReadOnlyView:
    def __init__(self, ledger: "Ledger"):
        self.ledger = ledger

    def get_state(self, key):
        return self.ledger.world_state.get(key)

    def put_state(self, key, value):
        pass

    def get_history(self, key):
        return self.ledger.get_history(key)


class Ledger:
    def __init__(self, config: LedgerConfig | None = None):
        self.config = config or LedgerConfig()
        self.blocks: list[Block] = []
        self.world_state: dict[str, bytes] = {}
        self.peers = {org: Peer(org) for org in self.config.orgs}
        self._history: dict[str, list[tuple[bytes, dt.datetime]]] = {}
        self._queue: deque[Transaction] = deque()
        self._overlay: dict[str, bytes] = {}
        self._nonce = 0
        self._lock = threading.RLock()
        self._append(self._genesis())

    def _genesis(self) -> Block:
        args = (self.config.to_json(),)
        tx = Transaction(transaction_id(CONFIG_METHOD, args, ORDERER, 0), CONFIG_METHOD, args,
                         ORDERER, 0, (), ResponseStatus.OK, "CONFIG")
        return Block(0, GENESIS_PREV_HASH, self.config.clock.at(0), (tx,)).sealed()

    # --- read side -----------------------------------------------------

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def pending(self) -> int:
        return len(self._queue)

    def get_state(self, key: str) -> bytes | None:
        return self.world_state.get(key)

    def get_history(self, key: str) -> list[tuple[bytes, dt.datetime]]:
        """Every committed write to ``key`` with its block timestamp, oldest first."""
        return list(self._history.get(key, ()))

    def transactions(self) -> Iterable[tuple[Block, Transaction]]:
        for block in self.blocks:
            for tx in block.transactions:
                yield block, tx

    def pending_time(self) -> dt.datetime:
        """Timestamp of the block a transaction submitted now is expected to land in."""
        ahead = len(self._queue) // self.config.block_cut_size
        return self.config.clock.at(self.height + 1 + ahead)

    def query(self, contract: MonitorContract, method: str, args: Sequence[str]) -> InvokeResponse:
        """Run a method against committed state without creating a transaction."""
        return invoke(contract, _ReadOnlyView(self), method, list(args), self.pending_time())

    def deployed_contract(self) -> MonitorContract | None:
        raw = self.world_state.get(CONTRACT_KEY)
        return None if raw is None else contract_from_json(raw)

    # --- write side ----------------------------------------------------

    def _pending_value(self, key):
        if key in self._overlay:
            return self._overlay[key]
        return self.world_state.get(key)

    def _endorsement_order(self, submitter: str) -> list[str]:
        return [submitter] + [org for org in self.config.orgs if org != submitter]

    def endorse(self, contract: MonitorContract, method: str, args: Sequence[str], submitter: str) -> Transaction:
        """Collect endorsements for a call without ordering it.

        Raises :class:`EndorsementRejected` when fewer than ``endorse_quorum``
        peers endorse or their results differ.  Two proposals endorsed before
        either is ordered model concurrent clients; if they touch the same
        keys the later one fails MVCC validation at commit.
        """
        args = tuple(args)
        if submitter not in self.config.orgs:
            raise LedgerError(f"{submitter!r} is not a member organisation")
        with self._lock:
            when = self.pending_time()
            results = []
            for org in self._endorsement_order(submitter):
                peer = self.peers[org]
                if peer.refuse:
                    continue
                view = _SimulationView(self, when)
                response = invoke(contract, view, method, args, when)
                writes = tuple(view.writes.items())
                if peer.tamper is not None:
                    writes = tuple(peer.tamper(writes))
                results.append((org, response, tuple(sorted(view.reads.items())), writes))
                if len(results) == self.config.endorse_quorum:
                    break
            if len(results) < self.config.endorse_quorum:
                raise EndorsementRejected(
                    f"{method}: {len(results)} of {self.config.endorse_quorum} required endorsements"
                )
            _, response, reads, writes = results[0]
            for org, other_response, other_reads, other_writes in results[1:]:
                if (other_response, other_reads, other_writes) != (response, reads, writes):
                    raise EndorsementRejected(f"{method}: endorsement from {org} does not match")
            nonce = self._nonce = self._nonce + 1
            return Transaction(
                tx_id=transaction_id(method, args, submitter, nonce),
                method=method,
                args=args,
                submitter=submitter,
                nonce=nonce,
                endorsements=tuple(sorted(org for org, *_ in results)),
                response_status=response.status,
                response_tag=response.tag,
                reads=reads,
                writes=writes,
                validation=TxValidation.VALID if response.ok else TxValidation.FAILED,
            )

    def order(self, tx: Transaction) -> bytes:
        """Append an endorsed transaction to the FIFO queue, cutting blocks as it fills."""
        with self._lock:
            self._queue.append(tx)
            self._overlay.update(tx.writes)
            if self.config.auto_cut:
                while len(self._queue) >= self.config.block_cut_size:
                    self.cut_block()
            return tx.tx_id

    def submit(self, contract: MonitorContract, method: str, args: Sequence[str], submitter: str) -> bytes:
        """Endorse and order a contract call; returns the transaction id.

        A contract error response is not a rejection: the transaction is
        ordered and committed as FAILED.
        """
        with self._lock:
            return self.order(self.endorse(contract, method, args, submitter))

    def deploy(self, contract: MonitorContract, submitter: str | None = None) -> bytes:
        """Record the contract descriptor on the ledger so later readers can query it."""
        submitter = submitter or self.config.orgs[0]
        args = (contract_to_json(contract),)
        with self._lock:
            nonce = self._nonce = self._nonce + 1
            tx = Transaction(transaction_id(DEPLOY_METHOD, args, submitter, nonce), DEPLOY_METHOD,
                             args, submitter, nonce, tuple(sorted(self.config.orgs)),
                             ResponseStatus.OK, "DEPLOY", (),
                             ((CONTRACT_KEY, args[0].encode("utf-8")),))
            return self.order(tx)

    def cut_block(self, flush: bool = False) -> Block | None:
        """Commit up to ``block_cut_size`` queued transactions as one block.

        Returns None when the queue is empty, unless ``flush`` is set, in which
        case an empty block is cut (the clock still ticks).
        """
        with self._lock:
            if not self._queue and not flush:
                return None
            batch = [self._queue.popleft() for _ in range(min(self.config.block_cut_size, len(self._queue)))]
            staged: dict[str, bytes] = {}
            committed = []
            for tx in batch:
                stale = any(
                    _digest(staged[key] if key in staged else self.world_state.get(key)) != digest
                    for key, digest in tx.reads
                )
                if stale:
                    tx = dataclasses.replace(tx, validation=TxValidation.INVALID)
                else:
                    staged.update(tx.writes)
                committed.append(tx)
            block = Block(self.height + 1, self.tip.block_hash,
                          self.config.clock.at(self.height + 1), tuple(committed)).sealed()
            self._append(block)
            self._overlay = {}
            for tx in self._queue:
                self._overlay.update(tx.writes)
            return block

    def commit_pending(self) -> list[Block]:
        """Cut blocks until the ordering queue is empty."""
        blocks = []
        while self._queue:
            blocks.append(self.cut_block())
        return blocks

    def _append(self, block: Block):
        self.blocks.append(block)
        for tx in block.transactions:
            if not tx.applied:
                continue
            for key, value in tx.writes:
                self.world_state[key] = value
                self._history.setdefault(key, []).append((value, block.timestamp))

    # --- integrity -----------------------------------------------------

    def replay_state(self) -> dict[str, bytes]:
        state = {}
        for block in self.blocks:
            for tx in block.transactions:
                if tx.applied:
                    state.update(tx.writes)
        return state


def verify_chain(ledger: Ledger) -> VerificationReport:
    """Recompute every hash and link, then replay writes against the stored state."""
    prev = GENESIS_PREV_HASH
    for index, block in enumerate(ledger.blocks):
        if block.height != index:
            return VerificationReport(False, index, detail=f"block {index} claims height {block.height}")
        if block.prev_hash != prev:
            return VerificationReport(False, index, detail=f"block {index} does not link to its predecessor")
        if block.compute_hash() != block.block_hash:
            return VerificationReport(False, index, detail=f"block {index} hash mismatch")
        if index and block.timestamp < ledger.blocks[index - 1].timestamp:
            return VerificationReport(False, index, detail=f"block {index} timestamp goes backwards")
        prev = block.block_hash
    if ledger.replay_state() != ledger.world_state:
        return VerificationReport(False, None, True, "world state differs from replayed blocks")
    return VerificationReport(True)


def _state_bytes(state: dict[str, bytes]) -> bytes:
    w = Writer()
    w.u32(len(state))
    for key in sorted(state):
        w.str(key)
        w.blob(state[key])
    return w.getvalue()


def ledger_bytes(ledger: Ledger) -> bytes:
    """Serialize committed blocks and the world state (queued transactions are not included)."""
    w = Writer()
    w.raw(codec.HEADER)
    for block in ledger.blocks:
        body = block.body() + block.block_hash
        w.u8(codec.RECORD_BLOCK)
        w.blob(body)
    w.u8(codec.RECORD_STATE)
    w.blob(_state_bytes(ledger.world_state))
    return w.getvalue()


def persist(ledger: Ledger, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with ledger._lock:
        data = ledger_bytes(ledger)
    tmp.write_bytes(data)
    os.replace(tmp, path)


def block_spans(data: bytes) -> list[tuple[int, int]]:
    """Byte ranges ``[start, end)`` of each block record in a well-formed file."""
    spans = []
    r = Reader(data, len(codec.HEADER))
    while r.pos < len(data):
        start = r.pos
        kind = r.u8()
        length = r.u32()
        r.take(length)
        if kind == codec.RECORD_BLOCK:
            spans.append((start, r.pos))
    return spans


def _parse_state(record: bytes) -> dict[str, bytes]:
    sr = Reader(record)
    snapshot = {}
    for _ in range(sr.count(8)):
        key = sr.str()
        if key in snapshot:
            raise DecodeError(f"duplicate state key {key!r}")
        snapshot[key] = sr.blob()
    sr.done()
    return snapshot


def _is_damaged_snapshot(data: bytes, start: int) -> bool:
    """True when the record at ``start`` is the final one and reads as a snapshot.

    Distinguishes a damaged kind byte on the snapshot from a damaged block.
    """
    try:
        r = Reader(data, start + 1)
        record = r.blob()
        r.done()
        _parse_state(record)
    except DecodeError:
        return False
    return True


def _decodes_as_block(data: bytes, start: int) -> bool:
    """True when the record at ``start`` reads as a block whatever its kind byte says."""
    try:
        record = Reader(data, start + 1).blob()
        if len(record) < 32:
            return False
        Block.decode(record[:-32], record[-32:])
    except DecodeError:
        return False
    return True


def ledger_from_bytes(data: bytes) -> Ledger:
    if data[:len(codec.HEADER)] != codec.HEADER:
        raise LoadError("not a slachain ledger file (bad header)", 0)
    r = Reader(data, len(codec.HEADER))
    blocks = []
    state = None
    while r.pos < len(data):
        index = len(blocks)
        if state is not None:
            # the record taken as the snapshot was not the last one, so it was a block
            raise LoadError(f"cannot read block {index}: record kind damaged", index)
        start = r.pos
        try:
            kind = r.u8()
            record = r.blob()
            if kind == codec.RECORD_BLOCK:
                if len(record) < 32:
                    raise DecodeError("record shorter than a hash")
                blocks.append(Block.decode(record[:-32], record[-32:]))
            elif kind == codec.RECORD_STATE:
                state = _parse_state(record)
            else:
                raise DecodeError(f"unknown record kind {kind}")
        except DecodeError as exc:
            if kind == codec.RECORD_STATE and not _decodes_as_block(data, start) \
                    or _is_damaged_snapshot(data, start):
                raise LoadError(f"cannot read state snapshot: {exc}", None) from None
            raise LoadError(f"cannot read block {index}: {exc}", index) from None
    if not blocks:
        raise LoadError("file holds no blocks", 0)
    if state is None:
        raise LoadError(f"file ends after block {len(blocks) - 1}; state snapshot missing", len(blocks))
    genesis = blocks[0].transactions
    if len(genesis) != 1 or genesis[0].method != CONFIG_METHOD:
        raise LoadError("block 0 is not a genesis configuration block", 0)
    try:
        config = LedgerConfig.from_json(genesis[0].args[0])
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise LoadError(f"genesis configuration unreadable: {exc}", 0) from None

    ledger = Ledger.__new__(Ledger)
    ledger.config = config
    ledger.blocks = []
    ledger.world_state = {}
    ledger.peers = {org: Peer(org) for org in config.orgs}
    ledger._history = {}
    ledger._queue = deque()
    ledger._overlay = {}
    ledger._lock = threading.RLock()
    ledger._nonce = max((tx.nonce for b in blocks for tx in b.transactions), default=0)
    for block in blocks:
        ledger._append(block)
    ledger.world_state = state
    return ledger


def load(path: str | Path) -> Ledger:
    return ledger_from_bytes(Path(path).read_bytes())


def verify_bytes(data: bytes) -> VerificationReport:
    """Decode and verify a serialized ledger; unreadable input is reported, not raised."""
    try:
        ledger = ledger_from_bytes(data)
    except LoadError as exc:
        return VerificationReport(False, exc.height, exc.height is None, str(exc))
    return verify_chain(ledger)


def verify_file(path: str | Path) -> VerificationReport:
    return verify_bytes(Path(path).read_bytes())


def submit(ledger: Ledger, contract: MonitorContract, method: str, args: Sequence[str], submitter: str) -> bytes:
    return ledger.submit(contract, method, args, submitter)


def cut_block(ledger: Ledger, flush: bool = False) -> Block | None:
    return ledger.cut_block(flush)


def get_history(ledger: Ledger, key: str) -> list[tuple[bytes, dt.datetime]]:
    return ledger.get_history(key)
