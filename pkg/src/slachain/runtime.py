"""Execution of monitoring contracts against a key-value state.

Handlers only touch state through the :class:`LedgerStateApi` protocol, so
the same code runs against :class:`MemoryState` in tests and against the
endorsement view of :class:`slachain.ledger.Ledger`.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
from dataclasses import dataclass
from decimal import Decimal
from typing import Protocol, Sequence

from .contract import MethodDescriptor, MethodKind, MonitorContract, method_base
from .model import SlaError, evaluate_rule, RuleOutcome

ERROR_TAG = "ERROR"
NOT_FOUND_TAG = "NOT_FOUND"
INVALID_FUNCTION = "Invalid function name"
ID_KEY = "ID"


class LedgerStateApi(Protocol):
    def get_state(self, key: str) -> bytes | None: ...

    def put_state(self, key: str, value: bytes) -> None: ...

    def get_history(self, key: str) -> list[tuple[bytes, dt.datetime]]: ...


class PayloadError(SlaError):
    pass


class ResponseStatus(enum.Enum):
    OK = "ok"
    ERROR = "error"


@dataclass(frozen=True)
class InvokeResponse:
    status: ResponseStatus
    tag: str
    payload: str = ""

    @property
    def ok(self) -> bool:
        return self.status is ResponseStatus.OK

    @classmethod
    def success(cls, tag, payload=""):
        return cls(ResponseStatus.OK, tag, payload)

    @classmethod
    def error(cls, message, tag=ERROR_TAG):
        return cls(ResponseStatus.ERROR, tag, message)


def format_instant(instant: dt.datetime) -> str:
    return instant.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ").replace(".000000Z", "Z")


def parse_instant(text: str) -> dt.datetime:
    return dt.datetime.fromisoformat(text.replace("Z", "+00:00"))


@dataclass(frozen=True)
class StateUpdatePayload:
    """A decoded update: numeric metrics plus the reporting resource's ID."""

    metrics: dict[str, Decimal]
    id: str
    raw: str

    @classmethod
    def parse(cls, text: str) -> "StateUpdatePayload":
        def reject_constant(token):
            raise PayloadError(f"non-finite number {token} in payload")

        try:
            doc = json.loads(text, parse_float=Decimal, parse_int=Decimal, parse_constant=reject_constant)
        except (json.JSONDecodeError, TypeError, RecursionError) as exc:
            raise PayloadError(f"payload is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise PayloadError("payload must be a JSON object")
        if ID_KEY not in doc:
            raise PayloadError("payload has no ID")
        resource_id = doc.pop(ID_KEY)
        if isinstance(resource_id, Decimal):
            resource_id = str(resource_id)
        if not isinstance(resource_id, str) or not resource_id:
            raise PayloadError("ID must be a non-empty string or number")
        for key, value in doc.items():
            if not isinstance(value, Decimal) or not value.is_finite():
                raise PayloadError(f"{key} must be a finite number")
        return cls(doc, resource_id, text)


@dataclass(frozen=True)
class ViolationRecord:
    metric_key: str
    rule: str
    offending_value: Decimal | None
    resource_id: str
    timestamp: dt.datetime
    message: str

    @property
    def missing(self) -> bool:
        return self.offending_value is None

    def to_json(self) -> dict:
        return {
            "metric": self.metric_key,
            "rule": self.rule,
            "value": None if self.offending_value is None else str(self.offending_value),
            "id": self.resource_id,
            "timestamp": format_instant(self.timestamp),
            "message": self.message,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ViolationRecord":
        value = obj["value"]
        return cls(obj["metric"], obj["rule"], None if value is None else Decimal(value),
                   obj["id"], parse_instant(obj["timestamp"]), obj["message"])


def decode_violations(data: bytes | str | None) -> list[ViolationRecord]:
    if not data:
        return []
    return [ViolationRecord.from_json(o) for o in json.loads(data)]


def _encode_json(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


class MemoryState:
    """Dict-backed :class:`LedgerStateApi`; ``now`` stamps history entries."""

    def __init__(self, now: dt.datetime | None = None):
        self.data: dict[str, bytes] = {}
        self.history: dict[str, list[tuple[bytes, dt.datetime]]] = {}
        self.now = now or dt.datetime(2020, 1, 1, tzinfo=dt.timezone.utc)

    def get_state(self, key):
        return self.data.get(key)

    def put_state(self, key, value):
        self.data[key] = bytes(value)
        self.history.setdefault(key, []).append((bytes(value), self.now))

    def get_history(self, key):
        return list(self.history.get(key, ()))


def check_payload(descriptor: MethodDescriptor, payload: StateUpdatePayload, clock: dt.datetime):
    """Evaluate every rule of an update method.

    Returns ``(violations, missing)`` where ``missing`` is the subset of
    records produced for rules whose metric was absent.
    """
    when = format_instant(clock)
    violations, missing = [], []
    for rule in descriptor.checks:
        if rule.metric_key in payload.metrics:
            value = payload.metrics[rule.metric_key]
            if evaluate_rule(rule, value) is RuleOutcome.VIOLATED:
                violations.append(ViolationRecord(
                    rule.metric_key, rule.text, value, payload.id, clock,
                    f"{rule.metric_key} rule violated. Offending value is: {value} at time {when}",
                ))
        else:
            record = ViolationRecord(rule.metric_key, rule.text, None, payload.id, clock,
                                     f"{rule.metric_key} missing at time {when}")
            violations.append(record)
            missing.append(record)
    return violations, missing


def handle_update(descriptor: MethodDescriptor, state: LedgerStateApi,
                  payload: StateUpdatePayload, clock: dt.datetime) -> InvokeResponse:
    violations, missing = check_payload(descriptor, payload, clock)
    key = descriptor.violations_key(payload.id)
    if violations:
        current = state.get_state(key)
        recorded = json.loads(current) if current else []
        recorded.extend(v.to_json() for v in violations)
        state.put_state(key, _encode_json(recorded))
    if missing:
        # the absence itself is kept as evidence; the incomplete state is not
        return InvokeResponse.error("; ".join(m.message for m in missing))
    state.put_state(descriptor.state_key(payload.id), payload.raw.encode("utf-8"))
    return InvokeResponse.success(f"{descriptor.state_key_prefix}_UPDATE", payload.raw)


def handle_get_latest(descriptor: MethodDescriptor, state: LedgerStateApi, resource_id: str) -> InvokeResponse:
    value = state.get_state(descriptor.state_key(resource_id))
    if value is None:
        return InvokeResponse.error(f"no state recorded for {descriptor.state_key(resource_id)}", NOT_FOUND_TAG)
    return InvokeResponse.success(descriptor.name.upper(), value.decode("utf-8"))


def handle_get_violations(descriptor: MethodDescriptor, state: LedgerStateApi, resource_id: str) -> InvokeResponse:
    value = state.get_state(descriptor.violations_key(resource_id))
    return InvokeResponse.success(descriptor.name.upper(), value.decode("utf-8") if value else "[]")


def handle_history(contract: MonitorContract, state: LedgerStateApi, target: str, resource_id: str) -> InvokeResponse:
    bases = {
        method_base(d.activity, d.target): d
        for d in contract.descriptors(MethodKind.UPDATE)
    }
    descriptor = bases.get(target.lower())
    if descriptor is None:
        return InvokeResponse.error(f"unknown target {target!r} for history")
    entries = [
        {"timestamp": format_instant(when), "value": value.decode("utf-8")}
        for value, when in state.get_history(descriptor.state_key(resource_id))
    ]
    return InvokeResponse.success("HISTORY", json.dumps(entries, separators=(",", ":")))


_ARITY = {
    MethodKind.UPDATE: 1,
    MethodKind.GET_LATEST: 1,
    MethodKind.GET_VIOLATIONS: 1,
    MethodKind.HISTORY: 2,
}


def invoke(contract: MonitorContract, state: LedgerStateApi, method: str,
           args: Sequence[str], clock: dt.datetime) -> InvokeResponse:
    """The contract's single entry point: dispatch ``method`` (any casing)."""
    descriptor = contract.lookup(method)
    if descriptor is None or descriptor.kind is MethodKind.INVOKE:
        return InvokeResponse.error(INVALID_FUNCTION)
    if descriptor.kind is MethodKind.INIT:
        return InvokeResponse.success("INIT")
    args = list(args)
    expected = _ARITY[descriptor.kind]
    if len(args) != expected or not all(isinstance(a, str) for a in args):
        return InvokeResponse.error(f"{descriptor.name} expects {expected} string argument(s)")
    try:
        if descriptor.kind is MethodKind.UPDATE:
            try:
                payload = StateUpdatePayload.parse(args[0])
            except PayloadError as exc:
                return InvokeResponse.error(str(exc))
            return handle_update(descriptor, state, payload, clock)
        if descriptor.kind is MethodKind.GET_LATEST:
            return handle_get_latest(descriptor, state, args[0])
        if descriptor.kind is MethodKind.GET_VIOLATIONS:
            return handle_get_violations(descriptor, state, args[0])
        return handle_history(contract, state, args[0], args[1])
    except Exception as exc:  # a handler fault is reported, never raised to the caller
        return InvokeResponse.error(f"{type(exc).__name__}: {exc}")
