"""Compile an SLA into a monitoring contract.

Every target (SLO or requirement) of every activity, plus the application
SLO, gets three methods::

    <activity>_<target>_update
    get_latest_<activity>_<target>_update
    get_<activity>_<target>_violations

and the contract always carries ``init``, ``invoke`` and ``history``.  The
contract is a table of :class:`MethodDescriptor` objects that
:mod:`slachain.runtime` executes; the documentation and the source listing
are renderings of that table.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from types import MappingProxyType
from typing import Mapping

from .catalog import VocabularyCatalog
from .model import (
    APPLICATION_SLO,
    RelationalOperator,
    Rule,
    SlaDocument,
    SlaError,
    UnitFamily,
    UnitKind,
)
from .parser import ParseIssue, serialize_sla, validate_against_catalog

DESCRIPTOR_FORMAT = "slachain-contract/1"
NAME_PATTERN = re.compile(r"^(get_(latest_)?)?[a-z0-9_]+(_update|_violations)$")

_CANONICAL_UNIT = {
    UnitFamily.PERCENT: "percent",
    UnitFamily.MILLISECONDS: "ms",
    UnitFamily.BYTES_SCALED: "bytes",
    UnitFamily.COUNT: "count",
    UnitFamily.CURRENCY: "currency units",
}


class ContractError(SlaError):
    def __init__(self, message, issues=()):
        self.issues = list(issues)
        super().__init__(message)


class MethodKind(enum.Enum):
    UPDATE = "update"
    GET_LATEST = "get_latest"
    GET_VIOLATIONS = "get_violations"
    INIT = "init"
    INVOKE = "invoke"
    HISTORY = "history"


@dataclass(frozen=True)
class MethodDescriptor:
    name: str
    kind: MethodKind
    activity: str | None = None
    target: str | None = None
    checks: tuple[Rule, ...] = ()
    state_key_prefix: str = ""

    @property
    def violations_prefix(self) -> str:
        return f"{self.state_key_prefix}_VIOLATIONS"

    def state_key(self, resource_id: str) -> str:
        return f"{self.state_key_prefix}_{resource_id}"

    def violations_key(self, resource_id: str) -> str:
        return f"{self.violations_prefix}_{resource_id}"


@dataclass(frozen=True)
class MonitorContract:
    methods: Mapping[str, MethodDescriptor]
    sla_fingerprint: str
    catalog: str
    docs: str = ""
    listing: str = ""
    _by_lower: Mapping[str, MethodDescriptor] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "methods", MappingProxyType(dict(self.methods)))
        object.__setattr__(
            self, "_by_lower", MappingProxyType({k.lower(): v for k, v in self.methods.items()})
        )

    def lookup(self, name: str) -> MethodDescriptor | None:
        """Case-insensitive method lookup."""
        return self._by_lower.get(name.lower()) if isinstance(name, str) else None

    def descriptors(self, kind: MethodKind | None = None) -> list[MethodDescriptor]:
        return [d for d in self.methods.values() if kind is None or d.kind is kind]

    def update_for(self, activity: str, target: str) -> MethodDescriptor | None:
        return self.methods.get(method_name(activity, target, MethodKind.UPDATE))

    def sibling(self, descriptor: MethodDescriptor, kind: MethodKind) -> MethodDescriptor:
        return self.methods[method_name(descriptor.activity, descriptor.target, kind)]


def method_base(activity: str | None, target: str) -> str:
    if activity in (None, APPLICATION_SLO):
        return target
    return f"{activity}_{target}"


def method_name(activity: str | None, target: str, kind: MethodKind) -> str:
    base = method_base(activity, target)
    if kind is MethodKind.UPDATE:
        return f"{base}_update"
    if kind is MethodKind.GET_LATEST:
        return f"get_latest_{base}_update"
    if kind is MethodKind.GET_VIOLATIONS:
        return f"get_{base}_violations"
    raise ValueError(f"{kind.value} is not a generated per-target method")


def sla_fingerprint(sla: SlaDocument) -> str:
    return hashlib.sha256(serialize_sla(sla).encode("utf-8")).hexdigest()


def generate_contract(sla: SlaDocument, catalog: VocabularyCatalog) -> MonitorContract:
    """Compile ``sla`` into a :class:`MonitorContract`.

    Raises :class:`ContractError` (with the validation issues attached) if the
    document is not permitted by ``catalog``.
    """
    issues = validate_against_catalog(sla, catalog)
    if issues:
        raise ContractError(f"SLA failed validation with {len(issues)} issue(s)", issues)

    methods: dict[str, MethodDescriptor] = {}

    def add(descriptor):
        if descriptor.name in methods:
            raise ContractError(f"generated method name {descriptor.name} is not unique")
        methods[descriptor.name] = descriptor

    for activity, target in sla.iter_targets():
        prefix = method_base(activity, target.type_name).upper()
        for kind in (MethodKind.UPDATE, MethodKind.GET_LATEST, MethodKind.GET_VIOLATIONS):
            add(MethodDescriptor(
                name=method_name(activity, target.type_name, kind),
                kind=kind,
                activity=activity,
                target=target.type_name,
                checks=target.rules if kind is MethodKind.UPDATE else (),
                state_key_prefix=prefix,
            ))
    for kind in (MethodKind.INIT, MethodKind.INVOKE, MethodKind.HISTORY):
        add(MethodDescriptor(name=kind.value, kind=kind))

    contract = MonitorContract(methods, sla_fingerprint(sla), catalog.name)
    return replace(contract, docs=render_documentation(contract), listing=render_source_listing(contract))


def _value_text(rule: Rule) -> str:
    return f"{rule.canonical_threshold}"


def _unit_label(rule: Rule) -> str:
    if rule.unit is None:
        return "canonical units"
    return _CANONICAL_UNIT[rule.unit.family]


def render_documentation(contract: MonitorContract) -> str:
    lines = [
        "MONITORING CONTRACT",
        f"SLA fingerprint: {contract.sla_fingerprint}",
        f"Catalog: {contract.catalog}",
        f"Methods: {len(contract.methods)}",
        "",
        "All calls go through invoke(<method>, <args...>); method names are case-insensitive.",
        "Payload values must be expressed in canonical units (percent, ms, bytes, count, currency units).",
        "",
    ]
    for d in contract.methods.values():
        lines.append(d.name)
        if d.kind is MethodKind.UPDATE:
            lines.append(f"    Report the current state of {d.target} ({d.activity}).")
            lines.append("    Argument: one JSON object with the keys")
            width = max([len("ID")] + [len(r.metric_key) for r in d.checks])
            lines.append(f"        {'ID'.ljust(width)}  resource identifier")
            for r in d.checks:
                lines.append(
                    f"        {r.metric_key.ljust(width)}  number in {_unit_label(r)}; "
                    f"acceptable when {r.operator.symbol} {_value_text(r)}"
                )
            lines.append("    A missing key is recorded as a violation and the update is rejected.")
        elif d.kind is MethodKind.GET_LATEST:
            lines.append(f"    Argument: ID.  Returns the latest state stored under {d.state_key_prefix}_<ID>.")
        elif d.kind is MethodKind.GET_VIOLATIONS:
            lines.append(f"    Argument: ID.  Returns the JSON array stored under {d.violations_prefix}_<ID>.")
        elif d.kind is MethodKind.INIT:
            lines.append("    No arguments.  Does nothing.")
        elif d.kind is MethodKind.INVOKE:
            lines.append("    Dispatches to the methods above; unknown names return 'Invalid function name'.")
        elif d.kind is MethodKind.HISTORY:
            lines.append("    Arguments: <target> (an update method name without '_update'), ID.")
            lines.append("    Returns every stored update for that resource with its timestamp.")
        lines.append("")
    return "\n".join(lines)


def render_source_listing(contract: MonitorContract) -> str:
    out = [
        f"// monitoring contract, sla {contract.sla_fingerprint[:16]}, catalog {contract.catalog}",
        "",
        "method init(stub):",
        "    return success(\"INIT\", \"\")",
        "",
        "method invoke(stub):",
        "    name = lower(stub.function)",
    ]
    for d in contract.methods.values():
        if d.kind in (MethodKind.UPDATE, MethodKind.GET_LATEST, MethodKind.GET_VIOLATIONS):
            out.append(f"    if name == \"{d.name}\": return {d.name}(stub, params[0])")
    out.append("    if name == \"history\": return history(stub, params[0], params[1])")
    out.append("    return error(\"ERROR\", \"Invalid function name\")")
    out.append("")

    for d in contract.methods.values():
        if d.kind is MethodKind.UPDATE:
            out.extend(_update_listing(d))
        elif d.kind is MethodKind.GET_LATEST:
            out += [
                f"method {d.name}(stub, id):",
                f"    state = getState(\"{d.state_key_prefix}_\" + id)",
                "    if state is empty: return error(\"NOT_FOUND\", id)",
                f"    return success(\"{d.name.upper()}\", state)",
                "",
            ]
        elif d.kind is MethodKind.GET_VIOLATIONS:
            out += [
                f"method {d.name}(stub, id):",
                f"    return success(\"{d.name.upper()}\", getState(\"{d.violations_prefix}_\" + id) or [])",
                "",
            ]
    out += [
        "method history(stub, target, id):",
        "    return success(\"HISTORY\", getHistory(upper(target) + \"_\" + id))",
        "",
    ]
    return "\n".join(out)


def _update_listing(d: MethodDescriptor) -> list[str]:
    lines = [
        f"method {d.name}(stub, json):",
        "    state = parse(json)",
        "    id = state[\"ID\"]",
        f"    violations = getState(\"{d.violations_prefix}_\" + id) or []",
        "    missing = []",
    ]
    for r in d.checks:
        lines += [
            f"    if has(state, \"{r.metric_key}\"):",
            f"        val = state[\"{r.metric_key}\"]",
            f"        if !({r.metric_key} {r.operator.symbol} {_value_text(r)}):",
            f"            violations.add(\"{r.metric_key} rule violated. Offending value is: \" + val + \" at time \" + now)",
            "    else:",
            f"        missing.add(\"{r.metric_key} missing at time \" + now)",
        ]
    lines += [
        "    violations.addAll(missing)",
        f"    putState(\"{d.violations_prefix}_\" + id, violations)",
        "    if missing: return error(\"ERROR\", join(missing))",
        f"    putState(\"{d.state_key_prefix}_\" + id, json)",
        f"    return success(\"{d.state_key_prefix}_UPDATE\", json)",
        "",
    ]
    return lines


def _rule_to_json(rule: Rule) -> dict:
    unit = None
    if rule.unit is not None:
        unit = {"symbol": rule.unit.symbol, "family": rule.unit.family.value, "scale": str(rule.unit.scale)}
    return {"metric": rule.metric_key, "operator": rule.operator.symbol,
            "threshold": str(rule.threshold), "unit": unit}


def _rule_from_json(obj: dict) -> Rule:
    unit = obj.get("unit")
    if unit is not None:
        unit = UnitKind(unit["symbol"], UnitFamily(unit["family"]), Decimal(unit["scale"]))
    return Rule(obj["metric"], RelationalOperator.from_token(obj["operator"]), Decimal(obj["threshold"]), unit)


def contract_to_json(contract: MonitorContract) -> str:
    """The contract descriptor document (stable key order, no whitespace variance)."""
    doc = {
        "format": DESCRIPTOR_FORMAT,
        "sla_fingerprint": contract.sla_fingerprint,
        "catalog": contract.catalog,
        "methods": [
            {
                "name": d.name,
                "kind": d.kind.value,
                "activity": d.activity,
                "target": d.target,
                "state_key_prefix": d.state_key_prefix,
                "checks": [_rule_to_json(r) for r in d.checks],
            }
            for d in contract.methods.values()
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def contract_from_json(text: str | bytes) -> MonitorContract:
    try:
        doc = json.loads(text)
        if doc.get("format") != DESCRIPTOR_FORMAT:
            raise ContractError(f"not a {DESCRIPTOR_FORMAT} descriptor")
        methods = {}
        for m in doc["methods"]:
            methods[m["name"]] = MethodDescriptor(
                name=m["name"],
                kind=MethodKind(m["kind"]),
                activity=m["activity"],
                target=m["target"],
                checks=tuple(_rule_from_json(r) for r in m["checks"]),
                state_key_prefix=m["state_key_prefix"],
            )
        contract = MonitorContract(methods, doc["sla_fingerprint"], doc["catalog"])
    except ContractError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, ArithmeticError) as exc:
        raise ContractError(f"malformed contract descriptor: {exc!r}") from None
    return replace(contract, docs=render_documentation(contract), listing=render_source_listing(contract))
