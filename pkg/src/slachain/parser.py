"""Reading and writing SLA documents (format v1, described in docs/formats.md).

A document is a JSON array.  Each element is a single-purpose object:

* ``{"agreement": {"start_date": ..., "end_date": ...}}`` exactly once,
* ``{"activity": <name>, "targets": [...]}`` for each workflow activity,
* ``{"application_slo": {"rules": [...]}}`` at most once.

Parsing walks the whole document and reports every problem it finds rather
than stopping at the first one.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .catalog import VocabularyCatalog, default_catalog
from .model import (
    APPLICATION_SLO,
    RelationalOperator,
    Rule,
    SlaDocument,
    SlaError,
    TargetKind,
    TargetSpec,
    WorkflowActivity,
)


class IssueKind(enum.Enum):
    UNKNOWN_ACTIVITY = "unknown_activity"
    UNKNOWN_TARGET = "unknown_target"
    UNKNOWN_METRIC = "unknown_metric"
    BAD_OPERATOR = "bad_operator"
    BAD_NUMBER = "bad_number"
    MISSING_FIELD = "missing_field"
    SYNTAX = "syntax"
    DUPLICATE = "duplicate"
    BAD_UNIT = "bad_unit"
    BAD_DATE = "bad_date"
    UNKNOWN_FIELD = "unknown_field"


@dataclass(frozen=True)
class ParseIssue:
    path: str
    kind: IssueKind
    message: str

    def __str__(self):
        return f"{self.path}: {self.kind.value}: {self.message}"


class SlaParseError(SlaError):
    def __init__(self, issues):
        self.issues = list(issues)
        summary = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{len(self.issues)} issue(s): {summary}{more}")


class _NonFinite:
    def __init__(self, token):
        self.token = token


_TARGET_KEYS = {"slo": TargetKind.SLO, "requirement": TargetKind.REQUIREMENT}


def parse_sla(document: str | bytes, catalog: VocabularyCatalog | None = None) -> SlaDocument:
    """Build an :class:`SlaDocument` from JSON text.

    Raises :class:`SlaParseError` carrying every issue found.  A malformed
    JSON text produces a single ``syntax`` issue.
    """
    catalog = catalog or default_catalog()
    try:
        if isinstance(document, (bytes, bytearray)):
            document = bytes(document).decode("utf-8")
        raw = json.loads(
            document,
            parse_float=Decimal,
            parse_int=Decimal,
            parse_constant=_NonFinite,
        )
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, RecursionError) as exc:
        raise SlaParseError([ParseIssue("$", IssueKind.SYNTAX, str(exc))]) from None
    return _Reader(catalog).read(raw)


def load_sla(path: str | Path, catalog: VocabularyCatalog | None = None) -> SlaDocument:
    return parse_sla(Path(path).read_bytes(), catalog)


class _Reader:
    def __init__(self, catalog: VocabularyCatalog):
        self.catalog = catalog
        self.issues: list[ParseIssue] = []

    def issue(self, path, kind, message):
        self.issues.append(ParseIssue(path, kind, message))

    def read(self, raw) -> SlaDocument:
        if not isinstance(raw, list):
            self.issue("$", IssueKind.SYNTAX, "an SLA document must be a JSON array")
            raise SlaParseError(self.issues)

        dates = None
        application = None
        activities = []
        seen_activities = set()
        for i, element in enumerate(raw):
            path = f"$[{i}]"
            if not isinstance(element, dict):
                self.issue(path, IssueKind.SYNTAX, "array elements must be objects")
            elif "agreement" in element:
                self.check_keys(element, path, {"agreement"})
                if dates is not None:
                    self.issue(path, IssueKind.DUPLICATE, "agreement given more than once")
                else:
                    dates = self.read_agreement(element["agreement"], f"{path}.agreement") or ()
            elif "activity" in element:
                activity = self.read_activity(element, path)
                name = element["activity"]
                if isinstance(name, str) and name in seen_activities:
                    self.issue(f"{path}.activity", IssueKind.DUPLICATE, f"activity {name} repeated")
                elif isinstance(name, str):
                    seen_activities.add(name)
                if activity is not None:
                    activities.append(activity)
            elif APPLICATION_SLO in element:
                self.check_keys(element, path, {APPLICATION_SLO})
                target = self.read_application_slo(element[APPLICATION_SLO], f"{path}.{APPLICATION_SLO}")
                if application is not None:
                    self.issue(path, IssueKind.DUPLICATE, "application_slo given more than once")
                application = application or target
            else:
                self.issue(path, IssueKind.UNKNOWN_FIELD,
                           f"unrecognised element with keys {sorted(element)}")

        if dates is None:
            self.issue("$", IssueKind.MISSING_FIELD, "no agreement element with start/end dates")
        if self.issues:
            raise SlaParseError(self.issues)
        return SlaDocument(dates[0], dates[1], application, tuple(activities))

    def check_keys(self, obj: dict, path: str, allowed: set[str]):
        for key in obj:
            if key not in allowed:
                self.issue(_child(path, key), IssueKind.UNKNOWN_FIELD, f"unexpected key {key!r}")

    def require(self, obj: dict, key: str, path: str) -> bool:
        if key not in obj:
            self.issue(path, IssueKind.MISSING_FIELD, f"missing {key!r}")
            return False
        return True

    def read_agreement(self, obj, path):
        if not isinstance(obj, dict):
            self.issue(path, IssueKind.SYNTAX, "agreement must be an object")
            return None
        self.check_keys(obj, path, {"start_date", "end_date"})
        parsed = []
        for key in ("start_date", "end_date"):
            if not self.require(obj, key, path):
                continue
            try:
                parsed.append(dt.date.fromisoformat(obj[key]))
            except (TypeError, ValueError):
                self.issue(f"{path}.{key}", IssueKind.BAD_DATE, f"{obj[key]!r} is not an ISO date")
        if len(parsed) != 2:
            return None
        if parsed[0] > parsed[1]:
            self.issue(path, IssueKind.BAD_DATE, "start_date is after end_date")
            return None
        return tuple(parsed)

    def read_activity(self, obj, path):
        self.check_keys(obj, path, {"activity", "targets"})
        name = obj["activity"]
        known = True
        if not isinstance(name, str) or name not in self.catalog.activities:
            self.issue(f"{path}.activity", IssueKind.UNKNOWN_ACTIVITY,
                       f"activity {name!r} is not in catalog {self.catalog.name}")
            known = False
        if not self.require(obj, "targets", path):
            return None
        targets_raw = obj["targets"]
        if not isinstance(targets_raw, list):
            self.issue(f"{path}.targets", IssueKind.SYNTAX, "targets must be an array")
            return None
        targets = []
        seen = set()
        for j, entry in enumerate(targets_raw):
            tpath = f"{path}.targets[{j}]"
            target = self.read_target(entry, tpath, name if known else None)
            if target is None:
                continue
            if target.type_name in seen:
                self.issue(tpath, IssueKind.DUPLICATE, f"{target.type_name} repeated in activity")
                continue
            seen.add(target.type_name)
            targets.append(target)
        if not known:
            return None
        return WorkflowActivity(name, tuple(targets))

    def read_target(self, obj, path, activity):
        if not isinstance(obj, dict):
            self.issue(path, IssueKind.SYNTAX, "target must be an object")
            return None
        kind_keys = [k for k in _TARGET_KEYS if k in obj]
        if len(kind_keys) != 1:
            self.issue(path, IssueKind.MISSING_FIELD,
                       "target needs exactly one of 'slo' or 'requirement'")
            return None
        kind_key = kind_keys[0]
        self.check_keys(obj, path, {kind_key, "rules"})
        type_name = obj[kind_key]
        kind = _TARGET_KEYS[kind_key]
        ok = True
        spec = self.catalog.target(type_name) if isinstance(type_name, str) else None
        if spec is None or spec.kind is not kind or type_name == APPLICATION_SLO:
            self.issue(f"{path}.{kind_key}", IssueKind.UNKNOWN_TARGET,
                       f"{type_name!r} is not a known {kind.value} type")
            ok = False
        elif activity is not None and not self.catalog.permits_target(activity, type_name):
            self.issue(f"{path}.{kind_key}", IssueKind.UNKNOWN_TARGET,
                       f"{type_name} is not permitted for activity {activity}")
            ok = False
        rules = self.read_rules(obj, path, type_name if ok else None)
        if not ok or rules is None:
            return None
        return TargetSpec(kind, type_name, rules)

    def read_application_slo(self, obj, path):
        if not isinstance(obj, dict):
            self.issue(path, IssueKind.SYNTAX, "application_slo must be an object")
            return None
        self.check_keys(obj, path, {"rules"})
        if self.catalog.target(APPLICATION_SLO) is None:
            self.issue(path, IssueKind.UNKNOWN_TARGET,
                       f"catalog {self.catalog.name} defines no application_slo")
            return None
        rules = self.read_rules(obj, path, APPLICATION_SLO)
        if rules is None:
            return None
        return TargetSpec(TargetKind.SLO, APPLICATION_SLO, rules)

    def read_rules(self, obj, path, type_name):
        if not self.require(obj, "rules", path):
            return None
        raw_rules = obj["rules"]
        rpath = f"{path}.rules"
        if not isinstance(raw_rules, list):
            self.issue(rpath, IssueKind.SYNTAX, "rules must be an array")
            return None
        if not raw_rules:
            self.issue(rpath, IssueKind.MISSING_FIELD, "a target needs at least one rule")
            return None
        rules = []
        seen = set()
        failed = False
        for k, entry in enumerate(raw_rules):
            rule = self.read_rule(entry, f"{rpath}[{k}]", type_name)
            if rule is None:
                failed = True
                continue
            if rule.metric_key in seen:
                self.issue(f"{rpath}[{k}].metric", IssueKind.DUPLICATE,
                           f"{rule.metric_key} has more than one rule in this target")
                failed = True
                continue
            seen.add(rule.metric_key)
            rules.append(rule)
        return None if failed else tuple(rules)

    def read_rule(self, obj, path, type_name):
        if not isinstance(obj, dict):
            self.issue(path, IssueKind.SYNTAX, "rule must be an object")
            return None
        self.check_keys(obj, path, {"metric", "operator", "value", "unit"})
        start = len(self.issues)
        for key in ("metric", "operator", "value"):
            self.require(obj, key, path)

        metric = obj.get("metric")
        if "metric" in obj and type_name is not None:
            if not isinstance(metric, str) or not self.catalog.permits_metric(type_name, metric):
                self.issue(f"{path}.metric", IssueKind.UNKNOWN_METRIC,
                           f"{metric!r} is not a metric of {type_name}")

        op = None
        if "operator" in obj:
            try:
                op = RelationalOperator.from_token(obj["operator"])
            except ValueError:
                self.issue(f"{path}.operator", IssueKind.BAD_OPERATOR,
                           f"{obj['operator']!r} is not one of < <= > >= == !=")

        threshold = None
        if "value" in obj:
            threshold = _number(obj["value"])
            if threshold is None:
                self.issue(f"{path}.value", IssueKind.BAD_NUMBER,
                           f"{_show(obj['value'])} is not a finite decimal")

        unit = None
        if obj.get("unit") is not None:
            unit = self.catalog.unit(obj["unit"]) if isinstance(obj["unit"], str) else None
            if unit is None:
                self.issue(f"{path}.unit", IssueKind.BAD_UNIT, f"unknown unit {obj['unit']!r}")
            elif isinstance(metric, str):
                family = self.catalog.metric_family(metric)
                if family is not None and family is not unit.family:
                    self.issue(f"{path}.unit", IssueKind.BAD_UNIT,
                               f"{metric} is measured in {family.value}, "
                               f"unit {unit.symbol} is {unit.family.value}")
        elif "unit" in obj:
            self.issue(f"{path}.unit", IssueKind.BAD_UNIT, "unit must be a string when present")

        if len(self.issues) > start or type_name is None:
            return None
        return Rule(metric, op, threshold, unit)


def _number(value) -> Decimal | None:
    if isinstance(value, Decimal):
        return value if value.is_finite() else None
    if isinstance(value, str):
        if not re.fullmatch(r"-?\d+(\.\d+)?([eE][-+]?\d+)?", value.strip()):
            return None
        try:
            return Decimal(value.strip())
        except InvalidOperation:
            return None
    return None


def _show(value):
    if isinstance(value, _NonFinite):
        return value.token
    return repr(value)


def validate_against_catalog(sla: SlaDocument, catalog: VocabularyCatalog) -> list[ParseIssue]:
    """Check a programmatically built document against ``catalog``.

    Paths refer to the layout :func:`serialize_sla` would produce.
    """
    issues = []

    def add(path, kind, message):
        issues.append(ParseIssue(path, kind, message))

    if sla.start_date > sla.end_date:
        add("$[0].agreement", IssueKind.BAD_DATE, "start_date is after end_date")

    seen_activities = set()
    for i, activity in enumerate(sla.activities, start=1):
        path = f"$[{i}]"
        if activity.name in seen_activities:
            add(f"{path}.activity", IssueKind.DUPLICATE, f"activity {activity.name} repeated")
        seen_activities.add(activity.name)
        if activity.name not in catalog.activities:
            add(f"{path}.activity", IssueKind.UNKNOWN_ACTIVITY,
                f"activity {activity.name!r} is not in catalog {catalog.name}")
            continue
        seen_targets = set()
        for j, target in enumerate(activity.targets):
            tpath = f"{path}.targets[{j}]"
            key = target.kind.value
            spec = catalog.target(target.type_name)
            if target.type_name in seen_targets:
                add(tpath, IssueKind.DUPLICATE, f"{target.type_name} repeated in activity")
            seen_targets.add(target.type_name)
            if (spec is None or spec.kind is not target.kind
                    or not catalog.permits_target(activity.name, target.type_name)):
                add(f"{tpath}.{key}", IssueKind.UNKNOWN_TARGET,
                    f"{target.type_name!r} is not permitted for activity {activity.name}")
                continue
            _validate_rules(target, tpath, catalog, add)

    if sla.application_slo is not None:
        path = f"$[{len(sla.activities) + 1}].{APPLICATION_SLO}"
        target = sla.application_slo
        if target.type_name != APPLICATION_SLO or catalog.target(APPLICATION_SLO) is None:
            add(path, IssueKind.UNKNOWN_TARGET, f"catalog {catalog.name} defines no application_slo")
        else:
            _validate_rules(target, path, catalog, add)
    return issues


def _validate_rules(target: TargetSpec, path, catalog, add):
    if not target.rules:
        add(f"{path}.rules", IssueKind.MISSING_FIELD, "a target needs at least one rule")
    seen = set()
    for k, rule in enumerate(target.rules):
        rpath = f"{path}.rules[{k}]"
        if rule.metric_key in seen:
            add(f"{rpath}.metric", IssueKind.DUPLICATE, f"{rule.metric_key} repeated")
        seen.add(rule.metric_key)
        if not catalog.permits_metric(target.type_name, rule.metric_key):
            add(f"{rpath}.metric", IssueKind.UNKNOWN_METRIC,
                f"{rule.metric_key!r} is not a metric of {target.type_name}")
            continue
        if rule.unit is not None:
            family = catalog.metric_family(rule.metric_key)
            known = catalog.unit(rule.unit.symbol)
            if known != rule.unit:
                add(f"{rpath}.unit", IssueKind.BAD_UNIT, f"unit {rule.unit.symbol!r} is not in catalog")
            elif family is not rule.unit.family:
                add(f"{rpath}.unit", IssueKind.BAD_UNIT,
                    f"{rule.metric_key} is measured in {family.value}, "
                    f"unit {rule.unit.symbol} is {rule.unit.family.value}")


def serialize_sla(sla: SlaDocument) -> str:
    """Render ``sla`` as format-v1 JSON text.  Output is byte-stable."""
    lines = ["["]
    elements = [
        "  {\"agreement\": {\"start_date\": %s, \"end_date\": %s}}"
        % (json.dumps(sla.start_date.isoformat()), json.dumps(sla.end_date.isoformat()))
    ]
    for activity in sla.activities:
        targets = []
        for target in activity.targets:
            targets.append(
                "    {%s: %s, \"rules\": [\n%s\n    ]}"
                % (json.dumps(target.kind.value), json.dumps(target.type_name),
                   _rules_text(target.rules, "      "))
            )
        body = ",\n".join(targets)
        elements.append(
            "  {\"activity\": %s, \"targets\": [%s]}"
            % (json.dumps(activity.name), f"\n{body}\n  " if targets else "")
        )
    if sla.application_slo is not None:
        elements.append(
            "  {\"application_slo\": {\"rules\": [\n%s\n  ]}}"
            % _rules_text(sla.application_slo.rules, "    ")
        )
    lines.append(",\n".join(elements))
    lines.append("]")
    return "\n".join(lines) + "\n"


def _rules_text(rules, indent):
    return ",\n".join(indent + _rule_text(rule) for rule in rules)


def _rule_text(rule: Rule) -> str:
    parts = [
        f"\"metric\": {json.dumps(rule.metric_key)}",
        f"\"operator\": {json.dumps(rule.operator.symbol)}",
        f"\"value\": {rule.threshold}",
    ]
    if rule.unit is not None:
        parts.append(f"\"unit\": {json.dumps(rule.unit.symbol)}")
    return "{" + ", ".join(parts) + "}"


_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PATH_TOKEN = re.compile(r'\[(\d+)\]|\.([A-Za-z_][A-Za-z0-9_]*)|\[("(?:[^"\\]|\\.)*")\]')


def _child(path: str, key: str) -> str:
    if _IDENTIFIER.fullmatch(key):
        return f"{path}.{key}"
    return f"{path}[{json.dumps(key)}]"


def resolve_path(raw, path: str):
    """Return the node of a decoded JSON document addressed by an issue path."""
    if not path.startswith("$"):
        raise KeyError(path)
    node = raw
    pos = 1
    while pos < len(path):
        match = _PATH_TOKEN.match(path, pos)
        if match is None:
            raise KeyError(path)
        if match.group(1) is not None:
            node = node[int(match.group(1))]
        elif match.group(2) is not None:
            node = node[match.group(2)]
        else:
            node = node[json.loads(match.group(3))]
        pos = match.end()
    return node
