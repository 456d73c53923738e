"""SLA domain types and pure rule evaluation.

Numbers are :class:`decimal.Decimal` throughout so that thresholds such as
``99.9`` compare exactly as written in the agreement.
"""

from __future__ import annotations

import datetime as dt
import enum
import operator
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Callable, Iterator

APPLICATION_SLO = "application_slo"


class SlaError(Exception):
    """Base class for errors raised by this package."""


class EvaluationError(SlaError):
    """A value could not be judged against a rule (e.g. NaN)."""


class UnitError(SlaError):
    """A unit's family does not match the metric's family."""


class RelationalOperator(enum.Enum):
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    EQ = "=="
    NE = "!="

    @property
    def symbol(self) -> str:
        return self.value

    def __call__(self, left: Decimal, right: Decimal) -> bool:
        return _OPERATOR_FUNCS[self](left, right)

    @classmethod
    def from_token(cls, token: str) -> "RelationalOperator":
        """Accept either the symbol (``>=``) or the name (``GE``)."""
        if not isinstance(token, str):
            raise ValueError(f"operator must be a string, got {token!r}")
        for op in cls:
            if token == op.value or token.upper() == op.name:
                return op
        raise ValueError(f"unknown relational operator {token!r}")


_OPERATOR_FUNCS: dict[RelationalOperator, Callable[[Decimal, Decimal], bool]] = {
    RelationalOperator.LT: operator.lt,
    RelationalOperator.LE: operator.le,
    RelationalOperator.GT: operator.gt,
    RelationalOperator.GE: operator.ge,
    RelationalOperator.EQ: operator.eq,
    RelationalOperator.NE: operator.ne,
}


class UnitFamily(enum.Enum):
    PERCENT = "percent"
    MILLISECONDS = "milliseconds"
    BYTES_SCALED = "bytes_scaled"
    COUNT = "count"
    CURRENCY = "currency"


@dataclass(frozen=True)
class UnitKind:
    """A named unit; ``scale`` converts it to its family's canonical unit."""

    symbol: str
    family: UnitFamily
    scale: Decimal = Decimal(1)


class RuleOutcome(enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"


class TargetKind(enum.Enum):
    SLO = "slo"
    REQUIREMENT = "requirement"


def to_decimal(value) -> Decimal:
    """Coerce ints, decimal strings and Decimals; floats go through ``repr``."""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, (int, str)):
        try:
            return Decimal(value)
        except InvalidOperation:
            raise ValueError(f"not a decimal number: {value!r}") from None
    if isinstance(value, float):
        return Decimal(repr(value))
    raise TypeError(f"cannot interpret {type(value).__name__} as a decimal")


@dataclass(frozen=True)
class Rule:
    """The acceptable condition ``metric <operator> threshold``.

    ``threshold`` is kept as written; :attr:`canonical_threshold` is the value
    after unit scaling and is what submitted values are compared against.
    """

    metric_key: str
    operator: RelationalOperator
    threshold: Decimal
    unit: UnitKind | None = None

    def __post_init__(self):
        if not self.threshold.is_finite():
            raise ValueError(f"threshold for {self.metric_key} must be finite")

    @property
    def canonical_threshold(self) -> Decimal:
        if self.unit is None:
            return self.threshold
        return self.threshold * self.unit.scale

    @property
    def text(self) -> str:
        return f"{self.metric_key} {self.operator.symbol} {self.canonical_threshold}"


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind
    type_name: str
    rules: tuple[Rule, ...]

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))


@dataclass(frozen=True)
class WorkflowActivity:
    name: str
    targets: tuple[TargetSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))


@dataclass(frozen=True)
class SlaDocument:
    start_date: dt.date
    end_date: dt.date
    application_slo: TargetSpec | None = None
    activities: tuple[WorkflowActivity, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "activities", tuple(self.activities))

    def iter_targets(self) -> Iterator[tuple[str, TargetSpec]]:
        """Yield ``(activity_name, target)`` in document order, application SLO last."""
        for activity in self.activities:
            for target in activity.targets:
                yield activity.name, target
        if self.application_slo is not None:
            yield APPLICATION_SLO, self.application_slo

    def iter_rules(self) -> Iterator[tuple[str, TargetSpec, Rule]]:
        for activity_name, target in self.iter_targets():
            for rule in target.rules:
                yield activity_name, target, rule


def evaluate_rule(rule: Rule, value) -> RuleOutcome:
    """Judge a canonical-unit value against ``rule``.

    The rule states what is acceptable, so the outcome is VIOLATED exactly
    when the comparison is false.
    """
    try:
        number = to_decimal(value)
    except (TypeError, ValueError) as exc:
        raise EvaluationError(str(exc)) from None
    if not number.is_finite():
        raise EvaluationError(f"{rule.metric_key}: value {value!r} is not finite")
    if rule.operator(number, rule.canonical_threshold):
        return RuleOutcome.SATISFIED
    return RuleOutcome.VIOLATED


def normalize_value(metric_key: str, raw, unit: UnitKind, catalog=None) -> Decimal:
    """Convert ``raw`` expressed in ``unit`` into the metric's canonical unit."""
    if catalog is None:
        from .catalog import default_catalog

        catalog = default_catalog()
    expected = catalog.metric_family(metric_key)
    if expected is None:
        raise UnitError(f"metric {metric_key} is not defined in catalog {catalog.name}")
    if unit.family is not expected:
        raise UnitError(
            f"{metric_key} is measured in {expected.value}, "
            f"but unit {unit.symbol!r} belongs to {unit.family.value}"
        )
    return to_decimal(raw) * unit.scale
