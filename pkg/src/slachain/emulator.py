"""Workload emulator for the remote patient monitoring topology.

Every element of every layer sends one state update per update method of
its layer, per iteration.  A seeded fraction of elements per layer is
marked violating; each of their payloads breaks exactly one rule, so the
number of injected violations is known in advance and can be compared with
what the contract recorded on the ledger.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import VocabularyCatalog, default_catalog, load_catalog
from .contract import MethodDescriptor, MonitorContract, generate_contract
from .ledger import EndorsementRejected, Ledger, LedgerConfig, TxValidation
from .model import RelationalOperator, Rule, SlaError, UnitFamily
from .parser import load_sla
from .runtime import decode_violations

LAYERS = ("sensor", "gateway", "ingest", "rt_analytics", "storage")

# which organisation operates (and therefore submits for) each layer
LAYER_ORG = {
    "sensor": "SP1",
    "gateway": "SP1",
    "ingest": "SP2",
    "rt_analytics": "SP2",
    "storage": "HCP",
}

BASE_STEP = Decimal("0.001")
_SELECT_STREAM = 0x5E1EC7
_PAYLOAD_STREAM = 0x9A710AD


class EmulationError(SlaError):
    pass


@dataclass(frozen=True)
class EmulatorConfig:
    counts: dict = field(default_factory=lambda: dict.fromkeys(LAYERS, 1))
    violation_ratio: Decimal = Decimal("0.05")
    iterations: int = 3
    seed: int = 42
    sla_path: str | None = None
    catalog_path: str | None = None
    floor_one_per_layer: bool = False
    concurrent: bool = False
    block_cut_size: int = 10

    def __post_init__(self):
        counts = {layer: int(self.counts.get(layer, 0)) for layer in LAYERS}
        unknown = set(self.counts) - set(LAYERS)
        if unknown:
            raise ValueError(f"unknown layer(s): {', '.join(sorted(unknown))}")
        if any(n < 0 for n in counts.values()) or not any(counts.values()):
            raise ValueError("layer counts must be non-negative with at least one positive")
        ratio = Decimal(str(self.violation_ratio))
        if not 0 <= ratio <= 1:
            raise ValueError("violation_ratio must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "violation_ratio", ratio)

    @classmethod
    def from_row(cls, row: Sequence[int], **kwargs) -> "EmulatorConfig":
        """Build a config from a (sensor, gateway, ingest, rt_analytics, storage) tuple."""
        return cls(counts=dict(zip(LAYERS, row)), **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violation_ratio"] = str(self.violation_ratio)
        return d


@dataclass(frozen=True)
class PlannedTx:
    layer: str
    element_id: str
    method: str
    payload: str
    violate: bool
    violated_metric: str | None = None


def violating_count(ratio: Decimal, count: int, floor_one: bool = False) -> int:
    n = math.ceil(ratio * count)
    if floor_one and count:
        n = max(n, 1)
    return n


def layer_methods(contract: MonitorContract, catalog: VocabularyCatalog, layer: str) -> list[MethodDescriptor]:
    out = []
    for activity, target in catalog.update_methods(layer):
        d = contract.update_for(activity, target)
        if d is None:
            raise EmulationError(f"layer {layer} needs {activity}/{target}, which the SLA does not define")
        out.append(d)
    return out


def _rng(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([w & 0xFFFFFFFF for w in words] +
                                                        [w >> 32 for w in words]))


def _name_words(text: str) -> list[int]:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]


def select_violators(config: EmulatorConfig, layer: str, iteration: int) -> frozenset[int]:
    count = config.counts[layer]
    n = violating_count(config.violation_ratio, count, config.floor_one_per_layer)
    if n == 0:
        return frozenset()
    rng = _rng(config.seed, _SELECT_STREAM, iteration, LAYERS.index(layer))
    return frozenset(int(i) for i in rng.choice(count, size=n, replace=False))


def _step_for(threshold: Decimal) -> Decimal:
    # fine enough to land strictly between the threshold and its neighbours
    exponent = threshold.as_tuple().exponent
    if isinstance(exponent, int) and exponent < -3:
        return Decimal(1).scaleb(exponent)
    return BASE_STEP


# side of the threshold each operator accepts, and the side that breaks it
_ABOVE_INCL, _ABOVE, _BELOW_INCL, _BELOW, _POINT, _APART = range(6)
_SATISFY_SIDE = {
    RelationalOperator.GE: _ABOVE_INCL, RelationalOperator.GT: _ABOVE,
    RelationalOperator.LE: _BELOW_INCL, RelationalOperator.LT: _BELOW,
    RelationalOperator.EQ: _POINT, RelationalOperator.NE: _APART,
}
_VIOLATE_SIDE = {
    RelationalOperator.GE: _BELOW, RelationalOperator.GT: _BELOW_INCL,
    RelationalOperator.LE: _ABOVE, RelationalOperator.LT: _ABOVE_INCL,
    RelationalOperator.EQ: _APART, RelationalOperator.NE: _POINT,
}


def _intervals(side: int, t: Decimal, span: Decimal, step: Decimal) -> list[tuple[Decimal, Decimal]]:
    """Closed grid intervals ``[a, b]`` making up one side of ``t``."""
    above = (t + step, t + span)
    below = (t - span, t - step)
    return {
        _ABOVE_INCL: [(t, t + span)],
        _ABOVE: [above],
        _BELOW_INCL: [(t - span, t)],
        _BELOW: [below],
        _POINT: [(t, t)],
        _APART: [below, above],
    }[side]


def rule_value(rule: Rule, satisfy: bool, rng: np.random.Generator, percent: bool = False) -> Decimal:
    """Draw a canonical-unit value on the chosen side of ``rule``.

    Candidates lie on a decimal grid around the threshold, so values are
    exact.  They are kept inside [0, 100] for percentages and at or above
    zero for non-negative thresholds, unless that leaves no candidate.
    """
    t = rule.canonical_threshold
    step = _step_for(t)
    span = max(abs(t) / 10, Decimal(1))
    side = (_SATISFY_SIDE if satisfy else _VIOLATE_SIDE)[rule.operator]
    raw = _intervals(side, t, span, step)
    lo = Decimal(0) if (percent or t >= 0) else None
    hi = Decimal(100) if percent else None
    clamped = []
    for a, b in raw:
        if lo is not None:
            a = max(a, lo)
        if hi is not None:
            b = min(b, hi)
        if a <= b:
            clamped.append((a, b))
    a, b = (clamped or raw)[int(rng.integers(0, len(clamped or raw)))]
    k = int(rng.integers(0, int((b - a) / step) + 1))
    return a + k * step


def _number(value: Decimal) -> str:
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text or "0"


def gen_payload(layer: str, element_id: str, violate: bool, rules: Sequence[Rule], seed: int,
                iteration: int = 0, method_index: int = 0,
                catalog: VocabularyCatalog | None = None) -> tuple[str, str | None]:
    """Build one update payload; returns ``(json_text, violated_metric)``.

    With ``violate`` set, exactly one seeded-chosen rule is broken and every
    other rule is satisfied.
    """
    catalog = catalog or default_catalog()
    rng = _rng(seed, _PAYLOAD_STREAM, iteration, method_index, LAYERS.index(layer) if layer in LAYERS else 99,
               *_name_words(element_id))
    broken = int(rng.integers(0, len(rules))) if violate and rules else None
    parts = []
    for i, rule in enumerate(rules):
        percent = catalog.metric_family(rule.metric_key) is UnitFamily.PERCENT
        value = rule_value(rule, i != broken, rng, percent)
        parts.append(f'"{rule.metric_key}": {_number(value)}')
    parts.append(f'"ID": {json.dumps(element_id)}')
    return "{" + ", ".join(parts) + "}", None if broken is None else rules[broken].metric_key


def plan_iteration(config: EmulatorConfig, contract: MonitorContract, catalog: VocabularyCatalog,
                   iteration: int = 0) -> list[PlannedTx]:
    """All update transactions of one iteration, layer by layer, element by element."""
    plan = []
    for layer in LAYERS:
        count = config.counts[layer]
        if not count:
            continue
        methods = layer_methods(contract, catalog, layer)
        violators = select_violators(config, layer, iteration)
        for index in range(count):
            element_id = f"{layer}-{index}"
            violate = index in violators
            for m_index, d in enumerate(methods):
                text, metric = gen_payload(layer, element_id, violate, d.checks, config.seed,
                                           iteration, m_index, catalog)
                plan.append(PlannedTx(layer, element_id, d.name, text, violate, metric))
    return plan


@dataclass
class LayerStats:
    elements: int = 0
    methods: int = 0
    violating_elements: int = 0
    transactions: int = 0
    injected: int = 0
    detected: int = 0


@dataclass
class EmulationReport:
    config: dict
    transactions_performed: int
    violations_injected: int
    violations_detected: int
    per_layer: dict
    rejected: int
    failed: int
    invalid: int
    blocks: int
    final_chain_hash: str
    elapsed: float
    unmatched: list = field(default_factory=list)
    ledger: Ledger | None = field(default=None, repr=False, compare=False)

    @property
    def success(self) -> bool:
        return (self.violations_detected == self.violations_injected and not self.unmatched
                and not self.rejected and not self.invalid)

    def to_dict(self, include_elapsed: bool = True) -> dict:
        d = {
            "format": "slachain-report/1",
            "config": self.config,
            "transactions_performed": self.transactions_performed,
            "violations_injected": self.violations_injected,
            "violations_detected": self.violations_detected,
            "success": self.success,
            "per_layer": self.per_layer,
            "rejected": self.rejected,
            "failed": self.failed,
            "invalid": self.invalid,
            "blocks": self.blocks,
            "final_chain_hash": self.final_chain_hash,
            "unmatched": self.unmatched,
        }
        if include_elapsed:
            d["elapsed_seconds"] = round(self.elapsed, 6)
        return d

    def to_json(self, include_elapsed: bool = True) -> str:
        return json.dumps(self.to_dict(include_elapsed), indent=2, sort_keys=True) + "\n"


def _load_inputs(config: EmulatorConfig):
    catalog = load_catalog(config.catalog_path) if config.catalog_path else default_catalog()
    if config.sla_path:
        sla = load_sla(config.sla_path, catalog)
    else:
        from importlib import resources

        sla = load_sla(resources.files("slachain.data.sla").joinpath("rpm.json"), catalog)
    return generate_contract(sla, catalog), catalog


def run_emulation(config: EmulatorConfig, ledger_config: LedgerConfig | None = None) -> EmulationReport:
    """Emulate ``config.iterations`` rounds and audit the ledger afterwards.

    The returned report's ``ledger`` attribute holds the resulting ledger.
    """
    contract, catalog = _load_inputs(config)
    ledger = Ledger(ledger_config or LedgerConfig(block_cut_size=config.block_cut_size))
    ledger.deploy(contract)

    stats = {layer: LayerStats(elements=config.counts[layer]) for layer in LAYERS}
    for layer in LAYERS:
        if config.counts[layer]:
            stats[layer].methods = len(layer_methods(contract, catalog, layer))
    injected: dict[tuple[str, str, str], int] = {}
    rejected = 0

    def submit(tx: PlannedTx):
        ledger.submit(contract, tx.method, [tx.payload], LAYER_ORG[tx.layer])

    started = time.perf_counter()
    for iteration in range(config.iterations):
        plan = plan_iteration(config, contract, catalog, iteration)
        for tx in plan:
            s = stats[tx.layer]
            s.transactions += 1
            if tx.violate:
                s.injected += 1
                key = (tx.method, tx.element_id, tx.violated_metric)
                injected[key] = injected.get(key, 0) + 1
        for layer in LAYERS:
            stats[layer].violating_elements += len(select_violators(config, layer, iteration)) \
                if config.counts[layer] else 0
        if config.concurrent:
            by_layer = {}
            for tx in plan:
                by_layer.setdefault(tx.layer, []).append(tx)

            def run_layer(batch):
                missed = 0
                for tx in batch:
                    try:
                        submit(tx)
                    except EndorsementRejected:
                        missed += 1
                return missed

            with ThreadPoolExecutor(max_workers=len(by_layer)) as pool:
                rejected += sum(pool.map(run_layer, by_layer.values()))
        else:
            for tx in plan:
                try:
                    submit(tx)
                except EndorsementRejected:
                    rejected += 1
    ledger.commit_pending()
    elapsed = time.perf_counter() - started

    # audit: read every violations key the run could have touched
    detected: dict[tuple[str, str, str], int] = {}
    for layer in LAYERS:
        if not config.counts[layer]:
            continue
        for d in layer_methods(contract, catalog, layer):
            for index in range(config.counts[layer]):
                element_id = f"{layer}-{index}"
                for record in decode_violations(ledger.get_state(d.violations_key(element_id))):
                    key = (d.name, element_id, record.metric_key)
                    detected[key] = detected.get(key, 0) + 1
                    stats[layer].detected += 1
    unmatched = sorted(
        [list(k) + [injected.get(k, 0), detected.get(k, 0)]
         for k in set(injected) | set(detected) if injected.get(k, 0) != detected.get(k, 0)]
    )

    statuses = [tx.validation for block in ledger.blocks[1:] for tx in block.transactions]
    return EmulationReport(
        config=config.to_dict(),
        transactions_performed=sum(s.transactions for s in stats.values()),
        violations_injected=sum(s.injected for s in stats.values()),
        violations_detected=sum(s.detected for s in stats.values()),
        per_layer={layer: asdict(s) for layer, s in stats.items()},
        rejected=rejected,
        failed=statuses.count(TxValidation.FAILED),
        invalid=statuses.count(TxValidation.INVALID),
        blocks=len(ledger.blocks),
        final_chain_hash=ledger.tip.block_hash.hex(),
        elapsed=elapsed,
        unmatched=unmatched,
        ledger=ledger,
    )


def write_report(report: EmulationReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json())
