"""Vocabulary catalogs: the permitted activities, targets, metrics and units.

A catalog is a JSON document (see ``docs/formats.md``).  Nothing about a
particular activity or SLO type is hardcoded in the library; the bundled
``rpm-v1`` catalog is plain data.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path

from .model import APPLICATION_SLO, SlaError, TargetKind, UnitFamily, UnitKind

DEFAULT_CATALOG = "rpm-v1"
SUPPORTED_FORMAT_VERSIONS = (1,)


class CatalogError(SlaError):
    pass


@dataclass(frozen=True)
class TargetType:
    name: str
    kind: TargetKind
    metrics: tuple[str, ...]


@dataclass(frozen=True)
class VocabularyCatalog:
    name: str
    format_version: int
    units: dict[str, UnitKind]
    metrics: dict[str, UnitFamily]
    targets: dict[str, TargetType]
    activities: dict[str, tuple[str, ...]]
    # layer -> ordered (activity, target) update methods used by the emulator
    layers: dict[str, tuple[tuple[str, str], ...]]
    source: bytes = b""

    def metric_family(self, metric_key: str) -> UnitFamily | None:
        return self.metrics.get(metric_key)

    def unit(self, symbol: str) -> UnitKind | None:
        return self.units.get(symbol)

    def target(self, type_name: str) -> TargetType | None:
        return self.targets.get(type_name)

    def permits_target(self, activity: str, type_name: str) -> bool:
        if activity == APPLICATION_SLO:
            return type_name == APPLICATION_SLO and APPLICATION_SLO in self.targets
        return type_name in self.activities.get(activity, ())

    def permits_metric(self, type_name: str, metric_key: str) -> bool:
        target = self.targets.get(type_name)
        return target is not None and metric_key in target.metrics

    def update_methods(self, layer: str) -> tuple[tuple[str, str], ...]:
        return self.layers.get(layer, ())


def parse_catalog(text: str | bytes) -> VocabularyCatalog:
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog is not valid JSON: {exc}") from None
    try:
        version = doc["format_version"]
        if version not in SUPPORTED_FORMAT_VERSIONS:
            raise CatalogError(f"unsupported catalog format_version {version!r}")
        units = {
            symbol: UnitKind(symbol, UnitFamily(spec["family"]), Decimal(spec["scale"]))
            for symbol, spec in doc["units"].items()
        }
        metrics = {key: UnitFamily(family) for key, family in doc["metrics"].items()}
        targets = {
            name: TargetType(name, TargetKind(spec["kind"]), tuple(spec["metrics"]))
            for name, spec in doc["targets"].items()
        }
        activities = {name: tuple(types) for name, types in doc["activities"].items()}
        layers = {
            layer: tuple((activity, target) for activity, target in methods)
            for layer, methods in doc.get("layers", {}).items()
        }
        catalog = VocabularyCatalog(
            name=doc["catalog"],
            format_version=version,
            units=units,
            metrics=metrics,
            targets=targets,
            activities=activities,
            layers=layers,
            source=raw,
        )
    except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
        if isinstance(exc, CatalogError):
            raise
        raise CatalogError(f"malformed catalog: {exc!r}") from None
    _check_consistency(catalog)
    return catalog


def _check_consistency(catalog: VocabularyCatalog) -> None:
    for target in catalog.targets.values():
        for metric in target.metrics:
            if metric not in catalog.metrics:
                raise CatalogError(f"target {target.name} lists undefined metric {metric}")
    for activity, types in catalog.activities.items():
        if activity == APPLICATION_SLO:
            raise CatalogError(f"{APPLICATION_SLO!r} is reserved and cannot be an activity")
        for type_name in types:
            if type_name not in catalog.targets:
                raise CatalogError(f"activity {activity} lists undefined target {type_name}")
    for layer, methods in catalog.layers.items():
        for activity, type_name in methods:
            if not catalog.permits_target(activity, type_name):
                raise CatalogError(f"layer {layer} references {activity}/{type_name}, not permitted")


def load_catalog(path: str | Path | None = None) -> VocabularyCatalog:
    """Load a catalog file, or the bundled default when ``path`` is None."""
    if path is None:
        return default_catalog()
    return parse_catalog(Path(path).read_bytes())


def bundled_catalog_bytes(name: str = DEFAULT_CATALOG) -> bytes:
    return resources.files("slachain.data.catalogs").joinpath(f"{name}.json").read_bytes()


@functools.lru_cache(maxsize=None)
def default_catalog() -> VocabularyCatalog:
    return parse_catalog(bundled_catalog_bytes(DEFAULT_CATALOG))
