import datetime as dt
import re
from decimal import Decimal

import pytest

from conftest import SLA_DIR
from oracles import count_sla_nodes, sla_rules_by_target
from slachain.catalog import default_catalog
from slachain.contract import (
    NAME_PATTERN,
    ContractError,
    MethodKind,
    contract_from_json,
    contract_to_json,
    generate_contract,
    method_name,
    render_documentation,
    render_source_listing,
)
from slachain.model import RelationalOperator, Rule, SlaDocument, TargetKind, TargetSpec, WorkflowActivity
from slachain.parser import load_sla, parse_sla

GENERATED = (MethodKind.UPDATE, MethodKind.GET_LATEST, MethodKind.GET_VIOLATIONS)


@pytest.mark.parametrize("activity, target, kind, expected", [
    ("examine_captured_eoi", "gateway_slo", MethodKind.UPDATE, "examine_captured_eoi_gateway_slo_update"),
    ("examine_captured_eoi", "gateway_slo", MethodKind.GET_LATEST,
     "get_latest_examine_captured_eoi_gateway_slo_update"),
    ("examine_captured_eoi", "gateway_slo", MethodKind.GET_VIOLATIONS,
     "get_examine_captured_eoi_gateway_slo_violations"),
    (None, "application_slo", MethodKind.UPDATE, "application_slo_update"),
    ("application_slo", "application_slo", MethodKind.GET_LATEST, "get_latest_application_slo_update"),
    ("application_slo", "application_slo", MethodKind.GET_VIOLATIONS, "get_application_slo_violations"),
])
def test_method_name(activity, target, kind, expected):
    assert method_name(activity, target, kind) == expected


def minimal_contract():
    return generate_contract(load_sla(SLA_DIR / "minimal.json"), default_catalog())


def test_application_slo_only_has_six_methods():
    contract = minimal_contract()
    assert len(contract.methods) == 6
    assert list(contract.methods) == [
        "application_slo_update", "get_latest_application_slo_update",
        "get_application_slo_violations", "init", "invoke", "history",
    ]


def test_rpm_method_count_is_3k_plus_3(rpm_raw, rpm_contract):
    k = count_sla_nodes(rpm_raw)["targets"]
    assert len(rpm_contract.methods) == 3 * k + 3 == 39


def test_update_checks_are_the_sla_rules_in_order(rpm_raw, rpm_contract):
    expected = sla_rules_by_target(rpm_raw)
    updates = rpm_contract.descriptors(MethodKind.UPDATE)
    assert [d.name for d in updates] == [f"{base}_update" for base, _ in expected]
    for d, (_, rules) in zip(updates, expected):
        got = [(r.metric_key, r.operator.symbol, r.threshold) for r in d.checks]
        want = [(r["metric"], r["operator"], Decimal(str(r["value"]))) for r in rules]
        assert got == want


def test_every_rule_in_exactly_one_update(rpm_sla, rpm_contract):
    placed = [(d.activity, d.target, r) for d in rpm_contract.descriptors(MethodKind.UPDATE) for r in d.checks]
    source = [(a, t.type_name, r) for a, t, r in rpm_sla.iter_rules()]
    assert sorted(map(repr, placed)) == sorted(map(repr, source))
    assert len(set(map(repr, placed))) == len(placed)


def test_names_match_grammar_and_round_trip(rpm_contract):
    for d in rpm_contract.methods.values():
        assert d.name == d.name.lower()
        if d.kind in GENERATED:
            assert NAME_PATTERN.match(d.name)
            assert method_name(d.activity, d.target, d.kind) == d.name
    assert len(set(rpm_contract.methods)) == len(rpm_contract.methods)


def test_state_key_prefix(rpm_contract):
    d = rpm_contract.methods["examine_captured_eoi_gateway_slo_update"]
    assert d.state_key_prefix == "EXAMINE_CAPTURED_EOI_GATEWAY_SLO"
    assert d.violations_key("1") == "EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_1"
    assert minimal_contract().methods["application_slo_update"].state_key_prefix == "APPLICATION_SLO"


def test_generation_is_deterministic(rpm_text):
    a = generate_contract(parse_sla(rpm_text), default_catalog())
    b = generate_contract(parse_sla(rpm_text), default_catalog())
    assert a.listing.encode() == b.listing.encode()
    assert a.docs.encode() == b.docs.encode()
    assert a.sla_fingerprint == b.sla_fingerprint
    assert contract_to_json(a) == contract_to_json(b)


def test_invalid_sla_is_refused():
    sla = SlaDocument(dt.date(2020, 1, 1), dt.date(2020, 1, 2), None, (
        WorkflowActivity("teleport_data", (TargetSpec(TargetKind.SLO, "gateway_slo", (
            Rule("GATEWAY_AVAILABILITY", RelationalOperator.GE, Decimal("99.9")),)),)),
    ))
    with pytest.raises(ContractError) as err:
        generate_contract(sla, default_catalog())
    assert err.value.issues


def test_docs_minimal():
    docs = minimal_contract().docs
    assert "application_slo_update" in docs
    assert re.search(r"^\s+ID\s", docs, re.M)
    assert "APPLICATION_AVAILABILITY" in docs


def test_docs_name_every_method(rpm_contract):
    docs = rpm_contract.docs
    headings = [line for line in docs.splitlines() if line and not line.startswith(" ") and ":" not in line
                and line == line.lower()]
    assert headings == list(rpm_contract.methods)
    assert render_documentation(rpm_contract) == docs


def test_docs_vary_with_sla(rpm_contract):
    assert minimal_contract().docs != rpm_contract.docs


def test_listing_guard_form(rpm_contract):
    listing = rpm_contract.listing
    assert "!(GATEWAY_AVAILABILITY >= 99.9)" in listing
    assert "Invalid function name" in listing


def _method_block(listing, name):
    block = listing.split(f"method {name}(", 1)[1]
    return block.split("\nmethod ", 1)[0]


def test_one_guard_per_rule(rpm_contract):
    for d in rpm_contract.descriptors(MethodKind.UPDATE):
        block = _method_block(rpm_contract.listing, d.name)
        assert block.count("if !(") == len(d.checks)
    two = rpm_contract.methods["filter_captured_eoi_gateway_slo_update"]
    assert len(two.checks) == 2
    assert _method_block(rpm_contract.listing, two.name).count("if !(") == 2


def test_listing_writes_exact_keys(rpm_contract):
    block = _method_block(rpm_contract.listing, "examine_captured_eoi_gateway_slo_update")
    assert 'putState("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_VIOLATIONS_" + id' in block
    assert 'putState("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_" + id' in block


def test_empty_contract_listing_has_only_stubs():
    sla = parse_sla('[{"agreement": {"start_date": "2020-01-01", "end_date": "2020-01-01"}}]')
    contract = generate_contract(sla, default_catalog())
    assert list(contract.methods) == ["init", "invoke", "history"]
    defined = re.findall(r"^method (\w+)\(", render_source_listing(contract), re.M)
    assert defined == ["init", "invoke", "history"]


def test_unit_scaled_guard(rpm_contract):
    assert "!(MEMORY_SIZE >= 2147483648)" in rpm_contract.listing
    assert "!(DATA_TIMELINESS <= 10000)" in rpm_contract.listing


def test_descriptor_round_trip(rpm_contract):
    again = contract_from_json(contract_to_json(rpm_contract))
    assert again == rpm_contract
    assert again.listing == rpm_contract.listing


def test_case_insensitive_lookup(rpm_contract):
    d = rpm_contract.lookup("EXAMINE_CAPTURED_EOI_GATEWAY_SLO_UPDATE")
    assert d is rpm_contract.methods["examine_captured_eoi_gateway_slo_update"]
    assert rpm_contract.lookup("no_such_method") is None
