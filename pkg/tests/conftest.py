import json
from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "slachain" / "data"
SLA_DIR = DATA / "sla"
CATALOG_PATH = DATA / "catalogs" / "rpm-v1.json"


@pytest.fixture(scope="session")
def rpm_text():
    return (SLA_DIR / "rpm.json").read_text()


@pytest.fixture(scope="session")
def rpm_raw(rpm_text):
    return json.loads(rpm_text)


@pytest.fixture(scope="session")
def catalog_raw():
    return json.loads(CATALOG_PATH.read_text())


@pytest.fixture(scope="session")
def rpm_sla(rpm_text):
    from slachain.parser import parse_sla

    return parse_sla(rpm_text)


@pytest.fixture(scope="session")
def rpm_contract(rpm_sla):
    from slachain.catalog import default_catalog
    from slachain.contract import generate_contract

    return generate_contract(rpm_sla, default_catalog())
