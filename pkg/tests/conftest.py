from __future__ import annotations

from datetime import date

import pytest

from firmpanel.model import (
    Address,
    EligibilityDecision,
    Exemption,
    FirmRecord,
    Form,
    GeoLocation,
    HarmonizedStatement,
    PanelRow,
    Provider,
    RawFiling,
    Unit,
)

# criterion number -> (passed, title, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")


def firm(inn: str = "7736050003", year: int = 2020, **kw) -> FirmRecord:
    kw.setdefault("ogrn", "1027700070518")
    kw.setdefault("creation_date", date(2005, 1, 1))
    kw.setdefault("region", "Moskva")
    return FirmRecord(inn=inn, year=year, **kw)


def statement(inn: str = "7736050003", year: int = 2020, lines=None, form: Form = Form.FULL,
              **kw) -> HarmonizedStatement:
    return HarmonizedStatement(inn=inn, year=year, form=form, lines=dict(lines or {}), **kw)


def filing(inn: str = "7736050003", year: int = 2020, current=None, prior1=None, prior2=None,
           unit: Unit = Unit.THOUSANDS, form: Form = Form.FULL, submission_date=None,
           decodings=()) -> RawFiling:
    provider = Provider.FNS if year >= 2019 else Provider.ROSSTAT
    return RawFiling(inn, year, provider, form, unit, submission_date, dict(current or {}),
                     dict(prior1 or {}), dict(prior2 or {}), tuple(decodings))


ELIGIBLE = EligibilityDecision(eligible=True)
RELIGIOUS = EligibilityDecision(eligible=False, exempt_criteria=Exemption.RELIGIOUS)


def row(inn: str = "7736050003", year: int = 2020, lines=None, eligible: bool = True,
        filed: bool | None = None, imputed: bool = False, geo: GeoLocation | None = None,
        anomalous: bool = False, okved: str | None = "47.11", financial: bool = False,
        articulated: bool | None = None, region: str = "Moskva") -> PanelRow:
    decision = ELIGIBLE if eligible else RELIGIOUS
    if financial:
        decision = EligibilityDecision(eligible=False, exempt_criteria=Exemption.FINANCIAL, financial=True)
    s = None
    if lines is not None:
        s = statement(inn, year, lines, imputed=imputed,
                      imputation_source_year=year + 1 if imputed else None, articulated=articulated)
    if filed is None:
        filed = s is not None and not imputed
    return PanelRow(firm(inn, year, okved=okved, region=region), decision, filed, s, geo, anomalous)


@pytest.fixture
def address() -> Address:
    return Address("Moskva", "Moskva", "Tverskaya", "7")
