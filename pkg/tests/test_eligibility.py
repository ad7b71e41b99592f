from __future__ import annotations

from collections import Counter
from datetime import date

from firmpanel.eligibility import (
    ExemptionSets,
    FinancialRegister,
    classify,
    eligibility_table,
    partition_counts,
    read_eligibility,
    write_eligibility,
)
from firmpanel.model import Exemption

from conftest import firm

SETS = ExemptionSets({
    (Exemption.GOVERNMENT, "okfs"): frozenset({"12"}),
    (Exemption.GOVERNMENT, "okopf"): frozenset({"75101"}),
    (Exemption.RELIGIOUS, "okopf"): frozenset({"71400"}),
})
NO_BANKS = FinancialRegister()


def test_religious():
    d = classify(firm(okopf="71400"), NO_BANKS, SETS)
    assert (d.eligible, d.exempt_criteria) == (False, Exemption.RELIGIOUS)


def test_q4_incorporation_only_in_that_year():
    created = date(2020, 11, 15)
    d = classify(firm(year=2020, creation_date=created), NO_BANKS, SETS)
    assert d.exempt_criteria is Exemption.NEWLY_INCORPORATED_Q4
    assert classify(firm(year=2021, creation_date=created), NO_BANKS, SETS).eligible


def test_september_incorporation_is_eligible():
    assert classify(firm(year=2020, creation_date=date(2020, 9, 30)), NO_BANKS, SETS).eligible


def test_financial_register_is_per_year():
    reg = FinancialRegister({2020: {"7736050003"}})
    d = classify(firm(year=2020), reg, SETS)
    assert (d.eligible, d.exempt_criteria, d.financial) == (False, Exemption.FINANCIAL, True)
    assert classify(firm(year=2021), reg, SETS).eligible


def test_rule_order_government_before_financial():
    reg = FinancialRegister({2020: {"7736050003"}})
    d = classify(firm(okfs="12"), reg, SETS)
    assert d.exempt_criteria is Exemption.GOVERNMENT
    assert d.financial


def test_missing_codes_are_eligible_with_diagnostic():
    from firmpanel.diagnostics import Diagnostics

    diag = Diagnostics()
    assert classify(firm(), NO_BANKS, SETS, diag).eligible
    assert diag.codes() == ["MISSING_CODES"]


def test_empty_universe():
    table, counts = eligibility_table([], NO_BANKS, SETS)
    assert table == {} and counts == Counter()


def test_single_llc():
    table, counts = eligibility_table([firm(okopf="12300", okfs="16")], NO_BANKS, SETS)
    assert counts == Counter(eligible=1)


def test_mixed_fixture_matches_hand_classification():
    reg = FinancialRegister({2020: {"0000000004", "0000000005"}})
    records = [
        firm("0000000001", okopf="12300", okfs="16"),                      # eligible
        firm("0000000002", okfs="12"),                                     # government
        firm("0000000003", okopf="71400"),                                 # religious
        firm("0000000004", okopf="12300"),                                 # financial
        firm("0000000005", okopf="71400"),                                 # religious wins over financial
        firm("0000000006", creation_date=date(2020, 10, 1)),               # q4
        firm("0000000007", creation_date=date(2019, 12, 31)),              # eligible
        firm("0000000008", okopf="75101", creation_date=date(2020, 12, 1)),  # government wins over q4
        firm("0000000009", okogu="4210001"),                               # eligible
        firm("0000000010", okfs="16"),                                     # eligible
    ]
    table, counts = eligibility_table(records, reg, SETS)
    assert counts == Counter(eligible=4, GOVERNMENT=2, RELIGIOUS=2, FINANCIAL=1, NEWLY_INCORPORATED_Q4=1)
    assert table[("0000000005", 2020)].financial
    assert partition_counts(table) == [(2020, 4, 6)]


def test_files_round_trip(tmp_path):
    SETS.write(tmp_path / "ex.csv")
    assert ExemptionSets.load(tmp_path / "ex.csv") == SETS
    table, _ = eligibility_table([firm(okfs="12"), firm("1111111111")], NO_BANKS, SETS)
    write_eligibility(tmp_path / "el.csv", table)
    assert read_eligibility(tmp_path / "el.csv") == table
