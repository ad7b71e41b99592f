from __future__ import annotations

import pytest

from firmpanel.impute import impute_pass, reconstruct
from firmpanel.model import Form
from firmpanel.statements import harmonize

from conftest import filing, firm


def index(*fs):
    return {f.key: f for f in fs}


def test_t1_reconstruction():
    s = reconstruct("7736050003", 2020, index(filing(year=2021, prior1={"2110": 400})))
    assert s.lines == {"2110": 400}
    assert s.imputed and s.imputation_source_year == 2021


def test_t2_reconstruction_is_balance_only():
    f = filing(year=2022, prior1={"2110": 1}, prior2={"1600": 900})
    s = reconstruct("7736050003", 2020, index(f))
    assert s.lines == {"1600": 900}
    assert s.imputation_source_year == 2022


def test_t1_preferred_over_t2():
    fs = index(filing(year=2021, prior1={"2110": 1}), filing(year=2022, prior2={"1600": 2}))
    assert reconstruct("7736050003", 2020, fs).lines == {"2110": 1}


def test_never_overwrites():
    with pytest.raises(ValueError):
        reconstruct("7736050003", 2020, index(filing(year=2020)))


def test_rosstat_era_prior_zeros_are_missing():
    s = reconstruct("7736050003", 2015, index(filing(year=2016, prior1={"2110": 0, "1600": 5})))
    assert s.lines == {"1600": 5}


def test_fns_era_prior_zeros_survive():
    s = reconstruct("7736050003", 2020, index(filing(year=2021, prior1={"2110": 0})))
    assert s.lines == {"2110": 0}


def test_simplified_source_sets_flag():
    s = reconstruct("7736050003", 2020, index(filing(year=2021, form=Form.SIMPLIFIED, prior1={"1600": 1})))
    assert s.simplified and s.form is Form.SIMPLIFIED


def test_cashflow_lines_missing_when_source_lacks_them():
    s = reconstruct("7736050003", 2014, index(filing(year=2015, prior1={"1600": 5, "2110": 7})))
    assert "4100" not in s.lines


def test_ten_firm_fixture():
    inns = [f"{i:010d}" for i in range(10)]
    universe = [firm(inn, y) for inn in inns for y in (2019, 2020, 2021)]
    filings = {}
    gaps = {inns[1]: 2019, inns[4]: 2020, inns[7]: 2019}
    for inn in inns:
        for y in (2019, 2020, 2021):
            if gaps.get(inn) != y:
                f = filing(inn, y, current={"2110": y}, prior1={"2110": y - 1})
                filings[f.key] = f
    filed = {k: harmonize(f) for k, f in filings.items()}
    out, report = impute_pass(filed, filings, universe)
    imputed = {k: s for k, s in out.items() if s.imputed}
    assert sorted(imputed) == sorted(gaps.items())
    assert all(s.lines == {"2110": s.year} for s in imputed.values())
    assert report == [(2019, 2, 2, 0), (2020, 1, 1, 0), (2021, 0, 0, 0)]
    for k, s in filed.items():
        assert out[k] is s


def test_final_year_gap_not_reconstructable():
    universe = [firm(year=2022), firm(year=2023)]
    filings = index(filing(year=2022))
    out, report = impute_pass({k: harmonize(f) for k, f in filings.items()}, filings, universe)
    assert ("7736050003", 2023) not in out
    assert report[-1] == (2023, 1, 0, 0)
