from __future__ import annotations

import io
import random
from datetime import date

import pytest
from hypothesis import given
from hypothesis import strategies as st

from firmpanel.diagnostics import Diagnostics
from firmpanel.model import Decoding, Form, Provider, RawFiling, Unit
from firmpanel.statements import (
    EmptyGroup,
    MalformedDocument,
    aggregate_decodings,
    clean_filing,
    consolidate_tax_lines,
    dedupe_filings,
    fns_to_string,
    harmonize,
    ingest,
    normalize_units,
    parse_fns_xml,
    parse_rosstat_csv,
    read_filings,
    rosstat_header,
    write_filings,
    write_fns_bundle,
    write_rosstat_csv,
)

from conftest import filing


def xml(body: str, year: int = 2020, **attrs) -> str:
    extra = "".join(f' {k}="{v}"' for k, v in attrs.items())
    return f'<filing inn="7736050003" year="{year}" form="FULL" unit="THOUSANDS"{extra}>{body}</filing>'


def test_absent_element_is_missing():
    f = parse_fns_xml(xml("<line_2110>500</line_2110>"))
    assert f.current == {"2110": 500}
    assert "2120" not in f.current
    assert f.provider is Provider.FNS


def test_fns_zero_is_present():
    assert parse_fns_xml(xml("<line_2110>0</line_2110>")).current == {"2110": 0}


def test_decoding_children_are_kept():
    f = parse_fns_xml(xml('<decoding parent="4110" label="a">30</decoding>'
                          '<decoding parent="4110" label="b">70</decoding>'))
    assert [d.value for d in f.decodings] == [30, 70]


def test_prior_columns_and_submission_date():
    f = parse_fns_xml(xml("<prior1_2110>450</prior1_2110><prior2_1600>900</prior2_1600>",
                          submission_date="2021-03-30"))
    assert f.prior1 == {"2110": 450}
    assert f.prior2 == {"1600": 900}
    assert f.submission_date == date(2021, 3, 30)


def test_x_element_becomes_decoding():
    f = parse_fns_xml(xml("<line_411x>12</line_411x>"))
    assert f.decodings == (Decoding("4110", "line_411x", 12),)
    assert f.current == {}


@pytest.mark.parametrize("body,code", [
    ("<line_9999>1</line_9999>", "UNKNOWN_LINE_CODE"),
    ("<prior2_2110>1</prior2_2110>", "UNKNOWN_LINE_CODE"),
    ("<note>hi</note>", "UNKNOWN_ELEMENT"),
])
def test_unknown_content_is_dropped_with_diagnostic(body, code):
    diag = Diagnostics()
    f = parse_fns_xml(xml(body), diag)
    assert f.current == {} and f.prior2 == {}
    assert diag.codes() == [code]


@pytest.mark.parametrize("doc", [
    xml("<line_2110>abc</line_2110>"),
    '<filing inn="12" year="2020"/>',
    "<filing inn='7736050003' year='2020'",
    xml("", year=2015),
])
def test_malformed_documents(doc):
    with pytest.raises(MalformedDocument):
        parse_fns_xml(doc)


def test_fns_serialization_round_trip():
    f = filing(current={"2110": 0, "1600": 10}, prior1={"2110": 4}, prior2={"1600": 3},
               submission_date=date(2021, 4, 1),
               decodings=(Decoding("4110", "x", 5), Decoding("4110", "y", 6, "prior1")))
    assert parse_fns_xml(fns_to_string(f)) == f


def test_bundle_streaming_skips_bad_filing(tmp_path):
    good = filing(current={"2110": 1})
    path = tmp_path / "fns_2020.xml"
    write_fns_bundle(path, [good])
    text = path.read_text().replace("</filings>", xml("<line_2110>x</line_2110>") + "</filings>")
    path.write_text(text)
    from firmpanel.statements import read_fns_file

    diag = Diagnostics()
    assert list(read_fns_file(path, diag)) == [good]
    assert diag.codes() == ["MALFORMED_DOCUMENT"]


ROSSTAT = "inn,year,form,unit,2110,2120,2110_p1\n"


def test_rosstat_zero_and_blank_are_missing():
    text = ROSSTAT + "7736050003,2015,FULL,THOUSANDS,0,,7\n1234567890,2015,FULL,THOUSANDS,500,3,0\n"
    a, b = parse_rosstat_csv(io.StringIO(text), 2015)
    assert a.current == {} and a.prior1 == {"2110": 7}
    assert b.current == {"2110": 500, "2120": 3} and b.prior1 == {}
    assert a.provider is Provider.ROSSTAT


def test_rosstat_bad_row_width():
    diag = Diagnostics()
    text = ROSSTAT + "7736050003,2015,FULL,THOUSANDS,1\n1234567890,2015,FULL,THOUSANDS,1,2,3\n"
    out = list(parse_rosstat_csv(io.StringIO(text), 2015, diag))
    assert [f.inn for f in out] == ["1234567890"]
    assert diag.codes() == ["MALFORMED_ROW"]


def test_rosstat_round_trip(tmp_path):
    fs = [filing(year=2016, current={"2110": 5, "1600": 7}, prior1={"2110": 4}, prior2={"1600": 1},
                 submission_date=date(2017, 3, 1))]
    header = rosstat_header(["2110", "1600"], ["2110"], ["1600"], with_submission_date=True)
    write_rosstat_csv(tmp_path / "r.csv", fs, header)
    assert list(parse_rosstat_csv(tmp_path / "r.csv", 2016)) == fs


@pytest.mark.parametrize("unit,raw,expected", [
    (Unit.MILLIONS, 5, 5000),
    (Unit.RUBLES, 5500, 6),
    (Unit.THOUSANDS, 5500, 5500),
])
def test_normalize_units(unit, raw, expected):
    f = normalize_units(filing(current={"2110": raw}, prior1={"2110": raw}, unit=unit,
                               decodings=(Decoding("4110", "a", raw),)))
    assert f.unit is Unit.THOUSANDS
    assert f.current["2110"] == f.prior1["2110"] == f.decodings[0].value == expected


def test_thousands_is_identity():
    f = filing(current={"2110": 1})
    assert normalize_units(f) is f


def test_dedupe_latest_wins():
    march = filing(current={"2110": 1}, submission_date=date(2024, 3, 1))
    june = filing(current={"2110": 2}, submission_date=date(2024, 6, 1))
    assert dedupe_filings([march, june]) is june
    assert dedupe_filings([june, march]) is june
    assert dedupe_filings([march]) is march


def test_dedupe_same_date_is_order_free():
    fs = [filing(current={"2110": v}, submission_date=date(2024, 3, 1)) for v in range(6)]
    expected = max(fs, key=lambda f: f.content_hash())
    rng = random.Random(3)
    for _ in range(5):
        rng.shuffle(fs)
        assert dedupe_filings(fs) == expected


def test_dedupe_errors():
    with pytest.raises(EmptyGroup):
        dedupe_filings([])
    with pytest.raises(ValueError):
        dedupe_filings([filing(), filing(inn="1234567890")])


def test_decodings_sum_into_x_line():
    f = aggregate_decodings(filing(decodings=(Decoding("4110", "a", 30), Decoding("4110", "b", 70),
                                              Decoding("4110", "c", 5, "prior1"))))
    assert f.current["411x"] == 100
    assert f.prior1["411x"] == 5


def test_no_decodings_no_x_lines():
    f = filing(current={"2110": 1})
    assert aggregate_decodings(f) is f


def test_balance_decodings_dropped():
    f = aggregate_decodings(filing(current={"1230": 9}, decodings=(Decoding("1230", "a", 9),)))
    assert f.current == {"1230": 9}
    assert f.decodings == ()


def test_aggregation_is_idempotent():
    f = aggregate_decodings(filing(decodings=(Decoding("4220", "a", 3), Decoding("4220", "b", 4))))
    assert aggregate_decodings(f) == f


@pytest.mark.parametrize("year", [2018, 2019])
def test_tax_lines_untouched_before_2020(year):
    f = filing(year=year, current={"2410": 10, "2411": 3, "2412": 4})
    assert consolidate_tax_lines(f) is f


def test_tax_lines_consolidated_from_2020():
    f = consolidate_tax_lines(filing(year=2020, current={"2411": -30, "2412": 5},
                                     prior1={"2410": 1, "2411": 2, "2412": 3}))
    assert f.current["2410"] == -25
    assert f.prior1["2410"] == 1  # prior period is 2019


def test_harmonize_zero_rule():
    rosstat = harmonize(clean_filing(filing(year=2016, current={"2110": 0, "1600": 3})))
    fns = harmonize(clean_filing(filing(year=2020, current={"2110": 0, "1600": 3})))
    assert rosstat.lines == {"1600": 3}
    assert fns.lines == {"2110": 0, "1600": 3}


def test_harmonize_requires_aggregation():
    with pytest.raises(ValueError):
        harmonize(filing(decodings=(Decoding("4110", "a", 1),)))


def test_harmonize_simplified_flag():
    s = harmonize(filing(form=Form.SIMPLIFIED, current={"1600": 1}))
    assert s.simplified and s.form is Form.SIMPLIFIED


@given(st.permutations(range(8)))
def test_ingest_is_order_free(tmp_path_factory, order):
    tmp = tmp_path_factory.mktemp("ingest")
    fs = [filing(inn=f"{i % 3:010d}", year=2020, current={"2110": i},
                 submission_date=date(2021, 3, 1 + i % 2)) for i in range(8)]
    write_fns_bundle(tmp / "a_2020.xml", [fs[i] for i in order])
    out = ingest([tmp / "a_2020.xml"])
    write_filings(tmp / "out.jsonl", out.values())
    expected = {}
    for f in fs:
        expected.setdefault(f.key, []).append(f)
    assert out == {k: dedupe_filings(v) for k, v in sorted(expected.items())}
    assert read_filings(tmp / "out.jsonl") == out


def test_ingest_reports_duplicates(tmp_path):
    write_fns_bundle(tmp_path / "b_2020.xml", [filing(submission_date=date(2021, 1, d)) for d in (1, 2)])
    diag = Diagnostics()
    out = ingest([tmp_path / "b_2020.xml"], diagnostics=diag)
    assert len(out) == 1
    assert diag.codes() == ["ADJUSTED_FILING"]
