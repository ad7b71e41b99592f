"""Parsing and cleaning of raw financial-statement filings.

Two fixture formats are understood:

* FNS XML (2019+). One ``<filing>`` element per statement, either as the
  document root or inside a ``<filings>`` container::

      <filing inn="7736050003" year="2020" form="FULL" unit="THOUSANDS"
              submission_date="2021-03-30">
        <line_2110>500</line_2110>
        <prior1_2110>450</prior1_2110>
        <prior2_1600>900</prior2_1600>
        <decoding parent="4110" label="gas sales">30</decoding>
        <decoding parent="4110" label="gas sales" period="prior1">25</decoding>
      </filing>

  An absent element is a missing value; an element holding ``0`` is a filed
  zero.

* Rosstat CSV (2012-2018). One file per year, one firm per row. Columns are
  ``inn,year,form,unit`` (optionally ``submission_date``) followed by line
  codes; ``<code>_p1`` and ``<code>_p2`` hold prior-period values. Every
  zero or empty cell is missing.
"""

from __future__ import annotations

import csv
import io
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import replace
from datetime import date
from pathlib import Path
from functools import lru_cache
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .diagnostics import Diagnostics, sink
from .model import (
    DECODABLE_PARENTS,
    ZERO_IS_MISSING_UNTIL,
    Decoding,
    Form,
    HarmonizedStatement,
    Lines,
    Provider,
    RawFiling,
    Unit,
    codes_in_section,
    is_x_code,
    line_registry,
    to_thousands,
    x_codes,
    x_line_for,
)
from .parallel import pmap

PERIOD_PREFIX = {"line_": "current", "prior1_": "prior1", "prior2_": "prior2"}
ROSSTAT_META = ("inn", "year", "form", "unit")

_ELEMENT = re.compile(r"(line|prior1|prior2)_(\d{3}[\dx])")
_INN = re.compile(r"\d{10}")


class MalformedDocument(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


def _decodable_parent(code: str) -> Optional[str]:
    parent = code[:3] + "0"
    return parent if parent in DECODABLE_PARENTS else None


def _as_int(text: Optional[str], what: str) -> int:
    try:
        return int(text.strip())
    except (AttributeError, ValueError):
        raise MalformedDocument(f"non-integer value for {what}: {text!r}") from None


@lru_cache(maxsize=None)
def _plain_tags() -> Dict[str, Tuple[str, str]]:
    """Tags that map straight onto a line: ``tag -> (period, code)``."""
    balance = codes_in_section("balance")
    table = {}
    for code in line_registry():
        if is_x_code(code):
            continue
        for prefix, period in PERIOD_PREFIX.items():
            if period != "prior2" or code in balance:
                table[prefix + code] = (period, code)
    return table


def parse_fns_xml(document: ET.Element | str | bytes,
                  diagnostics: Diagnostics | None = None) -> RawFiling:
    """Parse one FNS fixture ``<filing>`` into a :class:`RawFiling`."""
    diag = sink(diagnostics)
    elem = document if isinstance(document, ET.Element) else _fromstring(document)
    if elem.tag != "filing":
        raise MalformedDocument(f"expected <filing>, got <{elem.tag}>")
    inn = (elem.get("inn") or "").strip()
    if not _INN.fullmatch(inn):
        raise MalformedDocument(f"bad inn {inn!r}")
    year = _as_int(elem.get("year"), "year")
    try:
        form = Form(elem.get("form", "FULL"))
        unit = Unit(elem.get("unit", "THOUSANDS"))
        sd = elem.get("submission_date")
        submission = date.fromisoformat(sd) if sd else None
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None

    registry = line_registry()
    plain = _plain_tags()
    maps: Dict[str, Lines] = {"current": {}, "prior1": {}, "prior2": {}}
    decodings: List[Decoding] = []
    for child in elem:
        tag = child.tag
        hit = plain.get(tag)
        if hit is not None:
            text = child.text
            if text is None:
                continue
            try:
                maps[hit[0]][hit[1]] = int(text)
            except ValueError:
                if text.strip():
                    raise MalformedDocument(f"non-integer value for {tag}: {text!r}") from None
            continue
        if tag == "decoding":
            parent = child.get("parent", "")
            period = child.get("period", "current")
            if parent not in registry or period not in ("current", "prior1"):
                diag.warn("UNKNOWN_LINE_CODE", f"decoding parent {parent!r} period {period!r}", inn, year)
                continue
            decodings.append(Decoding(parent, child.get("label", ""),
                                      _as_int(child.text, f"decoding of {parent}"), period))
            continue
        m = _ELEMENT.fullmatch(tag)
        if m is None:
            diag.warn("UNKNOWN_ELEMENT", f"ignored <{tag}>", inn, year)
            continue
        if child.text is None or not child.text.strip():
            continue
        period = PERIOD_PREFIX[m.group(1) + "_"]
        code = m.group(2)
        value = _as_int(child.text, tag)
        parent = _decodable_parent(code) if period != "prior2" else None
        if is_x_code(code) or code not in registry:
            if parent is not None:
                decodings.append(Decoding(parent, f"line_{code}", value, period))
            else:
                diag.warn("UNKNOWN_LINE_CODE", f"dropped <{tag}>", inn, year)
            continue
        if period == "prior2" and code not in codes_in_section("balance"):
            diag.warn("UNKNOWN_LINE_CODE", f"two-years-prior value for non-balance <{tag}>", inn, year)
            continue
        maps[period][code] = value
    try:
        return RawFiling(inn, year, Provider.FNS, form, unit, submission,
                         maps["current"], maps["prior1"], maps["prior2"], tuple(decodings))
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None


def _fromstring(text: str | bytes) -> ET.Element:
    try:
        return ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedDocument(str(exc)) from None


def fns_element(filing: RawFiling) -> ET.Element:
    """Serialize a filing to the FNS fixture schema."""
    attrs = {"inn": filing.inn, "year": str(filing.year), "form": filing.form.value,
             "unit": filing.unit.value}
    if filing.submission_date:
        attrs["submission_date"] = filing.submission_date.isoformat()
    elem = ET.Element("filing", attrs)
    for prefix, lines in (("line_", filing.current), ("prior1_", filing.prior1),
                          ("prior2_", filing.prior2)):
        for code, value in lines.items():
            ET.SubElement(elem, prefix + code).text = str(value)
    for d in filing.decodings:
        a = {"parent": d.parent, "label": d.label}
        if d.period != "current":
            a["period"] = d.period
        ET.SubElement(elem, "decoding", a).text = str(d.value)
    return elem


def fns_to_string(filing: RawFiling) -> str:
    return ET.tostring(fns_element(filing), encoding="unicode")


def write_fns_bundle(path: str | Path, filings: Iterable[RawFiling]) -> None:
    """Write many filings into one ``<filings>`` document."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("<?xml version='1.0' encoding='utf-8'?>\n<filings>\n")
        for f in filings:
            fh.write(fns_to_string(f))
            fh.write("\n")
        fh.write("</filings>\n")


def read_fns_file(path: str | Path, diagnostics: Diagnostics | None = None) -> Iterator[RawFiling]:
    """Stream filings out of one FNS XML file (single filing or bundle)."""
    diag = sink(diagnostics)
    path = Path(path)
    try:
        for _, elem in ET.iterparse(path, events=("end",)):
            if elem.tag != "filing":
                continue
            try:
                yield parse_fns_xml(elem, diag)
            except MalformedDocument as exc:
                diag.error("MALFORMED_DOCUMENT", f"{path.name}: {exc}", inn=elem.get("inn"))
            elem.clear()
    except ET.ParseError as exc:
        diag.error("MALFORMED_DOCUMENT", f"{path.name}: {exc}")


def _rosstat_layout(header: Sequence[str], diag: Diagnostics):
    """Map CSV columns to (index, period, code)."""
    registry = line_registry()
    balance = codes_in_section("balance")
    missing = [c for c in ROSSTAT_META if c not in header]
    if missing:
        raise MalformedDocument(f"header lacks {missing}")
    cols = []
    for i, name in enumerate(header):
        if name in ROSSTAT_META or name == "submission_date":
            continue
        code, _, suffix = name.partition("_")
        period = {"": "current", "p1": "prior1", "p2": "prior2"}.get(suffix)
        if period is None or code not in registry or is_x_code(code):
            diag.warn("UNKNOWN_LINE_CODE", f"ignored column {name!r}")
            continue
        if period == "prior2" and code not in balance:
            diag.warn("UNKNOWN_LINE_CODE", f"two-years-prior column for non-balance line {name!r}")
            continue
        cols.append((i, period, code))
    return cols


def parse_rosstat_csv(file: str | Path | io.TextIOBase, year: int,
                      diagnostics: Diagnostics | None = None) -> Iterator[RawFiling]:
    """Parse one yearly Rosstat CSV; zeros and blanks become missing."""
    diag = sink(diagnostics)
    if not 2012 <= year <= 2018:
        raise ValueError(f"Rosstat data covers 2012-2018, got {year}")
    fh = open(file, encoding="utf-8", newline="") if isinstance(file, (str, Path)) else file
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        cols = _rosstat_layout(header, diag)
        idx = {name: header.index(name) for name in ROSSTAT_META}
        i_sd = header.index("submission_date") if "submission_date" in header else None
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                diag.error("MALFORMED_ROW", f"line {lineno}: {len(row)} cells, expected {width}",
                           inn=row[0] if row else None, year=year)
                continue
            inn = row[idx["inn"]]
            try:
                if not _INN.fullmatch(inn):
                    raise ValueError(f"bad inn {inn!r}")
                if int(row[idx["year"]]) != year:
                    raise ValueError(f"row year {row[idx['year']]} in file for {year}")
                maps: Dict[str, Lines] = {"current": {}, "prior1": {}, "prior2": {}}
                for i, period, code in cols:
                    cell = row[i]
                    if cell and cell != "0":
                        v = int(cell)
                        if v:
                            maps[period][code] = v
                sd = row[i_sd] if i_sd is not None else ""
                yield RawFiling(inn, year, Provider.ROSSTAT, Form(row[idx["form"]]),
                                Unit(row[idx["unit"]]), date.fromisoformat(sd) if sd else None,
                                maps["current"], maps["prior1"], maps["prior2"])
            except ValueError as exc:
                diag.error("MALFORMED_ROW", f"line {lineno}: {exc}", inn=inn, year=year)
    finally:
        if fh is not file:
            fh.close()


def rosstat_header(codes: Sequence[str], p1_codes: Sequence[str] = (),
                   p2_codes: Sequence[str] = (), with_submission_date: bool = False) -> List[str]:
    header = list(ROSSTAT_META)
    if with_submission_date:
        header.append("submission_date")
    header += list(codes) + [c + "_p1" for c in p1_codes] + [c + "_p2" for c in p2_codes]
    return header


def rosstat_layout(header: Sequence[str]) -> List[Tuple[str, Optional[str]]]:
    """Column plan for writing: ``(meta field, None)`` or ``(period, code)``."""
    layout = []
    for name in header:
        if name in ROSSTAT_META or name == "submission_date":
            layout.append((name, None))
        else:
            code, _, suffix = name.partition("_")
            layout.append(({"": "current", "p1": "prior1", "p2": "prior2"}[suffix], code))
    return layout


def rosstat_row(filing: RawFiling, layout: Sequence[Tuple[str, Optional[str]]]) -> list:
    maps = {"current": filing.current, "prior1": filing.prior1, "prior2": filing.prior2}
    meta = {"inn": filing.inn, "year": filing.year, "form": filing.form.value, "unit": filing.unit.value,
            "submission_date": filing.submission_date.isoformat() if filing.submission_date else ""}
    return [meta[a] if b is None else maps[a].get(b, "") for a, b in layout]


def write_rosstat_csv(file: str | Path | io.TextIOBase, filings: Iterable[RawFiling],
                      header: Sequence[str]) -> None:
    """Write filings using a fixed column layout; missing values are blank."""
    fh = open(file, "w", encoding="utf-8", newline="") if isinstance(file, (str, Path)) else file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        layout = rosstat_layout(header)
        for f in filings:
            w.writerow(rosstat_row(f, layout))
    finally:
        if fh is not file:
            fh.close()


def normalize_units(filing: RawFiling) -> RawFiling:
    """Express every amount in thousands of rubles."""
    unit = filing.unit
    if unit is Unit.THOUSANDS:
        return filing

    def conv(lines: Lines) -> Lines:
        return {c: to_thousands(v, unit) for c, v in lines.items()}

    return replace(
        filing,
        unit=Unit.THOUSANDS,
        current=conv(filing.current),
        prior1=conv(filing.prior1),
        prior2=conv(filing.prior2),
        decodings=tuple(replace(d, value=to_thousands(d.value, unit)) for d in filing.decodings),
    )


def dedupe_filings(filings: Sequence[RawFiling]) -> RawFiling:
    """Keep the most recently submitted filing of one firm-year.

    Equal dates are settled by the larger content hash, so the survivor
    does not depend on input order.
    """
    if not filings:
        raise EmptyGroup("no filings to deduplicate")
    keys = {f.key for f in filings}
    if len(keys) != 1:
        raise ValueError(f"filings for several firm-years: {sorted(keys)}")
    if len(filings) == 1:
        return filings[0]
    return max(filings, key=lambda f: (f.submission_date or date.min, f.content_hash()))


def aggregate_decodings(filing: RawFiling) -> RawFiling:
    """Sum decoding lines into x-suffix lines for cash-flow and equity parents.

    Decodings of other sections detail an item they already sum to and are
    dropped.
    """
    xs = x_codes()
    if not filing.decodings and xs.isdisjoint(filing.current) and xs.isdisjoint(filing.prior1):
        return filing
    kept = tuple(d for d in filing.decodings if d.parent in DECODABLE_PARENTS)
    maps ={"current": dict(filing.current), "prior1": dict(filing.prior1)}
    for lines in maps.values():
        for code in x_codes().intersection(lines):
            del lines[code]
    for d in kept:
        lines = maps[d.period]
        x = x_line_for(d.parent)
        lines[x] = lines.get(x, 0) + d.value
    if kept == filing.decodings and maps["current"] == filing.current and maps["prior1"] == filing.prior1:
        return filing
    return replace(filing, current=maps["current"], prior1=maps["prior1"], decodings=kept)


TAX_CONSOLIDATION_FROM = 2020


def _consolidated(lines: Lines) -> Lines:
    parts = [lines[c] for c in ("2411", "2412") if c in lines]
    if not parts or lines.get("2410") == sum(parts):
        return lines
    out = dict(lines)
    out["2410"] = sum(parts)
    return out


def consolidate_tax_lines(filing: RawFiling) -> RawFiling:
    """Recompute 2410 as 2411 + 2412 for periods from 2020 on.

    2019 is left alone because old and new forms cannot be told apart in
    that year.
    """
    current = _consolidated(filing.current) if filing.year >= TAX_CONSOLIDATION_FROM else filing.current
    prior1 = _consolidated(filing.prior1) if filing.year - 1 >= TAX_CONSOLIDATION_FROM else filing.prior1
    if current is filing.current and prior1 is filing.prior1:
        return filing
    return replace(filing, current=current, prior1=prior1)


def clean_filing(filing: RawFiling) -> RawFiling:
    return consolidate_tax_lines(aggregate_decodings(normalize_units(filing)))


def drop_zeros(lines: Lines) -> Lines:
    if 0 not in lines.values():
        return lines
    return {c: v for c, v in lines.items() if v != 0}


def harmonize(filing: RawFiling) -> HarmonizedStatement:
    """Current-period view of a cleaned filing."""
    lines = filing.current
    sums: Lines = {}
    for d in filing.decodings:
        if d.period == "current":
            if d.parent not in DECODABLE_PARENTS:
                raise ValueError("decodings not aggregated; run aggregate_decodings first")
            x = x_line_for(d.parent)
            sums[x] = sums.get(x, 0) + d.value
    if {c: lines[c] for c in x_codes().intersection(lines)} != sums:
        raise ValueError("x-lines disagree with decoding sums; run aggregate_decodings first")
    if filing.year <= ZERO_IS_MISSING_UNTIL:
        lines = drop_zeros(lines)
    return HarmonizedStatement(
        inn=filing.inn, year=filing.year, form=filing.form, lines=dict(lines),
        simplified=filing.form is Form.SIMPLIFIED, provider=filing.provider,
    )


# -- batch ingestion -------------------------------------------------------

def _year_from_name(path: Path) -> int:
    digits = re.findall(r"\d{4}", path.stem)
    if not digits:
        raise ValueError(f"cannot infer year from file name {path.name}")
    return int(digits[-1])


def _ingest_one(task: Tuple[str, str]) -> Tuple[List[RawFiling], Diagnostics]:
    kind, path = task
    diag = Diagnostics()
    p = Path(path)
    if kind == "fns":
        raw = list(read_fns_file(p, diag))
    else:
        raw = list(parse_rosstat_csv(p, _year_from_name(p), diag))
    return [clean_filing(f) for f in raw], diag


def ingest(fns_files: Sequence[str | Path] = (), rosstat_files: Sequence[str | Path] = (),
           workers: int = 1, diagnostics: Diagnostics | None = None
           ) -> Dict[Tuple[str, int], RawFiling]:
    """Parse, clean and deduplicate every filing; returns one filing per (inn, year)."""
    diag = sink(diagnostics)
    tasks = [("rosstat", str(p)) for p in sorted(map(Path, rosstat_files))]
    tasks += [("fns", str(p)) for p in sorted(map(Path, fns_files))]
    groups: Dict[Tuple[str, int], List[RawFiling]] = {}
    for filings, file_diag in pmap(_ingest_one, tasks, workers):
        diag.extend(file_diag)
        for f in filings:
            groups.setdefault(f.key, []).append(f)
    out = {}
    for key in sorted(groups):
        group = groups[key]
        if len(group) > 1:
            diag.warn("ADJUSTED_FILING", f"{len(group)} filings, most recent kept", *key)
        out[key] = dedupe_filings(group)
    return out


def write_filings(path: str | Path, filings: Iterable[RawFiling]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in filings:
            fh.write(json.dumps(f.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_filings(path: str | Path) -> Dict[Tuple[str, int], RawFiling]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            f = RawFiling.from_dict(json.loads(line))
            out[f.key] = f
    return out


def write_statements(path: str | Path, statements: Iterable[HarmonizedStatement]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in statements:
            fh.write(json.dumps(s.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_statements(path: str | Path) -> Dict[Tuple[str, int], HarmonizedStatement]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = HarmonizedStatement.from_dict(json.loads(line))
            out[s.key] = s
    return out
