"""Registry snapshots -> firm-year universe."""

from __future__ import annotations

import bisect
import csv
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from datetime import date
from itertools import groupby
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .diagnostics import Diagnostics, sink
from .model import FIRST_YEAR, LAST_YEAR, Address, FirmRecord

CODE_FIELDS = ("okved", "okopf", "okfs", "okogu", "okpo", "oktmo")
IMPUTABLE_CODES = ("okved", "okopf", "okfs")
# First year in which each classifier is already in its current version.
CLASSIFIER_CHANGE_YEAR = {"okopf": 2013, "okved": 2014}

_INN = re.compile(r"\d{10}")
_OGRN = re.compile(r"\d{13}")


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class FirmFragment:
    inn: str
    ogrn: str
    name: str
    creation_date: date
    dissolution_date: Optional[date]
    okved: Optional[str] = None
    okopf: Optional[str] = None
    okfs: Optional[str] = None
    okogu: Optional[str] = None
    okpo: Optional[str] = None
    oktmo: Optional[str] = None
    address: Address = Address()


@dataclass
class RegistrySnapshot:
    as_of_year: int
    records: List[FirmFragment]


def _text(elem: ET.Element, tag: str) -> Optional[str]:
    child = elem.find(tag)
    if child is None or child.text is None:
        return None
    value = child.text.strip()
    return value or None


def _fragment(elem: ET.Element) -> FirmFragment:
    inn = _text(elem, "inn")
    ogrn = _text(elem, "ogrn")
    if inn is None or not _INN.fullmatch(inn):
        raise ValueError(f"bad or missing inn: {inn!r}")
    if ogrn is None or not _OGRN.fullmatch(ogrn):
        raise ValueError(f"bad or missing ogrn: {ogrn!r}")
    created = _text(elem, "creation_date")
    if created is None:
        raise ValueError("missing creation_date")
    dissolved = _text(elem, "dissolution_date")
    addr = elem.find("address")
    address = Address()
    if addr is not None:
        address = Address(*(addr.get(k, "").strip() for k in ("region", "city", "street", "house")))
    creation = date.fromisoformat(created)
    dissolution = date.fromisoformat(dissolved) if dissolved else None
    if dissolution is not None and dissolution < creation:
        raise ValueError("dissolution before creation")
    return FirmFragment(
        inn=inn,
        ogrn=ogrn,
        name=_text(elem, "name") or "",
        creation_date=creation,
        dissolution_date=dissolution,
        address=address,
        **{f: _text(elem, f) for f in CODE_FIELDS},
    )


def _iter_firm_elements(path: Path, diag: Diagnostics) -> Iterator[Tuple[Optional[str], ET.Element]]:
    """Yield ``(snapshot year attribute, <firm> element)`` from one file."""
    year_attr = None
    try:
        for event, elem in ET.iterparse(path, events=("start", "end")):
            if event == "start":
                if year_attr is None and elem.tag == "snapshot":
                    year_attr = elem.get("as_of_year")
                continue
            if elem.tag == "firm":
                yield year_attr, elem
                elem.clear()
    except ET.ParseError as exc:
        diag.error("MALFORMED_DOCUMENT", f"{path.name}: {exc}")


def parse_snapshot(source: str | Path, as_of_year: int | None = None,
                   diagnostics: Diagnostics | None = None) -> RegistrySnapshot:
    """Parse one snapshot, given as a single XML file or a directory of per-firm files.

    The snapshot year comes from ``as_of_year``, else the ``as_of_year``
    attribute of a ``<snapshot>`` root, else the last 4-digit group in the
    directory or file name. Malformed documents are skipped with a
    diagnostic; for duplicate ``inn`` values the later document wins.
    """
    diag = sink(diagnostics)
    source = Path(source)
    files = sorted(source.glob("*.xml")) if source.is_dir() else [source]
    by_inn: Dict[str, FirmFragment] = {}
    seen_year = None
    for path in files:
        for year_attr, elem in _iter_firm_elements(path, diag):
            seen_year = seen_year or year_attr
            try:
                frag = _fragment(elem)
            except ValueError as exc:
                diag.error("MALFORMED_DOCUMENT", f"{path.name}: {exc}", inn=_text(elem, "inn"))
                continue
            if frag.inn in by_inn:
                diag.warn("DUPLICATE_IDENTIFIER", "later document replaces earlier one", inn=frag.inn)
                del by_inn[frag.inn]
            by_inn[frag.inn] = frag
    if as_of_year is None:
        if seen_year is not None:
            as_of_year = int(seen_year)
        else:
            digits = re.findall(r"\d{4}", source.stem if source.is_file() else source.name)
            if not digits:
                raise ValueError(f"cannot determine snapshot year for {source}")
            as_of_year = int(digits[-1])
    return RegistrySnapshot(as_of_year, list(by_inn.values()))


def write_snapshot(path: str | Path, snapshot: RegistrySnapshot) -> None:
    """Write a snapshot as a single fixture XML file."""
    root = ET.Element("snapshot", as_of_year=str(snapshot.as_of_year))
    for f in snapshot.records:
        firm = ET.SubElement(root, "firm")
        ET.SubElement(firm, "inn").text = f.inn
        ET.SubElement(firm, "ogrn").text = f.ogrn
        ET.SubElement(firm, "name").text = f.name
        ET.SubElement(firm, "creation_date").text = f.creation_date.isoformat()
        if f.dissolution_date:
            ET.SubElement(firm, "dissolution_date").text = f.dissolution_date.isoformat()
        for code in CODE_FIELDS:
            value = getattr(f, code)
            if value is not None:
                ET.SubElement(firm, code).text = value
        a = f.address
        ET.SubElement(firm, "address", region=a.region, city=a.city, street=a.street, house=a.house)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def _check_span(span: Tuple[int, int]) -> None:
    lo, hi = span
    if not (FIRST_YEAR <= lo <= hi <= LAST_YEAR):
        raise ValueError(f"span {lo}-{hi} outside {FIRST_YEAR}-{LAST_YEAR}")


def build_universe(snapshots: Sequence[RegistrySnapshot],
                   span: Tuple[int, int] = (FIRST_YEAR, LAST_YEAR)) -> List[FirmRecord]:
    """Expand snapshots into one record per firm per active year.

    Lifespan dates come from the latest snapshot that lists the firm. The
    attributes of year ``t`` come from the nearest snapshot at or after
    ``t``, falling back to the nearest one before it. Output is sorted by
    ``(inn, year)``.
    """
    _check_span(span)
    if not snapshots or not any(s.records for s in snapshots):
        raise EmptyInputError("no registry records")
    ordered = sorted(snapshots, key=lambda s: s.as_of_year)
    years = [s.as_of_year for s in ordered]
    if len(set(years)) != len(years):
        raise ValueError("two snapshots share an as_of_year")

    history: Dict[str, List[Tuple[int, FirmFragment]]] = {}
    for snap in ordered:
        for frag in snap.records:
            history.setdefault(frag.inn, []).append((snap.as_of_year, frag))

    lo, hi = span
    out: List[FirmRecord] = []
    for inn in sorted(history):
        versions = history[inn]
        snap_years = [y for y, _ in versions]
        latest = versions[-1][1]
        first = max(lo, latest.creation_date.year)
        last = hi if latest.dissolution_date is None else min(hi, latest.dissolution_date.year)
        for year in range(first, last + 1):
            i = bisect.bisect_left(snap_years, year)
            frag = versions[i][1] if i < len(versions) else versions[-1][1]
            out.append(FirmRecord(
                inn=inn,
                ogrn=frag.ogrn,
                year=year,
                name=frag.name,
                region=frag.address.region,
                region_taxcode=inn[:2],
                creation_date=latest.creation_date,
                dissolution_date=latest.dissolution_date,
                age=year - latest.creation_date.year,
                okved=frag.okved,
                okopf=frag.okopf,
                okfs=frag.okfs,
                okogu=frag.okogu,
                okpo=frag.okpo,
                oktmo=frag.oktmo,
                address=frag.address,
            ))
    return out


@dataclass
class Correspondence:
    """Old -> new code maps per classifier."""

    tables: Dict[str, Dict[str, str]]

    def __post_init__(self):
        self.new_codes = {k: frozenset(t.values()) for k, t in self.tables.items()}

    @classmethod
    def load(cls, **paths: str | Path | None) -> "Correspondence":
        tables = {}
        for classifier, path in paths.items():
            if path is None:
                continue
            with open(path, encoding="utf-8", newline="") as fh:
                tables[classifier] = {r["old_code"].strip(): r["new_code"].strip()
                                      for r in csv.DictReader(fh)}
        return cls(tables)


def harmonize_codes(record: FirmRecord, correspondence: Correspondence,
                    diagnostics: Diagnostics | None = None) -> FirmRecord:
    """Express okved/okopf in the post-change classifiers.

    Codes of years before the classifier change are looked up in the
    correspondence table; codes already in the new classifier pass through.
    Anything else is kept as-is and flagged in ``record.unmapped``.
    """
    changes = {}
    unmapped = list(record.unmapped)
    for classifier, change_year in CLASSIFIER_CHANGE_YEAR.items():
        code = getattr(record, classifier)
        table = correspondence.tables.get(classifier)
        if code is None or table is None or record.year >= change_year:
            continue
        if code in table:
            changes[classifier] = table[code]
        elif code not in correspondence.new_codes[classifier]:
            if classifier not in unmapped:
                unmapped.append(classifier)
            if diagnostics is not None:
                diagnostics.warn("UNMAPPED_CODE", f"{classifier} {code} has no mapping",
                                 record.inn, record.year)
    if not changes and len(unmapped) == len(record.unmapped):
        return record
    return replace(record, unmapped=tuple(unmapped), **changes)


def impute_missing_codes(universe: Iterable[FirmRecord]) -> List[FirmRecord]:
    """Fill missing okved/okopf/okfs from the same firm's adjacent years.

    The next year takes precedence over the previous one; fills chain along
    consecutive years, so the result is idempotent.
    """
    out: List[FirmRecord] = []
    rows = sorted(universe, key=lambda r: (r.inn, r.year))
    for _, group in groupby(rows, key=lambda r: r.inn):
        group = list(group)
        values = {f: [getattr(r, f) for r in group] for f in IMPUTABLE_CODES}
        years = [r.year for r in group]
        for f, vals in values.items():
            for i in range(len(vals) - 2, -1, -1):
                if vals[i] is None and years[i + 1] == years[i] + 1:
                    vals[i] = vals[i + 1]
            for i in range(1, len(vals)):
                if vals[i] is None and years[i - 1] == years[i] - 1:
                    vals[i] = vals[i - 1]
        for i, r in enumerate(group):
            changes = {f: values[f][i] for f in IMPUTABLE_CODES if getattr(r, f) != values[f][i]}
            out.append(replace(r, **changes) if changes else r)
    return out


UNIVERSE_FIELDS = (
    "inn", "ogrn", "year", "name", "region", "region_taxcode", "creation_date",
    "dissolution_date", "age", *CODE_FIELDS, "addr_region", "city", "street", "house", "unmapped",
)


def write_universe(path: str | Path, universe: Iterable[FirmRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNIVERSE_FIELDS)
        for r in universe:
            w.writerow([
                r.inn, r.ogrn, r.year, r.name, r.region, r.region_taxcode,
                r.creation_date.isoformat() if r.creation_date else "",
                r.dissolution_date.isoformat() if r.dissolution_date else "",
                "" if r.age is None else r.age,
                *("" if getattr(r, f) is None else getattr(r, f) for f in CODE_FIELDS),
                r.address.region, r.address.city, r.address.street, r.address.house,
                ";".join(r.unmapped),
            ])


def read_universe(path: str | Path) -> List[FirmRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(FirmRecord(
                inn=row["inn"],
                ogrn=row["ogrn"],
                year=int(row["year"]),
                name=row["name"],
                region=row["region"],
                region_taxcode=row["region_taxcode"],
                creation_date=date.fromisoformat(row["creation_date"]) if row["creation_date"] else None,
                dissolution_date=date.fromisoformat(row["dissolution_date"]) if row["dissolution_date"] else None,
                age=int(row["age"]) if row["age"] else None,
                address=Address(row["addr_region"], row["city"], row["street"], row["house"]),
                unmapped=tuple(x for x in row["unmapped"].split(";") if x),
                **{f: row[f] or None for f in CODE_FIELDS},
            ))
    return out
