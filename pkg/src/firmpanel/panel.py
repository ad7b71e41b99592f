"""Panel assembly, validation reports and the partitioned export."""

from __future__ import annotations

import csv
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .diagnostics import Diagnostics, sink
from .model import (
    DEFAULT_MATERIALS_LINE,
    EligibilityDecision,
    FirmRecord,
    GeoLocation,
    HarmonizedStatement,
    PanelRow,
    published_codes,
    value_added,
)

Key = Tuple[str, int]


class KeyCollision(ValueError):
    pass


def assemble(universe: Iterable[FirmRecord], eligibility: Mapping[Key, EligibilityDecision],
             statements: Mapping[Key, HarmonizedStatement],
             geo: Mapping[Key, GeoLocation] | None = None,
             anomalies: Iterable[Key] = (),
             diagnostics: Diagnostics | None = None) -> List[PanelRow]:
    """Join the stage outputs into panel rows sorted by ``(inn, year)``.

    Rows are every eligible firm-year plus non-eligible firm-years that
    filed. Statements with no universe match are dropped with a diagnostic.
    Anomaly flags only attach to rows carrying a statement.
    """
    diag = sink(diagnostics)
    geo = geo or {}
    flagged = set(anomalies)
    rows: List[PanelRow] = []
    seen: Set[Key] = set()
    for firm in sorted(universe, key=lambda r: r.key):
        key = firm.key
        if key in seen:
            raise KeyCollision(f"duplicate firm-year {key}")
        seen.add(key)
        decision = eligibility.get(key)
        if decision is None:
            raise KeyError(f"no eligibility decision for {key}")
        statement = statements.get(key)
        filed = statement is not None and not statement.imputed
        if not decision.eligible and not filed:
            continue
        rows.append(PanelRow(firm, decision, filed, statement, geo.get(key),
                             anomalous=statement is not None and key in flagged))
    for key in sorted(set(statements) - seen):
        diag.warn("UNMATCHED_STATEMENT", "removed statement with no universe match", *key)
    return rows


def _rate(num: int, den: int) -> Optional[float]:
    return num / den if den else None


@dataclass(frozen=True)
class FilingRate:
    year: int
    region: str
    n_eligible: int
    n_filed: int
    n_imputed: int

    @property
    def rate(self) -> Optional[float]:
        return _rate(self.n_filed, self.n_eligible)

    @property
    def rate_with_imputation(self) -> Optional[float]:
        return _rate(self.n_filed + self.n_imputed, self.n_eligible)


def filing_rate_report(rows: Iterable[PanelRow], by_region: bool = False) -> List[FilingRate]:
    """Filed eligible firm-years over eligible firm-years, per year (and region).

    Imputed statements are counted apart, giving a raw and a with-imputation
    rate. Anomalous rows are left out of every count.
    """
    counts: Dict[Tuple[int, str], List[int]] = {}
    for r in rows:
        if r.anomalous:
            continue
        key = (r.firm.year, r.firm.region if by_region else "")
        c = counts.setdefault(key, [0, 0, 0])
        if not r.decision.eligible:
            continue
        c[0] += 1
        if r.filed:
            c[1] += 1
        elif r.imputed:
            c[2] += 1
    return [FilingRate(y, reg, *c) for (y, reg), c in sorted(counts.items())]


@dataclass(frozen=True)
class ArticulationShare:
    year: int
    n_filed: int
    n_articulated: int
    revenue: int
    revenue_articulated: int
    n_articulated_after_adjustment: int

    @property
    def share(self) -> Optional[float]:
        return _rate(self.n_articulated, self.n_filed)

    @property
    def weighted_share(self) -> Optional[float]:
        return _rate(self.revenue_articulated, self.revenue)

    @property
    def share_after_adjustment(self) -> Optional[float]:
        return _rate(self.n_articulated_after_adjustment, self.n_filed)


def articulation_report(rows: Iterable[PanelRow]) -> List[ArticulationShare]:
    """Per-year share of filed statements that articulate, plain and revenue-weighted."""
    counts: Dict[int, List[int]] = {}
    for r in rows:
        c = counts.setdefault(r.firm.year, [0, 0, 0, 0, 0])
        if r.anomalous or not r.filed:
            continue
        s = r.statement
        revenue = s.lines.get("2110") or 0
        weight = revenue if revenue > 0 else 0
        c[0] += 1
        c[2] += weight
        if s.articulated is not False:
            c[1] += 1
            c[3] += weight
        if s.articulated_after_adjustment is not False:
            c[4] += 1
    return [ArticulationShare(y, *c) for y, c in sorted(counts.items())]


EXTERNAL_FIELDS = ("gross_output", "intermediate_consumption", "gdp")


def read_external(path: str | Path) -> Dict[int, Dict[str, float]]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            out[int(r["year"])] = {k: float(r[k]) for k in EXTERNAL_FIELDS if r.get(k)}
    return out


@dataclass(frozen=True)
class AggregateRatio:
    year: int
    revenue: int
    materials: int
    value_added: int
    gross_output_ratio: Optional[float]
    intermediate_consumption_ratio: Optional[float]
    gdp_ratio: Optional[float]


def aggregate_ratio_report(rows: Iterable[PanelRow], external: Mapping[int, Mapping[str, float]],
                           materials_line: str = DEFAULT_MATERIALS_LINE,
                           diagnostics: Diagnostics | None = None) -> List[AggregateRatio]:
    """Panel totals of revenue, materials and value added against national accounts."""
    sums: Dict[int, List[int]] = {}
    for r in rows:
        c = sums.setdefault(r.firm.year, [0, 0, 0])
        if r.anomalous or r.statement is None:
            continue
        lines = r.statement.lines
        rev, mat = lines.get("2110"), lines.get(materials_line)
        if rev is not None and rev > 0:
            c[0] += rev
        if mat is not None and mat > 0:
            c[1] += mat
        va = value_added(lines, materials_line)
        if va is not None:
            c[2] += va
    out = []
    for year, (rev, mat, va) in sorted(sums.items()):
        ext = external.get(year)
        if ext is None:
            sink(diagnostics).warn("MISSING_EXTERNAL_YEAR", f"no national accounts for {year}", year=year)
            ext = {}
        out.append(AggregateRatio(
            year, rev, mat, va,
            _rate(rev, ext.get("gross_output", 0)),
            _rate(mat, ext.get("intermediate_consumption", 0)),
            _rate(va, ext.get("gdp", 0)),
        ))
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_report(path: str | Path, header: Sequence[str], records: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([_fmt(x) for x in rec])


def write_filing_rates(path: str | Path, report: Iterable[FilingRate]) -> None:
    write_report(path, ("year", "region", "n_eligible", "n_filed", "n_imputed", "rate",
                        "rate_with_imputation"),
                 ((r.year, r.region, r.n_eligible, r.n_filed, r.n_imputed, r.rate,
                   r.rate_with_imputation) for r in report))


def write_articulation(path: str | Path, report: Iterable[ArticulationShare]) -> None:
    write_report(path, ("year", "n_filed", "n_articulated", "share", "weighted_share",
                        "share_after_adjustment"),
                 ((r.year, r.n_filed, r.n_articulated, r.share, r.weighted_share,
                   r.share_after_adjustment) for r in report))


def write_aggregate_ratios(path: str | Path, report: Iterable[AggregateRatio]) -> None:
    write_report(path, ("year", "revenue", "materials", "value_added", "gross_output_ratio",
                        "intermediate_consumption_ratio", "gdp_ratio"),
                 ((r.year, r.revenue, r.materials, r.value_added, r.gross_output_ratio,
                   r.intermediate_consumption_ratio, r.gdp_ratio) for r in report))


# -- export -----------------------------------------------------------------

# NACE Rev. 2 division ranges per section letter
_SECTIONS = (
    ("A", 1, 3), ("B", 5, 9), ("C", 10, 33), ("D", 35, 35), ("E", 36, 39), ("F", 41, 43),
    ("G", 45, 47), ("H", 49, 53), ("I", 55, 56), ("J", 58, 63), ("K", 64, 66), ("L", 68, 68),
    ("M", 69, 75), ("N", 77, 82), ("O", 84, 84), ("P", 85, 85), ("Q", 86, 88), ("R", 90, 93),
    ("S", 94, 96), ("T", 97, 98), ("U", 99, 99),
)


def okved_section(okved: Optional[str]) -> Optional[str]:
    if not okved or not okved[:2].isdigit():
        return None
    division = int(okved[:2])
    for letter, lo, hi in _SECTIONS:
        if lo <= division <= hi:
            return letter
    return None


BASE_COLUMNS = (
    "year", "inn", "ogrn", "region", "region_taxcode", "creation_date", "dissolution_date", "age",
    "eligible", "exempt_criteria", "financial",
    "filed", "imputed", "simplified", "articulated", "totals_adjustment",
    "okved", "okved_section", "okpo", "okopf", "okogu", "okfc", "oktmo",
    "lon", "lat", "geocoding_quality",
)


def output_columns() -> Tuple[str, ...]:
    return BASE_COLUMNS + tuple(f"line_{c}" for c in published_codes())


def _schema():
    import pyarrow as pa

    types = {
        "year": pa.int16(), "age": pa.int16(), "creation_date": pa.date32(),
        "dissolution_date": pa.date32(), "lon": pa.float64(), "lat": pa.float64(),
    }
    for flag in ("eligible", "financial", "filed", "imputed", "simplified", "articulated",
                 "totals_adjustment"):
        types[flag] = pa.bool_()
    fields = [pa.field(c, types.get(c, pa.string())) for c in BASE_COLUMNS]
    fields += [pa.field(f"line_{c}", pa.int64()) for c in published_codes()]
    return pa.schema(fields)


def _columns(rows: Sequence[PanelRow]) -> Dict[str, list]:
    firms = [r.firm for r in rows]
    stmts = [r.statement for r in rows]
    geos = [r.geo for r in rows]
    cols: Dict[str, list] = {
        "year": [f.year for f in firms],
        "inn": [f.inn for f in firms],
        "ogrn": [f.ogrn for f in firms],
        "region": [f.region or None for f in firms],
        "region_taxcode": [f.region_taxcode or None for f in firms],
        "creation_date": [f.creation_date for f in firms],
        "dissolution_date": [f.dissolution_date for f in firms],
        "age": [f.age for f in firms],
        "eligible": [r.decision.eligible for r in rows],
        "exempt_criteria": [r.decision.exempt_criteria.value if r.decision.exempt_criteria else None
                            for r in rows],
        "financial": [r.decision.financial for r in rows],
        "filed": [r.filed for r in rows],
        "imputed": [r.imputed for r in rows],
        "simplified": [s.simplified if s else None for s in stmts],
        "articulated": [s.articulated if s else None for s in stmts],
        "totals_adjustment": [s.totals_adjustment if s else None for s in stmts],
        "okved": [f.okved for f in firms],
        "okved_section": [okved_section(f.okved) for f in firms],
        "okpo": [f.okpo for f in firms],
        "okopf": [f.okopf for f in firms],
        "okogu": [f.okogu for f in firms],
        "okfc": [f.okfs for f in firms],
        "oktmo": [f.oktmo for f in firms],
        "lon": [g.lon if g else None for g in geos],
        "lat": [g.lat if g else None for g in geos],
        "geocoding_quality": [g.quality.value if g else None for g in geos],
    }
    n = len(rows)
    line_cols = {code: [None] * n for code in published_codes()}
    for i, s in enumerate(stmts):
        if s is None:
            continue
        for code, v in s.lines.items():
            col = line_cols.get(code)
            if col is not None:
                col[i] = v
    for code, col in line_cols.items():
        cols[f"line_{code}"] = col
    return cols


def _write_parquet(path: Path, rows: Sequence[PanelRow]) -> None:
    import pyarrow as pa
    import pyarrow.parquet as pq

    table = pa.Table.from_pydict(_columns(rows), schema=_schema())
    pq.write_table(table, path)


def _write_csv(path: Path, rows: Sequence[PanelRow]) -> None:
    cols = _columns(rows)
    names = output_columns()
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(rows)):
            w.writerow(["" if cols[n][i] is None else _csv_cell(cols[n][i]) for n in names])


def _csv_cell(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, float):
        return repr(x)
    return x


def export(rows: Iterable[PanelRow], output_dir: str | Path, years: Iterable[int],
           fmt: str = "parquet") -> List[Path]:
    """Write one file per year, rows sorted by inn.

    Files land in ``output_dir`` only once every year has been written;
    on failure nothing is left behind.
    """
    writer = {"parquet": _write_parquet, "csv": _write_csv}[fmt]
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    by_year: Dict[int, List[PanelRow]] = {y: [] for y in years}
    for r in rows:
        if r.firm.year not in by_year:
            raise ValueError(f"row for {r.firm.year} outside the export years")
        by_year[r.firm.year].append(r)
    tmp = Path(tempfile.mkdtemp(prefix=".export-", dir=output_dir))
    try:
        names = []
        for year in sorted(by_year):
            part = sorted(by_year[year], key=lambda r: r.firm.inn)
            name = f"panel_{year}.{fmt}"
            writer(tmp / name, part)
            names.append(name)
        out = []
        for name in names:
            os.replace(tmp / name, output_dir / name)
            out.append(output_dir / name)
        return out
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def read_partition(path: str | Path):
    """Load one exported Parquet partition as a pyarrow table."""
    import pyarrow.parquet as pq

    return pq.read_table(path)


def write_anomalies(path: str | Path, rows: Iterable[PanelRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inn", "year"])
        for r in rows:
            if r.anomalous:
                w.writerow([r.firm.inn, r.firm.year])


def read_anomalies(path: str | Path) -> Set[Key]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {(r["inn"], int(r["year"])) for r in csv.DictReader(fh)}
