"""Manual-review queue generation and application of curated exclusions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from itertools import groupby
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .diagnostics import Diagnostics
from .model import PanelRow

KEY_METRICS = ("2110", "1600")
QUEUE_FIELDS = ("trigger", "rank", "inn", "year", "metric", "value")


@dataclass(frozen=True)
class Candidate:
    trigger: str
    rank: int
    inn: str
    year: int
    metric: str
    value: float


def _industry(row: PanelRow) -> str:
    return (row.firm.okved or "")[:2]


def _top(entries: List[Tuple[float, str, int]], n: int) -> List[Tuple[float, str, int]]:
    return sorted(entries, key=lambda e: (-e[0], e[1], e[2]))[:n]


def review_queue(rows: Sequence[PanelRow], n_top: int = 20,
                 metrics: Sequence[str] = KEY_METRICS) -> List[Candidate]:
    """Candidates for manual review, each tagged with what put it there.

    * ``top_<metric>``: largest values per year and 2-digit industry,
      financial firms left out;
    * ``yoy_<metric>``: largest year-on-year ratio ``max(a/b, b/a)`` over
      consecutive years with positive values;
    * ``imputed_revenue``: imputed statements with the largest revenue.

    Ties are settled by ``(inn, year)``.
    """
    out: List[Candidate] = []
    with_statement = [r for r in rows if r.statement is not None]
    for metric in metrics:
        groups: Dict[Tuple[int, str], List[Tuple[float, str, int]]] = {}
        for r in with_statement:
            v = r.line(metric)
            if v is None or r.decision.financial:
                continue
            groups.setdefault((r.firm.year, _industry(r)), []).append((v, r.firm.inn, r.firm.year))
        for key in sorted(groups):
            for rank, (v, inn, year) in enumerate(_top(groups[key], n_top), 1):
                out.append(Candidate(f"top_{metric}", rank, inn, year, metric, v))

    by_firm = sorted(with_statement, key=lambda r: r.key)
    for metric in metrics:
        ratios = []
        for _, firm_rows in groupby(by_firm, key=lambda r: r.firm.inn):
            prev = None
            for r in firm_rows:
                v = r.line(metric)
                if prev is not None and v is not None and prev[0] == r.firm.year - 1:
                    a, b = prev[1], v
                    if a > 0 and b > 0:
                        ratios.append((max(a / b, b / a), r.firm.inn, r.firm.year))
                prev = (r.firm.year, v) if v is not None else None
        for rank, (v, inn, year) in enumerate(_top(ratios, n_top), 1):
            out.append(Candidate(f"yoy_{metric}", rank, inn, year, metric, v))

    imputed = [(r.line("2110"), r.firm.inn, r.firm.year) for r in with_statement
               if r.imputed and r.line("2110") is not None]
    for rank, (v, inn, year) in enumerate(_top(imputed, n_top), 1):
        out.append(Candidate("imputed_revenue", rank, inn, year, "2110", v))
    return out


def apply_exclusions(rows: Sequence[PanelRow], exclusions: Iterable[Tuple[str, int, str]],
                     diagnostics: Diagnostics | None = None) -> List[PanelRow]:
    """Flag listed firm-years as anomalous; rows are never removed."""
    wanted: Dict[Tuple[str, int], str] = {}
    for inn, year, reason in exclusions:
        wanted[(inn, int(year))] = reason
    with_statement = {r.key for r in rows if r.statement is not None}
    for key in sorted(wanted):
        if key not in with_statement and diagnostics is not None:
            diagnostics.warn("UNMATCHED_EXCLUSION", "no statement for listed firm-year", *key)
    return [replace(r, anomalous=True) if r.key in wanted and r.key in with_statement else r
            for r in rows]


def read_exclusions(path: str | Path) -> List[Tuple[str, int, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [(r["inn"], int(r["year"]), r.get("reason", "")) for r in csv.DictReader(fh)]


def write_exclusions(path: str | Path, exclusions: Iterable[Tuple[str, int, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inn", "year", "reason"])
        w.writerows(sorted(exclusions))


def write_queue(path: str | Path, candidates: Iterable[Candidate]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUEUE_FIELDS)
        for c in candidates:
            w.writerow([c.trigger, c.rank, c.inn, c.year, c.metric, repr(c.value)])
