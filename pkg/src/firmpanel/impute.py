"""Reconstruction of missing statements from next-year prior-period columns."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from .model import ZERO_IS_MISSING_UNTIL, FirmRecord, Form, HarmonizedStatement, RawFiling
from .statements import drop_zeros

Key = Tuple[str, int]
REPORT_FIELDS = ("year", "n_gaps", "n_imputed_t1", "n_imputed_t2")


def reconstruct(inn: str, year: int, filings: Mapping[Key, RawFiling]) -> Optional[HarmonizedStatement]:
    """Rebuild the statement of ``(inn, year)`` from a later filing.

    The ``year + 1`` filing supplies its previous-year columns. Only when no
    such filing exists does the ``year + 2`` filing supply its two-years-prior
    balance-sheet columns. Returns ``None`` when neither carries values.
    """
    if (inn, year) in filings:
        raise ValueError(f"{inn}/{year} was filed; imputation never overwrites")
    source = filings.get((inn, year + 1))
    if source is not None:
        lines = source.prior1
    else:
        source = filings.get((inn, year + 2))
        if source is None:
            return None
        lines = source.prior2
    if year <= ZERO_IS_MISSING_UNTIL:
        lines = drop_zeros(lines)
    if not lines:
        return None
    return HarmonizedStatement(
        inn=inn, year=year, form=source.form, lines=dict(lines), imputed=True,
        imputation_source_year=source.year, simplified=source.form is Form.SIMPLIFIED,
        provider=source.provider,
    )


def impute_pass(statements: Mapping[Key, HarmonizedStatement], filings: Mapping[Key, RawFiling],
                universe: Iterable[FirmRecord]
                ) -> Tuple[Dict[Key, HarmonizedStatement], List[Tuple[int, int, int, int]]]:
    """Add reconstructed statements for every universe firm-year lacking one.

    Existing statements are returned untouched. The report has one row per
    universe year: ``(year, n_gaps, n_imputed_t1, n_imputed_t2)``.
    """
    out = dict(statements)
    counts: Dict[int, List[int]] = {}
    for record in sorted(universe, key=lambda r: r.key):
        c = counts.setdefault(record.year, [0, 0, 0])
        if record.key in out:
            continue
        c[0] += 1
        if record.key in filings:
            continue
        s = reconstruct(record.inn, record.year, filings)
        if s is None:
            continue
        out[record.key] = s
        c[1 if s.imputation_source_year == record.year + 1 else 2] += 1
    report = [(y, *c) for y, c in sorted(counts.items())]
    return dict(sorted(out.items())), report


def write_report(path: str | Path, report: Iterable[Tuple[int, int, int, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerows(report)
