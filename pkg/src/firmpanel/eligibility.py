"""Rule-based classification of firm-years into obliged filers and exempt ones."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Set, Tuple

from .diagnostics import Diagnostics
from .model import EligibilityDecision, Exemption, FirmRecord

CODE_KINDS = ("okopf", "okfs", "okogu")
CODE_RULES = (Exemption.GOVERNMENT, Exemption.RELIGIOUS)


@dataclass
class ExemptionSets:
    """Code sets per (criterion, code kind), e.g. GOVERNMENT/okfs -> {"12", "13"}."""

    sets: Dict[Tuple[Exemption, str], FrozenSet[str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "ExemptionSets":
        raw: Dict[Tuple[Exemption, str], Set[str]] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                criterion = Exemption(row["criterion"].strip())
                kind = row["code_kind"].strip()
                if criterion not in CODE_RULES or kind not in CODE_KINDS:
                    raise ValueError(f"unsupported exemption row: {row}")
                raw.setdefault((criterion, kind), set()).add(row["code"].strip())
        return cls({k: frozenset(v) for k, v in raw.items()})

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["criterion", "code_kind", "code"])
            for (criterion, kind), codes in sorted(self.sets.items()):
                for code in sorted(codes):
                    w.writerow([criterion.value, kind, code])

    def matches(self, criterion: Exemption, record: FirmRecord) -> bool:
        for kind in CODE_KINDS:
            code = getattr(record, kind)
            if code is not None and code in self.sets.get((criterion, kind), ()):
                return True
        return False


class FinancialRegister:
    """inn sets per year, from the central bank registers."""

    def __init__(self, by_year: Dict[int, Set[str]] | None = None):
        self.by_year = {y: frozenset(v) for y, v in (by_year or {}).items()}

    @classmethod
    def load(cls, path: str | Path) -> "FinancialRegister":
        by_year: Dict[int, Set[str]] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                by_year.setdefault(int(row["year"]), set()).add(row["inn"].strip())
        return cls(by_year)

    def __contains__(self, key: Tuple[str, int]) -> bool:
        inn, year = key
        return inn in self.by_year.get(year, ())


def classify(record: FirmRecord, financial_register: FinancialRegister,
             exemptions: ExemptionSets, diagnostics: Diagnostics | None = None) -> EligibilityDecision:
    """First matching rule wins: GOVERNMENT, RELIGIOUS, FINANCIAL, NEWLY_INCORPORATED_Q4."""
    financial = record.key in financial_register
    criterion = None
    for rule in CODE_RULES:
        if exemptions.matches(rule, record):
            criterion = rule
            break
    if criterion is None and financial:
        criterion = Exemption.FINANCIAL
    if (criterion is None and record.creation_date is not None
            and record.creation_date.year == record.year and record.creation_date.month >= 10):
        criterion = Exemption.NEWLY_INCORPORATED_Q4
    if criterion is None and diagnostics is not None and record.okopf is None and record.okfs is None:
        diagnostics.warn("MISSING_CODES", "no legal-form or ownership code; treated as eligible",
                         record.inn, record.year)
    return EligibilityDecision(eligible=criterion is None, exempt_criteria=criterion, financial=financial)


def eligibility_table(universe: Iterable[FirmRecord], financial_register: FinancialRegister,
                      exemptions: ExemptionSets, diagnostics: Diagnostics | None = None
                      ) -> Tuple[Dict[Tuple[str, int], EligibilityDecision], Counter]:
    """Classify every firm-year; also return counts per outcome."""
    table: Dict[Tuple[str, int], EligibilityDecision] = {}
    counts: Counter = Counter()
    for record in universe:
        decision = classify(record, financial_register, exemptions, diagnostics)
        table[record.key] = decision
        counts["eligible" if decision.eligible else decision.exempt_criteria.value] += 1
    return table, counts


def write_eligibility(path: str | Path, table: Dict[Tuple[str, int], EligibilityDecision]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inn", "year", "eligible", "exempt_criteria", "financial"])
        for (inn, year), d in sorted(table.items()):
            w.writerow([inn, year, int(d.eligible),
                        d.exempt_criteria.value if d.exempt_criteria else "", int(d.financial)])


def read_eligibility(path: str | Path) -> Dict[Tuple[str, int], EligibilityDecision]:
    table = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            table[(row["inn"], int(row["year"]))] = EligibilityDecision(
                eligible=row["eligible"] == "1",
                exempt_criteria=Exemption(row["exempt_criteria"]) if row["exempt_criteria"] else None,
                financial=row["financial"] == "1",
            )
    return table


def partition_counts(table: Dict[Tuple[str, int], EligibilityDecision]) -> List[Tuple[int, int, int]]:
    """Per year: (year, eligible, ineligible)."""
    per: Dict[int, List[int]] = {}
    for (_, year), d in table.items():
        c = per.setdefault(year, [0, 0])
        c[0 if d.eligible else 1] += 1
    return [(y, c[0], c[1]) for y, c in sorted(per.items())]
