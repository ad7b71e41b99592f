"""Shared domain types, the line-code universe and monetary conventions.

Monetary values live in plain ``dict[str, int]`` maps keyed by line code.
A code that is absent from the map is *missing*; a code mapped to ``0`` is a
filed zero. All amounts in harmonized maps are integer thousands of rubles.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from functools import lru_cache
from importlib import resources
from typing import Dict, Optional, Tuple

Lines = Dict[str, int]

FIRST_YEAR = 2011
LAST_YEAR = 2023
ROSSTAT_YEARS = range(2012, 2019)
FNS_YEARS = range(2019, 2024)
# Zeros in this period cannot be told apart from blanks in the source data.
ZERO_IS_MISSING_UNTIL = 2018

SECTIONS = ("balance", "pnl", "equity", "cashflow", "proper_use")

# Parents whose decoding lines are summed into an x-suffix line.
DECODABLE_PARENTS = frozenset(
    {"3210", "3220", "3310", "3320", "4110", "4120", "4210", "4220", "4310", "4320"}
)


class Provider(str, enum.Enum):
    ROSSTAT = "ROSSTAT"
    FNS = "FNS"


class Form(str, enum.Enum):
    FULL = "FULL"
    SIMPLIFIED = "SIMPLIFIED"


class Unit(str, enum.Enum):
    RUBLES = "RUBLES"
    THOUSANDS = "THOUSANDS"
    MILLIONS = "MILLIONS"


class Exemption(str, enum.Enum):
    GOVERNMENT = "GOVERNMENT"
    RELIGIOUS = "RELIGIOUS"
    FINANCIAL = "FINANCIAL"
    NEWLY_INCORPORATED_Q4 = "NEWLY_INCORPORATED_Q4"


class Quality(str, enum.Enum):
    HOUSE = "HOUSE"
    STREET = "STREET"
    CITY = "CITY"
    NONE = "NONE"


@dataclass(frozen=True)
class LineInfo:
    code: str
    section: str
    alias: str = ""
    description: str = ""
    optional: bool = False


@lru_cache(maxsize=None)
def line_registry() -> Dict[str, LineInfo]:
    """Return the closed registry of line codes, keyed by code.

    Ordered as in the published variable table, followed by the optional
    codes that only appear in articulation equations.
    """
    registry: Dict[str, LineInfo] = {}
    data = resources.files("firmpanel") / "data"
    with (data / "lines.csv").open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            registry[row["code"]] = LineInfo(
                row["code"], row["section"], row["alias"], row["description"]
            )
    with (data / "optional_lines.csv").open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            registry[row["code"]] = LineInfo(row["code"], row["section"], optional=True)
    return registry


@lru_cache(maxsize=None)
def published_codes() -> Tuple[str, ...]:
    """Codes of the published variable table, in table order."""
    return tuple(c for c, info in line_registry().items() if not info.optional)


@lru_cache(maxsize=None)
def codes_in_section(section: str) -> frozenset:
    return frozenset(c for c, info in line_registry().items() if info.section == section)


def is_valid_code(code: str) -> bool:
    return code in line_registry()


def is_x_code(code: str) -> bool:
    return len(code) == 4 and code.endswith("x")


@lru_cache(maxsize=None)
def x_codes() -> frozenset:
    """Every x-suffix line of the registry."""
    return frozenset(c for c in line_registry() if is_x_code(c))


def x_line_for(parent: str) -> str:
    """``"4110"`` -> ``"411x"``."""
    return parent[:3] + "x"


def section_of(code: str) -> str:
    return line_registry()[code].section


def round_half_away(numerator: int, denominator: int) -> int:
    q, r = divmod(abs(numerator), denominator)
    if 2 * r >= denominator:
        q += 1
    return -q if numerator < 0 else q


def to_thousands(amount: int, unit: Unit) -> int:
    if unit is Unit.THOUSANDS:
        return amount
    if unit is Unit.MILLIONS:
        return amount * 1000
    return round_half_away(amount, 1000)


def quality_from_rank(rank: Optional[int]) -> Quality:
    if rank is None:
        return Quality.NONE
    if rank == 30:
        return Quality.HOUSE
    if 26 <= rank <= 29:
        return Quality.STREET
    if 12 <= rank <= 25:
        return Quality.CITY
    return Quality.NONE


@dataclass(frozen=True)
class Decoding:
    parent: str
    label: str
    value: int
    period: str = "current"  # "current" or "prior1"


@dataclass(frozen=True)
class RawFiling:
    inn: str
    year: int
    provider: Provider
    form: Form
    unit: Unit
    submission_date: Optional[date]
    current: Lines = field(default_factory=dict)
    prior1: Lines = field(default_factory=dict)
    prior2: Lines = field(default_factory=dict)
    decodings: Tuple[Decoding, ...] = ()

    def __post_init__(self):
        if self.provider is Provider.ROSSTAT and self.year not in ROSSTAT_YEARS:
            raise ValueError(f"Rosstat filing outside 2012-2018: {self.year}")
        if self.provider is Provider.FNS and self.year not in FNS_YEARS:
            raise ValueError(f"FNS filing outside 2019-2023: {self.year}")
        balance = codes_in_section("balance")
        bad = [c for c in self.prior2 if c not in balance]
        if bad:
            raise ValueError(f"two-years-prior values for non-balance lines: {bad}")

    @property
    def key(self) -> Tuple[str, int]:
        return (self.inn, self.year)

    def to_dict(self) -> dict:
        return {
            "inn": self.inn,
            "year": self.year,
            "provider": self.provider.value,
            "form": self.form.value,
            "unit": self.unit.value,
            "submission_date": self.submission_date.isoformat() if self.submission_date else None,
            "current": self.current,
            "prior1": self.prior1,
            "prior2": self.prior2,
            "decodings": [[d.parent, d.label, d.value, d.period] for d in self.decodings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawFiling":
        sd = d.get("submission_date")
        return cls(
            inn=d["inn"],
            year=int(d["year"]),
            provider=Provider(d["provider"]),
            form=Form(d["form"]),
            unit=Unit(d["unit"]),
            submission_date=date.fromisoformat(sd) if sd else None,
            current=dict(d.get("current", {})),
            prior1=dict(d.get("prior1", {})),
            prior2=dict(d.get("prior2", {})),
            decodings=tuple(Decoding(*x) for x in d.get("decodings", ())),
        )

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class HarmonizedStatement:
    inn: str
    year: int
    form: Form
    lines: Lines
    imputed: bool = False
    imputation_source_year: Optional[int] = None
    simplified: bool = False
    totals_adjustment: bool = False
    articulated: Optional[bool] = None
    articulated_after_adjustment: Optional[bool] = None
    provider: Optional[Provider] = None

    def __post_init__(self):
        if self.imputed and self.imputation_source_year not in (self.year + 1, self.year + 2):
            raise ValueError("imputed statements must come from year+1 or year+2")
        if not self.imputed and self.imputation_source_year is not None:
            raise ValueError("imputation_source_year set on a filed statement")

    @property
    def key(self) -> Tuple[str, int]:
        return (self.inn, self.year)

    def to_dict(self) -> dict:
        return {
            "inn": self.inn,
            "year": self.year,
            "form": self.form.value,
            "lines": self.lines,
            "imputed": self.imputed,
            "imputation_source_year": self.imputation_source_year,
            "simplified": self.simplified,
            "totals_adjustment": self.totals_adjustment,
            "articulated": self.articulated,
            "articulated_after_adjustment": self.articulated_after_adjustment,
            "provider": self.provider.value if self.provider else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonizedStatement":
        return cls(
            inn=d["inn"],
            year=int(d["year"]),
            form=Form(d["form"]),
            lines=dict(d["lines"]),
            imputed=d.get("imputed", False),
            imputation_source_year=d.get("imputation_source_year"),
            simplified=d.get("simplified", False),
            totals_adjustment=d.get("totals_adjustment", False),
            articulated=d.get("articulated"),
            articulated_after_adjustment=d.get("articulated_after_adjustment"),
            provider=Provider(d["provider"]) if d.get("provider") else None,
        )


@dataclass(frozen=True)
class Address:
    region: str = ""
    city: str = ""
    street: str = ""
    house: str = ""


@dataclass(frozen=True)
class FirmRecord:
    inn: str
    ogrn: str
    year: int
    name: str = ""
    region: str = ""
    region_taxcode: str = ""
    creation_date: Optional[date] = None
    dissolution_date: Optional[date] = None
    age: Optional[int] = None
    okved: Optional[str] = None
    okopf: Optional[str] = None
    okfs: Optional[str] = None
    okogu: Optional[str] = None
    okpo: Optional[str] = None
    oktmo: Optional[str] = None
    address: Address = Address()
    unmapped: Tuple[str, ...] = ()

    @property
    def key(self) -> Tuple[str, int]:
        return (self.inn, self.year)


@dataclass(frozen=True)
class EligibilityDecision:
    eligible: bool
    exempt_criteria: Optional[Exemption] = None
    financial: bool = False

    def __post_init__(self):
        if self.eligible == (self.exempt_criteria is not None):
            raise ValueError("eligible must be true exactly when no exemption applies")


@dataclass(frozen=True)
class GeoLocation:
    lon: Optional[float] = None
    lat: Optional[float] = None
    address_rank: Optional[int] = None

    @property
    def quality(self) -> Quality:
        return quality_from_rank(self.address_rank)


@dataclass(frozen=True)
class PanelRow:
    firm: FirmRecord
    decision: EligibilityDecision
    filed: bool
    statement: Optional[HarmonizedStatement] = None
    geo: Optional[GeoLocation] = None
    anomalous: bool = False

    def __post_init__(self):
        if not self.filed and self.statement is not None and not self.statement.imputed:
            raise ValueError("non-filed row carries a filed statement")
        if not self.decision.eligible and not self.filed:
            raise ValueError("non-eligible non-filers are not panel rows")

    @property
    def key(self) -> Tuple[str, int]:
        return self.firm.key

    @property
    def imputed(self) -> bool:
        return self.statement is not None and self.statement.imputed

    def line(self, code: str) -> Optional[int]:
        if self.statement is None:
            return None
        return self.statement.lines.get(code)


DEFAULT_MATERIALS_LINE = "4121"


def value_added(lines: Lines, materials_line: str = DEFAULT_MATERIALS_LINE) -> Optional[int]:
    """Revenue minus materials, defined only when both are present and positive."""
    revenue = lines.get("2110")
    materials = lines.get(materials_line)
    if revenue is None or materials is None or revenue <= 0 or materials <= 0:
        return None
    return revenue - materials
