"""Synthetic fixture corpus with a manifest of every planted fact.

Statements are built from drawn components with totals computed by plain
arithmetic, so every unperturbed statement articulates exactly. Each
filing's previous-period columns hold the true values of the earlier
years, which makes imputation recovery checkable line by line.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .model import (
    FIRST_YEAR,
    LAST_YEAR,
    Address,
    Decoding,
    Form,
    Provider,
    RawFiling,
    Unit,
)
from .registry import FirmFragment, RegistrySnapshot, write_snapshot
from .statements import fns_to_string, rosstat_header, rosstat_layout, rosstat_row

Lines = Dict[str, int]

# (tax code, region, [(city, lat, lon)])
REGIONS = (
    ("77", "Moscow", (("Moscow", 55.7558, 37.6173),)),
    ("78", "Saint Petersburg", (("Saint Petersburg", 59.9343, 30.3351),)),
    ("50", "Moscow Oblast", (("Podolsk", 55.4312, 37.5458), ("Khimki", 55.8970, 37.4297))),
    ("66", "Sverdlovsk Oblast", (("Yekaterinburg", 56.8389, 60.6057), ("Nizhny Tagil", 57.9101, 59.9813))),
    ("54", "Novosibirsk Oblast", (("Novosibirsk", 55.0084, 82.9357),)),
    ("16", "Republic of Tatarstan", (("Kazan", 55.7887, 49.1221), ("Naberezhnye Chelny", 55.7436, 52.3958))),
    ("23", "Krasnodar Krai", (("Krasnodar", 45.0355, 38.9753), ("Sochi", 43.5855, 39.7231))),
    ("25", "Primorsky Krai", (("Vladivostok", 43.1198, 131.8869),)),
)
STREETS = ("Lenina", "Mira", "Sovetskaya", "Gagarina", "Pushkina", "Lesnaya", "Sadovaya",
           "Shkolnaya", "Molodezhnaya", "Tsentralnaya", "Naberezhnaya", "Zavodskaya")

# old code -> new code
OKVED_CHANGES = {
    "52.11": "47.11", "51.70": "46.90", "45.21": "41.20", "72.20": "62.01", "15.81": "10.71",
    "60.24": "49.41", "70.20": "68.20", "74.14": "70.22", "01.11.1": "01.11", "85.11.1": "86.10",
    "80.10.1": "85.11", "40.10.1": "35.11", "65.12": "64.19", "67.12": "66.12",
}
OKOPF_CHANGES = {"65": "12300", "47": "12267", "50": "71400", "81": "75101"}
_OKVED_OLD = {new: old for old, new in OKVED_CHANGES.items()}
_OKOPF_OLD = {new: old for old, new in OKOPF_CHANGES.items()}
INDUSTRIES = ("47.11", "46.90", "41.20", "62.01", "10.71", "49.41", "68.20", "70.22", "01.11",
              "86.10", "85.11", "35.11")
FINANCIAL_INDUSTRIES = ("64.19", "66.12")

# exemption category -> (okopf, okfs)
CATEGORY_CODES = {
    "GOVERNMENT": ("75101", "12"),
    "RELIGIOUS": ("71400", "50"),
    "FINANCIAL": ("12267", "16"),
}
EXEMPTION_ROWS = (
    ("GOVERNMENT", "okfs", "12"), ("GOVERNMENT", "okfs", "13"), ("GOVERNMENT", "okfs", "14"),
    ("GOVERNMENT", "okopf", "75101"), ("GOVERNMENT", "okopf", "75201"),
    ("RELIGIOUS", "okopf", "71400"),
)

# Component weights relative to firm scale.
FULL_ASSETS = (("1110", .05), ("1150", .4), ("1170", .1), ("1190", .02))
FULL_CURRENT = (("1210", .2), ("1230", .3), ("1240", .05), ("1250", .1), ("1260", .02))
FULL_LONG_LIAB = (("1410", .1), ("1420", .02), ("1450", .02))
FULL_SHORT_LIAB = (("1510", .1), ("1520", .3), ("1530", .01), ("1550", .02))
SIMPLE_ASSETS = (("1150", .4), ("1170", .1), ("1210", .2), ("1230", .3), ("1250", .1))
SIMPLE_LIAB = (("1410", .1), ("1450", .02), ("1510", .1), ("1520", .3), ("1550", .02))
ZERO_LINE = "1220"
DECODING_LABELS = ("grants received", "insurance claims", "fees", "penalties paid", "membership dues")

FULL_EQUATION_TOTALS = ("1100", "1200", "1300", "1400", "1500", "1600", "1700", "2100", "2200",
                        "2300", "4100", "4110", "4120", "4200", "4210", "4220", "4300", "4310",
                        "4320", "4400", "4500")
SIMPLE_EQUATION_TOTALS = ("1600", "1700", "2400")

MANIFEST_FIELDS = (
    "inn", "year", "eligible", "exempt_criteria", "filed", "provider", "form", "unit",
    "n_duplicates", "perturbed_equation", "tax_plant", "zero_plant", "anomalous", "imputable",
    "revenue", "geo_quality",
)


def _check_rate(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {x}")


def _check_mix(name: str, mix: Sequence[Tuple[str, float]], total_one: bool) -> None:
    for k, v in mix:
        _check_rate(f"{name}[{k}]", v)
    s = sum(v for _, v in mix)
    if (total_one and abs(s - 1.0) > 1e-9) or s > 1.0 + 1e-9:
        raise ValueError(f"{name} weights sum to {s}")


@dataclass(frozen=True)
class CorpusPlan:
    n_firms: int = 1000
    span: Tuple[int, int] = (FIRST_YEAR, LAST_YEAR)
    filing_rate: float | Mapping[int, float] = 0.7
    ineligible_filing_rate: float = 0.3
    articulation_error_rate: float = 0.05
    duplicate_rate: float = 0.03
    unit_mix: Tuple[Tuple[str, float], ...] = (("THOUSANDS", .8), ("RUBLES", .15), ("MILLIONS", .05))
    exemption_mix: Tuple[Tuple[str, float], ...] = (("GOVERNMENT", .02), ("RELIGIOUS", .01),
                                                    ("FINANCIAL", .03))
    geo_mix: Tuple[Tuple[str, float], ...] = (("HOUSE", .6), ("STREET", .2), ("CITY", .15), ("NONE", .05))
    simplified_share: float = 0.3
    zero_rate: float = 0.1
    decoding_rate: float = 0.2
    tax_plant_rate: float = 0.1
    missing_okved_rate: float = 0.02
    n_anomalies: int = 10
    n_orphans: int = 5
    snapshot_years: Tuple[int, ...] = (2012, 2015, 2019, 2023)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.span
        if not FIRST_YEAR <= lo <= hi <= LAST_YEAR:
            raise ValueError(f"span {self.span} outside {FIRST_YEAR}-{LAST_YEAR}")
        if self.n_firms < 1:
            raise ValueError("n_firms must be positive")
        for name in ("ineligible_filing_rate", "articulation_error_rate", "duplicate_rate",
                     "simplified_share", "zero_rate", "decoding_rate", "tax_plant_rate",
                     "missing_okved_rate"):
            _check_rate(name, getattr(self, name))
        rates = self.filing_rate.values() if isinstance(self.filing_rate, Mapping) else [self.filing_rate]
        for r in rates:
            _check_rate("filing_rate", r)
        _check_mix("unit_mix", self.unit_mix, True)
        _check_mix("geo_mix", self.geo_mix, True)
        _check_mix("exemption_mix", self.exemption_mix, False)
        if not self.snapshot_years or max(self.snapshot_years) < hi:
            raise ValueError("the latest snapshot must not precede the end of the span")

    def rate_for(self, year: int) -> float:
        if isinstance(self.filing_rate, Mapping):
            return self.filing_rate.get(year, 0.0)
        return self.filing_rate


@dataclass
class CorpusPaths:
    root: Path
    registry: List[Path] = field(default_factory=list)
    fns: List[Path] = field(default_factory=list)
    rosstat: List[Path] = field(default_factory=list)

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.csv"

    @property
    def truth(self) -> Path:
        return self.root / "manifest_truth.jsonl"

    @property
    def config(self) -> Path:
        return self.root / "pipeline.ini"

    exemptions = property(lambda self: self.root / "exemptions.csv")
    financial_register = property(lambda self: self.root / "financial_register.csv")
    exclusions = property(lambda self: self.root / "exclusions.csv")
    gazetteer = property(lambda self: self.root / "gazetteer.csv")
    national_accounts = property(lambda self: self.root / "national_accounts.csv")
    okved_correspondence = property(lambda self: self.root / "okved_correspondence.csv")
    okopf_correspondence = property(lambda self: self.root / "okopf_correspondence.csv")
    orphans = property(lambda self: self.root / "orphans.csv")


def _pick(rng: random.Random, mix: Sequence[Tuple[str, float]]) -> Optional[str]:
    u, acc = rng.random(), 0.0
    for k, w in mix:
        acc += w
        if u < acc:
            return k
    return None


@dataclass
class Truth:
    lines: Lines
    decodings: List[Tuple[str, str, int]]


class _Statements:
    """Draws articulated statements for one firm."""

    def __init__(self, rng: random.Random, scale: float, granularity: int):
        self.rng = rng
        self.scale = scale
        self.g = granularity

    def d(self, weight: float) -> int:
        return self.g * max(1, int(self.scale * weight * (0.5 + self.rng.random())))

    def _sum(self, L: Lines, parts) -> int:
        total = 0
        for code, w in parts:
            L[code] = self.d(w)
            total += L[code]
        return total

    def full(self, year: int, decode: bool) -> Truth:
        for _ in range(1000):
            L: Lines = {}
            L["1100"] = self._sum(L, FULL_ASSETS)
            L["1200"] = self._sum(L, FULL_CURRENT)
            L["1600"] = L["1100"] + L["1200"]
            L["1400"] = self._sum(L, FULL_LONG_LIAB)
            L["1500"] = self._sum(L, FULL_SHORT_LIAB)
            L["1310"] = self.d(.01)
            L["1300"] = L["1600"] - L["1400"] - L["1500"]
            L["1370"] = L["1300"] - L["1310"]
            L["1700"] = L["1300"] + L["1400"] + L["1500"]

            L["2120"] = self.d(.7)
            L["2110"] = L["2120"] + self.d(.3)
            L["2100"] = L["2110"] - L["2120"]
            L["2210"], L["2220"] = self.d(.05), self.d(.05)
            L["2200"] = L["2100"] - L["2210"] - L["2220"]
            for c, w in (("2320", .01), ("2330", .02), ("2340", .02), ("2350", .03)):
                L[c] = self.d(w)
            L["2300"] = L["2200"] + L["2320"] - L["2330"] + L["2340"] - L["2350"]
            if year >= 2020:
                L["2411"], L["2412"] = self.d(.02), self.d(.005)
                L["2410"] = L["2411"] + L["2412"]
            else:
                L["2410"] = self.d(.02)
            L["2400"] = L["2300"] - L["2410"]

            decodings: List[Tuple[str, str, int]] = []
            L["4110"] = self._sum(L, (("4111", .9), ("4112", .01), ("4119", .02)))
            L["4120"] = self._sum(L, (("4121", .5), ("4122", .1), ("4123", .02), ("4124", .02), ("4129", .02)))
            if decode:
                for parent in ("4110", "4120"):
                    if self.rng.random() < 0.5:
                        labels = self.rng.sample(DECODING_LABELS, self.rng.randint(1, 2))
                        x = parent[:3] + "x"
                        for label in labels:
                            v = self.d(.01)
                            decodings.append((parent, label, v))
                            L[x] = L.get(x, 0) + v
                        L[parent] += L[x]
            L["4100"] = L["4110"] - L["4120"]
            L["4210"] = self._sum(L, (("4211", .01), ("4214", .005)))
            L["4220"] = self._sum(L, (("4221", .05),))
            L["4200"] = L["4210"] - L["4220"]
            L["4310"] = self._sum(L, (("4311", .05),))
            L["4320"] = self._sum(L, (("4322", .01), ("4323", .04)))
            L["4300"] = L["4310"] - L["4320"]
            L["4400"] = L["4100"] + L["4200"] + L["4300"]
            L["4450"], L["4490"] = self.d(.05), self.d(.001)
            L["4500"] = L["4400"] + L["4450"] + L["4490"]
            if 0 not in L.values():
                return Truth(L, decodings)
        raise RuntimeError("could not draw a statement without zero totals")

    def simplified(self, year: int) -> Truth:
        for _ in range(1000):
            L: Lines = {}
            L["1600"] = self._sum(L, SIMPLE_ASSETS)
            L["1700"] = L["1600"]
            liab = self._sum(L, SIMPLE_LIAB)
            L["1300"] = L["1600"] - liab
            L["2120"] = self.d(.7)
            L["2110"] = L["2120"] + self.d(.3)
            for c, w in (("2330", .02), ("2340", .02), ("2350", .03), ("2410", .02)):
                L[c] = self.d(w)
            L["2400"] = L["2110"] - L["2120"] - L["2330"] + L["2340"] - L["2350"] - L["2410"]
            if 0 not in L.values():
                return Truth(L, [])
        raise RuntimeError("could not draw a statement without zero totals")


def _render(v: int, unit: Unit, rng: random.Random) -> int:
    """Express a thousands amount in the filing unit so it converts back exactly."""
    if unit is Unit.THOUSANDS:
        return v
    if unit is Unit.MILLIONS:
        return v // 1000
    return v * 1000 + rng.randint(-499, 499) if v else 0


def _harmonized_truth(lines: Lines, year: int) -> Lines:
    """What the pipeline should hold for a year: zeros vanish up to 2018."""
    if year <= 2018:
        return {c: v for c, v in lines.items() if v != 0}
    return dict(lines)


def _balance(lines: Lines) -> Lines:
    return {c: v for c, v in lines.items() if c.startswith("1")}


@dataclass
class _Firm:
    index: int
    inn: str
    ogrn: str
    region_code: str
    region: str
    address: Address
    geo_quality: str
    creation: date
    dissolution: Optional[date]
    category: Optional[str]
    okved: str
    okopf: str
    okfs: str
    unit: Unit
    form: Form
    missing_okved_snapshot: Optional[int]

    def years(self, span: Tuple[int, int]) -> List[int]:
        lo, hi = span
        first = max(lo, self.creation.year)
        last = hi if self.dissolution is None else min(hi, self.dissolution.year)
        return list(range(first, last + 1))

    def q4_year(self) -> Optional[int]:
        return self.creation.year if self.creation.month >= 10 else None

    def exemption(self, year: int) -> Optional[str]:
        if self.category is not None:
            return self.category
        if year == self.q4_year():
            return "NEWLY_INCORPORATED_Q4"
        return None


class _Writers:
    """Per-year output streams for both provider formats."""

    def __init__(self, root: Path, span: Tuple[int, int], header: List[str]):
        self.layout = rosstat_layout(header)
        self.handles = []
        self.fns: Dict[int, object] = {}
        self.rosstat: Dict[int, object] = {}
        self.paths_fns: List[Path] = []
        self.paths_rosstat: List[Path] = []
        (root / "fns").mkdir(parents=True, exist_ok=True)
        (root / "rosstat").mkdir(parents=True, exist_ok=True)
        for y in range(span[0], span[1] + 1):
            if y >= 2019:
                p = root / "fns" / f"fns_{y}.xml"
                fh = p.open("w", encoding="utf-8")
                fh.write("<?xml version='1.0' encoding='utf-8'?>\n<filings>\n")
                self.fns[y] = fh
                self.paths_fns.append(p)
            elif y >= 2012:
                p = root / "rosstat" / f"rosstat_{y}.csv"
                fh = p.open("w", encoding="utf-8", newline="")
                self.rosstat[y] = csv.writer(fh, lineterminator="\n")
                self.rosstat[y].writerow(header)
                self.paths_rosstat.append(p)
            else:
                continue
            self.handles.append(fh)

    def write(self, filing: RawFiling) -> None:
        if filing.provider is Provider.FNS:
            fh = self.fns[filing.year]
            fh.write(fns_to_string(filing))
            fh.write("\n")
        else:
            self.rosstat[filing.year].writerow(rosstat_row(filing, self.layout))

    def close(self) -> None:
        for fh in self.fns.values():
            fh.write("</filings>\n")
        for fh in self.handles:
            fh.close()


def _rosstat_codes() -> Tuple[List[str], List[str], List[str]]:
    current = sorted({c for c, _ in FULL_ASSETS + FULL_CURRENT + FULL_LONG_LIAB + FULL_SHORT_LIAB + SIMPLE_ASSETS}
                     | {"1100", "1200", "1300", "1310", "1370", "1400", "1500", "1600", "1700", ZERO_LINE}
                     | {"2100", "2110", "2120", "2200", "2210", "2220", "2300", "2320", "2330", "2340",
                        "2350", "2400", "2410"}
                     | {"4100", "4110", "4111", "4112", "4119", "4120", "4121", "4122", "4123", "4124",
                        "4129", "4200", "4210", "4211", "4214", "4220", "4221", "4300", "4310", "4311",
                        "4320", "4322", "4323", "4400", "4450", "4490", "4500"})
    return current, current, [c for c in current if c.startswith("1")]


def _make_firm(i: int, plan: CorpusPlan, rng: random.Random) -> _Firm:
    lo, hi = plan.span
    code, region, cities = REGIONS[rng.randrange(len(REGIONS))]
    inn = f"{code}{i + 1:08d}"
    if rng.random() < 0.6:
        creation = date(rng.randint(1995, 2010), 1, 1) + timedelta(days=rng.randrange(365))
    else:
        creation = date(rng.randint(lo, hi), 1, 1) + timedelta(days=rng.randrange(365))
    dissolution = None
    if rng.random() < 0.15:
        first = max(lo, creation.year)
        day = date(rng.randint(first, hi), 1, 1) + timedelta(days=rng.randrange(365))
        dissolution = max(day, creation + timedelta(days=1))
        if dissolution.year > hi:
            dissolution = None
    category = _pick(rng, plan.exemption_mix)
    if category is None:
        okopf, okfs = rng.choice(("12300", "12267")), rng.choice(("16", "16", "23"))
        okved = rng.choice(INDUSTRIES)
    else:
        okopf, okfs = CATEGORY_CODES[category]
        okved = rng.choice(FINANCIAL_INDUSTRIES) if category == "FINANCIAL" else rng.choice(INDUSTRIES)
    unit = Unit(_pick(rng, plan.unit_mix))
    form = Form.SIMPLIFIED if rng.random() < plan.simplified_share else Form.FULL

    quality = _pick(rng, plan.geo_mix)
    city = cities[rng.randrange(len(cities))][0]
    if quality == "HOUSE":
        street, house = rng.choice(STREETS), str(rng.randint(1, 60))
    elif quality == "NONE":
        city, street, house = f"Settlement {i}", "Polevaya", str(rng.randint(1, 60))
    else:
        street, house = f"Lane {i}", str(rng.randint(1, 60))
    missing = None
    if rng.random() < plan.missing_okved_rate:
        middle = sorted(plan.snapshot_years)[:-1]
        missing = rng.choice(middle) if middle else None
    return _Firm(i, inn, f"1{creation.year % 100:02d}{code}{i + 1:08d}", code, region,
                 Address(region, city, street, house), quality, creation, dissolution, category,
                 okved, okopf, okfs, unit, form, missing)


def _snapshot_fragment(f: _Firm, as_of: int) -> FirmFragment:
    old = as_of < 2014
    okved = None if f.missing_okved_snapshot == as_of else (_OKVED_OLD.get(f.okved, f.okved) if old else f.okved)
    okopf = _OKOPF_OLD.get(f.okopf, f.okopf) if as_of < 2013 else f.okopf
    dissolution = f.dissolution if f.dissolution is not None and f.dissolution.year <= as_of else None
    return FirmFragment(
        inn=f.inn, ogrn=f.ogrn, name=f"Firm {f.index}", creation_date=f.creation,
        dissolution_date=dissolution, okved=okved, okopf=okopf, okfs=f.okfs,
        okogu="4210014" if f.category != "GOVERNMENT" else "1300000",
        okpo=f"{f.index + 1:08d}", oktmo=f"{int(f.region_code):02d}{f.index % 1000000:06d}",
        address=f.address,
    )


def _city_center(region: str, city: str) -> Tuple[float, float]:
    for _, name, cities in REGIONS:
        if name == region:
            for c, lat, lon in cities:
                if c == city:
                    return lat, lon
    raise KeyError(city)


def _gazetteer(firms: Sequence[_Firm], rng: random.Random) -> List[Tuple[str, str, str, str, float, float, int]]:
    rows: Dict[Tuple[str, str, str, str], Tuple[float, float, int]] = {}
    for _, region, cities in REGIONS:
        for city, lat, lon in cities:
            rows[(region, city, "", "")] = (lat, lon, 16)
    for f in firms:
        a = f.address
        if f.geo_quality in ("HOUSE", "STREET"):
            lat0, lon0 = _city_center(a.region, a.city)
            srng = random.Random(f"{a.region}|{a.city}|{a.street}")
            slat, slon = lat0 + srng.uniform(-0.08, 0.08), lon0 + srng.uniform(-0.12, 0.12)
            if f.geo_quality == "HOUSE":
                h = int(a.house)
                rows[(a.region, a.city, a.street, a.house)] = (round(slat + h * 0.0004, 6),
                                                               round(slon + h * 0.0003, 6), 30)
            else:
                rows[(a.region, a.city, a.street, "")] = (round(slat, 6), round(slon, 6), rng.randint(26, 29))
    return [(*k, *v) for k, v in sorted(rows.items())]


def generate(plan: CorpusPlan, out_dir: str | Path) -> CorpusPaths:
    """Write a fixture corpus and its manifest into ``out_dir``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(plan.seed)
    lo, hi = plan.span
    firms = [_make_firm(i, plan, rng) for i in range(plan.n_firms)]
    firms.sort(key=lambda f: f.inn)
    anomaly_firms = set(rng.sample(range(plan.n_firms), min(plan.n_anomalies, plan.n_firms)))

    paths = CorpusPaths(root)
    for y in sorted(plan.snapshot_years):
        snap = RegistrySnapshot(y, [_snapshot_fragment(f, y) for f in firms if f.creation.year <= y])
        p = root / "registry" / f"egrul_{y}.xml"
        write_snapshot(p, snap)
        paths.registry.append(p)

    cur, p1, p2 = _rosstat_codes()
    writers = _Writers(root, plan.span, rosstat_header(cur, p1, p2, with_submission_date=True))
    manifest_fh = paths.manifest.open("w", encoding="utf-8", newline="")
    manifest = csv.writer(manifest_fh, lineterminator="\n")
    manifest.writerow(MANIFEST_FIELDS)
    truth_fh = paths.truth.open("w", encoding="utf-8")
    exclusions: List[Tuple[str, int, str]] = []
    financial: List[Tuple[int, str]] = []
    try:
        for f in firms:
            _emit_firm(f, plan, rng, writers, manifest, truth_fh, exclusions, financial,
                       f.index in anomaly_firms)
        orphans = _emit_orphans(plan, rng, writers)
    finally:
        writers.close()
        manifest_fh.close()
        truth_fh.close()
    paths.fns, paths.rosstat = writers.paths_fns, writers.paths_rosstat

    _write_csv(paths.exemptions, ("criterion", "code_kind", "code"), EXEMPTION_ROWS)
    _write_csv(paths.financial_register, ("year", "inn"), sorted(financial))
    _write_csv(paths.exclusions, ("inn", "year", "reason"), exclusions)
    _write_csv(paths.orphans, ("inn", "year"), orphans)
    _write_csv(paths.okved_correspondence, ("old_code", "new_code"), sorted(OKVED_CHANGES.items()))
    _write_csv(paths.okopf_correspondence, ("old_code", "new_code"), sorted(OKOPF_CHANGES.items()))
    _write_csv(paths.gazetteer, ("region", "city", "street", "house", "lat", "lon", "rank"),
               _gazetteer(firms, rng))
    _write_csv(paths.national_accounts, ("year", "gross_output", "intermediate_consumption", "gdp"),
               [(y, 10 ** 11 * (y - 2000), 6 * 10 ** 10 * (y - 2000), 4 * 10 ** 10 * (y - 2000))
                for y in range(lo, hi + 1)])
    _write_config(paths, plan)
    return paths


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_config(paths: CorpusPaths, plan: CorpusPlan) -> None:
    lo, hi = plan.span
    text = f"""[pipeline]
registry = registry/*.xml
fns = fns/*.xml
rosstat = rosstat/*.csv
span = {lo}-{hi}
okved_correspondence = okved_correspondence.csv
okopf_correspondence = okopf_correspondence.csv
exemptions = exemptions.csv
financial_register = financial_register.csv
exclusions = exclusions.csv
gazetteer = gazetteer.csv
national_accounts = national_accounts.csv
work_dir = work
output_dir = output
"""
    paths.config.write_text(text, encoding="utf-8")


def _submission(rng: random.Random, year: int) -> date:
    return date(year + 1, 2, 1) + timedelta(days=rng.randrange(80))


def _emit_firm(f: _Firm, plan: CorpusPlan, rng: random.Random, writers: _Writers, manifest,
               truth_fh, exclusions, financial, anomaly_candidate: bool) -> None:
    years = f.years(plan.span)
    if not years:
        return
    if f.category == "FINANCIAL":
        financial.extend((y, f.inn) for y in years)
    scale = 10 ** rng.uniform(1, 3) if f.unit is Unit.MILLIONS else 10 ** rng.uniform(2, 6)
    gran = 1000 if f.unit is Unit.MILLIONS else 1
    draw = _Statements(rng, scale, gran)
    truths: Dict[int, Truth] = {}
    for y in years:
        if f.form is Form.FULL:
            truths[y] = draw.full(y, decode=y >= 2019 and rng.random() < plan.decoding_rate)
        else:
            truths[y] = draw.simplified(y)
        if rng.random() < plan.zero_rate:
            truths[y].lines[ZERO_LINE] = 0

    q4 = f.q4_year()
    filed: Dict[int, bool] = {}
    for y in years:
        if y < 2012 or y == q4:
            filed[y] = False
        elif f.exemption(y) is None:
            filed[y] = rng.random() < plan.rate_for(y)
        else:
            filed[y] = rng.random() < plan.ineligible_filing_rate

    def has_statement(y: int) -> bool:
        # the first statement of a firm created in Q4 covers that quarter too
        return y in truths and y != q4

    anomaly_year = None
    if anomaly_candidate and f.form is Form.FULL and f.unit is Unit.THOUSANDS:
        options = [y for y in years if filed[y] and f.exemption(y) is None]
        if options:
            anomaly_year = rng.choice(options)

    for y in years:
        row = {"inn": f.inn, "year": y, "eligible": int(f.exemption(y) is None),
               "exempt_criteria": f.exemption(y) or "", "filed": int(filed[y]), "provider": "",
               "form": "", "unit": "", "n_duplicates": 0, "perturbed_equation": "", "tax_plant": 0,
               "zero_plant": int(truths[y].lines.get(ZERO_LINE) == 0), "anomalous": 0,
               "imputable": "", "revenue": "", "geo_quality": f.geo_quality}
        if filed[y]:
            provider = Provider.FNS if y >= 2019 else Provider.ROSSTAT
            truth = truths[y]
            current = dict(truth.lines)
            if y == anomaly_year:
                current = {c: v * 1000 for c, v in current.items()}
                row["anomalous"] = 1
                exclusions.append((f.inn, y, "scaled by 1000"))
            elif rng.random() < plan.articulation_error_rate:
                totals = FULL_EQUATION_TOTALS if f.form is Form.FULL else SIMPLE_EQUATION_TOTALS
                target = rng.choice([t for t in totals if t in current])
                delta = rng.randint(5, 60) * gran * rng.choice((-1, 1))
                current[target] += delta
                row["perturbed_equation"] = target
            tax_plant = (f.form is Form.FULL and y >= 2020 and not row["anomalous"]
                         and rng.random() < plan.tax_plant_rate)
            if tax_plant:
                del current["2410"]
                row["tax_plant"] = 1
            prior1 = truths[y - 1] if has_statement(y - 1) else Truth({}, [])
            prior2 = _balance(truths[y - 2].lines) if has_statement(y - 2) else {}
            r = lambda lines: {c: _render(v, f.unit, rng) for c, v in lines.items() if not c.endswith("x")}
            decodings = ()
            if provider is Provider.FNS:
                decodings = tuple(Decoding(p, lab, _render(v * (1000 if y == anomaly_year else 1), f.unit, rng))
                                  for p, lab, v in truth.decodings)
                decodings += tuple(Decoding(p, lab, _render(v, f.unit, rng), "prior1")
                                   for p, lab, v in prior1.decodings)
            survivor = RawFiling(f.inn, y, provider, f.form, f.unit, _submission(rng, y) + timedelta(days=30),
                                 r(current), r(prior1.lines), r(prior2), decodings)
            n_dup = 0
            if rng.random() < plan.duplicate_rate:
                n_dup = 1 if rng.random() < 0.7 else 2
            dups = []
            for k in range(n_dup):
                bumped = dict(survivor.current)
                bumped["2110"] = bumped["2110"] + (k + 1) * (1000 if f.unit is Unit.RUBLES else 1)
                dups.append(RawFiling(f.inn, y, provider, f.form, f.unit,
                                      survivor.submission_date - timedelta(days=1 + k + rng.randrange(20)),
                                      bumped, survivor.prior1, survivor.prior2, survivor.decodings))
            batch = dups + [survivor]
            rng.shuffle(batch)
            for filing in batch:
                writers.write(filing)
            row.update(provider=provider.value, form=f.form.value, unit=f.unit.value,
                       n_duplicates=n_dup, revenue=current["2110"])
        else:
            expected, source = None, ""
            if y + 1 in filed and filed[y + 1]:
                source = "t1"
                if has_statement(y):
                    expected = _harmonized_truth(truths[y].lines, y)
            elif y + 2 in filed and filed[y + 2]:
                source = "t2"
                if has_statement(y):
                    expected = _harmonized_truth(_balance(truths[y].lines), y)
            if expected:
                row["imputable"] = source
                truth_fh.write(json.dumps({"inn": f.inn, "year": y, "source": source, "lines": expected},
                                          separators=(",", ":")))
                truth_fh.write("\n")
        manifest.writerow([row[k] for k in MANIFEST_FIELDS])


def _emit_orphans(plan: CorpusPlan, rng: random.Random, writers: _Writers) -> List[Tuple[str, int]]:
    """Filings by taxpayers absent from the registry."""
    lo, hi = plan.span
    years = [y for y in range(max(lo, 2012), hi + 1)]
    out = []
    if not years:
        return out
    draw = _Statements(rng, 1000.0, 1)
    for k in range(plan.n_orphans):
        y = rng.choice(years)
        inn = f"99{k + 1:08d}"
        t = draw.simplified(y)
        writers.write(RawFiling(inn, y, Provider.FNS if y >= 2019 else Provider.ROSSTAT, Form.SIMPLIFIED,
                                Unit.THOUSANDS, _submission(rng, y), t.lines))
        out.append((inn, y))
    return sorted(out)


def read_manifest(path: str | Path) -> List[dict]:
    ints = ("year", "eligible", "filed", "n_duplicates", "tax_plant", "zero_plant", "anomalous")
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ints:
                r[k] = int(r[k])
            r["revenue"] = int(r["revenue"]) if r["revenue"] else None
            out.append(r)
    return out


def read_truth(path: str | Path) -> Dict[Tuple[str, int], Tuple[str, Lines]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            out[(d["inn"], d["year"])] = (d["source"], d["lines"])
    return out


def main(argv: Sequence[str] | None = None) -> int:
    import argparse

    p = argparse.ArgumentParser(prog="python -m firmpanel.synth", description="Write a synthetic corpus.")
    p.add_argument("out_dir")
    p.add_argument("--firms", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filing-rate", type=float, default=0.7)
    p.add_argument("--error-rate", type=float, default=0.05)
    args = p.parse_args(argv)
    try:
        plan = CorpusPlan(n_firms=args.firms, seed=args.seed, filing_rate=args.filing_rate,
                          articulation_error_rate=args.error_rate)
    except ValueError as exc:
        p.error(str(exc))
    paths = generate(plan, args.out_dir)
    print(paths.config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
