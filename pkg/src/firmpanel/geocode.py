"""Address geocoding cascade, result cache and value-added gridding."""

from __future__ import annotations

import csv
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

from .diagnostics import Diagnostics, sink
from .model import (
    DEFAULT_MATERIALS_LINE,
    Address,
    GeoLocation,
    PanelRow,
    Quality,
    value_added,
)

StructuredAddress = Address


class ServiceUnavailable(RuntimeError):
    pass


class MalformedResponse(ValueError):
    pass


@dataclass(frozen=True)
class Hit:
    lat: float
    lon: float
    address_rank: int


class GeocodingClient(Protocol):
    def search(self, region: str, city: str, street: str | None = None,
               house: str | None = None) -> Optional[Hit]:
        """One structured query; ``None`` means no result."""


def normalize_part(text: str | None) -> str:
    return " ".join((text or "").lower().split())


def normalize_address(address: Address) -> str:
    return "|".join(normalize_part(p) for p in (address.region, address.city, address.street, address.house))


def is_geocodable(address: Address) -> bool:
    return bool(normalize_part(address.region)) and bool(normalize_part(address.city))


def parse_hit(payload) -> Optional[Hit]:
    """Read the first result of a Nominatim-style JSON search response."""
    if not isinstance(payload, list):
        raise MalformedResponse(f"expected a JSON list, got {type(payload).__name__}")
    if not payload:
        return None
    item = payload[0]
    try:
        rank = item.get("address_rank", item.get("place_rank"))
        return Hit(float(item["lat"]), float(item["lon"]), int(rank))
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"bad result item: {item!r}") from exc


class NominatimClient:
    """Structured search against a Nominatim-compatible ``/search`` endpoint."""

    def __init__(self, base_url: str, timeout: float = 10.0, country: str | None = None, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.country = country
        self.session = session or requests.Session()
        self._errors = (requests.ConnectionError, requests.Timeout)

    def params(self, region, city, street=None, house=None) -> dict:
        p = {"format": "jsonv2", "limit": 1, "state": region, "city": city}
        if street:
            p["street"] = f"{house} {street}" if house else street
        if self.country:
            p["country"] = self.country
        return p

    def search(self, region, city, street=None, house=None) -> Optional[Hit]:
        try:
            resp = self.session.get(f"{self.base_url}/search", params=self.params(region, city, street, house),
                                    timeout=self.timeout)
        except self._errors as exc:
            raise ServiceUnavailable(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise ServiceUnavailable(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponse(f"HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedResponse("response is not JSON") from exc
        return parse_hit(payload)


class GazetteerClient:
    """Offline client answering structured queries from an exact-match table.

    Table rows are ``region,city,street,house,lat,lon,rank``; a row with
    blank street/house answers the coarser queries.
    """

    def __init__(self, entries: Dict[Tuple[str, str, str, str], Hit]):
        self.entries = entries

    @classmethod
    def load(cls, path: str | Path) -> "GazetteerClient":
        entries = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for r in csv.DictReader(fh):
                key = tuple(normalize_part(r[k]) for k in ("region", "city", "street", "house"))
                entries[key] = Hit(float(r["lat"]), float(r["lon"]), int(r["rank"]))
        return cls(entries)

    def search(self, region, city, street=None, house=None) -> Optional[Hit]:
        return self.entries.get(tuple(normalize_part(p) for p in (region, city, street, house)))


class GeoCache:
    """Thread-safe result cache keyed by normalized address."""

    FIELDS = ("normalized_address", "lat", "lon", "rank")

    def __init__(self, entries: Dict[str, GeoLocation] | None = None):
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[GeoLocation]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, loc: GeoLocation) -> None:
        with self._lock:
            self._entries[key] = loc

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def load(cls, path: str | Path) -> "GeoCache":
        path = Path(path)
        if not path.exists():
            return cls()
        entries = {}
        with path.open(encoding="utf-8", newline="") as fh:
            for r in csv.DictReader(fh):
                entries[r["normalized_address"]] = GeoLocation(
                    float(r["lon"]) if r["lon"] else None,
                    float(r["lat"]) if r["lat"] else None,
                    int(r["rank"]) if r["rank"] else None,
                )
        return cls(entries)

    def save(self, path: str | Path) -> None:
        with self._lock:
            items = sorted(self._entries.items())
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for key, loc in items:
                w.writerow([key, _fmt(loc.lat), _fmt(loc.lon), "" if loc.address_rank is None else loc.address_rank])


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(x)


class Geocoder:
    """Three-step cascade: full address, then without house, then region and city only."""

    def __init__(self, client: GeocodingClient, cache: GeoCache | None = None, retries: int = 3,
                 backoff: float = 0.5, sleep: Callable[[float], None] = time.sleep):
        self.client = client
        self.cache = cache if cache is not None else GeoCache()
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep

    def _query(self, *args) -> Optional[Hit]:
        for attempt in range(self.retries):
            try:
                return self.client.search(*args)
            except ServiceUnavailable:
                if attempt == self.retries - 1:
                    raise
                self.sleep(self.backoff * 2 ** attempt)
        return None

    @staticmethod
    def queries(address: Address) -> List[tuple]:
        a = address
        steps = []
        if a.street and a.house:
            steps.append((a.region, a.city, a.street, a.house))
        if a.street:
            steps.append((a.region, a.city, a.street, None))
        steps.append((a.region, a.city, None, None))
        return steps

    def geocode(self, address: Address, diagnostics: Diagnostics | None = None) -> GeoLocation:
        key = normalize_address(address)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if not is_geocodable(address):
            return GeoLocation()
        for args in self.queries(address):
            try:
                result = self._query(*args)
            except ServiceUnavailable as exc:
                sink(diagnostics).error("SERVICE_UNAVAILABLE", f"{key}: {exc}")
                return GeoLocation()
            except MalformedResponse as exc:
                sink(diagnostics).error("MALFORMED_RESPONSE", f"{key}: {exc}")
                return GeoLocation()
            if result is not None:
                loc = GeoLocation(result.lon, result.lat, result.address_rank)
                self.cache.put(key, loc)
                return loc
        loc = GeoLocation()
        self.cache.put(key, loc)
        return loc

    def geocode_many(self, addresses: Iterable[Address], max_in_flight: int = 1,
                     diagnostics: Diagnostics | None = None) -> Dict[str, GeoLocation]:
        """Geocode unique addresses; returns locations keyed by normalized address."""
        unique: Dict[str, Address] = {}
        for a in addresses:
            unique.setdefault(normalize_address(a), a)
        keys = sorted(unique)
        per_key: Dict[str, Diagnostics] = {k: Diagnostics() for k in keys}

        def run(k):
            return self.geocode(unique[k], per_key[k])

        if max_in_flight <= 1:
            results = [run(k) for k in keys]
        else:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                results = list(pool.map(run, keys))
        if diagnostics is not None:
            for k in keys:
                diagnostics.extend(per_key[k])
        return dict(zip(keys, results))


@dataclass(frozen=True)
class EqualAreaGrid:
    """Lambert azimuthal equal-area projection on the authalic sphere, cells in km.

    Cell ``(0, 0)`` has its lower-left corner at the projection centre.
    """

    lon0: float = 100.0
    lat0: float = 60.0
    radius_km: float = 6371.0072

    def project(self, lon: float, lat: float) -> Tuple[float, float]:
        lam, phi = math.radians(lon - self.lon0), math.radians(lat)
        phi1 = math.radians(self.lat0)
        denom = 1 + math.sin(phi1) * math.sin(phi) + math.cos(phi1) * math.cos(phi) * math.cos(lam)
        if denom <= 0:
            raise ValueError("point antipodal to the projection centre")
        k = math.sqrt(2 / denom)
        x = self.radius_km * k * math.cos(phi) * math.sin(lam)
        y = self.radius_km * k * (math.cos(phi1) * math.sin(phi) - math.sin(phi1) * math.cos(phi) * math.cos(lam))
        return x, y

    def cell(self, lon: float, lat: float, cell_size_km: float) -> Tuple[int, int]:
        x, y = self.project(lon, lat)
        return math.floor(x / cell_size_km), math.floor(y / cell_size_km)


@dataclass(frozen=True)
class GridCell:
    cell_x: int
    cell_y: int
    cell_size: float
    value: int


GRIDDED = (Quality.HOUSE, Quality.STREET)


def grid_aggregate(rows: Iterable[PanelRow], year: int, cell_size_km: float = 1.0,
                   materials_line: str = DEFAULT_MATERIALS_LINE,
                   grid: EqualAreaGrid = EqualAreaGrid()) -> List[GridCell]:
    """Sum positive firm value added into grid cells.

    Only house- or street-level locations contribute; cells summing to zero
    are omitted.
    """
    totals: Dict[Tuple[int, int], int] = {}
    for r in rows:
        if r.firm.year != year or r.statement is None or r.geo is None:
            continue
        if r.geo.quality not in GRIDDED:
            continue
        va = value_added(r.statement.lines, materials_line)
        if va is None or va <= 0:
            continue
        key = grid.cell(r.geo.lon, r.geo.lat, cell_size_km)
        totals[key] = totals.get(key, 0) + va
    return [GridCell(x, y, cell_size_km, v) for (x, y), v in sorted(totals.items()) if v]


def write_grid(path: str | Path, cells: Iterable[GridCell]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_x", "cell_y", "cell_size_km", "value"])
        for c in cells:
            w.writerow([c.cell_x, c.cell_y, c.cell_size, c.value])


QUALITY_TIERS = ("house_street", "city", "none")


def quality_report(rows: Iterable[PanelRow]) -> List[Tuple[int, Optional[float], Optional[float], Optional[float]]]:
    """Revenue-weighted share of firms per geocoding tier, per year."""
    per: Dict[int, List[int]] = {}
    for r in rows:
        if r.anomalous:
            continue
        revenue = r.line("2110")
        c = per.setdefault(r.firm.year, [0, 0, 0])
        if revenue is None or revenue <= 0:
            continue
        q = r.geo.quality if r.geo is not None else Quality.NONE
        c[0 if q in GRIDDED else 1 if q is Quality.CITY else 2] += revenue
    out = []
    for year, c in sorted(per.items()):
        total = sum(c)
        out.append((year, *((x / total) if total else None for x in c)))
    return out


GEO_FIELDS = ("inn", "year", "lon", "lat", "address_rank", "quality")


def write_geolocations(path: str | Path, geo: Dict[Tuple[str, int], GeoLocation]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GEO_FIELDS)
        for (inn, year), g in sorted(geo.items()):
            w.writerow([inn, year, _fmt(g.lon), _fmt(g.lat),
                        "" if g.address_rank is None else g.address_rank, g.quality.value])


def read_geolocations(path: str | Path) -> Dict[Tuple[str, int], GeoLocation]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            out[(r["inn"], int(r["year"]))] = GeoLocation(
                float(r["lon"]) if r["lon"] else None,
                float(r["lat"]) if r["lat"] else None,
                int(r["address_rank"]) if r["address_rank"] else None,
            )
    return out
