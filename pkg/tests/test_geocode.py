from __future__ import annotations

import math
import random
import threading

import pytest

from firmpanel.diagnostics import Diagnostics
from firmpanel.geocode import (
    EqualAreaGrid,
    GazetteerClient,
    GeoCache,
    Geocoder,
    Hit,
    MalformedResponse,
    NominatimClient,
    ServiceUnavailable,
    grid_aggregate,
    normalize_address,
    parse_hit,
    quality_report,
)
from firmpanel.model import Address, GeoLocation, Quality

from conftest import row


class Scripted:
    """Client answering from a list of per-call outcomes, then a fallback."""

    def __init__(self, outcomes=(), fallback=None):
        self.outcomes = list(outcomes)
        self.fallback = fallback
        self.calls = []
        self.lock = threading.Lock()

    def search(self, region, city, street=None, house=None):
        with self.lock:
            self.calls.append((region, city, street, house))
            out = self.outcomes.pop(0) if self.outcomes else self.fallback
        if isinstance(out, Exception):
            raise out
        return out


def coder(client, **kw):
    kw.setdefault("sleep", lambda s: None)
    return Geocoder(client, **kw)


def test_house_hit(address):
    loc = coder(Scripted(fallback=Hit(55.7, 37.6, 30))).geocode(address)
    assert loc.quality is Quality.HOUSE


def test_street_fallback(address):
    client = Scripted([None], Hit(55.7, 37.6, 27))
    loc = coder(client).geocode(address)
    assert loc.quality is Quality.STREET
    assert client.calls == [("Moskva", "Moskva", "Tverskaya", "7"), ("Moskva", "Moskva", "Tverskaya", None)]


def test_city_fallback(address):
    client = Scripted([None, None], Hit(55.7, 37.6, 16))
    assert coder(client).geocode(address).quality is Quality.CITY
    assert client.calls[-1] == ("Moskva", "Moskva", None, None)


@pytest.mark.parametrize("k", range(6))
def test_cascade_request_count(address, k):
    client = Scripted([None] * k, Hit(1.0, 2.0, 30))
    coder(client).geocode(address)
    assert len(client.calls) == min(k + 1, 3)


@pytest.mark.parametrize("k", range(6))
def test_retry_request_count(address, k):
    client = Scripted([ServiceUnavailable("503")] * k, Hit(1.0, 2.0, 30))
    diag = Diagnostics()
    loc = coder(client).geocode(address, diag)
    assert len(client.calls) == min(k + 1, 3)
    assert (loc.address_rank is None) is (k >= 3)
    assert diag.codes() == (["SERVICE_UNAVAILABLE"] if k >= 3 else [])


def test_backoff_is_exponential(address):
    waits = []
    client = Scripted([ServiceUnavailable("x")] * 2, Hit(1.0, 2.0, 30))
    Geocoder(client, backoff=0.5, sleep=waits.append).geocode(address)
    assert waits == [0.5, 1.0]


def test_unavailable_is_not_cached(address):
    cache = GeoCache()
    coder(Scripted(fallback=ServiceUnavailable("down")), cache=cache).geocode(address)
    assert len(cache) == 0


def test_malformed_response(address):
    diag = Diagnostics()
    loc = coder(Scripted([MalformedResponse("bad")])).geocode(address, diag)
    assert loc == GeoLocation()
    assert diag.codes() == ["MALFORMED_RESPONSE"]


def test_cache_hit_skips_service(address):
    client = Scripted(fallback=Hit(1.0, 2.0, 30))
    g = coder(client)
    g.geocode(address)
    g.geocode(Address("MOSKVA ", "moskva", "Tverskaya", "7"))
    assert len(client.calls) == 1


def test_no_result_is_cached_as_none(address):
    client = Scripted(fallback=None)
    g = coder(client)
    assert g.geocode(address).quality is Quality.NONE
    g.geocode(address)
    assert len(client.calls) == 3


def test_ungeocodable_address_never_queried():
    client = Scripted(fallback=Hit(1.0, 2.0, 30))
    assert coder(client).geocode(Address("Moskva", "", "x", "1")) == GeoLocation()
    assert client.calls == []


def test_cache_file_round_trip(tmp_path):
    cache = GeoCache({"a|b||": GeoLocation(37.5, 55.25, 16), "c|d||": GeoLocation()})
    cache.save(tmp_path / "c.csv")
    again = GeoCache.load(tmp_path / "c.csv")
    assert again.get("a|b||") == GeoLocation(37.5, 55.25, 16)
    assert again.get("c|d||") == GeoLocation()


def test_geocode_many_dedupes_and_is_thread_count_free():
    addrs = [Address("R", f"City{i % 7}", "Main", str(i % 3)) for i in range(40)]

    def answer(region, city, street=None, house=None):
        return Hit(float(len(city)), float(len(street or "")), 30 if house else 20)

    client = Scripted()
    client.search = lambda *a: (client.calls.append(a), answer(*a))[1]
    one = coder(client).geocode_many(addrs, max_in_flight=1)
    n_calls = len(client.calls)
    client.calls.clear()
    many = coder(client).geocode_many(addrs, max_in_flight=8)
    assert one == many
    assert n_calls == len({normalize_address(a) for a in addrs}) == len(one)


def test_gazetteer_exact_match(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("region,city,street,house,lat,lon,rank\nR,C,S,1,55.0,37.0,30\nR,C,,,55.1,37.1,16\n")
    g = coder(GazetteerClient.load(p))
    assert g.geocode(Address("R", "C", "S", "1")).address_rank == 30
    assert g.geocode(Address("r", "c", "Other", "2")).address_rank == 16


class FakeResponse:
    def __init__(self, status, payload):
        self.status_code = status
        self.payload = payload

    def json(self):
        if isinstance(self.payload, Exception):
            raise self.payload
        return self.payload


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.requests = []

    def get(self, url, params=None, timeout=None):
        self.requests.append((url, params))
        return self.response


def test_nominatim_structured_query():
    session = FakeSession(FakeResponse(200, [{"lat": "55.75", "lon": "37.61", "place_rank": 30}]))
    client = NominatimClient("http://geo.local/", session=session)
    assert client.search("Moskva", "Moskva", "Tverskaya", "7") == Hit(55.75, 37.61, 30)
    url, params = session.requests[0]
    assert url == "http://geo.local/search"
    assert params["street"] == "7 Tverskaya"
    assert params["format"] == "jsonv2"


@pytest.mark.parametrize("response,error", [
    (FakeResponse(503, None), ServiceUnavailable),
    (FakeResponse(429, None), ServiceUnavailable),
    (FakeResponse(400, None), MalformedResponse),
    (FakeResponse(200, ValueError("no json")), MalformedResponse),
    (FakeResponse(200, {"lat": 1}), MalformedResponse),
])
def test_nominatim_errors(response, error):
    with pytest.raises(error):
        NominatimClient("http://x", session=FakeSession(response)).search("a", "b")


def test_parse_hit_empty_list():
    assert parse_hit([]) is None


def test_projection_centre_and_area():
    grid = EqualAreaGrid()
    assert grid.project(100.0, 60.0) == pytest.approx((0.0, 0.0), abs=1e-9)
    # a small lon/lat box keeps its spherical area under an equal-area map
    lon, lat, d = 37.0, 55.0, 0.01
    corners = [grid.project(lon, lat), grid.project(lon + d, lat), grid.project(lon + d, lat + d),
               grid.project(lon, lat + d)]
    area = 0.5 * abs(sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(corners, corners[1:] + corners[:1])))
    r = grid.radius_km
    sphere = r * r * math.radians(d) * (math.sin(math.radians(lat + d)) - math.sin(math.radians(lat)))
    assert area == pytest.approx(sphere, rel=1e-4)


def test_two_firms_in_one_cell():
    geo = GeoLocation(37.6173, 55.7558, 30)
    rows = [row("0000000001", lines={"2110": 300, "4121": 200}, geo=geo),
            row("0000000002", lines={"2110": 80, "4121": 30}, geo=geo)]
    [cell] = grid_aggregate(rows, 2020)
    assert cell.value == 150


def test_city_quality_and_missing_materials_excluded():
    rows = [row("0000000001", lines={"2110": 300, "4121": 200}, geo=GeoLocation(37.6, 55.7, 16)),
            row("0000000002", lines={"2110": 300}, geo=GeoLocation(37.6, 55.7, 30))]
    assert grid_aggregate(rows, 2020) == []


def test_grid_conserves_value_added():
    rng = random.Random(11)
    rows = []
    for i in range(300):
        rank = rng.choice([30, 28, 20, None])
        geo = GeoLocation(rng.uniform(30, 140), rng.uniform(42, 70), rank) if rank else GeoLocation()
        rows.append(row(f"{i:010d}", lines={"2110": rng.randint(1, 10 ** 6), "4121": rng.randint(1, 10 ** 6)},
                        geo=geo))
    expected = sum(r.line("2110") - r.line("4121") for r in rows
                   if r.geo.quality in (Quality.HOUSE, Quality.STREET) and r.line("2110") > r.line("4121"))
    for size in (1.0, 10.0, 250.0):
        assert sum(c.value for c in grid_aggregate(rows, 2020, size)) == expected


def test_quality_report_weights():
    rows = [row("0000000001", lines={"2110": 900}, geo=GeoLocation(1.0, 1.0, 30)),
            row("0000000002", lines={"2110": 100}, geo=GeoLocation()),
            row("0000000003", lines={"2110": 0}, geo=GeoLocation(1.0, 1.0, 16))]
    assert quality_report(rows) == [(2020, 0.9, 0.0, 0.1)]


def test_quality_report_all_house():
    rows = [row(f"{i:010d}", lines={"2110": 5}, geo=GeoLocation(1.0, 1.0, 30)) for i in range(3)]
    assert quality_report(rows) == [(2020, 1.0, 0.0, 0.0)]
