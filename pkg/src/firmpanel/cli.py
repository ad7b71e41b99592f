"""Command-line entry point: one subcommand per pipeline stage plus ``run-all``.

Configuration is an INI file with a ``[pipeline]`` section; relative paths
are resolved against the file's directory. Flags override file values.

Exit codes: 0 success, 2 CONFIG_INVALID, 3 MISSING_INPUT, 4 STAGE_FAILED.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import anomaly, articulate, eligibility, geocode, impute, panel, registry, statements
from .diagnostics import Diagnostics, write_diagnostics
from .model import FIRST_YEAR, LAST_YEAR, GeoLocation

log = logging.getLogger("firmpanel")

EXIT_CONFIG_INVALID = 2
EXIT_MISSING_INPUT = 3
EXIT_STAGE_FAILED = 4
GEOCODER_ENV = "FIRMPANEL_GEOCODER_URL"


class PipelineError(Exception):
    code = "STAGE_FAILED"
    exit_code = EXIT_STAGE_FAILED


class ConfigInvalid(PipelineError):
    code = "CONFIG_INVALID"
    exit_code = EXIT_CONFIG_INVALID


class MissingInput(PipelineError):
    code = "MISSING_INPUT"
    exit_code = EXIT_MISSING_INPUT


PATH_KEYS = ("okved_correspondence", "okopf_correspondence", "exemptions", "financial_register",
             "exclusions", "gazetteer", "geocache", "national_accounts", "work_dir", "output_dir")
GLOB_KEYS = ("registry", "fns", "rosstat")


@dataclass(frozen=True)
class PipelineConfig:
    registry: Tuple[str, ...] = ()
    fns: Tuple[str, ...] = ()
    rosstat: Tuple[str, ...] = ()
    span: Tuple[int, int] = (FIRST_YEAR, LAST_YEAR)
    okved_correspondence: Optional[Path] = None
    okopf_correspondence: Optional[Path] = None
    exemptions: Optional[Path] = None
    financial_register: Optional[Path] = None
    exclusions: Optional[Path] = None
    geocoder_url: Optional[str] = None
    gazetteer: Optional[Path] = None
    geocache: Optional[Path] = None
    max_in_flight: int = 4
    cell_size_km: float = 1.0
    materials_line: str = "4121"
    national_accounts: Optional[Path] = None
    workers: int = 1
    export_format: str = "parquet"
    work_dir: Path = Path("work")
    output_dir: Path = Path("output")

    def __post_init__(self):
        lo, hi = self.span
        if not FIRST_YEAR <= lo <= hi <= LAST_YEAR:
            raise ConfigInvalid(f"span {lo}-{hi} outside {FIRST_YEAR}-{LAST_YEAR}")
        if self.workers < 1:
            raise ConfigInvalid("workers must be >= 1")
        if self.max_in_flight < 1:
            raise ConfigInvalid("max_in_flight must be >= 1")
        if self.cell_size_km <= 0:
            raise ConfigInvalid("cell_size_km must be positive")
        if self.materials_line not in ("4121", "2120"):
            raise ConfigInvalid("materials_line must be 4121 or 2120")
        if self.export_format not in ("parquet", "csv"):
            raise ConfigInvalid("export_format must be parquet or csv")

    @property
    def years(self) -> range:
        return range(self.span[0], self.span[1] + 1)

    def work(self, name: str) -> Path:
        return self.work_dir / name

    def require(self, key: str) -> Path:
        value = getattr(self, key)
        if value is None:
            raise ConfigInvalid(f"{key} is not configured")
        if not Path(value).exists():
            raise MissingInput(f"{key}: {value} does not exist")
        return Path(value)


def _parse_span(text: str) -> Tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.replace(":", "-").split("-"))
    except ValueError:
        raise ConfigInvalid(f"span must look like 2011-2023, got {text!r}") from None
    return lo, hi


def _coerce(key: str, value: str, base: Path):
    if key in GLOB_KEYS:
        parts = [p.strip() for p in value.replace("\n", ",").split(",") if p.strip()]
        return tuple(str(base / p) for p in parts)
    if key in PATH_KEYS:
        return base / value if value else None
    if key == "span":
        return _parse_span(value)
    try:
        if key in ("workers", "max_in_flight"):
            return int(value)
        if key == "cell_size_km":
            return float(value)
    except ValueError:
        raise ConfigInvalid(f"{key}: bad number {value!r}") from None
    if key == "geocoder_url":
        return value or None
    return value


def load_config(path: str | Path | None = None, overrides: Dict[str, str] | None = None) -> PipelineConfig:
    """Read the ``[pipeline]`` section and apply ``key=value`` overrides."""
    known = {f.name for f in fields(PipelineConfig)}
    values: Dict[str, object] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigInvalid(f"config file {path} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigInvalid(str(exc)) from None
        if "pipeline" not in parser:
            raise ConfigInvalid(f"{path} has no [pipeline] section")
        for key, raw in parser["pipeline"].items():
            if key not in known:
                raise ConfigInvalid(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, path.parent)
    if "geocoder_url" not in values and os.environ.get(GEOCODER_ENV):
        values["geocoder_url"] = os.environ[GEOCODER_ENV]
    for key, raw in (overrides or {}).items():
        if key not in known:
            raise ConfigInvalid(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, Path.cwd())
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from None


def _expand(patterns: Sequence[str]) -> List[Path]:
    return sorted({Path(p) for pat in patterns for p in glob.glob(pat)})


# -- stages -----------------------------------------------------------------

def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingInput(f"{path} does not exist; run the earlier stage first")
    return path


def _stamp(path: Path) -> Tuple[int, int]:
    st = path.stat()
    return st.st_mtime_ns, st.st_size


class Artifacts:
    """In-process memo of intermediate files.

    An entry is served only while the file on disk still carries the stamp
    it had when the entry was stored, so a stage always sees what a fresh
    read would give.
    """

    def __init__(self):
        self._items: Dict[Path, Tuple[Tuple[int, int], object]] = {}

    def load(self, path: Path, reader: Callable[[Path], object]):
        path = _need(Path(path))
        hit = self._items.get(path)
        if hit is not None and hit[0] == _stamp(path):
            return hit[1]
        obj = reader(path)
        self._items[path] = (_stamp(path), obj)
        return obj

    def save(self, path: Path, writer: Callable[[Path, object], None], payload, cached) -> None:
        path = Path(path)
        writer(path, payload)
        self._items[path] = (_stamp(path), cached)

    def retain(self, names: Sequence[str]) -> None:
        keep = set(names)
        for path in [p for p in self._items if p.name not in keep]:
            del self._items[path]


ARTIFACTS = Artifacts()


def stage_build_universe(cfg: PipelineConfig, diag: Diagnostics) -> None:
    files = _expand(cfg.registry)
    if not files:
        raise MissingInput("no registry snapshot matches the configured pattern")
    snapshots = [registry.parse_snapshot(p, diagnostics=diag) for p in files]
    try:
        universe = registry.build_universe(snapshots, cfg.span)
    except registry.EmptyInputError as exc:
        raise MissingInput(str(exc)) from None
    paths = {"okved": cfg.okved_correspondence, "okopf": cfg.okopf_correspondence}
    for k, p in paths.items():
        if p is not None and not Path(p).exists():
            raise MissingInput(f"{k} correspondence {p} does not exist")
    corr = registry.Correspondence.load(**paths)
    universe = [registry.harmonize_codes(r, corr, diag) for r in universe]
    universe = registry.impute_missing_codes(universe)
    ARTIFACTS.save(cfg.work("universe.csv"), registry.write_universe, universe, universe)


def stage_classify(cfg: PipelineConfig, diag: Diagnostics) -> None:
    exemptions = eligibility.ExemptionSets.load(cfg.require("exemptions"))
    register = eligibility.FinancialRegister.load(cfg.require("financial_register"))
    universe = ARTIFACTS.load(cfg.work("universe.csv"), registry.read_universe)
    table, _ = eligibility.eligibility_table(universe, register, exemptions, diag)
    ARTIFACTS.save(cfg.work("eligibility.csv"), eligibility.write_eligibility, table, table)
    panel.write_report(cfg.work("eligibility_counts.csv"), ("year", "eligible", "ineligible"),
                       eligibility.partition_counts(table))


def stage_ingest(cfg: PipelineConfig, diag: Diagnostics) -> None:
    fns_files = _expand(cfg.fns)
    rosstat_files = _expand(cfg.rosstat)
    if not fns_files and not rosstat_files:
        raise MissingInput("no statement file matches the configured patterns")
    filings = statements.ingest(fns_files, rosstat_files, cfg.workers, diag)
    ARTIFACTS.save(cfg.work("filings.jsonl"), statements.write_filings, filings.values(), filings)
    harmonized = []
    for f in filings.values():
        try:
            harmonized.append(statements.harmonize(f))
        except ValueError as exc:
            diag.error("HARMONIZE_FAILED", str(exc), f.inn, f.year)
    ARTIFACTS.save(cfg.work("statements_filed.jsonl"), statements.write_statements, harmonized,
                   {s.key: s for s in harmonized})


def stage_impute(cfg: PipelineConfig, diag: Diagnostics) -> None:
    filed = ARTIFACTS.load(cfg.work("statements_filed.jsonl"), statements.read_statements)
    filings = ARTIFACTS.load(cfg.work("filings.jsonl"), statements.read_filings)
    universe = ARTIFACTS.load(cfg.work("universe.csv"), registry.read_universe)
    out, report = impute.impute_pass(filed, filings, universe)
    ARTIFACTS.save(cfg.work("statements.jsonl"), statements.write_statements, out.values(), out)
    impute.write_report(cfg.work("imputation_report.csv"), report)


def stage_articulate(cfg: PipelineConfig, diag: Diagnostics) -> None:
    stmts = ARTIFACTS.load(cfg.work("statements.jsonl"), statements.read_statements)
    out, rows = articulate.articulate_all(list(stmts.values()), cfg.workers)
    ARTIFACTS.save(cfg.work("statements_articulated.jsonl"), statements.write_statements, out,
                   {s.key: s for s in out})
    articulate.write_discrepancies(cfg.work("discrepancies.csv"), rows)


def _rows(cfg: PipelineConfig, diag: Diagnostics, with_geo: bool, with_anomalies: bool):
    universe = ARTIFACTS.load(cfg.work("universe.csv"), registry.read_universe)
    table = ARTIFACTS.load(cfg.work("eligibility.csv"), eligibility.read_eligibility)
    stmts = ARTIFACTS.load(cfg.work("statements_articulated.jsonl"), statements.read_statements)
    geo = {}
    if with_geo and cfg.work("geolocations.csv").exists():
        geo = ARTIFACTS.load(cfg.work("geolocations.csv"), geocode.read_geolocations)
    flagged = ARTIFACTS.load(cfg.work("anomalies.csv"), panel.read_anomalies) if with_anomalies else ()
    return panel.assemble(universe, table, stmts, geo, flagged, diag)


def stage_flag_anomalies(cfg: PipelineConfig, diag: Diagnostics) -> None:
    rows = _rows(cfg, Diagnostics(), with_geo=False, with_anomalies=False)
    anomaly.write_queue(cfg.work("review_queue.csv"), anomaly.review_queue(rows))
    exclusions = anomaly.read_exclusions(cfg.require("exclusions")) if cfg.exclusions else []
    flagged = anomaly.apply_exclusions(rows, exclusions, diag)
    ARTIFACTS.save(cfg.work("anomalies.csv"), panel.write_anomalies, flagged,
                   {r.key for r in flagged if r.anomalous})


def _geocoder(cfg: PipelineConfig) -> Optional[geocode.Geocoder]:
    cache = geocode.GeoCache.load(cfg.geocache) if cfg.geocache else geocode.GeoCache()
    if cfg.geocoder_url:
        return geocode.Geocoder(geocode.NominatimClient(cfg.geocoder_url), cache)
    if cfg.gazetteer:
        return geocode.Geocoder(geocode.GazetteerClient.load(cfg.require("gazetteer")), cache)
    return None


def stage_geocode(cfg: PipelineConfig, diag: Diagnostics, required: bool = True) -> None:
    universe = ARTIFACTS.load(cfg.work("universe.csv"), registry.read_universe)
    coder = _geocoder(cfg)
    if coder is None:
        if required:
            raise ConfigInvalid("neither geocoder_url nor gazetteer is configured")
        log.info("no geocoder configured; every firm is left without a location")
        found: Dict[str, GeoLocation] = {}
    else:
        found = coder.geocode_many([r.address for r in universe], cfg.max_in_flight, diag)
        if cfg.geocache:
            coder.cache.save(cfg.geocache)
    geo = {r.key: found.get(geocode.normalize_address(r.address), GeoLocation()) for r in universe}
    ARTIFACTS.save(cfg.work("geolocations.csv"), geocode.write_geolocations, geo, geo)


def stage_assemble(cfg: PipelineConfig, diag: Diagnostics) -> None:
    rows = _rows(cfg, diag, with_geo=True, with_anomalies=True)
    panel.export(rows, cfg.output_dir / "panel", cfg.years, cfg.export_format)


def stage_report(cfg: PipelineConfig, diag: Diagnostics) -> None:
    rows = _rows(cfg, Diagnostics(), with_geo=True, with_anomalies=True)
    out = cfg.output_dir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    panel.write_filing_rates(out / "filing_rates.csv", panel.filing_rate_report(rows))
    panel.write_filing_rates(out / "filing_rates_by_region.csv", panel.filing_rate_report(rows, by_region=True))
    panel.write_articulation(out / "articulation.csv", panel.articulation_report(rows))
    if cfg.national_accounts is not None:
        external = panel.read_external(cfg.require("national_accounts"))
        panel.write_aggregate_ratios(out / "aggregate_ratios.csv",
                                     panel.aggregate_ratio_report(rows, external, cfg.materials_line, diag))
    panel.write_report(out / "geocoding_quality.csv", ("year", "house_street", "city", "none"),
                       geocode.quality_report(rows))
    clean = [r for r in rows if not r.anomalous]
    for year in cfg.years:
        cells = geocode.grid_aggregate(clean, year, cfg.cell_size_km, cfg.materials_line)
        geocode.write_grid(out / f"grid_{year}.csv", cells)


@dataclass(frozen=True)
class Stage:
    name: str
    run: Callable[[PipelineConfig, Diagnostics], None]
    reads: Tuple[str, ...]
    writes: Tuple[str, ...]


STAGES = (
    Stage("build-universe", stage_build_universe, ("registry snapshots", "correspondence tables"),
          ("universe.csv",)),
    Stage("classify", stage_classify, ("universe.csv", "exemptions", "financial_register"),
          ("eligibility.csv", "eligibility_counts.csv")),
    Stage("ingest", stage_ingest, ("fns", "rosstat"), ("filings.jsonl", "statements_filed.jsonl")),
    Stage("impute", stage_impute, ("statements_filed.jsonl", "filings.jsonl", "universe.csv"),
          ("statements.jsonl", "imputation_report.csv")),
    Stage("articulate", stage_articulate, ("statements.jsonl",),
          ("statements_articulated.jsonl", "discrepancies.csv")),
    Stage("flag-anomalies", stage_flag_anomalies,
          ("universe.csv", "eligibility.csv", "statements_articulated.jsonl", "exclusions"),
          ("review_queue.csv", "anomalies.csv")),
    Stage("geocode", stage_geocode, ("universe.csv", "geocoder_url or gazetteer"), ("geolocations.csv",)),
    Stage("assemble", stage_assemble,
          ("universe.csv", "eligibility.csv", "statements_articulated.jsonl", "geolocations.csv",
           "anomalies.csv"), ("panel/panel_<year>.<format>",)),
    Stage("report", stage_report,
          ("universe.csv", "eligibility.csv", "statements_articulated.jsonl", "geolocations.csv",
           "anomalies.csv", "national_accounts"), ("reports/*.csv",)),
)
STAGE_BY_NAME = {s.name: s for s in STAGES}


def run_stage(stage: Stage, cfg: PipelineConfig, required: bool = True) -> Diagnostics:
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    diag = Diagnostics()
    log.info("stage %s", stage.name)
    try:
        if stage.name == "geocode":
            stage_geocode(cfg, diag, required)
        else:
            stage.run(cfg, diag)
    except PipelineError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise PipelineError(f"{stage.name}: {type(exc).__name__}: {exc}") from exc
    finally:
        write_diagnostics(cfg.work(f"diagnostics_{stage.name}.csv"), diag)
    return diag


def run_all(cfg: PipelineConfig) -> Dict[str, float]:
    """Run every stage in order; returns wall-clock seconds per stage."""
    timings: Dict[str, float] = {}
    try:
        for i, stage in enumerate(STAGES):
            t0 = time.perf_counter()
            run_stage(stage, cfg, required=False)
            ARTIFACTS.retain([name for later in STAGES[i + 1:] for name in later.reads])
            timings[stage.name] = time.perf_counter() - t0
            log.info("stage %s done in %.1fs", stage.name, timings[stage.name])
    finally:
        ARTIFACTS.retain(())
    return timings


def print_plan(stages: Sequence[Stage], cfg: PipelineConfig, out=None) -> None:
    out = out or sys.stdout
    print(f"work_dir={cfg.work_dir} output_dir={cfg.output_dir} span={cfg.span[0]}-{cfg.span[1]} "
          f"workers={cfg.workers}", file=out)
    for i, s in enumerate(stages, 1):
        print(f"{i}. {s.name}: reads {', '.join(s.reads)}; writes {', '.join(s.writes)}", file=out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="firmpanel", description="Build the firm-year financial statements panel.")
    p.add_argument("command", choices=[s.name for s in STAGES] + ["run-all"])
    p.add_argument("-c", "--config", help="INI file with a [pipeline] section")
    p.add_argument("--workers", help="worker processes")
    p.add_argument("--span", help="first-last year, e.g. 2011-2023")
    p.add_argument("--work-dir")
    p.add_argument("--output-dir")
    p.add_argument("--geocoder-url", help=f"Nominatim-style base URL (default: ${GEOCODER_ENV})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("--dry-run", action="store_true", help="print the stage plan and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"CONFIG_INVALID: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG_INVALID
        overrides[key.strip()] = value.strip()
    for key in ("workers", "span", "work_dir", "output_dir", "geocoder_url"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    try:
        cfg = load_config(args.config, overrides)
        stages = STAGES if args.command == "run-all" else (STAGE_BY_NAME[args.command],)
        if args.dry_run:
            print_plan(stages, cfg)
            return 0
        if args.command == "run-all":
            run_all(cfg)
        else:
            run_stage(stages[0], cfg)
    except PipelineError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
