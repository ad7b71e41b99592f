"""Machine-readable issue reports shared by every stage."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

logger = logging.getLogger("firmpanel")

FIELDS = ("severity", "inn", "year", "code", "message")


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    message: str
    inn: Optional[str] = None
    year: Optional[int] = None

    def as_row(self) -> list:
        return [self.severity, self.inn or "", "" if self.year is None else self.year,
                self.code, self.message]


class Diagnostics(List[Diagnostic]):
    """A list of :class:`Diagnostic` with shorthand emitters."""

    def warn(self, code: str, message: str, inn: str | None = None, year: int | None = None):
        self.append(Diagnostic("warning", code, message, inn, year))
        logger.debug("%s %s/%s: %s", code, inn, year, message)

    def error(self, code: str, message: str, inn: str | None = None, year: int | None = None):
        self.append(Diagnostic("error", code, message, inn, year))
        logger.debug("%s %s/%s: %s", code, inn, year, message)

    def codes(self) -> list[str]:
        return [d.code for d in self]


def sink(diagnostics: Diagnostics | None) -> Diagnostics:
    return Diagnostics() if diagnostics is None else diagnostics


def write_diagnostics(path: str | Path, diagnostics: Iterable[Diagnostic]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for d in diagnostics:
            w.writerow(d.as_row())
