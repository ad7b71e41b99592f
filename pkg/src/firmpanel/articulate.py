"""Totals repair and articulation checks against the official equation suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .model import ZERO_IS_MISSING_UNTIL, Form, HarmonizedStatement, Lines, x_line_for
from .parallel import chunked, pmap

THRESHOLD = 4  # thousands of rubles


@dataclass(frozen=True)
class Equation:
    id: str
    form_scope: Form
    total: str
    terms: Tuple[Tuple[int, str], ...]
    includes_optional: bool = False
    # terms plus the x-suffix line when it is included
    summands: Tuple[Tuple[int, str], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        extra = ((1, x_line_for(self.total)),) if self.includes_optional else ()
        object.__setattr__(self, "summands", self.terms + extra)

    @property
    def is_identity(self) -> bool:
        """``total = other_total`` cross-checks cannot be repaired by summation."""
        return len(self.terms) == 1 and not self.includes_optional

    def __str__(self) -> str:
        rhs = " ".join(f"{'+' if s > 0 else '-'} {c}" for s, c in self.terms).lstrip("+ ")
        if self.includes_optional:
            rhs += " + optional"
        return f"{self.total} = {rhs}"


def parse_equations(text: str) -> List[Equation]:
    """Parse the equation data format (see ``data/equations.txt``)."""
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        eq_id, scope, total, eq, *rhs = line.split()
        if eq != "=" or not rhs:
            raise ValueError(f"bad equation line: {raw!r}")
        tokens = ["+"] + rhs
        terms, optional = [], False
        for sign_tok, code in zip(tokens[::2], tokens[1::2]):
            if sign_tok not in "+-":
                raise ValueError(f"bad sign in: {raw!r}")
            if code == "optional":
                optional = True
                continue
            terms.append((1 if sign_tok == "+" else -1, code))
        out.append(Equation(eq_id, Form(scope), total, tuple(terms), optional))
    return out


def equation_file() -> Path:
    return Path(str(resources.files("firmpanel") / "data" / "equations.txt"))


@lru_cache(maxsize=None)
def equation_registry() -> Tuple[Equation, ...]:
    return tuple(parse_equations(equation_file().read_text(encoding="utf-8")))


@lru_cache(maxsize=None)
def equations_for(form: Form) -> Tuple[Equation, ...]:
    return tuple(e for e in equation_registry() if e.form_scope is form)


@lru_cache(maxsize=None)
def repair_order(form: Form) -> Tuple[Equation, ...]:
    """Summation equations of a form, each after the equations producing its terms."""
    eqs = [e for e in equations_for(form) if not e.is_identity]
    producer = {e.total: e for e in eqs}
    done, order = set(), []

    def visit(e: Equation, stack=()):
        if e.id in done:
            return
        if e.id in stack:
            raise ValueError(f"cyclic equations at {e.id}")
        for _, code in e.terms:
            if code in producer:
                visit(producer[code], stack + (e.id,))
        done.add(e.id)
        order.append(e)

    for e in eqs:
        visit(e)
    return tuple(order)


@lru_cache(maxsize=None)
def simplified_form_lines() -> frozenset:
    codes = set()
    for e in equations_for(Form.SIMPLIFIED):
        codes.add(e.total)
        codes.update(c for _, c in e.terms)
    return frozenset(codes)


def compute_total(lines: Lines, equation: Equation) -> Optional[int]:
    """Signed sum of the present terms; ``None`` when every term is missing."""
    total, present = 0, False
    get = lines.get
    for sign, code in equation.summands:
        v = get(code)
        if v is not None:
            total += v if sign > 0 else -v
            present = True
    return total if present else None


def _repair(lines: Lines, form: Form, zero_is_missing: bool = False) -> Tuple[Lines, bool]:
    lines = dict(lines)
    adjusted = False
    for eq in repair_order(form):
        computed = compute_total(lines, eq)
        if computed is None:
            continue
        stated = lines.get(eq.total)
        if zero_is_missing and computed == 0:
            # a zero total cannot be told apart from a missing one in these years
            if stated is not None and abs(stated) > THRESHOLD:
                del lines[eq.total]
                adjusted = True
            continue
        if stated is None or abs(stated - computed) > THRESHOLD:
            lines[eq.total] = computed
            adjusted = True
    if form is Form.SIMPLIFIED:
        # totals that exist only on the full form are added, not counted as repairs
        in_form = simplified_form_lines()
        for eq in repair_order(Form.FULL):
            if eq.total in in_form or eq.total in lines:
                continue
            computed = compute_total(lines, eq)
            if computed is not None and not (zero_is_missing and computed == 0):
                lines[eq.total] = computed
    return lines, adjusted


def adjust_totals(statement: HarmonizedStatement) -> HarmonizedStatement:
    """Replace totals that are absent or off by more than the threshold."""
    lines, adjusted = _repair(statement.lines, statement.form, statement.year <= ZERO_IS_MISSING_UNTIL)
    if lines == statement.lines:
        return statement
    return replace(statement, lines=lines, totals_adjustment=statement.totals_adjustment or adjusted)


@dataclass(frozen=True)
class Discrepancy:
    equation: str
    stated: int
    computed: int

    @property
    def difference(self) -> int:
        return self.stated - self.computed

    @property
    def ok(self) -> bool:
        return abs(self.difference) <= THRESHOLD


@dataclass(frozen=True)
class ArticulationResult:
    articulated: bool
    checked: Tuple[Discrepancy, ...]

    @property
    def failures(self) -> Tuple[Discrepancy, ...]:
        return tuple(d for d in self.checked if not d.ok)


def check_articulation(statement: HarmonizedStatement | Lines, form: Form | None = None) -> ArticulationResult:
    """Evaluate every applicable equation of the statement's form.

    An equation applies when both its stated total and its computed total
    are present. The statement articulates when all applicable equations
    agree within the threshold.
    """
    if isinstance(statement, HarmonizedStatement):
        lines, form = statement.lines, statement.form
    else:
        lines = statement
    checked = []
    for eq in equations_for(form or Form.FULL):
        stated = lines.get(eq.total)
        if stated is None:
            continue
        computed = compute_total(lines, eq)
        if computed is None:
            continue
        checked.append(Discrepancy(eq.id, stated, computed))
    return ArticulationResult(all(d.ok for d in checked), tuple(checked))


def find_failures(lines: Lines, form: Form) -> Tuple[Discrepancy, ...]:
    """Applicable equations that miss by more than the threshold."""
    out = []
    for eq in equations_for(form):
        stated = lines.get(eq.total)
        if stated is None:
            continue
        computed = compute_total(lines, eq)
        if computed is not None and abs(stated - computed) > THRESHOLD:
            out.append(Discrepancy(eq.id, stated, computed))
    return tuple(out)


def articulate(statement: HarmonizedStatement) -> Tuple[HarmonizedStatement, Tuple[Discrepancy, ...]]:
    """Check, repair, re-check.

    The ``articulated`` flag keeps the pre-repair verdict. Returns the
    updated statement and the pre-repair failures.
    """
    before = find_failures(statement.lines, statement.form)
    repaired = adjust_totals(statement)
    after = before if repaired is statement else find_failures(repaired.lines, repaired.form)
    return replace(repaired, articulated=not before, articulated_after_adjustment=not after), before


DISCREPANCY_FIELDS = ("inn", "year", "equation", "stated", "computed", "difference")


def _articulate_chunk(chunk: Sequence[HarmonizedStatement]):
    out, rows = [], []
    for s in chunk:
        fixed, failures = articulate(s)
        out.append(fixed)
        rows.extend((s.inn, s.year, d.equation, d.stated, d.computed, d.difference)
                    for d in failures)
    return out, rows


def articulate_all(statements: Sequence[HarmonizedStatement], workers: int = 1
                   ) -> Tuple[List[HarmonizedStatement], List[tuple]]:
    """Articulate a batch; returns statements and pre-repair failure rows, in input order."""
    out, rows = [], []
    for part, part_rows in pmap(_articulate_chunk, chunked(list(statements), workers * 4), workers):
        out.extend(part)
        rows.extend(part_rows)
    return out, rows


def write_discrepancies(path: str | Path, rows: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DISCREPANCY_FIELDS)
        w.writerows(rows)
