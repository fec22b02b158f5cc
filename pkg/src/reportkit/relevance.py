"""Session relevance statistics.

Each monitored session gets three percentages summing to 100: the share
of reported information judged fully relevant (crr), partially relevant
(prr), and irrelevant (cir). This module validates rating rows, computes
exact means with rational arithmetic (no incremental rounding), and the
headline efficiency figure: mean crr + mean prr.

Ratings CSV header is exactly ``session_id,crr,prr,cir``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction
from typing import Iterable, Union

SUM_TOLERANCE = Fraction(1, 10)  # rows must sum to 100 within 0.1

Rational = Union[int, float, str, Fraction]


class RatingError(ValueError):
    pass


class RangeError(RatingError):
    def __init__(self, field: str, value):
        self.field = field
        super().__init__(f"{field}: {value} outside [0, 100]")


class SumError(RatingError):
    def __init__(self, actual_sum: Fraction):
        self.actual_sum = actual_sum
        super().__init__(f"rating percentages sum to {float(actual_sum):g}, not 100")


class EmptyInput(RatingError):
    pass


def _to_fraction(value: Rational, field: str) -> Fraction:
    try:
        if isinstance(value, float):
            # keep the decimal the user wrote, not the binary float expansion
            return Fraction(str(value))
        return Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise RatingError(f"{field}: {value!r} is not a number")


@dataclass(frozen=True)
class SessionRating:
    """One session's relevance percentages."""
    session_id: int
    crr_pct: Fraction
    prr_pct: Fraction
    cir_pct: Fraction

    @classmethod
    def make(cls, session_id: int, crr: Rational, prr: Rational,
             cir: Rational) -> "SessionRating":
        return cls(session_id, _to_fraction(crr, "crr"), _to_fraction(prr, "prr"),
                   _to_fraction(cir, "cir"))


@dataclass(frozen=True)
class RelevanceMeans:
    """Exact column means and the efficiency figure (mean crr + mean prr)."""
    sessions: int
    mean_crr: Fraction
    mean_prr: Fraction
    mean_cir: Fraction

    @property
    def efficiency(self) -> Fraction:
        return self.mean_crr + self.mean_prr


def validate_rating(r: SessionRating) -> None:
    """Raises RangeError or SumError unless ranges and the 100-sum hold."""
    if r.session_id < 1:
        raise RatingError(f"session_id: {r.session_id} must be >= 1")
    for field in ("crr", "prr", "cir"):
        value = getattr(r, f"{field}_pct")
        if not 0 <= value <= 100:
            raise RangeError(field, float(value))
    total = r.crr_pct + r.prr_pct + r.cir_pct
    if abs(total - 100) > SUM_TOLERANCE:
        raise SumError(total)


def mean_relevance(ratings: Iterable[SessionRating]) -> RelevanceMeans:
    """Exact arithmetic means: sum the columns, divide once."""
    rows = list(ratings)
    if not rows:
        raise EmptyInput("need at least one rating")
    for r in rows:
        validate_rating(r)
    n = len(rows)
    return RelevanceMeans(
        sessions=n,
        mean_crr=sum(r.crr_pct for r in rows) / n,
        mean_prr=sum(r.prr_pct for r in rows) / n,
        mean_cir=sum(r.cir_pct for r in rows) / n,
    )


def efficiency(ratings: Iterable[SessionRating]) -> Fraction:
    return mean_relevance(ratings).efficiency


def display(value: Fraction, places: int = 2) -> str:
    """Half-up rounding applied only at display time."""
    quantum = Decimal(1).scaleb(-places)
    as_decimal = Decimal(value.numerator) / Decimal(value.denominator)
    return str(as_decimal.quantize(quantum, rounding=ROUND_HALF_UP))


CSV_HEADER = ["session_id", "crr", "prr", "cir"]


def load_ratings_csv(path) -> list[SessionRating]:
    """Read a ratings CSV (header exactly session_id,crr,prr,cir)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RatingError("ratings file is empty")
        if [h.strip() for h in header] != CSV_HEADER:
            raise RatingError(
                f"header must be exactly {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
        rows = []
        for line_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise RatingError(f"line {line_number}: expected 4 columns")
            try:
                session_id = int(row[0])
            except ValueError:
                raise RatingError(f"line {line_number}: bad session_id {row[0]!r}")
            rows.append(SessionRating.make(session_id, row[1].strip(),
                                           row[2].strip(), row[3].strip()))
    return rows
