"""Photon-counting estimators: heralded p1, heralded autocorrelation, Stokes /
anti-Stokes cross-correlation and the derived two-excitation probability.

Error bars are first-order Poisson propagation on the raw counts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .witness import DomainError, ProjectionPair

CSV_FIELDS = (
    "storage_time_ns",
    "n_trials",
    "n_s",
    "n_s_as1",
    "n_s_as2",
    "n_s_as1_as2",
    "n_as1",
    "n_as2",
)


class InsufficientStatistics(ValueError):
    """A ratio estimator has a zero count in its denominator."""


@dataclass(frozen=True)
class CoincidenceRecord:
    storage_time: float
    n_trials: int
    n_s: int
    n_s_as1: int
    n_s_as2: int
    n_s_as1_as2: int
    n_as1: int
    n_as2: int

    def __post_init__(self):
        for name in CSV_FIELDS[1:]:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_s > self.n_trials:
            raise ValueError("n_s exceeds n_trials")
        if self.n_s_as1_as2 > min(self.n_s_as1, self.n_s_as2):
            raise ValueError("triple coincidences exceed a double-coincidence count")

    def scaled(self, factor: int) -> "CoincidenceRecord":
        counts = {k: getattr(self, k) * factor for k in CSV_FIELDS[1:]}
        return CoincidenceRecord(self.storage_time, **counts)

    def as_row(self):
        return [repr(float(self.storage_time))] + [
            str(int(getattr(self, k))) for k in CSV_FIELDS[1:]
        ]


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    std_err: float
    low_statistics: bool = False
    capped: bool = False

    def __post_init__(self):
        if self.value < 0 or self.std_err < 0:
            raise ValueError("estimate and its error must be non-negative")


@dataclass(frozen=True)
class LossBudget:
    channel_transmission: float = 1.0
    detector_efficiency: float = 1.0

    def __post_init__(self):
        for name in ("channel_transmission", "detector_efficiency"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")

    @property
    def total(self) -> float:
        return self.channel_transmission * self.detector_efficiency


def _rel_poisson(*counts):
    return math.sqrt(sum(1.0 / n for n in counts))


def estimate_p1(rec: CoincidenceRecord) -> CorrelationEstimate:
    """Heralded retrieval probability, both anti-Stokes detectors summed."""
    if rec.n_s == 0:
        raise InsufficientStatistics("no heralds: n_s = 0")
    hits = rec.n_s_as1 + rec.n_s_as2
    return CorrelationEstimate(hits / rec.n_s, math.sqrt(hits) / rec.n_s, hits == 0)


def estimate_g2_conditional(rec: CoincidenceRecord) -> CorrelationEstimate:
    if rec.n_s_as1 == 0 or rec.n_s_as2 == 0:
        raise InsufficientStatistics("heralded autocorrelation needs both detectors")
    value = rec.n_s_as1_as2 * rec.n_s / (rec.n_s_as1 * rec.n_s_as2)
    if rec.n_s_as1_as2 == 0:
        return CorrelationEstimate(0.0, 0.0, low_statistics=True)
    err = value * _rel_poisson(rec.n_s_as1_as2, rec.n_s, rec.n_s_as1, rec.n_s_as2)
    return CorrelationEstimate(value, err)


def estimate_g2_cross(rec: CoincidenceRecord) -> CorrelationEstimate:
    """P(S and AS) / (P(S) P(AS)) with both anti-Stokes arms pooled."""
    n_as = rec.n_as1 + rec.n_as2
    if rec.n_s == 0 or n_as == 0 or rec.n_trials == 0:
        raise InsufficientStatistics("cross-correlation needs heralds and singles")
    n_sas = rec.n_s_as1 + rec.n_s_as2
    value = n_sas * rec.n_trials / (rec.n_s * n_as)
    if n_sas == 0:
        return CorrelationEstimate(0.0, 0.0, low_statistics=True)
    return CorrelationEstimate(value, value * _rel_poisson(n_sas, rec.n_s, n_as))


def correct_losses(p1_raw: CorrelationEstimate, budget: LossBudget) -> CorrelationEstimate:
    """Undo channel and detector loss; values above one are capped and flagged."""
    value = p1_raw.value / budget.total
    err = p1_raw.std_err / budget.total
    if value > 1.0:
        return CorrelationEstimate(1.0, err, p1_raw.low_statistics, capped=True)
    return CorrelationEstimate(value, err, p1_raw.low_statistics, p1_raw.capped)


def to_projection_pair(p1: CorrelationEstimate, g2: CorrelationEstimate) -> ProjectionPair:
    if p1.value <= 0:
        raise DomainError("p1 must be positive to derive p2")
    v1 = p1.value
    p2 = g2.value * v1 * v1 / 2.0
    # d p2 / d g2 = p1^2/2, d p2 / d p1 = g2 p1
    p2_err = math.hypot(v1 * v1 / 2.0 * g2.std_err, g2.value * v1 * p1.std_err)
    return ProjectionPair(v1, min(p2, 1.0), p1.std_err, p2_err)


def summarize(rec: CoincidenceRecord, budget: LossBudget | None = None) -> dict:
    """All estimators for one record, in the JSON output layout."""
    p1 = estimate_p1(rec)
    if budget is not None:
        p1 = correct_losses(p1, budget)
    g2c = estimate_g2_conditional(rec)
    g2x = estimate_g2_cross(rec)
    pair = to_projection_pair(p1, g2c)
    return {
        "storage_time_ns": rec.storage_time,
        "p1": pair.p1,
        "p1_err": pair.p1_err,
        "g2c": g2c.value,
        "g2c_err": g2c.std_err,
        "g2x": g2x.value,
        "g2x_err": g2x.std_err,
        "p2": pair.p2,
        "p2_err": pair.p2_err,
    }


class CsvFormatError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_records(fh) -> list[CoincidenceRecord]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_FIELDS:
        raise CsvFormatError(f"expected header {','.join(CSV_FIELDS)}", 1)
    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_FIELDS):
            raise CsvFormatError(f"expected {len(CSV_FIELDS)} fields", line)
        try:
            t = float(row[0])
            counts = [int(x) for x in row[1:]]
            records.append(CoincidenceRecord(t, *counts))
        except ValueError as exc:
            raise CsvFormatError(str(exc), line) from None
    return records


def write_records(fh, records):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for rec in records:
        w.writerow(rec.as_row())


def dump_summaries(records, budget=None) -> str:
    return json.dumps([summarize(r, budget) for r in records], indent=2)
