"""Incident ledger, remediation metrics and exploit-probability recalibration.

Recalibration is a deterministic exponential blend toward observed incident
shares::

    p'_c = clamp((1 - alpha) * p_c + alpha * count_c / n, 0, 1)

Categories with no incidents in the window decay toward zero.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from cntmf.catalog import ThreatCategory
from cntmf.risk import FALLBACK_PROBABILITY, KEY_COMPROMISE_PROBABILITY, ORACLE_PROBABILITY

LEDGER_SCHEMA_VERSION = 1
PRIORS_SCHEMA_VERSION = 1
DEFAULT_ALPHA = 0.3
MTTR_TARGET = timedelta(hours=24)
# industry average loss per incident, H1 2025
BENCHMARK_MEAN_LOSS_USD = 7_180_000


class IncidentSource(str, Enum):
    BUG_BOUNTY = "BugBounty"
    PEN_TEST = "PenTest"
    INCIDENT_REPORT = "IncidentReport"
    MONITORING_ALERT = "MonitoringAlert"


class IncidentError(ValueError):
    """Base class for records rejected by the ledger."""


class DuplicateIdError(IncidentError):
    pass


class TimestampOrderError(IncidentError):
    pass


class InvalidRecordError(IncidentError):
    pass


@dataclass(frozen=True)
class IncidentRecord:
    id: str
    occurred_at: datetime
    detected_at: datetime
    remediated_at: Optional[datetime]
    category: ThreatCategory
    loss_usd: int
    source: IncidentSource
    note: str = ""

    @property
    def is_open(self) -> bool:
        return self.remediated_at is None

    @property
    def time_to_remediate(self) -> Optional[timedelta]:
        if self.remediated_at is None:
            return None
        return self.remediated_at - self.detected_at


def check_record(record: IncidentRecord) -> None:
    """Raise an IncidentError subclass if ``record`` must not enter a ledger."""
    if not record.id:
        raise InvalidRecordError("incident id must be non-empty")
    if not isinstance(record.category, ThreatCategory):
        raise InvalidRecordError(f"{record.id}: unknown category {record.category!r}")
    if not isinstance(record.source, IncidentSource):
        raise InvalidRecordError(f"{record.id}: unknown source {record.source!r}")
    if isinstance(record.loss_usd, bool) or not isinstance(record.loss_usd, int) or record.loss_usd < 0:
        raise InvalidRecordError(f"{record.id}: loss_usd must be a non-negative integer")
    for name in ("occurred_at", "detected_at", "remediated_at"):
        ts = getattr(record, name)
        if ts is None:
            continue
        if ts.tzinfo is None or ts.utcoffset() != timedelta(0):
            raise InvalidRecordError(f"{record.id}: {name} must be UTC")
        if ts.microsecond:
            raise InvalidRecordError(f"{record.id}: {name} has sub-second precision")
    if record.occurred_at > record.detected_at:
        raise TimestampOrderError(f"{record.id}: occurred_at is after detected_at")
    if record.remediated_at is not None and record.detected_at > record.remediated_at:
        raise TimestampOrderError(f"{record.id}: detected_at is after remediated_at")


@dataclass(frozen=True)
class Ledger:
    records: tuple[IncidentRecord, ...] = ()
    schema_version: int = LEDGER_SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> set[str]:
        return {r.id for r in self.records}


def ingest_incident(ledger: Ledger, record: IncidentRecord) -> Ledger:
    check_record(record)
    if record.id in ledger.ids():
        raise DuplicateIdError(f"incident {record.id!r} already in ledger")
    return replace(ledger, records=ledger.records + (record,))


# --- metrics ----------------------------------------------------------------


def _in_range(ts: datetime, start: Optional[datetime], end: Optional[datetime]) -> bool:
    return (start is None or ts >= start) and (end is None or ts < end)


def mttr(
    ledger: Ledger,
    category: Optional[ThreatCategory] = None,
    start: Optional[datetime] = None,
    end: Optional[datetime] = None,
) -> Optional[timedelta]:
    """Mean detection-to-remediation time over closed incidents detected in [start, end)."""
    durations = [
        r.time_to_remediate
        for r in ledger.records
        if not r.is_open
        and (category is None or r.category is category)
        and _in_range(r.detected_at, start, end)
    ]
    if not durations:
        return None
    return sum(durations, timedelta()) / len(durations)


def meets_mttr_target(duration: Optional[timedelta], target: timedelta = MTTR_TARGET) -> Optional[bool]:
    return None if duration is None else duration < target


_QUARTER_RE = re.compile(r"(\d{4})Q([1-4])\Z")


@dataclass(frozen=True, order=True)
class Quarter:
    year: int
    q: int

    @classmethod
    def parse(cls, text: str) -> "Quarter":
        m = _QUARTER_RE.match(text)
        if not m:
            raise ValueError(f"invalid quarter {text!r}; expected YYYYQn")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def start(self) -> datetime:
        return datetime(self.year, 3 * self.q - 2, 1, tzinfo=timezone.utc)

    @property
    def end(self) -> datetime:
        if self.q == 4:
            return datetime(self.year + 1, 1, 1, tzinfo=timezone.utc)
        return datetime(self.year, 3 * self.q + 1, 1, tzinfo=timezone.utc)

    def __str__(self) -> str:
        return f"{self.year}Q{self.q}"


@dataclass(frozen=True)
class MetricsSnapshot:
    quarter: str
    incident_count: int
    open_count: int
    total_loss_usd: int
    mean_loss_usd: float
    mttr: Optional[timedelta]
    mttr_by_category: dict[str, timedelta] = field(default_factory=dict)
    by_source: dict[str, int] = field(default_factory=dict)

    @property
    def mttr_target_met(self) -> Optional[bool]:
        return meets_mttr_target(self.mttr)

    @property
    def benchmark_comparison(self) -> Optional[str]:
        """Mean loss relative to the H1-2025 industry average, or None for an empty quarter."""
        if self.incident_count == 0:
            return None
        if self.mean_loss_usd > BENCHMARK_MEAN_LOSS_USD:
            return "above"
        if self.mean_loss_usd < BENCHMARK_MEAN_LOSS_USD:
            return "below"
        return "at"


def quarterly_snapshot(ledger: Ledger, quarter: Union[Quarter, str]) -> MetricsSnapshot:
    if isinstance(quarter, str):
        quarter = Quarter.parse(quarter)
    recs = [r for r in ledger.records if _in_range(r.occurred_at, quarter.start, quarter.end)]
    sub = Ledger(tuple(recs))
    total = sum(r.loss_usd for r in recs)
    by_cat: dict[str, timedelta] = {}
    for cat in sorted({r.category for r in recs if not r.is_open}, key=lambda c: c.value):
        by_cat[cat.value] = mttr(sub, cat)
    sources = Counter(r.source for r in recs)
    return MetricsSnapshot(
        quarter=str(quarter),
        incident_count=len(recs),
        open_count=sum(r.is_open for r in recs),
        total_loss_usd=total,
        mean_loss_usd=total / len(recs) if recs else 0.0,
        mttr=mttr(sub),
        mttr_by_category=by_cat,
        by_source={s.value: sources.get(s, 0) for s in IncidentSource},
    )


# --- recalibration ----------------------------------------------------------

ProbabilityPriors = dict[ThreatCategory, float]


def seed_priors() -> ProbabilityPriors:
    """Per-category starting probabilities taken from the scoring defaults."""
    priors = {c: FALLBACK_PROBABILITY for c in ThreatCategory}
    priors[ThreatCategory.REENTRANCY_ORACLE_MANIPULATION] = ORACLE_PROBABILITY
    priors[ThreatCategory.COLLUSION] = KEY_COMPROMISE_PROBABILITY
    return priors


def _frac(x: float) -> Fraction:
    return Fraction(Decimal(repr(float(x))))


def recalibrate(
    ledger: Ledger,
    priors: Mapping[ThreatCategory, float],
    window: tuple[Optional[datetime], Optional[datetime]] = (None, None),
    alpha: float = DEFAULT_ALPHA,
) -> ProbabilityPriors:
    """Blend priors toward the category shares of incidents occurring in ``window``."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha={alpha!r} outside [0, 1]")
    start, end = window
    counts = Counter(r.category for r in ledger.records if _in_range(r.occurred_at, start, end))
    n = sum(counts.values())
    if n == 0:
        return dict(priors)
    a = _frac(alpha)
    out: ProbabilityPriors = {}
    for cat, p in priors.items():
        blended = (1 - a) * _frac(p) + a * Fraction(counts.get(cat, 0), n)
        out[cat] = float(min(max(blended, Fraction(0)), Fraction(1)))
    return out


# --- files ------------------------------------------------------------------


def _parse_ts(value, name: str) -> datetime:
    if not isinstance(value, str):
        raise InvalidRecordError(f"{name} must be an ISO-8601 string")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise InvalidRecordError(f"{name}: invalid timestamp {value!r}") from None
    if ts.tzinfo is None:
        raise InvalidRecordError(f"{name}: timestamp {value!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


_RECORD_FIELDS = {"id", "occurred_at", "detected_at", "remediated_at", "category", "loss_usd", "source", "note"}


def record_from_dict(d) -> IncidentRecord:
    if not isinstance(d, dict):
        raise InvalidRecordError("record must be a JSON object")
    missing = {"id", "occurred_at", "detected_at", "category", "loss_usd", "source"} - d.keys()
    if missing:
        raise InvalidRecordError(f"missing fields: {', '.join(sorted(missing))}")
    extra = d.keys() - _RECORD_FIELDS
    if extra:
        raise InvalidRecordError(f"unknown fields: {', '.join(sorted(extra))}")
    if not isinstance(d["id"], str):
        raise InvalidRecordError("id must be a string")
    try:
        category = ThreatCategory(d["category"])
    except ValueError:
        raise InvalidRecordError(f"unknown category {d['category']!r}") from None
    try:
        source = IncidentSource(d["source"])
    except ValueError:
        raise InvalidRecordError(f"unknown source {d['source']!r}") from None
    rem = d.get("remediated_at")
    record = IncidentRecord(
        id=d["id"],
        occurred_at=_parse_ts(d["occurred_at"], "occurred_at"),
        detected_at=_parse_ts(d["detected_at"], "detected_at"),
        remediated_at=None if rem is None else _parse_ts(rem, "remediated_at"),
        category=category,
        loss_usd=d["loss_usd"],
        source=source,
        note=d.get("note", ""),
    )
    if not isinstance(record.note, str):
        raise InvalidRecordError("note must be a string")
    check_record(record)
    return record


def record_to_dict(r: IncidentRecord) -> dict:
    return {
        "id": r.id,
        "occurred_at": format_ts(r.occurred_at),
        "detected_at": format_ts(r.detected_at),
        "remediated_at": None if r.remediated_at is None else format_ts(r.remediated_at),
        "category": r.category.value,
        "loss_usd": r.loss_usd,
        "source": r.source.value,
        "note": r.note,
    }


def dump_record(r: IncidentRecord) -> str:
    return json.dumps(record_to_dict(r), sort_keys=True, ensure_ascii=False)


class RecordFileError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def read_records(path: Union[str, Path]) -> list[IncidentRecord]:
    """Read a JSON-lines incident file. Blank lines and a ledger header are skipped."""
    return [rec for _, rec in _numbered_records(path)]


def _numbered_records(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordFileError(str(path), lineno, f"invalid JSON: {exc.msg}") from None
        if isinstance(data, dict) and "schema_version" in data and "id" not in data:
            continue  # ledger header
        try:
            out.append((lineno, record_from_dict(data)))
        except IncidentError as exc:
            raise RecordFileError(str(path), lineno, str(exc)) from None
    return out


def load_ledger(path: Union[str, Path]) -> Ledger:
    ledger = Ledger()
    for lineno, rec in _numbered_records(path):
        try:
            ledger = ingest_incident(ledger, rec)
        except IncidentError as exc:
            raise RecordFileError(str(path), lineno, str(exc)) from None
    return ledger


def ledger_header() -> str:
    return json.dumps({"schema_version": LEDGER_SCHEMA_VERSION}, sort_keys=True)


def append_records(path: Union[str, Path], records: Iterable[IncidentRecord]) -> None:
    """Append records to a ledger file, writing the header first for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="utf-8", newline="\n") as fh:
        if new:
            fh.write(ledger_header() + "\n")
        for r in records:
            fh.write(dump_record(r) + "\n")


def load_priors(path: Union[str, Path]) -> ProbabilityPriors:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "priors" in data:
        data = data["priors"]
    if not isinstance(data, dict):
        raise ValueError("priors must be a mapping of category to probability")
    priors = seed_priors()
    for key, value in data.items():
        try:
            cat = ThreatCategory(key)
        except ValueError:
            raise ValueError(f"unknown category {key!r} in priors") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 <= value <= 1:
            raise ValueError(f"prior for {key} must be a number in [0, 1]")
        priors[cat] = float(value)
    return priors


def dump_priors(priors: Mapping[ThreatCategory, float]) -> str:
    body = {"schema_version": PRIORS_SCHEMA_VERSION, "priors": {c.value: p for c, p in priors.items()}}
    return json.dumps(body, sort_keys=True, indent=2) + "\n"
