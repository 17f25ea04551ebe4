"""Risk scoring, banding, prioritisation and the probability/impact heatmap.

    score = (technical_severity + economic_impact + regulatory_consequence) * exploit_probability

Arithmetic is carried out on the decimal values of the inputs, so worked
examples such as (9 + 8 + 7) * 0.7 come out as exactly 16.8 rather than
16.799999999999997.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from cntmf.catalog import Threat, ThreatCategory
from cntmf.model import BlockchainVariant, ElementKind, Layer, SystemModel

DEFAULT_TECHNICAL_SEVERITY = 5.0
DEFAULT_REGULATORY_CONSEQUENCE = 5.0
DEFAULT_ECONOMIC_IMPACT = 5.0

BRIDGE_PROBABILITY = 0.7
ORACLE_PROBABILITY = 0.6
KEY_COMPROMISE_PROBABILITY = 0.8
FALLBACK_PROBABILITY = 0.5


class ScoreRangeError(ValueError):
    def __init__(self, field_name: str, value, lo, hi):
        self.field = field_name
        super().__init__(f"{field_name}={value!r} outside [{lo}, {hi}]")


class UnknownThreatError(KeyError):
    def __init__(self, ids: Iterable[str]):
        self.ids = sorted(ids)
        super().__init__(f"overrides reference unknown threat ids: {', '.join(self.ids)}")

    def __str__(self) -> str:
        return self.args[0]


class Provenance(str, Enum):
    DEFAULT = "Default"
    OVERRIDE = "Override"
    DERIVED_FROM_VALUE_AT_RISK = "DerivedFromValueAtRisk"


class Band(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def letter(self) -> str:
        return self.value[0]

    @property
    def rank(self) -> int:
        return ("Low", "Medium", "High").index(self.value)


_RANGES = {
    "technical_severity": (0, 10),
    "economic_impact": (0, 10),
    "regulatory_consequence": (0, 10),
    "exploit_probability": (0, 1),
}


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


@dataclass(frozen=True)
class ScoreInputs:
    technical_severity: float
    economic_impact: float
    regulatory_consequence: float
    exploit_probability: float
    provenance: Mapping[str, Provenance] = field(default_factory=dict, compare=True)

    def check(self) -> None:
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            # NaN fails both comparisons
            if not (lo <= v <= hi):
                raise ScoreRangeError(name, v, lo, hi)

    @property
    def impact_sum(self) -> Decimal:
        return _dec(self.technical_severity) + _dec(self.economic_impact) + _dec(self.regulatory_consequence)

    @property
    def mean_impact(self) -> float:
        return float(self.impact_sum / 3)


def risk_score(inputs: ScoreInputs) -> float:
    """(ts + ei + rc) * p, in [0, 30]. Raises ScoreRangeError naming a bad field."""
    inputs.check()
    return float(inputs.impact_sum * _dec(inputs.exploit_probability))


def round_score(score: float) -> Decimal:
    """One-decimal, half-up, from the shortest decimal form of ``score``."""
    return _dec(score).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


def format_score(score: float) -> str:
    return str(round_score(score))


def band(score: float) -> Band:
    if score < 5:
        return Band.LOW
    if score <= 10:
        return Band.MEDIUM
    return Band.HIGH


# (lower bound inclusive, impact score); the last row covers everything above 10M
ECONOMIC_BANDS = (
    (0, 0),
    (1_000, 2),
    (10_000, 4),
    (100_000, 6),
    (1_000_000, 7),
    (5_000_000, 8),
)


def economic_impact_from_loss(loss_usd: float) -> int:
    if not loss_usd >= 0:
        raise ScoreRangeError("loss_usd", loss_usd, 0, "inf")
    if loss_usd > 10_000_000:
        return 10
    impact = 0
    for lower, value in ECONOMIC_BANDS:
        if loss_usd >= lower:
            impact = value
    return impact


def is_key_compromise(threat: Threat, model: SystemModel) -> bool:
    el = model.get(threat.target)
    return (
        el is not None
        and el.layer is Layer.INFRASTRUCTURE
        and threat.category in (ThreatCategory.COLLUSION, ThreatCategory.TAMPERING)
    )


def default_probability(threat: Threat, model: SystemModel) -> float:
    el = model.element(threat.target)
    if el.kind is ElementKind.DATA_FLOW and "bridge" in el.tags:
        return BRIDGE_PROBABILITY
    if el.variant is BlockchainVariant.ORACLE and threat.category is ThreatCategory.REENTRANCY_ORACLE_MANIPULATION:
        return ORACLE_PROBABILITY
    if is_key_compromise(threat, model):
        return KEY_COMPROMISE_PROBABILITY
    return FALLBACK_PROBABILITY


# --- overrides --------------------------------------------------------------


@dataclass(frozen=True)
class Override:
    ts: Optional[float] = None
    ei: Optional[float] = None
    rc: Optional[float] = None
    p: Optional[float] = None
    suppress: bool = False


OverrideSet = Mapping[str, Override]

_OVERRIDE_KEYS = {"ts", "ei", "rc", "p", "suppress"}


class OverrideFileError(ValueError):
    pass


def parse_overrides(data) -> dict[str, Override]:
    """Build an override set from decoded JSON.

    Accepts ``{"schema_version": 1, "overrides": {id: {...}}}`` or the bare
    ``{id: {...}}`` mapping.
    """
    if isinstance(data, dict) and "overrides" in data:
        data = data["overrides"]
    if not isinstance(data, dict):
        raise OverrideFileError("overrides must be a mapping of threat id to fields")
    out: dict[str, Override] = {}
    for tid, fields in sorted(data.items()):
        if not isinstance(fields, dict):
            raise OverrideFileError(f"{tid}: expected an object")
        unknown = set(fields) - _OVERRIDE_KEYS
        if unknown:
            raise OverrideFileError(f"{tid}: unknown fields {sorted(unknown)}")
        for k in ("ts", "ei", "rc", "p"):
            v = fields.get(k)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise OverrideFileError(f"{tid}: {k} must be a number")
        if not isinstance(fields.get("suppress", False), bool):
            raise OverrideFileError(f"{tid}: suppress must be a boolean")
        out[tid] = Override(**fields)
    return out


def load_overrides(path: Union[str, Path]) -> dict[str, Override]:
    return parse_overrides(json.loads(Path(path).read_text(encoding="utf-8")))


# --- scoring ----------------------------------------------------------------


@dataclass(frozen=True)
class ScoredThreat:
    threat: Threat
    inputs: ScoreInputs
    score: float
    band: Band

    @property
    def id(self) -> str:
        return self.threat.id

    @property
    def probability(self) -> float:
        return self.inputs.exploit_probability


def score_threat(threat: Threat, inputs: ScoreInputs) -> ScoredThreat:
    s = risk_score(inputs)
    return ScoredThreat(threat, inputs, s, band(s))


def score_all(
    threats: list[Threat],
    model: SystemModel,
    overrides: Optional[OverrideSet] = None,
    priors: Optional[Mapping[ThreatCategory, float]] = None,
) -> list[ScoredThreat]:
    """Resolve score inputs for each threat and score it.

    Precedence per field: override, then the target's value at risk (economic
    impact only), then defaults. Suppressed threats are dropped. When
    ``priors`` is given, each default probability is shifted by how far the
    category's prior has moved from its seed value (see ``feedback``).
    """
    overrides = overrides or {}
    known = {t.id for t in threats}
    unknown = set(overrides) - known
    if unknown:
        raise UnknownThreatError(unknown)
    if priors is not None:
        from cntmf.feedback import seed_priors

        seeds = seed_priors()

    out: list[ScoredThreat] = []
    for t in threats:
        o = overrides.get(t.id, Override())
        if o.suppress:
            continue
        prov: dict[str, Provenance] = {}

        def pick(name: str, value, default):
            if value is not None:
                prov[name] = Provenance.OVERRIDE
                return float(value)
            prov[name] = Provenance.DEFAULT
            return float(default)

        ts = pick("technical_severity", o.ts, DEFAULT_TECHNICAL_SEVERITY)
        rc = pick("regulatory_consequence", o.rc, DEFAULT_REGULATORY_CONSEQUENCE)
        el = model.element(t.target)
        if o.ei is None and el.value_at_risk is not None:
            ei = float(economic_impact_from_loss(el.value_at_risk))
            prov["economic_impact"] = Provenance.DERIVED_FROM_VALUE_AT_RISK
        else:
            ei = pick("economic_impact", o.ei, DEFAULT_ECONOMIC_IMPACT)
        if o.p is None:
            p = default_probability(t, model)
            if priors is not None and t.category in priors:
                shifted = _dec(p) + _dec(priors[t.category]) - _dec(seeds[t.category])
                p = float(min(max(shifted, Decimal(0)), Decimal(1)))
            prov["exploit_probability"] = Provenance.DEFAULT
        else:
            p = pick("exploit_probability", o.p, None)
        inputs = ScoreInputs(ts, ei, rc, p, dict(sorted(prov.items())))
        out.append(score_threat(t, inputs))
    return out


def priority_key(st: ScoredThreat):
    return (-st.score, -st.probability, st.threat.target, st.threat.category.code)


def prioritize(scored: Iterable[ScoredThreat]) -> list[ScoredThreat]:
    return sorted(scored, key=priority_key)


# --- heatmap ----------------------------------------------------------------

PROBABILITY_BINS = ("[0.0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1.0]")
IMPACT_BINS = ("[0,2)", "[2,4)", "[4,6)", "[6,8)", "[8,10]")
_P_EDGES = tuple(Decimal(x) for x in ("0.2", "0.4", "0.6", "0.8"))
_I_EDGES = (Decimal(2), Decimal(4), Decimal(6), Decimal(8))


def probability_bin(p: float) -> int:
    d = _dec(p)
    return sum(d >= e for e in _P_EDGES)


def impact_bin(inputs: ScoreInputs) -> int:
    # compare the component sum against 3x each edge so no division is needed
    s = inputs.impact_sum
    return sum(s >= 3 * e for e in _I_EDGES)


@dataclass(frozen=True)
class HeatmapCell:
    threat_ids: tuple[str, ...] = ()
    band: Optional[Band] = None

    @property
    def count(self) -> int:
        return len(self.threat_ids)


@dataclass(frozen=True)
class Heatmap:
    """``cells[row][col]``: row = probability bin (0 lowest), col = impact bin."""

    cells: tuple[tuple[HeatmapCell, ...], ...]

    @property
    def total(self) -> int:
        return sum(c.count for row in self.cells for c in row)

    def cell_of(self, threat_id: str) -> Optional[tuple[int, int]]:
        for r, row in enumerate(self.cells):
            for c, cell in enumerate(row):
                if threat_id in cell.threat_ids:
                    return r, c
        return None


def build_heatmap(scored: Iterable[ScoredThreat]) -> Heatmap:
    grid: list[list[list[ScoredThreat]]] = [[[] for _ in range(5)] for _ in range(5)]
    for st in scored:
        grid[probability_bin(st.probability)][impact_bin(st.inputs)].append(st)
    cells = []
    for row in grid:
        out_row = []
        for members in row:
            ids = tuple(sorted(st.id for st in members))
            dominant = max((st.band for st in members), key=lambda b: b.rank, default=None)
            out_row.append(HeatmapCell(ids, dominant))
        cells.append(tuple(out_row))
    return Heatmap(tuple(cells))
