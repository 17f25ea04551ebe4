"""Domain types for hybrid fiat/crypto system models and their structural checks."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Layer(str, Enum):
    PRESENTATION_UI = "PresentationUI"
    TRADITIONAL = "Traditional"
    INFRASTRUCTURE = "Infrastructure"
    NETWORK_CONSENSUS = "NetworkConsensus"
    APPLICATION = "Application"
    DATA_PERSISTENCE = "DataPersistence"

    @property
    def keyword(self) -> str:
        return _LAYER_KEYWORDS[self]

    @classmethod
    def from_keyword(cls, kw: str) -> "Layer":
        for layer, k in _LAYER_KEYWORDS.items():
            if k == kw:
                return layer
        raise KeyError(kw)


_LAYER_KEYWORDS = {
    Layer.PRESENTATION_UI: "ui",
    Layer.TRADITIONAL: "traditional",
    Layer.INFRASTRUCTURE: "infra",
    Layer.NETWORK_CONSENSUS: "network",
    Layer.APPLICATION: "app",
    Layer.DATA_PERSISTENCE: "data",
}


class ElementKind(str, Enum):
    EXTERNAL_ENTITY = "ExternalEntity"
    PROCESS = "Process"
    MULTI_PROCESS = "MultiProcess"
    DATA_STORE = "DataStore"
    DATA_FLOW = "DataFlow"
    PRIVILEGE_BOUNDARY = "PrivilegeBoundary"

    @property
    def is_node(self) -> bool:
        return self not in (ElementKind.DATA_FLOW, ElementKind.PRIVILEGE_BOUNDARY)


class BlockchainVariant(str, Enum):
    ORACLE = "Oracle"
    SMART_CONTRACT = "SmartContract"
    DEFI = "DeFi"
    ON_CHAIN_LEDGER = "OnChainLedger"
    CRYPTO_FLOW = "CryptoFlow"
    OFF_ON_CHAIN_TRANSITION = "OffOnChainTransition"

    @property
    def kind(self) -> ElementKind:
        """The only element kind this variant may decorate."""
        return VARIANT_KIND[self]


VARIANT_KIND = {
    BlockchainVariant.ORACLE: ElementKind.EXTERNAL_ENTITY,
    BlockchainVariant.SMART_CONTRACT: ElementKind.PROCESS,
    BlockchainVariant.DEFI: ElementKind.MULTI_PROCESS,
    BlockchainVariant.ON_CHAIN_LEDGER: ElementKind.DATA_STORE,
    BlockchainVariant.CRYPTO_FLOW: ElementKind.DATA_FLOW,
    BlockchainVariant.OFF_ON_CHAIN_TRANSITION: ElementKind.PRIVILEGE_BOUNDARY,
}

RECOGNISED_TAGS = frozenset(
    {"personal_data", "mpc", "bridge", "user_facing", "signature_dependent"}
)


class ActorArchetype(str, Enum):
    STATE_SPONSORED = "StateSponsored"
    INSIDER = "Insider"
    PHISHING_SYNDICATE = "PhishingSyndicate"
    AUTOMATED_BOT = "AutomatedBot"


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int = 1

    def __post_init__(self) -> None:
        if self.line < 1 or self.column < 1:
            raise ValueError("line and column are 1-based")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Element:
    id: str
    name: str
    kind: ElementKind
    variant: Optional[BlockchainVariant] = None
    layer: Optional[Layer] = None
    tags: frozenset[str] = frozenset()
    value_at_risk: Optional[int] = None
    source: Optional[str] = None
    target: Optional[str] = None
    crosses: tuple[str, ...] = ()
    members: tuple[str, ...] = ()
    # where the element was declared; not part of structural identity
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", frozenset(self.tags))
        object.__setattr__(self, "crosses", tuple(self.crosses))
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def display_name(self) -> str:
        return self.name or self.id


@dataclass(frozen=True)
class Actor:
    id: str
    name: str
    archetype: ActorArchetype
    note: str = ""


@dataclass(frozen=True)
class SystemModel:
    name: str
    elements: tuple[Element, ...] = ()
    actors: tuple[Actor, ...] = ()
    schema_version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "actors", tuple(self.actors))

    def element(self, element_id: str) -> Element:
        for el in self.elements:
            if el.id == element_id:
                return el
        raise KeyError(element_id)

    def get(self, element_id: str) -> Optional[Element]:
        for el in self.elements:
            if el.id == element_id:
                return el
        return None

    @property
    def element_ids(self) -> list[str]:
        return [el.id for el in self.elements]


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


# rule id -> (name, severity)
RULES = {
    "V001": ("DuplicateId", Severity.ERROR),
    "V002": ("DanglingReference", Severity.ERROR),
    "V003": ("ReferenceKindMismatch", Severity.ERROR),
    "V004": ("VariantKindMismatch", Severity.ERROR),
    "V005": ("FlowMissingEndpoint", Severity.ERROR),
    "V006": ("FlowFieldOnNonFlow", Severity.ERROR),
    "V007": ("InvalidTagPlacement", Severity.ERROR),
    "V008": ("NegativeValueAtRisk", Severity.ERROR),
    "V009": ("UnsupportedField", Severity.ERROR),
    "V101": ("UnknownTag", Severity.WARNING),
    "V102": ("MissingLayer", Severity.WARNING),
}


@dataclass(frozen=True)
class Violation:
    rule: str
    element_id: str
    message: str
    span: Optional[SourceSpan] = field(default=None, compare=False)

    @property
    def name(self) -> str:
        return RULES[self.rule][0]

    @property
    def severity(self) -> Severity:
        return RULES[self.rule][1]

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.severity.value} {self.rule} {self.name}: {self.message}"


def validate_model(model: SystemModel) -> list[Violation]:
    """Return every structural violation in ``model``, ordered by element id then rule id.

    An empty list means the model is valid. Warning-class violations (unknown
    tags, missing layers) are included; callers decide whether they block.
    """
    out: list[Violation] = []
    by_id: dict[str, Element] = {}
    for el in model.elements:
        if el.id in by_id:
            out.append(Violation("V001", el.id, f"duplicate element id {el.id!r}", el.span))
        else:
            by_id[el.id] = el

    def ref(el: Element, what: str, rid: str, ok) -> None:
        other = by_id.get(rid)
        if other is None:
            out.append(Violation("V002", el.id, f"{what} references missing element {rid!r}", el.span))
        elif not ok(other.kind):
            out.append(
                Violation(
                    "V003",
                    el.id,
                    f"{what} {rid!r} is a {other.kind.value}, which cannot be used there",
                    el.span,
                )
            )

    for el in model.elements:
        if el.variant is not None and el.variant.kind is not el.kind:
            out.append(
                Violation(
                    "V004",
                    el.id,
                    f"variant {el.variant.value} requires {el.variant.kind.value}, got {el.kind.value}",
                    el.span,
                )
            )
        if el.kind is ElementKind.DATA_FLOW:
            for what, rid in (("source", el.source), ("target", el.target)):
                if not rid:
                    out.append(Violation("V005", el.id, f"flow has no {what}", el.span))
                else:
                    ref(el, what, rid, lambda k: k.is_node)
            for rid in el.crosses:
                ref(el, "crosses", rid, lambda k: k is ElementKind.PRIVILEGE_BOUNDARY)
            if el.layer is not None:
                out.append(Violation("V009", el.id, "flows do not carry a layer", el.span))
        else:
            if el.source or el.target or el.crosses:
                out.append(
                    Violation("V006", el.id, "source/target/crosses are only valid on flows", el.span)
                )
        if el.kind is ElementKind.PRIVILEGE_BOUNDARY:
            for rid in el.members:
                ref(el, "member", rid, lambda k: k.is_node)
            if el.layer is not None or el.tags or el.value_at_risk is not None:
                out.append(
                    Violation("V009", el.id, "boundaries carry no layer, tags or value at risk", el.span)
                )
        elif el.members:
            out.append(Violation("V009", el.id, "only boundaries have members", el.span))
        if "bridge" in el.tags and el.kind is not ElementKind.DATA_FLOW:
            out.append(Violation("V007", el.id, "tag 'bridge' is only valid on flows", el.span))
        if "mpc" in el.tags and el.layer is not Layer.INFRASTRUCTURE:
            out.append(
                Violation("V007", el.id, "tag 'mpc' is only valid on Infrastructure-layer elements", el.span)
            )
        if el.value_at_risk is not None and el.value_at_risk < 0:
            out.append(Violation("V008", el.id, "value_at_risk must be non-negative", el.span))
        for tag in sorted(el.tags - RECOGNISED_TAGS):
            out.append(Violation("V101", el.id, f"unrecognised tag {tag!r}", el.span))
        if el.kind.is_node and el.layer is None:
            out.append(Violation("V102", el.id, "element has no layer assignment", el.span))

    # stable sort keeps per-rule emission order for equal keys
    out.sort(key=lambda v: (v.element_id, v.rule))
    return out


def has_errors(violations: Iterable[Violation]) -> bool:
    return any(v.severity is Severity.ERROR for v in violations)


@dataclass(frozen=True)
class Interdependency:
    flow: str
    source: str
    target: str
    source_layer: Layer
    target_layer: Layer


@dataclass(frozen=True)
class HybridAssetMatrix:
    rows: dict[Layer, tuple[str, ...]]
    interdependencies: dict[Layer, tuple[Interdependency, ...]]
    unassigned: tuple[str, ...] = ()


def layer_matrix(model: SystemModel) -> HybridAssetMatrix:
    """Group layered elements by layer and list cross-layer flows under both ends."""
    rows: dict[Layer, list[str]] = {layer: [] for layer in Layer}
    edges: dict[Layer, list[Interdependency]] = {layer: [] for layer in Layer}
    unassigned: list[str] = []
    for el in model.elements:
        if el.layer is not None:
            rows[el.layer].append(el.id)
        elif el.kind.is_node:
            unassigned.append(el.id)
    for el in model.elements:
        if el.kind is not ElementKind.DATA_FLOW:
            continue
        src = model.get(el.source) if el.source else None
        dst = model.get(el.target) if el.target else None
        if src is None or dst is None or src.layer is None or dst.layer is None:
            continue
        if src.layer is dst.layer:
            continue
        dep = Interdependency(el.id, src.id, dst.id, src.layer, dst.layer)
        edges[src.layer].append(dep)
        edges[dst.layer].append(dep)
    return HybridAssetMatrix(
        rows={k: tuple(v) for k, v in rows.items()},
        interdependencies={k: tuple(v) for k, v in edges.items()},
        unassigned=tuple(unassigned),
    )
