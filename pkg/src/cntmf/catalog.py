"""Threat taxonomies (STRIDE, CRYPTOQ, LINDDUN), OWASP API risks and the rule tables
that decide which categories apply to an element."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from cntmf.model import (
    ActorArchetype,
    BlockchainVariant,
    Element,
    ElementKind,
    Layer,
    SystemModel,
)


class Family(str, Enum):
    STRIDE = "stride"
    CRYPTOQ = "cryptoq"
    LINDDUN = "linddun"


class ThreatCategory(str, Enum):
    # STRIDE
    SPOOFING = "Spoofing"
    TAMPERING = "Tampering"
    REPUDIATION = "Repudiation"
    INFORMATION_DISCLOSURE = "InformationDisclosure"
    DENIAL_OF_SERVICE = "DenialOfService"
    ELEVATION_OF_PRIVILEGE = "ElevationOfPrivilege"
    # CRYPTOQ, letters C R Y P T O Q in order
    COLLUSION = "Collusion"
    REENTRANCY_ORACLE_MANIPULATION = "ReentrancyOracleManipulation"
    YIELD_FARMING_EXPLOITS = "YieldFarmingExploits"
    PHISHING_SOCIAL_ENGINEERING = "PhishingSocialEngineering"
    TOKENISATION_RISKS = "TokenisationRisks"
    OFF_CHAIN_DATA_POISONING = "OffChainDataPoisoning"
    QUANTUM_THREATS = "QuantumThreats"
    # LINDDUN
    LINKABILITY = "Linkability"
    IDENTIFIABILITY = "Identifiability"
    NON_REPUDIATION = "NonRepudiation"
    DETECTABILITY = "Detectability"
    DISCLOSURE_OF_INFORMATION = "DisclosureOfInformation"
    UNAWARENESS = "Unawareness"
    NON_COMPLIANCE = "NonCompliance"

    @property
    def family(self) -> Family:
        return _FAMILY[self]

    @property
    def code(self) -> str:
        return _CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "ThreatCategory":
        return _BY_CODE[code]


C = ThreatCategory

STRIDE = (
    C.SPOOFING,
    C.TAMPERING,
    C.REPUDIATION,
    C.INFORMATION_DISCLOSURE,
    C.DENIAL_OF_SERVICE,
    C.ELEVATION_OF_PRIVILEGE,
)
CRYPTOQ = (
    C.COLLUSION,
    C.REENTRANCY_ORACLE_MANIPULATION,
    C.YIELD_FARMING_EXPLOITS,
    C.PHISHING_SOCIAL_ENGINEERING,
    C.TOKENISATION_RISKS,
    C.OFF_CHAIN_DATA_POISONING,
    C.QUANTUM_THREATS,
)
LINDDUN = (
    C.LINKABILITY,
    C.IDENTIFIABILITY,
    C.NON_REPUDIATION,
    C.DETECTABILITY,
    C.DISCLOSURE_OF_INFORMATION,
    C.UNAWARENESS,
    C.NON_COMPLIANCE,
)

_FAMILY = {
    **{c: Family.STRIDE for c in STRIDE},
    **{c: Family.CRYPTOQ for c in CRYPTOQ},
    **{c: Family.LINDDUN for c in LINDDUN},
}
_CODES = {
    **dict(zip(STRIDE, ("S", "T", "R", "I", "D", "E"))),
    **{c: f"CQ-{letter}" for c, letter in zip(CRYPTOQ, "CRYPTOQ")},
    **dict(zip(LINDDUN, ("LD-L", "LD-I", "LD-NR", "LD-DT", "LD-DI", "LD-U", "LD-NC"))),
}
_BY_CODE = {code: c for c, code in _CODES.items()}


class ApiRisk(str, Enum):
    """OWASP API Security Top 10 (2023)."""

    API1 = "BrokenObjectLevelAuthorization"
    API2 = "BrokenAuthentication"
    API3 = "BrokenObjectPropertyLevelAuthorization"
    API4 = "UnrestrictedResourceConsumption"
    API5 = "BrokenFunctionLevelAuthorization"
    API6 = "UnrestrictedAccessToSensitiveBusinessFlows"
    API7 = "ServerSideRequestForgery"
    API8 = "SecurityMisconfiguration"
    API9 = "ImproperInventoryManagement"
    API10 = "UnsafeConsumptionOfApis"


STRIDE_TO_API: dict[ThreatCategory, frozenset[ApiRisk]] = {
    C.SPOOFING: frozenset({ApiRisk.API2}),
    C.DENIAL_OF_SERVICE: frozenset({ApiRisk.API4}),
    C.ELEVATION_OF_PRIVILEGE: frozenset({ApiRisk.API1, ApiRisk.API5}),
    C.INFORMATION_DISCLOSURE: frozenset({ApiRisk.API3}),
    C.TAMPERING: frozenset({ApiRisk.API8, ApiRisk.API10}),
    C.REPUDIATION: frozenset(),
}


def map_stride_to_api(category: ThreatCategory) -> frozenset[ApiRisk]:
    return STRIDE_TO_API.get(category, frozenset())


# --- rule tables ------------------------------------------------------------

# (rule id, rationale sentence)
Rule = tuple[str, str]

BASE_RULES: dict[ElementKind, tuple[frozenset[ThreatCategory], Rule]] = {
    ElementKind.EXTERNAL_ENTITY: (
        frozenset({C.SPOOFING, C.REPUDIATION}),
        ("R-BASE-EE", "external entities can be impersonated or deny their actions"),
    ),
    ElementKind.PROCESS: (
        frozenset(STRIDE),
        ("R-BASE-P", "processes are exposed to every STRIDE category"),
    ),
    ElementKind.MULTI_PROCESS: (
        frozenset(STRIDE),
        ("R-BASE-MP", "multi-processes are exposed to every STRIDE category"),
    ),
    ElementKind.DATA_STORE: (
        frozenset({C.TAMPERING, C.INFORMATION_DISCLOSURE, C.REPUDIATION, C.DENIAL_OF_SERVICE}),
        ("R-BASE-DS", "stored data can be altered, leaked, disputed or made unavailable"),
    ),
    ElementKind.DATA_FLOW: (
        frozenset({C.TAMPERING, C.INFORMATION_DISCLOSURE, C.DENIAL_OF_SERVICE}),
        ("R-BASE-DF", "data in transit can be altered, intercepted or interrupted"),
    ),
    ElementKind.PRIVILEGE_BOUNDARY: (frozenset(), ("R-BASE-PB", "boundaries carry no threats of their own")),
}

CROSSING_RULE: Rule = ("R-FLOW-CROSS", "flow crosses a privilege boundary")

VARIANT_RULES: dict[BlockchainVariant, tuple[frozenset[ThreatCategory], Rule]] = {
    BlockchainVariant.ORACLE: (
        frozenset({C.REENTRANCY_ORACLE_MANIPULATION, C.OFF_CHAIN_DATA_POISONING}),
        ("R-VAR-ORACLE", "oracle feeds can be manipulated or poisoned to misprice assets"),
    ),
    BlockchainVariant.SMART_CONTRACT: (
        frozenset({C.REENTRANCY_ORACLE_MANIPULATION, C.TOKENISATION_RISKS}),
        ("R-VAR-CONTRACT", "smart contracts are exposed to reentrancy and governance attacks"),
    ),
    BlockchainVariant.DEFI: (
        frozenset({C.YIELD_FARMING_EXPLOITS, C.REENTRANCY_ORACLE_MANIPULATION}),
        ("R-VAR-DEFI", "DeFi protocols are exposed to yield-farming and price-manipulation exploits"),
    ),
}

QUANTUM_RULE: Rule = ("R-TAG-SIGDEP", "signature-dependent on-chain asset exposed to future elliptic-curve breaks")
ONCHAIN_SUPPRESS_RULE: Rule = ("R-VAR-ONCHAIN", "tamper-resistant ledger: Tampering suppressed")
MPC_RULE: Rule = ("R-TAG-MPC", "MPC signing threshold can be breached by colluding parties")
BRIDGE_RULE: Rule = ("R-TAG-BRIDGE", "cross-chain bridge exploit")
USER_FACING_RULE: Rule = ("R-TAG-USER", "user-facing surface targeted by phishing and unaware users")
PERSONAL_DATA_RULE: Rule = ("R-TAG-PII", "personal (KYC) data exposed to privacy threats")
ONCHAIN_PII_RULE: Rule = ("R-TAG-PII-CHAIN", "personal data written on-chain cannot be repudiated or erased")

PERSONAL_DATA_CATEGORIES = frozenset(
    {C.LINKABILITY, C.IDENTIFIABILITY, C.DETECTABILITY, C.DISCLOSURE_OF_INFORMATION, C.NON_COMPLIANCE}
)
_ON_CHAIN = (BlockchainVariant.ON_CHAIN_LEDGER, BlockchainVariant.CRYPTO_FLOW)


def _rule_hits(element: Element) -> dict[ThreatCategory, Rule]:
    """Category -> rationale, later (more specific) rules overwriting earlier ones."""
    hits: dict[ThreatCategory, Rule] = {}

    def add(cats, rule: Rule) -> None:
        for c in cats:
            hits[c] = rule

    cats, rule = BASE_RULES[element.kind]
    add(cats, rule)
    if element.kind is ElementKind.DATA_FLOW and element.crosses:
        add([C.ELEVATION_OF_PRIVILEGE], CROSSING_RULE)
    variant = element.variant
    if variant in VARIANT_RULES:
        cats, rule = VARIANT_RULES[variant]
        add(cats, rule)
    tags = element.tags
    if variant in _ON_CHAIN and "signature_dependent" in tags:
        add([C.QUANTUM_THREATS], QUANTUM_RULE)
    if "mpc" in tags:
        add([C.COLLUSION], MPC_RULE)
    if "bridge" in tags:
        add([C.TAMPERING], BRIDGE_RULE)
    if "user_facing" in tags or element.layer is Layer.PRESENTATION_UI:
        add([C.PHISHING_SOCIAL_ENGINEERING, C.UNAWARENESS], USER_FACING_RULE)
    if "personal_data" in tags:
        add(PERSONAL_DATA_CATEGORIES, PERSONAL_DATA_RULE)
        if variant in _ON_CHAIN:
            add([C.NON_REPUDIATION], ONCHAIN_PII_RULE)
    if variant is BlockchainVariant.ON_CHAIN_LEDGER:
        hits.pop(C.TAMPERING, None)
    return hits


def applicable_categories(element: Element, context: Optional[SystemModel] = None) -> frozenset[ThreatCategory]:
    """Categories that apply to ``element`` under the rule tables.

    ``context`` is accepted for interface symmetry; no current rule looks
    beyond the element itself.
    """
    return frozenset(_rule_hits(element))


# --- enumeration ------------------------------------------------------------


@dataclass(frozen=True)
class Threat:
    id: str
    target: str
    category: ThreatCategory
    rule: str
    rationale: str
    api_mappings: frozenset[ApiRisk] = frozenset()
    suggested_actor: Optional[ActorArchetype] = None


def suggested_actor(category: ThreatCategory, element: Element) -> Optional[ActorArchetype]:
    """Heuristic only; never used in scoring."""
    if category is C.PHISHING_SOCIAL_ENGINEERING:
        return ActorArchetype.PHISHING_SYNDICATE
    if category is C.COLLUSION:
        return ActorArchetype.INSIDER
    if category is C.QUANTUM_THREATS:
        return ActorArchetype.STATE_SPONSORED
    # key theft: tampering with infrastructure (wallet/HSM) assets
    if category is C.TAMPERING and element.layer is Layer.INFRASTRUCTURE:
        return ActorArchetype.STATE_SPONSORED
    return None


def threat_id(element_id: str, category: ThreatCategory, n: int = 1) -> str:
    return f"{element_id}:{category.code}:{n}"


def enumerate_threats(model: SystemModel) -> list[Threat]:
    """One threat per (element, applicable category), in declaration then code order."""
    out: list[Threat] = []
    for el in model.elements:
        hits = _rule_hits(el)
        for cat in sorted(hits, key=lambda c: c.code):
            rule_id, sentence = hits[cat]
            api = set(map_stride_to_api(cat))
            if el.variant is BlockchainVariant.ORACLE:
                api.add(ApiRisk.API7)
            out.append(
                Threat(
                    id=threat_id(el.id, cat),
                    target=el.id,
                    category=cat,
                    rule=rule_id,
                    rationale=f"{el.display_name}: {sentence}",
                    api_mappings=frozenset(api),
                    suggested_actor=suggested_actor(cat, el),
                )
            )
    return out


def rule_table() -> list[dict]:
    """Rule tables as plain data, for documentation dumps."""
    rows: list[dict] = []
    for kind, (cats, (rid, text)) in BASE_RULES.items():
        rows.append({"rule": rid, "when": {"kind": kind.value}, "adds": sorted(c.value for c in cats), "suppresses": [], "rationale": text})
    rows.append({"rule": CROSSING_RULE[0], "when": {"kind": "DataFlow", "crosses": "non-empty"}, "adds": [C.ELEVATION_OF_PRIVILEGE.value], "suppresses": [], "rationale": CROSSING_RULE[1]})
    for variant, (cats, (rid, text)) in VARIANT_RULES.items():
        rows.append({"rule": rid, "when": {"variant": variant.value}, "adds": sorted(c.value for c in cats), "suppresses": [], "rationale": text})
    rows += [
        {"rule": ONCHAIN_SUPPRESS_RULE[0], "when": {"variant": "OnChainLedger"}, "adds": [], "suppresses": [C.TAMPERING.value], "rationale": ONCHAIN_SUPPRESS_RULE[1]},
        {"rule": QUANTUM_RULE[0], "when": {"variant": ["OnChainLedger", "CryptoFlow"], "tag": "signature_dependent"}, "adds": [C.QUANTUM_THREATS.value], "suppresses": [], "rationale": QUANTUM_RULE[1]},
        {"rule": MPC_RULE[0], "when": {"tag": "mpc"}, "adds": [C.COLLUSION.value], "suppresses": [], "rationale": MPC_RULE[1]},
        {"rule": BRIDGE_RULE[0], "when": {"tag": "bridge"}, "adds": [C.TAMPERING.value], "suppresses": [], "rationale": BRIDGE_RULE[1]},
        {"rule": USER_FACING_RULE[0], "when": {"tag": "user_facing", "or_layer": "PresentationUI"}, "adds": sorted([C.PHISHING_SOCIAL_ENGINEERING.value, C.UNAWARENESS.value]), "suppresses": [], "rationale": USER_FACING_RULE[1]},
        {"rule": PERSONAL_DATA_RULE[0], "when": {"tag": "personal_data"}, "adds": sorted(c.value for c in PERSONAL_DATA_CATEGORIES), "suppresses": [], "rationale": PERSONAL_DATA_RULE[1]},
        {"rule": ONCHAIN_PII_RULE[0], "when": {"variant": ["OnChainLedger", "CryptoFlow"], "tag": "personal_data"}, "adds": [C.NON_REPUDIATION.value], "suppresses": [], "rationale": ONCHAIN_PII_RULE[1]},
    ]
    return rows
