"""Adaptive Mitigation Layers: the control catalogue, threat-to-control lookup and coverage."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Union

from cntmf.catalog import ThreatCategory as C, Threat
from cntmf.risk import ScoredThreat, prioritize


class MitigationLayer(str, Enum):
    TRADITIONAL = "TraditionalControls"
    CRYPTO = "CryptoControls"
    WEB3_ANALYTICS = "Web3Analytics"
    PROCESS = "ProcessControls"


@dataclass(frozen=True)
class Control:
    id: str
    name: str
    mitigation_layer: MitigationLayer
    applies_to: frozenset[C]
    note: str = ""


def _c(id, name, layer, applies, note=""):
    return Control(id, name, layer, frozenset(applies), note)


CATALOGUE: tuple[Control, ...] = tuple(
    sorted(
        [
            _c("zero_trust", "Zero-trust architecture", MitigationLayer.TRADITIONAL,
               {C.SPOOFING, C.ELEVATION_OF_PRIVILEGE, C.INFORMATION_DISCLOSURE},
               "continuous verification of every request, regardless of origin"),
            _c("firewalls_access_controls", "Firewalls and access controls", MitigationLayer.TRADITIONAL,
               {C.DENIAL_OF_SERVICE, C.ELEVATION_OF_PRIVILEGE, C.INFORMATION_DISCLOSURE},
               "perimeter controls for fiat layers"),
            _c("mpc_key_management", "MPC key management", MitigationLayer.CRYPTO,
               {C.COLLUSION, C.ELEVATION_OF_PRIVILEGE, C.SPOOFING},
               "distributed signing removes single-key compromise"),
            _c("hardware_wallets_hsm", "Hardware wallets / HSM", MitigationLayer.CRYPTO,
               {C.TAMPERING, C.INFORMATION_DISCLOSURE, C.COLLUSION}),
            _c("formal_verification", "Formal verification of contracts", MitigationLayer.CRYPTO,
               {C.REENTRANCY_ORACLE_MANIPULATION, C.TOKENISATION_RISKS, C.YIELD_FARMING_EXPLOITS, C.TAMPERING}),
            _c("zk_snark_privacy", "zk-SNARK privacy-preserving proofs", MitigationLayer.CRYPTO,
               {C.LINKABILITY, C.IDENTIFIABILITY, C.DISCLOSURE_OF_INFORMATION, C.DETECTABILITY,
                C.NON_REPUDIATION, C.INFORMATION_DISCLOSURE}),
            _c("sast_dast", "SAST/DAST for smart contracts and APIs", MitigationLayer.PROCESS,
               {C.REENTRANCY_ORACLE_MANIPULATION, C.TOKENISATION_RISKS, C.TAMPERING, C.ELEVATION_OF_PRIVILEGE}),
            _c("graph_analytics_monitoring", "Graph analytics for hidden risk connections", MitigationLayer.WEB3_ANALYTICS,
               {C.OFF_CHAIN_DATA_POISONING, C.REENTRANCY_ORACLE_MANIPULATION, C.YIELD_FARMING_EXPLOITS, C.COLLUSION}),
            _c("runtime_policy_cicd", "Runtime policy enforcement in CI/CD", MitigationLayer.PROCESS,
               {C.SPOOFING, C.TAMPERING, C.REPUDIATION, C.INFORMATION_DISCLOSURE, C.DENIAL_OF_SERVICE,
                C.ELEVATION_OF_PRIVILEGE},
               "policy-as-code validation of configurations against STRIDE risks"),
            _c("realtime_monitoring_response", "Real-time on-chain monitoring and response", MitigationLayer.WEB3_ANALYTICS,
               {C.DENIAL_OF_SERVICE, C.REENTRANCY_ORACLE_MANIPULATION, C.OFF_CHAIN_DATA_POISONING,
                C.TOKENISATION_RISKS, C.YIELD_FARMING_EXPLOITS},
               "alerts feed the incident ledger"),
            _c("user_education", "User education on phishing and wallet security", MitigationLayer.PROCESS,
               {C.PHISHING_SOCIAL_ENGINEERING, C.UNAWARENESS}),
            _c("post_quantum_signatures", "Post-quantum signature schemes", MitigationLayer.CRYPTO,
               {C.QUANTUM_THREATS}),
            _c("audit_logging", "Tamper-evident audit logging", MitigationLayer.TRADITIONAL,
               {C.REPUDIATION, C.NON_COMPLIANCE}),
            _c("supplier_audit", "Integrated code and supplier audits", MitigationLayer.PROCESS,
               {C.COLLUSION, C.TAMPERING, C.YIELD_FARMING_EXPLOITS, C.NON_COMPLIANCE},
               "code review combined with economic modelling"),
        ],
        key=lambda c: c.id,
    )
)
CONTROLS = {c.id: c for c in CATALOGUE}


class UnknownControlError(KeyError):
    def __init__(self, ids: Iterable[str]):
        self.ids = sorted(ids)
        super().__init__(f"unknown control ids: {', '.join(self.ids)}")

    def __str__(self) -> str:
        return self.args[0]


def controls_for(threat: Union[Threat, C]) -> list[Control]:
    cat = threat.category if isinstance(threat, Threat) else threat
    return [c for c in CATALOGUE if cat in c.applies_to]


@dataclass(frozen=True)
class CoverageReport:
    matched: dict[str, tuple[str, ...]]
    residual: tuple[ScoredThreat, ...]
    covered: int
    total: int

    @property
    def coverage_ratio(self) -> Fraction:
        return Fraction(self.covered, self.total) if self.total else Fraction(0)


def coverage(scored: Iterable[ScoredThreat], selected: Iterable[str]) -> CoverageReport:
    """Which scored threats are mitigated by at least one selected control.

    An empty threat set has ratio 0 by convention.
    """
    selected = set(selected)
    unknown = selected - CONTROLS.keys()
    if unknown:
        raise UnknownControlError(unknown)
    scored = list(scored)
    matched: dict[str, tuple[str, ...]] = {}
    residual = []
    for st in scored:
        hits = tuple(c.id for c in controls_for(st.threat) if c.id in selected)
        matched[st.id] = hits
        if not hits:
            residual.append(st)
    return CoverageReport(
        matched=dict(sorted(matched.items())),
        residual=tuple(prioritize(residual)),
        covered=len(scored) - len(residual),
        total=len(scored),
    )


def load_selection(path: Union[str, Path]) -> list[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("controls")
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise ValueError("control selection must be a JSON list of control ids")
    return data
