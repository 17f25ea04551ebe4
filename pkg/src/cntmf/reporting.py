"""Assessment assembly and the renderers: canonical JSON, Markdown, DOT and heatmap grids.

Every renderer is a pure function of its input; with the timestamp left out,
identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from datetime import timedelta
from fractions import Fraction
from typing import Optional

from cntmf import __version__
from cntmf.catalog import (
    CRYPTOQ,
    LINDDUN,
    STRIDE,
    ApiRisk,
    Threat,
    ThreatCategory,
    enumerate_threats,
    rule_table,
    STRIDE_TO_API,
)
from cntmf.feedback import BENCHMARK_MEAN_LOSS_USD, MTTR_TARGET, MetricsSnapshot, meets_mttr_target
from cntmf.mitigation import CATALOGUE, CoverageReport, controls_for, coverage
from cntmf.model import (
    Actor,
    ActorArchetype,
    BlockchainVariant,
    Element,
    ElementKind,
    Layer,
    SystemModel,
    layer_matrix,
)
from cntmf.risk import (
    IMPACT_BINS,
    PROBABILITY_BINS,
    Band,
    Heatmap,
    HeatmapCell,
    OverrideSet,
    Provenance,
    ScoreInputs,
    ScoredThreat,
    build_heatmap,
    format_score,
    prioritize,
    score_all,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Assessment:
    model: SystemModel
    threats: tuple[Threat, ...]
    scored: tuple[ScoredThreat, ...]
    heatmap: Heatmap
    suppressed: tuple[str, ...] = ()
    selected_controls: Optional[tuple[str, ...]] = None
    coverage: Optional[CoverageReport] = None
    metrics: Optional[MetricsSnapshot] = None
    tool_version: str = __version__
    created_at: Optional[str] = None

    def check(self) -> None:
        ids = set(self.model.element_ids)
        for st in self.scored:
            if st.threat.target not in ids:
                raise ValueError(f"scored threat {st.id} targets unknown element {st.threat.target}")
        if self.heatmap.total != len(self.scored):
            raise ValueError("heatmap occupancy does not match the scored threat count")


def assess(
    model: SystemModel,
    overrides: Optional[OverrideSet] = None,
    selected_controls: Optional[Iterable[str]] = None,
    metrics: Optional[MetricsSnapshot] = None,
    priors: Optional[Mapping[ThreatCategory, float]] = None,
    created_at: Optional[str] = None,
) -> Assessment:
    """Run enumerate -> score -> prioritise -> heatmap -> coverage on a valid model."""
    threats = enumerate_threats(model)
    scored = prioritize(score_all(threats, model, overrides or {}, priors))
    kept = {st.id for st in scored}
    selected = None if selected_controls is None else tuple(sorted(set(selected_controls)))
    cov = None if selected is None else coverage(scored, selected)
    a = Assessment(
        model=model,
        threats=tuple(threats),
        scored=tuple(scored),
        heatmap=build_heatmap(scored),
        suppressed=tuple(t.id for t in threats if t.id not in kept),
        selected_controls=selected,
        coverage=cov,
        metrics=metrics,
        created_at=created_at,
    )
    a.check()
    return a


# --- structured export ------------------------------------------------------


def _element_dict(el: Element) -> dict:
    return {
        "id": el.id,
        "name": el.name,
        "kind": el.kind.value,
        "variant": el.variant.value if el.variant else None,
        "layer": el.layer.value if el.layer else None,
        "tags": sorted(el.tags),
        "value_at_risk": el.value_at_risk,
        "source": el.source,
        "target": el.target,
        "crosses": list(el.crosses),
        "members": list(el.members),
    }


def _threat_dict(t: Threat) -> dict:
    return {
        "id": t.id,
        "target": t.target,
        "category": t.category.value,
        "family": t.category.family.value,
        "code": t.category.code,
        "rule": t.rule,
        "rationale": t.rationale,
        "api_mappings": sorted((a.name for a in t.api_mappings), key=lambda n: int(n[3:])),
        "suggested_actor": t.suggested_actor.value if t.suggested_actor else None,
    }


def _scored_dict(st: ScoredThreat) -> dict:
    i = st.inputs
    return {
        "threat_id": st.id,
        "target": st.threat.target,
        "category": st.threat.category.value,
        "score": st.score,
        "score_display": format_score(st.score),
        "band": st.band.value,
        "inputs": {
            "technical_severity": i.technical_severity,
            "economic_impact": i.economic_impact,
            "regulatory_consequence": i.regulatory_consequence,
            "exploit_probability": i.exploit_probability,
            "provenance": {k: v.value for k, v in i.provenance.items()},
        },
    }


def _seconds(d: Optional[timedelta]) -> Optional[float]:
    return None if d is None else d.total_seconds()


def metrics_to_dict(m: MetricsSnapshot) -> dict:
    return {
        "quarter": m.quarter,
        "incident_count": m.incident_count,
        "open_count": m.open_count,
        "total_loss_usd": m.total_loss_usd,
        "mean_loss_usd": m.mean_loss_usd,
        "mttr_seconds": _seconds(m.mttr),
        "mttr_target_met": m.mttr_target_met,
        "mttr_by_category_seconds": {k: _seconds(v) for k, v in m.mttr_by_category.items()},
        "mttr_target_met_by_category": {k: meets_mttr_target(v) for k, v in m.mttr_by_category.items()},
        "by_source": dict(m.by_source),
        "benchmark_mean_loss_usd": BENCHMARK_MEAN_LOSS_USD,
        "benchmark_comparison": m.benchmark_comparison,
    }


def assessment_to_dict(a: Assessment, timestamp: bool = True) -> dict:
    matrix = layer_matrix(a.model)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": a.tool_version,
        "created_at": a.created_at if timestamp else None,
        "model": {
            "name": a.model.name,
            "schema_version": a.model.schema_version,
            "actors": [
                {"id": x.id, "name": x.name, "archetype": x.archetype.value, "note": x.note}
                for x in a.model.actors
            ],
            "elements": [_element_dict(el) for el in a.model.elements],
        },
        "layer_matrix": {
            layer.value: {
                "elements": list(matrix.rows[layer]),
                "interdependencies": [
                    {"flow": d.flow, "source": d.source, "target": d.target,
                     "source_layer": d.source_layer.value, "target_layer": d.target_layer.value}
                    for d in matrix.interdependencies[layer]
                ],
            }
            for layer in Layer
        },
        "threats": [_threat_dict(t) for t in a.threats],
        "scored": [_scored_dict(st) for st in a.scored],
        "suppressed": list(a.suppressed),
        "heatmap": {
            "probability_bins": list(PROBABILITY_BINS),
            "impact_bins": list(IMPACT_BINS),
            "cells": [
                [{"threat_ids": list(c.threat_ids), "band": c.band.value if c.band else None} for c in row]
                for row in a.heatmap.cells
            ],
        },
        "coverage": None,
        "metrics": metrics_to_dict(a.metrics) if a.metrics else None,
    }
    if a.coverage is not None:
        cov = a.coverage
        doc["coverage"] = {
            "selected": list(a.selected_controls or ()),
            "matched": {k: list(v) for k, v in cov.matched.items()},
            "residual": [st.id for st in cov.residual],
            "covered": cov.covered,
            "total": cov.total,
            "coverage_ratio": float(cov.coverage_ratio),
            "coverage_ratio_exact": str(cov.coverage_ratio),
        }
    return doc


def dumps_canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_structured(a: Assessment, timestamp: bool = True) -> str:
    return dumps_canonical(assessment_to_dict(a, timestamp))


def _opt(enum, value):
    return None if value is None else enum(value)


def _td(seconds: Optional[float]) -> Optional[timedelta]:
    return None if seconds is None else timedelta(seconds=seconds)


def read_structured(text: str) -> Assessment:
    """Rebuild an :class:`Assessment` from :func:`render_structured` output."""
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    m = doc["model"]
    model = SystemModel(
        name=m["name"],
        schema_version=m["schema_version"],
        actors=tuple(Actor(x["id"], x["name"], ActorArchetype(x["archetype"]), x["note"]) for x in m["actors"]),
        elements=tuple(
            Element(
                id=e["id"],
                name=e["name"],
                kind=ElementKind(e["kind"]),
                variant=_opt(BlockchainVariant, e["variant"]),
                layer=_opt(Layer, e["layer"]),
                tags=frozenset(e["tags"]),
                value_at_risk=e["value_at_risk"],
                source=e["source"],
                target=e["target"],
                crosses=tuple(e["crosses"]),
                members=tuple(e["members"]),
            )
            for e in m["elements"]
        ),
    )
    threats = tuple(
        Threat(
            id=t["id"],
            target=t["target"],
            category=ThreatCategory(t["category"]),
            rule=t["rule"],
            rationale=t["rationale"],
            api_mappings=frozenset(ApiRisk[n] for n in t["api_mappings"]),
            suggested_actor=_opt(ActorArchetype, t["suggested_actor"]),
        )
        for t in doc["threats"]
    )
    by_id = {t.id: t for t in threats}
    scored = []
    for s in doc["scored"]:
        i = s["inputs"]
        inputs = ScoreInputs(
            i["technical_severity"],
            i["economic_impact"],
            i["regulatory_consequence"],
            i["exploit_probability"],
            {k: Provenance(v) for k, v in i["provenance"].items()},
        )
        scored.append(ScoredThreat(by_id[s["threat_id"]], inputs, s["score"], Band(s["band"])))
    scored_by_id = {st.id: st for st in scored}
    heatmap = Heatmap(
        tuple(
            tuple(HeatmapCell(tuple(c["threat_ids"]), _opt(Band, c["band"])) for c in row)
            for row in doc["heatmap"]["cells"]
        )
    )
    cov = None
    selected = None
    if doc["coverage"] is not None:
        c = doc["coverage"]
        selected = tuple(c["selected"])
        cov = CoverageReport(
            matched={k: tuple(v) for k, v in c["matched"].items()},
            residual=tuple(scored_by_id[i] for i in c["residual"]),
            covered=c["covered"],
            total=c["total"],
        )
    metrics = None
    if doc["metrics"] is not None:
        x = doc["metrics"]
        metrics = MetricsSnapshot(
            quarter=x["quarter"],
            incident_count=x["incident_count"],
            open_count=x["open_count"],
            total_loss_usd=x["total_loss_usd"],
            mean_loss_usd=x["mean_loss_usd"],
            mttr=_td(x["mttr_seconds"]),
            mttr_by_category={k: _td(v) for k, v in x["mttr_by_category_seconds"].items()},
            by_source=dict(x["by_source"]),
        )
    return Assessment(
        model=model,
        threats=threats,
        scored=tuple(scored),
        heatmap=heatmap,
        suppressed=tuple(doc["suppressed"]),
        selected_controls=selected,
        coverage=cov,
        metrics=metrics,
        tool_version=doc["tool_version"],
        created_at=doc["created_at"],
    )


def catalog_document(controls: bool = False) -> dict:
    """Rule tables (default) or the control catalogue, as plain data."""
    if controls:
        return {
            "schema_version": SCHEMA_VERSION,
            "controls": [
                {
                    "id": c.id,
                    "name": c.name,
                    "mitigation_layer": c.mitigation_layer.value,
                    "applies_to": sorted(x.value for x in c.applies_to),
                    "note": c.note,
                }
                for c in CATALOGUE
            ],
        }

    def cat(c: ThreatCategory) -> dict:
        return {
            "name": c.value,
            "code": c.code,
            "api_mappings": sorted((a.name for a in STRIDE_TO_API.get(c, ())), key=lambda n: int(n[3:])),
        }

    return {
        "schema_version": SCHEMA_VERSION,
        "categories": {
            "stride": [cat(c) for c in STRIDE],
            "cryptoq": [cat(c) for c in CRYPTOQ],
            "linddun": [cat(c) for c in LINDDUN],
        },
        "api_risks": [{"id": a.name, "name": a.value} for a in ApiRisk],
        "rules": rule_table(),
    }


# --- markdown ---------------------------------------------------------------


def _md_cell(text: str) -> str:
    return text.replace("\\", "\\\\").replace("|", "\\|").replace("\n", " ")


def _hours(d: Optional[timedelta]) -> str:
    return "n/a" if d is None else f"{d.total_seconds() / 3600:.2f} h"


def _usd(x) -> str:
    return f"${x:,.0f}" if isinstance(x, int) or float(x).is_integer() else f"${x:,.2f}"


def _ratio(r: Fraction) -> str:
    return f"{float(r) * 100:.1f}%"


def _cell_text(cell: HeatmapCell) -> str:
    return f"{cell.count} {cell.band.letter}" if cell.count else "0"


def render_markdown(a: Assessment) -> str:
    out: list[str] = []
    w = out.append
    model = a.model
    w(f"# Threat assessment: {model.name}")
    w("")
    if a.created_at:
        w(f"Generated {a.created_at} by cntmf {a.tool_version}.")
    else:
        w(f"Generated by cntmf {a.tool_version}.")
    w("")

    w("## Model Summary")
    w("")
    kinds = {k: sum(el.kind is k for el in model.elements) for k in ElementKind}
    w(
        f"{len(model.elements)} elements ({kinds[ElementKind.DATA_FLOW]} flows, "
        f"{kinds[ElementKind.PRIVILEGE_BOUNDARY]} boundaries), {len(model.actors)} actors."
    )
    w("")
    matrix = layer_matrix(model)
    w("| Layer | Elements | Interdependencies |")
    w("|---|---|---|")
    for layer in Layer:
        els = ", ".join(matrix.rows[layer]) or "-"
        deps = ", ".join(
            f"{d.flow} ({d.source_layer.value} -> {d.target_layer.value})" for d in matrix.interdependencies[layer]
        ) or "-"
        w(f"| {layer.value} | {_md_cell(els)} | {_md_cell(deps)} |")
    if matrix.unassigned:
        w("")
        w(f"Elements without a layer: {', '.join(matrix.unassigned)}.")
    if model.actors:
        w("")
        w("| Actor | Name | Archetype |")
        w("|---|---|---|")
        for x in model.actors:
            w(f"| {x.id} | {_md_cell(x.name)} | {x.archetype.value} |")
    w("")

    w("## Threats")
    w("")
    if not a.scored:
        w("_No threats._")
    else:
        w("| # | Id | Target | Category | Score | Band | Controls |")
        w("|---|---|---|---|---|---|---|")
        for n, st in enumerate(a.scored, start=1):
            ctrls = ", ".join(c.id for c in controls_for(st.threat))
            w(
                f"| {n} | {st.id} | {st.threat.target} | {st.threat.category.value} | "
                f"{format_score(st.score)} | {st.band.value} | {ctrls} |"
            )
    if a.suppressed:
        w("")
        w(f"Suppressed by overrides: {', '.join(a.suppressed)}.")
    w("")

    w("## Heatmap")
    w("")
    w("Rows: exploit probability. Columns: mean of severity, economic and regulatory scores.")
    w("")
    w("| Probability | " + " | ".join(IMPACT_BINS) + " |")
    w("|---|" + "---|" * len(IMPACT_BINS))
    for r in reversed(range(5)):
        w(f"| {PROBABILITY_BINS[r]} | " + " | ".join(_cell_text(c) for c in a.heatmap.cells[r]) + " |")
    w("")

    w("## Mitigation Coverage")
    w("")
    if a.coverage is None:
        w("_No control selection supplied._")
    else:
        cov = a.coverage
        w(f"Selected controls: {', '.join(a.selected_controls or ()) or 'none'}.")
        w("")
        w(f"Coverage: {cov.covered}/{cov.total} threats ({_ratio(cov.coverage_ratio)}).")
        if cov.residual:
            w("")
            w("Residual threats:")
            w("")
            for st in cov.residual:
                w(f"- {st.id} ({format_score(st.score)} {st.band.value})")
    w("")

    w("## Metrics")
    w("")
    m = a.metrics
    if m is None:
        w("_No incident ledger supplied._")
    else:
        target_h = MTTR_TARGET.total_seconds() / 3600
        w(f"Quarter {m.quarter}: {m.incident_count} incidents, {m.open_count} open.")
        w("")
        w(f"- Total loss: {_usd(m.total_loss_usd)}")
        w(f"- Mean loss per incident: {_usd(m.mean_loss_usd)}")
        if m.benchmark_comparison:
            w(
                f"  ({m.benchmark_comparison} the H1-2025 industry average of "
                f"{_usd(BENCHMARK_MEAN_LOSS_USD)} per incident)"
            )
        flag = {True: f"meets the <{target_h:.0f} h target", False: f"misses the <{target_h:.0f} h target", None: ""}
        w(f"- MTTR: {_hours(m.mttr)}" + (f" ({flag[m.mttr_target_met]})" if m.mttr is not None else ""))
        for k, v in m.mttr_by_category.items():
            w(f"  - {k}: {_hours(v)} ({flag[meets_mttr_target(v)]})")
        w("- By source: " + ", ".join(f"{k} {v}" for k, v in m.by_source.items()))
    return "\n".join(out) + "\n"


# --- DOT --------------------------------------------------------------------


def _dot_str(s: str) -> str:
    s = s.replace("\\", "\\\\").replace('"', '\\"').replace("\r", "").replace("\n", "\\n")
    return f'"{s}"'


def _attrs(pairs: list[tuple[str, str]]) -> str:
    return "[" + ", ".join(f"{k}={v}" for k, v in pairs) + "]"


def _node_attrs(el: Element) -> list[tuple[str, str]]:
    name = el.display_name
    v = el.variant
    if el.kind is ElementKind.EXTERNAL_ENTITY:
        label = f"{name}\n[oracle] [chain]" if v is BlockchainVariant.ORACLE else name
        return [("shape", "box"), ("label", _dot_str(label))]
    if el.kind is ElementKind.PROCESS:
        label = f"[gear] {name}" if v is BlockchainVariant.SMART_CONTRACT else name
        return [("shape", "ellipse"), ("label", _dot_str(label))]
    if el.kind is ElementKind.MULTI_PROCESS:
        label = f"{name}\n[DeFi]" if v is BlockchainVariant.DEFI else name
        return [("shape", "ellipse"), ("peripheries", "2"), ("label", _dot_str(label))]
    # data store
    if v is BlockchainVariant.ON_CHAIN_LEDGER:
        return [("shape", "cylinder"), ("peripheries", "2"), ("label", _dot_str(f"[chain] {name}"))]
    return [("shape", "cylinder"), ("label", _dot_str(name))]


def render_dfd(model: SystemModel) -> str:
    lines = [f"digraph {_dot_str(model.name)} {{", "  rankdir=LR;", f"  label={_dot_str(model.name)};"]
    placed: set[str] = set()
    owner: dict[str, str] = {}
    for el in model.elements:
        if el.kind is ElementKind.PRIVILEGE_BOUNDARY:
            for mid in el.members:
                owner.setdefault(mid, el.id)

    def node_line(el: Element, indent: str) -> str:
        placed.add(el.id)
        return f"{indent}{_dot_str(el.id)} {_attrs(_node_attrs(el))};"

    for el in model.elements:
        if el.kind is ElementKind.PRIVILEGE_BOUNDARY:
            label = el.display_name
            if el.variant is BlockchainVariant.OFF_ON_CHAIN_TRANSITION:
                label += " [off/on-chain]"
            lines.append(f"  subgraph {_dot_str('cluster_' + el.id)} {{")
            lines.append(f"    label={_dot_str(label)};")
            lines.append("    style=dashed;")
            if el.variant is BlockchainVariant.OFF_ON_CHAIN_TRANSITION:
                lines.append("    penwidth=2;")
            members = [model.get(mid) for mid in el.members if owner.get(mid) == el.id]
            members = [m for m in members if m is not None and m.kind.is_node and m.id not in placed]
            if not members:
                # an empty cluster is not drawn; keep the boundary visible
                lines.append(
                    f"    {_dot_str(el.id + '__boundary')} "
                    f"{_attrs([('shape', 'plaintext'), ('label', _dot_str(label))])};"
                )
            for m in members:
                lines.append(node_line(m, "    "))
            lines.append("  }")
        elif el.kind.is_node and el.id not in owner and el.id not in placed:
            lines.append(node_line(el, "  "))
    for el in model.elements:
        if el.kind is not ElementKind.DATA_FLOW:
            continue
        attrs = [("style", "solid")]
        label = el.name
        if el.variant is BlockchainVariant.CRYPTO_FLOW:
            attrs = [("style", "bold")]
            label = f"[lock] {label}".rstrip()
        if label:
            attrs.append(("label", _dot_str(label)))
        lines.append(f"  {_dot_str(el.source or '')} -> {_dot_str(el.target or '')} {_attrs(attrs)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- heatmap grids ----------------------------------------------------------

_ROW_LABELS = ("0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0")
_COL_LABELS = ("0-2", "2-4", "4-6", "6-8", "8-10")


def _grid_cell(cell: HeatmapCell) -> str:
    return f"{cell.count}:{cell.band.letter}" if cell.count else "0:-"


def render_heatmap_grid(heatmap: Heatmap, format: str = "ascii") -> str:
    """Render the grid with the highest probability row first.

    csv cells are ``count:band-letter`` (``0:-`` when empty).
    """
    rows = list(reversed(range(5)))
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["probability/impact", *_COL_LABELS])
        for r in rows:
            writer.writerow([_ROW_LABELS[r], *(_grid_cell(c) for c in heatmap.cells[r])])
        return buf.getvalue()
    if format == "ascii":
        width = 7
        head = "p \\ impact".ljust(11) + "|" + "|".join(c.center(width) for c in _COL_LABELS) + "|"
        sep = "-" * 11 + "+" + "+".join("-" * width for _ in _COL_LABELS) + "+"
        out = ["Risk heatmap (count:band)", head, sep]
        for r in rows:
            cells = [(_grid_cell(c) if c.count else ".").center(width) for c in heatmap.cells[r]]
            out.append(_ROW_LABELS[r].ljust(11) + "|" + "|".join(cells) + "|")
        out.append(sep)
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown heatmap format {format!r}; expected ascii or csv")
