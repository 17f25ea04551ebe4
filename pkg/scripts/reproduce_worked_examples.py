"""Score the shipped worked-example models and print the headline threats.

    python3 scripts/reproduce_worked_examples.py
"""

from __future__ import annotations

from pathlib import Path

from cntmf.dsl import load_model
from cntmf.feedback import load_ledger, quarterly_snapshot
from cntmf.reporting import assess, render_heatmap_grid
from cntmf.risk import format_score, load_overrides

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# model name -> (threat id, expected display score)
HEADLINES = {
    "defi_integration": [("bridge_xfer:T:1", "16.8"), ("price_oracle:CQ-R:1", "12.9")],
    "exchange_hack": [("hot_wallet:CQ-C:1", "21.6")],
}


def run(name: str) -> bool:
    model = load_model(FIXTURES / f"{name}.cntmf")
    a = assess(model, load_overrides(FIXTURES / f"{name}.overrides.json"))
    by_id = {st.id: st for st in a.scored}
    print(f"== {model.name} ({len(a.scored)} threats)")
    ok = True
    for tid, want in HEADLINES[name]:
        st = by_id[tid]
        i = st.inputs
        got = format_score(st.score)
        ok &= got == want
        print(
            f"  {tid:<22} ({i.technical_severity:g} + {i.economic_impact:g} + {i.regulatory_consequence:g})"
            f" x {i.exploit_probability:g} = {got} {st.band.value}  [expected {want}]"
        )
    print(render_heatmap_grid(a.heatmap, "ascii"))
    return ok


def main() -> int:
    ok = all([run(name) for name in HEADLINES])
    snap = quarterly_snapshot(load_ledger(FIXTURES / "incidents_2025q1.jsonl"), "2025Q1")
    hours = snap.mttr.total_seconds() / 3600
    print(f"== sample ledger {snap.quarter}: MTTR {hours:.1f} h, target met: {snap.mttr_target_met}, "
          f"mean loss ${snap.mean_loss_usd:,.0f} ({snap.benchmark_comparison} benchmark)")
    print("all headline scores reproduced" if ok else "MISMATCH")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
