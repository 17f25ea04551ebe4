from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cntmf.catalog import Threat, ThreatCategory as C, enumerate_threats
from cntmf.model import BlockchainVariant, Element, ElementKind as K, Layer, SystemModel
from cntmf.risk import (
    Band,
    Override,
    Provenance,
    ScoreInputs,
    ScoreRangeError,
    UnknownThreatError,
    band,
    build_heatmap,
    default_probability,
    economic_impact_from_loss,
    format_score,
    impact_bin,
    parse_overrides,
    prioritize,
    probability_bin,
    risk_score,
    score_all,
    score_threat,
)
from strategies import score_inputs, scored_threats

WORKED_CASES = [
    ((9, 8, 7, 0.7), "16.8"),
    ((8.5, 7, 6, 0.6), "12.9"),
    ((9, 10, 8, 0.8), "21.6"),
]


@pytest.mark.parametrize("args, shown", WORKED_CASES)
def test_worked_scores(args, shown):
    s = risk_score(ScoreInputs(*args))
    assert format_score(s) == shown
    assert s == float(shown)
    assert band(s) is Band.HIGH


def test_zero_probability():
    assert risk_score(ScoreInputs(10, 10, 10, 0)) == 0


@pytest.mark.parametrize("field, args", [
    ("technical_severity", (10.5, 0, 0, 0.5)),
    ("economic_impact", (0, -1, 0, 0.5)),
    ("regulatory_consequence", (0, 0, 11, 0.5)),
    ("exploit_probability", (0, 0, 0, 1.01)),
    ("exploit_probability", (0, 0, 0, float("nan"))),
])
def test_range_error_names_field(field, args):
    with pytest.raises(ScoreRangeError) as exc:
        risk_score(ScoreInputs(*args))
    assert exc.value.field == field


@pytest.mark.parametrize("score, expected", [
    (0, Band.LOW), (4.999, Band.LOW), (5.0, Band.MEDIUM), (10.0, Band.MEDIUM), (10.001, Band.HIGH), (16.8, Band.HIGH),
])
def test_band_edges(score, expected):
    assert band(score) is expected


@pytest.mark.parametrize("loss, impact", [
    (0, 0), (999, 0), (1_000, 2), (9_999, 2), (10_000, 4), (99_999, 4), (100_000, 6), (500_000, 6),
    (999_999, 6), (1_000_000, 7), (4_999_999, 7), (5_000_000, 8), (7_000_000, 8), (10_000_000, 8),
    (10_000_001, 10), (15_000_000, 10), (1_500_000_000, 10),
])
def test_economic_table(loss, impact):
    assert economic_impact_from_loss(loss) == impact


def test_negative_loss():
    with pytest.raises(ScoreRangeError):
        economic_impact_from_loss(-1)


@settings(max_examples=1000)
@given(st.floats(0, 1e12, allow_nan=False), st.floats(0, 1e12, allow_nan=False))
def test_economic_monotone(a, b):
    lo, hi = sorted((a, b))
    assert economic_impact_from_loss(lo) <= economic_impact_from_loss(hi)


@given(score_inputs, st.floats(0, 1, allow_nan=False))
def test_linear_in_probability(i, k):
    scaled = ScoreInputs(i.technical_severity, i.economic_impact, i.regulatory_consequence, i.exploit_probability * k)
    assert risk_score(scaled) == pytest.approx(k * risk_score(i), abs=1e-9)


def _probability_model():
    return SystemModel(
        "p",
        [
            Element("a", "A", K.PROCESS, layer=Layer.APPLICATION),
            Element("b", "B", K.DATA_STORE, layer=Layer.DATA_PERSISTENCE),
            Element("bridge", "", K.DATA_FLOW, source="a", target="b", tags={"bridge"}),
            Element("oracle", "O", K.EXTERNAL_ENTITY, variant=BlockchainVariant.ORACLE, layer=Layer.NETWORK_CONSENSUS),
            Element("wallet", "W", K.MULTI_PROCESS, layer=Layer.INFRASTRUCTURE, tags={"mpc"}),
        ],
    )


@pytest.mark.parametrize("tid, p", [
    ("bridge:T:1", 0.7),
    ("bridge:D:1", 0.7),
    ("oracle:CQ-R:1", 0.6),
    ("oracle:S:1", 0.5),
    ("wallet:CQ-C:1", 0.8),
    ("wallet:T:1", 0.8),
    ("wallet:S:1", 0.5),
    ("a:S:1", 0.5),
])
def test_default_probability(tid, p):
    m = _probability_model()
    t = next(t for t in enumerate_threats(m) if t.id == tid)
    assert default_probability(t, m) == p


def test_score_all_worked_override(defi_model):
    threats = enumerate_threats(defi_model)
    scored = score_all(threats, defi_model, {"price_oracle:CQ-R:1": Override(ts=8.5, ei=7, rc=6)})
    st_ = next(s for s in scored if s.id == "price_oracle:CQ-R:1")
    assert format_score(st_.score) == "12.9"
    assert st_.band is Band.HIGH
    assert st_.inputs.provenance["exploit_probability"] is Provenance.DEFAULT
    assert st_.inputs.provenance["technical_severity"] is Provenance.OVERRIDE


def test_value_at_risk_feeds_economic_impact(defi_model):
    threats = enumerate_threats(defi_model)
    st_ = next(s for s in score_all(threats, defi_model) if s.id == "bridge_xfer:T:1")
    assert st_.inputs.economic_impact == 8
    assert st_.inputs.provenance["economic_impact"] is Provenance.DERIVED_FROM_VALUE_AT_RISK
    assert st_.inputs.technical_severity == 5.0
    assert st_.inputs.exploit_probability == 0.7


def test_override_beats_value_at_risk(defi_model):
    threats = enumerate_threats(defi_model)
    st_ = next(s for s in score_all(threats, defi_model, {"bridge_xfer:T:1": Override(ei=3)}) if s.id == "bridge_xfer:T:1")
    assert st_.inputs.economic_impact == 3
    assert st_.inputs.provenance["economic_impact"] is Provenance.OVERRIDE


def test_score_all_empty(defi_model):
    assert score_all([], defi_model) == []


def test_unknown_override_ids(defi_model):
    with pytest.raises(UnknownThreatError) as exc:
        score_all(enumerate_threats(defi_model), defi_model, {"nope:S:1": Override(ts=1), "a:b": Override()})
    assert exc.value.ids == ["a:b", "nope:S:1"]


def test_suppress_drops_threat(defi_model):
    threats = enumerate_threats(defi_model)
    scored = score_all(threats, defi_model, {"users:S:1": Override(suppress=True)})
    assert len(scored) == len(threats) - 1


def test_parse_overrides_rejects_bad_fields():
    assert parse_overrides({"a:S:1": {"ts": 1}}) == {"a:S:1": Override(ts=1)}
    with pytest.raises(ValueError):
        parse_overrides({"a:S:1": {"severity": 1}})
    with pytest.raises(ValueError):
        parse_overrides({"a:S:1": {"ts": "high"}})


def _st(tid, target, cat, ts, ei, rc, p):
    return score_threat(Threat(tid, target, cat, "R", ""), ScoreInputs(ts, ei, rc, p))


def test_prioritize_worked_order():
    a = _st("x:T:1", "x", C.TAMPERING, 8.5, 7, 6, 0.6)
    b = _st("y:T:1", "y", C.TAMPERING, 9, 10, 8, 0.8)
    c = _st("z:T:1", "z", C.TAMPERING, 9, 8, 7, 0.7)
    assert [format_score(s.score) for s in prioritize([a, b, c])] == ["21.6", "16.8", "12.9"]


def test_prioritize_tie_breaks():
    # 7 * 0.6 == 6 * 0.7 == 4.2
    low_p = _st("a:T:1", "a", C.TAMPERING, 7, 0, 0, 0.6)
    high_p = _st("b:T:1", "b", C.TAMPERING, 6, 0, 0, 0.7)
    assert low_p.score == high_p.score
    assert prioritize([low_p, high_p]) == [high_p, low_p]
    b = _st("b:S:1", "b", C.SPOOFING, 5, 5, 5, 0.5)
    a = _st("a:T:1", "a", C.TAMPERING, 5, 5, 5, 0.5)
    a2 = _st("a:S:1", "a", C.SPOOFING, 5, 5, 5, 0.5)
    assert prioritize([b, a, a2]) == [a2, a, b]


@given(scored_threats())
def test_prioritize_permutation_and_idempotent(xs):
    once = prioritize(xs)
    assert sorted(map(id, once)) == sorted(map(id, xs))
    assert prioritize(once) == once


@given(scored_threats())
def test_band_consistent(xs):
    for s in xs:
        assert s.band is band(s.score)
        assert 0 <= s.score <= 30


def _brute_bins(i: ScoreInputs):
    """Exact rational arithmetic from the decimal inputs."""
    f = lambda x: Fraction(repr(float(x)))
    p = f(i.exploit_probability)
    mean = (f(i.technical_severity) + f(i.economic_impact) + f(i.regulatory_consequence)) / 3
    row = next(r for r in range(5) if r == 4 or p < Fraction(r + 1, 5))
    col = next(c for c in range(5) if c == 4 or mean < 2 * (c + 1))
    return row, col


def test_heatmap_derived_placement():
    s = _st("b:T:1", "b", C.TAMPERING, 9, 8, 7, 0.7)
    hm = build_heatmap([s])
    assert hm.cell_of("b:T:1") == (3, 4)  # [0.6,0.8) x [8,10]
    assert hm.cells[3][4].band is Band.HIGH


def test_bin_edges():
    assert [probability_bin(p) for p in (0, 0.19, 0.2, 0.4, 0.6, 0.79, 0.8, 1.0)] == [0, 0, 1, 2, 3, 3, 4, 4]
    assert impact_bin(ScoreInputs(6, 6, 6, 0)) == 3
    assert impact_bin(ScoreInputs(2, 2, 1.9, 0)) == 0
    assert impact_bin(ScoreInputs(10, 10, 10, 0)) == 4


def test_empty_heatmap():
    hm = build_heatmap([])
    assert len(hm.cells) == 5 and all(len(r) == 5 for r in hm.cells)
    assert hm.total == 0


def test_two_threats_one_cell():
    a = _st("b:T:1", "b", C.TAMPERING, 5, 5, 5, 0.5)
    b = _st("a:S:1", "a", C.SPOOFING, 5, 5, 4, 0.45)
    hm = build_heatmap([a, b])
    assert hm.cells[2][2].threat_ids == ("a:S:1", "b:T:1")


@settings(max_examples=300)
@given(scored_threats())
def test_heatmap_partition(xs):
    hm = build_heatmap(xs)
    assert hm.total == len(xs)
    for s in xs:
        assert hm.cell_of(s.id) == _brute_bins(s.inputs)
    for row in hm.cells:
        for cell in row:
            if cell.count:
                assert cell.band is max((s.band for s in xs if s.id in cell.threat_ids), key=lambda b: b.rank)
