import pytest
from hypothesis import given, settings

from cntmf.dsl import ModelParseError, parse_model, serialize_model
from cntmf.model import BlockchainVariant, ElementKind, Layer, SystemModel, Element
from strategies import system_models


def test_minimal_model():
    m = parse_model('system "s"\nentity u "Users"\n')
    assert m.name == "s"
    assert [(e.id, e.kind) for e in m.elements] == [("u", ElementKind.EXTERNAL_ENTITY)]


def test_minimal_serialises_to_two_lines():
    m = parse_model('system "s"\nentity u "Users"\n')
    assert serialize_model(m).splitlines() == ['system "s"', 'entity u "Users"']


def test_onramp_chain(onramp_model):
    m = onramp_model
    non_boundary = [e for e in m.elements if e.kind is not ElementKind.PRIVILEGE_BOUNDARY]
    boundaries = [e for e in m.elements if e.kind is ElementKind.PRIVILEGE_BOUNDARY]
    assert len(non_boundary) == 8
    assert len(boundaries) == 2
    assert [e.id for e in non_boundary] == [
        "users", "requests", "api_gw", "wallet_call", "wallet_mgr", "signed_tx", "chain_node", "ledger",
    ]
    assert m.element("off_on_chain").variant is BlockchainVariant.OFF_ON_CHAIN_TRANSITION
    assert m.element("signed_tx").crosses == ("off_on_chain",)


def test_invalid_layer_keyword_lists_valid_ones():
    with pytest.raises(ModelParseError) as exc:
        parse_model('system "s"\nstore l "L" layer=datastore\n', "m.cntmf")
    (err,) = exc.value.errors
    assert err.span.line == 2
    assert err.expected == tuple(l.keyword for l in Layer)


def test_empty_input_needs_header():
    with pytest.raises(ModelParseError) as exc:
        parse_model("")
    assert "system" in exc.value.errors[0].message


def test_tags_sorted_on_output():
    m = parse_model('system "s"\nprocess w "W" layer=infra tags=personal_data,mpc\n')
    assert serialize_model(m).splitlines()[1] == 'process w "W" layer=infra tags=mpc,personal_data'


def test_crlf_and_comments():
    text = 'system "s"   # header\r\n\r\n# nothing\r\nentity u "U#1" layer=ui\r\n'
    m = parse_model(text)
    assert m.elements[0].name == "U#1"
    assert m.elements[0].layer is Layer.PRESENTATION_UI


def test_flow_fields():
    m = parse_model(
        'system "s"\nentity a "A"\nstore b "B"\nboundary x "X" variant=offonchain\n'
        'flow f a -> b "write" variant=crypto crosses=x tags=bridge var=7000000\n'
    )
    f = m.element("f")
    assert (f.source, f.target, f.name) == ("a", "b", "write")
    assert f.variant is BlockchainVariant.CRYPTO_FLOW
    assert f.crosses == ("x",)
    assert f.value_at_risk == 7_000_000


def test_actor_statement():
    m = parse_model('system "s"\nactor d "DPRK" archetype=state_sponsored note="key theft"\n')
    assert m.actors[0].note == "key theft"
    assert "note=" in serialize_model(m)


def test_duplicate_ids_are_parse_errors():
    with pytest.raises(ModelParseError) as exc:
        parse_model('system "s"\nentity a "A"\nprocess a "B"\n')
    assert exc.value.errors[0].span.line == 3


@pytest.mark.parametrize(
    "line",
    [
        'entity A "caps"',
        'entity a',
        'entity a "A" layer=',
        'entity a "A" colour=red',
        'entity a "A" layer=ui layer=app',
        'flow f a b',
        'flow f a -> "b"',
        'entity a "A" var=1e6',
        'entity a "A" variant=quantum',
        'actor x "X"',
        'entity a "A" tags=Bad',
        'boundary b "B" layer=ui',
        'entity a "bad \\q escape"',
        'system "again"',
    ],
)
def test_malformed_statement_reports_line(line):
    with pytest.raises(ModelParseError) as exc:
        parse_model(f'system "s"\n\n{line}\n')
    assert [e.span.line for e in exc.value.errors] == [3]


def test_errors_do_not_stop_at_first():
    text = 'system "s"\nwidget a "A"\nentity ok "OK"\nflow f a b\nstore s "S" var=-1\n'
    with pytest.raises(ModelParseError) as exc:
        parse_model(text)
    assert [e.span.line for e in exc.value.errors] == [2, 4, 5]


MALFORMED = {
    "bad_layer.cntmf": [2],
    "multiple_errors.cntmf": [4, 6, 7],
    "missing_header.cntmf": [1],
    "duplicate_id.cntmf": [3],
    "unterminated.cntmf": [2, 3],
}


@pytest.mark.parametrize("name, lines", sorted(MALFORMED.items()))
def test_malformed_fixtures(fixtures_dir, name, lines):
    from cntmf.dsl import load_model

    with pytest.raises(ModelParseError) as exc:
        load_model(fixtures_dir / "malformed" / name)
    assert [e.span.line for e in exc.value.errors] == lines
    assert all(e.message for e in exc.value.errors)


def test_every_malformed_fixture_is_listed(fixtures_dir):
    assert {p.name for p in (fixtures_dir / "malformed").iterdir()} == set(MALFORMED)


def test_non_utf8_rejected(tmp_path):
    from cntmf.dsl import load_model

    p = tmp_path / "m.cntmf"
    p.write_bytes(b'system "s"\nentity a "\xff"\n')
    with pytest.raises(ModelParseError) as exc:
        load_model(p)
    assert exc.value.errors[0].span.line == 2


@pytest.mark.parametrize("name", ["defi_integration", "exchange_hack", "onramp"])
def test_fixture_round_trip(fixtures_dir, name):
    from cntmf.dsl import load_model

    m = load_model(fixtures_dir / f"{name}.cntmf")
    again = parse_model(serialize_model(m))
    # field-by-field, independent of dataclass equality
    assert len(again.elements) == len(m.elements)
    for a, b in zip(m.elements, again.elements):
        for f in ("id", "name", "kind", "variant", "layer", "tags", "value_at_risk", "source", "target", "crosses", "members"):
            assert getattr(a, f) == getattr(b, f), (a.id, f)
    assert again.actors == m.actors
    assert again == m


@settings(max_examples=500, deadline=None)
@given(system_models())
def test_round_trip_generated(m):
    text = serialize_model(m)
    assert parse_model(text) == m
    assert serialize_model(parse_model(text)) == text


def test_weird_names_round_trip():
    m = SystemModel(
        'a "quoted" \\ name\n',
        (Element("x", "line sep\x85\r#not comment", ElementKind.PROCESS, layer=Layer.APPLICATION),),
    )
    assert parse_model(serialize_model(m)) == m
