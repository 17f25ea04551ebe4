"""Reader and writer for ``.cntmf`` model files.

One statement per line, ``#`` starts a comment::

    system "Digital bank"
    actor dprk "Lazarus" archetype=state_sponsored
    entity users "Users" layer=ui tags=user_facing
    process api_gw "API Gateway" layer=traditional
    boundary fiat_defi "Fiat/DeFi" variant=offonchain members=defi_mgr
    flow deposit users -> api_gw "Fiat Deposit Request" crosses=fiat_defi

String literals follow JSON escaping rules. Every malformed line yields its
own error; parsing never stops at the first one.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from cntmf.model import (
    Actor,
    ActorArchetype,
    BlockchainVariant,
    Element,
    ElementKind,
    Layer,
    SourceSpan,
    SystemModel,
)

IDENT_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")

NODE_KEYWORDS = {
    "entity": ElementKind.EXTERNAL_ENTITY,
    "process": ElementKind.PROCESS,
    "multiprocess": ElementKind.MULTI_PROCESS,
    "store": ElementKind.DATA_STORE,
}
KIND_KEYWORDS = {
    **NODE_KEYWORDS,
    "boundary": ElementKind.PRIVILEGE_BOUNDARY,
    "flow": ElementKind.DATA_FLOW,
}
STATEMENTS = ("system", "actor", *KIND_KEYWORDS)

VARIANT_KEYWORDS = {
    "oracle": BlockchainVariant.ORACLE,
    "contract": BlockchainVariant.SMART_CONTRACT,
    "defi": BlockchainVariant.DEFI,
    "onchain": BlockchainVariant.ON_CHAIN_LEDGER,
    "crypto": BlockchainVariant.CRYPTO_FLOW,
    "offonchain": BlockchainVariant.OFF_ON_CHAIN_TRANSITION,
}
ARCHETYPE_KEYWORDS = {
    "state_sponsored": ActorArchetype.STATE_SPONSORED,
    "insider": ActorArchetype.INSIDER,
    "phishing": ActorArchetype.PHISHING_SYNDICATE,
    "bot": ActorArchetype.AUTOMATED_BOT,
}
LAYER_KEYWORDS = [layer.keyword for layer in Layer]

_NODE_ATTRS = ("variant", "layer", "tags", "var")
_FLOW_ATTRS = ("variant", "crosses", "tags", "var")
_BOUNDARY_ATTRS = ("variant", "members")


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    message: str
    expected: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if not self.message:
            raise ValueError("ParseError needs a message")

    def __str__(self) -> str:
        s = f"{self.span}: {self.message}"
        if self.expected:
            s += f" (expected one of: {', '.join(self.expected)})"
        return s


class ModelParseError(Exception):
    """Raised by :func:`parse_model` carrying every error found."""

    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        super().__init__("\n".join(str(e) for e in errors))


class _LineError(Exception):
    def __init__(self, column: int, message: str, expected=None):
        self.column = column
        self.message = message
        self.expected = tuple(expected) if expected else None


# --- lexing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<arrow>->)
  | (?P<attr>[A-Za-z_][A-Za-z0-9_]*)=(?P<aval>"(?:[^"\\]|\\.)*"|[^\s"\#]*)
  | (?P<word>[^\s"\#=]+)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # "string" | "arrow" | "attr" | "word"
    text: str
    col: int
    key: str = ""


def _decode_string(lit: str, col: int) -> str:
    try:
        return json.loads(lit)
    except json.JSONDecodeError as exc:
        raise _LineError(col, f"invalid string literal: {exc.msg}") from None


def _tokenize(line: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            if line[pos] == '"':
                raise _LineError(pos + 1, "unterminated string literal")
            raise _LineError(pos + 1, f"unexpected character {line[pos]!r}")
        col = pos + 1
        pos = m.end()
        kind = m.lastgroup
        if kind in ("ws",):
            continue
        if kind == "comment":
            break
        if kind == "aval":
            toks.append(_Tok("attr", m.group("aval"), col, key=m.group("attr")))
        elif kind == "string":
            toks.append(_Tok("string", _decode_string(m.group(0), col), col))
        else:
            toks.append(_Tok(kind, m.group(0), col))
    return toks


# --- parsing ----------------------------------------------------------------


class _Line:
    def __init__(self, toks: list[_Tok], end_col: int):
        self.toks = toks
        self.i = 0
        self.end_col = end_col

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def col(self) -> int:
        t = self.peek()
        return t.col if t else self.end_col

    def ident(self, what: str) -> str:
        t = self.peek()
        if t is None or t.kind != "word":
            raise _LineError(self.col(), f"expected {what}")
        if not IDENT_RE.match(t.text):
            raise _LineError(t.col, f"invalid identifier {t.text!r} for {what}; use [a-z_][a-z0-9_]*")
        self.i += 1
        return t.text

    def string(self, what: str) -> str:
        t = self.peek()
        if t is None or t.kind != "string":
            raise _LineError(self.col(), f"expected quoted {what}")
        self.i += 1
        return t.text

    def maybe_string(self) -> Optional[str]:
        t = self.peek()
        if t is not None and t.kind == "string":
            self.i += 1
            return t.text
        return None

    def arrow(self) -> None:
        t = self.peek()
        if t is None or t.kind != "arrow":
            raise _LineError(self.col(), "expected '->'")
        self.i += 1

    def attrs(self, allowed: tuple[str, ...]) -> dict[str, _Tok]:
        out: dict[str, _Tok] = {}
        while (t := self.peek()) is not None:
            if t.kind != "attr":
                raise _LineError(t.col, f"unexpected {t.text!r}; expected key=value", allowed)
            if t.key not in allowed:
                raise _LineError(t.col, f"unknown attribute {t.key!r}", allowed)
            if t.key in out:
                raise _LineError(t.col, f"attribute {t.key!r} given twice")
            out[t.key] = t
            self.i += 1
        return out


def _keyword(tok: _Tok, table: dict, what: str):
    if tok.text not in table:
        raise _LineError(tok.col, f"invalid {what} {tok.text!r}", list(table))
    return table[tok.text]


def _ident_list(tok: _Tok) -> tuple[str, ...]:
    parts = tok.text.split(",")
    for p in parts:
        if not IDENT_RE.match(p):
            raise _LineError(tok.col, f"invalid identifier {p!r} in {tok.key}=")
    return tuple(parts)


def _usd(tok: _Tok) -> int:
    if not tok.text.isascii() or not tok.text.isdigit():
        raise _LineError(tok.col, f"var= expects a non-negative USD integer, got {tok.text!r}")
    return int(tok.text)


def _element_fields(attrs: dict[str, _Tok]) -> dict:
    fields: dict = {}
    if "variant" in attrs:
        fields["variant"] = _keyword(attrs["variant"], VARIANT_KEYWORDS, "variant")
    if "layer" in attrs:
        fields["layer"] = _keyword(attrs["layer"], {k: Layer.from_keyword(k) for k in LAYER_KEYWORDS}, "layer")
    if "tags" in attrs:
        fields["tags"] = frozenset(_ident_list(attrs["tags"]))
    if "var" in attrs:
        fields["value_at_risk"] = _usd(attrs["var"])
    if "crosses" in attrs:
        fields["crosses"] = _ident_list(attrs["crosses"])
    if "members" in attrs:
        fields["members"] = _ident_list(attrs["members"])
    return fields


def parse_model(text: str, filename: str = "<string>") -> SystemModel:
    """Parse model source text.

    Raises :class:`ModelParseError` listing every malformed statement.
    """
    errors: list[ParseError] = []
    name: Optional[str] = None
    schema = 1
    elements: list[Element] = []
    actors: list[Actor] = []
    seen: dict[str, int] = {}

    lines = text.split("\n")
    for lineno, raw in enumerate(lines, start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        try:
            toks = _tokenize(line)
            if not toks:
                continue
            head = toks[0]
            if head.kind != "word" or head.text not in STATEMENTS:
                raise _LineError(head.col, f"unknown statement {head.text!r}", STATEMENTS)
            p = _Line(toks, len(line) + 1)
            p.i = 1
            span = SourceSpan(filename, lineno, 1)
            if head.text == "system":
                sys_name = p.string("system name")
                attrs = p.attrs(("schema",))
                if name is not None:
                    raise _LineError(head.col, "duplicate system header")
                if "schema" in attrs:
                    t = attrs["schema"]
                    if not t.text.isascii() or not t.text.isdigit() or int(t.text) < 1:
                        raise _LineError(t.col, "schema= expects a positive integer")
                    schema = int(t.text)
                name = sys_name
                continue
            id_col = p.col()
            ident = p.ident("identifier")
            if head.text == "actor":
                actor_name = p.string("actor name")
                attrs = p.attrs(("archetype", "note"))
                if "archetype" not in attrs:
                    raise _LineError(p.end_col, "actor requires archetype=", list(ARCHETYPE_KEYWORDS))
                archetype = _keyword(attrs["archetype"], ARCHETYPE_KEYWORDS, "archetype")
                note = ""
                if "note" in attrs:
                    t = attrs["note"]
                    if not t.text.startswith('"'):
                        raise _LineError(t.col, "note= expects a quoted string")
                    note = _decode_string(t.text, t.col)
                if ident in seen:
                    raise _LineError(id_col, f"duplicate id {ident!r} (first declared on line {seen[ident]})")
                seen[ident] = lineno
                actors.append(Actor(ident, actor_name, archetype, note))
                continue
            kind = KIND_KEYWORDS[head.text]
            if kind is ElementKind.DATA_FLOW:
                src = p.ident("flow source")
                p.arrow()
                dst = p.ident("flow target")
                label = p.maybe_string() or ""
                fields = _element_fields(p.attrs(_FLOW_ATTRS))
                el = Element(ident, label, kind, source=src, target=dst, span=span, **fields)
            else:
                el_name = p.string("display name")
                allowed = _BOUNDARY_ATTRS if kind is ElementKind.PRIVILEGE_BOUNDARY else _NODE_ATTRS
                fields = _element_fields(p.attrs(allowed))
                el = Element(ident, el_name, kind, span=span, **fields)
            if ident in seen:
                raise _LineError(id_col, f"duplicate id {ident!r} (first declared on line {seen[ident]})")
            seen[ident] = lineno
            elements.append(el)
        except _LineError as exc:
            errors.append(ParseError(SourceSpan(filename, lineno, exc.column), exc.message, exc.expected))

    if name is None:
        errors.insert(0, ParseError(SourceSpan(filename, 1, 1), "missing 'system' header"))
    if errors:
        raise ModelParseError(errors)
    return SystemModel(name, tuple(elements), tuple(actors), schema)


def load_model(path: Union[str, Path]) -> SystemModel:
    """Read and parse a model file. Non-UTF-8 input is reported as a parse error."""
    path = Path(path)
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise ModelParseError([ParseError(SourceSpan(str(path), line, 1), "input is not valid UTF-8")]) from None
    return parse_model(text, str(path))


# --- serialisation ----------------------------------------------------------

_VARIANT_TO_KW = {v: k for k, v in VARIANT_KEYWORDS.items()}
_ARCHETYPE_TO_KW = {v: k for k, v in ARCHETYPE_KEYWORDS.items()}
_KIND_TO_KW = {v: k for k, v in KIND_KEYWORDS.items()}


def _q(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _element_line(el: Element) -> str:
    parts = [_KIND_TO_KW[el.kind], el.id]
    if el.kind is ElementKind.DATA_FLOW:
        parts += [el.source or "", "->", el.target or ""]
        if el.name:
            parts.append(_q(el.name))
    else:
        parts.append(_q(el.name))
    if el.variant is not None:
        parts.append(f"variant={_VARIANT_TO_KW[el.variant]}")
    if el.layer is not None:
        parts.append(f"layer={el.layer.keyword}")
    if el.crosses:
        parts.append("crosses=" + ",".join(el.crosses))
    if el.members:
        parts.append("members=" + ",".join(el.members))
    if el.tags:
        parts.append("tags=" + ",".join(sorted(el.tags)))
    if el.value_at_risk is not None:
        parts.append(f"var={el.value_at_risk}")
    return " ".join(parts)


def serialize_model(model: SystemModel) -> str:
    """Canonical text for ``model``; actors are written before elements."""
    lines = [f"system {_q(model.name)}" + (f" schema={model.schema_version}" if model.schema_version != 1 else "")]
    for a in model.actors:
        line = f"actor {a.id} {_q(a.name)} archetype={_ARCHETYPE_TO_KW[a.archetype]}"
        if a.note:
            line += f" note={_q(a.note)}"
        lines.append(line)
    lines.extend(_element_line(el) for el in model.elements)
    return "\n".join(lines) + "\n"
