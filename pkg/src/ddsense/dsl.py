"""A small text language (.ddseq) for user-defined pulse units.

Grammar (EBNF, whitespace-insensitive, '#' starts a line comment)::

    unit        = "unit" NAME "T" "=" DURATION ["rabi" "=" ANGFREQ] "{" {stmt} "}"
    stmt        = pulse | globalphase
    pulse       = "pi" "at" DURATION "phase" ANGLE ";"
    globalphase = "globalphase" ANGLE ";"

DURATION, ANGFREQ and ANGLE are the unit-suffixed literals of
:mod:`ddsense.units` ('0.5us', '2pi*25MHz', '0.5pi', '90deg', ...).  Pulse
widths follow from the Rabi frequency (t_pi = pi / Omega); omitting ``rabi``
(or giving '0rad/s') selects instantaneous pulses.  An optional
``globalphase`` statement shifts all pulse phases, which is how exported
randomized plans record their per-unit phases.

Parsing is total: every input yields either a unit or diagnostics with
line/column positions, never an exception and never a partial unit.
serialize_unit emits a canonical form whose re-parse is structurally equal to
the original (lossless literal formatting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import units as unit_literals
from .sequences import Pulse, PulseUnit, SequenceError, apply_global_phase

__all__ = [
    "SequenceSource",
    "ParseDiagnostic",
    "ParseResult",
    "parse_unit",
    "serialize_unit",
]


@dataclass(frozen=True)
class SequenceSource:
    """Sequence text plus where it came from (file path or inline tag)."""

    text: str
    origin: str = "<inline>"

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("sequence source must be non-empty")


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class ParseResult:
    unit: PulseUnit | None
    diagnostics: tuple[ParseDiagnostic, ...] = ()

    @property
    def ok(self) -> bool:
        return self.unit is not None


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    column: int


_PUNCT = "{};="


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        col = 0
        length = len(body)
        while col < length:
            ch = body[col]
            if ch.isspace():
                col += 1
                continue
            if ch in _PUNCT:
                tokens.append(_Token(ch, lineno, col + 1))
                col += 1
                continue
            start = col
            while col < length and not body[col].isspace() and body[col] not in _PUNCT:
                col += 1
            tokens.append(_Token(body[start:col], lineno, start + 1))
    return tokens


class _Bail(Exception):
    """Internal: abort the current statement or the whole parse."""


@dataclass
class _Parser:
    tokens: list[_Token]
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)
    pos: int = 0

    def error(self, message: str, token: _Token | None = None) -> None:
        if token is None:
            token = self.peek() or _Token("", self._last_line(), self._last_col())
        self.diagnostics.append(ParseDiagnostic(token.line, token.column, message))

    def _last_line(self) -> int:
        return self.tokens[-1].line if self.tokens else 1

    def _last_col(self) -> int:
        if not self.tokens:
            return 1
        last = self.tokens[-1]
        return last.column + len(last.text)

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: str | None = None, what: str = "") -> _Token:
        tok = self.peek()
        if tok is None:
            self.error(f"unexpected end of input, expected {what or expected!r}")
            raise _Bail
        if expected is not None and tok.text != expected:
            self.error(f"expected {what or expected!r}, got {tok.text!r}", tok)
            raise _Bail
        self.pos += 1
        return tok

    def take_value(self, parser, what: str) -> tuple[float, _Token]:
        tok = self.take(None, what)
        try:
            return parser(tok.text), tok
        except unit_literals.UnitError as exc:
            self.error(str(exc), tok)
            raise _Bail from exc

    def skip_statement(self) -> None:
        while (tok := self.peek()) is not None:
            self.pos += 1
            if tok.text == ";":
                return
            if tok.text == "}":
                self.pos -= 1
                return


def parse_unit(source: SequenceSource | str) -> ParseResult:
    """Parse one unit definition; returns the unit or positioned diagnostics."""
    if isinstance(source, str):
        source = SequenceSource(source)
    parser = _Parser(_tokenize(source.text))
    unit: PulseUnit | None = None
    try:
        unit = _parse_unit_block(parser)
    except _Bail:
        unit = None
    if parser.diagnostics:
        return ParseResult(None, tuple(parser.diagnostics))
    if unit is None:
        # tokenizer produced nothing (blank/comment-only input)
        return ParseResult(None, (ParseDiagnostic(1, 1, "empty sequence source"),))
    return ParseResult(unit)


def _parse_unit_block(p: _Parser) -> PulseUnit | None:
    p.take("unit")
    name_tok = p.take(None, "unit name")
    if name_tok.text in _PUNCT or not name_tok.text.replace("_", "").replace("-", "").isalnum():
        p.error(f"bad unit name {name_tok.text!r}", name_tok)
        raise _Bail
    p.take("T")
    p.take("=")
    duration, duration_tok = p.take_value(unit_literals.parse_duration, "unit duration")

    rabi = 0.0
    if (tok := p.peek()) is not None and tok.text == "rabi":
        p.take("rabi")
        p.take("=")
        rabi, _ = p.take_value(unit_literals.parse_angular_frequency, "rabi frequency")
        if rabi < 0:
            p.error("rabi frequency must be >= 0")
            raise _Bail

    p.take("{")
    global_phase: float | None = None
    entries: list[tuple[float, float, _Token]] = []
    while True:
        tok = p.peek()
        if tok is None:
            p.error("unexpected end of input, expected '}'")
            raise _Bail
        if tok.text == "}":
            p.take("}")
            break
        try:
            if tok.text == "pi":
                p.take("pi")
                p.take("at")
                at, at_tok = p.take_value(unit_literals.parse_duration, "pulse time")
                p.take("phase")
                phase, _ = p.take_value(unit_literals.parse_angle, "pulse phase")
                p.take(";")
                entries.append((at, phase, at_tok))
            elif tok.text == "globalphase":
                gp_tok = p.take("globalphase")
                value, _ = p.take_value(unit_literals.parse_angle, "global phase")
                p.take(";")
                if global_phase is not None:
                    p.error("duplicate globalphase statement", gp_tok)
                else:
                    global_phase = value
            else:
                p.error(f"expected 'pi' or 'globalphase', got {tok.text!r}", tok)
                raise _Bail
        except _Bail:
            p.skip_statement()
    if (tok := p.peek()) is not None:
        p.error(f"trailing input after unit body: {tok.text!r}", tok)
    if p.diagnostics:
        return None

    if not entries:
        p.error("unit defines no pulses", duration_tok)
        return None
    half_width = 0.5 * (math.pi / rabi) if rabi > 0 else 0.0
    for at, _, at_tok in entries:
        if at - half_width < 0 or at + half_width > duration:
            p.error("pulse outside unit [0, T]", at_tok)
    centers = [e[0] for e in entries]
    for a, b, (_, _, tok) in zip(centers, centers[1:], entries[1:]):
        if b <= a:
            p.error("pulse times must be strictly increasing", tok)
        elif b - a < 2 * half_width:
            p.error("overlapping pulses", tok)
    if p.diagnostics:
        return None

    pulses = tuple(
        Pulse(center_time=at, phase=phase % (2 * math.pi), rabi_frequency=rabi)
        for at, phase, _ in entries
    )
    try:
        unit = PulseUnit(name=name_tok.text, duration=duration, pulses=pulses)
    except SequenceError as exc:
        p.error(str(exc), duration_tok)
        return None
    if global_phase is not None:
        unit = apply_global_phase(unit, global_phase)
    return unit


def serialize_unit(unit: PulseUnit, global_phase: float | None = None) -> SequenceSource:
    """Canonical .ddseq text for a unit; re-parsing yields a structurally equal unit.

    When global_phase is given it is written as an explicit ``globalphase``
    statement, so parse(serialize(u, phi)) equals apply_global_phase(u, phi).
    """
    rabi = unit.pulses[0].rabi_frequency
    if any(p.rabi_frequency != rabi for p in unit.pulses):
        raise SequenceError("the .ddseq grammar cannot express per-pulse Rabi frequencies")
    if any(p.nominal_angle != math.pi for p in unit.pulses):
        raise SequenceError("the .ddseq grammar only expresses pi pulses")
    lines = [
        f"unit {unit.name} T={unit_literals.format_duration(unit.duration)} "
        f"rabi={unit_literals.format_angular_frequency(rabi)} {{"
    ]
    if global_phase is not None:
        lines.append(f"  globalphase {unit_literals.format_angle(global_phase)};")
    for pulse in unit.pulses:
        lines.append(
            f"  pi at {unit_literals.format_duration(pulse.center_time)} "
            f"phase {unit_literals.format_angle(pulse.phase)};"
        )
    lines.append("}")
    return SequenceSource("\n".join(lines) + "\n", origin="<serialized>")
