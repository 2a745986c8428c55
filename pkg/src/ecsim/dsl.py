"""Pulse-program language: tokenizer, LL(1) parser, diagnostics and formatter.

A program is one ``system`` block followed by one ``sequence`` block::

    # exact cancellation, lock then release
    system {
        omega_I_MHz = -14.58 MHz;
        A_MHz = -29.16 MHz;
        B_MHz = 6.45 MHz;
        offset = auto:2324;
    }
    sequence {
        pulse pi on 2324;
        delay 1008 ns sample every 8 ns;
        pulse pi/2 on 2324 finite(w1=15.6 MHz, len=16 ns);
        pulse 109.47 deg on 24 ideal;
        dephase;
        sample end;
    }

Grammar (``#`` starts a comment that runs to the end of the line)::

    program  := system_block sequence_block EOF
    system   := "system" "{" (IDENT "=" value ";")* "}"
    value    := NUMBER [UNIT] | "auto" ":" NUMBER
    sequence := "sequence" "{" stmt* "}"
    stmt     := "pulse" angle "on" TARGET [model] ";"
              | "delay" NUMBER "ns" ["sample" "every" NUMBER "ns"] ";"
              | "dephase" ";"
              | "sample" IDENT ";"
    angle    := "pi" | "pi" "/" "2" | NUMBER "deg"
    model    := "ideal" | "finite" "(" "w1" "=" NUMBER "MHz" "," "len" "=" NUMBER "ns" ")"

Units are ``MHz``, ``mT``, ``ns`` and ``deg``. Numbers are decimals with an
optional sign and fraction; exponents are not part of the language.

The parser never raises on bad input. It collects up to
:data:`MAX_DIAGNOSTICS` diagnostics, resynchronising at the next ``;`` or
``}`` after an error.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SystemConfig
from .model import DOUBLETS
from .pulses import TRANSITIONS, PulseSpec
from .sequence import Delay, Dephase, Pulse, Sample, Sequence
from .spincore import MHZ

MAX_DIAGNOSTICS = 20
UNITS = ("MHz", "mT", "ns", "deg")
DEG = math.pi / 180.0
SYSTEM_KEYS = ("omega_I_MHz", "A_MHz", "B_MHz", "offset")
REQUIRED_KEYS = ("omega_I_MHz", "A_MHz", "B_MHz")
# a finite pulse whose w1*len misses the written angle by more than this warns
ANGLE_WARN_REL = 0.05

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[+-]?[0-9]+(?:\.[0-9]+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}();=,/:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "ident", "punct" or "eof"
    text: str
    offset: int


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"
    origin: str = "<input>"

    def __str__(self):
        return f"{self.origin}:{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass
class ParseResult:
    system: SystemConfig | None
    sequence: Sequence | None
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    @property
    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors and self.system is not None and self.sequence is not None


class _Abort(Exception):
    """Raised internally once the diagnostic budget is spent."""


class _Recover(Exception):
    """Raised to unwind to the nearest statement boundary."""


class _Source:
    def __init__(self, text: str, origin: str):
        self.text = text
        self.origin = origin
        self._line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def position(self, offset: int) -> tuple[int, int]:
        # clamp onto a real character; the empty file reports 1:1
        offset = max(0, min(offset, len(self.text) - 1)) if self.text else 0
        lo, hi = 0, len(self._line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._line_starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self._line_starts[lo] + 1


class _Parser:
    def __init__(self, text: str, origin: str):
        self.src = _Source(text, origin)
        self.diags: list[Diagnostic] = []
        self.tokens = self._tokenize(text)
        self.pos = 0

    # -- diagnostics -------------------------------------------------------

    def report(self, offset: int, message: str, severity: str = "error"):
        line, col = self.src.position(offset)
        self.diags.append(Diagnostic(line, col, message, severity, self.src.origin))
        if sum(d.severity == "error" for d in self.diags) >= MAX_DIAGNOSTICS:
            raise _Abort

    def fail(self, tok: Token, message: str):
        self.report(tok.offset, message)
        raise _Recover

    # -- lexing ------------------------------------------------------------

    def _tokenize(self, text: str) -> list[Token]:
        toks: list[Token] = []
        i = 0
        try:
            while i < len(text):
                m = _TOKEN_RE.match(text, i)
                if m is None:
                    self.report(i, f"unexpected character {text[i]!r}")
                    i += 1
                    continue
                kind = m.lastgroup
                if kind not in ("ws", "comment"):
                    toks.append(Token(kind, m.group(), i))
                i = m.end()
        except _Abort:
            pass
        # EOF sits on the last character so its position is always real
        toks.append(Token("eof", "", max(len(text) - 1, 0)))
        return toks

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind in ("ident", "punct") and self.tok.text == text

    def describe(self, tok: Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def expect(self, text: str, what: str | None = None) -> Token:
        if self.at(text):
            return self.advance()
        self.fail(self.tok, f"expected {what or repr(text)}, found {self.describe(self.tok)}")

    def number(self, what: str) -> tuple[float, Token]:
        t = self.tok
        if t.kind != "number":
            self.fail(t, f"expected {what}, found {self.describe(t)}")
        self.advance()
        return float(t.text), t

    def unit(self, allowed: tuple[str, ...], context: str) -> Token:
        t = self.tok
        if t.kind == "ident" and t.text in allowed:
            return self.advance()
        if t.kind == "ident" and t.text in UNITS:
            self.fail(t, f"{context} takes {' or '.join(allowed)}, not {t.text}")
        found = self.describe(t)
        if t.kind == "ident":
            self.fail(t, f"unknown unit {found}; allowed units are {', '.join(UNITS)} ({context} takes {' or '.join(allowed)})")
        self.fail(t, f"expected unit ({' or '.join(allowed)}) for {context}, found {found}")

    def skip_statement(self):
        while self.tok.kind != "eof":
            if self.at(";"):
                self.advance()
                return
            if self.at("}"):
                return
            self.advance()

    # -- grammar -----------------------------------------------------------

    def parse(self) -> ParseResult:
        system = sequence = None
        try:
            system = self.parse_system()
            sequence = self.parse_sequence()
            if self.tok.kind != "eof":
                self.report(self.tok.offset, f"unexpected {self.describe(self.tok)} after the sequence block")
        except _Abort:
            pass
        if any(d.severity == "error" for d in self.diags):
            return ParseResult(system, None, self.diags)
        return ParseResult(system, sequence, self.diags)

    def parse_block_open(self, keyword: str) -> bool:
        try:
            self.expect(keyword, f"'{keyword}' block")
            self.expect("{")
            return True
        except _Recover:
            # skip to the block's opening brace if there is one
            while self.tok.kind != "eof" and not self.at("{"):
                self.advance()
            if self.at("{"):
                self.advance()
                return True
            return False

    def parse_block_close(self):
        if self.at("}"):
            self.advance()
        else:
            self.report(self.tok.offset, f"expected '}}', found {self.describe(self.tok)}")

    def parse_system(self) -> SystemConfig | None:
        head = self.tok
        if not self.parse_block_open("system"):
            return None
        values: dict[str, object] = {}
        seen: set[str] = set()
        while self.tok.kind != "eof" and not self.at("}"):
            if self.tok.kind == "ident":
                seen.add(self.tok.text)
            try:
                self.parse_assignment(values)
            except _Recover:
                self.skip_statement()
        self.parse_block_close()
        # keys that were present but malformed already have their own diagnostic
        missing = [k for k in REQUIRED_KEYS if k not in seen]
        if not missing and any(k not in values for k in REQUIRED_KEYS):
            return None
        if missing:
            self.report(head.offset, f"system block is missing {', '.join(missing)}")
            return None
        try:
            return SystemConfig(
                values["omega_I_MHz"], values["A_MHz"], values["B_MHz"], values.get("offset", "auto:2324")
            )
        except ConfigError as exc:
            self.report(head.offset, str(exc))
            return None

    def parse_assignment(self, values: dict):
        key = self.tok
        if key.kind != "ident":
            self.fail(key, f"expected a parameter name, found {self.describe(key)}")
        self.advance()
        self.expect("=")
        if key.text == "offset" and self.at("auto"):
            self.advance()
            self.expect(":")
            t = self.tok
            if t.kind != "number" or t.text not in DOUBLETS:
                self.fail(t, f"auto offset takes a doublet ({', '.join(DOUBLETS)}), found {self.describe(t)}")
            self.advance()
            value: object = f"auto:{t.text}"
        else:
            value, _ = self.number("a number")
            if self.tok.kind == "ident" and not self.at(";"):
                self.unit(("MHz",), key.text)
            elif key.text in SYSTEM_KEYS:
                self.fail(self.tok, f"{key.text} needs a unit (MHz), found {self.describe(self.tok)}")
        self.expect(";", "';'")
        if key.text not in SYSTEM_KEYS:
            self.report(key.offset, f"unknown system parameter {key.text!r}; expected one of {', '.join(SYSTEM_KEYS)}")
        elif key.text in values:
            self.report(key.offset, f"duplicate system parameter {key.text!r}")
        else:
            values[key.text] = value

    def parse_sequence(self) -> Sequence | None:
        head = self.tok
        if not self.parse_block_open("sequence"):
            return None
        events: list = []
        attempted = 0
        while self.tok.kind != "eof" and not self.at("}"):
            attempted += 1
            try:
                ev = self.parse_statement()
                if ev is not None:
                    events.append(ev)
            except _Recover:
                self.skip_statement()
        self.parse_block_close()
        if not attempted:
            self.report(head.offset, "sequence block has no statements", "warning")
        return Sequence(tuple(events))

    def parse_statement(self):
        t = self.tok
        if t.kind == "ident":
            handler = {
                "pulse": self.parse_pulse,
                "delay": self.parse_delay,
                "dephase": self.parse_dephase,
                "sample": self.parse_sample,
            }.get(t.text)
            if handler is not None:
                self.advance()
                return handler(t)
        self.fail(t, f"expected a statement (pulse, delay, dephase, sample), found {self.describe(t)}")

    def parse_angle(self) -> float:
        if self.at("pi"):
            self.advance()
            if self.at("/"):
                self.advance()
                t = self.tok
                if t.kind != "number" or float(t.text) != 2.0:
                    self.fail(t, "only pi and pi/2 are spelled with pi; use degrees for other angles")
                self.advance()
                return math.pi / 2
            return math.pi
        value, _ = self.number("a pulse angle (pi, pi/2 or degrees)")
        self.unit(("deg",), "pulse angle")
        # the two common angles map onto the exact values the formatter prints
        if value == 90.0:
            return math.pi / 2
        if value == 180.0:
            return math.pi
        return value * DEG

    def parse_pulse(self, head: Token):
        angle = self.parse_angle()
        self.expect("on", "'on'")
        t = self.tok
        if t.text not in TRANSITIONS + DOUBLETS:
            self.fail(t, f"pulse target must be one of {', '.join(TRANSITIONS + DOUBLETS)}, found {self.describe(t)}")
        self.advance()
        target = t.text
        kind = "ideal_semiselective" if target in DOUBLETS else "ideal_selective"
        omega1 = duration = None
        if self.at("ideal"):
            self.advance()
        elif self.at("finite"):
            ft = self.advance()
            if target not in DOUBLETS:
                self.fail(ft, f"finite pulses act on a doublet ({', '.join(DOUBLETS)}), not on transition {target}")
            self.expect("(")
            self.expect("w1", "'w1'")
            self.expect("=")
            w1, _ = self.number("pulse strength w1")
            self.unit(("MHz",), "w1")
            self.expect(",", "','")
            self.expect("len", "'len'")
            self.expect("=")
            length, lt = self.number("pulse length")
            self.unit(("ns",), "len")
            self.expect(")")
            if not length > 0:
                self.fail(lt, f"pulse length must be > 0, got {lt.text}")
            kind, omega1, duration = "finite", w1 * MHZ, length
            nominal = omega1 * duration
            if angle and abs(nominal - angle) > ANGLE_WARN_REL * abs(angle):
                self.report(
                    ft.offset,
                    f"w1*len gives a {math.degrees(nominal):.4g} deg pulse, not {math.degrees(angle):.4g} deg",
                    "warning",
                )
        self.expect(";", "';'")
        return Pulse(PulseSpec(kind, target, angle, omega1=omega1, duration=duration))

    def parse_delay(self, head: Token):
        value, vt = self.number("a delay length")
        self.unit(("ns",), "delay")
        every = None
        if self.at("sample"):
            self.advance()
            self.expect("every", "'every'")
            every, et = self.number("a sampling step")
            self.unit(("ns",), "sampling step")
            if not every > 0:
                self.fail(et, f"sampling step must be > 0, got {et.text}")
        self.expect(";", "';'")
        if value < 0:
            self.report(vt.offset, f"delay must be >= 0, got {vt.text}")
            return None
        return Delay(value, every)

    def parse_dephase(self, head: Token):
        self.expect(";", "';'")
        return Dephase()

    def parse_sample(self, head: Token):
        t = self.tok
        if t.kind != "ident":
            self.fail(t, f"sample needs a label, found {self.describe(t)}")
        self.advance()
        self.expect(";", "';'")
        return Sample(t.text)


def parse(text: str, origin: str = "<input>") -> ParseResult:
    """Parse program text. Never raises; problems are returned as diagnostics."""
    try:
        return _Parser(text, origin).parse()
    except RecursionError:  # pragma: no cover - the parser is iterative
        return ParseResult(None, None, [Diagnostic(1, 1, "input too deeply nested", "error", origin)])


def parse_bytes(data: bytes, origin: str = "<input>") -> ParseResult:
    """Parse raw bytes; invalid UTF-8 becomes a diagnostic at the bad byte."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        good = data[: exc.start].decode("utf-8")
        src = _Source(good + "?", origin)
        line, col = src.position(len(good))
        return ParseResult(None, None, [Diagnostic(line, col, f"invalid UTF-8 byte 0x{data[exc.start]:02x}", "error", origin)])
    return parse(text, origin)


# -- formatting -------------------------------------------------------------


def _positional(x: float, precision: int | None = None) -> str:
    if precision is None:
        return np.format_float_positional(x, unique=True, trim="-")
    return np.format_float_positional(x, precision=precision, unique=False, fractional=False, trim="-")


def format_number(value: float, scale: float = 1.0) -> str:
    """Shortest decimal ``s`` with ``float(s) * scale == value`` (exact round trip)."""
    if not math.isfinite(value):
        raise ValueError(f"cannot format non-finite value {value!r}")
    if scale == 1.0:
        return _positional(value)
    guess = value / scale
    for prec in range(1, 18):
        for cand in (guess, np.nextafter(guess, -np.inf), np.nextafter(guess, np.inf)):
            s = _positional(float(cand), prec)
            if float(s) * scale == value:
                return s
    # fall back to a scale-free decimal of the nearest representable value
    for cand in (guess, np.nextafter(guess, -np.inf), np.nextafter(guess, np.inf)):
        s = _positional(float(cand))
        if float(s) * scale == value:
            return s
    raise ValueError(f"{value!r} has no decimal representation at scale {scale!r}")


def _format_angle(angle: float) -> str:
    if angle == math.pi:
        return "pi"
    if angle == math.pi / 2:
        return "pi/2"
    return f"{format_number(angle, DEG)} deg"


def _format_event(ev) -> str:
    if isinstance(ev, Pulse):
        s = ev.spec
        text = f"pulse {_format_angle(s.angle)} on {s.target}"
        if s.kind == "finite":
            text += f" finite(w1={format_number(s.omega1, MHZ)} MHz, len={format_number(s.duration)} ns)"
        return text + ";"
    if isinstance(ev, Delay):
        text = f"delay {format_number(ev.duration)} ns"
        if ev.sample_every is not None:
            text += f" sample every {format_number(ev.sample_every)} ns"
        return text + ";"
    if isinstance(ev, Dephase):
        return "dephase;"
    if isinstance(ev, Sample):
        return f"sample {ev.label};"
    raise TypeError(f"cannot format event {ev!r}")


def format_program(system: SystemConfig, sequence: Sequence) -> str:
    """Canonical program text; ``parse(format_program(s, q))`` gives back ``(s, q)``."""
    lines = ["system {"]
    lines.append(f"    omega_I_MHz = {format_number(system.omega_I_MHz)} MHz;")
    lines.append(f"    A_MHz = {format_number(system.A_MHz)} MHz;")
    lines.append(f"    B_MHz = {format_number(system.B_MHz)} MHz;")
    off = system.offset
    lines.append(f"    offset = {off};" if isinstance(off, str) else f"    offset = {format_number(off)} MHz;")
    lines.append("}")
    lines.append("")
    lines.append("sequence {")
    lines.extend(f"    {_format_event(ev)}" for ev in sequence.events)
    lines.append("}")
    return "\n".join(lines) + "\n"
