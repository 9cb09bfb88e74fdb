"""Tokens, timed events, clocks, and the line-oriented wire protocol.

Every stage of the cascade exchanges TimedEvent values. On disk and between
processes an event is one tab-separated, LF-terminated UTF-8 line:

    <channel>\t<seq>\t<emit_ms>\t<segment_id>\t<first_input_ms>\t<kind>\t<payload...>

channel is one of SRC/ISR/IMT/ITTS; kind is tok/bos/blk/eos (token payloads),
frm (a frame block: ``n_frames\thop_ms``) or chk (a synthesized chunk:
``duration_ms\tphrase_text``). Parsing is strict: a line either round-trips
to exactly the event that produced it or raises.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence, Union

BOS_TEXT = "<s>"
EOB_TEXT = "<m>"
EOS_TEXT = "</s>"

_RESERVED_TEXTS = (BOS_TEXT, EOB_TEXT, EOS_TEXT)

#: hop_ms values are decimal with at most this many fractional digits,
#: so 550/32 = 17.1875 ms is representable exactly.
HOP_MS_MAX_DIGITS = 4


class TokenKind(Enum):
    """Token categories; the enum value doubles as the wire kind tag."""

    REGULAR = "tok"
    BEGIN_SEQ = "bos"
    END_BLOCK = "blk"
    END_SEQ = "eos"


_CANONICAL_TEXT = {
    TokenKind.BEGIN_SEQ: BOS_TEXT,
    TokenKind.END_BLOCK: EOB_TEXT,
    TokenKind.END_SEQ: EOS_TEXT,
}


class Channel(Enum):
    SOURCE = "SRC"
    ISR = "ISR"
    IMT = "IMT"
    ITTS = "ITTS"


#: Cascade order; stage n+1 consumes the output channel of stage n.
CASCADE = (Channel.SOURCE, Channel.ISR, Channel.IMT, Channel.ITTS)


@dataclass(frozen=True)
class Token:
    """A subword symbol exchanged between stages."""

    text: str
    kind: TokenKind = TokenKind.REGULAR

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("token text must be non-empty")
        if "\t" in self.text or "\n" in self.text:
            raise ValueError("token text must not contain tabs or newlines")
        canonical = _CANONICAL_TEXT.get(self.kind)
        if canonical is not None and self.text != canonical:
            raise ValueError(
                f"{self.kind.name} token text must be {canonical!r}, got {self.text!r}"
            )
        if self.kind is TokenKind.REGULAR and self.text in _RESERVED_TEXTS:
            raise ValueError(f"regular token may not use reserved text {self.text!r}")

    @property
    def is_regular(self) -> bool:
        return self.kind is TokenKind.REGULAR


BOS = Token(BOS_TEXT, TokenKind.BEGIN_SEQ)
EOB = Token(EOB_TEXT, TokenKind.END_BLOCK)
EOS = Token(EOS_TEXT, TokenKind.END_SEQ)


def as_hop_ms(value: Union[int, str, Fraction]) -> Fraction:
    """Normalize a hop period to an exact Fraction of milliseconds.

    Accepts ints, Fractions, or decimal strings. The value must be positive
    and representable with at most HOP_MS_MAX_DIGITS fractional digits.
    """
    if isinstance(value, str):
        frac = _parse_decimal(value)
        if frac is None:
            raise ValueError(f"hop_ms not a canonical decimal: {value!r}")
    else:
        frac = Fraction(value)
    if frac <= 0:
        raise ValueError(f"hop_ms must be positive, got {frac}")
    if (10**HOP_MS_MAX_DIGITS) % frac.denominator != 0:
        raise ValueError(
            f"hop_ms needs more than {HOP_MS_MAX_DIGITS} fractional digits: {frac}"
        )
    return frac


def format_hop_ms(hop: Fraction) -> str:
    """Canonical decimal rendering of a hop period (no trailing zeros)."""
    scaled = hop * 10**HOP_MS_MAX_DIGITS
    digits = f"{int(scaled):0{HOP_MS_MAX_DIGITS + 1}d}"
    whole, frac = digits[: -HOP_MS_MAX_DIGITS], digits[-HOP_MS_MAX_DIGITS:]
    frac = frac.rstrip("0")
    return f"{whole}.{frac}" if frac else whole


@dataclass(frozen=True)
class FrameBlock:
    """A fixed-size run of feature frames from the source channel.

    Content is abstracted to frame counts; start_ms marks when the first
    frame of the block arrives. On the wire the envelope carries the block's
    identity: block_index rides as the event seq and start_ms as emit_ms.
    """

    segment_id: int
    block_index: int
    n_frames: int
    hop_ms: Fraction
    start_ms: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "hop_ms", as_hop_ms(self.hop_ms))
        if self.segment_id < 0:
            raise ValueError("segment_id must be >= 0")
        if self.block_index < 0:
            raise ValueError("block_index must be >= 0")
        if self.n_frames <= 0:
            raise ValueError("n_frames must be positive")
        if self.start_ms < 0:
            raise ValueError("start_ms must be >= 0")

    @property
    def duration_ms(self) -> Fraction:
        return self.n_frames * self.hop_ms

    @property
    def end_ms(self) -> int:
        """First millisecond at which the whole block has been heard."""
        end = self.start_ms + self.duration_ms
        return -(-end.numerator // end.denominator)  # ceil


@dataclass(frozen=True)
class SynthChunkRef:
    """Wire payload for a synthesized chunk: its playback length and text."""

    duration_ms: int
    text: str

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if not self.text:
            raise ValueError("chunk text must be non-empty")
        if "\t" in self.text or "\n" in self.text:
            raise ValueError("chunk text must not contain tabs or newlines")


Payload = Union[Token, FrameBlock, SynthChunkRef]


@dataclass(frozen=True)
class TimedEvent:
    """One emission on a channel, with provenance for later alignment.

    segment_id and first_input_ms are provenance: which source segment the
    event belongs to and the earliest input time consumed for it. seq is
    per-channel and dense from 0 for the lifetime of the producing process.
    """

    channel: Channel
    seq: int
    emit_ms: int
    segment_id: int
    first_input_ms: int
    payload: Payload

    def __post_init__(self) -> None:
        if self.seq < 0:
            raise ValueError("seq must be >= 0")
        if self.emit_ms < 0:
            raise ValueError("emit_ms must be >= 0")
        if self.segment_id < 0:
            raise ValueError("segment_id must be >= 0")
        if self.first_input_ms < 0:
            raise ValueError("first_input_ms must be >= 0")
        if self.emit_ms < self.first_input_ms:
            raise ValueError(
                f"causality violated: emit_ms {self.emit_ms} < "
                f"first_input_ms {self.first_input_ms}"
            )
        if not isinstance(self.payload, (Token, FrameBlock, SynthChunkRef)):
            raise TypeError(f"unsupported payload type {type(self.payload).__name__}")
        if isinstance(self.payload, FrameBlock):
            blk = self.payload
            if blk.segment_id != self.segment_id:
                raise ValueError("frame block segment_id must match event segment_id")
            if blk.block_index != self.seq:
                raise ValueError("frame block block_index must equal event seq")
            if blk.start_ms != self.emit_ms or blk.start_ms != self.first_input_ms:
                raise ValueError(
                    "frame block start_ms must equal emit_ms and first_input_ms"
                )


class WireProtocolError(ValueError):
    """A line failed strict parsing. Carries the offending field and the
    byte offset of that field within the (UTF-8 encoded) line."""

    def __init__(self, message: str, *, field_name: str, offset: int) -> None:
        super().__init__(f"{message} (field={field_name}, byte_offset={offset})")
        self.field_name = field_name
        self.offset = offset


class MalformedLine(WireProtocolError):
    pass


class UnknownChannel(WireProtocolError):
    pass


class UnknownPayloadKind(WireProtocolError):
    pass


_FIELD_NAMES = ("channel", "seq", "emit_ms", "segment_id", "first_input_ms", "kind")
_INT_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_DECIMAL_RE = re.compile(r"^(0|[1-9][0-9]*)(\.([0-9]*[1-9]))?$")

_TOKEN_KINDS = {k.value: k for k in TokenKind}
_CHANNELS = {c.value: c for c in Channel}


def _parse_decimal(text: str) -> Fraction | None:
    """Strict canonical decimal: no sign, no leading/trailing zeros, <= 4
    fractional digits. Returns None when the text is not canonical."""
    m = _DECIMAL_RE.match(text)
    if not m:
        return None
    frac_digits = m.group(3) or ""
    if len(frac_digits) > HOP_MS_MAX_DIGITS:
        return None
    scale = 10 ** len(frac_digits)
    return Fraction(int(m.group(1)) * scale + int(frac_digits or 0), scale)


def serialize_event(ev: TimedEvent) -> str:
    """Render an event as one newline-terminated wire line."""
    head = [
        ev.channel.value,
        str(ev.seq),
        str(ev.emit_ms),
        str(ev.segment_id),
        str(ev.first_input_ms),
    ]
    p = ev.payload
    if isinstance(p, Token):
        tail = [p.kind.value, p.text]
    elif isinstance(p, FrameBlock):
        tail = ["frm", str(p.n_frames), format_hop_ms(p.hop_ms)]
    else:
        tail = ["chk", str(p.duration_ms), p.text]
    return "\t".join(head + tail) + "\n"


def parse_event(line: str) -> TimedEvent:
    """Strict inverse of serialize_event.

    Raises MalformedLine / UnknownChannel / UnknownPayloadKind; never returns
    an event a different valid line would also produce.
    """
    body = line[:-1] if line.endswith("\n") else line
    if "\n" in body:
        off = len(body.split("\n", 1)[0].encode("utf-8"))
        raise MalformedLine("embedded newline", field_name="line", offset=off)

    fields = body.split("\t")

    # byte offset of field i: encoded length of the preceding fields plus tabs
    def field_offset(i: int) -> int:
        prefix = "\t".join(fields[:i])
        return len(prefix.encode("utf-8")) + (1 if i > 0 else 0)

    if len(fields) < 7:
        raise MalformedLine(
            f"expected at least 7 tab-separated fields, got {len(fields)}",
            field_name="line",
            offset=0,
        )

    channel = _CHANNELS.get(fields[0])
    if channel is None:
        raise UnknownChannel(
            f"unknown channel {fields[0]!r}", field_name="channel", offset=0
        )

    ints: list[int] = []
    for i in range(1, 5):
        if not _INT_RE.match(fields[i]):
            raise MalformedLine(
                f"non-canonical integer {fields[i]!r}",
                field_name=_FIELD_NAMES[i],
                offset=field_offset(i),
            )
        ints.append(int(fields[i]))
    seq, emit_ms, segment_id, first_input_ms = ints

    kind = fields[5]
    payload_offset = field_offset(6)

    def payload_count(expected: int) -> None:
        if len(fields) != 6 + expected:
            raise MalformedLine(
                f"kind {kind!r} takes {expected} payload field(s), "
                f"got {len(fields) - 6}",
                field_name="payload",
                offset=payload_offset,
            )

    payload: Payload
    if kind in _TOKEN_KINDS:
        payload_count(1)
        try:
            payload = Token(fields[6], _TOKEN_KINDS[kind])
        except ValueError as exc:
            raise MalformedLine(
                str(exc), field_name="payload", offset=payload_offset
            ) from exc
    elif kind == "frm":
        payload_count(2)
        if not _INT_RE.match(fields[6]) or fields[6] == "0":
            raise MalformedLine(
                f"n_frames must be a positive canonical integer, got {fields[6]!r}",
                field_name="n_frames",
                offset=payload_offset,
            )
        hop = _parse_decimal(fields[7])
        if hop is None or hop <= 0:
            raise MalformedLine(
                f"hop_ms must be a positive canonical decimal, got {fields[7]!r}",
                field_name="hop_ms",
                offset=field_offset(7),
            )
        payload = FrameBlock(
            segment_id=segment_id,
            block_index=seq,
            n_frames=int(fields[6]),
            hop_ms=hop,
            start_ms=emit_ms,
        )
    elif kind == "chk":
        payload_count(2)
        if not _INT_RE.match(fields[6]) or fields[6] == "0":
            raise MalformedLine(
                f"duration_ms must be a positive canonical integer, got {fields[6]!r}",
                field_name="duration_ms",
                offset=payload_offset,
            )
        try:
            payload = SynthChunkRef(int(fields[6]), fields[7])
        except ValueError as exc:
            raise MalformedLine(
                str(exc), field_name="phrase_text", offset=field_offset(7)
            ) from exc
    else:
        raise UnknownPayloadKind(
            f"unknown payload kind {kind!r}", field_name="kind", offset=field_offset(5)
        )

    try:
        return TimedEvent(
            channel=channel,
            seq=seq,
            emit_ms=emit_ms,
            segment_id=segment_id,
            first_input_ms=first_input_ms,
            payload=payload,
        )
    except ValueError as exc:
        raise MalformedLine(str(exc), field_name="emit_ms", offset=field_offset(2)) from exc


RULE_SEQ_DENSITY = "seq-density"
RULE_MONOTONICITY = "monotonicity"
RULE_CAUSALITY = "causality"
RULE_BRACKETING = "bracketing"
RULE_UNTERMINATED = "unterminated-segment"


@dataclass(frozen=True)
class Violation:
    rule: str
    seq: int | None
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_rule(self, rule: str) -> list[Violation]:
        return [v for v in self.violations if v.rule == rule]


def validate_stream(events: Sequence[TimedEvent]) -> ValidationReport:
    """Check a single-channel event stream for protocol discipline.

    Verifies seq density (0,1,2,...), emit_ms monotonicity, causality
    (emit_ms >= first_input_ms) and segment bracketing: a segment opens at
    stream start, after an end-of-sequence token, or with an explicit
    begin-of-sequence token, and is closed by exactly one end-of-sequence
    token. Violations are reported, never raised.
    """
    report = ValidationReport()
    if not events:
        return report
    channel = events[0].channel
    for ev in events:
        if ev.channel is not channel:
            raise ValueError("validate_stream expects events on a single channel")

    open_run = False  # a segment has content (or an explicit open) but no EOS yet
    prev_emit = None
    for i, ev in enumerate(events):
        if ev.seq != i:
            report.violations.append(
                Violation(RULE_SEQ_DENSITY, ev.seq, f"expected seq {i}, got {ev.seq}")
            )
        if prev_emit is not None and ev.emit_ms < prev_emit:
            report.violations.append(
                Violation(
                    RULE_MONOTONICITY,
                    ev.seq,
                    f"emit_ms {ev.emit_ms} decreased below {prev_emit}",
                )
            )
        prev_emit = max(prev_emit, ev.emit_ms) if prev_emit is not None else ev.emit_ms
        if ev.emit_ms < ev.first_input_ms:
            report.violations.append(
                Violation(
                    RULE_CAUSALITY,
                    ev.seq,
                    f"emit_ms {ev.emit_ms} precedes first_input_ms {ev.first_input_ms}",
                )
            )
        payload = ev.payload
        if isinstance(payload, Token) and payload.kind is TokenKind.BEGIN_SEQ:
            if open_run:
                report.violations.append(
                    Violation(
                        RULE_BRACKETING,
                        ev.seq,
                        "begin-of-sequence inside an open segment",
                    )
                )
            open_run = True
        elif isinstance(payload, Token) and payload.kind is TokenKind.END_SEQ:
            open_run = False
        else:
            open_run = True
    if open_run:
        report.violations.append(
            Violation(
                RULE_UNTERMINATED,
                events[-1].seq,
                "stream ended with an unterminated segment",
            )
        )
    return report


class VirtualClock:
    """Deterministic millisecond clock advanced explicitly by its driver."""

    def __init__(self, start_ms: int = 0) -> None:
        if start_ms < 0:
            raise ValueError("start_ms must be >= 0")
        self._now = start_ms

    @property
    def now_ms(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> int:
        """Move time forward to t_ms; earlier targets are a no-op."""
        if t_ms > self._now:
            self._now = t_ms
        return self._now

    def advance_by(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("cannot advance by a negative amount")
        self._now += delta_ms
        return self._now


class WallClock:
    """Wall time in integer milliseconds relative to a shared epoch."""

    def __init__(self, epoch_ms: int | None = None) -> None:
        self.epoch_ms = time.time_ns() // 1_000_000 if epoch_ms is None else epoch_ms

    @property
    def now_ms(self) -> int:
        return max(0, time.time_ns() // 1_000_000 - self.epoch_ms)


ClockLike = Union[VirtualClock, WallClock]


def read_event_log(path) -> list[TimedEvent]:
    """Load a wire-format event-log file."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(parse_event(line))
            except WireProtocolError as exc:
                raise MalformedLine(
                    f"{path}:{lineno}: {exc}",
                    field_name=exc.field_name,
                    offset=exc.offset,
                ) from exc
    return events


def write_event_log(path, events: Iterable[TimedEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(serialize_event(ev))
