"""Incremental stage policies and the stage execution machinery.

A stage couples a read/write policy with a transducer. The policy decides,
from its counters and what is currently available, whether to consume more
input, emit the next output, or flush at end of segment. The transducer is
the pluggable text mapping standing in for a neural model.

Concrete policies:
  * wait-k scheduling for the translation stage,
  * fixed-block emission with look-ahead for the recognizer stage,
  * hold-one accent-phrase chunking for the synthesis timing stage.

End-of-block markers are transparent downstream of the recognizer: they are
consumed without counting as reads and are not forwarded. End-of-sequence
always triggers a flush back to the initial state.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Protocol, Sequence

from .stream_core import (
    CASCADE,
    EOB,
    EOS,
    Channel,
    ClockLike,
    FrameBlock,
    SynthChunkRef,
    TimedEvent,
    Token,
    TokenKind,
    VirtualClock,
    as_hop_ms,
    validate_stream,
)
from .tts_timing import AccentPhrase, DurationModel, phrase_from_tokens, predict_duration


class Action(Enum):
    READ = "R"
    WRITE = "W"
    FLUSH = "F"


class Deadlock(RuntimeError):
    """No input available, source not finished, and writing not permitted."""


class MalformedInput(ValueError):
    """An input stream failed validation before stage execution."""


# ---------------------------------------------------------------------------
# wait-k


@dataclass
class WaitKState:
    """Read/write counters for the wait-k policy.

    n_read counts consumed source tokens (block markers excluded) and
    n_written counts emitted target tokens. Once source_done is set, n_read
    is the final source length J.
    """

    k: int
    n_read: int = 0
    n_written: int = 0
    source_done: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_read < 0 or self.n_written < 0:
            raise ValueError("counters must be >= 0")


def wait_k_next_action(
    state: WaitKState, input_available: bool, output_pending: bool
) -> Action:
    """Decide the next action of a wait-k stage.

    Writing target token i requires min(i + k - 1, J) source reads; before
    the source is exhausted that means n_read >= n_written + k. After
    exhaustion writes are unconstrained until the transducer runs dry, then
    Flush. Raises Deadlock when nothing can proceed: no input, source not
    done, and the next write not permitted.
    """
    if state.source_done:
        return Action.WRITE if output_pending else Action.FLUSH
    if output_pending and state.n_read >= state.n_written + state.k:
        return Action.WRITE
    if input_available:
        return Action.READ
    raise Deadlock(
        f"wait-{state.k} stalled after {state.n_read} reads / "
        f"{state.n_written} writes with no input available"
    )


def wait_k_schedule(source_len: int, target_len: int, k: int) -> list[Action]:
    """Read/write action sequence for known source/target lengths.

    The i-th write (1-based) is preceded by exactly min(i + k - 1, J) reads;
    reads not needed by any write trail at the end, so the schedule always
    contains exactly J reads and I writes.
    """
    if source_len < 1 or target_len < 1 or k < 1:
        raise ValueError("source_len, target_len, and k must all be >= 1")
    actions: list[Action] = []
    reads = 0
    for i in range(1, target_len + 1):
        needed = min(i + k - 1, source_len)
        actions.extend([Action.READ] * (needed - reads))
        reads = needed
        actions.append(Action.WRITE)
    actions.extend([Action.READ] * (source_len - reads))
    return actions


def format_actions(actions: Sequence[Action]) -> str:
    return "".join(a.value for a in actions)


# ---------------------------------------------------------------------------
# policies


class StagePolicy(Protocol):
    """Read/write/flush decision logic of an incremental stage."""

    def next_action(self, input_available: bool, output_pending: bool) -> Action:
        """May raise Deadlock (see wait_k_next_action)."""
        ...

    def on_read(self, token: Token) -> None:
        ...

    def on_write(self, token: Token) -> None:
        ...

    def on_source_done(self) -> None:
        ...

    def on_flush(self) -> None:
        """Reset to the initial state at end of segment."""
        ...


class WaitKPolicy:
    def __init__(self, k: int) -> None:
        self.state = WaitKState(k=k)

    def next_action(self, input_available: bool, output_pending: bool) -> Action:
        return wait_k_next_action(self.state, input_available, output_pending)

    def on_read(self, token: Token) -> None:
        self.state.n_read += 1

    def on_write(self, token: Token) -> None:
        self.state.n_written += 1

    def on_source_done(self) -> None:
        self.state.source_done = True

    def on_flush(self) -> None:
        self.state = WaitKState(k=self.state.k)


class PassthroughPolicy:
    """Write whatever the transducer produces as soon as it is produced."""

    def __init__(self) -> None:
        self._source_done = False

    def next_action(self, input_available: bool, output_pending: bool) -> Action:
        if output_pending:
            return Action.WRITE
        if self._source_done:
            return Action.FLUSH
        if input_available:
            return Action.READ
        raise Deadlock("passthrough stalled with no input available")

    def on_read(self, token: Token) -> None:
        pass

    def on_write(self, token: Token) -> None:
        pass

    def on_source_done(self) -> None:
        self._source_done = True

    def on_flush(self) -> None:
        self._source_done = False


# ---------------------------------------------------------------------------
# transducers


class Transducer(Protocol):
    """Deterministic token mapping applied inside a stage.

    consume() feeds one input token and returns the outputs it enables;
    finish() returns any held-back tail at end of segment and resets the
    instance so it behaves like a freshly constructed one.
    """

    def consume(self, token: Token) -> Sequence[Token]:
        ...

    def finish(self) -> Sequence[Token]:
        ...


class DictionaryTransducer:
    """Stateless per-token substitution; unknown tokens pass through or drop."""

    def __init__(
        self, mapping: Mapping[str, Sequence[str]], default: str = "passthrough"
    ) -> None:
        if default not in ("passthrough", "drop"):
            raise ValueError(f"default must be 'passthrough' or 'drop', got {default!r}")
        self.default = default
        self.mapping: dict[str, tuple[Token, ...]] = {
            src: tuple(Token(t) for t in targets) for src, targets in mapping.items()
        }

    def consume(self, token: Token) -> Sequence[Token]:
        hit = self.mapping.get(token.text)
        if hit is not None:
            return hit
        return (token,) if self.default == "passthrough" else ()

    def finish(self) -> Sequence[Token]:
        return ()


def make_dictionary_transducer(
    mapping: Mapping[str, Sequence[str]], default: str = "passthrough"
) -> DictionaryTransducer:
    return DictionaryTransducer(mapping, default)


def identity_transducer() -> DictionaryTransducer:
    return DictionaryTransducer({}, default="passthrough")


def load_transducer_table(path) -> dict[str, tuple[str, ...]]:
    """Read a substitution table file: one ``src<TAB>tgt1 tgt2 ...`` per line."""
    table: dict[str, tuple[str, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'src<TAB>targets', got {line!r}"
                )
            src, targets = parts[0], tuple(parts[1].split())
            if src in table:
                raise ValueError(f"{path}:{lineno}: duplicate source token {src!r}")
            table[src] = targets
    return table


# ---------------------------------------------------------------------------
# generic token stage


@dataclass(frozen=True)
class ComputeCost:
    """Modeled per-action processing times in milliseconds."""

    read_ms: int = 0
    write_ms: int = 0

    def __post_init__(self) -> None:
        if self.read_ms < 0 or self.write_ms < 0:
            raise ValueError("compute costs must be >= 0")


class _StageBase:
    """Sequencing, timing, and provenance shared by all stage kinds.

    Emission times are computed on the stage's logical clock: reads pull the
    clock up to the input's availability, writes add their compute cost. With
    a VirtualClock the logical time is the emitted timestamp; with a
    WallClock the wall reading is used, floored at the logical lower bound so
    per-channel monotonicity and causality still hold.
    """

    def __init__(self, out_channel: Channel, clock: ClockLike | None, name: str) -> None:
        self.out_channel = out_channel
        self.clock = clock if clock is not None else VirtualClock()
        self.name = name
        self._seq = 0
        self._t = 0
        self._segment_open = False
        self._segment_id = 0
        self._first_input = 0

    def _note_input(self, ev: TimedEvent) -> None:
        if not self._segment_open:
            self._segment_open = True
            self._segment_id = ev.segment_id
            self._first_input = ev.first_input_ms
        else:
            self._first_input = min(self._first_input, ev.first_input_ms)

    def _close_segment(self) -> None:
        self._segment_open = False
        self._first_input = 0

    def _stamp(self) -> int:
        if isinstance(self.clock, VirtualClock):
            self.clock.advance_to(self._t)
            return self._t
        self._t = max(self._t, self.clock.now_ms)
        return self._t

    def _emit(self, payload) -> TimedEvent:
        ev = TimedEvent(
            channel=self.out_channel,
            seq=self._seq,
            emit_ms=self._stamp(),
            segment_id=self._segment_id,
            first_input_ms=self._first_input,
            payload=payload,
        )
        self._seq += 1
        return ev

    def assert_drained(self) -> None:
        if self._segment_open:
            raise Deadlock(
                f"stage {self.name}: input ended mid-segment "
                "(no end-of-sequence token observed)"
            )


class TokenStage(_StageBase):
    """Push-driven incremental stage over token events.

    feed() one upstream event at a time; outputs are returned as they become
    emittable under the policy. Block markers and begin markers only update
    provenance. End-of-sequence consumes any remaining queued input, drains
    permitted writes plus the transducer tail, emits the stage's own
    end-of-sequence, and resets policy and per-segment state.
    """

    def __init__(
        self,
        policy: StagePolicy,
        transducer: Transducer,
        *,
        out_channel: Channel,
        clock: ClockLike | None = None,
        compute: ComputeCost = ComputeCost(),
        name: str | None = None,
    ) -> None:
        super().__init__(out_channel, clock, name or out_channel.value.lower())
        self.policy = policy
        self.transducer = transducer
        self.compute = compute
        self._inq: deque[tuple[Token, int]] = deque()
        self._outq: deque[Token] = deque()

    def _read_one(self) -> None:
        tok, avail = self._inq.popleft()
        self._t = max(self._t, avail) + self.compute.read_ms
        self._outq.extend(self.transducer.consume(tok))
        self.policy.on_read(tok)

    def _write_one(self, outs: list[TimedEvent]) -> None:
        tok = self._outq.popleft()
        self._t += self.compute.write_ms
        outs.append(self._emit(tok))
        self.policy.on_write(tok)

    def _pump(self, outs: list[TimedEvent]) -> None:
        while True:
            try:
                action = self.policy.next_action(bool(self._inq), bool(self._outq))
            except Deadlock:
                return  # wait for the next upstream event
            if action is Action.READ and self._inq:
                self._read_one()
            elif action is Action.WRITE and self._outq:
                self._write_one(outs)
            else:
                return

    def feed(self, ev: TimedEvent) -> list[TimedEvent]:
        payload = ev.payload
        if not isinstance(payload, Token):
            raise MalformedInput(
                f"stage {self.name}: expected token events, "
                f"got {type(payload).__name__}"
            )
        outs: list[TimedEvent] = []
        if payload.kind is TokenKind.REGULAR:
            self._note_input(ev)
            self._inq.append((payload, ev.emit_ms))
            self._pump(outs)
        elif payload.kind in (TokenKind.BEGIN_SEQ, TokenKind.END_BLOCK):
            self._note_input(ev)
        else:  # END_SEQ
            self._note_input(ev)
            self._pump(outs)
            while self._inq:  # leftover reads still belong to this segment
                self._read_one()
            self._t = max(self._t, ev.emit_ms)
            self.policy.on_source_done()
            self._outq.extend(self.transducer.finish())
            while True:
                action = self.policy.next_action(False, bool(self._outq))
                if action is Action.WRITE and self._outq:
                    self._write_one(outs)
                else:
                    break
            outs.append(self._emit(EOS))
            self.policy.on_flush()
            self._outq.clear()
            self._close_segment()
        return outs


def run_stage(
    policy: StagePolicy,
    transducer: Transducer,
    events: Sequence[TimedEvent],
    clock: ClockLike | None = None,
    compute: ComputeCost = ComputeCost(),
    out_channel: Channel | None = None,
) -> list[TimedEvent]:
    """Run one policy+transducer stage over a complete input stream.

    The input must pass validate_stream (else MalformedInput). The output
    channel defaults to the cascade successor of the input's channel.
    Raises Deadlock if the input ends mid-segment.
    """
    events = list(events)
    report = validate_stream(events)
    if not report.ok:
        detail = "; ".join(v.message for v in report.violations[:3])
        raise MalformedInput(f"input stream invalid: {detail}")
    if out_channel is None:
        if not events:
            raise ValueError("out_channel is required for an empty input stream")
        idx = CASCADE.index(events[0].channel)
        if idx + 1 >= len(CASCADE):
            raise ValueError(f"no downstream channel after {events[0].channel.value}")
        out_channel = CASCADE[idx + 1]
    stage = TokenStage(
        policy, transducer, out_channel=out_channel, clock=clock, compute=compute
    )
    out: list[TimedEvent] = []
    for ev in events:
        out.extend(stage.feed(ev))
    stage.assert_drained()
    return out


# ---------------------------------------------------------------------------
# fixed-block emission with look-ahead


DEFAULT_BLOCK_FRAMES = 32
DEFAULT_HOP_MS = Fraction(275, 16)  # 17.1875 ms -> 550 ms per 32-frame block


@dataclass(frozen=True)
class BlockEmitterConfig:
    """Timing knobs of the block-wise recognizer stand-in."""

    block_frames: int = DEFAULT_BLOCK_FRAMES
    hop_ms: Fraction = DEFAULT_HOP_MS
    lookahead_blocks: int = 0
    compute_ms_per_block: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hop_ms", as_hop_ms(self.hop_ms))
        if self.block_frames < 1:
            raise ValueError("block_frames must be >= 1")
        if self.lookahead_blocks < 0:
            raise ValueError("lookahead_blocks must be >= 0")
        if self.compute_ms_per_block < 0:
            raise ValueError("compute_ms_per_block must be >= 0")
        if (self.block_frames * self.hop_ms).denominator != 1:
            raise ValueError(
                "block_frames * hop_ms must be a whole number of milliseconds"
            )

    @property
    def block_duration_ms(self) -> int:
        return int(self.block_frames * self.hop_ms)


def block_emit_schedule(total_frames: int, cfg: BlockEmitterConfig) -> list[int]:
    """Emission time of each block of a segment, in ms from segment start.

    Block b becomes transcribable once block b + lookahead has been heard,
    i.e. at (b + 1 + lookahead) block durations, plus per-block compute.
    Blocks whose look-ahead extends past the end of the segment emit at the
    segment end instead: there is nothing left to wait for.
    """
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    n_blocks = math.ceil(total_frames / cfg.block_frames)

    def end_of(block: int) -> int:
        frames = min((block + 1) * cfg.block_frames, total_frames)
        return math.ceil(frames * cfg.hop_ms)

    segment_end = end_of(n_blocks - 1)
    schedule = []
    for b in range(n_blocks):
        look = b + cfg.lookahead_blocks
        avail = end_of(look) if look < n_blocks else segment_end
        schedule.append(avail + cfg.compute_ms_per_block)
    return schedule


def chunk_script(tokens: Sequence[str], tokens_per_block: int) -> list[list[str]]:
    """Group a segment's transcript into per-block token groups."""
    if tokens_per_block < 1:
        raise ValueError("tokens_per_block must be >= 1")
    return [
        list(tokens[i : i + tokens_per_block])
        for i in range(0, len(tokens), tokens_per_block)
    ]


class BlockEmitterStage(_StageBase):
    """Recognizer stand-in: frame blocks in, scripted transcript tokens out.

    Consumes source-channel frame blocks and segment markers. Each block's
    token group (taken from the per-segment script) is emitted, terminated
    by an end-of-block marker, once the look-ahead requirement is met; the
    remainder is released when the segment ends. Per-block compute is
    modeled as pipelined: every block pays the cost once, from the moment
    its look-ahead is satisfied.
    """

    def __init__(
        self,
        cfg: BlockEmitterConfig,
        script: Sequence[Sequence[str]],
        tokens_per_block: int = 1,
        *,
        clock: ClockLike | None = None,
        name: str = "isr",
    ) -> None:
        super().__init__(Channel.ISR, clock, name)
        self.cfg = cfg
        self.script = [list(seg) for seg in script]
        self.tokens_per_block = tokens_per_block
        self._script_idx = 0
        self._groups: list[list[str]] = []
        self._released = 0
        self._blocks_read = 0

    def _open_segment(self, ev: TimedEvent) -> None:
        if self._segment_open:
            return
        if self._script_idx >= len(self.script):
            raise MalformedInput(
                f"stage {self.name}: input has more segments than the script "
                f"({len(self.script)})"
            )
        self._note_input(ev)
        self._groups = chunk_script(self.script[self._script_idx], self.tokens_per_block)
        self._released = 0
        self._blocks_read = 0

    def _release_group(self, index: int, avail_ms: int, outs: list[TimedEvent]) -> None:
        self._t = max(self._t, avail_ms + self.cfg.compute_ms_per_block)
        if index < len(self._groups):
            for text in self._groups[index]:
                outs.append(self._emit(Token(text)))
        outs.append(self._emit(EOB))
        self._released = index + 1

    def feed(self, ev: TimedEvent) -> list[TimedEvent]:
        outs: list[TimedEvent] = []
        payload = ev.payload
        if isinstance(payload, FrameBlock):
            self._open_segment(ev)
            self._note_input(ev)
            block = self._blocks_read
            self._blocks_read += 1
            # reading block b satisfies the look-ahead of block b - lookahead
            ready = block - self.cfg.lookahead_blocks
            if ready >= 0:
                self._release_group(ready, payload.end_ms, outs)
        elif isinstance(payload, Token) and payload.kind is TokenKind.BEGIN_SEQ:
            self._open_segment(ev)
        elif isinstance(payload, Token) and payload.kind is TokenKind.END_SEQ:
            self._open_segment(ev)
            self._note_input(ev)
            pending = max(self._blocks_read, len(self._groups))
            for index in range(self._released, pending):
                self._release_group(index, ev.emit_ms, outs)
            self._t = max(self._t, ev.emit_ms)
            outs.append(self._emit(EOS))
            self._script_idx += 1
            self._groups = []
            self._close_segment()
        else:
            raise MalformedInput(
                f"stage {self.name}: unexpected source payload {payload!r}"
            )
        return outs


# ---------------------------------------------------------------------------
# attention-based sub-segmentation

ROW_SUM_TOLERANCE = 1e-6


class NotStochastic(ValueError):
    """An attention row does not sum to 1 within tolerance."""


@dataclass(frozen=True)
class AttentionMatrix:
    """Row-stochastic alignment weights: one row per output token, one
    column per input frame."""

    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("attention matrix needs at least one row")
        width = len(self.weights[0])
        if width < 1:
            raise ValueError("attention matrix needs at least one column")
        for r, row in enumerate(self.weights):
            if len(row) != width:
                raise ValueError(f"row {r} has {len(row)} columns, expected {width}")
            if any(w < 0 for w in row):
                raise ValueError(f"row {r} contains negative weights")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AttentionMatrix":
        return cls(tuple(tuple(float(w) for w in row) for row in rows))

    @property
    def n_tokens(self) -> int:
        return len(self.weights)

    @property
    def n_frames(self) -> int:
        return len(self.weights[0])


@dataclass(frozen=True)
class SegmentBoundaries:
    """Interior cut points partitioning [0, n_frames) into sub-segments."""

    cuts: tuple[int, ...]
    n_frames: int

    @property
    def spans(self) -> tuple[tuple[int, int], ...]:
        edges = (0,) + self.cuts + (self.n_frames,)
        return tuple(zip(edges, edges[1:]))


def segment_by_attention(attention: AttentionMatrix) -> SegmentBoundaries:
    """Split input frames into sub-segments from token/frame alignments.

    Each output token is anchored at its argmax frame (ties to the lowest
    index); anchors are clamped to be non-decreasing; a cut is placed at the
    rounded-up midpoint between consecutive distinct anchors.
    """
    anchors: list[int] = []
    for r, row in enumerate(attention.weights):
        total = sum(row)
        if abs(total - 1.0) > ROW_SUM_TOLERANCE:
            raise NotStochastic(f"row {r} sums to {total!r}, expected 1 +/- 1e-6")
        anchor = row.index(max(row))
        if anchors and anchor < anchors[-1]:
            anchor = anchors[-1]
        anchors.append(anchor)
    cuts = [
        (a + b + 1) // 2  # ceil of the midpoint
        for a, b in zip(anchors, anchors[1:])
        if b > a
    ]
    return SegmentBoundaries(tuple(cuts), attention.n_frames)


# ---------------------------------------------------------------------------
# accent-phrase chunking (hold-one emission)


@dataclass(frozen=True)
class BoundaryRules:
    """Phrase-boundary lexicon: split before tokens in one set and after
    tokens in the other. Stands in for a part-of-speech-driven segmenter."""

    boundary_before: frozenset[str] = frozenset()
    boundary_after: frozenset[str] = frozenset()

    def splits_between(self, prev_text: str, next_text: str) -> bool:
        return next_text in self.boundary_before or prev_text in self.boundary_after

    @classmethod
    def from_file(cls, path) -> "BoundaryRules":
        """Load a lexicon: one ``pre <token>`` or ``post <token>`` per line."""
        before: set[str] = set()
        after: set[str] = set()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2 or parts[0] not in ("pre", "post"):
                    raise ValueError(
                        f"{path}:{lineno}: expected 'pre <token>' or 'post <token>', "
                        f"got {line!r}"
                    )
                (before if parts[0] == "pre" else after).add(parts[1])
        return cls(frozenset(before), frozenset(after))


@dataclass(frozen=True)
class PhraseEmission:
    """An accent phrase plus the index of the token whose arrival releases it."""

    phrase: AccentPhrase
    released_by: int


def accent_phrase_stage(tokens: Sequence[Token], rules: BoundaryRules) -> list[PhraseEmission]:
    """Group one segment's tokens into accent phrases under hold-one timing.

    Phrase p is released by the first token of phrase p+1; the final phrase
    is released by the end-of-sequence token. Begin and end-of-block markers
    are transparent. The input must be a single complete segment.
    """
    if not tokens or tokens[-1].kind is not TokenKind.END_SEQ:
        raise ValueError("token stream must end with the end-of-sequence token")
    emissions: list[PhraseEmission] = []
    buffer: list[str] = []
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.END_SEQ:
            if i != len(tokens) - 1:
                raise ValueError("token stream must contain exactly one segment")
            if buffer:
                emissions.append(PhraseEmission(phrase_from_tokens(buffer), i))
        elif tok.kind is TokenKind.REGULAR:
            if buffer and rules.splits_between(buffer[-1], tok.text):
                emissions.append(PhraseEmission(phrase_from_tokens(buffer), i))
                buffer = [tok.text]
            else:
                buffer.append(tok.text)
    return emissions


class SynthStage(_StageBase):
    """Synthesis timing stage: target tokens in, synthesized chunks out.

    Buffers tokens into accent phrases via the boundary rules under the
    hold-one policy, predicts each phrase's playback duration, and emits one
    chunk event per phrase at the time the phrase became synthesizable.
    """

    def __init__(
        self,
        rules: BoundaryRules,
        duration_model: DurationModel,
        compute_ms_per_phrase: int = 0,
        *,
        clock: ClockLike | None = None,
        name: str = "itts",
    ) -> None:
        super().__init__(Channel.ITTS, clock, name)
        if compute_ms_per_phrase < 0:
            raise ValueError("compute_ms_per_phrase must be >= 0")
        self.rules = rules
        self.duration_model = duration_model
        self.compute_ms_per_phrase = compute_ms_per_phrase
        self._buffer: list[str] = []

    def _release_phrase(self, avail_ms: int, outs: list[TimedEvent]) -> None:
        phrase = phrase_from_tokens(self._buffer)
        duration = predict_duration(phrase, self.duration_model)
        self._t = max(self._t, avail_ms) + self.compute_ms_per_phrase
        outs.append(self._emit(SynthChunkRef(duration, " ".join(self._buffer))))
        self._buffer = []

    def feed(self, ev: TimedEvent) -> list[TimedEvent]:
        payload = ev.payload
        if not isinstance(payload, Token):
            raise MalformedInput(
                f"stage {self.name}: expected token events, "
                f"got {type(payload).__name__}"
            )
        outs: list[TimedEvent] = []
        if payload.kind is TokenKind.REGULAR:
            self._note_input(ev)
            if self._buffer and self.rules.splits_between(self._buffer[-1], payload.text):
                self._release_phrase(ev.emit_ms, outs)
            self._buffer.append(payload.text)
        elif payload.kind in (TokenKind.BEGIN_SEQ, TokenKind.END_BLOCK):
            self._note_input(ev)
        else:  # END_SEQ
            self._note_input(ev)
            if self._buffer:
                self._release_phrase(ev.emit_ms, outs)
            self._t = max(self._t, ev.emit_ms)
            outs.append(self._emit(EOS))
            self._close_segment()
        return outs
