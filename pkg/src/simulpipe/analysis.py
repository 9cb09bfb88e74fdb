"""Log alignment, latency statistics, quality metrics, and the text chart.

Everything here is a pure function over already-loaded event logs or token
sequences; file IO stays in the CLI layer.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .stream_core import (
    Channel,
    FrameBlock,
    SynthChunkRef,
    TimedEvent,
    Token,
    TokenKind,
)
from .tts_timing import SynthChunk, phrase_from_tokens, schedule_playback


class EmptyInput(ValueError):
    pass


class InconsistentProvenance(ValueError):
    """A downstream log references a segment the source log does not have."""


class EmptyReference(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


# ---------------------------------------------------------------------------
# alignment and ear-voice span


@dataclass(frozen=True)
class AlignedUnit:
    """Per-segment first-output times of each cascade stage."""

    segment_id: int
    source_start_ms: int
    isr_first_ms: int | None
    imt_first_ms: int | None
    itts_first_ms: int | None

    @property
    def missing_channels(self) -> tuple[str, ...]:
        missing = []
        for name, value in (
            ("ISR", self.isr_first_ms),
            ("IMT", self.imt_first_ms),
            ("ITTS", self.itts_first_ms),
        ):
            if value is None:
                missing.append(name)
        return tuple(missing)


def _is_first_output(ev: TimedEvent) -> bool:
    """Regular tokens and synthesized chunks count as module output;
    markers do not."""
    if isinstance(ev.payload, SynthChunkRef):
        return True
    return isinstance(ev.payload, Token) and ev.payload.kind is TokenKind.REGULAR


def align_outputs(logs: Mapping[Channel, Sequence[TimedEvent]]) -> list[AlignedUnit]:
    """Join the per-channel logs into one unit per source segment.

    The source log defines the segment inventory and each segment's start
    time; each downstream channel contributes the emit time of its first
    output for that segment. A unit missing some channel is kept with that
    field unset rather than fabricated. A downstream event referencing an
    unknown segment raises InconsistentProvenance.
    """
    source = logs.get(Channel.SOURCE)
    if not source:
        raise EmptyInput("no source events to align against")

    starts: dict[int, int] = {}
    for ev in source:
        if ev.segment_id not in starts or ev.emit_ms < starts[ev.segment_id]:
            starts[ev.segment_id] = ev.emit_ms

    firsts: dict[Channel, dict[int, int]] = {}
    for channel in (Channel.ISR, Channel.IMT, Channel.ITTS):
        per_segment: dict[int, int] = {}
        for ev in logs.get(channel, ()):  # noqa: B020 - mapping access
            if ev.segment_id not in starts:
                raise InconsistentProvenance(
                    f"{channel.value} log references unknown segment {ev.segment_id}"
                )
            if _is_first_output(ev):
                prev = per_segment.get(ev.segment_id)
                if prev is None or ev.emit_ms < prev:
                    per_segment[ev.segment_id] = ev.emit_ms
        firsts[channel] = per_segment

    return [
        AlignedUnit(
            segment_id=sid,
            source_start_ms=starts[sid],
            isr_first_ms=firsts[Channel.ISR].get(sid),
            imt_first_ms=firsts[Channel.IMT].get(sid),
            itts_first_ms=firsts[Channel.ITTS].get(sid),
        )
        for sid in sorted(starts)
    ]


@dataclass(frozen=True)
class LatencyReport:
    """Per-module delay statistics plus speaking-latency statistics.

    Delays and latencies are in seconds; variances are sample variances
    (n - 1 denominator, 0.0 for a single unit, nan over no data).
    """

    units: int
    isr_mean: float
    isr_var: float
    imt_mean: float
    imt_var: float
    itts_mean: float
    itts_var: float
    speak_mean: float = float("nan")
    speak_max: float = float("nan")


def _mean_and_sample_var(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    mean = sum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, var


def compute_evs(units: Sequence[AlignedUnit]) -> LatencyReport:
    """Ear-voice-span statistics: per-module first-output delay from the
    segment's source start, averaged over aligned units."""
    if not units:
        raise EmptyInput("no aligned units")

    def delays(getter) -> list[float]:
        out = []
        for unit in units:
            value = getter(unit)
            if value is not None:
                out.append((value - unit.source_start_ms) / 1000.0)
        return out

    isr_mean, isr_var = _mean_and_sample_var(delays(lambda u: u.isr_first_ms))
    imt_mean, imt_var = _mean_and_sample_var(delays(lambda u: u.imt_first_ms))
    itts_mean, itts_var = _mean_and_sample_var(delays(lambda u: u.itts_first_ms))
    return LatencyReport(
        units=len(units),
        isr_mean=isr_mean,
        isr_var=isr_var,
        imt_mean=imt_mean,
        imt_var=imt_var,
        itts_mean=itts_mean,
        itts_var=itts_var,
    )


def chunks_from_events(events: Sequence[TimedEvent]) -> list[SynthChunk]:
    """Reconstruct playback chunks from a synthesis-channel log."""
    chunks = []
    for ev in events:
        if isinstance(ev.payload, SynthChunkRef):
            chunks.append(
                SynthChunk(
                    phrase=phrase_from_tokens(ev.payload.text.split()),
                    ready_ms=ev.emit_ms,
                    duration_ms=ev.payload.duration_ms,
                    segment_id=ev.segment_id,
                )
            )
    return chunks


def build_latency_report(logs: Mapping[Channel, Sequence[TimedEvent]]) -> LatencyReport:
    """Full latency report for a run: ear-voice span per module plus
    speaking latency from replaying the synthesis log through the playback
    queue."""
    report = compute_evs(align_outputs(logs))
    chunks = chunks_from_events(logs.get(Channel.ITTS, ()))
    if chunks:
        plan = schedule_playback(chunks)
        report = LatencyReport(
            units=report.units,
            isr_mean=report.isr_mean,
            isr_var=report.isr_var,
            imt_mean=report.imt_mean,
            imt_var=report.imt_var,
            itts_mean=report.itts_mean,
            itts_var=report.itts_var,
            speak_mean=plan.mean_latency_ms / 1000.0,
            speak_max=plan.max_latency_ms / 1000.0,
        )
    return report


REPORT_KEYS = (
    "isr_delay_mean",
    "isr_delay_var",
    "imt_delay_mean",
    "imt_delay_var",
    "itts_delay_mean",
    "itts_delay_var",
    "speak_latency_mean",
    "speak_latency_max",
    "units",
)


def latency_report_rows(report: LatencyReport) -> list[tuple[str, str]]:
    values = (
        report.isr_mean,
        report.isr_var,
        report.imt_mean,
        report.imt_var,
        report.itts_mean,
        report.itts_var,
        report.speak_mean,
        report.speak_max,
    )
    rows = [(key, f"{value:.3f}") for key, value in zip(REPORT_KEYS, values)]
    rows.append(("units", str(report.units)))
    return rows


def format_latency_report(report: LatencyReport) -> str:
    return "\n".join(f"{key} = {value}" for key, value in latency_report_rows(report)) + "\n"


# ---------------------------------------------------------------------------
# quality metrics


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Minimum insert/delete/substitute operations turning a into b."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:  # unit costs: a match never beats staying put
                cur[j] = prev[j - 1]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
                cur[j] = best + 1
        prev = cur
    return prev[-1]


def _wer_tokens(text: str) -> list[str]:
    return text.lower().split()


def _cer_chars(text: str) -> str:
    return "".join(text.split())


def wer(hyp: str, ref: str) -> float:
    """Word error rate over lowercased whitespace tokens."""
    ref_tokens = _wer_tokens(ref)
    if not ref_tokens:
        raise EmptyReference("reference has no tokens")
    return edit_distance(_wer_tokens(hyp), ref_tokens) / len(ref_tokens)


def cer(hyp: str, ref: str) -> float:
    """Character error rate over unicode characters, whitespace removed."""
    ref_chars = _cer_chars(ref)
    if not ref_chars:
        raise EmptyReference("reference has no characters")
    return edit_distance(_cer_chars(hyp), ref_chars) / len(ref_chars)


def _paired(hyps: Sequence, refs: Sequence) -> None:
    if len(hyps) != len(refs):
        raise LengthMismatch(
            f"hypothesis and reference counts differ: {len(hyps)} vs {len(refs)}"
        )
    if not hyps:
        raise EmptyCorpus("no segments to score")


def corpus_wer(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Corpus word error rate: summed edit distance over summed ref length."""
    _paired(hyps, refs)
    dist = 0
    total = 0
    for lineno, (h, r) in enumerate(zip(hyps, refs), start=1):
        ref_tokens = _wer_tokens(r)
        if not ref_tokens:
            raise EmptyReference(f"reference line {lineno} has no tokens")
        dist += edit_distance(_wer_tokens(h), ref_tokens)
        total += len(ref_tokens)
    return dist / total


def corpus_cer(hyps: Sequence[str], refs: Sequence[str]) -> float:
    _paired(hyps, refs)
    dist = 0
    total = 0
    for lineno, (h, r) in enumerate(zip(hyps, refs), start=1):
        ref_chars = _cer_chars(r)
        if not ref_chars:
            raise EmptyReference(f"reference line {lineno} has no characters")
        dist += edit_distance(_cer_chars(h), ref_chars)
        total += len(ref_chars)
    return dist / total


@dataclass(frozen=True)
class ScoreReport:
    """Quality metrics; fields are filled per scoring mode."""

    wer: float | None = None
    cer: float | None = None
    bleu: Mapping[int, float] | None = None
    length_ratio: float | None = None


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hyp_corpus: Sequence[Sequence[str]],
    ref_corpus: Sequence[Sequence[str]],
    max_n: int = 4,
) -> ScoreReport:
    """Corpus-level BLEU with a single reference and exponential smoothing.

    Modified n-gram precisions are pooled over the corpus. The q-th
    precision with zero matches (but a nonzero n-gram total) is smoothed to
    1 / (2^q * total_n); orders with no n-grams at all stay zero and force
    the affected cumulative scores to 0. The brevity penalty is
    min(1, e^(1 - |ref| / |hyp|)). BLEU-n is the penalized geometric mean of
    precisions 1..n, scaled to 0..100.
    """
    _paired(hyp_corpus, ref_corpus)
    correct = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyp_corpus, ref_corpus):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            correct[n - 1] += sum(
                min(count, ref_counts.get(gram, 0))
                for gram, count in hyp_counts.items()
            )
    if ref_len == 0:
        raise EmptyReference("reference corpus has no tokens")

    precisions: list[Fraction] = []
    zeros = 0
    for n in range(max_n):
        if total[n] == 0:
            precisions.append(Fraction(0))
        elif correct[n] == 0:
            zeros += 1
            precisions.append(Fraction(1, 2**zeros * total[n]))
        else:
            precisions.append(Fraction(correct[n], total[n]))

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1 - ref_len / hyp_len)

    scores: dict[int, float] = {}
    for n in range(1, max_n + 1):
        prefix = precisions[:n]
        if any(p == 0 for p in prefix) or bp == 0.0:
            scores[n] = 0.0
        else:
            scores[n] = bp * math.exp(sum(math.log(p) for p in prefix) / n) * 100.0
    return ScoreReport(bleu=scores, length_ratio=hyp_len / ref_len)


# ---------------------------------------------------------------------------
# alignment chart


_CHART_ORDER = (Channel.SOURCE, Channel.ISR, Channel.IMT, Channel.ITTS)


def _cell_text(ev: TimedEvent) -> str:
    payload = ev.payload
    if isinstance(payload, FrameBlock):
        return f"[{payload.n_frames}f]"
    if isinstance(payload, SynthChunkRef):
        return payload.text
    return payload.text


def render_alignment_chart(
    logs: Mapping[Channel, Sequence[TimedEvent]],
    block_ms: int = 550,
    col_width: int = 10,
) -> str:
    """Fixed-width per-channel timeline, one column per block period.

    Events land in the column of their emit time relative to the segment's
    source start; cell contents are truncated to the column width. Output is
    deterministic for identical inputs.
    """
    if block_ms < 1 or col_width < 2:
        raise ValueError("block_ms must be >= 1 and col_width >= 2")

    by_segment: dict[int, dict[Channel, list[TimedEvent]]] = {}
    for channel, events in logs.items():
        for ev in events:
            by_segment.setdefault(ev.segment_id, {}).setdefault(channel, []).append(ev)

    lines = [f"alignment chart: {len(by_segment)} segment(s), {block_ms} ms per column"]
    label_width = max(len(c.value) for c in _CHART_ORDER) + 1

    def clip(text: str) -> str:
        if len(text) > col_width:
            return text[: col_width - 1] + "~"
        return text.ljust(col_width)

    for sid in sorted(by_segment):
        channels = by_segment[sid]
        base_candidates = [ev.emit_ms for ev in channels.get(Channel.SOURCE, [])]
        if not base_candidates:
            base_candidates = [ev.emit_ms for evs in channels.values() for ev in evs]
        base = min(base_candidates)
        n_cols = 1 + max(
            (ev.emit_ms - base) // block_ms
            for evs in channels.values()
            for ev in evs
        )
        lines.append(f"---- segment {sid} (source start {base} ms) ----")
        header = " " * label_width + "".join(
            "|" + clip(str(base + c * block_ms)) for c in range(n_cols)
        )
        lines.append(header)
        for channel in _CHART_ORDER:
            cells: list[list[str]] = [[] for _ in range(n_cols)]
            for ev in channels.get(channel, []):
                cells[(ev.emit_ms - base) // block_ms].append(_cell_text(ev))
            row = channel.value.ljust(label_width) + "".join(
                "|" + clip(" ".join(cell)) for cell in cells
            )
            lines.append(row)
    return "\n".join(lines) + "\n"
