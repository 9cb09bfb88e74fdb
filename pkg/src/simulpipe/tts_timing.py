"""Accent phrases, duration prediction, and the playback queue.

Phrases are the synthesis unit: a mora sequence with a pitch-accent type.
A table-based duration model stands in for a learned one; a chunk's playback
duration stands in for its waveform. schedule_playback models the single
output audio device, where a chunk that becomes ready while an earlier one
is still playing gets queued: that queueing delay is the speaking latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

#: Synthesis frame period; every duration is a whole number of frames.
FRAME_PERIOD_MS = 5

#: Fallback per-mora playback time for the uniform duration model.
DEFAULT_MORA_MS = 150

_VOWELS = frozenset("aeiou")


def split_moras(text: str) -> tuple[str, ...]:
    """Split romanized text into mora symbols.

    Covers plain consonant+vowel moras, standalone vowels, the syllabic
    nasal, geminate consonants, and long vowels ("shiten" -> shi te n,
    "itte" -> i t te). Tokens with no vowels become a single mora. This is a
    romaji approximation, not a full grapheme-to-phoneme front end.
    """
    moras: list[str] = []
    cluster = ""
    for ch in text.lower():
        if ch in _VOWELS:
            moras.append(cluster + ch)
            cluster = ""
        elif cluster == "n" and ch != "y":
            moras.append("n")
            cluster = ch
        elif cluster and cluster[-1] == ch:
            moras.append(cluster)
            cluster = ch
        else:
            cluster += ch
    if cluster:
        moras.append(cluster)
    return tuple(moras)


@dataclass(frozen=True)
class AccentPhrase:
    """A mora sequence carrying one pitch-accent pattern.

    accent_type is the 1-based mora position of the accent nucleus; 0 marks
    a flat (unaccented) phrase.
    """

    moras: tuple[str, ...]
    accent_type: int = 0
    surface: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "moras", tuple(self.moras))
        object.__setattr__(self, "surface", tuple(self.surface))
        if len(self.moras) < 1:
            raise ValueError("a phrase needs at least one mora")
        if any(not m for m in self.moras):
            raise ValueError("mora symbols must be non-empty")
        if not 0 <= self.accent_type <= len(self.moras):
            raise ValueError(
                f"accent_type {self.accent_type} outside 0..{len(self.moras)}"
            )

    @property
    def n_moras(self) -> int:
        return len(self.moras)

    @property
    def text(self) -> str:
        return " ".join(self.surface) if self.surface else "".join(self.moras)


def phrase_from_tokens(texts: Sequence[str], accent_type: int = 0) -> AccentPhrase:
    """Build a phrase from romanized token texts, splitting each into moras."""
    if not texts:
        raise ValueError("a phrase needs at least one token")
    moras: list[str] = []
    for text in texts:
        moras.extend(split_moras(text))
    return AccentPhrase(tuple(moras), accent_type, tuple(texts))


@dataclass(frozen=True)
class MoraFeature:
    """Per-mora linguistic features: symbol, position, phrase shape, pitch."""

    mora: str
    position: int  # 1-based within the phrase
    n_moras: int
    accent_type: int
    high_pitch: bool


def extract_features(phrase: AccentPhrase) -> list[MoraFeature]:
    """One feature record per mora, with standard Tokyo-accent pitch flags.

    Mora 1 is low unless the nucleus is on it (accent_type 1). Later moras
    are high up to and including the nucleus and low after it; a flat phrase
    (accent_type 0) stays high from mora 2 onward.
    """
    n = phrase.n_moras
    a = phrase.accent_type
    records = []
    for pos, mora in enumerate(phrase.moras, start=1):
        if pos == 1:
            high = a == 1
        elif a == 0:
            high = True
        else:
            high = pos <= a
        records.append(MoraFeature(mora, pos, n, a, high))
    return records


class UnknownMora(KeyError):
    """The duration model has no entry for a mora and no fallback."""


class DurationModel(Protocol):
    """Maps a mora in context to its playback duration in milliseconds."""

    def mora_duration_ms(
        self, mora: str, position: int, n_moras: int, accent_type: int
    ) -> int:
        ...


@dataclass(frozen=True)
class TableDurationModel:
    """Per-mora lookup table with an optional fallback duration."""

    table: dict
    default_ms: int | None = DEFAULT_MORA_MS

    def mora_duration_ms(
        self, mora: str, position: int, n_moras: int, accent_type: int
    ) -> int:
        hit = self.table.get(mora)
        if hit is None:
            if self.default_ms is None:
                raise UnknownMora(mora)
            hit = self.default_ms
        return hit

    @classmethod
    def uniform(cls, ms: int = DEFAULT_MORA_MS) -> "TableDurationModel":
        return cls({}, ms)

    @classmethod
    def from_file(cls, path) -> "TableDurationModel":
        """Load ``mora<TAB>ms`` lines; an optional ``default<TAB>ms`` line
        sets the fallback (absent it, unknown moras raise UnknownMora)."""
        table: dict[str, int] = {}
        default_ms: int | None = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[1].strip().isdigit():
                    raise ValueError(
                        f"{path}:{lineno}: expected 'mora<TAB>ms', got {line!r}"
                    )
                ms = int(parts[1])
                if ms <= 0:
                    raise ValueError(f"{path}:{lineno}: duration must be positive")
                if parts[0] == "default":
                    default_ms = ms
                elif parts[0] in table:
                    raise ValueError(f"{path}:{lineno}: duplicate mora {parts[0]!r}")
                else:
                    table[parts[0]] = ms
        return cls(table, default_ms)


def _ceil_to_frame(ms: int) -> int:
    return math.ceil(ms / FRAME_PERIOD_MS) * FRAME_PERIOD_MS


def predict_duration(phrase: AccentPhrase, model: DurationModel) -> int:
    """Total playback time of a phrase: per-mora durations, each rounded up
    to the synthesis frame period, summed."""
    total = 0
    for pos, mora in enumerate(phrase.moras, start=1):
        ms = model.mora_duration_ms(mora, pos, phrase.n_moras, phrase.accent_type)
        if ms <= 0:
            raise ValueError(f"duration model returned {ms} ms for {mora!r}")
        total += _ceil_to_frame(ms)
    return total


@dataclass(frozen=True)
class SynthChunk:
    """A synthesized phrase ready for playback at ready_ms."""

    phrase: AccentPhrase
    ready_ms: int
    duration_ms: int
    segment_id: int = 0

    def __post_init__(self) -> None:
        if self.ready_ms < 0:
            raise ValueError("ready_ms must be >= 0")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if self.duration_ms % FRAME_PERIOD_MS != 0:
            raise ValueError(
                f"duration_ms must be a multiple of {FRAME_PERIOD_MS} ms"
            )


@dataclass(frozen=True)
class PlannedChunk:
    chunk: SynthChunk
    play_start_ms: int
    speaking_latency_ms: int


@dataclass(frozen=True)
class PlaybackPlan:
    """Playback times for a chunk sequence on one audio device."""

    items: tuple[PlannedChunk, ...]

    @property
    def latencies_ms(self) -> tuple[int, ...]:
        return tuple(item.speaking_latency_ms for item in self.items)

    @property
    def mean_latency_ms(self) -> float:
        if not self.items:
            raise ValueError("empty playback plan has no latency statistics")
        return sum(self.latencies_ms) / len(self.items)

    @property
    def max_latency_ms(self) -> int:
        if not self.items:
            raise ValueError("empty playback plan has no latency statistics")
        return max(self.latencies_ms)


def schedule_playback(chunks: Sequence[SynthChunk]) -> PlaybackPlan:
    """Queue chunks on the output device in arrival order.

    A chunk starts playing when it is ready or when the previous chunk ends,
    whichever is later; speaking latency is the difference between its play
    start and its ready time. Chunks must arrive in ready order.
    """
    items: list[PlannedChunk] = []
    prev_end = None
    prev_ready = None
    for chunk in chunks:
        if prev_ready is not None and chunk.ready_ms < prev_ready:
            raise ValueError("chunks must be ordered by non-decreasing ready_ms")
        prev_ready = chunk.ready_ms
        start = chunk.ready_ms if prev_end is None else max(chunk.ready_ms, prev_end)
        items.append(PlannedChunk(chunk, start, start - chunk.ready_ms))
        prev_end = start + chunk.duration_ms
    return PlaybackPlan(tuple(items))
