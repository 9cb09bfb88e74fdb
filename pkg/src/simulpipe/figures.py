"""Matplotlib renderings of run logs and latency reports.

Figures complement the text chart and the delimited report: a timeline of
all four channels (the visual counterpart of the alignment chart) and a bar
summary of per-module delays and speaking latency.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .analysis import LatencyReport, chunks_from_events  # noqa: E402
from .stream_core import (  # noqa: E402
    Channel,
    FrameBlock,
    SynthChunkRef,
    TimedEvent,
    Token,
    TokenKind,
)
from .tts_timing import schedule_playback  # noqa: E402

_ROWS = (Channel.SOURCE, Channel.ISR, Channel.IMT, Channel.ITTS)
_ANNOTATE_LIMIT = 80  # skip per-token labels on busy timelines


def save_alignment_figure(
    logs: Mapping[Channel, Sequence[TimedEvent]],
    path,
    block_ms: int = 550,
    dpi: int = 110,
) -> None:
    """Timeline of every channel: source blocks and synthesized chunks as
    bars, token emissions as markers."""
    fig, ax = plt.subplots(figsize=(11, 3.6))
    y_of = {channel: len(_ROWS) - 1 - i for i, channel in enumerate(_ROWS)}
    t_max = block_ms

    n_tokens = sum(
        1
        for events in logs.values()
        for ev in events
        if isinstance(ev.payload, Token)
    )
    annotate = n_tokens <= _ANNOTATE_LIMIT

    for channel, events in logs.items():
        y = y_of[channel]
        for ev in events:
            payload = ev.payload
            if isinstance(payload, FrameBlock):
                width = float(payload.duration_ms)
                ax.barh(
                    y, width, left=payload.start_ms, height=0.5,
                    color="#c8d8eb", edgecolor="#5b7fa6", linewidth=0.6,
                )
                t_max = max(t_max, payload.start_ms + width)
            elif isinstance(payload, SynthChunkRef):
                ax.barh(
                    y, payload.duration_ms, left=ev.emit_ms, height=0.5,
                    color="#f2c894", edgecolor="#b07b2e", linewidth=0.6,
                )
                if annotate:
                    ax.annotate(
                        payload.text, (ev.emit_ms, y + 0.32),
                        fontsize=6, rotation=20, annotation_clip=False,
                    )
                t_max = max(t_max, ev.emit_ms + payload.duration_ms)
            else:
                special = payload.kind is not TokenKind.REGULAR
                ax.plot(
                    ev.emit_ms, y,
                    marker="x" if special else "o",
                    markersize=4, color="#777777" if special else "#2c6e49",
                    linestyle="none",
                )
                if annotate:
                    ax.annotate(
                        payload.text, (ev.emit_ms, y + 0.18),
                        fontsize=6, rotation=45, annotation_clip=False,
                    )
                t_max = max(t_max, ev.emit_ms)

    for x in range(0, int(math.ceil(t_max / block_ms)) * block_ms + 1, block_ms):
        ax.axvline(x, color="#dddddd", linewidth=0.5, zorder=0)
    ax.set_yticks([y_of[c] for c in _ROWS])
    ax.set_yticklabels([c.value for c in _ROWS])
    ax.set_xlabel("time (ms)")
    ax.set_ylim(-0.6, len(_ROWS) - 0.2)
    ax.set_title(f"channel timeline ({block_ms} ms blocks)")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def save_delay_figure(report: LatencyReport, path, dpi: int = 110) -> None:
    """Per-module mean delays with standard-deviation whiskers, plus the
    speaking-latency mean and max."""
    fig, ax = plt.subplots(figsize=(6.5, 3.4))
    labels = ["ISR", "IMT", "ITTS", "speak mean", "speak max"]
    values = [
        report.isr_mean,
        report.imt_mean,
        report.itts_mean,
        report.speak_mean,
        report.speak_max,
    ]
    errors = [
        math.sqrt(report.isr_var) if report.isr_var == report.isr_var else 0.0,
        math.sqrt(report.imt_var) if report.imt_var == report.imt_var else 0.0,
        math.sqrt(report.itts_var) if report.itts_var == report.itts_var else 0.0,
        0.0,
        0.0,
    ]
    colors = ["#5b7fa6", "#5b7fa6", "#5b7fa6", "#b07b2e", "#b07b2e"]
    shown = [0.0 if v != v else v for v in values]  # nan-safe bar heights
    ax.bar(labels, shown, yerr=errors, color=colors, capsize=3)
    for i, v in enumerate(values):
        label = "n/a" if v != v else f"{v:.3f}"
        ax.annotate(label, (i, shown[i]), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("seconds")
    ax.set_title(f"first-output delay and speaking latency ({report.units} unit(s))")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def save_playback_figure(
    logs: Mapping[Channel, Sequence[TimedEvent]], path, dpi: int = 110
) -> None:
    """Ready-vs-play timeline of the synthesis queue, one bar per chunk."""
    chunks = chunks_from_events(logs.get(Channel.ITTS, ()))
    fig, ax = plt.subplots(figsize=(8, 3.2))
    if chunks:
        plan = schedule_playback(chunks)
        for i, item in enumerate(plan.items):
            ax.barh(
                i, item.chunk.duration_ms, left=item.play_start_ms, height=0.55,
                color="#f2c894", edgecolor="#b07b2e", linewidth=0.6,
            )
            ax.plot(item.chunk.ready_ms, i, marker="|", markersize=12, color="#2c6e49")
            if item.speaking_latency_ms:
                ax.plot(
                    [item.chunk.ready_ms, item.play_start_ms], [i, i],
                    color="#b03a2e", linewidth=1.0, linestyle=":",
                )
        ax.set_yticks(range(len(plan.items)))
        ax.set_yticklabels([item.chunk.phrase.text for item in plan.items], fontsize=7)
        ax.invert_yaxis()
    ax.set_xlabel("time (ms)")
    ax.set_title("playback queue: ready marks, play bars, queueing delay dotted")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
