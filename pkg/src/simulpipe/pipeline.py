"""Pipeline configuration, assembly, and the simulation and pipe drivers.

A run wires the fixed cascade SRC -> ISR -> IMT -> ITTS. In sim mode the
whole cascade executes in-process on virtual time, stage by stage, which is
byte-for-byte deterministic. In pipe mode each stage runs as its own OS
process speaking the wire protocol on stdin/stdout, with wall-clock
timestamps; any stage can be swapped for an external program that speaks
the same protocol.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import sys
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .policies import (
    BlockEmitterConfig,
    BlockEmitterStage,
    BoundaryRules,
    ComputeCost,
    DictionaryTransducer,
    SynthStage,
    TokenStage,
    WaitKPolicy,
    load_transducer_table,
)
from .stream_core import (
    EOS,
    Channel,
    ClockLike,
    FrameBlock,
    TimedEvent,
    WireProtocolError,
    as_hop_ms,
    parse_event,
    read_event_log,
    serialize_event,
    write_event_log,
)
from .tts_timing import TableDurationModel


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the cascade, loaded from a ``section.key = value`` file."""

    block_frames: int = 32
    hop_ms: Fraction = Fraction(275, 16)
    tokens_per_block: int = 2
    segment_gap_ms: int = 0
    isr_lookahead_blocks: int = 0
    isr_compute_ms_per_block: int = 0
    isr_script: Path | None = None
    imt_k: int = 1
    imt_table: Path | None = None
    imt_default: str = "passthrough"
    imt_read_cost_ms: int = 0
    imt_write_cost_ms: int = 0
    itts_rules: Path | None = None
    itts_durations: Path | None = None
    itts_compute_ms_per_phrase: int = 0
    clock_mode: str = "virtual"
    out_dir: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hop_ms", as_hop_ms(self.hop_ms))
        checks = (
            ("source.block_frames", self.block_frames, 1),
            ("source.tokens_per_block", self.tokens_per_block, 1),
            ("source.segment_gap_ms", self.segment_gap_ms, 0),
            ("isr.lookahead_blocks", self.isr_lookahead_blocks, 0),
            ("isr.compute_ms_per_block", self.isr_compute_ms_per_block, 0),
            ("imt.k", self.imt_k, 1),
            ("imt.read_cost_ms", self.imt_read_cost_ms, 0),
            ("imt.write_cost_ms", self.imt_write_cost_ms, 0),
            ("itts.compute_ms_per_phrase", self.itts_compute_ms_per_phrase, 0),
        )
        for key, value, minimum in checks:
            if value < minimum:
                raise ConfigError(key, f"must be >= {minimum}, got {value}")
        if self.imt_default not in ("passthrough", "drop"):
            raise ConfigError("imt.default", f"must be passthrough or drop, got {self.imt_default!r}")
        if self.clock_mode not in ("virtual", "wall"):
            raise ConfigError("clock.mode", f"must be virtual or wall, got {self.clock_mode!r}")
        if (self.block_frames * self.hop_ms).denominator != 1:
            raise ConfigError(
                "source.hop_ms",
                "block_frames * hop_ms must be a whole number of milliseconds",
            )

    @property
    def block_duration_ms(self) -> int:
        return int(self.block_frames * self.hop_ms)

    @property
    def isr_config(self) -> BlockEmitterConfig:
        return BlockEmitterConfig(
            block_frames=self.block_frames,
            hop_ms=self.hop_ms,
            lookahead_blocks=self.isr_lookahead_blocks,
            compute_ms_per_block=self.isr_compute_ms_per_block,
        )


_INT_KEYS = {
    "source.block_frames": "block_frames",
    "source.tokens_per_block": "tokens_per_block",
    "source.segment_gap_ms": "segment_gap_ms",
    "isr.lookahead_blocks": "isr_lookahead_blocks",
    "isr.compute_ms_per_block": "isr_compute_ms_per_block",
    "imt.k": "imt_k",
    "imt.read_cost_ms": "imt_read_cost_ms",
    "imt.write_cost_ms": "imt_write_cost_ms",
    "itts.compute_ms_per_phrase": "itts_compute_ms_per_phrase",
}

_PATH_KEYS = {
    "isr.script": "isr_script",
    "imt.table": "imt_table",
    "itts.rules": "itts_rules",
    "itts.durations": "itts_durations",
}


def load_config(path) -> PipelineConfig:
    """Parse a plain-text config file of ``section.key = value`` lines.

    Relative file values resolve against the config file's directory, and
    every referenced file must exist at load time.
    """
    path = Path(path)
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}", f"expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in _INT_KEYS:
                try:
                    values[_INT_KEYS[key]] = int(value)
                except ValueError:
                    raise ConfigError(key, f"expected an integer, got {value!r}") from None
            elif key == "source.hop_ms":
                try:
                    values["hop_ms"] = as_hop_ms(value)
                except ValueError as exc:
                    raise ConfigError(key, str(exc)) from None
            elif key in _PATH_KEYS:
                resolved = (path.parent / value).resolve()
                if not resolved.is_file():
                    raise ConfigError(key, f"file not found: {resolved}")
                values[_PATH_KEYS[key]] = resolved
            elif key == "imt.default":
                values["imt_default"] = value
            elif key == "run.out":
                values["out_dir"] = (path.parent / value).resolve()
            elif key == "clock.mode":
                values["clock_mode"] = value
            else:
                raise ConfigError(key, "unknown configuration key")
    try:
        return PipelineConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(path), str(exc)) from None


# ---------------------------------------------------------------------------
# source preparation


def read_token_file(path) -> list[list[str]]:
    """One segment per non-empty line, tokens whitespace-separated."""
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            tokens = raw.split()
            if tokens:
                segments.append(tokens)
    return segments


def looks_like_event_log(path) -> bool:
    """A file whose first non-empty line parses as a wire event."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                parse_event(line)
                return True
            except WireProtocolError:
                return False
    return False


def blockize(segments: Sequence[Sequence[str]], cfg: PipelineConfig) -> list[TimedEvent]:
    """Turn per-segment transcripts into a source frame-block event stream.

    Each segment becomes ceil(len(tokens) / tokens_per_block) full blocks
    followed by an end-of-sequence marker at the segment's audio end;
    segments are separated by the configured gap.
    """
    events: list[TimedEvent] = []
    seq = 0
    t = 0
    duration = cfg.block_duration_ms
    for sid, tokens in enumerate(segments):
        if not tokens:
            raise ValueError(f"segment {sid} has no tokens")
        n_blocks = math.ceil(len(tokens) / cfg.tokens_per_block)
        for _ in range(n_blocks):
            block = FrameBlock(
                segment_id=sid,
                block_index=seq,
                n_frames=cfg.block_frames,
                hop_ms=cfg.hop_ms,
                start_ms=t,
            )
            events.append(TimedEvent(Channel.SOURCE, seq, t, sid, t, block))
            seq += 1
            t += duration
        events.append(TimedEvent(Channel.SOURCE, seq, t, sid, t, EOS))
        seq += 1
        t += cfg.segment_gap_ms
    return events


def script_for_source(
    cfg: PipelineConfig, input_path, source_is_log: bool
) -> list[list[str]]:
    """Locate the recognizer transcript: the token input itself, or the
    configured script when the input is already an event log."""
    if not source_is_log:
        return read_token_file(input_path)
    if cfg.isr_script is None:
        raise ConfigError(
            "isr.script", "required when the run input is an event-log file"
        )
    return read_token_file(cfg.isr_script)


# ---------------------------------------------------------------------------
# stage assembly


def build_isr_stage(
    cfg: PipelineConfig, script: Sequence[Sequence[str]], clock: ClockLike | None = None
) -> BlockEmitterStage:
    return BlockEmitterStage(
        cfg.isr_config, script, tokens_per_block=cfg.tokens_per_block, clock=clock
    )


def build_imt_stage(cfg: PipelineConfig, clock: ClockLike | None = None) -> TokenStage:
    table = load_transducer_table(cfg.imt_table) if cfg.imt_table else {}
    return TokenStage(
        WaitKPolicy(cfg.imt_k),
        DictionaryTransducer(table, default=cfg.imt_default),
        out_channel=Channel.IMT,
        clock=clock,
        compute=ComputeCost(read_ms=cfg.imt_read_cost_ms, write_ms=cfg.imt_write_cost_ms),
        name="imt",
    )


def build_itts_stage(cfg: PipelineConfig, clock: ClockLike | None = None) -> SynthStage:
    rules = BoundaryRules.from_file(cfg.itts_rules) if cfg.itts_rules else BoundaryRules()
    model = (
        TableDurationModel.from_file(cfg.itts_durations)
        if cfg.itts_durations
        else TableDurationModel.uniform()
    )
    return SynthStage(
        rules, model, compute_ms_per_phrase=cfg.itts_compute_ms_per_phrase, clock=clock
    )


def feed_all(stage, events: Sequence[TimedEvent]) -> list[TimedEvent]:
    out: list[TimedEvent] = []
    for ev in events:
        out.extend(stage.feed(ev))
    stage.assert_drained()
    return out


def run_sim(
    cfg: PipelineConfig,
    src_events: Sequence[TimedEvent],
    script: Sequence[Sequence[str]],
) -> dict[Channel, list[TimedEvent]]:
    """Deterministic virtual-time run of the full cascade."""
    isr_out = feed_all(build_isr_stage(cfg, script), src_events)
    imt_out = feed_all(build_imt_stage(cfg), isr_out)
    itts_out = feed_all(build_itts_stage(cfg), imt_out)
    return {
        Channel.SOURCE: list(src_events),
        Channel.ISR: isr_out,
        Channel.IMT: imt_out,
        Channel.ITTS: itts_out,
    }


LOG_FILENAMES = {
    Channel.SOURCE: "src.log",
    Channel.ISR: "isr.log",
    Channel.IMT: "imt.log",
    Channel.ITTS: "itts.log",
}


def write_logs(logs: dict[Channel, list[TimedEvent]], out_dir) -> dict[Channel, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for channel, events in logs.items():
        paths[channel] = out_dir / LOG_FILENAMES[channel]
        write_event_log(paths[channel], events)
    return paths


def read_logs(log_dir) -> dict[Channel, list[TimedEvent]]:
    """Load whichever per-channel logs exist in a directory."""
    log_dir = Path(log_dir)
    logs = {}
    for channel, filename in LOG_FILENAMES.items():
        path = log_dir / filename
        if path.is_file():
            logs[channel] = read_event_log(path)
    return logs


def run_pipe(
    cfg: PipelineConfig,
    src_events: Sequence[TimedEvent],
    config_path,
    out_dir,
    script_path=None,
    realtime: bool = False,
    timeout_s: float = 120.0,
) -> dict[Channel, list[TimedEvent]]:
    """Run the cascade as three OS processes connected by pipes.

    The parent feeds the source stream into the first stage's stdin; each
    stage appends its output to its own log file as well as stdout.
    Timestamps are wall-clock milliseconds from a shared epoch, floored at
    each event's causal lower bound so the logs still validate. With
    realtime=True the source is paced to its virtual timeline instead of
    being fed as fast as possible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    src_path = out_dir / LOG_FILENAMES[Channel.SOURCE]
    write_event_log(src_path, src_events)

    epoch_ms = time.time_ns() // 1_000_000

    def stage_cmd(name: str) -> list[str]:
        cmd = [
            sys.executable,
            "-m",
            "simulpipe",
            "stage",
            name,
            "--config",
            str(config_path),
            "--epoch-ms",
            str(epoch_ms),
            "--log",
            str(out_dir / f"{name}.log"),
        ]
        if name == "isr" and script_path is not None:
            cmd += ["--script", str(script_path)]
        return cmd

    procs: list[subprocess.Popen] = []
    try:
        isr = subprocess.Popen(
            stage_cmd("isr"), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
        )
        procs.append(isr)
        imt = subprocess.Popen(
            stage_cmd("imt"), stdin=isr.stdout, stdout=subprocess.PIPE, text=True
        )
        procs.append(imt)
        itts = subprocess.Popen(
            stage_cmd("itts"), stdin=imt.stdout, stdout=subprocess.DEVNULL, text=True
        )
        procs.append(itts)
        isr.stdout.close()
        imt.stdout.close()

        start = time.monotonic()
        for ev in src_events:
            if realtime:
                lag = ev.emit_ms / 1000.0 - (time.monotonic() - start)
                if lag > 0:
                    time.sleep(lag)
            isr.stdin.write(serialize_event(ev))
            isr.stdin.flush()
        isr.stdin.close()

        for proc, name in zip(procs, ("isr", "imt", "itts")):
            code = proc.wait(timeout=timeout_s)
            if code != 0:
                raise RuntimeError(
                    f"pipe stage {name} exited with status {code} "
                    f"(command: {shlex.join(stage_cmd(name))})"
                )
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.kill()
                proc.wait()

    return read_logs(out_dir)


def with_overrides(cfg: PipelineConfig, **kwargs) -> PipelineConfig:
    return replace(cfg, **kwargs)
