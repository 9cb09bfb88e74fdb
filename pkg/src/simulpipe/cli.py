"""Command-line front end.

Subcommands: ``run`` executes the cascade (virtual-time simulation or one
OS process per stage connected by pipes) and writes per-channel event logs;
``report`` turns a log directory into latency statistics, a text alignment
chart, and figures; ``score`` computes WER/CER/BLEU; ``schedule`` prints a
wait-k read/write schedule; ``stage`` runs a single stage over
stdin/stdout, which is what pipe mode spawns and what external stage
replacements can mimic.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, pipeline
from .policies import Deadlock, MalformedInput, format_actions, wait_k_schedule
from .stream_core import (
    Channel,
    WallClock,
    WireProtocolError,
    parse_event,
    serialize_event,
    validate_stream,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_DATA_ERRORS = (ValueError, OSError, RuntimeError)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simulpipe", description=__doc__.split("\n\n")[1])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the cascade and write event logs")
    run.add_argument("--config", required=True, help="pipeline config file")
    run.add_argument("--input", required=True, help="token file or SRC event-log file")
    run.add_argument(
        "--mode",
        choices=("sim", "pipe"),
        default=None,
        help="default: sim, or pipe when the config sets clock.mode = wall",
    )
    run.add_argument("--out", help="log output directory (default: run.out from config)")
    run.add_argument(
        "--realtime",
        action="store_true",
        help="pipe mode: pace the source feed to its virtual timeline",
    )
    run.set_defaults(func=cmd_run)

    schedule = sub.add_parser("schedule", help="print a wait-k read/write schedule")
    schedule.add_argument("J", type=int, help="source length")
    schedule.add_argument("I", type=int, help="target length")
    schedule.add_argument("k", type=int, help="wait-k delay")
    schedule.set_defaults(func=cmd_schedule)

    score = sub.add_parser("score", help="score hypothesis against reference")
    score.add_argument("--mode", choices=("wer", "cer", "bleu"), required=True)
    score.add_argument("hyp", help="hypothesis file, one segment per line")
    score.add_argument("ref", help="reference file, one segment per line")
    score.set_defaults(func=cmd_score)

    report = sub.add_parser("report", help="latency report + chart from a log dir")
    report.add_argument("logdir", help="directory containing the per-channel logs")
    report.add_argument("--out", help="output directory (default: the log dir)")
    report.set_defaults(func=cmd_report)

    stage = sub.add_parser("stage", help="run one stage over stdin/stdout")
    stage.add_argument("name", choices=("isr", "imt", "itts"))
    stage.add_argument("--config", required=True)
    stage.add_argument("--epoch-ms", type=int, default=None, help="shared wall epoch")
    stage.add_argument("--log", help="also append emitted events to this file")
    stage.add_argument("--script", help="isr transcript file (overrides isr.script)")
    stage.set_defaults(func=cmd_stage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Deadlock as exc:
        print(f"deadlock: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


# ---------------------------------------------------------------------------
# subcommands


def cmd_schedule(args) -> int:
    if args.J < 1 or args.I < 1 or args.k < 1:
        print("schedule: J, I, and k must all be >= 1", file=sys.stderr)
        return EXIT_USAGE
    print(format_actions(wait_k_schedule(args.J, args.I, args.k)))
    return EXIT_OK


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def cmd_score(args) -> int:
    hyps = _read_lines(args.hyp)
    refs = _read_lines(args.ref)
    if len(hyps) != len(refs):
        print(
            f"error: line counts differ: {args.hyp} has {len(hyps)}, "
            f"{args.ref} has {len(refs)}",
            file=sys.stderr,
        )
        return EXIT_DATA
    if args.mode == "wer":
        print(f"wer = {analysis.corpus_wer(hyps, refs):.3f}")
    elif args.mode == "cer":
        print(f"cer = {analysis.corpus_cer(hyps, refs):.3f}")
    else:
        report = analysis.bleu([h.split() for h in hyps], [r.split() for r in refs])
        for n in sorted(report.bleu):
            print(f"bleu{n} = {report.bleu[n]:.3f}")
        print(f"length_ratio = {report.length_ratio:.3f}")
    return EXIT_OK


def _load_run_inputs(args):
    cfg = pipeline.load_config(args.config)
    input_path = Path(args.input)
    if not input_path.is_file():
        raise FileNotFoundError(f"input file not found: {input_path}")
    source_is_log = pipeline.looks_like_event_log(input_path)
    script = pipeline.script_for_source(cfg, input_path, source_is_log)
    if source_is_log:
        src_events = pipeline.read_event_log(input_path)
        bad = [ev for ev in src_events if ev.channel is not Channel.SOURCE]
        if bad:
            raise MalformedInput(
                f"input log contains non-SRC events (first: {serialize_event(bad[0]).strip()})"
            )
        report = validate_stream(src_events)
        if not report.ok:
            details = "; ".join(v.message for v in report.violations[:5])
            raise MalformedInput(f"input log fails validation: {details}")
    else:
        src_events = pipeline.blockize(script, cfg)
    out_dir = Path(args.out) if args.out else cfg.out_dir
    if out_dir is None:
        raise pipeline.ConfigError("run.out", "no output directory (--out or run.out)")
    script_path = cfg.isr_script if source_is_log else input_path
    return cfg, src_events, script, script_path, out_dir


def cmd_run(args) -> int:
    cfg, src_events, script, script_path, out_dir = _load_run_inputs(args)
    mode = args.mode or ("pipe" if cfg.clock_mode == "wall" else "sim")
    if mode == "sim":
        logs = pipeline.run_sim(cfg, src_events, script)
        pipeline.write_logs(logs, out_dir)
    else:
        logs = pipeline.run_pipe(
            cfg,
            src_events,
            config_path=args.config,
            out_dir=out_dir,
            script_path=script_path,
            realtime=args.realtime,
        )
    report = analysis.build_latency_report(logs)
    text = analysis.format_latency_report(report)
    (Path(out_dir) / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    log_dir = Path(args.logdir)
    if not log_dir.is_dir():
        raise FileNotFoundError(f"log directory not found: {log_dir}")
    logs = pipeline.read_logs(log_dir)
    if not logs:
        raise analysis.EmptyInput(f"no event logs found in {log_dir}")

    failures = []
    for channel, events in logs.items():
        report = validate_stream(events)
        for violation in report.violations:
            failures.append(
                f"{log_dir / pipeline.LOG_FILENAMES[channel]}: "
                f"[{violation.rule}] seq {violation.seq}: {violation.message}"
            )
    if failures:
        for failure in failures:
            print(failure, file=sys.stderr)
        return EXIT_DATA

    out_dir = Path(args.out) if args.out else log_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    latency = analysis.build_latency_report(logs)
    text = analysis.format_latency_report(latency)
    sys.stdout.write(text)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    rows = analysis.latency_report_rows(latency)
    tsv = "".join(f"{key}\t{value}\n" for key, value in rows)
    (out_dir / "report.tsv").write_text(tsv, encoding="utf-8")

    chart = analysis.render_alignment_chart(logs)
    (out_dir / "chart.txt").write_text(chart, encoding="utf-8")

    from . import figures  # deferred: matplotlib import is slow

    figures.save_alignment_figure(logs, out_dir / "alignment.png")
    figures.save_delay_figure(latency, out_dir / "delays.png")
    figures.save_playback_figure(logs, out_dir / "playback.png")
    return EXIT_OK


def cmd_stage(args) -> int:
    cfg = pipeline.load_config(args.config)
    clock = WallClock(args.epoch_ms)
    if args.name == "isr":
        script_path = Path(args.script) if args.script else cfg.isr_script
        if script_path is None:
            raise pipeline.ConfigError("isr.script", "required to run the isr stage")
        stage = pipeline.build_isr_stage(
            cfg, pipeline.read_token_file(script_path), clock=clock
        )
    elif args.name == "imt":
        stage = pipeline.build_imt_stage(cfg, clock=clock)
    else:
        stage = pipeline.build_itts_stage(cfg, clock=clock)

    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        for line in sys.stdin:
            if not line.strip():
                continue
            ev = parse_event(line)
            for out in stage.feed(ev):
                wire = serialize_event(out)
                sys.stdout.write(wire)
                sys.stdout.flush()
                if log_fh is not None:
                    log_fh.write(wire)
        stage.assert_drained()
    finally:
        if log_fh is not None:
            log_fh.close()
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
