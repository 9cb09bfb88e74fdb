"""Alignment, ear-voice span, metrics, and the text chart."""

import math
import random
from fractions import Fraction

import pytest

from genutil import recursive_edit_distance
from simulpipe.analysis import (
    AlignedUnit,
    EmptyCorpus,
    EmptyInput,
    EmptyReference,
    InconsistentProvenance,
    LengthMismatch,
    REPORT_KEYS,
    align_outputs,
    bleu,
    build_latency_report,
    cer,
    chunks_from_events,
    compute_evs,
    corpus_cer,
    corpus_wer,
    edit_distance,
    format_latency_report,
    latency_report_rows,
    render_alignment_chart,
    wer,
)
from simulpipe.stream_core import (
    EOS,
    Channel,
    FrameBlock,
    SynthChunkRef,
    TimedEvent,
    Token,
)


def frm(seq, start, segment=0, n_frames=32):
    block = FrameBlock(segment, seq, n_frames, Fraction(275, 16), start)
    return TimedEvent(Channel.SOURCE, seq, start, segment, start, block)


def tok(channel, seq, emit, segment=0, text="w", first=0):
    return TimedEvent(channel, seq, emit, segment, first, Token(text))


def eos(channel, seq, emit, segment=0, first=0):
    return TimedEvent(channel, seq, emit, segment, first, EOS)


def chk(seq, emit, segment=0, duration=500, text="ka", first=0):
    return TimedEvent(Channel.ITTS, seq, emit, segment, first, SynthChunkRef(duration, text))


def fig4_logs():
    return {
        Channel.SOURCE: [frm(0, 0), eos(Channel.SOURCE, 1, 5500, first=5500)],
        Channel.ISR: [tok(Channel.ISR, 0, 1650), eos(Channel.ISR, 1, 5500)],
        Channel.IMT: [tok(Channel.IMT, 0, 2750), eos(Channel.IMT, 1, 5500)],
        Channel.ITTS: [chk(0, 3850), eos(Channel.ITTS, 1, 5500)],
    }


class TestAlignOutputs:
    def test_single_segment_first_outputs(self):
        units = align_outputs(fig4_logs())
        assert units == [
            AlignedUnit(
                segment_id=0,
                source_start_ms=0,
                isr_first_ms=1650,
                imt_first_ms=2750,
                itts_first_ms=3850,
            )
        ]
        assert units[0].missing_channels == ()

    def test_empty_itts_log_flags_missing_channel(self):
        logs = fig4_logs()
        logs[Channel.ITTS] = []
        units = align_outputs(logs)
        assert units[0].itts_first_ms is None
        assert units[0].missing_channels == ("ITTS",)

    def test_two_segments_keyed_by_id(self):
        logs = {
            Channel.SOURCE: [
                frm(0, 0),
                eos(Channel.SOURCE, 1, 550, first=550),
                frm(2, 550, segment=1),
                eos(Channel.SOURCE, 3, 1100, segment=1, first=1100),
            ],
            Channel.ISR: [
                tok(Channel.ISR, 0, 600),
                eos(Channel.ISR, 1, 600),
                tok(Channel.ISR, 2, 1200, segment=1, first=550),
                eos(Channel.ISR, 3, 1200, segment=1, first=550),
            ],
        }
        units = align_outputs(logs)
        assert [u.segment_id for u in units] == [0, 1]
        assert [u.source_start_ms for u in units] == [0, 550]
        assert [u.isr_first_ms for u in units] == [600, 1200]

    def test_markers_do_not_count_as_output(self):
        logs = fig4_logs()
        logs[Channel.ISR] = [eos(Channel.ISR, 0, 100)]
        units = align_outputs(logs)
        assert units[0].isr_first_ms is None

    def test_unknown_segment_raises(self):
        logs = fig4_logs()
        logs[Channel.IMT] = [tok(Channel.IMT, 0, 2750, segment=9)]
        with pytest.raises(InconsistentProvenance):
            align_outputs(logs)

    def test_no_source_raises(self):
        with pytest.raises(EmptyInput):
            align_outputs({Channel.ISR: [tok(Channel.ISR, 0, 1)]})


class TestComputeEvs:
    def test_single_unit_from_block_counts(self):
        report = compute_evs(align_outputs(fig4_logs()))
        assert report.units == 1
        assert report.isr_mean == pytest.approx(1.65, abs=1e-12)
        assert report.imt_mean == pytest.approx(2.75, abs=1e-12)
        assert report.itts_mean == pytest.approx(3.85, abs=1e-12)
        assert report.isr_var == report.imt_var == report.itts_var == 0.0

    def test_sample_variance_two_units(self):
        units = [
            AlignedUnit(0, 0, 1000, None, None),
            AlignedUnit(1, 0, 2000, None, None),
        ]
        report = compute_evs(units)
        assert report.isr_mean == pytest.approx(1.5, abs=1e-12)
        assert report.isr_var == pytest.approx(0.5, abs=1e-12)

    def test_all_channels_at_source_start(self):
        units = [AlignedUnit(0, 700, 700, 700, 700)]
        report = compute_evs(units)
        assert report.isr_mean == report.imt_mean == report.itts_mean == 0.0

    def test_matches_direct_recomputation(self):
        rng = random.Random(8)
        units = []
        for sid in range(12):
            start = rng.randint(0, 1000)
            units.append(
                AlignedUnit(sid, start, start + rng.randint(0, 9000), None, None)
            )
        report = compute_evs(units)
        delays = [(u.isr_first_ms - u.source_start_ms) / 1000.0 for u in units]
        mean = sum(delays) / len(delays)
        var = sum((d - mean) ** 2 for d in delays) / (len(delays) - 1)
        assert report.isr_mean == pytest.approx(mean, abs=1e-12)
        assert report.isr_var == pytest.approx(var, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            compute_evs([])


class TestLatencyReport:
    def test_report_keys_exact_schema(self):
        report = build_latency_report(fig4_logs())
        assert [key for key, _ in latency_report_rows(report)] == list(REPORT_KEYS)

    def test_speaking_latency_from_chunk_log(self):
        logs = fig4_logs()
        logs[Channel.ITTS] = [
            chk(0, 1000, duration=800),
            chk(1, 1500, duration=800, text="re"),
            eos(Channel.ITTS, 2, 2000),
        ]
        report = build_latency_report(logs)
        # second chunk queues behind the first: starts 1800, latency 300 ms
        assert report.speak_mean == pytest.approx(0.15, abs=1e-12)
        assert report.speak_max == pytest.approx(0.3, abs=1e-12)

    def test_formatting_three_decimals(self):
        text = format_latency_report(build_latency_report(fig4_logs()))
        assert "isr_delay_mean = 1.650" in text
        assert "itts_delay_mean = 3.850" in text
        assert "units = 1" in text

    def test_chunks_reconstructed_from_log(self):
        chunks = chunks_from_events([chk(0, 100, duration=250, text="kore wa")])
        assert chunks[0].ready_ms == 100
        assert chunks[0].duration_ms == 250
        assert chunks[0].phrase.surface == ("kore", "wa")


class TestEditDistance:
    def test_identical_is_zero(self):
        assert edit_distance(["see", "the", "dog"], ["see", "the", "dog"]) == 0

    def test_single_substitution(self):
        assert edit_distance(["see", "the", "dog"], ["see", "a", "dog"]) == 1

    def test_against_empty(self):
        assert edit_distance(["a", "b", "c"], []) == 3
        assert edit_distance([], []) == 0

    def test_works_on_strings(self):
        assert edit_distance("abcd", "abce") == 1

    def test_symmetry_and_triangle_inequality(self):
        rng = random.Random(17)
        seqs = [
            tuple(rng.choice("abc") for _ in range(rng.randint(0, 6))) for _ in range(40)
        ]
        for a in seqs[:15]:
            for b in seqs[:15]:
                assert edit_distance(a, b) == edit_distance(b, a)
        for a, b, c in zip(seqs, seqs[10:], seqs[20:]):
            assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)

    def test_against_recursive_oracle_sample(self):
        rng = random.Random(23)
        for _ in range(300):
            a = tuple(rng.choice((0, 1, 2)) for _ in range(rng.randint(0, 6)))
            b = tuple(rng.choice((0, 1, 2)) for _ in range(rng.randint(0, 6)))
            assert edit_distance(a, b) == recursive_edit_distance(a, b)


class TestWerCer:
    def test_equal_is_zero(self):
        assert wer("see the dog", "see the dog") == 0.0
        assert cer("abcd", "abcd") == 0.0

    def test_one_third(self):
        assert wer("see a dog", "see the dog") == pytest.approx(1 / 3)

    def test_cer_quarter(self):
        assert cer("abcd", "abce") == 0.25

    def test_wer_lowercases(self):
        assert wer("See THE Dog", "see the dog") == 0.0

    def test_cer_strips_whitespace(self):
        assert cer("a b  cd", "abcd") == 0.0

    def test_zero_iff_normalized_equal(self):
        assert wer("x y", "x z") > 0
        assert cer("xy", "xz") > 0

    def test_empty_reference(self):
        with pytest.raises(EmptyReference):
            wer("a", "   ")
        with pytest.raises(EmptyReference):
            cer("a", " ")

    def test_corpus_aggregation_sums(self):
        hyps = ["see a dog", "hello"]
        refs = ["see the dog", "hello"]
        # 1 error over 4 reference tokens
        assert corpus_wer(hyps, refs) == pytest.approx(0.25)
        assert corpus_cer(["abcd", "xy"], ["abce", "xy"]) == pytest.approx(1 / 6)

    def test_corpus_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            corpus_wer(["a"], ["a", "b"])


def toklists(*sentences):
    return [s.split() for s in sentences]


class TestBleu:
    def test_identity_is_100(self):
        report = bleu(toklists("a b c d", "x y z"), toklists("a b c d", "x y z"))
        for n in (1, 2, 3, 4):
            assert report.bleu[n] == pytest.approx(100.0, abs=1e-9)
        assert report.length_ratio == pytest.approx(1.0, abs=1e-9)

    def test_zero_fourgram_smoothed(self):
        report = bleu(toklists("a b c d"), toklists("a b c e"))
        assert report.bleu[1] == pytest.approx(75.0, abs=1e-9)
        assert report.bleu[2] == pytest.approx(70.71067811865474, abs=1e-9)
        assert report.bleu[3] == pytest.approx(62.99605249474365, abs=1e-9)
        assert report.bleu[4] == pytest.approx(59.46035575013605, abs=1e-9)

    def test_brevity_penalty_scales_all_orders(self):
        report = bleu(toklists("a b c d"), toklists("a b c d e f g h"))
        for n in (1, 2, 3, 4):
            assert report.bleu[n] == pytest.approx(36.787944117144235, abs=1e-9)
        assert report.length_ratio == pytest.approx(0.5, abs=1e-9)

    def test_no_fourgrams_at_all_scores_zero(self):
        report = bleu(toklists("a b", "c d e"), toklists("a b", "c x e"))
        assert report.bleu[1] == pytest.approx(80.0, abs=1e-9)
        assert report.bleu[2] == pytest.approx(51.63977794943222, abs=1e-9)
        assert report.bleu[3] == pytest.approx(51.087295492903536, abs=1e-9)
        assert report.bleu[4] == 0.0

    def test_cascaded_exp_smoothing(self):
        report = bleu(toklists("a b c d"), toklists("a c b d"))
        assert report.bleu[1] == pytest.approx(100.0, abs=1e-9)
        assert report.bleu[2] == pytest.approx(40.8248290463863, abs=1e-9)
        assert report.bleu[3] == pytest.approx(27.51606040745522, abs=1e-9)
        assert report.bleu[4] == pytest.approx(22.59005009024612, abs=1e-9)

    def test_long_hypothesis_no_penalty(self):
        report = bleu(toklists("a b c d e f", "g h i"), toklists("a b c d", "g h i"))
        assert report.bleu[1] == pytest.approx(77.77777777777779, abs=1e-9)
        assert report.bleu[2] == pytest.approx(74.53559924999298, abs=1e-9)
        assert report.bleu[3] == pytest.approx(69.33612743506347, abs=1e-9)
        assert report.bleu[4] == pytest.approx(57.73502691896258, abs=1e-9)
        assert report.length_ratio == pytest.approx(9 / 7, abs=1e-9)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            bleu([["a"]], [["a"], ["b"]])
        with pytest.raises(EmptyCorpus):
            bleu([], [])

    def test_scores_bounded(self):
        rng = random.Random(41)
        for _ in range(100):
            hyps = [[rng.choice("abcde") for _ in range(rng.randint(1, 8))] for _ in range(3)]
            refs = [[rng.choice("abcde") for _ in range(rng.randint(1, 8))] for _ in range(3)]
            report = bleu(hyps, refs)
            assert all(0.0 <= report.bleu[n] <= 100.0 + 1e-9 for n in (1, 2, 3, 4))

    def test_invariant_under_token_relabeling(self):
        rng = random.Random(59)
        vocab = [f"t{i}" for i in range(12)]
        for _ in range(50):
            hyps = [[rng.choice(vocab) for _ in range(rng.randint(1, 10))] for _ in range(4)]
            refs = [[rng.choice(vocab) for _ in range(rng.randint(1, 10))] for _ in range(4)]
            relabel = dict(zip(vocab, rng.sample(vocab, len(vocab))))
            base = bleu(hyps, refs)
            mapped = bleu(
                [[relabel[t] for t in h] for h in hyps],
                [[relabel[t] for t in r] for r in refs],
            )
            for n in (1, 2, 3, 4):
                assert base.bleu[n] == pytest.approx(mapped.bleu[n], abs=1e-9)
            assert base.length_ratio == mapped.length_ratio

    def test_non_increasing_in_n_on_uniform_corpora(self):
        # Not a theorem for adversarial corpora (see the decisions ledger);
        # holds on realistic uniform-length corpora, checked on 200 seeds.
        vocab = [f"t{i}" for i in range(20)]
        for seed in range(200):
            rng = random.Random(seed)
            hyps, refs = [], []
            for _ in range(rng.randint(4, 8)):
                ref = [rng.choice(vocab) for _ in range(rng.randint(8, 14))]
                hyp = [t if rng.random() > 0.15 else rng.choice(vocab) for t in ref]
                hyps.append(hyp)
                refs.append(ref)
            report = bleu(hyps, refs)
            values = [report.bleu[n] for n in (1, 2, 3, 4)]
            assert all(a >= b - 1e-9 for a, b in zip(values, values[1:])), seed


class TestAlignmentChart:
    def test_fig4_style_offsets(self):
        chart = render_alignment_chart(fig4_logs())
        lines = chart.splitlines()
        rows = {line.split("|")[0].strip(): line for line in lines if "|" in line}

        def first_occupied_column(row):
            cells = row.split("|")[1:]
            for i, cell in enumerate(cells):
                if cell.strip():
                    return i
            return None

        assert first_occupied_column(rows["ISR"]) == 3
        assert first_occupied_column(rows["IMT"]) == 5
        assert first_occupied_column(rows["ITTS"]) == 7

    def test_two_segments_have_divider(self):
        logs = {
            Channel.SOURCE: [
                frm(0, 0),
                eos(Channel.SOURCE, 1, 550, first=550),
                frm(2, 550, segment=1),
                eos(Channel.SOURCE, 3, 1100, segment=1, first=1100),
            ]
        }
        chart = render_alignment_chart(logs)
        assert chart.count("---- segment") == 2

    def test_empty_logs_header_only(self):
        chart = render_alignment_chart({})
        assert chart == "alignment chart: 0 segment(s), 550 ms per column\n"

    def test_deterministic_bytes(self):
        logs = fig4_logs()
        a = render_alignment_chart(logs).encode("utf-8")
        b = render_alignment_chart(logs).encode("utf-8")
        assert a == b

    def test_long_cells_truncated(self):
        logs = {
            Channel.SOURCE: [frm(0, 0)],
            Channel.ISR: [
                tok(Channel.ISR, 0, 0, text="supercalifragilistic"),
                eos(Channel.ISR, 1, 10),
            ],
        }
        chart = render_alignment_chart(logs, col_width=8)
        assert "superca~" in chart
