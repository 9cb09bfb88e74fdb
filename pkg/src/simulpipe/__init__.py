"""Incremental speech-translation pipeline simulator.

A cascade of pluggable incremental stages (block-wise recognizer stand-in,
wait-k translator, accent-phrase synthesis timing model) connected by a
line-oriented wire protocol, plus analysis tools for ear-voice span,
speaking latency, and WER/CER/BLEU scoring.
"""

__version__ = "0.1.0"
