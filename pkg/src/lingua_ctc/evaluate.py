"""Scoring datasets with a trained model: greedy decoding plus WER rollup."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from . import bpe
from .model import constant_params, model_forward
from .objectives import accumulate_scores, greedy_decode, macro_average


def eval_threads() -> int:
    """Worker count for evaluation, capped by LINGUA_CTC_THREADS."""
    raw = os.environ.get("LINGUA_CTC_THREADS")
    if raw is None:
        return min(8, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(
            f"LINGUA_CTC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("LINGUA_CTC_THREADS must be >= 1")
    return n


def transcribe(params, config, utt, vocab, lang=None) -> str:
    """Greedy-decode one utterance. `lang` conditions configurable modes."""
    langs = None if lang is None else [int(lang)]
    out = model_forward(params, config, utt.features,
                        [utt.features.shape[0]], langs=langs)
    ids = greedy_decode(out.acoustic_log_probs(0), blank=config.blank_id)
    # a weak model can emit byte sequences that are not valid UTF-8; score
    # them as replacement characters rather than aborting the evaluation
    return bpe.decode_lossy(ids, vocab)


def score_dataset(params, config, utts, vocab, lang=None, threads=None) -> dict:
    """Decode every utterance and aggregate per-language edit counts.

    `lang` filters the dataset to one language. Configurable modes are
    conditioned on each utterance's true language id; decoding is stateless,
    so the thread count never changes the result.
    """
    if lang is not None:
        utts = [u for u in utts if u.lang == int(lang)]
        if not utts:
            raise ValueError(f"no utterances for language {lang}")
    cparams = constant_params(params)

    def _one(utt):
        cond = utt.lang if config.needs_lang_id else None
        return transcribe(cparams, config, utt, vocab, lang=cond)

    n = threads if threads is not None else eval_threads()
    if n > 1 and len(utts) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            hyps = list(pool.map(_one, utts))
    else:
        hyps = [_one(u) for u in utts]
    pairs = [(u.lang, u.transcript, h) for u, h in zip(utts, hyps)]
    return accumulate_scores(pairs)


def dataset_macro_wer(scores: dict) -> float:
    return macro_average([sc.wer for sc in scores.values()])
