import numpy as np
import pytest

from lingua_ctc.evaluate import (dataset_macro_wer, eval_threads,
                                 score_dataset, transcribe)
from lingua_ctc.model import ModelConfig, init_params
from lingua_ctc.objectives import LangScore

rng = np.random.default_rng(42)


def scoring_model(corpus, mode="none", seed=5):
    # an untrained model with a random output head: the hypotheses are
    # nonsense, but deterministic nonsense is all plumbing tests need
    cfg = ModelConfig(feat_dim=corpus.feat_dim, vocab_size=corpus.vocab.size,
                      num_langs=corpus.num_langs, num_layers=2, d_model=16,
                      d_ffn=24, n_head=2, mode=mode)
    params = init_params(cfg, seed=seed)
    r = np.random.default_rng(seed)
    for name in ("ctc.w", "ctc.b", "cond.emb"):
        if name in params:
            params[name].data[:] = r.normal(0.0, 0.5, params[name].shape)
    return params, cfg


# -- thread configuration -----------------------------------------------------


def test_eval_threads_defaults_to_cpu_count_capped(monkeypatch):
    monkeypatch.delenv("LINGUA_CTC_THREADS", raising=False)
    import os
    assert eval_threads() == min(8, os.cpu_count() or 1)


def test_eval_threads_reads_environment(monkeypatch):
    monkeypatch.setenv("LINGUA_CTC_THREADS", "3")
    assert eval_threads() == 3


def test_eval_threads_rejects_garbage(monkeypatch):
    monkeypatch.setenv("LINGUA_CTC_THREADS", "many")
    with pytest.raises(ValueError, match="integer"):
        eval_threads()


def test_eval_threads_rejects_nonpositive(monkeypatch):
    monkeypatch.setenv("LINGUA_CTC_THREADS", "0")
    with pytest.raises(ValueError, match=">= 1"):
        eval_threads()


# -- single-utterance decoding -------------------------------------------------


def test_transcribe_returns_deterministic_text(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus)
    utt = tiny_corpus.splits["dev"][0]
    hyp = transcribe(params, cfg, utt, tiny_corpus.vocab)
    assert isinstance(hyp, str)
    assert hyp == transcribe(params, cfg, utt, tiny_corpus.vocab)


def test_transcribe_conditioning_changes_hypotheses(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus, mode="add")
    utts = tiny_corpus.splits["dev"][:6]
    as_0 = [transcribe(params, cfg, u, tiny_corpus.vocab, lang=0) for u in utts]
    as_1 = [transcribe(params, cfg, u, tiny_corpus.vocab, lang=1) for u in utts]
    assert as_0 != as_1


# -- dataset scoring -----------------------------------------------------------


def test_score_dataset_covers_every_language(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus)
    utts = tiny_corpus.splits["dev"]
    scores = score_dataset(params, cfg, utts, tiny_corpus.vocab, threads=1)
    assert set(scores) == {0, 1}
    want_words = {lang: sum(len(u.transcript.split()) for u in utts
                            if u.lang == lang) for lang in (0, 1)}
    assert {l: sc.ref_words for l, sc in scores.items()} == want_words


def test_score_dataset_language_filter(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus)
    utts = tiny_corpus.splits["dev"]
    scores = score_dataset(params, cfg, utts, tiny_corpus.vocab, lang=1,
                           threads=1)
    assert set(scores) == {1}
    full = score_dataset(params, cfg, utts, tiny_corpus.vocab, threads=1)
    assert scores[1] == full[1]


def test_score_dataset_empty_filter_is_an_error(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus)
    with pytest.raises(ValueError, match="language 7"):
        score_dataset(params, cfg, tiny_corpus.splits["dev"],
                      tiny_corpus.vocab, lang=7)


def test_score_dataset_thread_count_never_changes_results(tiny_corpus):
    params, cfg = scoring_model(tiny_corpus, mode="add")
    utts = tiny_corpus.splits["dev"]
    one = score_dataset(params, cfg, utts, tiny_corpus.vocab, threads=1)
    three = score_dataset(params, cfg, utts, tiny_corpus.vocab, threads=3)
    assert one == three


def test_score_dataset_conditioned_mode_uses_true_language(tiny_corpus):
    # conditioning ids come from the utterances themselves; scoring must not
    # require a lang argument for conditioned modes
    params, cfg = scoring_model(tiny_corpus, mode="add")
    scores = score_dataset(params, cfg, tiny_corpus.splits["dev"][:4],
                           tiny_corpus.vocab, threads=1)
    assert sum(sc.ref_words for sc in scores.values()) > 0


# -- rollup ----------------------------------------------------------------


def test_dataset_macro_wer_is_unweighted_mean():
    scores = {0: LangScore(lang=0, subs=1, dels=0, ins=0, ref_words=10),
              1: LangScore(lang=1, subs=0, dels=3, ins=0, ref_words=10)}
    assert dataset_macro_wer(scores) == pytest.approx((10.0 + 30.0) / 2)
