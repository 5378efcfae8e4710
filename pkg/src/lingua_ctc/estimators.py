"""Estimator facade over the toolkit, in the fit/transform/predict idiom."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import bpe
from .config import DataConfig, RunConfig, ScheduleConfig, TrainConfig
from .data import Utterance
from .evaluate import transcribe
from .model import ModelConfig, constant_params
from .objectives import word_error_rate
from .trainer import _fit, init_params, init_state
from .validation import (check_feature_list, check_is_fitted, check_langs,
                         check_transcripts)


class BytePairTokenizer(BaseEstimator, TransformerMixin):
    """Byte-level BPE: fit on strings, transform to token-id lists."""

    def __init__(self, vocab_size: int = 600):
        self.vocab_size = vocab_size

    def fit(self, X, y=None):
        texts = [str(t) for t in X]
        if not texts:
            raise ValueError("X is empty")
        self.vocab_ = bpe.train_bpe(texts, self.vocab_size)
        return self

    def transform(self, X) -> list:
        check_is_fitted(self, "vocab_")
        return [bpe.encode(str(t), self.vocab_) for t in X]

    def inverse_transform(self, X) -> list:
        check_is_fitted(self, "vocab_")
        return [bpe.decode(ids, self.vocab_) for ids in X]


class CtcRecognizer(BaseEstimator):
    """Transformer-CTC recognizer over per-utterance feature matrices.

    `X` is a sequence of (frames x features) arrays, `y` the transcripts,
    `langs` integer language ids (required by every mode except "none").
    Training runs the same loop as the command-line tools; pass `run_dir`
    to keep its logs and checkpoints.
    """

    def __init__(self, mode: str = "none", vocab_size: int = 600,
                 num_langs=None, num_layers: int = 2, d_model: int = 32,
                 d_ffn: int = 64, n_head: int = 4, alpha: float = 0.0,
                 adapter_dim: int = 0, num_prompt_tokens: int = 1,
                 lang_embed_dim: int = 8, prefix_embed_dim: int = 16,
                 fl_adapter_layer: int = 0, steps: int = 200,
                 batch_frames: int = 2000, warmup_steps: int = 400,
                 factor: float = 1.0, seed: int = 0, run_dir=None):
        self.mode = mode
        self.vocab_size = vocab_size
        self.num_langs = num_langs
        self.num_layers = num_layers
        self.d_model = d_model
        self.d_ffn = d_ffn
        self.n_head = n_head
        self.alpha = alpha
        self.adapter_dim = adapter_dim
        self.num_prompt_tokens = num_prompt_tokens
        self.lang_embed_dim = lang_embed_dim
        self.prefix_embed_dim = prefix_embed_dim
        self.fl_adapter_layer = fl_adapter_layer
        self.steps = steps
        self.batch_frames = batch_frames
        self.warmup_steps = warmup_steps
        self.factor = factor
        self.seed = seed
        self.run_dir = run_dir

    def _model_config(self, feat_dim: int, num_langs: int) -> ModelConfig:
        return ModelConfig(
            feat_dim=feat_dim, vocab_size=self.vocab_size_,
            num_langs=num_langs, num_layers=self.num_layers,
            d_model=self.d_model, d_ffn=self.d_ffn, n_head=self.n_head,
            mode=self.mode, alpha=self.alpha, adapter_dim=self.adapter_dim,
            num_prompt_tokens=self.num_prompt_tokens,
            lang_embed_dim=self.lang_embed_dim,
            prefix_embed_dim=self.prefix_embed_dim,
            fl_adapter_layer=self.fl_adapter_layer)

    def fit(self, X, y, langs=None):
        mats = check_feature_list(X)
        texts = check_transcripts(y, len(mats))
        lang_ids = check_langs(langs, len(mats), self.num_langs)
        num_langs = self.num_langs if self.num_langs is not None \
            else max(2, int(lang_ids.max()) + 1)

        self.vocab_obj_ = bpe.train_bpe(texts, self.vocab_size)
        self.vocab_size_ = self.vocab_obj_.size
        config = self._model_config(mats[0].shape[1], num_langs)

        utts = [Utterance(utt_id=f"fit-{i:05d}", lang=int(l),
                          features=m.astype(np.float32), transcript=t)
                for i, (m, t, l) in enumerate(zip(mats, texts, lang_ids))]
        run_cfg = RunConfig(
            data=DataConfig(),
            model=config,
            schedule=ScheduleConfig(warmup_steps=self.warmup_steps,
                                    factor=self.factor),
            train=TrainConfig(seed=self.seed, steps=self.steps,
                              batch_frames=self.batch_frames,
                              log_every=max(1, self.steps // 10),
                              eval_every=self.steps,
                              checkpoint_every=self.steps))
        state = init_state(init_params(config, seed=self.seed))
        if self.run_dir is not None:
            _fit(state, run_cfg, Path(self.run_dir), utts, [], self.vocab_obj_)
        else:
            with tempfile.TemporaryDirectory() as tmp:
                _fit(state, run_cfg, Path(tmp), utts, [], self.vocab_obj_)
        self.config_ = config
        self.params_ = state.params
        self.n_steps_ = state.step
        return self

    def predict(self, X, langs=None) -> list:
        check_is_fitted(self, "params_")
        mats = check_feature_list(X, feat_dim=self.config_.feat_dim)
        lang_ids = check_langs(langs, len(mats), self.config_.num_langs)
        if self.config_.needs_lang_id and langs is None:
            raise ValueError(f"mode {self.mode!r} needs language ids; "
                             f"pass langs=")
        cparams = constant_params(self.params_)
        out = []
        for m, lang in zip(mats, lang_ids):
            utt = Utterance(utt_id="x", lang=int(lang),
                            features=m.astype(np.float32), transcript="")
            cond = int(lang) if self.config_.needs_lang_id else None
            out.append(transcribe(cparams, self.config_, utt,
                                  self.vocab_obj_, lang=cond))
        return out

    def score(self, X, y, langs=None) -> float:
        """Negative corpus WER%, so that larger is better."""
        hyps = self.predict(X, langs=langs)
        texts = check_transcripts(y, len(hyps))
        edits = 0
        words = 0
        for ref, hyp in zip(texts, hyps):
            s, d, i, _ = word_error_rate(ref, hyp)
            edits += s + d + i
            words += len(ref.split())
        return -100.0 * edits / words
