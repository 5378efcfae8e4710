"""Session-wide synthetic corpus shared by trainer, evaluation, and CLI tests.

Two languages, five short words each, long enough frames that every LID
expansion stays feasible. Built once per session; tests must not mutate the
files.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from lingua_ctc.bpe import train_bpe
from lingua_ctc.config import (DataConfig, RunConfig, ScheduleConfig,
                               TrainConfig)
from lingua_ctc.data import LangSpec, generate_corpus, write_dataset
from lingua_ctc.model import ModelConfig

WORDS_A = ["bo", "dal", "mig", "sun", "tev"]
WORDS_B = ["ki", "ran", "pol", "ves", "zor"]


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-corpus")
    r = np.random.default_rng(77)
    specs = [
        LangSpec(lang=0, name="A", words=WORDS_A,
                 prototypes=r.normal(0.0, 2.0, size=(5, 6)),
                 frames_per_word=(24, 30), noise_scale=0.25,
                 silence_frames=(2, 4)),
        LangSpec(lang=1, name="B", words=WORDS_B,
                 prototypes=r.normal(0.0, 2.0, size=(5, 6)),
                 frames_per_word=(24, 30), noise_scale=0.25,
                 silence_frames=(2, 4)),
    ]
    splits = {"train": generate_corpus(specs, [50, 50], seed=11),
              "dev": generate_corpus(specs, [12, 12], seed=12),
              "test": generate_corpus(specs, [12, 12], seed=13)}
    for name, utts in splits.items():
        write_dataset(utts, root / name)
    vocab = train_bpe([u.transcript for u in splits["train"]], 400)
    vocab.save(root / "vocab.bpe")
    return SimpleNamespace(root=root, splits=splits, vocab=vocab,
                           feat_dim=6, num_langs=2)


def tiny_run_config(corpus, mode="none", steps=4, seed=3, **model_kw):
    model = dict(feat_dim=corpus.feat_dim, vocab_size=corpus.vocab.size,
                 num_langs=corpus.num_langs, num_layers=2, d_model=16,
                 d_ffn=24, n_head=2, mode=mode)
    model.update(model_kw)
    return RunConfig(
        data=DataConfig(train=str(corpus.root / "train"),
                        dev=str(corpus.root / "dev"),
                        test=str(corpus.root / "test"),
                        vocab=str(corpus.root / "vocab.bpe")),
        model=ModelConfig(**model),
        schedule=ScheduleConfig(warmup_steps=40, factor=0.3),
        train=TrainConfig(seed=seed, steps=steps, batch_frames=750,
                          log_every=2, eval_every=1000, checkpoint_every=1000),
    )
