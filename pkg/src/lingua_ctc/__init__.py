"""Desk-scale multilingual CTC speech recognition with language conditioning.

The package trains Transformer-CTC recognizers over synthetic multilingual
corpora and compares ways of telling the model which language it is hearing:
feature fusion (add / attention / concat), prompt and prefix tuning, a
frame-level language-identification adapter, and parameter-efficient
fine-tuning of a frozen base model.
"""

from .bpe import Vocabulary, VocabularyError, decode, encode, train_bpe
from .config import (DataConfig, RunConfig, ScheduleConfig, TrainConfig,
                     read_config, write_config)
from .data import (Batch, DatasetError, LangSpec, Utterance, generate_corpus,
                   load_corpus_spec, make_batches, read_dataset, write_dataset)
from .estimators import BytePairTokenizer, CtcRecognizer
from .evaluate import score_dataset, transcribe
from .model import (ConfigError, EncoderOutput, ForwardOutput, ModelConfig,
                    count_parameters, init_params, model_forward)
from .objectives import (InfeasibleAlignmentError, combined_loss, ctc_loss,
                         ctc_loss_batch, expand_lid_labels, frame_ce_loss,
                         greedy_decode, macro_average, word_error_rate)
from .tensor import GraphConsumedError, Tensor
from .trainer import (Schedule, TrainState, TrainingDivergedError, adam_step,
                      clip_global_norm, load_checkpoint, noam_lr,
                      peft_finetune, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "Batch", "BytePairTokenizer", "ConfigError", "CtcRecognizer",
    "DataConfig", "DatasetError", "EncoderOutput", "ForwardOutput",
    "GraphConsumedError",
    "InfeasibleAlignmentError", "LangSpec", "ModelConfig", "RunConfig",
    "Schedule", "ScheduleConfig", "TrainConfig", "TrainState",
    "TrainingDivergedError", "Tensor", "Utterance", "Vocabulary",
    "VocabularyError", "adam_step", "clip_global_norm", "combined_loss",
    "count_parameters", "ctc_loss", "ctc_loss_batch", "decode", "encode",
    "expand_lid_labels", "frame_ce_loss", "generate_corpus", "greedy_decode",
    "init_params", "load_checkpoint", "load_corpus_spec", "macro_average",
    "make_batches", "model_forward", "noam_lr", "peft_finetune",
    "read_config", "read_dataset", "save_checkpoint", "score_dataset",
    "train", "train_bpe", "transcribe", "word_error_rate", "write_config",
    "write_dataset",
]
