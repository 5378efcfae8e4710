"""Adam training with a Noam schedule, freezing, clipping, and checkpoints.

A checkpoint is a directory: `model.lct` (weights), `optim.lct` (Adam
moments plus the step counter), `config.cfg` (the exact run config), and
`freeze.txt` (one frozen parameter name per line). Fine-tuning loads a
frozen base model and trains only the parameters its own mode introduces.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bpe
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .config import RunConfig, read_config, write_config
from .data import DatasetError, make_batches, read_dataset
from .evaluate import dataset_macro_wer, score_dataset
from .model import (ConfigError, ModelConfig, PEFT_MODES, init_params,
                    model_forward)
from .objectives import (combined_loss, ctc_loss_batch, expand_lid_labels,
                         frame_ce_loss)
from .tensor import Tensor, log_softmax, mean, reshape


class TrainingDivergedError(RuntimeError):
    pass


# -- learning rate -------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    d_model: int
    warmup_steps: int
    factor: float = 1.0

    def __post_init__(self):
        if self.d_model < 1 or self.warmup_steps < 1 or self.factor <= 0:
            raise ValueError("schedule fields must be positive")


def noam_lr(step: int, sched: Schedule) -> float:
    """Warmup then inverse-sqrt decay; peak exactly at step = warmup_steps."""
    if step < 1:
        raise ValueError("step must be >= 1")
    scale = sched.factor * sched.d_model ** -0.5
    return scale * min(step ** -0.5, step * sched.warmup_steps ** -1.5)


# -- optimizer -----------------------------------------------------------------


@dataclass
class TrainState:
    params: dict                      # name -> Tensor
    m: dict                           # Adam moments, unfrozen names only
    v: dict
    step: int = 0
    freeze: frozenset = frozenset()


def init_state(params: dict, freeze=()) -> TrainState:
    freeze = frozenset(freeze)
    unknown = freeze - params.keys()
    if unknown:
        raise ValueError(f"freeze names not in params: {sorted(unknown)}")
    m = {n: np.zeros_like(p.data) for n, p in params.items() if n not in freeze}
    v = {n: np.zeros_like(p.data) for n, p in params.items() if n not in freeze}
    return TrainState(params=params, m=m, v=v, step=0, freeze=freeze)


def clip_global_norm(grads: dict, max_norm: float = 5.0) -> float:
    """Scale all grads in place so the joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(state: TrainState, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.98,
              eps: float = 1e-9) -> TrainState:
    """One bias-corrected Adam update on the unfrozen parameters."""
    missing = [n for n in state.m if n not in grads]
    if missing:
        raise ValueError(f"gradients missing for: {missing}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in state.m:
        g = grads[name]
        if not np.isfinite(g).all():
            raise TrainingDivergedError(
                f"non-finite gradient for parameter {name!r} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        state.params[name].data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# -- loss over one batch -------------------------------------------------------


def batch_loss(params: dict, config: ModelConfig, batch):
    """Forward a batch and assemble total = ctc + alpha * lid.

    CTC averages per-utterance losses; the LID term is a per-frame CE mean
    or a per-utterance CTC mean depending on the mode. Prompt rows never
    enter either loss.
    """
    langs = batch.langs if config.needs_lang_id else None
    out = model_forward(params, config, batch.features, batch.frame_lengths,
                        langs=langs)
    hi = out.log_probs.shape[1] - out.n_suffix
    acoustic = out.log_probs[:, out.n_prefix: hi]
    ctc_vec = ctc_loss_batch(acoustic, batch.labels, out.sub_lengths,
                             blank=config.blank_id)
    ctc = mean(ctc_vec)
    if config.lid_loss_kind is None:
        return combined_loss(ctc)

    lid_slice = out.lid_logits[:, out.n_prefix: hi]
    b, t_max = lid_slice.shape[0], lid_slice.shape[1]
    if config.lid_loss_kind == "ce":
        flat = reshape(lid_slice, (b * t_max, config.num_langs + 1))
        targets = np.zeros(b * t_max, dtype=np.int64)
        keep = np.zeros(b * t_max, dtype=bool)
        for i, (lang, lab) in enumerate(zip(batch.langs, batch.labels)):
            t_i = int(out.sub_lengths[i])
            row = expand_lid_labels(int(lang), "ce", t_i, len(lab))
            targets[i * t_max: i * t_max + t_i] = row
            keep[i * t_max: i * t_max + t_i] = True
        lid = frame_ce_loss(flat, targets, keep)
    else:
        lid_lp = log_softmax(lid_slice, axis=-1)
        lid_labels = [
            expand_lid_labels(int(lang), "ctc", int(t_i), len(lab))
            for lang, lab, t_i in zip(batch.langs, batch.labels,
                                      out.sub_lengths)]
        lid = mean(ctc_loss_batch(lid_lp, lid_labels, out.sub_lengths,
                                  blank=config.num_langs))
    return combined_loss(ctc, lid, config.alpha)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, state: TrainState, run_cfg: RunConfig) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_tensors(path / "model.lct",
                 {n: t.data for n, t in state.params.items()})
    optim = {"step": np.asarray(float(state.step))}
    for n in state.m:
        optim[f"m.{n}"] = state.m[n]
        optim[f"v.{n}"] = state.v[n]
    save_tensors(path / "optim.lct", optim)
    write_config(run_cfg, path / "config.cfg")
    (path / "freeze.txt").write_text(
        "".join(f"{n}\n" for n in sorted(state.freeze)), encoding="utf-8")


def load_checkpoint(path):
    """Restore (TrainState, RunConfig) from a checkpoint directory."""
    path = Path(path)
    for name in ("model.lct", "optim.lct", "config.cfg", "freeze.txt"):
        if not (path / name).exists():
            raise CheckpointError(f"checkpoint {path} is missing {name}")
    run_cfg = read_config(path / "config.cfg")
    weights = load_tensors(path / "model.lct")

    reference = init_params(run_cfg.model, seed=0)
    if set(weights) != set(reference):
        extra = sorted(set(weights) - set(reference))[:3]
        gone = sorted(set(reference) - set(weights))[:3]
        raise CheckpointError(
            f"checkpoint {path} does not match its config "
            f"(unexpected {extra}, missing {gone})")
    for n, ref in reference.items():
        if weights[n].shape != ref.shape:
            raise CheckpointError(
                f"checkpoint {path}: {n} has shape {weights[n].shape}, "
                f"config implies {ref.shape}")

    params = {n: Tensor(a, requires_grad=True) for n, a in weights.items()}
    freeze = frozenset(
        ln for ln in (path / "freeze.txt").read_text(encoding="utf-8").splitlines()
        if ln)
    if not freeze <= params.keys():
        raise CheckpointError(f"checkpoint {path}: freeze.txt names unknown "
                              f"parameters {sorted(freeze - params.keys())[:3]}")
    optim = load_tensors(path / "optim.lct")
    step = int(np.ravel(optim.pop("step"))[0])
    m = {n[2:]: a for n, a in optim.items() if n.startswith("m.")}
    v = {n[2:]: a for n, a in optim.items() if n.startswith("v.")}
    expected = params.keys() - freeze
    if m.keys() != expected or v.keys() != expected:
        raise CheckpointError(
            f"checkpoint {path}: optimizer moments do not cover exactly the "
            f"unfrozen parameters")
    return TrainState(params=params, m=m, v=v, step=step, freeze=freeze), run_cfg


# -- training loops ------------------------------------------------------------


def _forward_view(state: TrainState) -> dict:
    """Params for the forward pass: frozen ones as untracked constants."""
    if not state.freeze:
        return state.params
    view = dict(state.params)
    for name in state.freeze:
        view[name] = Tensor(state.params[name].data)
    return view


def _load_run_data(run_cfg: RunConfig):
    data = run_cfg.data
    if not data.train or not data.vocab:
        raise ConfigError("config needs data.train and data.vocab")
    vocab = bpe.Vocabulary.load(data.vocab)
    if run_cfg.model.vocab_size and vocab.size != run_cfg.model.vocab_size:
        raise ConfigError(
            f"model vocab_size {run_cfg.model.vocab_size} != vocabulary file "
            f"size {vocab.size}")
    train_utts = read_dataset(data.train)
    dev_utts = read_dataset(data.dev) if data.dev else []
    feat_dim = train_utts[0].features.shape[1] if train_utts else 0
    if train_utts and feat_dim != run_cfg.model.feat_dim:
        raise ConfigError(
            f"model feat_dim {run_cfg.model.feat_dim} != dataset feature "
            f"width {feat_dim}")
    worst = max((u.lang for u in train_utts + dev_utts), default=0)
    if worst >= run_cfg.model.num_langs:
        raise ConfigError(
            f"dataset has language id {worst} but model num_langs is "
            f"{run_cfg.model.num_langs}")
    return train_utts, dev_utts, vocab


def _fit(state: TrainState, run_cfg: RunConfig, out_dir,
         train_utts, dev_utts, vocab) -> TrainState:
    mcfg = run_cfg.model
    tcfg = run_cfg.train
    scfg = run_cfg.schedule
    sched = Schedule(d_model=scfg.d_model or mcfg.d_model,
                     warmup_steps=scfg.warmup_steps, factor=scfg.factor)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_cfg, out_dir / "config.cfg")
    last_ckpt = None

    with open(out_dir / "metrics.log", "a", encoding="utf-8", newline="\n") as mf, \
         open(out_dir / "dev.log", "a", encoding="utf-8", newline="\n") as df:
        epoch = 0
        while state.step < tcfg.steps:
            batches = make_batches(train_utts, tcfg.batch_frames, vocab,
                                   seed=tcfg.seed + epoch)
            if not batches:
                raise DatasetError("no training batches")
            for batch in batches:
                if state.step >= tcfg.steps:
                    break
                bundle = batch_loss(_forward_view(state), mcfg, batch)
                total = float(bundle.total.data)
                if not math.isfinite(total):
                    kept = f"; last checkpoint retained at {last_ckpt}" \
                        if last_ckpt else ""
                    raise TrainingDivergedError(
                        f"loss diverged at step {state.step + 1}{kept}")
                bundle.total.backward()
                grads = {}
                for name in state.m:
                    p = state.params[name]
                    grads[name] = p.grad if p.grad is not None \
                        else np.zeros_like(p.data)
                    p.grad = None
                clip_global_norm(grads, tcfg.clip_norm)
                lr = noam_lr(state.step + 1, sched)
                adam_step(state, grads, lr)

                step = state.step
                if step % tcfg.log_every == 0 or step == tcfg.steps:
                    lid_txt = "-" if bundle.lid is None \
                        else f"{float(bundle.lid.data):.6f}"
                    mf.write(f"{step}\t{lr:.10e}\t{float(bundle.ctc.data):.6f}"
                             f"\t{lid_txt}\t{total:.6f}\n")
                    mf.flush()
                if dev_utts and (step % tcfg.eval_every == 0
                                 or step == tcfg.steps):
                    scores = score_dataset(state.params, mcfg, dev_utts, vocab)
                    df.write(f"{step}\t{dataset_macro_wer(scores):.4f}\n")
                    df.flush()
                if step % tcfg.checkpoint_every == 0 or step == tcfg.steps:
                    last_ckpt = out_dir / f"ckpt-{step:06d}"
                    save_checkpoint(last_ckpt, state, run_cfg)
            epoch += 1
    return state


def train(run_cfg: RunConfig, out_dir=None) -> TrainState:
    """Train a model from scratch per the run config. Deterministic."""
    out = Path(out_dir) if out_dir is not None else Path(run_cfg.train.out_dir)
    if str(out) in ("", "."):
        raise ConfigError("no output directory configured")
    if run_cfg.model.mode in PEFT_MODES:
        raise ConfigError(
            f"mode {run_cfg.model.mode!r} fine-tunes a base model; use "
            f"peft_finetune")
    train_utts, dev_utts, vocab = _load_run_data(run_cfg)
    if run_cfg.model.vocab_size == 0:
        # vocab_size = 0 in the file means "follow the vocabulary"
        run_cfg = dataclasses.replace(
            run_cfg,
            model=dataclasses.replace(run_cfg.model, vocab_size=vocab.size))
    params = init_params(run_cfg.model, seed=run_cfg.train.seed)
    state = init_state(params)
    return _fit(state, run_cfg, out, train_utts, dev_utts, vocab)


# Fields a fine-tune config may introduce; everything structural must come
# from the base checkpoint.
_TUNER_FIELDS = ("mode", "adapter_dim", "num_prompt_tokens", "prefix_embed_dim")


def _resolve_peft_model(peft: ModelConfig, base: ModelConfig) -> ModelConfig:
    if peft.mode not in PEFT_MODES:
        raise ConfigError(f"fine-tuning requires a peft-* mode, got {peft.mode!r}")
    if not base.mode.startswith("fl-adapter-"):
        raise ConfigError(
            f"fine-tuning requires an fl-adapter base model, got base mode "
            f"{base.mode!r}")
    if peft.base_mode and peft.base_mode != base.mode:
        raise ConfigError(
            f"config says base_mode {peft.base_mode!r} but the checkpoint "
            f"was trained with {base.mode!r}")
    merged = {f.name: getattr(base, f.name)
              for f in dataclasses.fields(ModelConfig)}
    for name in _TUNER_FIELDS:
        merged[name] = getattr(peft, name)
    merged["base_mode"] = base.mode
    for f in dataclasses.fields(ModelConfig):
        if f.name in _TUNER_FIELDS or f.name == "base_mode":
            continue
        given = getattr(peft, f.name)
        if f.name == "vocab_size" and given == 0:
            continue  # 0 means "follow the vocabulary", here: the base's
        if f.name == "fl_adapter_layer" and given == peft.num_layers // 2:
            continue  # the auto middle-layer value, not an explicit choice
        if given != f.default and given != merged[f.name]:
            raise ConfigError(
                f"fine-tune config sets {f.name} = {given!r} but the base "
                f"checkpoint has {merged[f.name]!r}")
    return ModelConfig(**merged)


def peft_finetune(base_ckpt, run_cfg: RunConfig, out_dir=None) -> TrainState:
    """Fine-tune new conditioning parameters on top of a frozen base model.

    The base checkpoint's weights are copied and frozen; only the parameters
    introduced by the peft-* mode train. The combined loss keeps the base
    model's LID term and weight.
    """
    out = Path(out_dir) if out_dir is not None else Path(run_cfg.train.out_dir)
    if str(out) in ("", "."):
        raise ConfigError("no output directory configured")
    base_state, base_run = load_checkpoint(base_ckpt)
    mcfg = _resolve_peft_model(run_cfg.model, base_run.model)
    resolved = dataclasses.replace(run_cfg, model=mcfg)

    params = init_params(mcfg, seed=run_cfg.train.seed)
    base_names = set(base_state.params)
    tuner_names = set(params) - base_names
    if not tuner_names:
        raise ConfigError(
            f"mode {mcfg.mode!r} with base {mcfg.base_mode!r} adds no "
            f"trainable parameters")
    stale = {n for n in base_names
             if n.split(".")[0] in ("prompt", "prefix")} | \
            {n for n in base_names if ".adapter." in n}
    if stale:
        raise ConfigError(
            f"base checkpoint already contains tuner parameters "
            f"{sorted(stale)[:3]}; refusing to shadow them")
    for name in base_names:
        params[name] = Tensor(base_state.params[name].data.copy(),
                              requires_grad=True)
    state = init_state(params, freeze=base_names)

    train_utts, dev_utts, vocab = _load_run_data(resolved)
    return _fit(state, resolved, out, train_utts, dev_utts, vocab)
