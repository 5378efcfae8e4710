"""Transformer-CTC acoustic model: conv front-end, encoder stack, CTC head.

The front-end subsamples time by 6 (two kernel-3 convolutions with strides
2 and 3), each followed by ReLU, then a linear map to d_model. Encoder
layers are pre-LN self-attention + feedforward with a final LayerNorm.
Language conditioning attaches at fixed points:

  concat one-hot/embedding   before the front-end (input width grows)
  add / attention            on front-end output, before positions are added
  prompt tokens              concatenated after the front-end; positional
                             encoding then covers the whole sequence
  prefix key/values          inside every attention layer
  frame-level language branch after layer `fl_adapter_layer`
  residual adapters          on each feedforward output (fine-tuning only)

Padded frames are zeroed before the front-end and key-masked inside
attention, so outputs at real positions never depend on padding contents.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import conditioning as cond
from .tensor import (Tensor, concat, layer_norm, log_softmax, masked_fill,
                     relu, reshape, softmax, swap_axes)

LN_EPS = 1e-5

SIMPLE_MODES = (
    "none", "add", "attention", "concat-onehot", "concat-emb",
    "prompt-prefix", "prompt-suffix", "prompt-both", "prefix-tuning",
    "fl-adapter-ce", "fl-adapter-ctc",
)
PEFT_MODES = (
    "peft-prompt-prefix", "peft-prompt-suffix", "peft-prompt-both",
    "peft-prefix-tuning",
)
MODE_ALIASES = {"baseline": "none"}


class ConfigError(ValueError):
    pass


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in SIMPLE_MODES + PEFT_MODES:
        raise ConfigError(f"unknown conditioning mode {mode!r}")
    return mode


@dataclass
class ModelConfig:
    feat_dim: int = 80
    vocab_size: int = 600
    num_langs: int = 3
    num_layers: int = 4
    d_model: int = 64
    d_ffn: int = 128
    n_head: int = 4
    subsample_factor: int = 6
    mode: str = "none"
    base_mode: str = ""         # PEFT: conditioning mode of the frozen base
    fl_adapter_layer: int = 0   # 0 selects num_layers // 2
    adapter_dim: int = 0        # residual adapter bottleneck; 0 disables
    num_prompt_tokens: int = 1
    lang_embed_dim: int = 8     # concat-embedding width
    prefix_embed_dim: int = 16  # prefix-tuning embedding width
    alpha: float = 0.0          # LID loss weight in the combined loss

    def __post_init__(self):
        self.mode = canonical_mode(self.mode)
        if self.d_model % self.n_head != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_head {self.n_head}")
        if self.subsample_factor != 6:
            raise ConfigError("front-end strides (2, 3) fix subsample_factor at 6")
        if self.mode in PEFT_MODES:
            # base_mode may stay empty until resolved from a base checkpoint
            if self.base_mode:
                self.base_mode = canonical_mode(self.base_mode)
                if self.base_mode not in ("fl-adapter-ce", "fl-adapter-ctc"):
                    raise ConfigError(
                        f"{self.mode} requires an fl-adapter base, got base "
                        f"mode {self.base_mode!r}")
        elif self.base_mode:
            raise ConfigError("base_mode is only meaningful for peft-* modes")
        if self.fl_adapter_layer == 0:
            self.fl_adapter_layer = self.num_layers // 2
        if self.uses_fl_adapter and not 1 <= self.fl_adapter_layer <= self.num_layers - 1:
            raise ConfigError(
                f"fl_adapter_layer must lie in [1, {self.num_layers - 1}]")
        if self.num_prompt_tokens < 1:
            raise ConfigError("num_prompt_tokens must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")

    # -- mode predicates ---------------------------------------------------

    @property
    def uses_fl_adapter(self) -> bool:
        return (self.mode.startswith("fl-adapter")
                or self.base_mode.startswith("fl-adapter"))

    @property
    def lid_loss_kind(self):
        for m in (self.mode, self.base_mode):
            if m.startswith("fl-adapter-"):
                return m[len("fl-adapter-"):]
        return None

    @property
    def prompt_position(self):
        for m in (self.mode, self.mode.removeprefix("peft-")):
            if m.startswith("prompt-"):
                return m[len("prompt-"):]
        return None

    @property
    def uses_prefix_tuning(self) -> bool:
        return self.mode in ("prefix-tuning", "peft-prefix-tuning")

    @property
    def needs_lang_id(self) -> bool:
        """True when the forward pass consumes a language id."""
        return self.mode not in ("none", "fl-adapter-ce", "fl-adapter-ctc")

    @property
    def frontend_in_dim(self) -> int:
        if self.mode == "concat-onehot":
            return self.feat_dim + self.num_langs
        if self.mode == "concat-emb":
            return self.feat_dim + self.lang_embed_dim
        return self.feat_dim

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    def sub_length(self, t: int) -> int:
        return -(-t // self.subsample_factor)


# -- parameters ---------------------------------------------------------------


def init_params(config: ModelConfig, seed: int) -> dict:
    """Fresh parameter tensors, deterministically from the seed.

    Weights are Xavier-uniform; biases and LayerNorm offsets zero; the CTC
    head and every adapter up-projection start at exactly zero.
    """
    if config.mode in PEFT_MODES and not config.base_mode:
        raise ConfigError(
            f"mode {config.mode!r} needs base_mode, resolved from the base "
            f"checkpoint it fine-tunes")
    rng = np.random.default_rng(seed)
    d, f, l_num = config.d_model, config.d_ffn, config.num_layers
    k, v = config.num_langs, config.vocab_size
    params: dict[str, Tensor] = {}

    def add(name, arr):
        params[name] = Tensor(arr, requires_grad=True)

    def xavier(shape):
        fan_in = int(np.prod(shape[:-1]))
        limit = sqrt(6.0 / (fan_in + shape[-1]))
        return rng.uniform(-limit, limit, size=shape)

    fin = config.frontend_in_dim
    add("frontend.conv1.w", xavier((3 * fin, d)))
    add("frontend.conv1.b", np.zeros(d))
    add("frontend.conv2.w", xavier((3 * d, d)))
    add("frontend.conv2.b", np.zeros(d))
    add("frontend.proj.w", xavier((d, d)))
    add("frontend.proj.b", np.zeros(d))

    for l in range(l_num):
        p = f"encoder.layer{l}."
        add(p + "ln1.g", np.ones(d))
        add(p + "ln1.b", np.zeros(d))
        for nm in ("wq", "wk", "wv", "wo"):
            add(p + f"att.{nm}", xavier((d, d)))
        for nm in ("bq", "bk", "bv", "bo"):
            add(p + f"att.{nm}", np.zeros(d))
        add(p + "ln2.g", np.ones(d))
        add(p + "ln2.b", np.zeros(d))
        add(p + "ffn.w1", xavier((d, f)))
        add(p + "ffn.b1", np.zeros(f))
        add(p + "ffn.w2", xavier((f, d)))
        add(p + "ffn.b2", np.zeros(d))

    add("final_ln.g", np.ones(d))
    add("final_ln.b", np.zeros(d))
    add("ctc.w", np.zeros((d, v + 1)))
    add("ctc.b", np.zeros(v + 1))

    if config.mode == "add":
        add("cond.emb", rng.normal(0.0, 0.5, size=(k, d)))
    elif config.mode == "attention":
        add("cond.emb", rng.normal(0.0, 0.5, size=(k, d)))
        add("cond.score.w", xavier((d, d)))
        add("cond.score.v", rng.normal(0.0, 1.0 / sqrt(d), size=d))
    elif config.mode == "concat-emb":
        add("cond.emb", rng.normal(0.0, 0.5, size=(k, config.lang_embed_dim)))

    pos = config.prompt_position
    if pos is not None:
        add("prompt.emb",
            rng.normal(0.0, 0.5, size=(k, config.num_prompt_tokens * d)))
    if config.uses_prefix_tuning:
        e = config.prefix_embed_dim
        width = l_num * d * 2 * config.num_prompt_tokens
        add("prefix.emb", rng.normal(0.0, 1.0, size=(k, e)))
        add("prefix.proj.w", xavier((e, width)))
        add("prefix.proj.b", np.zeros(width))

    if config.uses_fl_adapter:
        add("fl.down.w", xavier((d, k + 1)))
        add("fl.down.b", np.zeros(k + 1))
        add("fl.up.w", np.zeros((k + 1, d)))
        add("fl.up.b", np.zeros(d))

    if config.adapter_dim > 0:
        a = config.adapter_dim
        for l in range(l_num):
            p = f"encoder.layer{l}.adapter."
            add(p + "down.w", xavier((d, a)))
            add(p + "down.b", np.zeros(a))
            add(p + "up.w", np.zeros((a, d)))
            add(p + "up.b", np.zeros(d))
    return params


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count implied by the configuration."""
    d, f, l_num = config.d_model, config.d_ffn, config.num_layers
    k, v = config.num_langs, config.vocab_size
    fin = config.frontend_in_dim
    total = (3 * fin * d + d) + (3 * d * d + d) + (d * d + d)
    total += l_num * (4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d))
    total += 2 * d
    total += d * (v + 1) + (v + 1)
    if config.mode == "add":
        total += k * d
    elif config.mode == "attention":
        total += k * d + d * d + d
    elif config.mode == "concat-emb":
        total += k * config.lang_embed_dim
    if config.prompt_position is not None:
        total += k * config.num_prompt_tokens * d
    if config.uses_prefix_tuning:
        width = l_num * d * 2 * config.num_prompt_tokens
        total += k * config.prefix_embed_dim + config.prefix_embed_dim * width + width
    if config.uses_fl_adapter:
        total += d * (k + 1) + (k + 1) + (k + 1) * d + d
    if config.adapter_dim > 0:
        a = config.adapter_dim
        total += l_num * (2 * d * a + a + d)
    return total


def constant_params(params: dict) -> dict:
    """Untracked view of the parameters: forwards build no tape."""
    return {name: Tensor(p.data) for name, p in params.items()}


# -- forward pieces ------------------------------------------------------------


def positional_encoding(t: int, d_model: int) -> np.ndarray:
    """Sinusoidal absolute positions; pe[0] = [0, 1, 0, 1, ...]."""
    pos = np.arange(t, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / d_model)
    pe = np.zeros((t, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def _conv1d(x, w, b, stride: int):
    """Kernel-3 convolution over time, padded by one frame on each side."""
    b_sz, t, c = x.shape
    zeros = Tensor(np.zeros((b_sz, 1, c)))
    xp = concat([zeros, x, zeros], axis=1)
    out_len = -(-t // stride)
    taps = [xp[:, k: k + stride * (out_len - 1) + 1: stride] for k in range(3)]
    return concat(taps, axis=2) @ w + b


def conv_frontend(params: dict, config: ModelConfig, feats, lengths):
    """Subsample by 6 and project to d_model.

    Returns (hidden B x T' x d, sub_lengths, mask' B x T'). Raises when any
    utterance is shorter than the subsample factor.
    """
    lengths = np.asarray(lengths)
    if lengths.min() < config.subsample_factor:
        raise ValueError(
            f"utterance of {int(lengths.min())} frames is shorter than the "
            f"subsample factor {config.subsample_factor}")
    h = relu(_conv1d(feats, params["frontend.conv1.w"], params["frontend.conv1.b"], 2))
    # bias terms light up rows past each utterance's end; silence them so an
    # utterance's outputs do not depend on how much padding the batch carries
    len1 = -(-lengths // 2)
    h = h * Tensor((np.arange(h.shape[1])[None, :] < len1[:, None])[:, :, None]
                   .astype(np.float64))
    h = relu(_conv1d(h, params["frontend.conv2.w"], params["frontend.conv2.b"], 3))
    h = h @ params["frontend.proj.w"] + params["frontend.proj.b"]
    sub_lengths = -(-lengths // config.subsample_factor)
    mask = np.arange(h.shape[1])[None, :] < sub_lengths[:, None]
    return h, sub_lengths, mask


def _self_attention(x, key_mask, p, prefix, n_head: int):
    """Pre-LN multi-head attention body; optional prefix key/value rows.

    `prefix` is (keys, values) in value space, each B x P x d, or
    (keys, values, mask) with a B x P boolean attend-mask over the prompt
    rows; prompts are fully attended when no mask is given.
    """
    b, s, d = x.shape
    dh = d // n_head

    def heads(m, length):
        return swap_axes(reshape(m, (b, length, n_head, dh)), 1, 2)

    q = heads(x @ p["att.wq"] + p["att.bq"], s)
    k_rows = x @ p["att.wk"] + p["att.bk"]
    v_rows = x @ p["att.wv"] + p["att.bv"]
    if prefix is not None:
        k_prompt, v_prompt = prefix[0], prefix[1]
        k_rows = concat([k_prompt, k_rows], axis=1)
        v_rows = concat([v_prompt, v_rows], axis=1)
        n_prompt = k_prompt.shape[1]
        p_mask = (prefix[2] if len(prefix) > 2
                  else np.ones((b, n_prompt), dtype=bool))
        key_mask = np.concatenate([p_mask, key_mask], axis=1)
    s_k = k_rows.shape[1]
    k = heads(k_rows, s_k)
    v = heads(v_rows, s_k)

    scores = (q @ swap_axes(k, -1, -2)) * (1.0 / sqrt(dh))
    scores = masked_fill(scores, ~key_mask[:, None, None, :], -np.inf)
    att = softmax(scores, axis=-1) @ v
    merged = reshape(swap_axes(att, 1, 2), (b, s, d))
    return merged @ p["att.wo"] + p["att.bo"]


@dataclass
class EncoderOutput:
    hidden: Tensor            # B x S x d_model
    mask: np.ndarray          # B x S, true on real (non-padding) positions
    lid_logits: Tensor | None = None  # B x S x (K+1) in fl-adapter modes


def encoder_forward(params, config: ModelConfig, hidden, mask,
                    prefix_all=None) -> EncoderOutput:
    """Run the encoder stack over already-embedded input rows.

    `prefix_all` is the B x num_layers x 2 x P x d prefix-tuning tensor, or
    None. The frame-level language branch fires after `fl_adapter_layer`
    layers when configured.
    """
    lid_logits = None
    x = hidden
    for l in range(config.num_layers):
        p = {key[len(f"encoder.layer{l}."):]: t for key, t in params.items()
             if key.startswith(f"encoder.layer{l}.")}
        prefix = None
        if prefix_all is not None:
            prefix = (prefix_all[:, l, 0], prefix_all[:, l, 1])
        a = layer_norm(x, p["ln1.g"], p["ln1.b"], LN_EPS)
        x = x + _self_attention(a, mask, p, prefix, config.n_head)
        f_in = layer_norm(x, p["ln2.g"], p["ln2.b"], LN_EPS)
        z = relu(f_in @ p["ffn.w1"] + p["ffn.b1"]) @ p["ffn.w2"] + p["ffn.b2"]
        if "adapter.down.w" in p:
            z = cond.residual_adapter(z, p["adapter.down.w"], p["adapter.down.b"],
                                      p["adapter.up.w"], p["adapter.up.b"])
        x = x + z
        if config.uses_fl_adapter and l + 1 == config.fl_adapter_layer:
            x, lid_logits = cond.fl_adapter(
                x, params["fl.down.w"], params["fl.down.b"],
                params["fl.up.w"], params["fl.up.b"])
    return EncoderOutput(hidden=x, mask=mask, lid_logits=lid_logits)


def ctc_head(params, hidden):
    """Linear map to V+1 classes followed by log-softmax; blank is last."""
    return log_softmax(hidden @ params["ctc.w"] + params["ctc.b"], axis=-1)


@dataclass
class ForwardOutput:
    log_probs: Tensor          # B x S x (V+1), full sequence incl. prompts
    lid_logits: Tensor | None  # B x S x (K+1) or None
    sub_lengths: np.ndarray    # B, real subsampled frames per utterance
    n_prefix: int = 0          # prompt rows before the acoustic block
    n_suffix: int = 0

    def acoustic_log_probs(self, i: int):
        """CTC-loss input for utterance i: prompt rows sliced away."""
        lo = self.n_prefix
        return self.log_probs[i, lo: lo + int(self.sub_lengths[i])]

    def acoustic_lid_logits(self, i: int):
        lo = self.n_prefix
        return self.lid_logits[i, lo: lo + int(self.sub_lengths[i])]


def model_forward(params, config: ModelConfig, features, lengths,
                  langs=None) -> ForwardOutput:
    """Full forward pass over a padded batch of raw feature matrices.

    `langs` is required exactly when the mode consumes a language id.
    """
    if config.needs_lang_id and langs is None:
        raise ValueError(f"mode {config.mode!r} requires language ids")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[None]
        lengths = np.atleast_1d(lengths)
        if langs is not None:
            langs = np.atleast_1d(langs)
    lengths = np.asarray(lengths)
    b, t, _ = features.shape
    frame_mask = np.arange(t)[None, :] < lengths[:, None]
    x = Tensor(np.where(frame_mask[:, :, None], features, 0.0))

    if config.mode == "concat-onehot":
        x = cond.condition_concat(x, langs, num_langs=config.num_langs)
    elif config.mode == "concat-emb":
        x = cond.condition_concat(x, langs, table=params["cond.emb"])

    x, sub_lengths, mask = conv_frontend(params, config, x, lengths)

    if config.mode == "add":
        x = cond.condition_add(x, langs, params["cond.emb"])
    elif config.mode == "attention":
        x = cond.condition_attention(x, langs, params["cond.emb"],
                                     params["cond.score.w"], params["cond.score.v"])

    n_pre = n_suf = 0
    pos = config.prompt_position
    if pos is not None:
        x, n_pre, n_suf = cond.condition_prompt(
            x, langs, params["prompt.emb"], config.num_prompt_tokens, pos)
        mask = np.concatenate([
            np.ones((b, n_pre), dtype=bool), mask,
            np.ones((b, n_suf), dtype=bool)], axis=1)

    x = x + Tensor(positional_encoding(x.shape[1], config.d_model))

    prefix_all = None
    if config.uses_prefix_tuning:
        prefix_all = cond.prefix_kv_all(
            np.atleast_1d(langs), params["prefix.emb"], params["prefix.proj.w"],
            params["prefix.proj.b"], config.num_layers, config.num_prompt_tokens)

    enc = encoder_forward(params, config, x, mask, prefix_all=prefix_all)
    normed = layer_norm(enc.hidden, params["final_ln.g"], params["final_ln.b"], LN_EPS)
    log_probs = ctc_head(params, normed)
    return ForwardOutput(log_probs=log_probs, lid_logits=enc.lid_logits,
                         sub_lengths=sub_lengths, n_prefix=n_pre, n_suffix=n_suf)
