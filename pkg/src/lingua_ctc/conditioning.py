"""Language-conditioning mechanisms and the bottleneck residual adapter.

Every function here is pure given its parameter tensors and accepts either a
single sequence (T x d) or a batch (B x T x d); language ids are scalars or
length-B integer arrays. Parameter wiring (names, initialization, where each
hook attaches) lives in the model module.
"""

from __future__ import annotations

import numpy as np

from .tensor import (Tensor, as_tensor, concat, embedding, relu, reshape,
                     softmax, tanh)


def _lang_rows(table, lang, batch=None):
    """Rows of an embedding table for scalar or vector language ids.

    With `batch` given, a scalar id is repeated to match and a mismatched
    vector is rejected.
    """
    ids = np.atleast_1d(np.asarray(lang, dtype=np.int64))
    if batch is not None:
        if ids.shape[0] == 1 and batch > 1:
            ids = np.full(batch, ids[0], dtype=np.int64)
        if ids.shape[0] != batch:
            raise ValueError(f"{ids.shape[0]} language ids for batch of {batch}")
    return embedding(table, ids), ids.shape[0]


def condition_add(frames, lang, emb):
    """Shift every frame by the language embedding."""
    frames = as_tensor(frames)
    if frames.ndim == 2:
        rows, _ = _lang_rows(emb, lang, batch=1)
        return frames + reshape(rows, (1, -1))
    rows, b = _lang_rows(emb, lang, batch=frames.shape[0])
    return frames + reshape(rows, (b, 1, -1))


def condition_attention(frames, lang, emb, score_w, score_v):
    """Per-frame convex combination of the frame and the language embedding.

    Weights come from a two-way softmax over additive scores
    s = v . tanh(x @ w) computed for the frame and for the embedding.
    """
    frames = as_tensor(frames)
    squeeze = frames.ndim == 2
    if squeeze:
        frames = reshape(frames, (1,) + frames.shape)
    b, t, d = frames.shape
    rows, _ = _lang_rows(emb, lang, batch=b)              # B x d

    v_col = reshape(score_v, (-1, 1))
    s_f = tanh(frames @ score_w) @ v_col                  # B x T x 1
    s_l = tanh(rows @ score_w) @ v_col                    # B x 1
    s_l = reshape(s_l, (b, 1, 1)) + Tensor(np.zeros((1, t, 1)))
    weights = softmax(concat([s_f, s_l], axis=2), axis=2)  # B x T x 2
    w_f = weights[:, :, 0:1]
    w_l = weights[:, :, 1:2]
    out = w_f * frames + w_l * reshape(rows, (b, 1, d))
    return reshape(out, (t, d)) if squeeze else out


def condition_concat(features, lang, num_langs=None, table=None):
    """Append a language code to every feature frame, before the front-end.

    One-hot mode when `num_langs` is given, embedding mode when `table` is.
    """
    features = as_tensor(features)
    squeeze = features.ndim == 2
    if squeeze:
        features = reshape(features, (1,) + features.shape)
    b, t, _ = features.shape
    if (num_langs is None) == (table is None):
        raise ValueError("pass exactly one of num_langs (one-hot) or table (embedding)")
    if num_langs is not None:
        ids = np.atleast_1d(np.asarray(lang, dtype=np.int64))
        if ids.shape[0] == 1 and b > 1:
            ids = np.full(b, ids[0], dtype=np.int64)
        if (ids < 0).any() or (ids >= num_langs).any():
            raise ValueError(f"language id out of range for {num_langs} languages")
        code = np.zeros((b, 1, num_langs))
        code[np.arange(b), 0, ids] = 1.0
        suffix = Tensor(np.broadcast_to(code, (b, t, num_langs)).copy())
    else:
        rows, _ = _lang_rows(table, lang, batch=b)
        e = rows.shape[-1]
        suffix = reshape(rows, (b, 1, e)) + Tensor(np.zeros((1, t, e)))
    out = concat([features, suffix], axis=2)
    return reshape(out, out.shape[1:]) if squeeze else out


def prompt_tokens(lang, prompt_emb, num_prompt, batch=None):
    """Language rows of the prompt table, reshaped into prompt tokens."""
    rows, b = _lang_rows(prompt_emb, lang, batch=batch)
    d = rows.shape[-1] // num_prompt
    return reshape(rows, (b, num_prompt, d))


def condition_prompt(frames, lang, prompt_emb, num_prompt, position):
    """Concatenate prompt tokens onto the frame sequence.

    position is "prefix", "suffix", or "both" (the same tokens at each end).
    Returns (sequence, n_prefix, n_suffix); the caller extends its padding
    mask with true at prompt positions and slices prompt rows off before any
    loss.
    """
    if position not in ("prefix", "suffix", "both"):
        raise ValueError(f"unknown prompt position {position!r}")
    frames = as_tensor(frames)
    squeeze = frames.ndim == 2
    if squeeze:
        frames = reshape(frames, (1,) + frames.shape)
    tokens = prompt_tokens(lang, prompt_emb, num_prompt, batch=frames.shape[0])
    parts = []
    n_pre = n_suf = 0
    if position in ("prefix", "both"):
        parts.append(tokens)
        n_pre = num_prompt
    parts.append(frames)
    if position in ("suffix", "both"):
        parts.append(tokens)
        n_suf = num_prompt
    out = concat(parts, axis=1)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out, n_pre, n_suf


def prefix_kv_all(lang, prefix_emb, proj_w, proj_b, num_layers, num_prompt):
    """Key/value prompts for every layer: B x num_layers x 2 x P x d."""
    rows, b = _lang_rows(prefix_emb, lang)
    flat = rows @ proj_w + proj_b
    d = flat.shape[-1] // (num_layers * 2 * num_prompt)
    return reshape(flat, (b, num_layers, 2, num_prompt, d))


def prefix_kv(lang, prefix_emb, proj_w, proj_b, num_layers, num_prompt, layer):
    """Key and value prompt rows (each P x d) for one language and layer."""
    if not 0 <= layer < num_layers:
        raise ValueError(f"layer {layer} out of range for {num_layers} layers")
    kv = prefix_kv_all(lang, prefix_emb, proj_w, proj_b, num_layers, num_prompt)
    keys = kv[:, layer, 0]
    values = kv[:, layer, 1]
    if np.asarray(lang).ndim == 0:
        return reshape(keys, keys.shape[1:]), reshape(values, values.shape[1:])
    return keys, values


def fl_adapter(hidden, down_w, down_b, up_w, up_b):
    """Frame-level language branch: LID logits plus a residual bias.

    Returns (hidden', lid_logits); the up-projection starts at zero so the
    branch is invisible until the LID loss shapes it.
    """
    hidden = as_tensor(hidden)
    z = hidden @ down_w + down_b
    return hidden + (z @ up_w + up_b), z


def residual_adapter(x, down_w, down_b, up_w, up_b):
    """Bottleneck adapter x + up(relu(down(x))); up starts at zero."""
    x = as_tensor(x)
    return x + (relu(x @ down_w + down_b) @ up_w + up_b)
