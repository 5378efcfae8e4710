"""Finite-difference gradient sweep over every differentiable operation.

Each entry builds randomized small instances of one op and compares autodiff
against central differences via check_fn_grads. The two model-level entries
(prefix attention, combined loss) run the production forward pass with a
handful of tracked parameters and everything else held constant.
"""

import zlib

import numpy as np

from lingua_ctc import conditioning as C
from lingua_ctc import tensor as T
from lingua_ctc.data import Batch
from lingua_ctc.model import LN_EPS, ModelConfig, init_params, model_forward
from lingua_ctc.objectives import (combined_loss, ctc_loss, ctc_loss_batch,
                                   frame_ce_loss)
from lingua_ctc.tensor import Tensor
from lingua_ctc.trainer import batch_loss

from _oracles import check_fn_grads

RTOL = 1e-5
ATOL = 1e-7


def _scalarizer(rng):
    """Projection to a scalar that is FIXED across repeated evaluations.

    The finite-difference oracle calls the function under test many times;
    drawing a fresh projection per call would change the function between
    probes. One projection per output shape, cached on first use.
    """
    seed = int(rng.integers(0, 2 ** 31))
    cache: dict = {}

    def psum(out):
        shape = out.data.shape
        if shape not in cache:
            r = np.random.default_rng([seed, len(cache)])
            cache[shape] = r.normal(size=shape)
        return T.tensor_sum(out * Tensor(cache[shape]))

    return psum


def _dims(rng, lo=2, hi=5, n=2):
    return tuple(int(rng.integers(lo, hi + 1)) for _ in range(n))


# -- tensor ops ----------------------------------------------------------------


def op_add(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a, b: ps(a + b),
            [rng.normal(size=(m, n)), rng.normal(size=(n,))])


def op_sub(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a, b: ps(a - b),
            [rng.normal(size=(m, n)), rng.normal(size=(1, n))])


def op_mul(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a, b: ps(a * b),
            [rng.normal(size=(m, n)), rng.normal(size=(m, 1))])


def op_neg_getitem(rng):
    m, n = _dims(rng, 3, 6)
    ps = _scalarizer(rng)
    return (lambda x: ps(-x[1:, ::2]), [rng.normal(size=(m, n))])


def op_matmul(rng):
    m, k, n = _dims(rng, n=3)
    ps = _scalarizer(rng)
    return (lambda a, b: ps(a @ b),
            [rng.normal(size=(m, k)), rng.normal(size=(k, n))])


def op_matmul_batched(rng):
    b, m, k, n = _dims(rng, 2, 4, n=4)
    ps = _scalarizer(rng)
    return (lambda a, c: ps(a @ c),
            [rng.normal(size=(b, m, k)), rng.normal(size=(b, k, n))])


def op_relu(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    x = rng.normal(size=(m, n))
    x = np.where(np.abs(x) < 0.1, 0.3, x)  # stay clear of the kink
    return (lambda a: ps(T.relu(a)), [x])


def op_tanh(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a: ps(T.tanh(a)), [rng.normal(size=(m, n))])


def op_exp(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a: ps(T.exp(a)), [rng.normal(0, 0.7, size=(m, n))])


def op_log(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a: ps(T.log(a)), [0.2 + np.abs(rng.normal(size=(m, n)))])


def op_logaddexp(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda a, b: ps(T.logaddexp(a, b)),
            [rng.normal(size=(m, n)), rng.normal(size=(m, n))])


def op_sum(rng):
    m, n = _dims(rng)
    ax = int(rng.integers(0, 2))
    ps = _scalarizer(rng)
    return (lambda x: ps(T.tensor_sum(x, axis=ax)),
            [rng.normal(size=(m, n))])


def op_mean(rng):
    m, n = _dims(rng)
    ax = int(rng.integers(0, 2))
    ps = _scalarizer(rng)
    return (lambda x: ps(T.mean(x, axis=ax, keepdims=True)),
            [rng.normal(size=(m, n))])


def op_softmax(rng):
    m, n = _dims(rng, 3, 6)
    ps = _scalarizer(rng)
    return (lambda x: ps(T.softmax(x, axis=-1)), [rng.normal(size=(m, n))])


def op_log_softmax(rng):
    m, n = _dims(rng, 3, 6)
    ps = _scalarizer(rng)
    return (lambda x: ps(T.log_softmax(x, axis=-1)),
            [rng.normal(size=(m, n))])


def op_layer_norm(rng):
    m, n = _dims(rng, 3, 6)
    ps = _scalarizer(rng)
    return (lambda x, g, b: ps(T.layer_norm(x, g, b, LN_EPS)),
            [rng.normal(size=(m, n)), 1.0 + 0.2 * rng.normal(size=n),
             rng.normal(size=n)])


def op_reshape(rng):
    m, n = _dims(rng)
    ps = _scalarizer(rng)
    return (lambda x: ps(T.reshape(x, (n, m))), [rng.normal(size=(m, n))])


def op_swap_axes(rng):
    a, b, c = _dims(rng, n=3)
    ps = _scalarizer(rng)
    return (lambda x: ps(T.swap_axes(x, 0, 2)), [rng.normal(size=(a, b, c))])


def op_concat(rng):
    m, n = _dims(rng)
    ax = int(rng.integers(0, 2))
    ps = _scalarizer(rng)
    return (lambda a, b: ps(T.concat([a, b], axis=ax)),
            [rng.normal(size=(m, n)), rng.normal(size=(m, n))])


def op_index_select(rng):
    m, n = _dims(rng, 3, 6)
    idx = rng.integers(0, m, size=m + 2)
    ps = _scalarizer(rng)
    return (lambda x: ps(T.index_select(x, idx, axis=0)),
            [rng.normal(size=(m, n))])


def op_embedding(rng):
    v, d = _dims(rng, 3, 6)
    ids = rng.integers(0, v, size=(2, 4))
    ps = _scalarizer(rng)
    return (lambda tab: ps(T.embedding(tab, ids)), [rng.normal(size=(v, d))])


def op_masked_fill(rng):
    m, n = _dims(rng, 3, 6)
    mask = rng.random(size=(m, n)) < 0.4
    ps = _scalarizer(rng)
    return (lambda x: ps(T.masked_fill(x, mask, -3.0)),
            [rng.normal(size=(m, n))])


# -- conditioning ops ------------------------------------------------------


def op_condition_add(rng):
    b, t, f = 2, int(rng.integers(3, 6)), int(rng.integers(3, 6))
    langs = rng.integers(0, 3, size=b)
    ps = _scalarizer(rng)
    return (lambda fr, emb: ps(C.condition_add(fr, langs, emb)),
            [rng.normal(size=(b, t, f)), rng.normal(size=(3, f))])


def op_condition_attention(rng):
    b, t, f = 2, int(rng.integers(3, 6)), int(rng.integers(3, 6))
    langs = rng.integers(0, 3, size=b)
    ps = _scalarizer(rng)
    return (lambda fr, emb, w, v: ps(
                C.condition_attention(fr, langs, emb, w, v)),
            [rng.normal(size=(b, t, f)), rng.normal(size=(3, f)),
             rng.normal(size=(f, f)), rng.normal(size=f)])


def op_condition_concat_emb(rng):
    b, t, f = 2, int(rng.integers(3, 6)), int(rng.integers(3, 6))
    langs = rng.integers(0, 3, size=b)
    ps = _scalarizer(rng)
    return (lambda fr, tab: ps(C.condition_concat(fr, langs, table=tab)),
            [rng.normal(size=(b, t, f)), rng.normal(size=(3, 3))])


def op_condition_prompt(rng):
    b, t, d, p = 2, int(rng.integers(3, 6)), int(rng.integers(3, 6)), 2
    langs = rng.integers(0, 3, size=b)
    position = ("prefix", "suffix", "both")[int(rng.integers(0, 3))]
    ps = _scalarizer(rng)

    def fn(fr, emb):
        seq, _, _ = C.condition_prompt(fr, langs, emb, p, position)
        return ps(seq)

    return fn, [rng.normal(size=(b, t, d)), rng.normal(size=(3, p * d))]


def op_prefix_kv(rng):
    k, e, d, layers, p = 3, 4, 4, 2, 2
    langs = rng.integers(0, k, size=2)
    layer = int(rng.integers(0, layers))
    ps = _scalarizer(rng)

    def fn(emb, w, bias):
        keys, values = C.prefix_kv(langs, emb, w, bias, layers, p, layer)
        return ps(keys) + ps(values)

    return fn, [rng.normal(size=(k, e)),
                rng.normal(size=(e, layers * 2 * p * d)),
                rng.normal(size=layers * 2 * p * d)]


def op_fl_adapter(rng):
    b, t, d, k = 2, int(rng.integers(3, 5)), int(rng.integers(3, 6)), 2
    ps = _scalarizer(rng)

    def fn(h, dw, db, uw, ub):
        out, z = C.fl_adapter(h, dw, db, uw, ub)
        return ps(out) + ps(z)

    return fn, [rng.normal(size=(b, t, d)), rng.normal(size=(d, k + 1)),
                rng.normal(size=k + 1), rng.normal(size=(k + 1, d)),
                rng.normal(size=d)]


def op_residual_adapter(rng):
    b, t, d, a = 2, int(rng.integers(3, 5)), int(rng.integers(3, 6)), 2
    ps = _scalarizer(rng)

    def fn(h, dw, db, uw, ub):
        return ps(C.residual_adapter(h, dw, db, uw, ub))

    h = rng.normal(size=(b, t, d))
    dw = rng.normal(size=(d, a))
    db = 0.3 + np.abs(rng.normal(size=a))  # keep relu inputs off the kink
    return fn, [h, dw, db, rng.normal(size=(a, d)), rng.normal(size=d)]


# -- objectives --------------------------------------------------------------


def _labels_no_repeat(rng, v, length):
    out = [int(rng.integers(0, v))]
    while len(out) < length:
        nxt = int(rng.integers(0, v))
        if nxt != out[-1]:
            out.append(nxt)
    return out


def op_ctc_loss(rng):
    t, v = int(rng.integers(4, 7)), int(rng.integers(3, 5))
    labels = _labels_no_repeat(rng, v - 1, int(rng.integers(1, 3)))
    return (lambda lp: ctc_loss(lp, labels, blank=v - 1),
            [rng.normal(size=(t, v))])


def op_ctc_loss_batch(rng):
    v = int(rng.integers(3, 5))
    t_max = 6
    lengths = np.array([6, int(rng.integers(4, 7))])
    seqs = [_labels_no_repeat(rng, v - 1, 2), _labels_no_repeat(rng, v - 1, 1)]
    ps = _scalarizer(rng)

    def fn(lp):
        return ps(ctc_loss_batch(lp, seqs, lengths, blank=v - 1))

    return fn, [rng.normal(size=(2, t_max, v))]


def op_frame_ce(rng):
    n, k = int(rng.integers(4, 8)), int(rng.integers(2, 4))
    targets = rng.integers(0, k + 1, size=n)
    mask = rng.random(size=n) < 0.7
    mask[0] = True
    return (lambda lg: frame_ce_loss(lg, targets, mask),
            [rng.normal(size=(n, k + 1))])


# -- production paths ----------------------------------------------------------


def _live_params(config, rng):
    """init_params with every zero-initialized tensor given random values."""
    params = init_params(config, seed=int(rng.integers(0, 2 ** 31)))
    for p in params.values():
        if not p.data.any():
            p.data[:] = rng.normal(0.0, 0.3, p.data.shape)
    return params


def _tiny_batch(rng, feat_dim, num_langs):
    t_lens = [int(rng.integers(13, 19)) for _ in range(2)]
    feats = np.zeros((2, max(t_lens), feat_dim))
    for i, t in enumerate(t_lens):
        feats[i, :t] = rng.normal(size=(t, feat_dim))
    labels = [_labels_no_repeat(rng, 4, 2), _labels_no_repeat(rng, 4, 1)]
    return Batch(features=feats, frame_lengths=np.asarray(t_lens),
                 labels=labels, label_lengths=np.array([2, 1]),
                 langs=rng.integers(0, num_langs, size=2),
                 mask=np.arange(max(t_lens))[None, :] < np.asarray(t_lens)[:, None])


def op_prefix_attention(rng):
    """Gradient through prefix K/V rows injected into self-attention."""
    cfg = ModelConfig(feat_dim=4, vocab_size=5, num_langs=2, num_layers=1,
                      d_model=8, d_ffn=10, n_head=2, mode="prefix-tuning",
                      num_prompt_tokens=1, prefix_embed_dim=3)
    params = _live_params(cfg, rng)
    batch = _tiny_batch(rng, 4, 2)
    tracked = ("prefix.emb", "prefix.proj.w", "encoder.layer0.att.wk")
    ps = _scalarizer(rng)

    def fn(*args):
        view = {n: Tensor(p.data) for n, p in params.items()}
        view.update(zip(tracked, args))
        out = model_forward(view, cfg, batch.features, batch.frame_lengths,
                            langs=batch.langs)
        return ps(out.log_probs)

    return fn, [params[n].data.copy() for n in tracked]


def op_combined_loss(rng):
    """Total = ctc + alpha * lid through the full forward pass."""
    kind = ("fl-adapter-ce", "fl-adapter-ctc")[int(rng.integers(0, 2))]
    cfg = ModelConfig(feat_dim=4, vocab_size=5, num_langs=2, num_layers=2,
                      d_model=8, d_ffn=10, n_head=2, mode=kind, alpha=0.4)
    params = _live_params(cfg, rng)
    batch = _tiny_batch(rng, 4, 2)
    tracked = ("fl.down.w", "fl.up.w", "ctc.w")

    def fn(*args):
        view = {n: Tensor(p.data) for n, p in params.items()}
        view.update(zip(tracked, args))
        return batch_loss(view, cfg, batch).total

    return fn, [params[n].data.copy() for n in tracked]


def op_combined_loss_algebra(rng):
    alpha = float(rng.uniform(0.1, 1.0))
    return (lambda c, l: combined_loss(c, l, alpha).total,
            [np.abs(rng.normal(size=())), np.abs(rng.normal(size=()))])


OPS = {
    "add": op_add,
    "sub": op_sub,
    "mul": op_mul,
    "neg_getitem": op_neg_getitem,
    "matmul": op_matmul,
    "matmul_batched": op_matmul_batched,
    "relu": op_relu,
    "tanh": op_tanh,
    "exp": op_exp,
    "log": op_log,
    "logaddexp": op_logaddexp,
    "sum": op_sum,
    "mean": op_mean,
    "softmax": op_softmax,
    "log_softmax": op_log_softmax,
    "layer_norm": op_layer_norm,
    "reshape": op_reshape,
    "swap_axes": op_swap_axes,
    "concat": op_concat,
    "index_select": op_index_select,
    "embedding": op_embedding,
    "masked_fill": op_masked_fill,
    "condition_add": op_condition_add,
    "condition_attention": op_condition_attention,
    "condition_concat_emb": op_condition_concat_emb,
    "condition_prompt": op_condition_prompt,
    "prefix_kv": op_prefix_kv,
    "fl_adapter": op_fl_adapter,
    "residual_adapter": op_residual_adapter,
    "ctc_loss": op_ctc_loss,
    "ctc_loss_batch": op_ctc_loss_batch,
    "frame_ce": op_frame_ce,
    "prefix_attention": op_prefix_attention,
    "combined_loss": op_combined_loss,
    "combined_loss_algebra": op_combined_loss_algebra,
}


def run_op(name, n_configs=20, rtol=RTOL, atol=ATOL):
    """Check one op across n_configs random instances; returns worst |err|."""
    worst = 0.0
    for c in range(n_configs):
        rng = np.random.default_rng([zlib.crc32(name.encode()), c])
        fn, arrays = OPS[name](rng)
        worst = max(worst, check_fn_grads(fn, arrays, rtol=rtol, atol=atol))
    return worst


def run_all(n_configs=20):
    return {name: run_op(name, n_configs) for name in OPS}
