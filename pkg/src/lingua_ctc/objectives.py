"""Losses, decoding, and scoring: CTC, frame-level LID, WER.

CTC is a log-space forward recursion over the blank-extended label sequence,
differentiated by the tape rather than a hand-derived backward lattice. The
batched variant packs several utterances into one recursion for training
speed; it is interchangeable with the per-utterance form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, as_tensor, concat, index_select, log_softmax,
                     logaddexp, masked_fill, mean, reshape)

NEG_INF = -np.inf


class InfeasibleAlignmentError(ValueError):
    """Label sequence cannot be aligned into the available frames."""


def _extended(labels, blank):
    ext = [blank]
    for l in labels:
        ext += [int(l), blank]
    return ext


def _required_frames(labels) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(log_probs, labels, blank: int) -> Tensor:
    """Negative log-likelihood of `labels` under T x (V+1) log-probs.

    Sums over all monotonic alignments via the standard forward recursion on
    the 2L+1 extended sequence; gradients flow through the recursion.
    """
    log_probs = as_tensor(log_probs)
    t_len = log_probs.shape[0]
    labels = [int(l) for l in labels]
    need = _required_frames(labels)
    if t_len < need:
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels need at least {need} frames, got {t_len}")

    ext = _extended(labels, blank)
    s_len = len(ext)
    emit = index_select(log_probs, np.array(ext), axis=1)  # T x S

    skip_ok = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        skip_ok[s] = ext[s] != blank and ext[s] != ext[s - 2]

    start = np.full(s_len, NEG_INF)
    start[0] = 0.0
    if s_len > 1:
        start[1] = 0.0
    alpha = emit[0] + Tensor(start)
    pad1 = Tensor(np.array([NEG_INF]))
    pad2 = Tensor(np.array([NEG_INF, NEG_INF]))
    for t in range(1, t_len):
        stay_or_adv = logaddexp(alpha, concat([pad1, alpha[:-1]]))
        skip = masked_fill(concat([pad2, alpha[:-2]]) if s_len > 2 else alpha,
                           ~skip_ok, NEG_INF)
        alpha = logaddexp(stay_or_adv, skip) + emit[t]

    if s_len == 1:
        return -alpha[0]
    return -logaddexp(alpha[s_len - 1], alpha[s_len - 2])


def ctc_loss_batch(log_probs, label_seqs, lengths, blank: int) -> Tensor:
    """Per-utterance CTC losses for a padded batch, as one recursion.

    `log_probs` is B x T_max x (V+1); `lengths` gives real frames per row.
    Rows are processed sorted by length so finished utterances drop out of
    the update. Returns a length-B tensor of losses (original order).
    """
    log_probs = as_tensor(log_probs)
    b, t_max, width = log_probs.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    label_seqs = [[int(l) for l in seq] for seq in label_seqs]
    for seq, t_len in zip(label_seqs, lengths):
        need = _required_frames(seq)
        if t_len < need:
            raise InfeasibleAlignmentError(
                f"{len(seq)} labels need at least {need} frames, got {int(t_len)}")

    order = np.argsort(-lengths, kind="stable")
    inv_order = np.argsort(order, kind="stable")
    lengths = lengths[order]
    label_seqs = [label_seqs[i] for i in order]
    exts = [_extended(seq, blank) for seq in label_seqs]
    s_lens = np.array([len(e) for e in exts])
    s_max = int(s_lens.max())

    ext_ids = np.full((b, s_max), blank, dtype=np.int64)
    skip_ok = np.zeros((b, s_max), dtype=bool)
    start = np.full((b, s_max), NEG_INF)
    for i, ext in enumerate(exts):
        ext_ids[i, : len(ext)] = ext
        for s in range(2, len(ext)):
            skip_ok[i, s] = ext[s] != blank and ext[s] != ext[s - 2]
        start[i, 0] = 0.0
        if len(ext) > 1:
            start[i, 1] = 0.0

    # flat gather indices: emission of state s at frame t for row i lives at
    # ((i * T + t) * width + ext_ids[i, s]) in the flattened log-probs
    flat = reshape(log_probs, (b * t_max * width,))
    row_base = (order * t_max)[:, None] * width

    def emissions(t):
        ids = row_base + t * width + ext_ids
        return reshape(index_select(flat, ids.reshape(-1)), (b, s_max))

    alpha = emissions(0) + Tensor(start)
    pad1 = Tensor(np.full((b, 1), NEG_INF))
    pad2 = Tensor(np.full((b, 2), NEG_INF))
    for t in range(1, int(lengths.max())):
        active = int(np.searchsorted(-lengths, -t, side="left"))
        stay_or_adv = logaddexp(alpha, concat([pad1, alpha[:, :-1]], axis=1))
        skip = masked_fill(concat([pad2, alpha[:, :-2]], axis=1) if s_max > 2
                           else alpha, ~skip_ok, NEG_INF)
        updated = logaddexp(stay_or_adv, skip) + emissions(t)
        if active < b:
            alpha = concat([updated[:active], alpha[active:]], axis=0)
        else:
            alpha = updated

    alpha_flat = reshape(alpha, (b * s_max,))
    rows = np.arange(b) * s_max
    last = index_select(alpha_flat, rows + s_lens - 1)
    prev = index_select(alpha_flat, rows + np.maximum(s_lens - 2, 0))
    prev = masked_fill(prev, s_lens < 2, NEG_INF)
    losses = -logaddexp(last, prev)
    return index_select(losses, inv_order)


def expand_lid_labels(lang: int, mode: str, num_frames: int, text_label_len: int):
    """LID target sequence: CE repeats per frame, CTC per text label."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if mode == "ce":
        return [int(lang)] * num_frames
    if mode == "ctc":
        if text_label_len < 1:
            raise ValueError("ctc LID expansion needs at least one text label")
        return [int(lang)] * text_label_len
    raise ValueError(f"unknown LID expansion mode {mode!r}")


def frame_ce_loss(lid_logits, targets, mask=None) -> Tensor:
    """Mean cross-entropy of per-frame LID logits against integer targets.

    `mask` (optional boolean per frame) excludes padded frames.
    """
    lid_logits = as_tensor(lid_logits)
    t_len, width = lid_logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (t_len,):
        raise ValueError(f"{targets.shape[0]} targets for {t_len} frames")
    keep = np.arange(t_len) if mask is None else np.flatnonzero(np.asarray(mask, bool))
    lsm = log_softmax(lid_logits, axis=-1)
    picked = index_select(reshape(lsm, (t_len * width,)), keep * width + targets[keep])
    return -mean(picked)


@dataclass
class LossBundle:
    total: Tensor
    ctc: Tensor
    lid: Tensor | None = None
    alpha: float = 0.0


def combined_loss(ctc, lid=None, alpha: float = 0.0) -> LossBundle:
    """Weighted sum of the two training losses: total = ctc + alpha * lid."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    ctc = as_tensor(ctc)
    if lid is None:
        return LossBundle(total=ctc, ctc=ctc, lid=None, alpha=alpha)
    lid = as_tensor(lid)
    return LossBundle(total=ctc + lid * alpha, ctc=ctc, lid=lid, alpha=alpha)


def greedy_decode(log_probs, blank: int):
    """Best path: per-frame argmax, collapse adjacent repeats, drop blanks."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    path = data.argmax(axis=-1)
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def word_error_rate(ref: str, hyp: str):
    """Word-level edit counts (substitutions, deletions, insertions, wer%)."""
    ref_words = ref.split()
    hyp_words = hyp.split()
    if not ref_words:
        raise ValueError("empty reference transcript")
    n, m = len(ref_words), len(hyp_words)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref_words[i - 1] != hyp_words[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (
                ref_words[i - 1] != hyp_words[j - 1]):
            subs += ref_words[i - 1] != hyp_words[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    wer = 100.0 * (subs + dels + ins) / n
    return int(subs), int(dels), int(ins), wer


def macro_average(wers) -> float:
    """Unweighted mean over languages."""
    wers = list(wers)
    if not wers:
        raise ValueError("macro average needs at least one language")
    return float(sum(wers)) / len(wers)


# -- corpus-level scoring -------------------------------------------------------


@dataclass
class LangScore:
    lang: int
    subs: int = 0
    dels: int = 0
    ins: int = 0
    ref_words: int = 0

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ValueError(f"no reference words for language {self.lang}")
        return 100.0 * (self.subs + self.dels + self.ins) / self.ref_words


def accumulate_scores(pairs_by_lang) -> dict:
    """Aggregate (ref, hyp) pairs into per-language edit counts."""
    scores: dict[int, LangScore] = {}
    for lang, ref, hyp in pairs_by_lang:
        sc = scores.setdefault(lang, LangScore(lang=lang))
        s, d, i, _ = word_error_rate(ref, hyp)
        sc.subs += s
        sc.dels += d
        sc.ins += i
        sc.ref_words += len(ref.split())
    return scores


def report_csv(scores: dict) -> str:
    """CSV rows `lang,wer,subs,dels,ins,num_ref_words` plus an avg row."""
    lines = ["lang,wer,subs,dels,ins,num_ref_words"]
    wers = []
    for lang in sorted(scores):
        sc = scores[lang]
        wers.append(sc.wer)
        lines.append(f"{lang},{sc.wer:.2f},{sc.subs},{sc.dels},{sc.ins},{sc.ref_words}")
    lines.append(f"avg,{macro_average(wers):.2f},,,,")
    return "\n".join(lines) + "\n"


def report_table(scores: dict, title: str = "model") -> str:
    """Aligned human-readable WER table, one column per language plus Avg."""
    langs = sorted(scores)
    header = ["model"] + [f"lang{l}" for l in langs] + ["Avg"]
    wers = [scores[l].wer for l in langs]
    row = [title] + [f"{w:.2f}" for w in wers] + [f"{macro_average(wers):.2f}"]
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return fmt.format(*header) + "\n" + fmt.format(*row) + "\n"
