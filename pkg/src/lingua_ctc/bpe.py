"""Byte-level byte pair encoding with shared units across languages.

Texts are treated as raw UTF-8 bytes, so every string is encodable and
``decode(encode(s)) == s`` holds by construction. Merges are learned within
whitespace-split words only and never cross a word boundary; whitespace
bytes always remain single-byte tokens.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

_SEGMENT_RE = re.compile(r"\s+|\S+")


class VocabularyError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Merge list plus the token table it induces.

    Ids 0..255 are the single bytes; merged token 256+i is the concatenation
    of the byte sequences of ``merges[i]``.
    """

    merges: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.tokens: list[bytes] = [bytes([b]) for b in range(256)]
        for left, right in self.merges:
            if left >= len(self.tokens) or right >= len(self.tokens):
                raise VocabularyError(f"merge ({left}, {right}) references unknown token")
            self.tokens.append(self.tokens[left] + self.tokens[right])

    @property
    def size(self) -> int:
        return len(self.tokens)

    def save(self, path) -> None:
        lines = [f"bpe-v1 {self.size}"]
        lines += [f"{l} {r}" for l, r in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("bpe-v1 "):
            raise VocabularyError(f"{path}: missing 'bpe-v1 <size>' header")
        declared = int(lines[0].split()[1])
        merges = []
        for ln in lines[1:]:
            left, right = ln.split()
            merges.append((int(left), int(right)))
        vocab = cls(merges)
        if vocab.size != declared:
            raise VocabularyError(
                f"{path}: header declares {declared} tokens but merges give {vocab.size}")
        return vocab


def _count_pairs(words: dict[tuple, int]) -> Counter:
    """Non-overlapping left-to-right pair counts ('aaa' gives one (a,a))."""
    counts: Counter = Counter()
    for word, freq in words.items():
        last_end: dict[tuple, int] = {}
        for i in range(len(word) - 1):
            pair = (word[i], word[i + 1])
            if last_end.get(pair) == i:
                continue
            counts[pair] += freq
            last_end[pair] = i + 1
    return counts


def _merge_word(word: tuple, pair: tuple[int, int], new_id: int) -> tuple:
    """Replace non-overlapping left-to-right occurrences of `pair`."""
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def train_bpe(corpus, target_size: int) -> Vocabulary:
    """Greedy highest-frequency pair merging up to `target_size` tokens.

    Stops early when no pair occurs at least twice. Ties break on the
    smallest (left-id, right-id) pair, which makes training deterministic.
    """
    if target_size < 256:
        raise VocabularyError(f"target_size must be >= 256, got {target_size}")
    corpus = list(corpus)
    if not corpus:
        raise VocabularyError("corpus is empty")

    words: Counter = Counter()
    for text in corpus:
        for w in text.split():
            words[tuple(w.encode("utf-8"))] += 1

    merges: list[tuple[int, int]] = []
    vocab_words = dict(words)
    while 256 + len(merges) < target_size:
        counts = _count_pairs(vocab_words)
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        pair = min(p for p, c in counts.items() if c == best_count)
        new_id = 256 + len(merges)
        merges.append(pair)
        vocab_words = {
            _merge_word(w, pair, new_id): f for w, f in vocab_words.items()
        }
    return Vocabulary(merges)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Apply the trained merges, in training order, to the byte sequence."""
    ids: list[int] = []
    for seg in _SEGMENT_RE.findall(text):
        seg_ids = list(seg.encode("utf-8"))
        if not seg[0].isspace():
            present = set(seg_ids)
            for rank, (left, right) in enumerate(vocab.merges):
                if left not in present or right not in present:
                    continue
                seg_ids = list(_merge_word(tuple(seg_ids), (left, right), 256 + rank))
                present = set(seg_ids)
        ids.extend(seg_ids)
    return ids


def decode(ids, vocab: Vocabulary) -> str:
    """Concatenate token byte sequences and decode as UTF-8."""
    parts = []
    for i in ids:
        if not 0 <= i < vocab.size:
            raise VocabularyError(f"token id {i} out of range for vocabulary of size {vocab.size}")
        parts.append(vocab.tokens[i])
    raw = b"".join(parts)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as err:
        raise VocabularyError(
            f"decoded bytes are not valid UTF-8 at byte offset {err.start}") from err


def decode_lossy(ids, vocab: Vocabulary) -> str:
    """Like decode, but malformed UTF-8 becomes U+FFFD instead of an error.

    Model output is not guaranteed to assemble into valid text, especially
    early in training; scoring such hypotheses (badly) beats crashing a run
    at its first dev evaluation. Out-of-range ids are still errors.
    """
    parts = []
    for i in ids:
        if not 0 <= i < vocab.size:
            raise VocabularyError(f"token id {i} out of range for vocabulary of size {vocab.size}")
        parts.append(vocab.tokens[i])
    return b"".join(parts).decode("utf-8", errors="replace")
