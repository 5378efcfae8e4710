"""Synthetic multilingual corpus generation, dataset IO, and batching.

Languages are stand-ins: each has an alphabet of short "words", and each
word has a prototype feature vector. An utterance is a word sequence whose
frames are word prototypes plus Gaussian noise, optionally followed by a
stretch of silence (zero prototype). Confusable language pairs share surface
words whose prototype assignments are crossed between the pair, so the same
acoustics read differently depending on the language.
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEAT_MAGIC = b"LCF1"

MIN_WORDS, MAX_WORDS = 3, 12


class DatasetError(ValueError):
    pass


@dataclass
class Utterance:
    utt_id: str
    lang: int
    features: np.ndarray  # T x F, float32
    transcript: str


@dataclass
class LangSpec:
    lang: int
    name: str
    words: list[str]
    prototypes: np.ndarray  # len(words) x F
    frames_per_word: tuple[int, int]
    noise_scale: float
    silence_frames: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.words:
            raise DatasetError(f"language {self.name!r} has an empty alphabet")
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.shape[0] != len(self.words):
            raise DatasetError(
                f"language {self.name!r}: {len(self.words)} words but "
                f"{self.prototypes.shape[0]} prototypes")


@dataclass
class Batch:
    features: np.ndarray       # B x T_max x F, float64
    frame_lengths: np.ndarray  # B
    labels: list[list[int]]
    label_lengths: np.ndarray  # B
    langs: np.ndarray          # B
    mask: np.ndarray           # B x T_max, bool; true on real frames

    @property
    def size(self) -> int:
        return self.features.shape[0]


def generate_corpus(specs, counts, seed: int) -> list[Utterance]:
    """Sample `counts[i]` utterances from `specs[i]`, deterministically.

    Every utterance gets its own RNG stream keyed by (seed, lang, index), so
    generation order (or parallelism) cannot change the output.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise DatasetError("need at least 2 language specs")
    if len(counts) != len(specs):
        raise DatasetError(f"{len(specs)} specs but {len(counts)} counts")
    if any(c < 1 for c in counts):
        raise DatasetError("utterance counts must be >= 1")

    utts = []
    for spec, count in zip(specs, counts):
        n_words = len(spec.words)
        f_dim = spec.prototypes.shape[1]
        lo, hi = spec.frames_per_word
        slo, shi = spec.silence_frames
        for i in range(count):
            rng = np.random.default_rng([seed, spec.lang, i])
            n = int(rng.integers(MIN_WORDS, MAX_WORDS + 1))
            word_ids = rng.integers(0, n_words, size=n)
            fpw = rng.integers(lo, hi + 1, size=n)
            sil = int(rng.integers(slo, shi + 1))
            t_total = int(fpw.sum()) + sil
            clean = np.zeros((t_total, f_dim))
            pos = 0
            for w, k in zip(word_ids, fpw):
                clean[pos:pos + k] = spec.prototypes[w]
                pos += k
            feats = clean + rng.standard_normal((t_total, f_dim)) * spec.noise_scale
            utts.append(Utterance(
                utt_id=f"{spec.name}-{i:05d}",
                lang=spec.lang,
                features=feats.astype(np.float32),
                transcript=" ".join(spec.words[w] for w in word_ids),
            ))
    return utts


# -- dataset files -------------------------------------------------------------
#
# <stem>.tsv : one row per utterance, `utt_id<TAB>lang<TAB>transcript`
# <stem>.feat: magic "LCF1", u32 count; per utterance: u32 byte length +
#              UTF-8 utt_id, u32 T, u32 F, then T*F float32 little-endian
#              values in row-major order.


def write_dataset(utts, stem) -> None:
    stem = Path(stem)
    with open(stem.with_suffix(".tsv"), "w", encoding="utf-8", newline="\n") as th:
        for u in utts:
            if "\t" in u.utt_id or "\t" in u.transcript:
                raise DatasetError(f"{u.utt_id}: tab characters not allowed")
            th.write(f"{u.utt_id}\t{u.lang}\t{u.transcript}\n")
    with open(stem.with_suffix(".feat"), "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<I", len(utts)))
        for u in utts:
            feats = np.ascontiguousarray(u.features, dtype="<f4")
            if feats.ndim != 2 or feats.shape[0] < 1:
                raise DatasetError(f"{u.utt_id}: features must be a T x F matrix with T >= 1")
            if not np.isfinite(feats).all():
                raise DatasetError(f"{u.utt_id}: non-finite feature values")
            name = u.utt_id.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<II", feats.shape[0], feats.shape[1]))
            fh.write(feats.tobytes())


def read_dataset(stem) -> list[Utterance]:
    stem = Path(stem)
    tsv_path = stem.with_suffix(".tsv")
    feat_path = stem.with_suffix(".feat")
    rows = []
    with open(tsv_path, encoding="utf-8") as th:
        for ln, line in enumerate(th, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{tsv_path}:{ln}: expected 3 tab-separated fields")
            rows.append((parts[0], int(parts[1]), parts[2]))

    blob = feat_path.read_bytes()
    if blob[:4] != FEAT_MAGIC:
        raise DatasetError(f"{feat_path}: bad magic {blob[:4]!r}, expected {FEAT_MAGIC!r}")
    pos = 4
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if count != len(rows):
        raise DatasetError(
            f"{feat_path} holds {count} utterances but {tsv_path} lists {len(rows)}")

    utts = []
    for utt_id, lang, transcript in rows:
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            t_len, f_dim = struct.unpack_from("<II", blob, pos)
            pos += 8
            n_bytes = t_len * f_dim * 4
            if pos + n_bytes > len(blob):
                raise DatasetError(
                    f"{feat_path}: truncated features for utterance {name!r}")
            feats = np.frombuffer(blob, dtype="<f4", count=t_len * f_dim,
                                  offset=pos).reshape(t_len, f_dim).copy()
            pos += n_bytes
        except struct.error as err:
            raise DatasetError(
                f"{feat_path}: truncated record for utterance {utt_id!r}") from err
        if name != utt_id:
            raise DatasetError(
                f"feature record {name!r} does not match transcript row {utt_id!r}")
        utts.append(Utterance(utt_id, lang, feats, transcript))
    if pos != len(blob):
        raise DatasetError(f"{feat_path}: {len(blob) - pos} trailing bytes")
    return utts


def make_batches(utts, max_frames_per_batch: int, vocab, seed: int) -> list[Batch]:
    """Shuffle by seed, then greedily pack so B x T_max <= the frame budget."""
    from .bpe import encode

    utts = list(utts)
    order = np.random.default_rng(seed).permutation(len(utts))
    groups, current, cur_tmax = [], [], 0
    for idx in order:
        u = utts[idx]
        t = u.features.shape[0]
        if t > max_frames_per_batch:
            raise DatasetError(
                f"{u.utt_id}: {t} frames exceeds batch budget {max_frames_per_batch}")
        new_tmax = max(cur_tmax, t)
        if current and (len(current) + 1) * new_tmax > max_frames_per_batch:
            groups.append(current)
            current, cur_tmax = [u], t
        else:
            current.append(u)
            cur_tmax = new_tmax
    if current:
        groups.append(current)

    batches = []
    for group in groups:
        b = len(group)
        t_max = max(u.features.shape[0] for u in group)
        f_dim = group[0].features.shape[1]
        feats = np.zeros((b, t_max, f_dim))
        mask = np.zeros((b, t_max), dtype=bool)
        lengths = np.zeros(b, dtype=np.int64)
        labels = []
        for i, u in enumerate(group):
            t = u.features.shape[0]
            feats[i, :t] = u.features
            mask[i, :t] = True
            lengths[i] = t
            labels.append(encode(u.transcript, vocab))
        batches.append(Batch(
            features=feats,
            frame_lengths=lengths,
            labels=labels,
            label_lengths=np.array([len(l) for l in labels], dtype=np.int64),
            langs=np.array([u.lang for u in group], dtype=np.int64),
            mask=mask,
        ))
    return batches


# -- corpus descriptions -------------------------------------------------------

_CONSONANTS = list("bdgkmnprstvz")
_VOWELS = list("aeiou")


def _fresh_word(rng, taken: set) -> str:
    while True:
        n_syll = int(rng.integers(2, 4))
        w = "".join(str(rng.choice(_CONSONANTS)) + str(rng.choice(_VOWELS))
                    for _ in range(n_syll))
        if w not in taken:
            taken.add(w)
            return w


def _pair_of_ints(raw: str, what: str) -> tuple[int, int]:
    parts = raw.split()
    if len(parts) != 2:
        raise DatasetError(f"{what} must be two integers, got {raw!r}")
    lo, hi = int(parts[0]), int(parts[1])
    if lo < 0 or hi < lo:
        raise DatasetError(f"{what} range {raw!r} is not a valid lo hi pair")
    return lo, hi


def load_corpus_spec(path):
    """Parse a corpus description file into (specs, split_counts).

    Format: a `[corpus]` section with global knobs, then one `[lang.<name>]`
    section per language in order. A language may declare
    `confusable_with = <earlier lang>` and `shared_words = m`: its first m
    surface words are copied from the partner, with prototype assignments
    rotated by one so identical acoustics demand different transcriptions.
    Returns split_counts as {"train": [...], "dev": [...], "test": [...]}.
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise DatasetError(f"cannot read corpus spec {path}")
    if "corpus" not in parser:
        raise DatasetError(f"{path}: missing [corpus] section")
    corpus = parser["corpus"]
    f_dim = corpus.getint("feat_dim", 80)
    noise = corpus.getfloat("noise_scale", 0.3)
    offset_scale = corpus.getfloat("offset_scale", 0.0)
    fpw = _pair_of_ints(corpus.get("frames_per_word", "24 32"), "frames_per_word")
    silence = _pair_of_ints(corpus.get("silence_frames", "4 10"), "silence_frames")
    proto_seed = corpus.getint("proto_seed", 7)
    if fpw[0] < 1:
        raise DatasetError("frames_per_word lower bound must be >= 1")

    rng = np.random.default_rng([proto_seed])
    taken: set = set()
    specs: list[LangSpec] = []
    by_name: dict[str, tuple[LangSpec, np.ndarray]] = {}
    split_counts = {"train": [], "dev": [], "test": []}

    lang_sections = [s for s in parser.sections() if s.startswith("lang.")]
    if len(lang_sections) < 2:
        raise DatasetError(f"{path}: need at least 2 [lang.*] sections")

    for lang_id, section in enumerate(lang_sections):
        cfg = parser[section]
        name = section[len("lang."):]
        num_words = cfg.getint("words")
        if num_words is None or num_words < 1:
            raise DatasetError(f"{path}: [{section}] needs words >= 1")
        partner_name = cfg.get("confusable_with", None)
        words: list[str] = []
        base_rows: list[np.ndarray] = []
        if partner_name is not None:
            if partner_name not in by_name:
                raise DatasetError(
                    f"{path}: [{section}] confusable_with {partner_name!r} "
                    "must name an earlier language")
            partner, partner_base = by_name[partner_name]
            m = cfg.getint("shared_words", 0)
            if not 2 <= m <= min(num_words, len(partner.words)):
                raise DatasetError(
                    f"{path}: [{section}] shared_words must be in [2, {num_words}]")
            if 2 * m < num_words:
                raise DatasetError(
                    f"{path}: [{section}] confusable pair must share >= 50% of "
                    f"surface words ({m} of {num_words})")
            words.extend(partner.words[:m])
            # crossed assignment: shared word i borrows the partner's
            # prototype of shared word i+1 (cyclic)
            base_rows.extend(partner_base[(i + 1) % m] for i in range(m))
        while len(words) < num_words:
            words.append(_fresh_word(rng, taken))
            base_rows.append(rng.standard_normal(f_dim))
        base = np.stack(base_rows)
        offset = rng.standard_normal(f_dim) * offset_scale
        spec = LangSpec(
            lang=lang_id, name=name, words=words, prototypes=base + offset,
            frames_per_word=fpw, noise_scale=noise, silence_frames=silence)
        specs.append(spec)
        by_name[name] = (spec, base)
        for split in ("train", "dev", "test"):
            count = cfg.getint(split, 0)
            if count < 1:
                raise DatasetError(f"{path}: [{section}] needs {split} >= 1")
            split_counts[split].append(count)
    return specs, split_counts
