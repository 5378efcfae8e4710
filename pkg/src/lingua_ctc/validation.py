"""Input validation for the estimator facade."""

from __future__ import annotations

import numpy as np


def check_feature_matrix(x, feat_dim=None, index=None) -> np.ndarray:
    """Validate one utterance's features: 2-D, finite, at least one frame."""
    where = "X" if index is None else f"X[{index}]"
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{where}: expected a 2-D (frames x features) array, "
                         f"got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{where}: empty feature matrix {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{where}: features must be finite")
    if feat_dim is not None and arr.shape[1] != feat_dim:
        raise ValueError(f"{where}: has {arr.shape[1]} feature dims, "
                         f"expected {feat_dim}")
    return arr


def check_feature_list(X, feat_dim=None) -> list:
    """Validate a sequence of per-utterance feature matrices."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    mats = [check_feature_matrix(x, index=i) for i, x in enumerate(X)]
    if not mats:
        raise ValueError("X is empty")
    dim = feat_dim if feat_dim is not None else mats[0].shape[1]
    for i, m in enumerate(mats):
        if m.shape[1] != dim:
            raise ValueError(f"X[{i}] has {m.shape[1]} feature dims, "
                             f"expected {dim}")
    return mats


def check_transcripts(y, n: int) -> list:
    if y is None:
        raise ValueError("y (transcripts) is required")
    texts = [str(t) for t in y]
    if len(texts) != n:
        raise ValueError(f"y has {len(texts)} transcripts for {n} utterances")
    for i, t in enumerate(texts):
        if not t.strip():
            raise ValueError(f"y[{i}] is empty")
    return texts


def check_langs(langs, n: int, num_langs=None) -> np.ndarray:
    """Language ids per utterance; defaults to all zeros when omitted."""
    if langs is None:
        return np.zeros(n, dtype=np.int64)
    out = np.asarray(langs, dtype=np.int64)
    if out.shape != (n,):
        raise ValueError(f"langs has shape {out.shape}, expected ({n},)")
    if (out < 0).any():
        raise ValueError("language ids must be >= 0")
    if num_langs is not None and (out >= num_langs).any():
        raise ValueError(f"language ids must be < {num_langs}")
    return out


def check_is_fitted(estimator, attr: str) -> None:
    if not hasattr(estimator, attr):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
