"""Evaluation metrics: MPJPE, FID, R-Precision, MM-Distance."""

from __future__ import annotations

import numpy as np


def mpjpe(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-joint position error in meters over frames and joints."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.linalg.norm(pred - target, axis=-1).mean())


def _cov_sqrt_trace(cov_a: np.ndarray, cov_b: np.ndarray, tol: float = 1e-8) -> float:
    """tr((Sa^1/2 Sb Sa^1/2)^1/2) by symmetric eigendecomposition.

    Eigenvalues in [-tol, 0] are clipped to zero; anything more negative is
    a genuine error in the inputs.
    """
    def psd_sqrt(mat: np.ndarray) -> np.ndarray:
        vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
        if vals.min() < -tol:
            raise ValueError(f"covariance has eigenvalue {vals.min():.3e} < -{tol}")
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T

    root_a = psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -tol:
        raise ValueError(f"product matrix has eigenvalue {vals.min():.3e} < -{tol}")
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def fid(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    dim = feats_a.shape[1]
    for name, feats in (("a", feats_a), ("b", feats_b)):
        if feats.ndim != 2 or feats.shape[1] != dim:
            raise ValueError("feature sets must be 2-D with matching width")
        if feats.shape[0] < dim + 1:
            raise ValueError(
                f"set {name} needs at least {dim + 1} samples for a rank-{dim} "
                f"covariance, got {feats.shape[0]}"
            )
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False)
    cov_b = np.cov(feats_b, rowvar=False)
    mean_term = float(((mu_a - mu_b) ** 2).sum())
    return mean_term + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * _cov_sqrt_trace(
        cov_a, cov_b
    )


def r_precision(
    motion_embs: np.ndarray,
    text_embs: np.ndarray,
    batch_size: int = 32,
    rng: np.random.Generator | None = None,
    rounds: int = 1,
) -> dict[str, float]:
    """Top-k retrieval accuracy over shuffled batches of aligned pairs.

    Each batch ranks its texts by Euclidean distance to each motion; the
    hit rate of the true text within the top k is averaged over batches.
    """
    motion_embs = np.asarray(motion_embs, dtype=float)
    text_embs = np.asarray(text_embs, dtype=float)
    if motion_embs.shape != text_embs.shape:
        raise ValueError("motion and text embeddings must align")
    n = motion_embs.shape[0]
    if n < batch_size:
        raise ValueError(f"need at least {batch_size} pairs, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)

    hits = np.zeros(3)
    n_rows = 0
    for _ in range(rounds):
        perm = rng.permutation(n)
        for s in range(0, n - batch_size + 1, batch_size):
            idx = perm[s : s + batch_size]
            m = motion_embs[idx]
            t = text_embs[idx]
            d = np.linalg.norm(m[:, None, :] - t[None, :, :], axis=-1)
            own = np.diagonal(d)
            rank = (d < own[:, None]).sum(axis=1)
            for k in range(3):
                hits[k] += (rank <= k).sum()
            n_rows += batch_size
    return {f"R@{k + 1}": float(hits[k] / n_rows) for k in range(3)}


def mm_distance(motion_embs: np.ndarray, text_embs: np.ndarray) -> float:
    """Mean Euclidean distance between paired embeddings."""
    motion_embs = np.asarray(motion_embs, dtype=float)
    text_embs = np.asarray(text_embs, dtype=float)
    if motion_embs.shape != text_embs.shape:
        raise ValueError("motion and text embeddings must align")
    return float(np.linalg.norm(motion_embs - text_embs, axis=-1).mean())
