"""PCA from aggregated Gram contributions (n_i, s_i, G_i)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedlens.errors import InsufficientSamples, InvalidSpec


@dataclass(frozen=True)
class PCAResult:
    features: tuple[str, ...]
    components: np.ndarray  # d x k, columns are principal axes
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    rank_deficient: bool = False

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "mean": self.mean.tolist(),
            "rank_deficient": self.rank_deficient,
        }


def gram_contribution(x: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    g = x.T @ x
    return x.shape[0], x.sum(axis=0), 0.5 * (g + g.T)


def sign_normalize(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    v = np.array(vectors, dtype=np.float64)
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def pca_from_gram(n: int, s, g, k: int, features=None) -> PCAResult:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = s.shape[0]
    if not 1 <= k <= d:
        raise InvalidSpec(f"k must lie in [1, {d}], got {k}")
    if n < 2:
        raise InsufficientSamples(f"PCA needs at least 2 samples, got {n}")
    mu = s / n
    scatter = g - np.outer(s, mu)
    cov = 0.5 * (scatter + scatter.T) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = sign_normalize(evecs[:, order])
    trace = evals.sum()
    ratios = evals / trace if trace > 0 else np.zeros_like(evals)
    tol = max(evals[0], 0.0) * d * np.finfo(np.float64).eps * 10
    rank = int(np.count_nonzero(evals > tol))
    names = tuple(features) if features is not None else tuple(f"x{i}" for i in range(d))
    return PCAResult(names, evecs[:, :k], ratios[:k], evals[:k], mu, rank_deficient=k > rank)
