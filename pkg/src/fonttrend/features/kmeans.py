"""k-means++ seeding and Lloyd iterations for the visual-word codebook."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Codebook:
    centroids: np.ndarray
    inertia: float
    seed: int = 0
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.centroids).tobytes()).hexdigest()

    def save(self, path: str | Path) -> None:
        """Text file: one ``#`` header line, then one centroid per row."""
        lines = [f"# codebook k={self.k} dim={self.dim} seed={self.seed} inertia={self.inertia!r}"]
        lines += [",".join(repr(float(v)) for v in row) for row in self.centroids]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("# codebook"):
            raise ValueError(f"{path}: missing codebook header")
        fields = dict(tok.split("=", 1) for tok in text[0][len("# codebook") :].split())
        rows = [[float(v) for v in line.split(",")] for line in text[1:] if line.strip()]
        centroids = np.array(rows, dtype=np.float64).reshape(int(fields["k"]), int(fields["dim"]))
        return cls(centroids, float(fields["inertia"]), int(fields["seed"]))


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = squared_distances(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all points coincide with chosen centres
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, squared_distances(x, x[idx][None])[:, 0])
    return np.array(centers)


def kmeans_fit(
    descriptors,
    k: int = 128,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> Codebook:
    """Cluster descriptor vectors into ``k`` visual words.

    Stops when no centroid moves more than ``tol`` (Euclidean) or after
    ``max_iter`` Lloyd iterations. An emptied cluster is re-seeded at the
    point farthest from its current centre.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"descriptors must be a 2-D array, got shape {x.shape}")
    if k <= 0:
        raise ValueError("k must be positive")
    if x.shape[0] < k:
        raise ValueError(f"need at least k={k} descriptors, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)

    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = squared_distances(x, centroids)
        labels = d.argmin(axis=1)
        point_cost = ((x - centroids[labels]) ** 2).sum(axis=1)
        history.append(float(point_cost.sum()))

        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            taken: set[int] = set()
            for j in np.flatnonzero(~filled):
                for idx in np.argsort(-point_cost, kind="stable"):
                    if int(idx) not in taken:
                        taken.add(int(idx))
                        new[j] = x[idx]
                        break
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break

    labels = squared_distances(x, centroids).argmin(axis=1)
    inertia = float(((x - centroids[labels]) ** 2).sum())
    history.append(inertia)
    return Codebook(centroids, inertia, seed, history, n_iter)
