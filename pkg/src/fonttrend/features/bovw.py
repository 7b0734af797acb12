"""Bag-of-visual-words histograms and the per-image descriptor cache."""

from __future__ import annotations

import enum
import hashlib
from pathlib import Path

import numpy as np

from .kmeans import Codebook
from .sift import DESCRIPTOR_DIM


class BovwNorm(str, enum.Enum):
    RAW = "RAW"
    L1 = "L1"


def assign_words(descriptors: np.ndarray, codebook: Codebook, chunk: int = 256) -> np.ndarray:
    """Nearest centroid index per descriptor; exact ties go to the lowest index."""
    x = np.asarray(descriptors, dtype=np.float64).reshape(-1, codebook.dim)
    labels = np.empty(len(x), dtype=np.int64)
    c = codebook.centroids
    for start in range(0, len(x), chunk):
        block = x[start : start + chunk]
        d = ((block[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        labels[start : start + chunk] = d.argmin(axis=1)
    return labels


def bovw_embed(descriptors, codebook: Codebook, normalization: BovwNorm | str = BovwNorm.RAW) -> np.ndarray:
    """k-bin histogram of visual-word assignments."""
    normalization = BovwNorm(normalization)
    x = np.asarray(descriptors, dtype=np.float64)
    if x.size == 0:
        return np.zeros(codebook.k)
    counts = np.bincount(assign_words(x, codebook), minlength=codebook.k).astype(np.float64)
    if normalization is BovwNorm.L1:
        counts /= counts.sum()
    return counts


def content_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class DescriptorCache:
    """``<dir>/<sha256 of image bytes>-<param tag>.npy`` holding an (n, 128) matrix."""

    def __init__(self, directory: str | Path, tag: str = "default"):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.tag = tag

    def path_for(self, image_path: str | Path) -> Path:
        return self.directory / f"{content_hash(image_path)}-{self.tag}.npy"

    def get(self, image_path: str | Path) -> np.ndarray | None:
        p = self.path_for(image_path)
        if not p.exists():
            return None
        return np.load(p).reshape(-1, DESCRIPTOR_DIM)

    def put(self, image_path: str | Path, matrix: np.ndarray) -> Path:
        p = self.path_for(image_path)
        np.save(p, np.asarray(matrix, dtype=np.float64).reshape(-1, DESCRIPTOR_DIM))
        return p
