"""Manifest -> model inputs for the three estimators and the two baselines.

IMAGE feeds RGB title images, SHAPE feeds their Sobel edge maps, and FEATURE
feeds bag-of-visual-words histograms over a codebook fitted on the training
split only.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import Method, RunConfig
from .data import DatasetManifest, Sample, Split, crop_largest_text_region, load_image
from .features import Codebook, DescriptorCache, bovw_embed, descriptor_matrix, edge_detect, extract_descriptors, kmeans_fit
from .models import Sequential, cnn_regressor, init_parameters, mlp_regressor
from .trainer import Dataset, SplitData

log = logging.getLogger(__name__)

SPLITS = (Split.TRAIN, Split.VAL, Split.TEST)


def _image(manifest: DatasetManifest, sample: Sample, crop: bool) -> np.ndarray:
    img = load_image(manifest.image_path(sample))
    if crop:
        img = crop_largest_text_region(img)
    return img


def descriptor_tag(config: RunConfig) -> str:
    ct = f"{config.contrast_threshold:g}".replace(".", "p")
    return f"m{config.max_keypoints}-ct{ct}" + ("-crop" if config.crop else "")


def descriptor_cache(workdir: str | Path, config: RunConfig) -> DescriptorCache:
    return DescriptorCache(Path(workdir) / "features" / "descriptors", descriptor_tag(config))


def sample_descriptors(manifest: DatasetManifest, sample: Sample, config: RunConfig, cache: DescriptorCache) -> np.ndarray:
    path = manifest.image_path(sample)
    hit = cache.get(path)
    if hit is not None:
        return hit
    descs = extract_descriptors(
        _image(manifest, sample, config.crop),
        max_keypoints=config.max_keypoints,
        contrast_threshold=config.contrast_threshold,
    )
    mat = descriptor_matrix(descs)
    cache.put(path, mat)
    return mat


def extract_all(manifest: DatasetManifest, config: RunConfig, workdir: str | Path) -> dict[str, np.ndarray]:
    """Descriptors for every manifest sample (cached per image content)."""
    cache = descriptor_cache(workdir, config)
    return {s.image_path: sample_descriptors(manifest, s, config, cache) for s in manifest.samples}


def codebook_path(manifest: DatasetManifest, config: RunConfig, workdir: str | Path) -> Path:
    name = f"codebook-k{config.k}-s{config.codebook_seed}-{descriptor_tag(config)}-{manifest.checksum()[:12]}.txt"
    return Path(workdir) / "features" / name


def fit_codebook(manifest: DatasetManifest, config: RunConfig, workdir: str | Path, refit: bool = False) -> Codebook:
    """Fit (or reuse) the k-means codebook on TRAIN-split descriptors."""
    path = codebook_path(manifest, config, workdir)
    if path.exists() and not refit:
        return Codebook.load(path)
    cache = descriptor_cache(workdir, config)
    train = [sample_descriptors(manifest, s, config, cache) for s in manifest.split(Split.TRAIN)]
    stacked = np.concatenate(train, axis=0) if train else np.zeros((0, 128))
    log.info("fitting k=%d codebook on %d train descriptors", config.k, len(stacked))
    book = kmeans_fit(stacked, k=config.k, seed=config.codebook_seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    book.save(path)
    return book


def bovw_splits(manifest: DatasetManifest, config: RunConfig, workdir: str | Path) -> tuple[Dataset, Codebook]:
    book = fit_codebook(manifest, config, workdir)
    cache = descriptor_cache(workdir, config)
    out = {}
    for sp in SPLITS:
        samples = manifest.split(sp)
        vecs = [bovw_embed(sample_descriptors(manifest, s, config, cache), book, config.bovw_norm) for s in samples]
        out[sp] = _split_data(vecs, samples)
    return Dataset(out[Split.TRAIN], out[Split.VAL], out[Split.TEST]), book


def _split_data(inputs: list[np.ndarray], samples: list[Sample]) -> SplitData:
    return SplitData(inputs, np.array([s.year_norm for s in samples]), [s.image_path for s in samples])


def build_dataset(manifest: DatasetManifest, config: RunConfig, workdir: str | Path) -> Dataset:
    """Inputs for ``config.method``. CONSTANT needs only targets."""
    method = config.method_enum
    if method in (Method.FEATURE, Method.LINEAR):
        return bovw_splits(manifest, config, workdir)[0]
    out = {}
    for sp in SPLITS:
        samples = manifest.split(sp)
        if method is Method.CONSTANT:
            inputs = [np.zeros(0) for _ in samples]
        elif method is Method.SHAPE:
            inputs = [edge_detect(_image(manifest, s, config.crop)) for s in samples]
        else:
            inputs = [_image(manifest, s, config.crop) for s in samples]
        out[sp] = _split_data(inputs, samples)
    return Dataset(out[Split.TRAIN], out[Split.VAL], out[Split.TEST])


def build_network(config: RunConfig) -> Sequential:
    """Freshly initialized network for a neural method."""
    method = config.method_enum
    if method is Method.FEATURE:
        model = mlp_regressor(config.k, hidden=config.hidden, dropout=config.dropout)
    elif method in (Method.IMAGE, Method.SHAPE):
        in_ch = 3 if method is Method.IMAGE else 1
        model = cnn_regressor(in_ch, channels=config.channels, hidden=config.hidden, dropout=config.dropout)
    else:
        raise ValueError(f"{method.value} is a baseline, not a network")
    return init_parameters(model, config.seed)
