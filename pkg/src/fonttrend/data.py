"""Dataset ingestion, manifests, the title cropper and a synthetic generator.

Directory layout for every dataset, real or synthetic::

    <root>/<year>/<image>.png
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage
from skimage.filters import threshold_otsu

from .features.edges import to_gray

BASE_YEAR = 1932
YEAR_SPAN = 84
DEFAULT_QUOTA = 56
DEFAULT_SPLITS = (20, 8, 28)
MIN_SIDE = 16
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff")
MANIFEST_COLUMNS = ("path", "year_raw", "year_norm", "split")


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


class DataError(ValueError):
    """Dataset tree does not satisfy the sampling protocol."""

    def __init__(self, message: str, deficient: dict[int, int] | None = None, missing: Sequence[int] = ()):
        super().__init__(message)
        self.deficient = deficient or {}
        self.missing = list(missing)


def normalize_year(year: int | float, base_year: int = BASE_YEAR) -> float:
    return float(year) - base_year


def denormalize_year(value: float, base_year: int = BASE_YEAR) -> float:
    return value + base_year


def proportional_splits(quota: int, ratios: Sequence[int] = DEFAULT_SPLITS) -> tuple[int, int, int]:
    """Scale the 20/8/28 protocol down to ``quota`` images per year.

    Train and validation are rounded; the test split takes the remainder.
    """
    total = sum(ratios)
    train = max(1, round(quota * ratios[0] / total))
    val = max(1, round(quota * ratios[1] / total))
    test = quota - train - val
    if test < 1:
        raise ValueError(f"quota {quota} too small for a three-way split")
    return train, val, test


@dataclass(frozen=True)
class Sample:
    image_path: str
    year_raw: int
    year_norm: float
    split: Split


@dataclass
class DatasetManifest:
    samples: list[Sample]
    quota: int = DEFAULT_QUOTA
    split_counts: tuple[int, int, int] = DEFAULT_SPLITS
    seed: int = 0
    base_year: int = BASE_YEAR
    span: int = YEAR_SPAN
    root: str = ""

    def split(self, split: Split | str) -> list[Sample]:
        split = Split(split)
        return [s for s in self.samples if s.split is split]

    def counts(self) -> dict[str, int]:
        return {sp.value: sum(s.split is sp for s in self.samples) for sp in Split}

    @property
    def years(self) -> list[int]:
        return sorted({s.year_raw for s in self.samples})

    def _body(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for s in self.samples:
            w.writerow([s.image_path, s.year_raw, repr(s.year_norm), s.split.value])
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self._body().encode()).hexdigest()

    def to_text(self, root_ref: str | None = None) -> str:
        header = (
            "# fonttrend manifest v1\n"
            f"# seed={self.seed} quota={self.quota} split_counts={'/'.join(map(str, self.split_counts))} "
            f"base_year={self.base_year} span={self.span}\n"
            f"# checksum={self.checksum()}\n"
        )
        if root_ref is not None:
            header += f"# root={root_ref}\n"
        return header + self._body()

    def write(self, path: str | Path) -> str:
        """Write the manifest; the image root is stored relative to ``path``."""
        path = Path(path)
        ref = None
        if self.root:
            ref = Path(os.path.relpath(Path(self.root).resolve(), path.parent.resolve())).as_posix()
        path.write_text(self.to_text(ref))
        return self.checksum()

    def image_path(self, sample: Sample) -> Path:
        return Path(self.root) / sample.image_path

    @classmethod
    def read(cls, path: str | Path, root: str | Path | None = None) -> "DatasetManifest":
        lines = Path(path).read_text().splitlines(keepends=True)
        meta: dict[str, str] = {}
        body_lines = []
        for line in lines:
            if line.startswith("# root="):
                meta["root"] = line[len("# root=") :].rstrip("\n")
            elif line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
            else:
                body_lines.append(line)
        body = "".join(body_lines)
        if "checksum" in meta and hashlib.sha256(body.encode()).hexdigest() != meta["checksum"]:
            raise DataError(f"{path}: manifest checksum mismatch")
        samples = [
            Sample(r["path"], int(r["year_raw"]), float(r["year_norm"]), Split(r["split"]))
            for r in csv.DictReader(io.StringIO(body))
        ]
        return cls(
            samples,
            quota=int(meta.get("quota", DEFAULT_QUOTA)),
            split_counts=tuple(int(v) for v in meta.get("split_counts", "20/8/28").split("/")),
            seed=int(meta.get("seed", 0)),
            base_year=int(meta.get("base_year", BASE_YEAR)),
            span=int(meta.get("span", YEAR_SPAN)),
            root=str(root if root is not None else Path(path).parent / meta.get("root", ".")),
        )


def _year_dirs(root: Path) -> dict[int, Path]:
    out = {}
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.isdigit():
            out[int(child.name)] = child
    return out


def _images_in(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def build_manifest(
    root_dir: str | Path,
    seed: int = 0,
    quota: int = DEFAULT_QUOTA,
    split_counts: Sequence[int] = DEFAULT_SPLITS,
    base_year: int = BASE_YEAR,
    span: int = YEAR_SPAN,
    expected_years: Iterable[int] | None = None,
) -> DatasetManifest:
    """Sample ``quota`` images per year and split them train/val/test in order.

    Each year is shuffled with its own stream derived from ``(seed, year)``,
    so adding or removing a year leaves the other years' draws unchanged.
    """
    root = Path(root_dir)
    split_counts = tuple(int(c) for c in split_counts)
    if len(split_counts) != 3 or min(split_counts) < 0 or sum(split_counts) != quota:
        raise DataError(f"split counts {split_counts} must be three non-negative ints summing to quota {quota}")
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    dirs = _year_dirs(root)
    if expected_years is not None:
        missing = sorted(set(expected_years) - set(dirs))
        if missing:
            raise DataError(f"missing year directories: {', '.join(map(str, missing))}", missing=missing)
    if not dirs:
        raise DataError(f"no <year>/ directories under {root}")
    out_of_range = [y for y in dirs if not base_year <= y <= base_year + span]
    if out_of_range:
        raise DataError(
            f"years outside {base_year}..{base_year + span}: {', '.join(map(str, out_of_range))}"
        )

    images = {y: _images_in(d) for y, d in dirs.items()}
    deficient = {y: len(v) for y, v in images.items() if len(v) < quota}
    if deficient:
        listing = ", ".join(f"{y} ({n}/{quota})" for y, n in sorted(deficient.items()))
        raise DataError(f"years with fewer than {quota} images: {listing}", deficient=deficient)

    bounds = np.cumsum(split_counts)
    samples: list[Sample] = []
    for year in sorted(images):
        rng = np.random.default_rng([seed, year])
        chosen = rng.permutation(len(images[year]))[:quota]
        for rank, idx in enumerate(chosen):
            split = Split.TRAIN if rank < bounds[0] else Split.VAL if rank < bounds[1] else Split.TEST
            rel = images[year][idx].relative_to(root).as_posix()
            samples.append(Sample(rel, year, normalize_year(year, base_year), split))
    return DatasetManifest(samples, quota, split_counts, seed, base_year, span, str(root))


# ---------------------------------------------------------------------------
# images


def load_image(path: str | Path, min_side: int = MIN_SIDE) -> np.ndarray:
    """Decode to float (3, H, W) in [0, 1]; upscale so min(H, W) >= min_side."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        if min(w, h) < min_side:
            f = min_side / min(w, h)
            im = im.resize((max(min_side, math.ceil(w * f)), max(min_side, math.ceil(h * f))), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image).transpose(1, 2, 0) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def _merge_line_boxes(boxes: list[list[int]]) -> list[list[int]]:
    """Greedily join boxes on the same text line (y0, x0, y1, x1 half-open)."""
    boxes = [list(b) for b in boxes]
    merged = True
    while merged:
        merged = False
        boxes.sort(key=lambda b: (b[1], b[0]))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                overlap = min(a[2], b[2]) - max(a[0], b[0])
                min_h = min(a[2] - a[0], b[2] - b[0])
                gap = max(a[1], b[1]) - min(a[3], b[3])
                if overlap >= 0.5 * min_h and gap <= max(a[2] - a[0], b[2] - b[0]):
                    boxes[i] = [min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])]
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return boxes


def text_region_boxes(image: np.ndarray, min_area: int = 4) -> list[tuple[int, int, int, int]]:
    """Candidate text-line boxes (y0, x0, y1, x1) from Otsu foreground blobs."""
    gray = to_gray(image)
    if gray.max() - gray.min() < 1e-6:
        return []
    fg = gray > threshold_otsu(gray)
    border = np.concatenate([fg[0], fg[-1], fg[:, 0], fg[:, -1]])
    if border.mean() > 0.5:
        fg = ~fg
    labels, n = ndimage.label(fg, structure=np.ones((3, 3)))
    boxes = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or (labels[sl] == i).sum() < min_area:
            continue
        boxes.append([sl[0].start, sl[1].start, sl[0].stop, sl[1].stop])
    return [tuple(b) for b in _merge_line_boxes(boxes)]


def select_largest(boxes: Sequence[tuple[int, int, int, int]]) -> tuple[int, int, int, int] | None:
    """The proposal with the largest area (first one on ties)."""
    best, best_area = None, -1
    for b in boxes:
        area = (b[2] - b[0]) * (b[3] - b[1])
        if area > best_area:
            best, best_area = b, area
    return best


def crop_largest_text_region(image: np.ndarray, pad: int = 4) -> np.ndarray:
    """Crop (C, H, W) to the largest text-line box plus ``pad`` pixels.

    Falls back to the whole image when nothing is found.
    """
    box = select_largest(text_region_boxes(image))
    if box is None:
        return image
    h, w = image.shape[-2:]
    y0, x0, y1, x1 = box
    y0, x0 = max(0, y0 - pad), max(0, x0 - pad)
    y1, x1 = min(h, y1 + pad), min(w, x1 + pad)
    return image[..., y0:y1, x0:x1]


# ---------------------------------------------------------------------------
# synthetic title images
#
# Style drifts monotonically with the (style) year: warm text colours and
# thick, slanted strokes early on; cool colours, thin upright strokes and
# more dark backgrounds later.

_WARM = np.array([0.86, 0.30, 0.08])
_COOL = np.array([0.45, 0.75, 1.0])
_STROKES = (
    ((0.0, 0.0), (0.0, 1.0)),  # left stem
    ((1.0, 0.0), (1.0, 1.0)),  # right stem
    ((0.0, 0.0), (1.0, 0.0)),  # top bar
    ((0.0, 0.5), (1.0, 0.5)),  # middle bar
    ((0.0, 1.0), (1.0, 1.0)),  # bottom bar
    ((0.0, 0.0), (1.0, 1.0)),  # diagonal
    ((0.5, 0.0), (0.5, 1.0)),  # centre stem
)


@dataclass
class SyntheticRecord:
    path: str
    year: int
    style_year: int
    is_outlier: bool


@dataclass
class SyntheticSpec:
    height: int = 32
    width: int = 64
    base_year: int = BASE_YEAR
    span: int = YEAR_SPAN
    n_glyphs: tuple[int, int] = (3, 5)
    noise: float = 0.02


def style_params(style_year: int, rng: np.random.Generator, spec: SyntheticSpec) -> dict:
    t = min(max((style_year - spec.base_year) / spec.span, 0.0), 1.0)
    color = np.clip((1 - t) * _WARM + t * _COOL + rng.normal(0, 0.04, 3), 0, 1)
    # dark backgrounds become more common later; either way text keeps its luma contrast
    bg_level = np.clip((0.12 if rng.random() < t else 0.9) + rng.normal(0, 0.04), 0.0, 1.0)
    background = np.clip(np.full(3, bg_level) + rng.normal(0, 0.02, 3), 0, 1)
    thickness = max(1, int(round(spec.height * (0.22 - 0.12 * t) + rng.normal(0, 0.5))))
    slant = np.deg2rad(22.0 * (1 - t) + rng.normal(0, 2.0))
    return {"color": color, "background": background, "thickness": thickness, "slant": slant}


def render_title(style: dict, rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    """Draw a row of stroke glyphs; returns float (3, H, W) in [0, 1]."""
    h, w = spec.height, spec.width
    bg = tuple(int(round(255 * v)) for v in style["background"])
    fg = tuple(int(round(255 * v)) for v in style["color"])
    im = Image.new("RGB", (w, h), bg)
    draw = ImageDraw.Draw(im)
    n = int(rng.integers(spec.n_glyphs[0], spec.n_glyphs[1] + 1))
    margin_x, margin_y = 0.08 * w, 0.2 * h
    cell = (w - 2 * margin_x) / n
    glyph_w, glyph_h = 0.65 * cell, h - 2 * margin_y
    shear = math.tan(style["slant"])
    for g in range(n):
        x0 = margin_x + g * cell + 0.5 * (cell - glyph_w)
        chosen = rng.choice(len(_STROKES), size=int(rng.integers(2, 4)), replace=False)
        for s in sorted(chosen):
            (ux0, uy0), (ux1, uy1) = _STROKES[s]
            pts = []
            for ux, uy in ((ux0, uy0), (ux1, uy1)):
                y = margin_y + uy * glyph_h
                x = x0 + ux * glyph_w + shear * (h / 2 - y)
                pts.append((x, y))
            draw.line(pts, fill=fg, width=style["thickness"])
    arr = np.asarray(im, dtype=np.float64) / 255.0
    arr = np.clip(arr + rng.normal(0, spec.noise, arr.shape), 0, 1)
    return arr.transpose(2, 0, 1)


def generate_synthetic(
    out_dir: str | Path,
    n_per_year: int,
    years: Sequence[int],
    outlier_rate: float = 0.0,
    seed: int = 0,
    spec: SyntheticSpec | None = None,
) -> list[SyntheticRecord]:
    """Write a ``<root>/<year>/<n>.png`` tree plus ``labels.csv``.

    With probability ``outlier_rate`` a sample's style is drawn from a
    uniformly random year of ``years`` while its label stays the true year.
    """
    if not 0.0 <= outlier_rate < 1.0:
        raise ValueError(f"outlier_rate must be in [0, 1), got {outlier_rate}")
    spec = spec or SyntheticSpec()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    years = [int(y) for y in years]
    records: list[SyntheticRecord] = []
    for year in years:
        rng = np.random.default_rng([seed, year])
        (root / str(year)).mkdir(exist_ok=True)
        for i in range(n_per_year):
            outlier = bool(rng.random() < outlier_rate)
            style_year = int(years[rng.integers(len(years))]) if outlier else year
            image = render_title(style_params(style_year, rng, spec), rng, spec)
            rel = f"{year}/{i:04d}.png"
            save_image(root / rel, image)
            records.append(SyntheticRecord(rel, year, style_year, outlier))
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "year", "style_year", "is_outlier"])
        for r in records:
            w.writerow([r.path, r.year, r.style_year, int(r.is_outlier)])
    return records


def read_synthetic_labels(root: str | Path) -> dict[str, SyntheticRecord]:
    out = {}
    with open(Path(root) / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["path"]] = SyntheticRecord(
                row["path"], int(row["year"]), int(row["style_year"]), bool(int(row["is_outlier"]))
            )
    return out
