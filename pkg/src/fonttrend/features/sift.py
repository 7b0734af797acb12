"""Scale-invariant keypoints and 128-d gradient-orientation descriptors.

A simplified SIFT: difference-of-Gaussians extrema over a 4-octave,
3-scale pyramid, contrast and edge-response rejection, dominant-orientation
assignment from a 36-bin histogram, and a 4x4x8 descriptor laid out in the
keypoint's rotated frame. No sub-pixel refinement and no initial upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .edges import to_gray

DESCRIPTOR_DIM = 128
MIN_WINDOW = 16  # classic 16x16 descriptor support
_BORDER = 5
_ORI_BINS = 36
_ORI_PEAK_RATIO = 0.8
_D = 4  # spatial cells per side
_N = 8  # orientation bins per cell
_MAG_CLAMP = 0.2


@dataclass
class Descriptor:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    vector: np.ndarray


@dataclass
class _Keypoint:
    octave: int
    layer: int
    row: int
    col: int
    sigma: float  # in octave pixels
    response: float


def _gaussian_octaves(gray, n_octaves, n_scales, sigma):
    k = 2.0 ** (1.0 / n_scales)
    base = ndimage.gaussian_filter(gray, np.sqrt(max(sigma**2 - 0.5**2, 0.01)))
    octaves = []
    img = base
    for _ in range(n_octaves):
        if min(img.shape) < 2 * _BORDER + 3:
            break
        layers = [img]
        for i in range(1, n_scales + 3):
            prev_total = sigma * k ** (i - 1)
            total = sigma * k**i
            layers.append(ndimage.gaussian_filter(layers[-1], np.sqrt(total**2 - prev_total**2)))
        octaves.append(np.stack(layers))
        img = layers[n_scales][::2, ::2]
    return octaves


def _gradients(layer):
    p = np.pad(layer, 1, mode="edge")
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    return np.hypot(dx, dy), np.arctan2(dy, dx)


def _find_extrema(dog, octave, n_scales, sigma, contrast, edge_ratio):
    k = 2.0 ** (1.0 / n_scales)
    mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
    mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
    candidates = ((dog == mx) | (dog == mn)) & (np.abs(dog) >= contrast)
    candidates[0] = candidates[-1] = False
    candidates[:, :_BORDER] = candidates[:, -_BORDER:] = False
    candidates[:, :, :_BORDER] = candidates[:, :, -_BORDER:] = False
    edge_limit = (edge_ratio + 1.0) ** 2 / edge_ratio
    found = []
    for layer, r, c in zip(*np.nonzero(candidates)):
        d = dog[layer]
        v = d[r, c]
        dxx = d[r, c + 1] + d[r, c - 1] - 2 * v
        dyy = d[r + 1, c] + d[r - 1, c] - 2 * v
        dxy = (d[r + 1, c + 1] - d[r + 1, c - 1] - d[r - 1, c + 1] + d[r - 1, c - 1]) / 4.0
        tr, det = dxx + dyy, dxx * dyy - dxy * dxy
        if det <= 0 or tr * tr / det >= edge_limit:
            continue
        found.append(_Keypoint(octave, int(layer), int(r), int(c), sigma * k**layer, float(abs(v))))
    return found


def _orientations(mag, ori, kp):
    h, w = mag.shape
    s = 1.5 * kp.sigma
    radius = int(round(3 * s))
    r0, r1 = max(kp.row - radius, 0), min(kp.row + radius + 1, h)
    c0, c1 = max(kp.col - radius, 0), min(kp.col + radius + 1, w)
    yy, xx = np.mgrid[r0:r1, c0:c1]
    weight = np.exp(-((yy - kp.row) ** 2 + (xx - kp.col) ** 2) / (2 * s * s))
    bins = np.round(ori[r0:r1, c0:c1] * _ORI_BINS / (2 * np.pi)).astype(int) % _ORI_BINS
    hist = np.bincount(bins.ravel(), (weight * mag[r0:r1, c0:c1]).ravel(), minlength=_ORI_BINS)
    peak = hist.max()
    if peak <= 0:
        return []
    out = []
    for b in range(_ORI_BINS):
        left, right = hist[(b - 1) % _ORI_BINS], hist[(b + 1) % _ORI_BINS]
        c = hist[b]
        if c >= _ORI_PEAK_RATIO * peak and c > left and c > right:
            offset = 0.5 * (left - right) / (left - 2 * c + right)
            out.append(((b + offset) * 2 * np.pi / _ORI_BINS) % (2 * np.pi))
    return out


def _describe(mag, ori, kp, theta):
    h, w = mag.shape
    cell = 3.0 * kp.sigma
    radius = int(round(cell * np.sqrt(2) * (_D + 1) * 0.5))
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    rows, cols = kp.row + dy, kp.col + dx
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    xr = (cos_t * dx + sin_t * dy) / cell
    yr = (-sin_t * dx + cos_t * dy) / cell
    rbin = yr + _D / 2 - 0.5
    cbin = xr + _D / 2 - 0.5
    keep = inside & (rbin > -1) & (rbin < _D) & (cbin > -1) & (cbin < _D)
    rbin, cbin = rbin[keep], cbin[keep]
    rr, cc = rows[keep], cols[keep]
    weight = np.exp(-(xr[keep] ** 2 + yr[keep] ** 2) / (2 * (0.5 * _D) ** 2)) * mag[rr, cc]
    obin = ((ori[rr, cc] - theta) % (2 * np.pi)) * _N / (2 * np.pi)

    r_lo, c_lo, o_lo = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
    fr, fc, fo = rbin - r_lo, cbin - c_lo, obin - o_lo
    hist = np.zeros((_D + 2, _D + 2, _N))
    for dr_, wr in ((0, 1 - fr), (1, fr)):
        for dc_, wc in ((0, 1 - fc), (1, fc)):
            for do_, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (r_lo + dr_ + 1, c_lo + dc_ + 1, (o_lo + do_) % _N),
                    weight * wr * wc * wo,
                )
    vec = hist[1:-1, 1:-1].reshape(-1)
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, _MAG_CLAMP)
    return vec / np.linalg.norm(vec)


def extract_descriptors(
    image: np.ndarray,
    max_keypoints: int = 500,
    n_octaves: int = 4,
    n_scales: int = 3,
    sigma: float = 1.6,
    contrast_threshold: float = 0.03,
    edge_ratio: float = 10.0,
) -> list[Descriptor]:
    """Detect keypoints and describe them; at most ``max_keypoints`` results.

    When there are more candidates than the cap, the strongest absolute DoG
    responses are kept. Images smaller than a descriptor window give [].
    """
    if max_keypoints <= 0:
        raise ValueError("max_keypoints must be positive")
    gray = to_gray(image)
    if min(gray.shape) < MIN_WINDOW:
        return []

    octaves = _gaussian_octaves(gray, n_octaves, n_scales, sigma)
    keypoints: list[_Keypoint] = []
    for o, gauss in enumerate(octaves):
        dog = gauss[1:] - gauss[:-1]
        keypoints += _find_extrema(dog, o, n_scales, sigma, contrast_threshold, edge_ratio)
    if not keypoints:
        return []

    order = sorted(range(len(keypoints)), key=lambda i: -keypoints[i].response)
    keypoints = [keypoints[i] for i in order[:max_keypoints]]

    grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    out: list[Descriptor] = []
    for kp in keypoints:
        key = (kp.octave, kp.layer)
        if key not in grads:
            grads[key] = _gradients(octaves[kp.octave][kp.layer])
        mag, ori = grads[key]
        factor = 2.0**kp.octave
        for theta in _orientations(mag, ori, kp):
            vec = _describe(mag, ori, kp, theta)
            if vec is None:
                continue
            out.append(Descriptor(kp.col * factor, kp.row * factor, kp.sigma * factor, theta, kp.response, vec))
    out.sort(key=lambda d: -d.response)
    return out[:max_keypoints]


def descriptor_matrix(descriptors: list[Descriptor]) -> np.ndarray:
    if not descriptors:
        return np.zeros((0, DESCRIPTOR_DIM))
    return np.stack([d.vector for d in descriptors])
