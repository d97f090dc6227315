"""Ball counting: HSV conversion, orange mask, blurred masked gray, Canny, Hough circles."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from robochain.oracle.config import OracleConfig
from robochain.oracle.frames import Frame

DEFAULT_CONFIG = OracleConfig()


@dataclass(frozen=True, eq=False)
class HsvFrame:
    hue: np.ndarray  # degrees in [0, 360)
    sat: np.ndarray  # [0, 1]
    val: np.ndarray  # [0, 1]


@dataclass(frozen=True)
class CircleDetection:
    cx: int
    cy: int
    r: int
    votes: float


def rgb_to_hsv(frame: Frame) -> HsvFrame:
    rgb = frame.pixels.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    hue = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    hue = np.where(c > 0, hue * 60.0, 0.0) % 360.0
    sat = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    return HsvFrame(hue, sat, v)


def hsv_to_rgb(hsv: HsvFrame) -> np.ndarray:
    """Inverse hexcone conversion; returns float RGB in [0, 1]."""
    c = hsv.val * hsv.sat
    hp = (hsv.hue % 360.0) / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    zero = np.zeros_like(c)
    sector = np.floor(hp).astype(int) % 6
    choices_r = [c, x, zero, zero, x, c]
    choices_g = [x, c, c, x, zero, zero]
    choices_b = [zero, zero, x, c, c, x]
    m = hsv.val - c
    r = np.choose(sector, choices_r) + m
    g = np.choose(sector, choices_g) + m
    b = np.choose(sector, choices_b) + m
    return np.stack([r, g, b], axis=-1)


def orange_mask(hsv: HsvFrame, cfg: OracleConfig = DEFAULT_CONFIG) -> np.ndarray:
    return (
        (hsv.hue >= cfg.hue_low)
        & (hsv.hue <= cfg.hue_high)
        & (hsv.sat >= cfg.sat_min)
        & (hsv.val >= cfg.val_min)
    )


@lru_cache(maxsize=16)
def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    k /= k.sum()
    k.flags.writeable = False
    return k


def gaussian_blur(img: np.ndarray, size: int = 5, sigma: float = 1.4) -> np.ndarray:
    """Separable Gaussian blur over the first two axes with edge replication."""
    k = gaussian_kernel(size, sigma)
    half = size // 2
    out = img.astype(np.float64)
    pad = [(half, half), (0, 0)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(out, pad, mode="edge")
    out = sum(k[i] * p[i : i + img.shape[0]] for i in range(size))
    pad = [(0, 0), (half, half)] + [(0, 0)] * (img.ndim - 2)
    p = np.pad(out, pad, mode="edge")
    return sum(k[i] * p[:, i : i + img.shape[1]] for i in range(size))


_LUMA = np.array([0.299, 0.587, 0.114])


def masked_gray(frame: Frame, mask: np.ndarray, cfg: OracleConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Blur the frame ``blur_passes`` times, AND it with the mask, reduce to luminance.

    Returns a uint8 raster that is zero wherever the mask is unset.
    """
    if mask.shape != frame.pixels.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.pixels.shape[:2]}")
    gray = np.zeros(mask.shape, dtype=np.uint8)
    rows, cols = np.nonzero(mask.any(axis=1))[0], np.nonzero(mask.any(axis=0))[0]
    if rows.size == 0:
        return gray
    # Blurring only a window around the mask is exact: each pass reads `half`
    # pixels of context, and at the frame border edge replication is what the
    # full-frame blur does too.
    margin = cfg.blur_passes * (cfg.blur_size // 2)
    y0, y1 = max(rows[0] - margin, 0), min(rows[-1] + 1 + margin, mask.shape[0])
    x0, x1 = max(cols[0] - margin, 0), min(cols[-1] + 1 + margin, mask.shape[1])
    blurred = frame.pixels[y0:y1, x0:x1].astype(np.float64)
    for _ in range(cfg.blur_passes):
        blurred = gaussian_blur(blurred, cfg.blur_size, cfg.blur_sigma)
    blurred = np.clip(np.rint(blurred), 0, 255).astype(np.uint8)
    bits = np.where(mask[y0:y1, x0:x1], np.uint8(0xFF), np.uint8(0))[..., None]
    combined = np.bitwise_and(blurred, bits)
    gray[y0:y1, x0:x1] = np.clip(np.rint(combined.astype(np.float64) @ _LUMA), 0, 255)
    return gray


def sobel(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(gray.astype(np.float64), 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Zero every pixel that is not a maximum along its quantized gradient direction."""
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def at(dy: int, dx: int) -> np.ndarray:
        return p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    # (dy, dx) of the forward neighbour for bins 0, 45, 90, 135 degrees (y axis points down)
    steps = [(0, 1), (1, 1), (1, 0), (1, -1)]
    bins = (((angle + 22.5) // 45.0) % 4).astype(int)
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dy, dx) in enumerate(steps):
        sel = bins == b
        # strict on one side, non-strict on the other, so plateaus stay one pixel thick
        keep |= sel & (mag > at(dy, dx)) & (mag >= at(-dy, -dx))
    return np.where(keep & (mag > 0), mag, 0.0)


def _dilate(binary: np.ndarray) -> np.ndarray:
    p = np.pad(binary, 1, mode="constant")
    h, w = binary.shape
    out = np.zeros_like(binary)
    for dy in range(3):
        for dx in range(3):
            out |= p[dy : dy + h, dx : dx + w]
    return out


def hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep weak pixels only if 8-connected (through weak pixels) to a strong one."""
    candidate = (nms >= low) & (nms > 0)
    edges = candidate & (nms >= high)
    while True:
        grown = _dilate(edges) & candidate
        if np.array_equal(grown, edges):
            return edges
        edges = grown


def canny(gray: np.ndarray, low: float = 50.0, high: float = 150.0) -> np.ndarray:
    """Boolean edge map: Sobel gradient, non-maximum suppression, double-threshold hysteresis.

    No smoothing happens here; the masked gray raster is already blurred.
    """
    if not low < high:
        raise ValueError(f"canny needs low < high, got {low}, {high}")
    gx, gy = sobel(gray)
    mag = np.hypot(gx, gy)
    return hysteresis(non_maximum_suppression(mag, gx, gy), low, high)


@lru_cache(maxsize=64)
def ring_offsets(r: int) -> np.ndarray:
    """Distinct integer (dy, dx) points on a circle of radius r."""
    n = max(16, int(np.ceil(8 * np.pi * r)))
    theta = np.arange(n) * (2.0 * np.pi / n)
    pts = np.stack([np.rint(r * np.sin(theta)), np.rint(r * np.cos(theta))], axis=1).astype(np.int64)
    pts = np.unique(pts, axis=0)
    pts.flags.writeable = False
    return pts


def _ring_votes(ys: np.ndarray, xs: np.ndarray, r: int, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    off = ring_offsets(r)
    cy = (ys[:, None] - off[None, :, 0]).ravel()
    cx = (xs[:, None] - off[None, :, 1]).ravel()
    ok = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
    votes = np.bincount(cy[ok] * w + cx[ok], minlength=h * w)
    return votes.reshape(h, w) / len(off)


def hough_accumulator(edges: np.ndarray, r_min: int, r_max: int) -> np.ndarray:
    """Scores of shape (n_radii, H, W): fraction of each candidate ring that lies on edges."""
    ys, xs = np.nonzero(edges)
    acc = np.zeros((r_max - r_min + 1,) + edges.shape, dtype=np.float64)
    if ys.size:
        for i, r in enumerate(range(r_min, r_max + 1)):
            acc[i] = _ring_votes(ys, xs, r, edges.shape)
    return acc


def _best_over_radii(edges: np.ndarray, r_min: int, r_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-center maximum of the accumulator and the smallest radius attaining it."""
    ys, xs = np.nonzero(edges)
    best = np.zeros(edges.shape, dtype=np.float64)
    best_r = np.full(edges.shape, r_min, dtype=np.int64)
    if ys.size:
        for r in range(r_min, r_max + 1):
            score = _ring_votes(ys, xs, r, edges.shape)
            better = score > best
            best[better] = score[better]
            best_r[better] = r
    return best, best_r


def _max_filter(img: np.ndarray, half: int) -> np.ndarray:
    """Maximum over a (2*half+1) square window, zero-padded, done as two 1-D passes."""
    h, w = img.shape
    p = np.pad(img, ((half, half), (0, 0)))
    rows = p[0:h].copy()
    for i in range(1, 2 * half + 1):
        np.maximum(rows, p[i : i + h], out=rows)
    p = np.pad(rows, ((0, 0), (half, half)))
    out = p[:, 0:w].copy()
    for i in range(1, 2 * half + 1):
        np.maximum(out, p[:, i : i + w], out=out)
    return out


def hough_circles(
    edges: np.ndarray,
    r_min: int,
    r_max: int,
    vote_threshold: float,
    min_center_dist: float,
) -> list[CircleDetection]:
    if not r_min < r_max:
        raise ValueError(f"hough_circles needs r_min < r_max, got {r_min}, {r_max}")
    best, best_r = _best_over_radii(edges, r_min, r_max)
    window = _max_filter(best, 2)
    peaks = (best >= vote_threshold) & (best >= window)
    ys, xs = np.nonzero(peaks)
    scores = best[ys, xs]
    # highest score first; ties broken by row then column for determinism
    order = np.lexsort((xs, ys, -scores))
    kept: list[CircleDetection] = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        if all((y - d.cy) ** 2 + (x - d.cx) ** 2 >= min_center_dist**2 for d in kept):
            kept.append(CircleDetection(x, y, int(best_r[y, x]), float(scores[i])))
    return kept


@dataclass(frozen=True, eq=False)
class PipelineResult:
    mask: np.ndarray
    gray: np.ndarray
    edges: np.ndarray
    detections: list[CircleDetection]


def run_pipeline(frame: Frame, cfg: OracleConfig = DEFAULT_CONFIG) -> PipelineResult:
    mask = orange_mask(rgb_to_hsv(frame), cfg)
    gray = masked_gray(frame, mask, cfg)
    edges = canny(gray, cfg.canny_low, cfg.canny_high)
    found = hough_circles(edges, cfg.r_min, cfg.r_max, cfg.vote_threshold, cfg.min_center_dist)
    return PipelineResult(mask, gray, edges, found)


def count_balls(frame: Frame, cfg: OracleConfig = DEFAULT_CONFIG) -> int:
    return min(len(run_pipeline(frame, cfg).detections), cfg.max_count)
