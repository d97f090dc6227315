"""Deterministic stand-in for the pick-zone camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robochain.oracle.frames import Frame

WIDTH, HEIGHT = 160, 120
# Pick zone: end of the track, as (x0, y0, x1, y1), exclusive upper bounds.
PICK_ZONE = (12, 10, 148, 110)
BACKGROUND = (58, 70, 96)
TRAY = (92, 94, 104)
BALL = (245, 110, 20)
DEFAULT_NOISE = 6.0
RADIUS_RANGE = (11, 15)
MIN_GAP = 3.0


@dataclass(frozen=True)
class Ball:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class SceneSpec:
    balls: tuple[Ball, ...] = ()
    background: tuple[int, int, int] = BACKGROUND
    noise: float = DEFAULT_NOISE
    seed: int = 0
    width: int = WIDTH
    height: int = HEIGHT
    zone: tuple[int, int, int, int] = PICK_ZONE

    @property
    def ball_count(self) -> int:
        return len(self.balls)

    def validate(self) -> None:
        x0, y0, x1, y1 = self.zone
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ValueError(f"pick zone {self.zone} is not inside the frame")
        if len(self.balls) > 3:
            raise ValueError(f"at most 3 balls fit the pick zone, got {len(self.balls)}")
        for b in self.balls:
            if b.r <= 0:
                raise ValueError(f"ball radius must be positive: {b}")
            if b.cx - b.r < x0 or b.cx + b.r > x1 or b.cy - b.r < y0 or b.cy + b.r > y1:
                raise ValueError(f"ball {b} is not fully inside the pick zone")
        for i, a in enumerate(self.balls):
            for b in self.balls[i + 1 :]:
                if np.hypot(a.cx - b.cx, a.cy - b.cy) < a.r + b.r:
                    raise ValueError(f"balls {a} and {b} overlap")
        if self.noise < 0:
            raise ValueError("noise amplitude must be non-negative")


def disc_raster(spec: SceneSpec) -> np.ndarray:
    """Ground-truth label image: 0 for background, i + 1 inside ball i."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    labels = np.zeros((spec.height, spec.width), dtype=np.int32)
    for i, b in enumerate(spec.balls):
        labels[(xx - b.cx) ** 2 + (yy - b.cy) ** 2 <= b.r**2] = i + 1
    return labels


def render_scene(spec: SceneSpec) -> Frame:
    """Orange discs with a soft highlight on a tray, plus seeded Gaussian noise."""
    spec.validate()
    img = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    img[:] = spec.background
    x0, y0, x1, y1 = spec.zone
    img[y0:y1, x0:x1] = TRAY
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    ball = np.asarray(BALL, dtype=np.float64)
    for b in spec.balls:
        inside = (xx - b.cx) ** 2 + (yy - b.cy) ** 2 <= b.r**2
        # light from the upper left; scaling keeps the hue
        hx, hy = b.cx - 0.35 * b.r, b.cy - 0.35 * b.r
        d2 = ((xx - hx) ** 2 + (yy - hy) ** 2) / (1.35 * b.r) ** 2
        shade = np.clip(1.0 - 0.4 * d2, 0.6, 1.0)
        img[inside] = shade[inside, None] * ball
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        img += rng.normal(0.0, spec.noise, img.shape)
    return Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def random_scene(
    ball_count: int,
    seed: int,
    noise: float = DEFAULT_NOISE,
    radius_range: tuple[int, int] = RADIUS_RANGE,
    zone: tuple[int, int, int, int] = PICK_ZONE,
) -> SceneSpec:
    """Non-overlapping balls placed uniformly in the pick zone by rejection sampling."""
    if not 0 <= ball_count <= 3:
        raise ValueError(f"ball_count must be in 0..3, got {ball_count}")
    rng = np.random.default_rng([seed, ball_count])
    x0, y0, x1, y1 = zone
    for _ in range(1000):
        balls: list[Ball] = []
        for _ in range(ball_count):
            for _ in range(200):
                r = float(rng.integers(radius_range[0], radius_range[1] + 1))
                cx = float(rng.integers(int(np.ceil(x0 + r)), int(x1 - r) + 1))
                cy = float(rng.integers(int(np.ceil(y0 + r)), int(y1 - r) + 1))
                if all(np.hypot(cx - o.cx, cy - o.cy) >= r + o.r + MIN_GAP for o in balls):
                    balls.append(Ball(cx, cy, r))
                    break
            else:
                break
        if len(balls) == ball_count:
            return SceneSpec(tuple(balls), noise=noise, seed=seed)
    raise RuntimeError(f"could not place {ball_count} balls in {zone}")
