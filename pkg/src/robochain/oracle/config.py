from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from robochain.kv import ConfigError, PathLike, dataclass_from_kv, format_kv, read_kv


@dataclass(frozen=True)
class OracleConfig:
    """Every threshold of the ball-counting pipeline.

    Hue is in degrees, saturation and value in [0, 1]. Canny thresholds
    apply to the Sobel gradient magnitude of a 0..255 gray raster. The Hough
    vote threshold is the fraction of a radius' ring points that must land
    on edge pixels.
    """

    hue_low: float = 10.0
    hue_high: float = 35.0
    sat_min: float = 0.45
    val_min: float = 0.35
    blur_size: int = 5
    blur_sigma: float = 1.4
    blur_passes: int = 2
    canny_low: float = 50.0
    canny_high: float = 150.0
    r_min: int = 9
    r_max: int = 17
    vote_threshold: float = 0.4
    min_center_dist: float = 18.0
    max_count: int = 3

    def __post_init__(self):
        if not 0 <= self.hue_low <= self.hue_high < 360:
            raise ConfigError("need 0 <= hue_low <= hue_high < 360")
        if self.blur_size < 1 or self.blur_size % 2 == 0:
            raise ConfigError("blur_size must be a positive odd integer")
        if self.blur_sigma <= 0 or self.blur_passes < 0:
            raise ConfigError("blur_sigma must be positive and blur_passes non-negative")
        if not self.canny_low < self.canny_high:
            raise ConfigError("canny_low must be below canny_high")
        if not 1 <= self.r_min < self.r_max:
            raise ConfigError("need 1 <= r_min < r_max")
        if self.max_count < 0:
            raise ConfigError("max_count must be non-negative")

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> OracleConfig:
        return dataclass_from_kv(cls, values)

    @classmethod
    def load(cls, path: PathLike) -> OracleConfig:
        return cls.from_kv(read_kv(path))

    def dump(self) -> str:
        return format_kv(self)

    def save(self, path: PathLike) -> None:
        Path(path).write_text(self.dump(), encoding="utf-8")
