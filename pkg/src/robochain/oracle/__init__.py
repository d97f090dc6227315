"""The trusted oracle: counts balls in pick-zone frames and reports to the contract."""

from __future__ import annotations

from dataclasses import dataclass

from robochain.contract import CallReceipt, ContractEngine, EmittedOperation
from robochain.ledger import ImageAnchorPayload, TxKind
from robochain.oracle.config import OracleConfig
from robochain.oracle.frames import Frame, FrameFormatError, frame_from_ppm
from robochain.oracle.scene import Ball, SceneSpec, disc_raster, random_scene, render_scene
from robochain.oracle.vision import (
    CircleDetection,
    HsvFrame,
    canny,
    count_balls,
    hough_circles,
    hsv_to_rgb,
    masked_gray,
    orange_mask,
    rgb_to_hsv,
    run_pipeline,
)

__all__ = [
    "Ball",
    "CircleDetection",
    "Frame",
    "FrameFormatError",
    "HsvFrame",
    "Oracle",
    "OracleConfig",
    "Observation",
    "SceneSpec",
    "canny",
    "count_balls",
    "disc_raster",
    "frame_from_ppm",
    "hough_circles",
    "hsv_to_rgb",
    "masked_gray",
    "orange_mask",
    "random_scene",
    "render_scene",
    "rgb_to_hsv",
    "run_pipeline",
]


@dataclass(frozen=True)
class Observation:
    image_id: str
    image_hash: bytes
    count: int
    operations: list[EmittedOperation]
    receipt: CallReceipt


class Oracle:
    """Anchors every frame it looks at, then reports the ball count on-chain."""

    def __init__(self, key: str, engine: ContractEngine, address: str,
                 config: OracleConfig | None = None):
        self.key = key
        self.engine = engine
        self.address = address
        self.config = config or OracleConfig()

    def observe(self, frame: Frame, now: float) -> Observation:
        ledger = self.engine.ledger
        image_hash, image_id = ledger.anchor_image(frame.to_ppm())
        ledger.submit(
            TxKind.IMAGE_ANCHOR, self.key, ImageAnchorPayload(image_hash, image_id),
            f"pick-zone frame at t={now:g}s",
        )
        count = count_balls(frame, self.config)
        ops, receipt = self.engine.call_entry(
            self.address, "report_count", self.key, {"count": count},
            description=f"oracle counted {count} ball(s) in {image_id}",
        )
        return Observation(image_id, image_hash, count, ops, receipt)
