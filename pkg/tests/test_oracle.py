import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robochain.contract import ContractEngine, velocity_contract
from robochain.kv import ConfigError
from robochain.ledger import Ledger, TxKind
from robochain.oracle import (
    Ball,
    Frame,
    FrameFormatError,
    HsvFrame,
    Oracle,
    OracleConfig,
    SceneSpec,
    canny,
    count_balls,
    disc_raster,
    frame_from_ppm,
    hough_circles,
    hsv_to_rgb,
    masked_gray,
    orange_mask,
    random_scene,
    render_scene,
    rgb_to_hsv,
    run_pipeline,
)

from conftest import connected_components

CFG = OracleConfig()


def solid(color, w=64, h=48):
    return Frame(np.tile(np.array(color, dtype=np.uint8), (h, w, 1)))


def ring(shape, cx, cy, r):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return np.abs(np.hypot(xx - cx, yy - cy) - r) < 0.5


def dilate(mask, n):
    out = mask.copy()
    for _ in range(n):
        p = np.pad(out, 1)
        out = p[1:-1, 1:-1] | p[:-2, 1:-1] | p[2:, 1:-1] | p[1:-1, :-2] | p[1:-1, 2:]
        out |= p[:-2, :-2] | p[:-2, 2:] | p[2:, :-2] | p[2:, 2:]
    return out


THREE_BALLS = SceneSpec((Ball(40, 60, 14), Ball(82, 48, 13), Ball(120, 70, 15)), seed=3)


class TestRender:
    def test_empty_scene_has_no_orange(self):
        frame = render_scene(SceneSpec(seed=1))
        assert not orange_mask(rgb_to_hsv(frame)).any()

    def test_seeded_determinism(self):
        spec = random_scene(2, seed=11)
        assert render_scene(spec).pixels.tobytes() == render_scene(spec).pixels.tobytes()
        other = SceneSpec(spec.balls, seed=12)
        assert render_scene(other).pixels.tobytes() != render_scene(spec).pixels.tobytes()

    @pytest.mark.parametrize("seed", range(10))
    def test_three_balls_three_regions(self, seed):
        frame = render_scene(random_scene(3, seed))
        assert connected_components(orange_mask(rgb_to_hsv(frame))) == 3

    def test_overlapping_balls_rejected(self):
        with pytest.raises(ValueError):
            render_scene(SceneSpec((Ball(50, 50, 12), Ball(60, 50, 12))))

    def test_ball_outside_zone_rejected(self):
        with pytest.raises(ValueError):
            render_scene(SceneSpec((Ball(12, 50, 12),)))

    def test_random_scene_respects_invariants(self):
        for k in range(4):
            for seed in range(20):
                spec = random_scene(k, seed)
                spec.validate()
                assert spec.ball_count == k

    def test_frame_minimum_size(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((31, 64, 3), dtype=np.uint8))


class TestHsv:
    def test_pure_red(self):
        hsv = rgb_to_hsv(solid((255, 0, 0)))
        assert hsv.hue[0, 0] == 0 and hsv.sat[0, 0] == 1 and hsv.val[0, 0] == 1

    def test_gray_has_no_saturation(self):
        assert rgb_to_hsv(solid((128, 128, 128))).sat[0, 0] == 0

    @pytest.mark.parametrize("color,hue", [((0, 255, 0), 120), ((0, 0, 255), 240), ((255, 0, 255), 300)])
    def test_primary_hues(self, color, hue):
        assert rgb_to_hsv(solid(color)).hue[0, 0] == pytest.approx(hue)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_on_random_frame(self, seed):
        px = np.random.default_rng(seed).integers(0, 256, (48, 64, 3), dtype=np.uint8)
        hsv = rgb_to_hsv(Frame(px))
        assert ((hsv.hue >= 0) & (hsv.hue < 360)).all()
        back = hsv_to_rgb(hsv)
        assert np.abs(back - px / 255.0).max() <= 1 / 255


class TestMask:
    @pytest.mark.parametrize("seed", range(10))
    def test_rendered_disc_mostly_set(self, seed):
        spec = random_scene(1, seed)
        truth = disc_raster(spec) > 0
        mask = orange_mask(rgb_to_hsv(render_scene(spec)))
        assert (mask & truth).sum() / truth.sum() >= 0.95

    def test_blue_background_unset(self):
        assert not orange_mask(rgb_to_hsv(solid((40, 60, 200)))).any()

    def test_black_frame_empty(self):
        assert not orange_mask(rgb_to_hsv(solid((0, 0, 0)))).any()

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 180), st.floats(0, 180), st.floats(0, 90), st.floats(0, 90), st.integers(0, 2**16))
    def test_wider_band_never_shrinks(self, lo, hi, grow_lo, grow_hi, seed):
        lo, hi = min(lo, hi), max(lo, hi)
        px = np.random.default_rng(seed).integers(0, 256, (32, 32, 3), dtype=np.uint8)
        hsv = rgb_to_hsv(Frame(px))
        narrow = orange_mask(hsv, OracleConfig(hue_low=lo, hue_high=hi))
        wide = orange_mask(hsv, OracleConfig(hue_low=max(lo - grow_lo, 0), hue_high=min(hi + grow_hi, 359)))
        assert not (narrow & ~wide).any()


class TestMaskedGray:
    def test_empty_mask_gives_zeros(self):
        frame = render_scene(random_scene(2, 0))
        assert not masked_gray(frame, np.zeros((120, 160), dtype=bool)).any()

    def test_constant_frame_full_mask(self):
        gray = masked_gray(solid((200, 120, 40)), np.ones((48, 64), dtype=bool))
        expected = round(0.299 * 200 + 0.587 * 120 + 0.114 * 40)
        assert (gray == expected).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_support_stays_near_disc(self, seed):
        spec = random_scene(2, seed)
        frame = render_scene(spec)
        mask = orange_mask(rgb_to_hsv(frame))
        gray = masked_gray(frame, mask)
        assert not (gray > 0)[~dilate(disc_raster(spec) > 0, 1)].any()
        assert (gray > 0)[mask].mean() > 0.99

    def test_window_blur_equals_full_frame_blur(self):
        from robochain.oracle.vision import gaussian_blur

        spec = SceneSpec((Ball(25, 22, 12),), seed=4, zone=(0, 0, 160, 120))
        frame = render_scene(spec)
        mask = orange_mask(rgb_to_hsv(frame))
        full = frame.pixels.astype(float)
        for _ in range(2):
            full = gaussian_blur(full, 5, 1.4)
        full = np.clip(np.rint(full), 0, 255).astype(np.uint8)
        expected = np.rint((full & np.where(mask, 255, 0).astype(np.uint8)[..., None]) @ [0.299, 0.587, 0.114])
        assert np.array_equal(masked_gray(frame, mask), expected.astype(np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            masked_gray(solid((1, 2, 3)), np.ones((10, 10), dtype=bool))


class TestCanny:
    def test_constant_raster_no_edges(self):
        assert not canny(np.full((40, 40), 128, dtype=np.uint8)).any()

    def test_disc_gives_closed_ring_near_true_circle(self):
        yy, xx = np.mgrid[0:80, 0:80]
        cx, cy, r = 40.0, 38.0, 15.0
        gray = np.where(np.hypot(xx - cx, yy - cy) <= r, 200, 0).astype(np.uint8)
        edges = canny(gray, 50, 150)
        dist = np.hypot(xx[edges] - cx, yy[edges] - cy)
        assert np.abs(dist - r).max() <= 2
        angles = np.degrees(np.arctan2(yy[edges] - cy, xx[edges] - cx)) % 360
        assert len(set((angles // 10).astype(int))) == 36
        # closed: the ring splits the background into an inside and an outside
        assert connected_components(~edges) == 2

    def test_high_threshold_at_max_is_near_empty(self):
        yy, xx = np.mgrid[0:64, 0:64]
        gray = np.where(np.hypot(xx - 32, yy - 32) <= 12, 40, 0).astype(np.uint8)
        assert canny(gray, 0, 255).sum() <= 2
        assert canny(gray, 0, 100).sum() > 20

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            canny(np.zeros((40, 40)), 150, 150)

    def test_edges_are_thin(self):
        gray = np.zeros((40, 40), dtype=np.uint8)
        gray[:, 20:] = 200
        edges = canny(gray)
        assert edges.sum(axis=1).max() == 1


class TestHough:
    def test_single_ring(self):
        edges = ring((80, 80), 40, 40, 20)
        found = hough_circles(edges, 15, 25, CFG.vote_threshold, CFG.min_center_dist)
        assert len(found) == 1
        assert abs(found[0].r - 20) <= 2 and (found[0].cx, found[0].cy) == (40, 40)

    def test_empty_edges(self):
        assert hough_circles(np.zeros((50, 50), dtype=bool), 9, 17, 0.4, 18) == []

    def test_three_disjoint_rings(self):
        edges = ring((120, 160), 30, 40, 14) | ring((120, 160), 60, 80, 14) | ring((120, 160), 125, 80, 14)
        found = hough_circles(edges, 9, 17, CFG.vote_threshold, CFG.min_center_dist)
        assert sorted((d.cx, d.cy) for d in found) == [(30, 40), (60, 80), (125, 80)]
        assert all(9 <= d.r <= 17 for d in found)
        assert [d.votes for d in found] == sorted((d.votes for d in found), reverse=True)

    def test_bad_radius_band(self):
        with pytest.raises(ValueError):
            hough_circles(np.zeros((40, 40), dtype=bool), 10, 10, 0.4, 10)


class TestCountBalls:
    @pytest.mark.parametrize("k", range(4))
    def test_counts_match_generator(self, k):
        hits = sum(count_balls(render_scene(random_scene(k, 1000 + s))) == k for s in range(25))
        assert hits >= 24

    def test_background_only(self):
        assert count_balls(render_scene(SceneSpec(seed=9))) == 0
        assert count_balls(solid((58, 70, 96), 160, 120)) == 0

    def test_fig3_style_frame(self):
        result = run_pipeline(render_scene(THREE_BALLS))
        assert len(result.detections) == 3
        for ball in THREE_BALLS.balls:
            nearest = min(result.detections, key=lambda d: np.hypot(d.cx - ball.cx, d.cy - ball.cy))
            assert np.hypot(nearest.cx - ball.cx, nearest.cy - ball.cy) <= 2
            assert abs(nearest.r - ball.r) <= 2

    def test_count_is_capped(self):
        assert count_balls(render_scene(THREE_BALLS), OracleConfig(max_count=2)) == 2

    def test_pipeline_is_deterministic(self):
        frame = render_scene(random_scene(3, 77))
        a, b = run_pipeline(frame), run_pipeline(frame)
        assert a.detections == b.detections
        assert np.array_equal(a.edges, b.edges)


class TestPpm:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, binary):
        frame = render_scene(random_scene(2, 5))
        assert frame_from_ppm(frame.to_ppm(binary)) == frame

    def test_comments_in_header(self):
        frame = solid((1, 2, 3), 32, 32)
        data = frame.to_ppm().replace(b"P6\n", b"P6\n# from the camera\n", 1)
        assert frame_from_ppm(data) == frame

    @pytest.mark.parametrize("data", [b"P5\n32 32\n255\n", b"P6\n32 32\n65535\n", b"P6\n32 32\n255\n\x00\x01",
                                      b"P3\n32 32\n255\n1 2 3\n", b"P6\n32 x\n255\n"])
    def test_bad_files(self, data):
        with pytest.raises(FrameFormatError):
            frame_from_ppm(data)


class TestConfig:
    def test_file_round_trip(self, tmp_path):
        cfg = OracleConfig(hue_low=12.5, r_max=20, vote_threshold=0.5)
        cfg.save(tmp_path / "oracle.cfg")
        assert OracleConfig.load(tmp_path / "oracle.cfg") == cfg

    def test_every_threshold_listed(self):
        keys = {line.split("=")[0] for line in OracleConfig().dump().splitlines()}
        assert {"hue_low", "hue_high", "sat_min", "val_min", "blur_size", "blur_sigma", "blur_passes",
                "canny_low", "canny_high", "r_min", "r_max", "vote_threshold", "min_center_dist"} <= keys

    @pytest.mark.parametrize("text", ["canny_low=200", "r_min=30", "blur_size=4", "bogus=1", "hue_low=abc", "novalue"])
    def test_invalid(self, tmp_path, text):
        path = tmp_path / "bad.cfg"
        path.write_text(text + "\n")
        with pytest.raises(ConfigError):
            OracleConfig.load(path)


def test_oracle_anchors_before_reporting():
    ledger = Ledger(("v0",))
    engine = ContractEngine(ledger)
    addr = engine.deploy(velocity_contract(), {"trusted_oracle": "o", "controller": "c"}, "op")
    oracle = Oracle("o", engine, addr)
    for s in range(3):
        seen = oracle.observe(render_scene(random_scene(s, s)), now=float(s))
        assert seen.count == s
        assert ledger.verify_anchor(seen.image_id) is False  # not sealed yet
    ledger.seal_next(3)
    kinds = [t.kind for t in ledger.chain[0].transactions]
    assert kinds.count(TxKind.IMAGE_ANCHOR) == 3
    calls = [i for i, k in enumerate(kinds) if k is TxKind.CONTRACT_CALL][1:]
    anchors = [i for i, k in enumerate(kinds) if k is TxKind.IMAGE_ANCHOR]
    assert all(a < c for a, c in zip(anchors, calls))
    assert all(ledger.verify_anchor(i) for i in ledger.anchors())
    assert engine.storage(addr)["ball_count"] == 2
