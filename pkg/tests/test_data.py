import numpy as np
import pytest
from PIL import Image

from keymask.data import (
    Frame,
    load_dataset,
    load_video,
    make_synthetic_dataset,
    preprocess,
    sample_training_pair,
    save_dataset,
    split_by_hash,
)
from keymask.errors import (
    DatasetTooSmall,
    EmptyVideo,
    InconsistentFrames,
    InvalidTarget,
    NotFound,
)


def _write_png(path, array_uint8):
    Image.fromarray(array_uint8, mode="RGB").save(path)


def _video_dir(tmp_path, n=3, side=256, name="vid"):
    d = tmp_path / name
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        _write_png(d / f"{i:07d}.png", rng.integers(0, 256, (side, side, 3), dtype=np.uint8))
    return d


class TestLoadVideo:
    def test_directory_of_pngs(self, tmp_path):
        d = _video_dir(tmp_path, n=3, side=256)
        frames = load_video(d)
        assert len(frames) == 3
        assert all(f.pixels.shape == (256, 256, 3) for f in frames)
        assert [f.index for f in frames] == [0, 1, 2]
        assert all(f.source_id == "vid" for f in frames)

    def test_missing_path(self, tmp_path):
        with pytest.raises(NotFound):
            load_video(tmp_path / "nope")

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        with pytest.raises(EmptyVideo):
            load_video(d)

    def test_normalization_identity(self, tmp_path):
        d = tmp_path / "one"
        d.mkdir()
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        img[3, 4] = 255
        _write_png(d / "0000000.png", img)
        frames = load_video(d)
        assert frames[0].pixels[3, 4, 0] == 1.0
        assert frames[0].pixels[0, 0, 0] == 0.0

    def test_mixed_resolutions(self, tmp_path):
        d = tmp_path / "mixed"
        d.mkdir()
        _write_png(d / "0000000.png", np.zeros((16, 16, 3), dtype=np.uint8))
        _write_png(d / "0000001.png", np.zeros((32, 32, 3), dtype=np.uint8))
        with pytest.raises(InconsistentFrames):
            load_video(d)

    def test_video_container(self, tmp_path):
        import cv2

        path = str(tmp_path / "clip.avi")
        writer = cv2.VideoWriter(path, cv2.VideoWriter_fourcc(*"MJPG"), 5, (64, 64))
        if not writer.isOpened():
            pytest.skip("no MJPG codec available")
        for i in range(4):
            writer.write(np.full((64, 64, 3), i * 40, dtype=np.uint8))
        writer.release()
        frames = load_video(path)
        assert len(frames) == 4
        assert frames[0].pixels.shape == (64, 64, 3)
        assert frames[0].source_id == "clip"
        # MJPG is lossy; the constant level must survive approximately
        assert abs(float(frames[2].pixels.mean()) - 80 / 255) < 0.05


class TestPreprocess:
    def test_pure_downscale(self):
        frame = Frame(pixels=np.random.default_rng(0).random((512, 512, 3)).astype(np.float32))
        out = preprocess(frame, 256)
        assert out.pixels.shape == (256, 256, 3)

    def test_aspect_preserving_crop(self):
        px = np.zeros((256, 320, 3), dtype=np.float32)
        px[:, 32:288] = 0.5  # center square
        out = preprocess(Frame(pixels=px), 256)
        assert out.pixels.shape == (256, 256, 3)
        assert np.all(out.pixels == 0.5)

    def test_constant_stays_constant(self):
        # any sane resampler maps a constant image to the same constant
        px = np.full((100, 60, 3), 0.37, dtype=np.float32)
        out = preprocess(Frame(pixels=px), 64)
        assert out.pixels.shape == (64, 64, 3)
        assert np.allclose(out.pixels, 0.37, atol=1e-6)

    def test_idempotent_on_sized_frames(self):
        px = np.random.default_rng(1).random((64, 64, 3)).astype(np.float32)
        frame = Frame(pixels=px)
        once = preprocess(frame, 64)
        twice = preprocess(once, 64)
        assert np.array_equal(once.pixels, twice.pixels)
        assert np.array_equal(once.pixels, px)

    def test_invalid_target(self):
        frame = Frame(pixels=np.zeros((16, 16, 3), dtype=np.float32))
        with pytest.raises(InvalidTarget):
            preprocess(frame, 4)


class TestPairSampling:
    def test_two_frame_video_forced_pair(self):
        ds = make_synthetic_dataset(1, 2, 32, seed=0)
        src, drv = sample_training_pair(ds, seed=5)
        assert {src.index, drv.index} == {0, 1}
        assert src.source_id == drv.source_id

    def test_same_seed_reproduces(self, synth_dataset):
        a = sample_training_pair(synth_dataset, seed=42)
        b = sample_training_pair(synth_dataset, seed=42)
        assert a[0].index == b[0].index and a[1].index == b[1].index
        assert a[0].source_id == b[0].source_id
        assert np.array_equal(a[0].pixels, b[0].pixels)

    def test_driving_coverage(self):
        # every frame of a 10-frame video appears as driving within 1000 draws
        ds = make_synthetic_dataset(1, 10, 32, seed=1)
        seen = {sample_training_pair(ds, seed=s)[1].index for s in range(1000)}
        assert seen == set(range(10))

    def test_never_crosses_videos(self):
        ds = make_synthetic_dataset(3, 4, 32, seed=2)
        for s in range(10_000):
            src, drv = sample_training_pair(ds, seed=s)
            assert src.source_id == drv.source_id

    def test_dataset_too_small(self):
        ds = make_synthetic_dataset(1, 2, 32, seed=0)
        ds.videos[0] = ds.videos[0][:1]  # degenerate: single-frame video
        with pytest.raises(DatasetTooSmall):
            sample_training_pair(ds, seed=0)


class TestSynthetic:
    def test_deterministic(self):
        a = make_synthetic_dataset(2, 3, 64, seed=9)
        b = make_synthetic_dataset(2, 3, 64, seed=9)
        for va, vb in zip(a.videos, b.videos):
            for fa, fb in zip(va, vb):
                assert np.array_equal(fa.pixels, fb.pixels)
        assert np.array_equal(a.tracks, b.tracks)

    def test_track_delta_is_disc_displacement(self):
        ds = make_synthetic_dataset(1, 2, 64, seed=4)
        delta = ds.tracks[0, 1, 0] - ds.tracks[0, 0, 0]
        assert np.all(np.abs(delta) < 64)  # sanity: a smooth, small move
        # the stored track is the analytic center; re-derive from pixels below

    @pytest.mark.parametrize("point,channel", [(0, 0), (1, 2)])  # red disc, blue limb
    def test_centroid_matches_track(self, point, channel):
        ds = make_synthetic_dataset(2, 5, 64, seed=7)
        ys, xs = np.mgrid[0:64, 0:64]
        for v, video in enumerate(ds.videos):
            for t, frame in enumerate(video):
                px = frame.pixels
                others = px[..., [c for c in range(3) if c != channel]].mean(axis=-1)
                weight = np.clip(px[..., channel] - others - 0.3, 0.0, None)
                assert weight.sum() > 0
                cx = (weight * xs).sum() / weight.sum()
                cy = (weight * ys).sum() / weight.sum()
                gt = ds.tracks[v, t, point]
                assert abs(cx - gt[0]) <= 1.0 and abs(cy - gt[1]) <= 1.0

    def test_requires_minimums(self):
        with pytest.raises(ValueError):
            make_synthetic_dataset(0, 2, 64, seed=0)
        with pytest.raises(ValueError):
            make_synthetic_dataset(1, 1, 64, seed=0)
        with pytest.raises(ValueError):
            make_synthetic_dataset(1, 2, 16, seed=0)


class TestDiskRoundTrip:
    def test_save_load(self, tmp_path):
        ds = make_synthetic_dataset(2, 3, 64, seed=5)
        save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path, "train")
        assert loaded.video_ids == ds.video_ids
        assert len(loaded.videos) == 2
        for va, vb in zip(ds.videos, loaded.videos):
            assert len(va) == len(vb)
            for fa, fb in zip(va, vb):
                # 8-bit PNG quantization only
                assert np.abs(fa.pixels - fb.pixels).max() <= (0.5 / 255) + 1e-6

    def test_tracks_csv_schema(self, tmp_path):
        ds = make_synthetic_dataset(1, 2, 64, seed=5)
        save_dataset(ds, tmp_path)
        lines = (tmp_path / "train" / "tracks.csv").read_text().splitlines()
        assert lines[0] == "video_id,frame,point_id,x,y"
        assert len(lines) == 1 + 1 * 2 * 2

    def test_load_missing_split(self, tmp_path):
        with pytest.raises(NotFound):
            load_dataset(tmp_path, "eval")


def test_split_by_hash_disjoint_and_deterministic():
    ids = [f"video_{i}" for i in range(20)]
    train_a, eval_a = split_by_hash(ids, 0.25)
    train_b, eval_b = split_by_hash(ids, 0.25)
    assert train_a == train_b and eval_a == eval_b
    assert set(train_a).isdisjoint(eval_a)
    assert len(eval_a) == 5
    assert sorted(train_a + eval_a) == sorted(ids)
