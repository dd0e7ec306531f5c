import math

import numpy as np
import pytest

from keymask.data import make_synthetic_dataset
from keymask.errors import ConfigMismatch, ShapeMismatch, UndefinedMetric
from keymask.metrics import (
    EmbeddingFile,
    PoseFile,
    akd,
    aed,
    evaluate_reconstruction,
    format_report,
    l1_metric,
    load_embedding_csv,
    load_pose_csv,
    write_embedding_csv,
    write_pose_csv,
    write_report_csv,
)
from keymask.training import build_state, load_models, save_checkpoint


def _pose(coords, present=None, kp_ids=None):
    coords = np.asarray(coords, dtype=float)
    if present is None:
        present = np.ones(coords.shape[:2], dtype=bool)
    if kp_ids is None:
        kp_ids = tuple(range(coords.shape[1]))
    return PoseFile(coords=coords, present=np.asarray(present, dtype=bool), kp_ids=kp_ids)


class TestL1:
    def test_zero_on_identical(self):
        frames = np.random.default_rng(0).random((3, 8, 8, 3)).astype(np.float32)
        assert l1_metric(frames, frames.copy()) == 0.0

    def test_maximal_distance(self):
        zeros = np.zeros((1, 4, 4, 3), dtype=np.float32)
        ones = np.ones((1, 4, 4, 3), dtype=np.float32)
        assert l1_metric(zeros, ones) == 1.0

    def test_hand_computed(self):
        gen = np.array([[[0.1, 0.5], [0.9, 0.3]]])
        ref = np.array([[[0.2, 0.5], [0.4, 0.7]]])
        # |diffs| = 0.1, 0, 0.5, 0.4 -> mean 0.25
        assert l1_metric(gen, ref) == pytest.approx(0.25, abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            l1_metric(np.zeros((2, 4, 4, 3)), np.zeros((3, 4, 4, 3)))

    def test_monotone_under_blending(self):
        rng = np.random.default_rng(1)
        a = rng.random((2, 6, 6, 3))
        b = rng.random((2, 6, 6, 3))
        values = [l1_metric(a, a + t * (b - a)) for t in np.linspace(0, 1, 9)]
        assert all(x <= y + 1e-12 for x, y in zip(values, values[1:]))


class TestAkd:
    def test_zero_on_identical(self):
        pose = _pose(np.random.default_rng(2).uniform(0, 256, (4, 5, 2)))
        assert akd(pose, pose) == 0.0

    def test_three_four_five(self):
        a = _pose([[[10.0, 20.0]]])
        b = _pose([[[13.0, 24.0]]])
        assert akd(a, b) == 5.0

    def test_copresent_subset_enumeration(self):
        rng = np.random.default_rng(3)
        coords_a = rng.uniform(0, 100, (5, 4, 2))
        coords_b = rng.uniform(0, 100, (5, 4, 2))
        pres_a = rng.random((5, 4)) > 0.3
        pres_b = rng.random((5, 4)) > 0.3
        a = _pose(coords_a, pres_a)
        b = _pose(coords_b, pres_b)
        # oracle: explicit enumeration
        dists = []
        for t in range(5):
            for k in range(4):
                if pres_a[t, k] and pres_b[t, k]:
                    dists.append(np.hypot(*(coords_a[t, k] - coords_b[t, k])))
        assert akd(a, b) == pytest.approx(np.mean(dists), abs=1e-12)

    def test_schema_mismatch(self):
        a = _pose(np.zeros((2, 3, 2)), kp_ids=(0, 1, 2))
        b = _pose(np.zeros((2, 3, 2)), kp_ids=(0, 1, 5))
        with pytest.raises(ConfigMismatch):
            akd(a, b)

    def test_frame_count_mismatch(self):
        with pytest.raises(ConfigMismatch):
            akd(_pose(np.zeros((2, 3, 2))), _pose(np.zeros((3, 3, 2))))

    def test_undefined_when_no_copresence(self):
        a = _pose(np.zeros((2, 2, 2)), present=[[True, False], [True, False]])
        b = _pose(np.zeros((2, 2, 2)), present=[[False, True], [False, True]])
        with pytest.raises(UndefinedMetric):
            akd(a, b)


class TestAed:
    def test_zero_on_identical(self):
        emb = EmbeddingFile(values=np.random.default_rng(4).normal(size=(3, 8)))
        assert aed(emb, emb) == 0.0

    def test_orthonormal_pair(self):
        e1 = np.tile([1.0, 0.0, 0.0], (4, 1))
        e2 = np.tile([0.0, 1.0, 0.0], (4, 1))
        result = aed(EmbeddingFile(e1), EmbeddingFile(e2))
        assert result == pytest.approx(math.sqrt(2.0), abs=1e-6)

    def test_recomputation_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        expected = np.mean([np.linalg.norm(a[t] - b[t]) for t in range(3)])
        assert aed(EmbeddingFile(a), EmbeddingFile(b)) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigMismatch):
            aed(EmbeddingFile(np.zeros((2, 4))), EmbeddingFile(np.zeros((2, 5))))


def test_symmetry_over_random_pairs():
    rng = np.random.default_rng(6)
    for _ in range(100):
        t, k, d = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
        pa = _pose(rng.uniform(0, 50, (t, k, 2)), rng.random((t, k)) > 0.2)
        pb = _pose(rng.uniform(0, 50, (t, k, 2)), rng.random((t, k)) > 0.2)
        if (pa.present & pb.present).any():
            assert akd(pa, pb) == akd(pb, pa)
        ea = EmbeddingFile(rng.normal(size=(t, d)))
        eb = EmbeddingFile(rng.normal(size=(t, d)))
        assert aed(ea, eb) == aed(eb, ea)


class TestCsvSchemas:
    def test_pose_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        pose = _pose(rng.uniform(0, 200, (3, 4, 2)), rng.random((3, 4)) > 0.4)
        path = tmp_path / "pose.csv"
        write_pose_csv(path, pose)
        loaded = load_pose_csv(path)
        assert loaded.kp_ids == pose.kp_ids
        assert np.array_equal(loaded.present, pose.present)
        assert np.allclose(loaded.coords[pose.present], pose.coords[pose.present], atol=1e-4)

    def test_embedding_round_trip(self, tmp_path):
        emb = EmbeddingFile(values=np.random.default_rng(8).normal(size=(4, 6)))
        path = tmp_path / "emb.csv"
        write_embedding_csv(path, emb)
        loaded = load_embedding_csv(path)
        assert np.allclose(loaded.values, emb.values, atol=1e-6)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    from test_training import toy_cfg

    state = build_state(toy_cfg())
    path = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    save_checkpoint(state, path)
    return load_models(path)


class TestEvaluateReconstruction:
    def test_l1_always_computable(self, bundle, tmp_path):
        ds = make_synthetic_dataset(1, 3, 64, seed=30, split="eval")
        report = evaluate_reconstruction(ds, bundle)
        assert len(report.per_video) == 1
        assert report.l1 is not None and report.l1 >= 0.0
        assert report.akd is None and report.aed is None
        out = tmp_path / "report.csv"
        write_report_csv(report, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "video_id,akd,aed,l1"
        assert lines[-1].startswith("aggregate,,")
        assert "eval_000" in format_report(report)

    def test_with_pose_and_embedding_files(self, bundle, tmp_path):
        ds = make_synthetic_dataset(1, 3, 64, seed=31, split="eval")
        vid = ds.video_ids[0]
        rng = np.random.default_rng(9)
        for sub in ("generated", "truth"):
            (tmp_path / "poses" / sub).mkdir(parents=True)
            (tmp_path / "embs" / sub).mkdir(parents=True)
            write_pose_csv(
                tmp_path / "poses" / sub / f"{vid}.csv",
                _pose(rng.uniform(0, 64, (3, 4, 2))),
            )
            write_embedding_csv(
                tmp_path / "embs" / sub / f"{vid}.csv",
                EmbeddingFile(rng.normal(size=(3, 5))),
            )
        report = evaluate_reconstruction(
            ds, bundle, poses_dir=tmp_path / "poses", embeddings_dir=tmp_path / "embs",
            frames_out=tmp_path / "frames",
        )
        row = report.per_video[0]
        assert row.akd is not None and row.akd > 0
        assert row.aed is not None and row.aed > 0
        assert (tmp_path / "frames" / vid / "0000000.png").exists()
        assert len(list((tmp_path / "frames" / vid).glob("*.png"))) == 3
