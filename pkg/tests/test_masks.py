import numpy as np
import torch

from keymask.config import MaskConfig
from keymask.keypoints import coordinate_grid, extract_keypoints
from keymask.masks import circles_mask, heatmap_mask, mask_from_heatmaps, save_mask_png


class TestHeatmapMask:
    def test_constant_stack_degenerate(self):
        mask = heatmap_mask(torch.zeros(2, 4, 4))
        assert mask.degenerate is True
        assert torch.equal(mask.map, torch.zeros(1, 4, 4))
        assert mask.variant == "heatmap"

    def test_hand_computed_rescale(self):
        # channel sums: [[1,2],[3,4]] -> min 1, max 4 -> (s-1)/3
        ch0 = torch.tensor([[0.0, 1.0], [2.0, 3.0]])
        ch1 = torch.ones(2, 2)
        mask = heatmap_mask(torch.stack([ch0, ch1]))
        expected = torch.tensor([[[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]]])
        assert torch.allclose(mask.map, expected)
        assert mask.degenerate is False

    def test_minmax_postcondition(self):
        stack = torch.from_numpy(
            np.random.default_rng(0).normal(0, 2, (5, 8, 8)).astype(np.float32)
        )
        mask = heatmap_mask(stack)
        assert mask.map.min().item() == 0.0
        assert mask.map.max().item() == 1.0
        assert mask.map.shape == (1, 8, 8)

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        stack = torch.from_numpy(rng.normal(0, 1, (3, 6, 6)).astype(np.float32))
        base = heatmap_mask(stack).map
        for a, b in [(2.5, 0.0), (0.3, -4.0), (7.0, 11.0)]:
            transformed = heatmap_mask(a * stack + b).map
            assert torch.allclose(transformed, base, atol=1e-5)

    def test_batched(self):
        stack = torch.from_numpy(
            np.random.default_rng(2).normal(0, 1, (4, 3, 6, 6)).astype(np.float32)
        )
        mask = heatmap_mask(stack)
        assert mask.map.shape == (4, 1, 6, 6)
        mins = mask.map.amin(dim=(-2, -1))
        maxs = mask.map.amax(dim=(-2, -1))
        assert torch.allclose(mins, torch.zeros(4, 1))
        assert torch.allclose(maxs, torch.ones(4, 1))

    def test_threshold_hook(self):
        ch0 = torch.tensor([[0.0, 1.0], [2.0, 3.0]])
        mask = heatmap_mask(ch0.unsqueeze(0), threshold=0.5)
        expected = torch.tensor([[[0.0, 0.0], [2.0 / 3.0, 1.0]]])
        assert torch.allclose(mask.map, expected)


class TestCirclesMask:
    def test_peak_on_cell_center(self):
        grid = coordinate_grid((16, 16))
        kp = grid[6, 3].unsqueeze(0)
        mask = circles_mask(kp, 0.01, (16, 16))
        assert mask.map[0, 6, 3].item() == 1.0
        assert mask.variant == "circles"
        assert torch.equal(mask.origin_kps, kp)

    def test_coincident_keypoints_clip(self):
        grid = coordinate_grid((16, 16))
        kp = grid[6, 3].unsqueeze(0)
        single = circles_mask(kp, 0.01, (16, 16))
        double = circles_mask(torch.cat([kp, kp]), 0.01, (16, 16))
        assert double.map.max().item() == 1.0
        assert double.map.argmax() == single.map.argmax()
        assert double.map.max() <= 1.0 and double.map.min() >= 0.0

    def test_three_separated_local_maxima(self):
        grid = coordinate_grid((16, 16))
        cells = [(3, 3), (3, 12), (12, 7)]
        kps = torch.stack([grid[r, c] for r, c in cells])
        mask = circles_mask(kps, 0.01, (16, 16)).map[0]
        # oracle: scan for strict 8-neighborhood local maxima
        maxima = []
        for r in range(1, 15):
            for c in range(1, 15):
                patch = mask[r - 1 : r + 2, c - 1 : c + 2].clone()
                center = patch[1, 1].item()
                patch[1, 1] = -1.0
                if center > patch.max().item():
                    maxima.append((r, c))
        assert sorted(maxima) == sorted(cells)

    def test_appearance_decoupling(self):
        # two visually different probability stacks with identical means
        # yield bit-identical circles masks
        grid = (16, 16)
        concentrated = torch.zeros(2, 16, 16)
        concentrated[0, 8, 8] = 1.0
        concentrated[1, 4, 10] = 1.0
        spread = torch.zeros(2, 16, 16)
        spread[0, 8, 6] = 0.5
        spread[0, 8, 10] = 0.5  # same mean as (8, 8)
        spread[1, 2, 10] = 0.5
        spread[1, 6, 10] = 0.5  # same mean as (4, 10)
        kp_a = extract_keypoints(concentrated)
        kp_b = extract_keypoints(spread)
        assert torch.equal(kp_a, kp_b)
        mask_a = circles_mask(kp_a, 0.01, grid)
        mask_b = circles_mask(kp_b, 0.01, grid)
        assert torch.equal(mask_a.map, mask_b.map)

    def test_bounds(self):
        kps = torch.from_numpy(
            np.random.default_rng(4).uniform(-1, 1, (7, 2)).astype(np.float32)
        )
        mask = circles_mask(kps, 0.05, (12, 12))
        assert mask.map.shape == (1, 12, 12)
        assert mask.map.min() >= 0.0 and mask.map.max() <= 1.0


class TestMaskFromHeatmaps:
    def test_heatmap_variant(self):
        stack = torch.from_numpy(
            np.random.default_rng(5).normal(0, 1, (3, 8, 8)).astype(np.float32)
        )
        direct = heatmap_mask(stack)
        routed = mask_from_heatmaps(stack, MaskConfig(variant="heatmap"))
        assert torch.equal(direct.map, routed.map)

    def test_circles_variant(self):
        stack = torch.from_numpy(
            np.random.default_rng(6).normal(0, 1, (3, 8, 8)).astype(np.float32)
        )
        routed = mask_from_heatmaps(
            stack, MaskConfig(variant="circles", variance=0.02), temperature=0.1
        )
        assert routed.variant == "circles"
        assert routed.origin_kps is not None
        assert routed.map.shape == (1, 8, 8)


def test_save_mask_png_deterministic(tmp_path):
    mask = circles_mask(torch.tensor([[0.1, -0.2]]), 0.02, (16, 16))
    p1 = tmp_path / "a.png"
    p2 = tmp_path / "b.png"
    save_mask_png(mask, p1)
    save_mask_png(mask, p2)
    assert p1.read_bytes() == p2.read_bytes()
