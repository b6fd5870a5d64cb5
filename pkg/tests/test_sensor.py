import math
import time

import numpy as np
import pytest

from inhand.geometry import Pose2
from inhand.grid import PoseGrid, grid_for_object
from inhand.sensor import (
    ContactMask,
    MaskBank,
    SensorSpec,
    build_mask_bank,
    render_mask,
    single_shot_likelihood,
)
from util import square, star_polygon

SPEC = SensorSpec()


def test_spec_validation():
    with pytest.raises(ValueError):
        SensorSpec(width=0.0)
    with pytest.raises(ValueError):
        SensorSpec(resolution=0)
    with pytest.raises(ValueError):
        SensorSpec(noise_flip_prob=1.0)
    with pytest.raises(ValueError):
        SensorSpec(blur_radius=-1.0)


def test_mask_validation():
    with pytest.raises(ValueError):
        ContactMask(np.zeros((4, 5), dtype=bool))
    m = ContactMask(np.ones((4, 4), dtype=bool))
    assert m.count() == 16


def test_object_outside_window_renders_empty():
    obj = square(side=0.02)
    mask = render_mask(obj, Pose2(1.0, 1.0, 0.3), SPEC)
    assert mask.count() == 0


def test_square_covering_window_renders_full():
    obj = square(side=0.5)
    mask = render_mask(obj, Pose2(0.0, 0.0, 0.0), SPEC)
    assert mask.count() == SPEC.resolution**2


def test_rasterized_area_matches_geometry_exactly():
    # a 40 mm square centered in the 80 mm window covers exactly half the
    # pixels per axis; no pixel center lies on the boundary
    obj = square(side=0.04)
    mask = render_mask(obj, Pose2(0.0, 0.0, 0.0), SPEC)
    assert mask.count() == (SPEC.resolution // 2) ** 2


def test_rasterized_area_rotation_consistency():
    obj = square(side=0.04)
    a0 = render_mask(obj, Pose2(0.0, 0.0, 0.0), SPEC).count()
    a45 = render_mask(obj, Pose2(0.0, 0.0, math.pi / 4), SPEC).count()
    px_area = (SPEC.width / SPEC.resolution) * (SPEC.height / SPEC.resolution)
    # pixelation error scales with the perimeter in pixels
    assert abs(a45 - a0) * px_area <= 4 * 0.04 * (SPEC.width / SPEC.resolution)


def test_flip_noise_binomial_mean():
    obj = square(side=0.04)
    spec = SensorSpec(noise_flip_prob=0.01)
    clean = render_mask(obj, Pose2(0.0, 0.0, 0.0), spec).pixels
    n_trials = 1000
    total = 0
    for seed in range(n_trials):
        noisy = render_mask(obj, Pose2(0.0, 0.0, 0.0), spec, seed=seed).pixels
        total += int((noisy ^ clean).sum())
    n_pix = spec.resolution**2
    mean = total / n_trials
    expect = n_pix * 0.01
    sigma_mean = math.sqrt(n_pix * 0.01 * 0.99 / n_trials)
    assert abs(mean - expect) <= 3 * sigma_mean, (mean, expect)


def test_render_deterministic_per_seed():
    obj = star_polygon(np.random.default_rng(3))
    spec = SensorSpec(noise_flip_prob=0.05, blur_radius=0.8)
    a = render_mask(obj, Pose2(0.002, -0.004, 0.8), spec, seed=9)
    b = render_mask(obj, Pose2(0.002, -0.004, 0.8), spec, seed=9)
    c = render_mask(obj, Pose2(0.002, -0.004, 0.8), spec, seed=10)
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_blur_perturbs_outline_only_modestly():
    obj = square(side=0.04)
    plain = render_mask(obj, Pose2(0.001, 0.0, 0.2), SPEC)
    blurred = render_mask(obj, Pose2(0.001, 0.0, 0.2),
                          SensorSpec(blur_radius=1.0))
    diff = int((plain.pixels ^ blurred.pixels).sum())
    assert diff < 0.05 * SPEC.resolution**2


# ---------------------------------------------------------------------------
# mask bank


def single_cell_grid():
    return PoseGrid((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), dtheta=1.0)


def test_bank_of_single_pose():
    obj = square(side=0.04)
    bank = build_mask_bank(obj, single_cell_grid(), SPEC)
    assert len(bank) == 1
    ref = render_mask(obj, Pose2(0.0, 0.0, 0.0), SPEC)
    assert np.array_equal(bank.mask(0).pixels, ref.pixels)


def test_bank_matches_renderer_per_cell():
    obj = star_polygon(np.random.default_rng(5))
    grid = PoseGrid((-0.01, 0.01), (-0.01, 0.01))
    bank = build_mask_bank(obj, grid, SPEC)
    assert len(bank) == grid.size
    rng = np.random.default_rng(0)
    for i in rng.integers(0, grid.size, size=12):
        ref = render_mask(obj, grid.pose(int(i)), SPEC)
        assert np.array_equal(bank.mask(int(i)).pixels, ref.pixels)


def test_out_of_view_cells_render_identical_empty():
    obj = square(side=0.02)
    grid = PoseGrid((0.5, 0.505), (0.0, 0.0), (0.0, 0.0), dtheta=1.0)
    bank = build_mask_bank(obj, grid, SPEC)
    assert bank.popcounts.tolist() == [0, 0]


def test_bank_cache_roundtrip(tmp_path):
    obj = square(side=0.04)
    grid = PoseGrid((-0.005, 0.005), (-0.005, 0.005))
    bank = build_mask_bank(obj, grid, SPEC, cache_dir=tmp_path)
    files = list(tmp_path.glob("*.maskbank"))
    assert len(files) == 1
    again = build_mask_bank(obj, grid, SPEC, cache_dir=tmp_path)
    assert np.array_equal(bank.bits, again.bits)
    assert np.array_equal(bank.popcounts, again.popcounts)


def test_bank_save_load_roundtrip(tmp_path):
    obj = star_polygon(np.random.default_rng(11))
    grid = PoseGrid((-0.005, 0.005), (-0.005, 0.005))
    bank = build_mask_bank(obj, grid, SPEC)
    p = tmp_path / "bank.bin"
    bank.save(p)
    loaded = MaskBank.load(p)
    assert loaded.resolution == bank.resolution
    assert loaded.key == bank.key
    assert np.array_equal(loaded.bits, bank.bits)
    assert np.array_equal(loaded.popcounts, bank.popcounts)


def test_paper_scale_bank_builds_quickly():
    obj = square(side=0.03)
    grid = grid_for_object(obj)
    assert 5000 <= grid.size <= 9100
    t0 = time.perf_counter()
    build_mask_bank(obj, grid, SPEC)
    elapsed = time.perf_counter() - t0
    assert elapsed <= 60.0, elapsed


# ---------------------------------------------------------------------------
# single-shot likelihood


def test_likelihood_normalization_and_argmax():
    obj = star_polygon(np.random.default_rng(5))
    grid = PoseGrid((-0.01, 0.01), (-0.01, 0.01))
    bank = build_mask_bank(obj, grid, SPEC)
    mask = render_mask(obj, grid.pose(321), SPEC)
    belief = single_shot_likelihood(mask, bank)
    assert belief.shape == (grid.size,)
    assert abs(belief.sum() - 1.0) <= 1e-9
    assert (belief >= 0).all()
    assert int(np.argmax(belief)) == 321


def test_likelihood_temperature_limit_is_indicator():
    obj = star_polygon(np.random.default_rng(5))
    grid = PoseGrid((-0.01, 0.01), (-0.01, 0.01))
    bank = build_mask_bank(obj, grid, SPEC)
    mask = bank.mask(100)
    belief = single_shot_likelihood(mask, bank, temperature=1e-4)
    assert belief[100] >= 1.0 - 1e-9


def test_empty_query_spreads_over_out_of_view_cells():
    obj = square(side=0.02)
    # two far (out-of-view) cells plus one centered visible cell
    grid = PoseGrid((0.0, 1.0), (0.0, 0.0), (0.0, 0.0), dx=0.5, dtheta=1.0)
    bank = build_mask_bank(obj, grid, SPEC)
    empty = ContactMask(np.zeros((SPEC.resolution,) * 2, dtype=bool))
    belief = single_shot_likelihood(empty, bank)
    assert abs(belief[1] - belief[2]) <= 1e-9
    assert belief[1] > belief[0]


def test_self_consistency_over_small_grid():
    obj = star_polygon(np.random.default_rng(5))
    grid = PoseGrid((-0.005, 0.005), (-0.005, 0.005))
    bank = build_mask_bank(obj, grid, SPEC)
    for j in range(grid.size):
        belief = single_shot_likelihood(bank.mask(j), bank)
        assert int(np.argmax(belief)) == j


def test_symmetric_object_keeps_ambiguity():
    obj = square(side=0.04)
    grid = PoseGrid((0.0, 0.0), (0.0, 0.0))  # headings only
    bank = build_mask_bank(obj, grid, SPEC)
    mask = render_mask(obj, Pose2(0.0, 0.0, grid.pose(3).theta), SPEC)
    belief = single_shot_likelihood(mask, bank)
    # a square is invariant under quarter turns: all four partner cells tie
    partners = [3, 12, 21, 30]
    vals = belief[partners]
    assert np.all(np.abs(vals - vals[0]) <= 1e-9)
    assert vals[0] >= belief.max() - 1e-12


def test_likelihood_input_validation():
    obj = square(side=0.04)
    grid = single_cell_grid()
    bank = build_mask_bank(obj, grid, SPEC)
    with pytest.raises(ValueError):
        single_shot_likelihood(bank.mask(0), bank, temperature=0.0)
    small = ContactMask(np.zeros((8, 8), dtype=bool))
    with pytest.raises(ValueError):
        single_shot_likelihood(small, bank)
