"""Adaptive seeding: weight formulas, sampling behavior, scene assembly."""

import numpy as np
import pytest

from gaborsplat import seeding
from gaborsplat.config import InitConfig, PipelineConfig
from gaborsplat.dataio import FrameBundle


def make_bundle(rng, index=0, size=32, f_count=4, with_tracks=True, mask=None):
    h = w = size
    rgb = rng.uniform(0, 1, (h, w, 3))
    depth = rng.uniform(1, 5, (h, w))
    if mask is None:
        mask = np.zeros((h, w))
    if with_tracks:
        ids = np.arange(3)
        xy = rng.uniform(2, size - 2, (3, 2))
        vis = np.ones(3)
    else:
        ids = np.zeros(0, dtype=int)
        xy = np.zeros((0, 2))
        vis = np.zeros(0)
    return FrameBundle(index=index, time=index / max(f_count - 1, 1), rgb=rgb,
                       depth=depth, mask=mask, track_ids=ids, track_xy=xy,
                       track_vis=vis)


def point(tau=1.0, rho=1.0, boundary=0.0):
    return seeding.CandidatePoint(pixel=(4.5, 6.5), frame=0, depth=2.0, tau=tau,
                                  rho=rho, grid_cell=(0, 0),
                                  boundary_strength=boundary)


class TestWeightFormulas:
    def test_base_probability_unit_example(self):
        assert seeding.base_probability(point(tau=1, rho=1), 1.0, 0.0) == pytest.approx(2.0)

    def test_base_probability_large_tau_limit(self):
        w = seeding.base_probability(point(tau=1e12, rho=1), 0.0, 0.0)
        assert w == pytest.approx(0.0, abs=1e-11)

    def test_base_probability_density_monotone(self):
        lo = seeding.base_probability(point(rho=2.0), 0.5, 1e-6)
        hi = seeding.base_probability(point(rho=1.0), 0.5, 1e-6)
        assert lo < hi

    def test_base_probability_positive_finite(self, rng):
        for _ in range(50):
            w = seeding.base_probability(
                point(tau=float(rng.uniform(1, 50)), rho=float(rng.uniform(0.01, 100))),
                float(rng.uniform(0, 1)), 1e-6)
            assert 0.0 < w < np.inf

    def test_grid_modulate_zero_count_unchanged(self):
        assert seeding.grid_modulate(0.7, 0.0, 1.0) == 0.7

    def test_grid_modulate_unit_example(self):
        assert seeding.grid_modulate(1.0, 9.0, 1.0) == pytest.approx(0.1)

    def test_grid_modulate_strictly_decreasing(self):
        vals = [seeding.grid_modulate(1.0, c, 0.7) for c in range(6)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_boundary_compensate_interior_unchanged(self):
        assert seeding.boundary_compensate(0.4, 0.0, 2.0) == 0.4

    def test_boundary_compensate_unit_example(self):
        assert seeding.boundary_compensate(1.0, 1.0, 2.0) == pytest.approx(3.0)

    def test_boundary_compensate_never_decreases(self, rng):
        for _ in range(30):
            w = float(rng.uniform(0.1, 2))
            s = float(rng.uniform(0, 3))
            assert seeding.boundary_compensate(w, s, 2.0) >= w


class TestSequentialSampling:
    def _cells_only(self, cells, grid=4):
        n = len(cells)
        return seeding.CandidateSet(
            xy=np.zeros((n, 2)), frame=np.zeros(n, int), depth=np.ones(n),
            tau=np.ones(n), rho=np.ones(n), cell=np.asarray(cells),
            boundary=np.zeros(n), point_id=np.full(n, -1, int),
            color=np.zeros((n, 3)), grid_cells=grid * grid)

    def test_draws_without_replacement(self, rng):
        cand = self._cells_only([0] * 10)
        chosen = seeding.sample_candidates(cand, 10, InitConfig(), rng)
        assert sorted(chosen.tolist()) == list(range(10))

    def test_sequential_cell_reweighting(self, rng):
        # weights of one cell strictly decrease as it accumulates draws
        cfg = InitConfig(lambda_g=1.0)
        w0 = seeding.grid_modulate(1.0, 0, cfg.lambda_g)
        seq = [seeding.grid_modulate(1.0, c, cfg.lambda_g) for c in range(5)]
        assert seq[0] == w0 and all(a > b for a, b in zip(seq, seq[1:]))

    def test_coverage_improves_with_grid_modulation(self):
        # clustered candidates: most in one cell, few spread out
        cells = [0] * 400 + list(range(1, 16)) * 2
        cfg_on = InitConfig(lambda_g=1.0)
        cfg_off = InitConfig(lambda_g=1e-12)
        occupied_on, occupied_off = [], []
        for seed in range(20):
            cand = self._cells_only(cells)
            rng = np.random.default_rng(seed)
            sel = seeding.sample_candidates(cand, 40, cfg_on, rng)
            occupied_on.append(len(np.unique(cand.cell[sel])))
            rng = np.random.default_rng(seed)
            sel = seeding.sample_candidates(cand, 40, cfg_off, rng)
            occupied_off.append(len(np.unique(cand.cell[sel])))
        assert np.mean(occupied_on) >= np.mean(occupied_off)

    def test_forced_candidates_seeded_first(self, rng):
        cand = self._cells_only([0] * 20)
        chosen = seeding.sample_candidates(cand, 5, InitConfig(), rng,
                                           forced=np.array([17, 3]))
        assert chosen[0] == 17 and chosen[1] == 3

    def test_request_exceeding_pool_takes_all(self, rng):
        cand = self._cells_only([0, 1, 2])
        chosen = seeding.sample_candidates(cand, 50, InitConfig(), rng)
        assert sorted(chosen.tolist()) == [0, 1, 2]

    def test_empty_pool_raises(self, rng):
        cand = self._cells_only([])
        with pytest.raises(ValueError):
            seeding.sample_candidates(cand, 1, InitConfig(), rng)


class TestGatherCandidates:
    def test_density_positive_and_tau_from_visibility(self, rng):
        bundles = [make_bundle(rng, i, f_count=4) for i in range(4)]
        cand = seeding.gather_candidates(bundles, InitConfig())
        assert np.all(cand.rho > 0)
        tracked = cand.point_id >= 0
        assert np.all(cand.tau[tracked] == 4.0)   # visible in all four frames
        assert np.all(cand.tau[~tracked] == 1.0)

    def test_boundary_strength_on_disk_edge(self, rng):
        mask = np.zeros((32, 32))
        yy, xx = np.mgrid[0:32, 0:32]
        mask[(yy - 16) ** 2 + (xx - 16) ** 2 <= 64] = 1.0
        bundles = [make_bundle(rng, 0, with_tracks=False, mask=mask)]
        cand = seeding.gather_candidates(bundles, InitConfig())
        edge = cand.boundary > 0
        assert np.any(edge)
        # edge candidates outweigh interior ones at equal tau and rho
        cfg = InitConfig()
        w_edge = seeding.boundary_compensate(1.0, float(cand.boundary[edge].max()), cfg.lambda_b)
        assert w_edge > 1.0


class TestBuildInitialScene:
    def test_back_projection_exact(self, rng):
        bundles = [make_bundle(rng, i, f_count=3) for i in range(3)]
        scene = seeding.build_initial_scene(bundles, 40, PipelineConfig(), seed=0)
        cand = seeding.gather_candidates(bundles, PipelineConfig().init)
        # every primitive sits exactly on a candidate with matching depth
        for i in range(scene.count):
            match = np.flatnonzero(
                (np.abs(cand.xy - scene.mu_base[i, :2].astype(np.float32)).max(axis=1) < 1e-5))
            assert len(match) > 0
            assert np.any(np.abs(cand.depth[match].astype(np.float32)
                                 - scene.mu_base[i, 2]) < 1e-6)

    def test_binding_is_bijection(self, rng):
        bundles = [make_bundle(rng, i, f_count=3) for i in range(3)]
        scene = seeding.build_initial_scene(bundles, 50, PipelineConfig(), seed=0)
        bound = scene.track_binding[scene.track_binding >= 0]
        assert len(bound) == len(np.unique(bound)) == 3

    def test_pure_gaussian_start(self, rng):
        bundles = [make_bundle(rng, 0, f_count=1)]
        scene = seeding.build_initial_scene(bundles, 30, PipelineConfig(), seed=1)
        assert np.all(scene.omegas() == 0.0)
        assert np.allclose(scene.opacities(), 0.5)
        assert np.all(scene.scales() > 0)
        assert np.allclose(scene.trans_ctrl, 0) and np.allclose(scene.rot_ctrl, 0)

    def test_keyframe_rule(self):
        assert len(seeding.keyframe_grid(8)) == 4
        assert len(seeding.keyframe_grid(1)) == 4
        assert len(seeding.keyframe_grid(40)) == 10

    def test_zero_target_rejected(self, rng):
        with pytest.raises(ValueError):
            seeding.build_initial_scene([make_bundle(rng, 0)], 0, PipelineConfig())

    def test_oversized_target_takes_all_candidates(self, rng):
        bundles = [make_bundle(rng, 0, size=8, f_count=1, with_tracks=False)]
        scene = seeding.build_initial_scene(bundles, 10000, PipelineConfig(), seed=0)
        assert scene.count == 64

    def test_grid_coverage_uniform_chi_square(self, rng):
        # uniform frame, uniform depth: 16x16 cell occupancy should pass a
        # chi-square uniformity test at alpha = 0.01 for 4096 draws
        from scipy.stats import chisquare
        h = w = 128
        bundle = FrameBundle(index=0, time=0.0, rgb=np.full((h, w, 3), 0.5),
                             depth=np.ones((h, w)), mask=np.zeros((h, w)))
        scene = seeding.build_initial_scene([bundle], 4096, PipelineConfig(), seed=3)
        cells_x = np.minimum((scene.mu_base[:, 0] / (w / 16)).astype(int), 15)
        cells_y = np.minimum((scene.mu_base[:, 1] / (h / 16)).astype(int), 15)
        counts = np.bincount(cells_y * 16 + cells_x, minlength=256)
        _, pvalue = chisquare(counts)
        assert pvalue > 0.01
