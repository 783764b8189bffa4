import itertools
import json
import math

import numpy as np
import pytest

import viewplan.planner as planner
from viewplan.completer import OracleCompleter, PassthroughCompleter
from viewplan.errors import DegenerateRender, InvalidCount, NotEnoughCandidates, ValidationError
from viewplan.geometry import CameraIntrinsics, Pose, look_at
from viewplan.metrics import surface_coverage
from viewplan.planner import (
    PlannerConfig,
    SearchSpace,
    build_search_space,
    candidate_indices,
    circular_baseline_trajectory,
    plan_and_synthesize,
    sample_candidates,
    select_nbv,
    utility,
)
from viewplan.pointcloud import ColoredPointCloud
from viewplan.renderer import HoleMask, RenderOutput, render

from conftest import random_pose


def flat_render(depth):
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.isinf(depth).astype(np.uint8)
    return RenderOutput(np.zeros(depth.shape + (3,)), depth, HoleMask(mask))


def unit_space(**kw):
    return SearchSpace(np.array([0.0, 0.0, 3.0]), 3.0, **kw)


class TestSearchSpace:
    def test_radius_is_center_depth(self):
        k = CameraIntrinsics(50.0, 8, 6)
        space = build_search_space(flat_render(np.full((6, 8), 3.0)), Pose.identity(), k)
        assert space.radius == 3.0
        np.testing.assert_allclose(space.center, [0, 0, 3.0], atol=1e-15)

    def test_median_fallback(self):
        k = CameraIntrinsics(10.0, 3, 3)
        depth = np.full((3, 3), np.inf)
        depth.flat[[0, 2, 3, 6, 8]] = [5, 1, 4, 2, 3]
        space = build_search_space(flat_render(depth), Pose.identity(), k)
        assert space.radius == 3.0

    def test_all_holes(self):
        k = CameraIntrinsics(10.0, 4, 4)
        with pytest.raises(DegenerateRender):
            build_search_space(flat_render(np.full((4, 4), np.inf)), Pose.identity(), k)

    def test_center_follows_reference_pose(self, rng):
        k = CameraIntrinsics(50.0, 8, 6)
        pose = random_pose(rng)
        space = build_search_space(flat_render(np.full((6, 8), 2.5)), pose, k)
        np.testing.assert_allclose(space.center, pose.position + 2.5 * pose.forward, atol=1e-12)
        # the reference camera sits at azimuth 0, elevation 0
        az, el = space.angles_of(pose.position)
        assert abs(az) < 1e-12 and abs(el) < 1e-12

    def test_grid_on_sphere_and_looking_at_center(self, rng):
        space = build_search_space(flat_render(np.full((6, 8), 4.0)), random_pose(rng), CameraIntrinsics(50.0, 8, 6))
        poses = space.grid_poses()
        assert len(poses) == 48
        for p in poses:
            assert abs(np.linalg.norm(p.position - space.center) - space.radius) < 1e-9
            to_center = (space.center - p.position) / space.radius
            np.testing.assert_allclose(p.forward, to_center, atol=1e-12)

    def test_grid_spans_quarter_sphere(self):
        az, el = unit_space().grid_angles()
        np.testing.assert_allclose(np.degrees(az[[0, -1]]), [-90, 90])
        np.testing.assert_allclose(np.degrees(el), [0, 22.5, 45, 67.5])
        assert len(set(np.round(az, 12))) == 12

    def test_halves(self):
        s = unit_space()
        assert s.half("left").azimuth_range == (-math.pi / 2, 0.0)
        assert s.half("right").azimuth_range == (0.0, math.pi / 2)
        with pytest.raises(ValidationError):
            s.half("up")

    def test_degenerate_range(self):
        with pytest.raises(ValidationError):
            unit_space(azimuth_range=(0.5, 0.5))
        with pytest.raises(ValidationError):
            SearchSpace(np.zeros(3), 0.0)


class TestUtility:
    @pytest.mark.parametrize(
        "ratio,theta,expect", [(0.2, 0.6, 0.2), (0.8, 0.6, 1 - 0.8), (0.0, 0.3, 0.0), (0.6, 0.6, 0.6), (1.0, 0.6, 0.0)]
    )
    def test_examples(self, ratio, theta, expect):
        assert utility(ratio, theta) == expect

    def test_maximised_at_threshold_from_one_half(self):
        rs = np.linspace(0, 1, 1001)
        for theta in (0.5, 0.6, 0.9):
            vals = [utility(r, theta) for r in rs]
            assert rs[int(np.argmax(vals))] == pytest.approx(theta, abs=1e-12)

    def test_below_one_half_peak_is_just_past_threshold(self):
        # the second branch starts at 1 - theta > theta, so the peak sits on the first grid point past theta
        rs = np.linspace(0, 1, 1001)
        vals = [utility(r, 0.3) for r in rs]
        assert rs[int(np.argmax(vals))] == pytest.approx(0.301, abs=1e-12)


class TestCandidates:
    def setup_method(self):
        self.space = unit_space()
        self.grid = self.space.grid_poses()

    def test_five_distinct_excluding_current(self):
        current = self.grid[13]
        cands = sample_candidates(self.space, current, 5)
        assert len(cands) == 5
        pos = np.array([c.position for c in cands])
        assert len({tuple(np.round(p, 9)) for p in pos}) == 5
        assert np.min(np.linalg.norm(pos - current.position, axis=1)) > 1e-6
        for c in cands:
            assert abs(np.linalg.norm(c.position - self.space.center) - 3.0) < 1e-9

    def test_deterministic(self):
        a = sample_candidates(self.space, self.grid[20], 5)
        b = sample_candidates(self.space, self.grid[20], 5)
        assert all(x == y for x, y in zip(a, b))

    def test_from_every_node(self):
        for i, p in enumerate(self.grid):
            idx = candidate_indices(self.space, p, 5, 30.0)
            assert i not in idx and len(set(idx)) == 5

    def test_neighbourhood_widens(self):
        # a 1 degree neighbourhood holds nothing; the nearest K are used instead
        idx = candidate_indices(self.space, self.grid[5], 3, 1.0)
        assert len(idx) == 3

    def test_stratified_over_azimuth(self):
        idx = candidate_indices(self.space, self.grid[5], 4, 60.0)
        cols = [j % self.space.grid_azimuth for j in idx]
        assert len(set(cols)) >= 3

    def test_too_many(self):
        with pytest.raises(NotEnoughCandidates):
            sample_candidates(self.space, self.grid[0], 48)
        assert len(sample_candidates(self.space, self.grid[0], 47)) == 47

    def test_k_must_be_positive(self):
        with pytest.raises(InvalidCount):
            sample_candidates(self.space, self.grid[0], 0)


class TestSelectNbv:
    def _fake_masks(self, monkeypatch, ratios):
        """Candidate ``i`` is translated by ``i`` along x; its mask has the given hole ratio."""
        def fake(cloud, pose, k, radius=1):
            i = int(round(pose.translation[0]))
            m = np.zeros(100, dtype=np.uint8)
            m[: int(round(ratios[i] * 100))] = 1
            return HoleMask(m.reshape(10, 10))
        monkeypatch.setattr(planner, "render_mask", fake)
        return [Pose(np.eye(3), [i, 0, 0]) for i in range(len(ratios))]

    def test_example(self, monkeypatch):
        cands = self._fake_masks(monkeypatch, [0.1, 0.3, 0.5, 0.7, 0.9])
        sel = select_nbv(ColoredPointCloud.empty(), cands, CameraIntrinsics(10.0, 10, 10), 0.6)
        assert sel.index == 2
        assert sel.utilities == pytest.approx([0.1, 0.3, 0.5, 0.3, 0.1], abs=1e-15)

    def test_ties_take_lowest_index(self, monkeypatch):
        cands = self._fake_masks(monkeypatch, [0.4] * 5)
        assert select_nbv(ColoredPointCloud.empty(), cands, CameraIntrinsics(10.0, 10, 10), 0.6).index == 0
        cands = self._fake_masks(monkeypatch, [0.2, 0.5, 0.1, 0.5])
        assert select_nbv(ColoredPointCloud.empty(), cands, CameraIntrinsics(10.0, 10, 10), 0.6).index == 1

    def test_matches_exhaustive(self, rng):
        k = CameraIntrinsics(20.0, 16, 16)
        for _ in range(20):
            n = int(rng.integers(10, 300))
            cloud = ColoredPointCloud(rng.normal([0, 0, 3], 1.0, (n, 3)), rng.random((n, 3)))
            cands = [random_pose(rng, 0.3) for _ in range(int(rng.integers(1, 8)))]
            theta = float(rng.uniform(0.05, 0.95))
            sel = select_nbv(cloud, cands, k, theta)
            ratios = [float(np.mean(render(cloud, c, k, 1).depth == np.inf)) for c in cands]
            utils = [r if r <= theta else 1 - r for r in ratios]
            assert sel.index == int(np.argmax(utils))
            assert sel.ratios == pytest.approx(ratios, abs=0)

    def test_empty_candidates(self):
        with pytest.raises(ValidationError):
            select_nbv(ColoredPointCloud.empty(), [], CameraIntrinsics(10.0, 4, 4), 0.5)


class TestPlanLoop:
    @pytest.fixture
    def setup(self, occluder_setup, occluder):
        k, init, ref_rgb = occluder_setup
        space = build_search_space(render(init, occluder.reference_pose, k), occluder.reference_pose, k)
        return k, init, ref_rgb, space

    def test_zero_steps_gives_one_segment(self, setup, occluder):
        k, init, ref_rgb, space = setup
        cfg = PlannerConfig(max_steps=0, frames_per_segment=6)
        res = plan_and_synthesize(init, (ref_rgb, occluder.reference_pose), k, cfg, space, PassthroughCompleter())
        assert len(res.records) == 1 and len(res.frames) == 6 and len(res.masks) == 6

    def test_passthrough_leaves_cloud(self, setup, occluder):
        k, init, ref_rgb, space = setup
        cfg = PlannerConfig(max_steps=2, frames_per_segment=4)
        res = plan_and_synthesize(init, (ref_rgb, occluder.reference_pose), k, cfg, space, PassthroughCompleter())
        assert res.cloud.same_as(init)
        assert len(res.records) == 3

    def test_oracle_grows_coverage(self, setup, occluder):
        k, init, ref_rgb, space = setup
        cfg = PlannerConfig(max_steps=1, frames_per_segment=4)
        cov = [surface_coverage(init, occluder, 4000)]
        res = plan_and_synthesize(
            init, (ref_rgb, occluder.reference_pose), k, cfg, space.half("left"), OracleCompleter(occluder),
            on_step=lambda rec, cloud: cov.append(surface_coverage(cloud, occluder, 4000)),
        )
        assert len(cov) == 3
        assert all(b >= a for a, b in zip(cov, cov[1:]))
        assert cov[-1] > cov[0]
        for rec in res.records:
            assert rec.candidate_utilities[rec.chosen_index] == max(rec.candidate_utilities)
            assert rec.segment_trajectory.poses[-1] == rec.chosen_pose
        # each segment starts where the previous one ended
        assert res.records[1].segment_trajectory.poses[0] == res.records[0].chosen_pose
        assert res.frames[0] is not None and np.array_equal(res.frames[0], ref_rgb)

    def test_record_json(self, setup, occluder):
        k, init, ref_rgb, space = setup
        res = plan_and_synthesize(
            init, (ref_rgb, occluder.reference_pose), k, PlannerConfig(max_steps=0, frames_per_segment=2),
            space, PassthroughCompleter(),
        )
        d = json.loads(json.dumps(res.records[0].to_dict()))
        assert d["chosen_index"] == res.records[0].chosen_index
        assert len(d["candidate_ratios"]) == 5 and len(d["segment_poses"]) == 2


class TestBaseline:
    def setup_method(self):
        self.ref = look_at([0.0, 0.0, 0.0], [0.0, 0.0, 3.0])
        self.space = unit_space()

    def test_sixty_degrees(self):
        traj = circular_baseline_trajectory(self.ref, self.space, 3, 20.0)
        assert len(traj) == 3
        a = self.ref.position - self.space.center
        for i, p in enumerate(traj.poses, 1):
            b = p.position - self.space.center
            ang = math.degrees(math.acos(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1, 1)))
            assert abs(ang - 20.0 * i) < 1e-9
            assert abs(b[1]) < 1e-12  # stays in the horizontal plane
            assert abs(np.linalg.norm(b) - 3.0) < 1e-9

    def test_direction(self):
        right = circular_baseline_trajectory(self.ref, self.space, 1, 20.0).poses[0]
        left = circular_baseline_trajectory(self.ref, self.space, 1, -20.0).poses[0]
        assert right.position[0] > 0 > left.position[0]

    def test_zero_step(self):
        traj = circular_baseline_trajectory(self.ref, self.space, 4, 0.0)
        for p in traj.poses:
            assert p.allclose(self.ref, 1e-12)

    def test_steps_must_be_positive(self):
        with pytest.raises(InvalidCount):
            circular_baseline_trajectory(self.ref, self.space, 0, 20.0)


class TestConfig:
    def test_json_keys(self, tmp_path):
        cfg = PlannerConfig(max_steps=2, candidates_per_step=4, threshold=0.5, frames_per_segment=9, voxel_size=0.01)
        d = cfg.to_dict()
        assert {"N", "K", "theta", "L", "voxel_rho", "neighborhood_deg", "grid_azimuth",
                "grid_elevation", "splat_radius_px", "seed"} == set(d)
        (tmp_path / "c.json").write_text(json.dumps(d))
        assert PlannerConfig.load(tmp_path / "c.json") == cfg

    def test_defaults(self):
        cfg = PlannerConfig()
        assert (cfg.max_steps, cfg.candidates_per_step, cfg.threshold, cfg.frames_per_segment) == (3, 5, 0.6, 25)

    @pytest.mark.parametrize(
        "bad", [{"K": 0}, {"theta": 1.0}, {"theta": 0.0}, {"L": 1}, {"N": -1}, {"splat_radius_px": -1}, {"bogus": 1}]
    )
    def test_rejects(self, bad):
        with pytest.raises(ValidationError):
            PlannerConfig.from_dict(bad)


def test_utility_table_is_exact():
    for r, t in itertools.product(np.linspace(0, 1, 101), np.linspace(0.01, 0.99, 99)):
        assert utility(r, t) == (r if r <= t else 1.0 - r)
