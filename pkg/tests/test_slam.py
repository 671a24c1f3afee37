import numpy as np
import pytest

from polyuq import polytope as pt
from polyuq import simharness as sh
from polyuq import slam
from polyuq.liegroup import Pose, vectorize_pose
from polyuq.uq_core import PosePolytope


def tiny_world(seed=0, n_frames=8, n_landmarks=60):
    # small ring with enough consecutive-frame landmark overlap
    cfg = sh.WorldConfig(
        workspace=16.0,
        n_landmarks=n_landmarks,
        radius=3.0,
        n_frames=n_frames,
        fov_h=110.0,
        fov_v=110.0,
        depth_range=(0.5, 7.0),
        noise_coeff=0.02,
        seed=seed,
    )
    return sh.gen_world(cfg)


FAST = slam.SlamConfig(map_template="box")


class TestInitialize:
    def test_identity_only(self):
        entry = slam.initialize()
        x_id = vectorize_pose(Pose.identity())
        assert entry.pose_set.contains(x_id, tol=0.0)
        # any perturbation violates the paired inequalities
        x = x_id.copy()
        x[0] += 1e-6
        assert not entry.pose_set.contains(x, tol=1e-9)

    def test_sampling_returns_identity(self):
        from polyuq.uq_core import sample_pose_set

        entry = slam.initialize()
        for T in sample_pose_set(entry.pose_set, 3, seed=1):
            assert np.allclose(T.R, np.eye(3), atol=1e-9)
            assert np.allclose(T.t, 0.0, atol=1e-9)

    def test_forward_from_identity_matches_local(self):
        from polyuq.uq_core import forward_uq

        entry = slam.initialize()
        local = pt.HPolytope.box([1.0, 0.5, 2.0], 0.08)
        out = forward_uq(local, entry.pose_set, "box")
        v = pt.vertex_enum(local).vertices
        own = (v @ out.A.T).max(axis=0)
        assert (out.b >= own - 1e-12).all()
        assert (out.b <= own + 1e-5).all()


class TestLocalization:
    def test_relative_direct_contains_truth(self):
        truth, frames, _ = tiny_world(seed=1)
        truth = sh.gauge_fixed_truth(truth)
        out = slam.run(slam.SlamConfig(mode="relative", compound="direct", map_template="box"), frames)
        for entry in out.trajectory:
            T0 = truth.trajectory[entry.frame_id - 1]
            assert entry.pose_set.contains_pose(T0, tol=1e-9), entry.frame_id

    def test_relative_indirect_contains_truth_and_theta_grows(self):
        truth, frames, _ = tiny_world(seed=2)
        truth = sh.gauge_fixed_truth(truth)
        out = slam.run(
            slam.SlamConfig(mode="relative", compound="indirect", map_template="box"), frames
        )
        thetas = []
        for entry in out.trajectory:
            T0 = truth.trajectory[entry.frame_id - 1]
            assert entry.decomposed is not None
            assert entry.decomposed.contains_pose(T0, tol=1e-9), entry.frame_id
            thetas.append(entry.decomposed.rotation.radius)
        assert all(b >= a - 1e-12 for a, b in zip(thetas, thetas[1:]))

    def test_global_contains_truth(self):
        truth, frames, _ = tiny_world(seed=3)
        truth = sh.gauge_fixed_truth(truth)
        out = slam.run(slam.SlamConfig(mode="global", map_template="box"), frames)
        for entry in out.trajectory:
            T0 = truth.trajectory[entry.frame_id - 1]
            assert entry.pose_set.contains_pose(T0, tol=1e-9), entry.frame_id

    def test_lost_when_no_overlap(self):
        lm = pt.HPolytope.box([0.0, 0.0, 2.0], 0.05)
        f1 = slam.Frame(1, (slam.Observation(0, lm, True),))
        f2 = slam.Frame(2, (slam.Observation(1, lm, True),))
        with pytest.raises(slam.SlamError, match="lost at frame 2"):
            slam.run(slam.SlamConfig(mode="relative", map_template="box"), [f1, f2])


class TestMapping:
    def test_map_contains_truth(self):
        truth, frames, _ = tiny_world(seed=4)
        truth = sh.gauge_fixed_truth(truth)
        out = slam.run(slam.SlamConfig(mode="global", map_template="box"), frames)
        for lid, entry in out.map.items():
            assert entry.global_set.contains(truth.landmarks[lid], tol=1e-9), lid

    def test_all_visible_intersection_never_grows(self):
        truth, frames, _ = tiny_world(seed=5)
        truth = sh.gauge_fixed_truth(truth)
        cfg = slam.SlamConfig(mode="global", map_policy="all_visible", map_template="box")
        out = slam.run(cfg, frames)
        for lid, entry in out.map.items():
            assert entry.global_set.contains(truth.landmarks[lid], tol=1e-9)

    def test_ablation_reregistration_inflates(self):
        # re-registration without intersection must be at least as large on
        # every shared support direction (report-only comparison)
        truth, frames, _ = tiny_world(seed=6)
        base = slam.SlamConfig(mode="global", map_policy="all_visible", map_template="box")
        abl = slam.SlamConfig(
            mode="global",
            map_policy="all_visible",
            map_template="box",
            ablation_no_intersect=True,
        )
        out_base = slam.run(base, frames)
        out_abl = slam.run(abl, frames)
        revisited = [
            lid
            for lid in out_base.map
            if sum(1 for f in frames if f.get(lid) is not None) >= 2
        ]
        assert revisited
        # feedback through localization changes individual facets, so the
        # comparison is aggregate: total support size must grow without the
        # intersection, and most revisited landmarks inflate
        grew = 0
        for lid in revisited:
            b_base = out_base.map[lid].global_set.b
            b_abl = out_abl.map[lid].global_set.b
            if b_abl.sum() > b_base.sum() + 1e-9:
                grew += 1
        assert grew >= len(revisited) / 2


class TestSmoothing:
    def _run_with_closure(self, reject=False):
        truth, frames, _ = tiny_world(seed=7, n_frames=8)
        ids = [f.id for f in frames]
        matches = []
        if reject:
            # teleported match: rebind one observation to a far-away landmark
            last = frames[-1]
            wrong = None
            for obs in last.observations:
                for other in frames[0].observations:
                    if other.landmark_id != obs.landmark_id:
                        wrong = (last.id, obs.landmark_id, other.landmark_id)
                        break
                if wrong:
                    break
            assert wrong is not None
            matches = [wrong]
        lc = slam.LoopClosure(tuple(ids[-4:]), tuple(matches))
        cfg = slam.SlamConfig(mode="global", map_template="box")
        out = slam.run(cfg, frames, [lc])
        return sh.gauge_fixed_truth(truth), out

    def test_no_new_links_is_fixed_point(self):
        # a window whose matches are already in the per-frame pipeline
        # cannot increase any offset
        truth, out = self._run_with_closure(reject=False)
        events = [e for e in out.events if e["event"] == "loop_closure_applied"]
        assert events
        for entry in out.trajectory:
            T0 = truth.trajectory[entry.frame_id - 1]
            assert entry.pose_set.contains_pose(T0, tol=1e-9)
        for lid, entry in out.map.items():
            assert entry.global_set.contains(truth.landmarks[lid], tol=1e-9)

    def test_wrong_closure_rejected(self):
        truth, out = self._run_with_closure(reject=True)
        rej = [e for e in out.events if e["event"] == "loop_closure_rejected"]
        assert rej
        # state survived: truth still contained everywhere
        for entry in out.trajectory:
            T0 = truth.trajectory[entry.frame_id - 1]
            assert entry.pose_set.contains_pose(T0, tol=1e-9)

    def test_smoothing_offsets_monotone(self):
        truth, frames, _ = tiny_world(seed=8, n_frames=8)
        cfg = slam.SlamConfig(mode="global", map_template="box")
        state = slam.SlamState()
        out = slam.run(cfg, frames)
        # rerun smoothing manually and check map offsets never increase
        frames_by_id = {f.id: f for f in frames}
        st = slam.SlamState()
        st.trajectory = list(out.trajectory)
        st.map = dict(out.map)
        window = slam.LoopClosure(tuple(f.id for f in frames[-4:]))
        before = {lid: st.map[lid].global_set.b.copy() for lid in st.map}
        result = slam.smooth(window, frames_by_id, st, cfg)
        assert result[0] == "ok"
        _, map_sets, pose_sets, iters, _ = result
        for lid, new_set in map_sets.items():
            assert (new_set.b <= before[lid] + 1e-12).all()


class TestRunDeterminism:
    def test_single_frame_run(self):
        truth, frames, _ = tiny_world(seed=9, n_frames=6)
        out = slam.run(FAST, frames[:1])
        assert len(out.trajectory) == 1
        x_id = vectorize_pose(Pose.identity())
        assert out.trajectory[0].pose_set.contains(x_id, tol=0.0)
        assert set(out.map) == {o.landmark_id for o in frames[0].observations}

    def test_identical_json_outputs(self):
        truth, frames, _ = tiny_world(seed=10)
        a = slam.run(FAST, frames).to_json()
        b = slam.run(FAST, frames).to_json()
        assert a == b
