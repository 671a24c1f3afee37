"""Synthetic worlds, conservatism drivers, reports, and the CLI.

The world generator scatters landmarks in a cubic workspace, drives a
circular camera trajectory with a frustum visibility model, and emits
per-frame box observation sets sized proportionally to landmark distance
(truth-containing by construction).  Conservatism drivers exercise each
primitive on randomized trials and count sample containment exactly.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import conformal
from .liegroup import Pose, apply, compose, exp_map, vectorize_pose
from .polytope import (
    HPolytope,
    VPolytope,
    facet_enum,
    sample_uniform,
    template_normals,
    vertex_enum,
)
from .slam import Frame, LoopClosure, Observation, SlamConfig, SlamOutput, run
from .uq_core import (
    DecomposedPoseSet,
    PosePolytope,
    compound_direct,
    compound_indirect,
    decompose_pose_set,
    backward_uq_multi,
    forward_uq,
    sample_pose_set,
)
from . import polytope as pt
from . import uq_core


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# world generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldConfig:
    workspace: float = 50.0  # cube side, meters
    n_landmarks: int = 120
    radius: float = 12.0  # circular trajectory radius
    n_frames: int = 20
    fov_h: float = 60.0  # degrees
    fov_v: float = 60.0
    depth_range: tuple = (0.5, 5.0)
    noise_coeff: float = 0.02  # box half-width per meter of distance
    seed: int = 0

    def __post_init__(self):
        if self.depth_range[0] <= 0:
            raise ConfigError("minimum depth must be positive")
        if not (0.0 < self.fov_h < 180.0 and 0.0 < self.fov_v < 180.0):
            raise ConfigError("fov must lie in (0, 180) degrees")

    @staticmethod
    def from_json_dict(d: dict) -> "WorldConfig":
        kw = dict(d)
        if "depth_range" in kw:
            kw["depth_range"] = tuple(kw["depth_range"])
        return WorldConfig(**kw)


@dataclass(frozen=True)
class WorldTruth:
    landmarks: np.ndarray  # (N, 3)
    trajectory: tuple  # of Pose


def _heading_pose(center: np.ndarray, radius: float, phi: float) -> Pose:
    pos = center + radius * np.array([math.cos(phi), math.sin(phi), 0.0])
    fwd = np.array([-math.sin(phi), math.cos(phi), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(up, fwd)
    R = np.column_stack([right, up, fwd])  # local z looks forward
    return Pose(R, pos)


def gen_world(cfg: WorldConfig):
    """Landmarks, trajectory, and per-frame observations.

    Returns (truth, frames, events).  Observation sets are boxes centered
    on the true local coordinates with half-width noise_coeff * distance,
    so they contain the truth by construction.
    """
    rng = np.random.default_rng(cfg.seed)
    center = np.full(3, cfg.workspace / 2.0)
    landmarks = rng.uniform(0.0, cfg.workspace, size=(cfg.n_landmarks, 3))
    tan_h = math.tan(math.radians(cfg.fov_h) / 2.0)
    tan_v = math.tan(math.radians(cfg.fov_v) / 2.0)
    frames = []
    poses = []
    events = []
    seen = set()
    for k in range(cfg.n_frames):
        phi = 2.0 * math.pi * k / cfg.n_frames
        T = _heading_pose(center, cfg.radius, phi)
        poses.append(T)
        obs = []
        for i, lm in enumerate(landmarks):
            p = T.R.T @ (lm - T.t)
            z = p[2]
            if not (cfg.depth_range[0] <= z <= cfg.depth_range[1]):
                continue
            if abs(p[0]) > tan_h * z or abs(p[1]) > tan_v * z:
                continue
            hw = cfg.noise_coeff * float(np.linalg.norm(p))
            obs.append(
                Observation(i, HPolytope.box(p, hw), is_new=(i not in seen))
            )
            seen.add(i)
        if not obs:
            events.append({"event": "no_visible_landmarks", "frame": k + 1})
        frames.append(Frame(k + 1, tuple(obs)))
    return WorldTruth(landmarks, tuple(poses)), frames, events


# ---------------------------------------------------------------------------
# conservatism trials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    primitive: str = "forward"  # forward | backward | compound
    n_trials: int = 6
    n_samples: int = 1000
    point_box_side: tuple = (0.08, 0.2)
    rot_half_width: tuple = (0.01, 0.02)
    trans_half_width: tuple = (0.05, 0.1)
    ellipsoid_semi_axes: tuple = (0.01, 0.05)
    n_correspondences: int = 10
    backward_mode: str = "chebyshev"
    template: str = "box_diag45"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")

    @staticmethod
    def from_json_dict(d: dict) -> "TrialConfig":
        kw = dict(d)
        for key in ("point_box_side", "rot_half_width", "trans_half_width", "ellipsoid_semi_axes"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return TrialConfig(**kw)


@dataclass
class Report:
    primitive: str
    trials: list = field(default_factory=list)
    timing_s: float = 0.0

    @property
    def containments(self) -> list:
        return [t["containment"] for t in self.trials]

    @property
    def all_contained(self) -> bool:
        return all(c == 1.0 for c in self.containments)

    def to_json_dict(self) -> dict:
        return {"primitive": self.primitive, "trials": self.trials}


def _random_rotation(rng) -> np.ndarray:
    w = rng.normal(size=3)
    w /= np.linalg.norm(w)
    return exp_map(w * rng.uniform(0.0, np.pi))


def _random_pose(rng, span: float = 1.0) -> Pose:
    return Pose(_random_rotation(rng), rng.uniform(-span, span, 3))


def _forward_trial(rng, cfg: TrialConfig, seed: int) -> dict:
    T = _random_pose(rng)
    p_center = rng.uniform(-1.0, 1.0, 3)
    point_hw = rng.uniform(*cfg.point_box_side) / 2.0
    rot_hw = rng.uniform(*cfg.rot_half_width)
    t_hw = rng.uniform(*cfg.trans_half_width)
    point_set = HPolytope.box(p_center, point_hw)
    pose_set = PosePolytope.from_pose_box(T, rot_hw, t_hw)
    out = forward_uq(point_set, pose_set, cfg.template)
    poses = sample_pose_set(pose_set, cfg.n_samples, seed=seed)
    pts = rng.uniform(p_center - point_hw, p_center + point_hw, size=(cfg.n_samples, 3))
    images = np.array([apply(Ts, ps) for Ts, ps in zip(poses, pts)])
    inside = out.contains_many(images, tol=1e-9)
    return {
        "containment": float(inside.sum()) / cfg.n_samples,
        "n_samples": cfg.n_samples,
        "violations": np.where(~inside)[0].tolist(),
        "facet_offsets": out.b.tolist(),
    }


def _sample_residual_poses(rng, T0, points, Sigma_invs, centers, n):
    """Rejection-sample poses consistent with per-point ellipsoidal residual
    bounds (the defining set of a backward trial)."""
    out = []
    theta_hi = 0.3
    delta = 0.2
    proposals = 0
    while len(out) < n:
        batch = 1024
        w = rng.normal(size=(batch, 3))
        w /= np.linalg.norm(w, axis=1)[:, None]
        th = rng.uniform(0.0, theta_hi, batch)
        dt = rng.uniform(-delta, delta, (batch, 3))
        from ._kernels import rodrigues_batch

        Rs = np.einsum("nij,jk->nik", rodrigues_batch(w, th), T0.R)
        ts = T0.t + dt
        ok = np.ones(batch, dtype=bool)
        for p, Si, q in zip(points, Sigma_invs, centers):
            res = Rs @ p + ts - q
            ok &= np.einsum("ni,ij,nj->n", res, Si, res) <= 1.0
        idx = np.where(ok)[0]
        for i in idx[: n - len(out)]:
            out.append(Pose(Rs[i], ts[i]))
        proposals += batch
        if idx.size == 0:
            theta_hi *= 0.7
            delta *= 0.8
        if proposals > 2_000_000 and not out:
            raise RuntimeError("set too thin to sample")
    return out


def _backward_trial(rng, cfg: TrialConfig, seed: int) -> dict:
    T0 = _random_pose(rng)
    A = template_normals(cfg.template, 3)
    points, pairs, Sigma_invs, centers = [], [], [], []
    for _ in range(cfg.n_correspondences):
        p = rng.uniform(-1.0, 1.0, 3)
        q = apply(T0, p)
        axes = rng.uniform(*cfg.ellipsoid_semi_axes, size=3)
        M = rng.normal(size=(3, 3))
        Q, _ = np.linalg.qr(M)
        S = Q @ np.diag(axes**2) @ Q.T
        E = pt.Ellipsoid(q, S, 1.0)
        glob = pt.enclose_ellipsoid(E, A)
        local = HPolytope.box(p, 0.0)
        pairs.append((local, glob))
        points.append(p)
        Sigma_invs.append(np.linalg.inv(S + 1e-15 * np.eye(3)))
        centers.append(q)
    out = backward_uq_multi(pairs, cfg.backward_mode)
    samples = _sample_residual_poses(rng, T0, points, Sigma_invs, centers, cfg.n_samples)
    X = np.array([vectorize_pose(T) for T in samples])
    inside = out.contains_many(X, tol=1e-9)
    return {
        "containment": float(inside.sum()) / cfg.n_samples,
        "n_samples": cfg.n_samples,
        "violations": np.where(~inside)[0].tolist(),
        "facet_offsets": out.d.tolist(),
    }


def _compound_trial(rng, cfg: TrialConfig, seed: int) -> dict:
    T1, T2 = _random_pose(rng), _random_pose(rng)
    rot_hw = rng.uniform(*cfg.rot_half_width)
    t_hw = rng.uniform(*cfg.trans_half_width)
    P1 = PosePolytope.from_pose_box(T1, rot_hw, t_hw)
    P2 = PosePolytope.from_pose_box(T2, rot_hw, t_hw)
    direct = compound_direct(P1, P2)
    D1 = decompose_pose_set(P1)
    D2 = decompose_pose_set(P2)
    indirect = compound_indirect(D1, D2, cfg.template)
    S1 = sample_pose_set(P1, cfg.n_samples, seed=seed)
    S2 = sample_pose_set(P2, cfg.n_samples, seed=seed + 1)
    composed = [compose(a, b) for a, b in zip(S1, S2)]
    X = np.array([vectorize_pose(T) for T in composed])
    in_direct = direct.contains_many(X, tol=1e-9)
    in_indirect = np.array(
        [
            indirect.rotation.contains(T.R, tol=1e-9)
            and indirect.translation.contains(T.t, tol=1e-9)
            for T in composed
        ]
    )
    inside = in_direct & in_indirect
    return {
        "containment": float(inside.sum()) / cfg.n_samples,
        "containment_direct": float(in_direct.sum()) / cfg.n_samples,
        "containment_indirect": float(in_indirect.sum()) / cfg.n_samples,
        "n_samples": cfg.n_samples,
        "violations": np.where(~inside)[0].tolist(),
        "facet_offsets": direct.d.tolist(),
    }


_TRIAL_RUNNERS = {
    "forward": _forward_trial,
    "backward": _backward_trial,
    "compound": _compound_trial,
}


def conservatism_test(cfg: TrialConfig) -> Report:
    """Randomized containment trials for one primitive; exact counts."""
    if cfg.primitive not in _TRIAL_RUNNERS:
        raise ConfigError(f"unknown primitive {cfg.primitive!r}")
    runner = _TRIAL_RUNNERS[cfg.primitive]
    report = Report(cfg.primitive)
    t0 = time.perf_counter()
    for trial in range(cfg.n_trials):
        rng = np.random.default_rng(cfg.seed + 1000 * trial)
        report.trials.append(runner(rng, cfg, seed=cfg.seed + 1000 * trial + 7))
    report.timing_s = time.perf_counter() - t0
    return report


def transformed_ball_bbox_volume(poses, center, radius: float) -> float:
    """Bounding-box volume of the union of balls B(R c + t, radius) over
    sampled poses (the sampled-pose image-spread proxy)."""
    centers = np.array([apply(T, center) for T in poses])
    lo = centers.min(axis=0) - radius
    hi = centers.max(axis=0) + radius
    return float(np.prod(hi - lo))


def compound_tightness_comparison(seed: int = 0, n_samples: int = 1000) -> dict:
    """Shared-trial spread comparison of the two compound methods using the
    union-of-transformed-balls proxy (radius 0.2) at four fixed centers."""
    rng = np.random.default_rng(seed)
    T1, T2 = _random_pose(rng), _random_pose(rng)
    P1 = PosePolytope.from_pose_box(T1, rng.uniform(0.01, 0.02), rng.uniform(0.05, 0.1))
    P2 = PosePolytope.from_pose_box(T2, rng.uniform(0.01, 0.02), rng.uniform(0.05, 0.1))
    direct = compound_direct(P1, P2)
    indirect = compound_indirect(decompose_pose_set(P1), decompose_pose_set(P2))
    poses_direct = sample_pose_set(direct, n_samples, seed=seed + 3)
    poses_indirect = sample_pose_set(indirect, n_samples, seed=seed + 4)
    out = {}
    for center in ([10.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0], [10.0, 10.0, 10.0]):
        key = "_".join(str(int(c)) for c in center)
        out[key] = {
            "direct": transformed_ball_bbox_volume(poses_direct, np.array(center), 0.2),
            "indirect": transformed_ball_bbox_volume(poses_indirect, np.array(center), 0.2),
        }
    return out


# ---------------------------------------------------------------------------
# SLAM simulation driver
# ---------------------------------------------------------------------------


def slam_sim(world_cfg: WorldConfig, slam_cfg: SlamConfig, loop_closures=()):
    """Run the pipeline on a generated world and check truth containment.

    Returns (output, check) where check counts pose/landmark containment of
    the ground truth in every emitted set.
    """
    truth, frames, events = gen_world(world_cfg)
    output = run(slam_cfg, frames, loop_closures)
    check = check_truth_containment(output, truth)
    check["world_events"] = events
    return output, check


def gauge_fixed_truth(truth: WorldTruth) -> WorldTruth:
    """Express the ground truth in the first-camera frame (the pipeline
    pins the first pose to the identity, so its outputs live there)."""
    from .liegroup import compose, inverse

    T1_inv = inverse(truth.trajectory[0])
    poses = tuple(compose(T1_inv, T) for T in truth.trajectory)
    landmarks = truth.landmarks @ T1_inv.R.T + T1_inv.t
    return WorldTruth(landmarks, poses)


def check_truth_containment(output: SlamOutput, truth: WorldTruth) -> dict:
    truth = gauge_fixed_truth(truth)
    pose_hits = []
    for entry in output.trajectory:
        T0 = truth.trajectory[entry.frame_id - 1]
        ok = entry.pose_set.contains_pose(T0, tol=1e-9)
        if entry.decomposed is not None:
            ok = ok and entry.decomposed.contains_pose(T0, tol=1e-9)
        pose_hits.append(bool(ok))
    lm_hits = {}
    for lid, entry in output.map.items():
        lm_hits[lid] = bool(entry.global_set.contains(truth.landmarks[lid], tol=1e-9))
    return {
        "poses_contained": pose_hits,
        "landmarks_contained": {str(k): v for k, v in sorted(lm_hits.items())},
        "all_contained": all(pose_hits) and all(lm_hits.values()),
    }


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _ccw_loop_2d(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull, QhullError

    if points.shape[0] < 3:
        return points
    try:
        hull = ConvexHull(points)
        return points[hull.vertices]  # counterclockwise in 2D
    except QhullError:
        return points


def _set_projection_csv(P, path: Path) -> None:
    """Two-dimensional (x, y) vertex loop of a polytopic set."""
    if isinstance(P, PosePolytope):
        if P.empty:
            path.write_text("x,y\n")
            return
        from .uq_core import _pose_lp_polytope

        verts = vertex_enum(pt.project(_pose_lp_polytope(P), [9, 10])).vertices
    elif isinstance(P, HPolytope):
        if P.empty:
            path.write_text("x,y\n")
            return
        verts = vertex_enum(P).vertices[:, :2]
        verts = _dedupe_rows(verts)
    else:
        verts = np.asarray(P.vertices)[:, :2]
    loop = _ccw_loop_2d(verts)
    lines = ["x,y"] + [f"{float(x)!r},{float(y)!r}" for x, y in loop]
    path.write_text("\n".join(lines) + "\n")


def _dedupe_rows(V: np.ndarray) -> np.ndarray:
    out = []
    for v in V:
        if all(np.linalg.norm(v - u) > 1e-9 for u in out):
            out.append(v)
    return np.array(out)


def emit_report(obj, out_dir, emit_plots: bool = False, sets: dict | None = None) -> list:
    """Write report.json (byte-stable), per-set JSON files, and optional
    projected-vertex CSVs.  Timing lives in a separate timing.json so the
    main report stays deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, Report):
        payload = obj.to_json_dict()
        timing = {"timing_s": obj.timing_s}
    elif isinstance(obj, SlamOutput):
        payload = obj.to_json_dict()
        timing = {}
    else:
        payload = obj
        timing = {}
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    written.append(out / "report.json")
    if timing:
        (out / "timing.json").write_text(json.dumps(timing, sort_keys=True) + "\n")
    if sets:
        sets_dir = out / "sets"
        sets_dir.mkdir(exist_ok=True)
        for name, S in sorted(sets.items()):
            p = sets_dir / f"{name}.json"
            p.write_text(json.dumps(S.to_json_dict(), sort_keys=True) + "\n")
            written.append(p)
        if emit_plots:
            plots = out / "plots"
            plots.mkdir(exist_ok=True)
            for name, S in sorted(sets.items()):
                try:
                    _set_projection_csv(S, plots / f"{name}.csv")
                    written.append(plots / f"{name}.csv")
                except pt.PolytopeError:
                    continue
    return written


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p) as f:
        return json.load(f)


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="polyuq",
        description="Guaranteed polytopic uncertainty quantification toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("forward", "backward", "compound", "calibrate", "conservatism", "slam-sim"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=(name != "slam-sim"))
        s.add_argument("--out", default="out")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--mode", default=None)
        s.add_argument("--emit-plots", action="store_true")
        if name == "slam-sim":
            s.add_argument("--compound", default=None, choices=["direct", "indirect"])
    return ap.parse_args(argv)


def run_cli(argv) -> int:
    try:
        args = _parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return _dispatch(args)
    except (ConfigError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "forward":
        cfg = _load_config(args.config)
        point_set = HPolytope.from_json_dict(cfg["point_set"])
        pose_set = PosePolytope.from_json_dict(cfg["pose_set"])
        out = forward_uq(point_set, pose_set, cfg.get("template", "box_diag45"))
        emit_report({"command": "forward"}, args.out, args.emit_plots, {"forward": out})
        return 0
    if args.command == "backward":
        cfg = _load_config(args.config)
        mode = args.mode or cfg.get("mode", "chebyshev")
        local = HPolytope.from_json_dict(cfg["local"])
        glob = HPolytope.from_json_dict(cfg["global"])
        out = backward_uq_multi([(local, glob)], mode)
        emit_report({"command": "backward", "mode": mode}, args.out, args.emit_plots, {"backward": out})
        return 0
    if args.command == "compound":
        cfg = _load_config(args.config)
        mode = args.mode or cfg.get("mode", "direct")
        P1 = PosePolytope.from_json_dict(cfg["P1"])
        P2 = PosePolytope.from_json_dict(cfg["P2"])
        if mode == "direct":
            out = compound_direct(P1, P2)
            sets = {"compound_direct": out}
        else:
            D = compound_indirect(decompose_pose_set(P1), decompose_pose_set(P2))
            sets = {"compound_indirect_translation": D.translation}
        emit_report({"command": "compound", "mode": mode}, args.out, args.emit_plots, sets)
        return 0
    if args.command == "calibrate":
        cfg = _load_config(args.config)
        delta = cfg.get("delta", 0.05)
        if "records" in cfg:
            records = conformal.read_records(cfg["records"])
        else:
            gen = dict(cfg.get("generator", {}))
            if args.seed is not None:
                gen["seed"] = args.seed
            if "depth_range" in gen:
                gen["depth_range"] = tuple(gen["depth_range"])
            records = conformal.generate_records(conformal.StereoGenConfig(**gen))
        scores = conformal.score_records(records)
        result = conformal.calibrate(scores, delta)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.json").write_text(
            json.dumps(result.to_json_dict(), sort_keys=True) + "\n"
        )
        return 0
    if args.command == "conservatism":
        cfg_dict = _load_config(args.config)
        if args.seed is not None:
            cfg_dict["seed"] = args.seed
        cfg = TrialConfig.from_json_dict(cfg_dict)
        report = conservatism_test(cfg)
        emit_report(report, args.out, args.emit_plots)
        return 0 if report.all_contained else 3
    if args.command == "slam-sim":
        cfg = _load_config(args.config) if args.config else {}
        world_kw = dict(cfg.get("world", {}))
        if args.seed is not None:
            world_kw["seed"] = args.seed
        world_cfg = WorldConfig.from_json_dict(world_kw)
        slam_kw = dict(cfg.get("slam", {}))
        if args.mode is not None:
            slam_kw["mode"] = args.mode
        if args.compound is not None:
            slam_kw["compound"] = args.compound
        slam_cfg = SlamConfig(**slam_kw)
        closures = [LoopClosure(tuple(c["frame_ids"]), tuple(map(tuple, c.get("matches", ())))) for c in cfg.get("loop_closures", ())]
        output, check = slam_sim(world_cfg, slam_cfg, closures)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "slam_output.json").write_text(output.to_json() + "\n")
        (out / "containment.json").write_text(json.dumps(check, sort_keys=True) + "\n")
        if args.emit_plots:
            sets = {f"pose_{e.frame_id:03d}": e.pose_set for e in output.trajectory}
            sets.update({f"landmark_{k:03d}": v.global_set for k, v in output.map.items()})
            emit_report({"command": "slam-sim"}, args.out, True, sets)
        return 0 if check["all_contained"] else 3
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    return run_cli(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
