"""Guaranteed SLAM uncertainty pipeline.

Frames of polytopic landmark observations drive localization (relative
tracking + pose compound, or global tracking against the map), mapping
(forward propagation of new landmarks), and loop-closure smoothing
(alternating intersection-based refinement with empty-set rejection).

All set updates are intersections with stored sets, so every tracked
quantity is monotone non-increasing and the containment guarantee is
preserved end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .liegroup import Pose
from .polytope import HPolytope, intersect
from .uq_core import (
    DecomposedPoseSet,
    PosePolytope,
    RotationBallSet,
    backward_uq_multi,
    compound_direct,
    compound_indirect,
    decompose_pose_set,
    decomposed_to_pose_polytope,
    forward_uq,
    pose_set_feasible,
)


class SlamError(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    landmark_id: int
    local_set: HPolytope
    is_new: bool = False

    def __post_init__(self):
        if self.local_set.empty:
            raise SlamError("observation set must be nonempty")


@dataclass(frozen=True)
class Frame:
    id: int
    observations: tuple

    def __post_init__(self):
        obs = tuple(self.observations)
        ids = [o.landmark_id for o in obs]
        if len(set(ids)) != len(ids):
            raise SlamError(f"duplicate landmark ids in frame {self.id}")
        object.__setattr__(self, "observations", obs)

    def get(self, landmark_id: int) -> Observation | None:
        for o in self.observations:
            if o.landmark_id == landmark_id:
                return o
        return None


@dataclass(frozen=True)
class MapEntry:
    landmark_id: int
    global_set: HPolytope


@dataclass(frozen=True)
class TrajectoryEntry:
    frame_id: int
    pose_set: PosePolytope
    decomposed: DecomposedPoseSet | None = None


@dataclass(frozen=True)
class LoopClosure:
    """Smoothing window.  ``matches`` are (frame_id, observed landmark id,
    map landmark id); identity rebinding is derived from the frames when
    omitted.  A wrong closure is expressed by rebinding an observation to a
    different map landmark."""

    frame_ids: tuple
    matches: tuple = ()

    def __post_init__(self):
        if not self.frame_ids:
            raise SlamError("empty loop window")
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        object.__setattr__(self, "matches", tuple(tuple(m) for m in self.matches))


@dataclass(frozen=True)
class SlamConfig:
    mode: str = "relative"  # relative | global
    compound: str = "direct"  # direct | indirect
    backward_mode: str = "chebyshev"  # chebyshev | diameter
    map_policy: str = "new_only"  # new_only | all_visible
    map_template: str = "box_diag45"
    pose_template: object = None  # None -> signed coordinate directions (24 rows)
    translation_template: str = "box_diag45"
    smooth_max_iter: int = 3
    smooth_shrink_tol: float = 0.01  # stop when max relative shrink < 1%
    ablation_no_intersect: bool = False  # report-only: re-register without meet


@dataclass
class SlamState:
    trajectory: list = field(default_factory=list)
    map: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    # cached smoothing row layout per frame: rows appended by the first
    # smoothing pass keep a fixed template so later passes reduce offsets
    # elementwise
    _smooth_rows: dict = field(default_factory=dict)

    def log(self, **kv):
        self.events.append(dict(sorted(kv.items())))


@dataclass(frozen=True)
class SlamOutput:
    trajectory: tuple
    map: dict
    events: tuple

    def to_json_dict(self) -> dict:
        return {
            "trajectory": [
                {
                    "frame_id": e.frame_id,
                    "pose_set": e.pose_set.to_json_dict(),
                    "decomposed": e.decomposed.to_json_dict() if e.decomposed else None,
                }
                for e in self.trajectory
            ],
            "map": {
                str(k): self.map[k].global_set.to_json_dict() for k in sorted(self.map)
            },
            "events": list(self.events),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def initialize(frame_id: int = 1) -> TrajectoryEntry:
    """Degenerate first-frame set pinning the pose to the identity."""
    identity = Pose.identity()
    entry = TrajectoryEntry(
        frame_id,
        PosePolytope.exact(identity),
        DecomposedPoseSet(
            RotationBallSet(np.eye(3), 0.0), HPolytope.box(np.zeros(3), 0.0)
        ),
    )
    return entry


def localize_relative(
    frame: Frame, prev_frame: Frame, prev_entry: TrajectoryEntry, cfg: SlamConfig
) -> TrajectoryEntry:
    """Backward-track the relative pose from shared landmarks, then compound
    onto the previous global pose set (T_k = T_{k-1} . T_rel)."""
    pairs = []
    for obs in frame.observations:
        prev_obs = prev_frame.get(obs.landmark_id)
        if prev_obs is not None:
            pairs.append((obs.local_set, prev_obs.local_set))
    if not pairs:
        raise SlamError(f"lost at frame {frame.id}: no shared landmarks")
    rel = backward_uq_multi(pairs, cfg.backward_mode)
    if rel.empty:
        raise SlamError(f"inconsistent correspondences at frame {frame.id}")
    if cfg.compound == "direct":
        pose = compound_direct(prev_entry.pose_set, rel, template=cfg.pose_template)
        return TrajectoryEntry(frame.id, pose, None)
    if cfg.compound == "indirect":
        if prev_entry.decomposed is None:
            raise SlamError("indirect compounding requires decomposed previous entry")
        d_rel = decompose_pose_set(rel)
        d_new = compound_indirect(prev_entry.decomposed, d_rel, cfg.translation_template)
        return TrajectoryEntry(frame.id, decomposed_to_pose_polytope(d_new), d_new)
    raise SlamError(f"unknown compound mode {cfg.compound!r}")


def localize_global(frame: Frame, state: SlamState, cfg: SlamConfig) -> TrajectoryEntry:
    """Backward-track the global pose directly against mapped landmarks."""
    pairs = []
    for obs in frame.observations:
        entry = state.map.get(obs.landmark_id)
        if entry is not None:
            pairs.append((obs.local_set, entry.global_set))
    if not pairs:
        raise SlamError(f"lost at frame {frame.id}: no mapped landmarks visible")
    pose = backward_uq_multi(pairs, cfg.backward_mode)
    if pose.empty:
        raise SlamError(f"inconsistent correspondences at frame {frame.id}")
    return TrajectoryEntry(frame.id, pose, None)


def map_update(
    frame: Frame, entry: TrajectoryEntry, state: SlamState, cfg: SlamConfig
) -> dict:
    """Forward-propagate observations into global landmark sets.

    Returns the delta {landmark_id: new global set}.  Existing entries are
    replaced by the intersection of the fresh forward set with the stored
    one (monotone and guarantee-preserving); the ablation flag skips the
    intersection to reproduce re-registration growth for reporting.
    """
    delta = {}
    for obs in frame.observations:
        known = obs.landmark_id in state.map
        if cfg.map_policy == "new_only" and known:
            continue
        fwd = forward_uq(obs.local_set, entry.pose_set, cfg.map_template)
        if known and not cfg.ablation_no_intersect:
            merged = intersect(state.map[obs.landmark_id].global_set, fwd, prune=False)
            if merged.empty:
                state.log(
                    frame=frame.id,
                    event="map_intersection_empty",
                    landmark=obs.landmark_id,
                )
                continue
            delta[obs.landmark_id] = merged
        else:
            delta[obs.landmark_id] = fwd
    return delta


def _window_matches(window: LoopClosure, frames_by_id: dict, state: SlamState):
    if window.matches:
        return list(window.matches)
    out = []
    for fid in window.frame_ids:
        frame = frames_by_id[fid]
        for obs in frame.observations:
            if obs.landmark_id in state.map:
                out.append((fid, obs.landmark_id, obs.landmark_id))
    return out


def smooth(
    window: LoopClosure,
    frames_by_id: dict,
    state: SlamState,
    cfg: SlamConfig,
    trace: list | None = None,
):
    """Alternating intersection refinement over the loop window.

    Per iteration every matched map point is refreshed by forward
    propagation from each associated frame, then every window pose is
    refreshed by backward tracking from all matched points; both families
    are intersected with their stored sets, so offsets never increase.
    Stops after ``smooth_max_iter`` iterations or when the largest relative
    offset shrink drops below ``smooth_shrink_tol``.

    Returns ("ok", map_delta, pose_delta, iterations) or
    ("rejected", kind, entity_id) when an intersection empties, which
    flags the closure as incorrect.
    """
    matches = _window_matches(window, frames_by_id, state)
    if not matches:
        return ("ok", {}, {}, 0, {})
    map_sets = {mid: state.map[mid].global_set for _, _, mid in matches if mid in state.map}
    pose_sets = {
        e.frame_id: e.pose_set for e in state.trajectory if e.frame_id in window.frame_ids
    }
    smooth_rows = dict(state._smooth_rows)
    for it in range(1, cfg.smooth_max_iter + 1):
        shrink = 0.0
        # map refresh from every associated frame
        for mid in sorted(map_sets):
            current = map_sets[mid]
            for fid, lid, mid2 in matches:
                if mid2 != mid or fid not in pose_sets:
                    continue
                obs = frames_by_id[fid].get(lid)
                if obs is None:
                    continue
                fwd = forward_uq(obs.local_set, pose_sets[fid], cfg.map_template)
                merged = intersect(current, fwd, prune=False)
                if merged.empty:
                    return ("rejected", "landmark", mid)
                shrink = max(shrink, _rel_shrink(current.b, merged.b))
                current = merged
            map_sets[mid] = current
        # pose refresh from all matched points
        for fid in window.frame_ids:
            pairs = []
            for fid2, lid, mid in matches:
                if fid2 != fid or mid not in map_sets:
                    continue
                obs = frames_by_id[fid].get(lid)
                if obs is not None:
                    pairs.append((obs.local_set, map_sets[mid]))
            if not pairs or fid not in pose_sets:
                continue
            refreshed = backward_uq_multi(pairs, cfg.backward_mode, prune=False)
            if refreshed.empty:
                return ("rejected", "pose", fid)
            stored = pose_sets[fid]
            n_tail = refreshed.H.shape[0]
            reuse_tail = (
                smooth_rows.get(fid) == n_tail
                and stored.H.shape[0] > n_tail
                and np.allclose(stored.H[-n_tail:], refreshed.H, atol=1e-12)
            )
            if reuse_tail:
                d = stored.d.copy()
                tail = slice(d.shape[0] - n_tail, d.shape[0])
                new_tail = np.minimum(d[tail], refreshed.d)
                shrink = max(shrink, _rel_shrink(d[tail], new_tail))
                d[tail] = new_tail
                candidate = PosePolytope(stored.H, d)
            else:
                candidate = PosePolytope(
                    np.vstack([stored.H, refreshed.H]),
                    np.concatenate([stored.d, refreshed.d]),
                )
                smooth_rows[fid] = n_tail
                shrink = 1.0  # representation extended; always iterate again
            if not pose_set_feasible(candidate):
                return ("rejected", "pose", fid)
            pose_sets[fid] = candidate
        if trace is not None:
            trace.append(
                {
                    "iteration": it,
                    "map": {mid: s.b.copy() for mid, s in map_sets.items()},
                    "poses": {fid: p.d.copy() for fid, p in pose_sets.items()},
                }
            )
        if shrink < cfg.smooth_shrink_tol:
            break
    return ("ok", map_sets, pose_sets, it, smooth_rows)


def _rel_shrink(old: np.ndarray, new: np.ndarray) -> float:
    return float(np.max((old - new) / np.maximum(np.abs(old), 1e-12)))


def run(cfg: SlamConfig, frames, loop_closures=()) -> SlamOutput:
    """Full pipeline over an ordered frame sequence.

    ``loop_closures`` maps closure windows keyed by their last frame id;
    smoothing runs when that frame completes.  Rejected closures leave the
    state untouched and are logged.  Deterministic: no internal randomness.
    """
    frames = list(frames)
    if not frames:
        raise SlamError("no frames")
    frames_by_id = {f.id: f for f in frames}
    closures_by_frame = {}
    for lc in loop_closures:
        closures_by_frame.setdefault(max(lc.frame_ids), []).append(lc)
    state = SlamState()
    first = frames[0]
    entry = initialize(first.id)
    state.trajectory.append(entry)
    for lid, new_set in map_update(first, entry, state, cfg).items():
        state.map[lid] = MapEntry(lid, new_set)
    for k in range(1, len(frames)):
        frame = frames[k]
        if cfg.mode == "relative":
            entry = localize_relative(frame, frames[k - 1], state.trajectory[-1], cfg)
        elif cfg.mode == "global":
            entry = localize_global(frame, state, cfg)
        else:
            raise SlamError(f"unknown localization mode {cfg.mode!r}")
        state.trajectory.append(entry)
        for lid, new_set in map_update(frame, entry, state, cfg).items():
            state.map[lid] = MapEntry(lid, new_set)
        for lc in closures_by_frame.get(frame.id, []):
            result = smooth(lc, frames_by_id, state, cfg)
            if result[0] == "rejected":
                _, kind, entity = result
                state.log(
                    frame=frame.id,
                    event="loop_closure_rejected",
                    entity_kind=kind,
                    entity_id=entity,
                )
                continue
            _, map_sets, pose_sets, iters, smooth_rows = result
            state._smooth_rows.update(smooth_rows)
            for mid, s in map_sets.items():
                state.map[mid] = MapEntry(mid, s)
            state.trajectory = [
                TrajectoryEntry(e.frame_id, pose_sets.get(e.frame_id, e.pose_set), e.decomposed)
                for e in state.trajectory
            ]
            state.log(frame=frame.id, event="loop_closure_applied", iterations=iters)
    return SlamOutput(tuple(state.trajectory), dict(state.map), tuple(state.events))
