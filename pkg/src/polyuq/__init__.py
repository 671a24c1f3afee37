"""Guaranteed polytopic uncertainty quantification for 3D-3D landmark SLAM.

Set-membership pose and landmark uncertainty with certified containment:
polytope calculus, certified semidefinite bounds, three guaranteed
propagation primitives, conformal measurement calibration, and a full SLAM
pipeline with loop-closure smoothing.
"""

from .liegroup import (
    Pose,
    apply,
    compose,
    exp_map,
    geodesic_distance,
    hat,
    inverse,
    log_map,
    project_so3,
    vectorize_pose,
)
from .polytope import (
    Ball,
    Ellipsoid,
    HPolytope,
    PolytopeError,
    VPolytope,
    affine_map,
    chebyshev_ball,
    contains,
    diameter,
    enclose_ellipsoid,
    facet_enum,
    inflate,
    intersect,
    minkowski_sum,
    project,
    template_normals,
    vertex_enum,
)
from .sdp_relax import (
    SdpProblem,
    SdpResult,
    build_compound_sdp,
    build_forward_sdp,
    build_rotation_orthogonality_blocks,
    build_rotball_sdp,
    certified_lower_bound,
    certified_upper_bound,
    solve,
)
from .uq_core import (
    DecomposedPoseSet,
    PosePolytope,
    RotationBallSet,
    UqError,
    backward_uq,
    backward_uq_multi,
    compound_direct,
    compound_indirect,
    decompose_pose_set,
    forward_uq,
    inner_max_rotated_dot,
    rotball_to_polytope,
    sample_pose_set,
)
from .conformal import (
    CalibrationRecord,
    CalibrationResult,
    StereoRig,
    calibrate,
    nonconformity,
    point_uncertainty,
    triangulate,
)
from .slam import (
    Frame,
    LoopClosure,
    MapEntry,
    Observation,
    SlamConfig,
    SlamOutput,
    TrajectoryEntry,
    run,
)
from .simharness import Report, TrialConfig, WorldConfig, conservatism_test, gen_world

__version__ = "0.1.0"
