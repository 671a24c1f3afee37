"""Semidefinite relaxations with certified bounds.

Three problem builders produce explicit symmetric data matrices for:

* the rigid-action support problem over one pose set (dim 13),
* the pose-composition support problem over two pose sets (dim 25),
* the rotation-trace range problem over a rotation-coefficient polytope
  (dim 10).

Solving goes through a pluggable conic-solver contract (one PSD cone,
linear equalities, linear inequalities).  Bounds are taken from the
solver's *dual* objective plus a relative inflation, never from the primal
value alone, so the containment guarantees survive solver tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

DEFAULT_INFLATION_REL = 1e-6
_SYM_TOL = 1e-12

STATUS_OPTIMAL = "optimal"
STATUS_NEAR_OPTIMAL = "near_optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_FAILURE = "numerical_failure"


class SdpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdpProblem:
    """max (or min) tr(objective @ X) over X >= 0 with [X][anchor] = 1.

    equalities hold as tr(M X) = rhs; every inequality matrix F satisfies
    tr(F X) <= 0.  ``sense`` selects the optimization direction; "min" is
    used by the rotation-trace problem, everything else maximizes.
    """

    dim: int
    objective: np.ndarray
    equalities: tuple
    inequalities: tuple
    anchor: tuple[int, int]
    sense: str = "max"

    def __post_init__(self):
        obj = _check_sym(self.objective, self.dim, "objective")
        eqs = tuple((_check_sym(M, self.dim, "equality"), float(r)) for M, r in self.equalities)
        ineqs = tuple(_check_sym(M, self.dim, "inequality") for M in self.inequalities)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "equalities", eqs)
        object.__setattr__(self, "inequalities", ineqs)
        if self.sense not in ("max", "min"):
            raise SdpError(f"bad sense {self.sense!r}")

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "sense": self.sense,
            "anchor": list(self.anchor),
            "objective": self.objective.tolist(),
            "equalities": [[M.tolist(), r] for M, r in self.equalities],
            "inequalities": [M.tolist() for M in self.inequalities],
        }


def _check_sym(M, dim, what) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (dim, dim):
        raise SdpError(f"{what} matrix has shape {M.shape}, expected {(dim, dim)}")
    if np.abs(M - M.T).max() > _SYM_TOL:
        raise SdpError(f"{what} matrix not symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class SdpResult:
    """Solver outcome.  For "max" problems dual_bound is a certified upper
    bound on the relaxation optimum up to solver tolerance; for "min"
    problems it is the corresponding lower bound."""

    primal_value: float
    dual_bound: float
    status: str
    solver_info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# data-matrix builders
# ---------------------------------------------------------------------------


def build_rotation_orthogonality_blocks() -> list[np.ndarray]:
    """Six 9x9 blocks over vec(R): unit-norm columns (1-3, rhs 1 via the
    homogenization corner) and pairwise column orthogonality (4-6, rhs 0)."""
    blocks = []
    for k in range(3):
        Q = np.zeros((9, 9))
        Q[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = np.eye(3)
        blocks.append(Q)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        Q = np.zeros((9, 9))
        Q[3 * i : 3 * i + 3, 3 * j : 3 * j + 3] = 0.5 * np.eye(3)
        Q[3 * j : 3 * j + 3, 3 * i : 3 * i + 3] = 0.5 * np.eye(3)
        blocks.append(Q)
    return blocks


def _pad_rotation_blocks(dim: int, offset: int) -> list[tuple[np.ndarray, float]]:
    """Embed the six blocks at ``offset`` in a dim x dim frame; the first
    three get a -1 homogenization corner (so every rhs is 0)."""
    eqs = []
    for i, Qt in enumerate(build_rotation_orthogonality_blocks()):
        Q = np.zeros((dim, dim))
        Q[offset : offset + 9, offset : offset + 9] = Qt
        if i < 3:
            Q[dim - 1, dim - 1] = -1.0
        eqs.append((Q, 0.0))
    return eqs


def _border_row_constraint(dim: int, row: np.ndarray, offset_col: int, rhs: float) -> np.ndarray:
    """Matrix F with y^T F y = <row, x_part> - rhs for y = col(..., 1)."""
    F = np.zeros((dim, dim))
    F[offset_col : offset_col + row.shape[0], dim - 1] = 0.5 * row
    F[dim - 1, offset_col : offset_col + row.shape[0]] = 0.5 * row
    F[dim - 1, dim - 1] = -rhs
    return F


def build_forward_sdp(
    v: np.ndarray,
    a: np.ndarray,
    H: np.ndarray,
    d: np.ndarray,
    extra_inequalities: tuple = (),
) -> SdpProblem:
    """Support problem max a.(R v + t) over the pose polytope {H x(T) <= d}.

    Lifted over y = col(x(T), 1), dim 13.  ``extra_inequalities`` is a hook
    for appending additional valid tr(F X) <= 0 rows (e.g. tightening or
    moment-interval constraints); the base construction never needs them.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    a = np.asarray(a, dtype=float).reshape(3)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    if H.shape[1] != 12 or H.shape[0] != d.shape[0]:
        raise SdpError("pose constraint dimensions must be (M, 12) and (M,)")
    dim = 13
    Q0 = np.zeros((dim, dim))
    Q0[:9, 12] = 0.5 * np.kron(v.reshape(3, 1), np.eye(3)) @ a
    Q0[9:12, 12] = 0.5 * a
    Q0 = Q0 + Q0.T
    eqs = _pad_rotation_blocks(dim, 0)
    ineqs = [_border_row_constraint(dim, H[i], 0, d[i]) for i in range(H.shape[0])]
    return SdpProblem(dim, Q0, tuple(eqs), tuple(ineqs) + tuple(extra_inequalities), (12, 12))


def _compound_objective(a: np.ndarray) -> np.ndarray:
    """Objective matrix with y^T Q y = a . x(T1 T2) for
    y = col(x(T1), x(T2), 1)."""
    a = np.asarray(a, dtype=float).reshape(12)
    ar, at = a[:9], a[9:]
    Amat = ar.reshape(3, 3, order="F")
    U = [np.zeros((3, 9)) for _ in range(3)]
    for k in range(3):
        U[k][:, 3 * k : 3 * k + 3] = np.eye(3)
    S = []
    for k in range(3):
        Sk = np.zeros((3, 9))
        for c in range(3):
            Sk[c, k + 3 * c] = 1.0  # row k of the second rotation
        S.append(Sk)
    Phi = sum(U[k].T @ Amat @ S[k] for k in range(3))
    Psi = np.column_stack([U[k].T @ at for k in range(3)])
    Q = np.zeros((25, 25))
    Q[0:9, 12:21] = 0.5 * Phi
    Q[0:9, 21:24] = 0.5 * Psi
    Q[9:12, 24] = 0.5 * at
    return Q + Q.T


def moment_interval_rows(dim: int, coords, lo: np.ndarray, hi: np.ndarray) -> list[np.ndarray]:
    """(x_k - lo)(hi - x_k) >= 0 as tr(F X) <= 0; valid whenever the
    coordinate range holds, and it pins the diagonal second moments."""
    rows = []
    for k, c in enumerate(coords):
        F = np.zeros((dim, dim))
        F[c, c] = 1.0
        F[c, dim - 1] = -0.5 * (lo[k] + hi[k])
        F[dim - 1, c] = F[c, dim - 1]
        F[dim - 1, dim - 1] = lo[k] * hi[k]
        rows.append(F)
    return rows


def translation_interval(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ranges of the three translation coordinates over {A x <= b} with the
    rotation coefficients confined to their always-valid [-1, 1] box."""
    box_rows = np.zeros((18, 12))
    box_rows[:9, :9] = np.eye(9)
    box_rows[9:, :9] = -np.eye(9)
    A_all = np.vstack([A, box_rows])
    b_all = np.concatenate([b, np.ones(18)])
    lo = np.empty(3)
    hi = np.empty(3)
    for k in range(3):
        c = np.zeros(12)
        c[9 + k] = 1.0
        res = linprog(c, A_ub=A_all, b_ub=b_all, bounds=[(None, None)] * 12, method="highs")
        if not res.success:
            raise SdpError(f"translation bound LP failed: {res.message}")
        lo[k] = res.fun
        res = linprog(-c, A_ub=A_all, b_ub=b_all, bounds=[(None, None)] * 12, method="highs")
        if not res.success:
            raise SdpError(f"translation bound LP failed: {res.message}")
        hi[k] = -res.fun
    return lo, hi


def build_compound_sdp(
    A1: np.ndarray,
    b1: np.ndarray,
    A2: np.ndarray,
    b2: np.ndarray,
    a: np.ndarray,
    t_bounds=None,
) -> SdpProblem:
    """Support problem max a.x(T1 T2) over two pose polytopes, dim 25.

    The lifted variable is y = col(x(T1), x(T2), 1).  Besides the twelve
    rotation-structure equalities and the per-row polytope inequalities,
    valid interval-product rows on the translation second moments are
    appended: without them the feasible set has an unbounded (objective-flat)
    recession cone that stalls interior-point solvers.  ``t_bounds`` may
    supply precomputed ((lo1, hi1), (lo2, hi2)); pass False to omit the rows.
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    b1 = np.asarray(b1, dtype=float).reshape(-1)
    b2 = np.asarray(b2, dtype=float).reshape(-1)
    if A1.shape[1] != 12 or A2.shape[1] != 12:
        raise SdpError("pose polytopes must have 12 columns")
    dim = 25
    Q0 = _compound_objective(a)
    eqs = _pad_rotation_blocks(dim, 0) + _pad_rotation_blocks(dim, 12)
    ineqs = [_border_row_constraint(dim, A1[i], 0, b1[i]) for i in range(A1.shape[0])]
    ineqs += [_border_row_constraint(dim, A2[i], 12, b2[i]) for i in range(A2.shape[0])]
    if t_bounds is not False:
        if t_bounds is None:
            t_bounds = (translation_interval(A1, b1), translation_interval(A2, b2))
        (lo1, hi1), (lo2, hi2) = t_bounds
        ineqs += moment_interval_rows(dim, (9, 10, 11), np.asarray(lo1), np.asarray(hi1))
        ineqs += moment_interval_rows(dim, (21, 22, 23), np.asarray(lo2), np.asarray(hi2))
    return SdpProblem(dim, Q0, tuple(eqs), tuple(ineqs), (24, 24))


def build_rotball_sdp(r_bar: np.ndarray, A_r: np.ndarray, b_r: np.ndarray) -> SdpProblem:
    """Trace-range problem over {R in SO(3) : A_r vec(R) <= b_r}, dim 10.

    The objective satisfies y^T Q0 y = tr(R Rbar^T) for y = col(vec(R), 1)
    with r_bar = vec(Rbar).  The problem is solved as a *minimization*: its
    certified lower bound c* <= min tr(R Rbar^T) converts into a geodesic
    radius that provably covers every feasible rotation.  (A maximization
    here would bound the wrong side and guarantee nothing.)
    """
    r_bar = np.asarray(r_bar, dtype=float).reshape(9)
    A_r = np.atleast_2d(np.asarray(A_r, dtype=float))
    b_r = np.asarray(b_r, dtype=float).reshape(-1)
    dim = 10
    Q0 = np.zeros((dim, dim))
    Q0[:9, 9] = 0.5 * r_bar
    Q0 = Q0 + Q0.T
    eqs = _pad_rotation_blocks(dim, 0)
    ineqs = [_border_row_constraint(dim, A_r[i], 0, b_r[i]) for i in range(A_r.shape[0])]
    return SdpProblem(dim, Q0, tuple(eqs), tuple(ineqs), (9, 9), sense="min")


# ---------------------------------------------------------------------------
# solver contract
# ---------------------------------------------------------------------------


def _svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization matching the PSD cone layout."""
    n = M.shape[0]
    iu = np.triu_indices(n)
    out = M[iu].copy()
    out[iu[0] != iu[1]] *= np.sqrt(2.0)
    # triu_indices is row-major over the upper triangle; the cone expects
    # column-major, i.e. iterate columns then rows
    order = np.lexsort((iu[0], iu[1]))
    return out[order]


class ClarabelBackend:
    """Default conic backend.  Stateless: safe for concurrent solves.

    ``tol`` overrides the solver's gap/feasibility tolerances; tighter
    values let callers use proportionally smaller certified inflations
    (the rotation-trace path needs this because the arccos conversion
    amplifies trace slack by a square root).
    """

    def __init__(self, verbose: bool = False, tol: float | None = None):
        self.verbose = verbose
        self.tol = tol

    def solve(self, p: SdpProblem) -> SdpResult:
        import clarabel

        n = p.dim
        m = n * (n + 1) // 2
        sign = -1.0 if p.sense == "max" else 1.0
        q = sign * _svec(p.objective)
        anchor = np.zeros((n, n))
        anchor[p.anchor] = 1.0
        eq_rows = [_svec(anchor)] + [_svec(M) for M, _ in p.equalities]
        eq_rhs = np.array([1.0] + [r for _, r in p.equalities])
        rows = [np.array(eq_rows)]
        rhs = [eq_rhs]
        cones = [clarabel.ZeroConeT(len(eq_rhs))]
        if p.inequalities:
            rows.append(np.array([_svec(F) for F in p.inequalities]))
            rhs.append(np.zeros(len(p.inequalities)))
            cones.append(clarabel.NonnegativeConeT(len(p.inequalities)))
        rows.append(-np.eye(m))
        rhs.append(np.zeros(m))
        cones.append(clarabel.PSDTriangleConeT(n))
        A = sparse.csc_matrix(np.vstack(rows))
        b = np.concatenate(rhs)
        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        if self.tol is not None:
            settings.tol_gap_abs = self.tol
            settings.tol_gap_rel = self.tol
            settings.tol_feas = self.tol
        solver = clarabel.DefaultSolver(sparse.csc_matrix((m, m)), q, A, b, cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        info = {"solver": "clarabel", "status": status, "iterations": sol.iterations}
        primal = sign * sol.obj_val
        dual = sign * sol.obj_val_dual
        if status == "Solved":
            return SdpResult(primal, dual, STATUS_OPTIMAL, info)
        if status == "AlmostSolved":
            return SdpResult(primal, dual, STATUS_NEAR_OPTIMAL, info)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SdpResult(np.nan, np.nan, STATUS_INFEASIBLE, info)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return SdpResult(np.nan, np.nan, STATUS_UNBOUNDED, info)
        return SdpResult(np.nan, np.nan, STATUS_FAILURE, info)


_DEFAULT_BACKEND = ClarabelBackend()


def solve(p: SdpProblem, backend=None) -> SdpResult:
    """Solve through the conic backend; statuses beyond (near-)optimal carry
    solver diagnostics in ``solver_info`` instead of a usable bound."""
    backend = backend or _DEFAULT_BACKEND
    result = backend.solve(p)
    if result.status in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL) and not np.isfinite(
        result.dual_bound
    ):
        return SdpResult(result.primal_value, result.dual_bound, STATUS_FAILURE, result.solver_info)
    return result


def certified_upper_bound(r: SdpResult, inflation: float | None = None) -> float:
    """dual_bound + inflation (default 1e-6 * max(1, |dual_bound|)).

    This is the value written into guaranteed offset vectors, so solver
    tolerance cannot break containment.
    """
    if r.status not in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        raise SdpError(f"no certified bound available: status {r.status} ({r.solver_info})")
    if inflation is None:
        inflation = DEFAULT_INFLATION_REL * max(1.0, abs(r.dual_bound))
    return r.dual_bound + inflation


def certified_lower_bound(r: SdpResult, inflation: float | None = None) -> float:
    """Counterpart of :func:`certified_upper_bound` for "min"-sense problems."""
    if r.status not in (STATUS_OPTIMAL, STATUS_NEAR_OPTIMAL):
        raise SdpError(f"no certified bound available: status {r.status} ({r.solver_info})")
    if inflation is None:
        inflation = DEFAULT_INFLATION_REL * max(1.0, abs(r.dual_bound))
    return r.dual_bound - inflation


def dump_problem_json(p: SdpProblem) -> str:
    """Dense JSON dump for cross-checking against other solvers."""
    return json.dumps(p.to_json_dict(), sort_keys=True)
