import itertools
import json

import numpy as np
import pytest

from polyuq import polytope as pt
from polyuq.liegroup import exp_map


def unit_cube():
    return pt.HPolytope.box([0.5, 0.5, 0.5], 0.5)


def random_bounded_hpoly(rng, dim=3, extra_rows=8, spread=1.0):
    """Random bounded polytope: a box plus random cutting half-spaces through it."""
    c = rng.uniform(-spread, spread, dim)
    A = np.vstack([np.eye(dim), -np.eye(dim), rng.normal(size=(extra_rows, dim))])
    A /= np.linalg.norm(A, axis=1)[:, None]
    b = A @ c + rng.uniform(0.3, 1.2, A.shape[0])
    return pt.HPolytope(A, b)


class TestVertexEnum:
    def test_unit_cube(self):
        V = pt.vertex_enum(unit_cube())
        expect = set(itertools.product([0.0, 1.0], repeat=3))
        got = {tuple(np.round(v, 9)) for v in V.vertices}
        assert got == expect

    def test_1d_pair(self):
        P = pt.HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))
        V = pt.vertex_enum(P)
        assert sorted(V.vertices.ravel().tolist()) == [0.0, 1.0]

    def test_unbounded_raises(self):
        P = pt.HPolytope(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 1.0]))
        with pytest.raises(pt.PolytopeError, match="not a polytope"):
            pt.vertex_enum(P)

    def test_empty_raises(self):
        P = pt.HPolytope(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([0.0, -1.0]))
        with pytest.raises(pt.PolytopeError, match="empty set"):
            pt.vertex_enum(P)

    def test_roundtrip_membership(self):
        rng = np.random.default_rng(20)
        for _ in range(5):
            P = random_bounded_hpoly(rng)
            V = pt.vertex_enum(P)
            Q = pt.facet_enum(V)
            lo = V.vertices.min(axis=0) - 0.2
            hi = V.vertices.max(axis=0) + 0.2
            X = rng.uniform(lo, hi, size=(10_000, 3))
            in_p = P.contains_many(X, tol=1e-8)
            in_q = Q.contains_many(X, tol=1e-8)
            assert np.array_equal(in_p, in_q)

    def test_degenerate_point_set(self):
        # zero-width box: a single vertex, reported once
        P = pt.HPolytope.box([0.3, -0.2, 0.7], 0.0)
        V = pt.vertex_enum(P)
        assert V.vertices.shape == (1, 3)
        assert np.allclose(V.vertices[0], [0.3, -0.2, 0.7], atol=1e-9)


class TestFacetEnum:
    def test_cube_vertices(self):
        V = pt.VPolytope(np.array(list(itertools.product([0.0, 1.0], repeat=3))))
        H = pt.facet_enum(V)
        assert H.n_facets == 6

    def test_simplex(self):
        V = pt.VPolytope(np.vstack([np.zeros(3), np.eye(3)]))
        assert pt.facet_enum(V).n_facets == 4

    def test_cloud_containment(self):
        rng = np.random.default_rng(21)
        pts = rng.normal(size=(40, 3))
        H = pt.facet_enum(pt.VPolytope(pts))
        slack = H.b[None, :] - pts @ H.A.T
        assert slack.min() >= -1e-9

    def test_too_few_points(self):
        with pytest.raises(pt.PolytopeError, match="degenerate hull"):
            pt.facet_enum(pt.VPolytope(np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])))


class TestDiameter:
    def test_cube(self):
        assert pt.diameter(pt.vertex_enum(unit_cube())) == pytest.approx(np.sqrt(3.0))

    def test_point(self):
        assert pt.diameter(pt.VPolytope(np.array([[1.0, 2.0, 3.0]]))) == 0.0

    def test_sample_lower_bound(self):
        rng = np.random.default_rng(22)
        P = random_bounded_hpoly(rng)
        V = pt.vertex_enum(P)
        d = pt.diameter(V)
        X = pt.sample_uniform(P, 300, rng)
        gaps = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
        assert gaps.max() <= d + 1e-9


class TestChebyshevBall:
    def test_cube(self):
        ball = pt.chebyshev_ball(pt.vertex_enum(unit_cube()))
        assert np.allclose(ball.center, [0.5, 0.5, 0.5], atol=1e-9)
        assert ball.radius == pytest.approx(np.sqrt(3.0) / 2.0, abs=1e-9)

    def test_segment(self):
        ball = pt.chebyshev_ball(pt.VPolytope(np.array([[0.0, 0, 0], [2.0, 0, 0]])))
        assert np.allclose(ball.center, [1.0, 0, 0], atol=1e-9)
        assert ball.radius == pytest.approx(1.0, abs=1e-9)

    def test_grid_oracle(self):
        # multi-resolution grid search over centers (convex objective)
        rng = np.random.default_rng(23)
        V = pt.vertex_enum(random_bounded_hpoly(rng)).vertices

        def max_dist(c):
            return np.linalg.norm(V - c, axis=1).max()

        center = V.mean(axis=0)
        half = (V.max(axis=0) - V.min(axis=0)).max() / 2 + 0.1
        for _ in range(30):
            grid = [center + half * np.array(o) / 4.0
                    for o in itertools.product(range(-4, 5), repeat=3)]
            center = min(grid, key=max_dist)
            half *= 0.5
        r_grid = max_dist(center)
        ball = pt.chebyshev_ball(pt.VPolytope(V))
        assert ball.radius <= r_grid + 1e-6
        assert ball.radius >= r_grid - 1e-4
        # enclosure is certified
        assert np.linalg.norm(V - ball.center, axis=1).max() <= ball.radius + 1e-12


class TestAffineMap:
    def test_identity(self):
        P = unit_cube()
        Q = pt.affine_map(P, np.eye(3))
        assert np.allclose(Q.A, P.A) and np.allclose(Q.b, P.b)

    def test_rotation_preserves_volume(self):
        from scipy.spatial import ConvexHull

        R = exp_map([0.4, -0.2, 0.9])
        Q = pt.affine_map(unit_cube(), R)
        vol = ConvexHull(pt.vertex_enum(Q).vertices).volume
        assert vol == pytest.approx(1.0, abs=1e-9)

    def test_invertible_sampling(self):
        rng = np.random.default_rng(24)
        P = random_bounded_hpoly(rng)
        Hm = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        q = rng.normal(size=3)
        Q = pt.affine_map(P, Hm, q)
        X = pt.sample_uniform(P, 2000, rng)
        assert pt.HPolytope.contains_many(Q, X @ Hm.T + q, tol=1e-8).all()
        # points outside P map outside Q (bijectivity)
        Y = rng.uniform(-4, 4, size=(2000, 3))
        out = ~P.contains_many(Y, tol=1e-9)
        assert (~Q.contains_many(Y[out] @ Hm.T + q, tol=-1e-9)).all()

    def test_vertex_route_projection_shape(self):
        P = pt.vertex_enum(unit_cube())
        M = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        Q = pt.affine_map(P, M)
        assert isinstance(Q, pt.VPolytope)
        assert Q.dim == 2


class TestMinkowskiSum:
    def test_sum_with_origin(self):
        V = pt.vertex_enum(unit_cube())
        S = pt.minkowski_sum(V, pt.VPolytope(np.zeros((1, 3))))
        rng = np.random.default_rng(25)
        X = rng.uniform(-0.3, 1.3, size=(5000, 3))
        assert np.array_equal(S.contains_many(X, 1e-9), unit_cube().contains_many(X, 1e-9))

    def test_cube_plus_cube(self):
        V = pt.vertex_enum(unit_cube())
        S = pt.minkowski_sum(V, V)
        want = pt.HPolytope.box([1.0, 1.0, 1.0], 1.0)
        rng = np.random.default_rng(26)
        X = rng.uniform(-0.5, 2.5, size=(5000, 3))
        assert np.array_equal(S.contains_many(X, 1e-9), want.contains_many(X, 1e-9))

    def test_support_additivity_and_containment(self):
        rng = np.random.default_rng(27)
        V1 = pt.vertex_enum(random_bounded_hpoly(rng))
        V2 = pt.vertex_enum(random_bounded_hpoly(rng))
        S = pt.minkowski_sum(V1, V2)
        i = rng.integers(0, len(V1.vertices), 10_000)
        j = rng.integers(0, len(V2.vertices), 10_000)
        lam = rng.uniform(size=(10_000, 1))
        # random convex combos inside each operand
        x = lam * V1.vertices[i] + (1 - lam) * V1.vertices[rng.integers(0, len(V1.vertices), 10_000)]
        y = lam * V2.vertices[j] + (1 - lam) * V2.vertices[rng.integers(0, len(V2.vertices), 10_000)]
        assert S.contains_many(x + y, tol=1e-9).all()
        for _ in range(100):
            a = rng.normal(size=3)
            a /= np.linalg.norm(a)
            h1 = (V1.vertices @ a).max()
            h2 = (V2.vertices @ a).max()
            hs = (pt.vertex_enum(S).vertices @ a).max()
            assert hs == pytest.approx(h1 + h2, abs=1e-9)

    def test_point_operand(self):
        V = pt.vertex_enum(unit_cube())
        p = np.array([[2.0, -1.0, 0.5]])
        S = pt.minkowski_sum(V, pt.VPolytope(p))
        want = pt.HPolytope.box(p[0] + 0.5, 0.5)
        rng = np.random.default_rng(28)
        X = p + rng.uniform(-1, 2, size=(2000, 3))
        assert np.array_equal(S.contains_many(X, 1e-9), want.contains_many(X, 1e-9))


class TestIntersect:
    def test_self(self):
        P = unit_cube()
        Q = pt.intersect(P, P)
        rng = np.random.default_rng(29)
        X = rng.uniform(-0.5, 1.5, size=(5000, 3))
        assert np.array_equal(Q.contains_many(X, 1e-9), P.contains_many(X, 1e-9))

    def test_disjoint(self):
        P1 = pt.HPolytope.box([0.0, 0, 0], 0.5)
        P2 = pt.HPolytope.box([5.0, 0, 0], 0.5)
        out = pt.intersect(P1, P2)
        assert out.empty
        assert not out.contains(np.zeros(3))

    def test_conjunction(self):
        rng = np.random.default_rng(30)
        P1 = random_bounded_hpoly(rng)
        P2 = random_bounded_hpoly(rng)
        out = pt.intersect(P1, P2)
        X = rng.uniform(-2.5, 2.5, size=(10_000, 3))
        both = P1.contains_many(X, 1e-9) & P2.contains_many(X, 1e-9)
        if out.empty:
            assert not both.any()
        else:
            assert np.array_equal(out.contains_many(X, 1e-9), both)

    def test_shared_template_offset_min(self):
        A = pt.template_normals("box", 3)
        P1 = pt.HPolytope(A, np.array([1.0, 2, 3, 1, 2, 3]))
        P2 = pt.HPolytope(A, np.array([2.0, 1, 3, 2, 1, 3]))
        out = pt.intersect(P1, P2, prune=False)
        assert np.allclose(out.b, [1, 1, 3, 1, 1, 3])


class TestProject:
    def test_box_shadow(self):
        P = pt.HPolytope.box([1.0, -2.0, 3.0], [0.5, 1.0, 2.0])
        Q = pt.project(P, [0, 2])
        want = pt.HPolytope.box([1.0, 3.0], [0.5, 2.0])
        rng = np.random.default_rng(31)
        X = rng.uniform(-4, 6, size=(3000, 2))
        assert np.array_equal(Q.contains_many(X, 1e-9), want.contains_many(X, 1e-9))

    def test_all_coordinates(self):
        P = unit_cube()
        Q = pt.project(P, [0, 1, 2])
        rng = np.random.default_rng(32)
        X = rng.uniform(-0.5, 1.5, size=(3000, 3))
        assert np.array_equal(Q.contains_many(X, 1e-9), P.contains_many(X, 1e-9))

    def test_vertex_projection_oracle(self):
        rng = np.random.default_rng(33)
        for _ in range(50):
            P = random_bounded_hpoly(rng, extra_rows=6)
            keep = sorted(rng.choice(3, size=2, replace=False).tolist())
            Q = pt.project(P, keep)
            # oracle: project the vertices, take the 2D hull
            V3 = pt.vertex_enum(P).vertices[:, keep]
            oracle = pt.facet_enum(pt.VPolytope(V3))
            v_got = pt.vertex_enum(Q).vertices
            v_want = pt.vertex_enum(oracle).vertices
            assert _hausdorff(v_got, v_want) <= 1e-8

    def test_projection_contains_sample_shadows(self):
        rng = np.random.default_rng(34)
        P = random_bounded_hpoly(rng)
        Q = pt.project(P, [1, 2])
        X = pt.sample_uniform(P, 1000, rng)
        assert Q.contains_many(X[:, [1, 2]], tol=1e-9).all()


def _hausdorff(U, V):
    d = np.linalg.norm(U[:, None, :] - V[None, :, :], axis=-1)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


class TestTemplates:
    def test_box3(self):
        A = pt.template_normals("box", 3)
        assert A.shape == (6, 3)
        rows = {tuple(r) for r in A}
        for i in range(3):
            e = [0.0] * 3
            e[i] = 1.0
            assert tuple(e) in rows and tuple(-x for x in e) in rows

    def test_box_diag45(self):
        A = pt.template_normals("box_diag45", 3)
        assert A.shape == (18, 3)
        assert np.allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-12)
        rows = {tuple(np.round(r, 12)) for r in A}
        assert {tuple(np.round(-np.array(r), 12)) for r in rows} == rows
        # oracle: enumerate signed pairs; every diagonal makes 45 degrees
        # with its two adjacent axis facets
        for i, j in itertools.combinations(range(3), 2):
            for si, sj in itertools.product([1, -1], repeat=2):
                r = np.zeros(3)
                r[i], r[j] = si / np.sqrt(2), sj / np.sqrt(2)
                assert tuple(np.round(r, 12)) in rows
                ei = np.zeros(3)
                ei[i] = si
                angle = np.degrees(np.arccos(np.clip(r @ ei, -1, 1)))
                assert angle == pytest.approx(45.0, abs=1e-9)

    def test_unsupported(self):
        with pytest.raises(pt.PolytopeError):
            pt.template_normals("dodecahedron", 3)

    def test_custom_rows_normalized(self):
        A = pt.template_normals([[2.0, 0, 0], [0, 3.0, 0]], 3)
        assert np.allclose(np.linalg.norm(A, axis=1), 1.0)


class TestEncloseEllipsoid:
    def test_unit_ball_box(self):
        E = pt.Ellipsoid(np.zeros(3), np.eye(3), 1.0)
        P = pt.enclose_ellipsoid(E, pt.template_normals("box", 3))
        assert np.allclose(P.b, 1.0)

    def test_degenerate_shape(self):
        c = np.array([1.0, 2.0, 3.0])
        E = pt.Ellipsoid(c, np.zeros((3, 3)), 5.0)
        A = pt.template_normals("box_diag45", 3)
        P = pt.enclose_ellipsoid(E, A)
        assert np.allclose(P.b, A @ c, atol=1e-12)

    def test_support_touch(self):
        rng = np.random.default_rng(35)
        M = rng.normal(size=(3, 3))
        E = pt.Ellipsoid(rng.normal(size=3), M @ M.T, 1.7)
        A = pt.template_normals("box_diag45", 3)
        P = pt.enclose_ellipsoid(E, A)
        # boundary samples: x = c + C * S^{1/2} u, |u| = 1
        w, Vv = np.linalg.eigh(E.shape)
        half = Vv @ np.diag(np.sqrt(np.maximum(w, 0))) @ Vv.T
        U = rng.normal(size=(10_000, 3))
        U /= np.linalg.norm(U, axis=1)[:, None]
        X = E.center + E.scale * (U @ half)
        assert P.contains_many(X, tol=1e-9).all()
        # analytic support point of the ellipsoid per facet direction touches it
        for m in range(P.n_facets):
            a = P.A[m]
            denom = np.sqrt(a @ E.shape @ a)
            x_star = E.center + E.scale * (E.shape @ a) / denom
            assert P.b[m] - a @ x_star == pytest.approx(0.0, abs=1e-6)
            assert P.contains(x_star, tol=1e-9)


class TestInflate:
    def test_zero(self):
        P = unit_cube()
        Q = pt.inflate(P, 0.0)
        assert np.allclose(Q.b, P.b)

    def test_cube_grows(self):
        Q = pt.inflate(unit_cube(), 0.1)
        want = pt.HPolytope.box([0.5] * 3, 0.6)
        rng = np.random.default_rng(36)
        X = rng.uniform(-0.5, 1.5, size=(3000, 3))
        assert np.array_equal(Q.contains_many(X, 1e-12), want.contains_many(X, 1e-12))

    def test_negative_raises(self):
        with pytest.raises(pt.PolytopeError):
            pt.inflate(unit_cube(), -0.1)

    def test_minkowski_sampling_oracle(self):
        rng = np.random.default_rng(37)
        P = random_bounded_hpoly(rng)
        eps = 0.25
        Q = pt.inflate(P, eps)
        X = pt.sample_uniform(P, 2000, rng)
        U = rng.normal(size=(2000, 3))
        U /= np.linalg.norm(U, axis=1)[:, None]
        U *= rng.uniform(0, 1, size=(2000, 1))
        assert Q.contains_many(X + eps * U, tol=1e-9).all()

    def test_strict_at_offset_corners(self):
        # a point achieving several offsets with equality lies outside P + ball
        P = unit_cube()
        eps = 0.1
        corner = np.array([1.1, 1.1, 1.1])  # achieves three inflated offsets
        X = pt.sample_uniform(P, 500, np.random.default_rng(38))
        assert (np.linalg.norm(X - corner, axis=1) > eps).all()


class TestContains:
    def test_interior(self):
        assert pt.contains(unit_cube(), [0.5, 0.5, 0.5])

    def test_exterior(self):
        assert not pt.contains(unit_cube(), [2.0, 0.0, 0.0])

    def test_boundary_with_tol(self):
        assert pt.contains(unit_cube(), [1.0, 1.0, 1.0], tol=1e-9)


class TestJson:
    def test_h_roundtrip(self):
        P = unit_cube()
        s = pt.polytope_to_json(P)
        Q = pt.polytope_from_json(s)
        assert np.array_equal(Q.A, P.A) and np.array_equal(Q.b, P.b)
        assert json.loads(s).keys() == {"A", "b"}

    def test_v_roundtrip(self):
        V = pt.VPolytope(np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]))
        W = pt.polytope_from_json(pt.polytope_to_json(V))
        assert np.array_equal(W.vertices, V.vertices)

    def test_empty_marker(self):
        P = pt.HPolytope.empty_set(3)
        Q = pt.polytope_from_json(pt.polytope_to_json(P))
        assert Q.empty and Q.dim == 3


class TestRepresentationRoundtripDims:
    @pytest.mark.parametrize("dim", [2, 3, 4])
    def test_dims(self, dim):
        rng = np.random.default_rng(40 + dim)
        P = random_bounded_hpoly(rng, dim=dim, extra_rows=4)
        V = pt.vertex_enum(P)
        Q = pt.facet_enum(V)
        X = rng.uniform(-2.5, 2.5, size=(4000, dim))
        assert np.array_equal(P.contains_many(X, 1e-8), Q.contains_many(X, 1e-8))
