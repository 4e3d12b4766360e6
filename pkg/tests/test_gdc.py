import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse as sp

from conftest import depth_field, sparse_depth
from s3_core import (
    DenseField, DomainError, NumericalError, RasterFormatError, Representation, SingularSystemError,
)
from s3_gdc import (
    GdcProblem, build_graph, build_problem, conjugate_gradient_ls, correct, correct_hints_only,
    correct_with_confidence, objective, read_problem, scatter_solution, write_problem,
)


def grid_nodes(size, depth_fn, hint_rings=2):
    """Unit-spaced grid in x/y with depth_fn(row, col) as z, hints (outer rings) first."""
    rows, cols = np.mgrid[0:size, 0:size]
    rows, cols = rows.ravel(), cols.ravel()
    ring = np.minimum.reduce([rows, cols, size - 1 - rows, size - 1 - cols])
    order = np.r_[np.nonzero(ring < hint_rings)[0], np.nonzero(ring >= hint_rings)[0]]
    rows, cols = rows[order], cols[order]
    xyz = np.stack([cols.astype(float), rows.astype(float), depth_fn(rows, cols)], axis=1)
    return xyz, int((ring < hint_rings).sum())


def planar(rows, cols):
    return 10.0 + 0.5 * cols


def curved(rows, cols):
    return 10.0 + 0.5 * cols + 0.05 * rows ** 2


class TestGraph:
    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        graph = build_graph(rng.uniform(0.0, 10.0, size=(40, 3)) + [0, 0, 1], k=5)
        assert graph.neighbors.shape == (40, 5)
        assert_allclose(graph.weights.sum(axis=1), 1.0)
        assert not (graph.neighbors == np.arange(40)[:, None]).any()

    @pytest.mark.parametrize("shift", [-3.0, 0.5, 40.0])
    def test_constant_shift_leaves_residual_unchanged(self, shift):
        rng = np.random.default_rng(12)
        xyz = rng.uniform(0.0, 10.0, size=(60, 3)) + [0, 0, 1]
        graph = build_graph(xyz, k=6)
        z = rng.uniform(5.0, 30.0, size=60)
        assert_allclose(graph.residual(z + shift), graph.residual(z), atol=1e-9)
        assert objective(graph, z + shift) == pytest.approx(objective(graph, z), rel=1e-9, abs=1e-9)

    def test_reordered_graph_is_the_same_graph(self):
        rng = np.random.default_rng(13)
        graph = build_graph(rng.uniform(0.0, 10.0, size=(30, 3)) + [0, 0, 1], k=4)
        order = rng.permutation(30)
        z = rng.uniform(5.0, 30.0, size=30)
        assert_allclose(graph.reordered(order).residual(z[order]), graph.residual(z)[order], atol=1e-12)
        with pytest.raises(DomainError):
            graph.reordered(np.r_[0, 0, np.arange(2, 30)])

    def test_collinear_midpoint(self):
        graph = build_graph(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 2.0], [2.0, 0.0, 3.0]]), k=2)
        assert sorted(graph.neighbors[1]) == [0, 2]
        assert_allclose(graph.weights[1], [0.5, 0.5])

    def test_constant_depth_reconstructs_exactly(self):
        xyz, _ = grid_nodes(5, lambda r, c: np.full(r.shape, 7.0))
        graph = build_graph(xyz, k=4)
        assert_allclose(graph.residual(xyz[:, 2]), 0.0, atol=1e-12)
        assert objective(graph, xyz[:, 2]) == pytest.approx(0.0, abs=1e-20)

    def test_weights_solve_the_constrained_problem(self):
        rng = np.random.default_rng(3)
        xyz = rng.uniform(0.0, 5.0, size=(30, 3)) + [0, 0, 2]
        graph = build_graph(xyz, k=5, reg=1e-3)
        for i in (0, 11, 29):
            nbrs = graph.neighbors[i]
            d = xyz[nbrs, 2] - xyz[i, 2]
            eps = 1e-3 * ((xyz[nbrs] - xyz[i]) ** 2).sum(axis=1).mean()
            kkt = np.zeros((6, 6))
            kkt[:5, :5] = 2.0 * (np.outer(d, d) + eps * np.eye(5))
            kkt[:5, 5] = kkt[5, :5] = 1.0
            rhs = np.r_[np.zeros(5), 1.0]
            assert_allclose(graph.weights[i], np.linalg.solve(kkt, rhs)[:5], rtol=1e-8, atol=1e-10)

    def test_ties_go_to_lower_index(self):
        xyz = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        graph = build_graph(xyz, k=2)
        assert list(graph.neighbors[0]) == [1, 2]

    def test_k_must_be_below_node_count(self):
        with pytest.raises(DomainError):
            build_graph(np.ones((3, 3)) * [1, 2, 3], k=3)

    def test_zero_regularization_degenerate(self):
        xyz, _ = grid_nodes(4, lambda r, c: np.full(r.shape, 5.0))
        with pytest.raises(DomainError):
            build_graph(xyz, k=3, reg=0.0)


class TestSolver:
    def test_cg_matches_lstsq(self):
        rng = np.random.default_rng(1)
        b = sp.csr_matrix(rng.normal(size=(30, 8)))
        t = rng.normal(size=30)
        x, iters = conjugate_gradient_ls(b, t, np.zeros(8))
        assert iters <= 80
        assert_allclose(x, np.linalg.lstsq(b.toarray(), t, rcond=None)[0], atol=1e-8)

    def test_iteration_cap(self):
        rng = np.random.default_rng(2)
        b = sp.csr_matrix(rng.normal(size=(30, 8)))
        with pytest.raises(NumericalError) as info:
            conjugate_gradient_ls(b, rng.normal(size=30), np.zeros(8), max_iter=1)
        assert info.value.iteration == 1


class TestCorrection:
    def test_plane_is_recovered_from_boundary_hints(self):
        gt, n = grid_nodes(8, planar)
        noisy = gt.copy()
        noisy[n:, 2] += np.random.default_rng(4).uniform(-1.0, 1.0, size=len(gt) - n)
        problem = GdcProblem(noisy, gt[:n, 2], [], [])
        for method in ("dense", "cg"):
            y = correct(problem, build_graph(gt, k=4), method=method)
            assert_array_equal(y[:n], gt[:n, 2])
            assert_allclose(y[n:], gt[n:, 2], atol=1e-6)

    def test_dense_and_cg_agree(self):
        xyz, n = grid_nodes(8, curved, hint_rings=1)
        problem = GdcProblem(xyz, xyz[:n, 2] + 0.3, [], [])
        graph = build_graph(xyz, k=4)
        dense = correct(problem, graph, method="dense")
        cg = correct(problem, graph, method="cg")
        assert_allclose(dense, cg, atol=1e-6)

    def test_correction_is_idempotent(self):
        xyz, n = grid_nodes(7, curved, hint_rings=1)
        problem = GdcProblem(xyz, xyz[:n, 2] - 0.2, [], [])
        graph = build_graph(xyz, k=4)
        once = correct(problem, graph, method="dense")
        twice = correct(problem.with_depth(once), graph, method="dense")
        assert_allclose(twice, once, atol=1e-9)

    def test_full_confidence_acts_as_hints(self):
        xyz, n = grid_nodes(8, curved)
        split = 28
        values = xyz[:n, 2] + 0.4
        as_expanded = GdcProblem(xyz, values[:split], values[split:], np.ones(n - split))
        as_hints = GdcProblem(xyz, values, [], [])
        graph = build_graph(xyz, k=4)
        a = correct_with_confidence(as_expanded, graph, method="dense")
        b = correct(as_hints, graph, method="dense")
        assert_allclose(a, b, atol=1e-10)

    @pytest.mark.parametrize("conf", [0.0, 0.5])
    def test_partial_confidence_without_prior_is_free(self, conf):
        xyz, n = grid_nodes(8, curved)
        extra = 4
        bogus = xyz[n:n + extra, 2] + 5.0
        problem = GdcProblem(xyz, xyz[:n, 2], bogus, np.full(extra, conf))
        y = correct_with_confidence(problem, build_graph(xyz, k=4), method="dense")

        plain = problem.without_expansion()
        z = correct(plain, build_graph(plain.xyz, k=4), method="dense")
        reordered = np.r_[z[:n], z[len(z) - extra:], z[n:len(z) - extra]]
        assert_allclose(y, reordered, atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_solution_never_raises_the_objective(self, seed):
        rng = np.random.default_rng(seed)
        xyz, n = grid_nodes(8, curved)
        noisy = xyz.copy()
        noisy[:, 2] += rng.uniform(-1.0, 1.0, size=len(xyz))
        extra = 6
        conf = rng.uniform(0.0, 1.0, size=extra)
        problem = GdcProblem(noisy, xyz[:n, 2], xyz[n:n + extra, 2] + rng.normal(0.0, 0.5, size=extra), conf)
        graph = build_graph(noisy, k=4)
        blend = np.r_[np.ones(n), conf, np.zeros(len(xyz) - n - extra)]
        target = np.r_[problem.hint_values, problem.expanded_values, np.zeros(len(xyz) - n - extra)]
        start = blend * target + (1.0 - blend) * problem.depth
        y = correct_with_confidence(problem, graph, method="dense")
        assert objective(graph, y) <= objective(graph, start) + 1e-9

        plain = problem.without_expansion()
        plain_graph = graph.reordered(problem.plain_order())
        z = correct(plain, plain_graph, method="dense")
        start = np.r_[plain.hint_values, plain.depth[n:]]
        assert objective(plain_graph, z) <= objective(plain_graph, start) + 1e-9

    def test_hints_only_baseline_shares_the_graph(self):
        xyz, n = grid_nodes(8, curved)
        extra = 4
        problem = GdcProblem(xyz, xyz[:n, 2], xyz[n:n + extra, 2] + 5.0, np.full(extra, 0.5))
        graph = build_graph(xyz, k=4)
        baseline = correct_hints_only(problem, graph, method="dense")
        assert_allclose(baseline, correct_with_confidence(problem, graph, method="dense"), atol=1e-8)
        order = problem.plain_order()
        direct = correct(problem.without_expansion(), graph.reordered(order), method="dense")
        assert_array_equal(baseline[order], direct)

    def test_prior_pulls_toward_expanded_values(self):
        xyz, n = grid_nodes(8, planar)
        extra = 4
        target = xyz[n:n + extra, 2] + 5.0
        problem = GdcProblem(xyz, xyz[:n, 2], target, np.full(extra, 0.5))
        graph = build_graph(xyz, k=4)
        loose = correct_with_confidence(problem, graph, method="dense")
        tight = correct_with_confidence(problem, graph, prior_weight=1e6, method="dense")
        assert np.abs(loose[n:n + extra] - target).min() > 4.0
        assert_allclose(tight[n:n + extra], target, atol=1e-2)

    def test_expanded_nodes_rejected_by_plain_correction(self):
        xyz, n = grid_nodes(6, planar)
        problem = GdcProblem(xyz, xyz[:n, 2], [11.0], [0.5])
        with pytest.raises(DomainError):
            correct(problem, build_graph(xyz, k=4))

    def test_needs_a_hint(self):
        xyz, _ = grid_nodes(5, planar)
        with pytest.raises(DomainError):
            correct(GdcProblem(xyz, [], [], []), build_graph(xyz, k=4))

    def test_unanchored_components(self):
        cluster, _ = grid_nodes(3, planar, hint_rings=0)
        far = cluster + [1000.0, 0.0, 0.0]
        xyz = np.vstack([cluster, far])
        problem = GdcProblem(xyz, xyz[:2, 2], [], [])
        graph = build_graph(xyz, k=3)
        with pytest.raises(SingularSystemError, match="component"):
            correct(problem, graph)
        y = correct(problem, graph, unanchored="keep")
        assert_array_equal(y[9:], far[:, 2])


class TestProblemAssembly:
    def test_roles_and_order(self, intrinsics):
        prediction = depth_field(np.full((24, 32), 8.0))
        hints = sparse_depth(24, 32, [(2, 3, 7.5), (10, 20, 9.0)])
        g = depth_field(np.full((24, 32), 7.0), valid=np.zeros((24, 32), bool) | (np.arange(32) < 4))
        c = DenseField(np.full((24, 32), 0.5), np.ones((24, 32), bool), Representation.UNITLESS)
        problem, cloud = build_problem(prediction, intrinsics, hints, g, c)
        assert problem.hint_count == 2
        assert problem.expanded_count == 24 * 4 - 1
        assert problem.node_count == 24 * 32
        assert problem.roles()[:3] == ["hint", "hint", "exp"]
        assert_array_equal(problem.hint_values, [7.5, 9.0])
        assert (cloud.rows[0], cloud.cols[0]) == (2, 3)

    def test_scatter_back(self, intrinsics):
        prediction = depth_field(np.full((24, 32), 8.0))
        problem, cloud = build_problem(prediction, intrinsics, sparse_depth(24, 32, [(0, 0, 6.0)]))
        out = scatter_solution(cloud, np.arange(problem.node_count, dtype=float) + 1.0, prediction)
        assert out.values[0, 0] == 1.0
        assert out.valid.all()

    def test_hint_outside_prediction_becomes_node(self, intrinsics):
        valid = np.ones((24, 32), bool)
        valid[5, 5] = False
        prediction = depth_field(np.full((24, 32), 8.0), valid)
        problem, _ = build_problem(prediction, intrinsics, sparse_depth(24, 32, [(5, 5, 6.0)]))
        assert problem.node_count == 24 * 32
        assert problem.depth[0] == 6.0

    def test_problem_file(self, tmp_path):
        xyz, n = grid_nodes(4, planar)
        problem = GdcProblem(xyz, xyz[:n, 2], [], [])
        write_problem(problem, tmp_path / "p.csv")
        back = read_problem(tmp_path / "p.csv")
        assert_array_equal(back.xyz, problem.xyz)
        assert back.roles() == problem.roles()

    def test_problem_file_order_enforced(self, tmp_path):
        (tmp_path / "p.csv").write_text(
            "idx,x,y,z,role,value,confidence\n0,0,0,1,free,1,0\n1,0,1,1,hint,1,1\n")
        with pytest.raises(RasterFormatError, match="malformed record"):
            read_problem(tmp_path / "p.csv")
