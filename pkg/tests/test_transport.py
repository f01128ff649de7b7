import numpy as np
import pytest

from fewtext import episodes, transport


class TestCostMatrix:
    def test_zero_distance(self):
        x = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(transport.cost_matrix(x, x), [[0.0]])

    def test_3_4_5_triangle(self):
        c = transport.cost_matrix(np.array([[0.0, 0.0]]),
                                  np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(c, [[25.0]])

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(7, 5))
        b = rng.normal(size=(4, 5))
        c = transport.cost_matrix(a, b)
        for i in range(7):
            for j in range(4):
                naive = float(np.sum((a[i] - b[j]) ** 2))
                assert abs(c[i, j] - naive) < 1e-10

    def test_nonnegative_after_roundoff(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(20, 8)) * 1e-8
        assert np.all(transport.cost_matrix(a, a) >= 0)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            transport.cost_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestSinkhorn:
    def test_1x1(self):
        plan = transport.sinkhorn(np.array([[0.7]]), epsilon=0.1)
        np.testing.assert_allclose(plan.matrix, [[1.0]], atol=1e-9)
        assert abs(plan.cost - 0.7) < 1e-9

    def test_2x2_antidiagonal(self):
        c = np.array([[0.0, 1.0], [1.0, 0.0]])
        plan = transport.sinkhorn(c, epsilon=1e-3 * c.mean(), max_iter=5000)
        assert abs(plan.cost) < 1e-2
        np.testing.assert_allclose(plan.matrix, [[0.5, 0.0], [0.0, 0.5]],
                                   atol=1e-2)

    @pytest.mark.parametrize("seed", range(5))
    def test_cost_close_to_oracle(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(0.1, 1.0, (4, 4))
        _, opt = transport.exact_ot_oracle(c)
        plan = transport.sinkhorn(c, epsilon=1e-3 * c.mean(), tol=1e-9,
                                  max_iter=20_000)
        assert plan.cost >= opt - 1e-9
        assert (plan.cost - opt) / opt < 0.01

    def test_marginals_respected(self):
        rng = np.random.default_rng(2)
        c = rng.uniform(0, 1, (6, 3))
        plan = transport.sinkhorn(c, epsilon=0.05, tol=1e-10, max_iter=10_000)
        assert plan.converged
        assert plan.marginal_violation < 1e-10
        np.testing.assert_allclose(plan.matrix.sum(), 1.0, atol=1e-9)
        assert np.all(plan.matrix >= 0)

    def test_nonconvergence_flagged(self):
        rng = np.random.default_rng(3)
        c = rng.uniform(0, 1, (5, 5))
        plan = transport.sinkhorn(c, epsilon=1e-4 * c.mean(), tol=1e-14,
                                  max_iter=2)
        assert not plan.converged
        assert plan.iterations_used == 2

    def test_nan_cost_rejected(self):
        c = np.array([[0.0, np.nan], [1.0, 0.0]])
        with pytest.raises(ValueError):
            transport.sinkhorn(c, epsilon=0.1)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            transport.sinkhorn(np.ones((2, 2)), epsilon=0.0)


class TestExactOracle:
    def test_antidiagonal(self):
        plan, cost = transport.exact_ot_oracle(
            np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert cost == 0.0
        np.testing.assert_array_equal(plan, [[0.5, 0.0], [0.0, 0.5]])

    def test_constant_cost(self):
        _, cost = transport.exact_ot_oracle(np.ones((3, 3)))
        assert abs(cost - 1.0) < 1e-12

    def test_lower_bounds_random_couplings(self):
        rng = np.random.default_rng(4)
        c = rng.uniform(0, 1, (5, 5))
        _, opt = transport.exact_ot_oracle(c)
        for _ in range(100):
            # random feasible coupling: mixture of permutation matrices
            t = np.zeros((5, 5))
            for _ in range(4):
                perm = rng.permutation(5)
                t[np.arange(5), perm] += 1.0 / (4 * 5)
            assert np.sum(t * c) >= opt - 1e-12

    def test_rejects_nonsquare_and_large(self):
        with pytest.raises(transport.UnsupportedSizeError):
            transport.exact_ot_oracle(np.ones((2, 3)))
        with pytest.raises(transport.UnsupportedSizeError):
            transport.exact_ot_oracle(np.ones((9, 9)))


class TestRetrieveTopR:
    def make_plan(self, c, eps=0.05):
        return transport.sinkhorn(c, epsilon=eps, tol=1e-10, max_iter=5000)

    def test_r_zero(self):
        c = np.random.default_rng(0).uniform(0, 1, (4, 2))
        assert transport.retrieve_top_r(self.make_plan(c), c, 0) == []

    def test_full_retrieval_sorted_by_score(self):
        rng = np.random.default_rng(1)
        c = rng.uniform(0, 1, (5, 3))
        plan = self.make_plan(c)
        out = transport.retrieve_top_r(plan, c, 5)
        assert sorted(out) == list(range(5))
        scores = np.sum(plan.matrix * c, axis=1) / plan.matrix.sum(axis=1)
        assert list(np.argsort(scores, kind="stable")) == out

    def test_coinciding_query_ranked_first(self):
        rng = np.random.default_rng(6)
        support = rng.normal(size=(2, 3))
        queries = rng.normal(size=(6, 3)) + 10.0  # far away
        queries[4] = support[0]  # one query coincides with a support point
        c = transport.cost_matrix(queries, support)
        plan = self.make_plan(c, eps=0.05 * c.mean())
        out = transport.retrieve_top_r(plan, c, 1)
        assert out == [4]

    def test_more_than_m_returns_all(self):
        c = np.random.default_rng(0).uniform(0, 1, (3, 2))
        assert len(transport.retrieve_top_r(self.make_plan(c), c, 10)) == 3

    def test_tie_breaks_by_index(self):
        c = np.full((4, 2), 0.5)
        plan = self.make_plan(c)
        assert transport.retrieve_top_r(plan, c, 2) == [0, 1]


class TestBarycentricMap:
    def fake_plan(self, t):
        m, k = t.shape
        return transport.TransportPlan(
            matrix=t, row_marginal=np.full(m, 1 / m),
            col_marginal=np.full(k, 1 / k), epsilon=0.1, iterations_used=0,
            marginal_violation=0.0, converged=True, cost=0.0)

    def test_point_mass(self):
        support = np.array([[1.0, 0.0], [5.0, 5.0]])
        t = np.array([[0.0, 0.25]])
        out = transport.barycentric_map(self.fake_plan(t), [0], support)
        np.testing.assert_allclose(out, [[5.0, 5.0]])

    def test_uniform_midpoint(self):
        support = np.array([[0.0, 0.0], [2.0, 4.0]])
        t = np.array([[0.125, 0.125]])
        out = transport.barycentric_map(self.fake_plan(t), [0], support)
        np.testing.assert_allclose(out, [[1.0, 2.0]])

    def test_row_and_matrix_forms_agree(self):
        rng = np.random.default_rng(8)
        queries = rng.normal(size=(8, 4))
        support = rng.normal(size=(3, 4))
        c = transport.cost_matrix(queries, support)
        plan = transport.sinkhorn(c, epsilon=0.05 * c.mean(), tol=1e-10,
                                  max_iter=5000)
        retrieved = [1, 4, 6]
        per_row = transport.barycentric_map(plan, retrieved, support)
        matrix = transport.barycentric_map_matrix(plan, retrieved, support)
        assert np.max(np.abs(per_row - matrix)) < 1e-10

    def test_zero_row_mass(self):
        t = np.array([[0.0, 0.0], [0.5, 0.5]])
        with pytest.raises(transport.DegeneratePlanError):
            transport.barycentric_map(self.fake_plan(t), [0], np.eye(2))

    def test_mapped_points_in_convex_hull(self):
        rng = np.random.default_rng(9)
        queries = rng.normal(size=(6, 3))
        support = rng.normal(size=(4, 3))
        c = transport.cost_matrix(queries, support)
        plan = transport.sinkhorn(c, epsilon=0.05 * c.mean(), tol=1e-10,
                                  max_iter=5000)
        retrieved = [0, 2, 5]
        mapped = transport.barycentric_map(plan, retrieved, support)
        for pos, i in enumerate(retrieved):
            w = plan.matrix[i] / plan.matrix[i].sum()
            assert np.all(w >= 0)
            assert abs(w.sum() - 1.0) < 1e-9
            np.testing.assert_allclose(mapped[pos], w @ support, atol=1e-10)


class TestEstimatePrototypes:
    def reps_from_episode(self, ep):
        sup = [np.vstack([s.vectors[0] for s in g]) for g in ep.support]
        qry = np.vstack([q.vectors[0] for q in ep.query])
        return sup, qry

    def test_r_zero_is_support_mean_bitwise(self):
        rng = np.random.default_rng(0)
        sup = [rng.normal(size=(3, 4)) for _ in range(3)]
        qry = rng.normal(size=(10, 4))
        protos, augmented = transport.estimate_prototypes(sup, qry, r=0)
        for c in range(3):
            direct = sup[c].mean(axis=0)
            assert np.array_equal(protos[c], direct)
            assert augmented[c].retrieved_query_indices == []

    def test_all_points_coincide(self):
        point = np.array([1.0, -2.0, 0.5])
        sup = [point[None, :], point[None, :] + 10.0]
        qry = point[None, :]
        protos, _ = transport.estimate_prototypes(sup, qry, r=1)
        np.testing.assert_allclose(protos[0], point, atol=1e-9)

    def test_mapped_points_are_convex_combos_of_retrieved_queries(self):
        rng = np.random.default_rng(1)
        sup = [rng.normal(size=(2, 4)) for _ in range(2)]
        qry = rng.normal(size=(9, 4))
        _, augmented = transport.estimate_prototypes(sup, qry, r=4)
        for aug in augmented:
            ret = aug.retrieved_query_indices
            assert len(ret) == 4
            hull_points = qry[ret]
            for point in aug.mapped_points:
                # solve for convex weights; least squares then validate
                w, *_ = np.linalg.lstsq(
                    np.vstack([hull_points.T, np.ones(len(ret))]),
                    np.concatenate([point, [1.0]]), rcond=None)
                np.testing.assert_allclose(w @ hull_points, point, atol=1e-8)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(2)
        sup = [rng.normal(size=(2, 5)) for _ in range(3)]
        qry = rng.normal(size=(12, 5))
        shift = rng.normal(size=5)
        p1, _ = transport.estimate_prototypes(sup, qry, r=3)
        p2, _ = transport.estimate_prototypes([s + shift for s in sup],
                                              qry + shift, r=3)
        assert np.max(np.abs(p2 - (p1 + shift))) < 1e-9

    def test_determinism(self):
        rng = np.random.default_rng(3)
        sup = [rng.normal(size=(2, 4)) for _ in range(3)]
        qry = rng.normal(size=(8, 4))
        p1, _ = transport.estimate_prototypes(sup, qry, r=3)
        p2, _ = transport.estimate_prototypes(sup, qry, r=3)
        assert np.array_equal(p1, p2)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            transport.estimate_prototypes([np.ones((1, 2))], np.ones((3, 2)),
                                          r=1)

    def test_monte_carlo_prototypes_closer_to_centers(self):
        # known-center Gaussian episodes: augmented prototypes must land
        # at least 20% closer to the true centers than support means
        rng = np.random.default_rng(0)
        dist_pn, dist_qda = [], []
        for e in range(300):
            spec = episodes.SyntheticSpec(
                n_way=5, k_shot=1, m_query=25, dim=16,
                class_center_scale=1.5, intra_class_stddev=1.0, seed=e)
            ep, centers = episodes.gen_synthetic_episode(spec, rng)
            sup, qry = self.reps_from_episode(ep)
            pn = np.array([s.mean(axis=0) for s in sup])
            protos, _ = transport.estimate_prototypes(sup, qry, r=10)
            dist_pn.append(np.linalg.norm(pn - centers, axis=1).mean())
            dist_qda.append(np.linalg.norm(protos - centers, axis=1).mean())
        reduction = 1.0 - np.mean(dist_qda) / np.mean(dist_pn)
        assert reduction >= 0.20, f"reduction {reduction:.3f}"
