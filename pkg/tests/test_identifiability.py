"""Data matrix construction, rank tests, and the dual certificate."""

import numpy as np
import pytest

import ioclqr as io


class TestDataMatrix:
    def test_scalar_closed_form(self):
        # n = m = 1, N = 4: the two rows are [b x_2 + a b x_3] and [b x_3]
        a, b = 1.1, 0.7
        sys = io.LtiSystem([[a]], [[b]])
        ep = io.simulate(sys, io.solve_riccati(sys, [[0.8]], 4), [2.0])
        Am = io.build_A_matrix(sys, io.TrajectoryBundle([ep], 4, kind="exact"))
        x2, x3 = ep.x[0, 1], ep.x[0, 2]
        np.testing.assert_allclose(Am, [[b * x2 + a * b * x3], [b * x3]], atol=1e-14)

    def test_true_cost_reproduces_inputs(self, random_system, random_psd):
        # -u_{1:N-2} = A(x) D vech(Q) must hold exactly on optimal data
        rng = np.random.default_rng(33)
        for n, m, M, N in [(2, 1, 1, 4), (2, 2, 3, 6), (3, 1, 2, 7)]:
            sys = random_system(rng, n=n, m=m)
            Q = random_psd(rng, n)
            bundle = io.generate_bundle(sys, Q, N, M, seed=int(rng.integers(1 << 30)))
            AD = io.build_A_matrix(sys, bundle) @ io.duplication_map(n)
            lhs = AD @ io.vech(Q)
            rhs = io.stacked_inputs_rhs(bundle)
            scale = max(1.0, np.abs(rhs).max())
            np.testing.assert_allclose(lhs, rhs, atol=1e-9 * scale)

    def test_rhs_stacking_order(self):
        # episode-major, then column-major over the (m, N-2) input block
        x = np.zeros((1, 5))
        u1 = np.array([[1.0, 2.0, 3.0, 4.0]])
        u2 = np.array([[5.0, 6.0, 7.0, 8.0]])
        b = io.TrajectoryBundle(
            [io.Episode(x, u1), io.Episode(x, u2)], 5, kind="exact"
        )
        np.testing.assert_array_equal(
            io.stacked_inputs_rhs(b), [-1.0, -2.0, -3.0, -5.0, -6.0, -7.0]
        )

    def test_shape_and_guards(self, random_system, random_psd):
        rng = np.random.default_rng(34)
        sys = random_system(rng, n=2, m=2)
        bundle = io.generate_bundle(sys, random_psd(rng, 2), N=6, M=3, seed=0)
        assert io.build_A_matrix(sys, bundle).shape == (3 * 4 * 2, 4)
        short = io.generate_bundle(sys, random_psd(rng, 2), N=3, M=1, seed=0)
        with pytest.raises(io.DimensionMismatch):
            io.build_A_matrix(sys, short)
        other = random_system(rng, n=3, m=1)
        with pytest.raises(io.DimensionMismatch):
            io.build_A_matrix(other, bundle)


class TestRankCondition:
    def test_full_rank_instance(self, rich_instance):
        AD = io.build_A_matrix(rich_instance["sys"], rich_instance["bundle"])
        AD = AD @ io.duplication_map(2)
        rank, full, kernel = io.check_rank_condition(AD)
        assert (rank, full, kernel) == (3, True, [])

    def test_single_episode_deficiency(self, example_instance):
        AD = io.build_A_matrix(example_instance["sys"], example_instance["bundle"])
        AD = AD @ io.duplication_map(3)
        rank, full, kernel = io.check_rank_condition(AD)
        assert rank == 5 and not full and len(kernel) == 1
        # the kernel direction lines up with the known unidentifiable direction
        k = io.vech(kernel[0])
        d = io.vech(example_instance["dQ"])
        corr = abs(k @ d) / (np.linalg.norm(k) * np.linalg.norm(d))
        assert corr > 0.999
        # and it really is annihilated by the data matrix
        assert np.linalg.norm(AD @ k) <= 1e-8 * np.linalg.norm(AD)

    def test_kernel_is_vech_orthonormal_and_sign_fixed(self, random_system, random_psd):
        rng = np.random.default_rng(35)
        sys = random_system(rng, n=2, m=1)
        bundle = io.generate_bundle(sys, random_psd(rng, 2), N=4, M=1, seed=3)
        AD = io.build_A_matrix(sys, bundle) @ io.duplication_map(2)
        rank, full, kernel = io.check_rank_condition(AD)
        assert not full and len(kernel) == 3 - rank >= 1
        V = np.stack([io.vech(k) for k in kernel])
        np.testing.assert_allclose(V @ V.T, np.eye(len(kernel)), atol=1e-12)
        for v in V:
            assert v[np.argmax(np.abs(v))] > 0
        for k in kernel:
            np.testing.assert_allclose(k, k.T, atol=0)

    def test_explicit_tol_override(self):
        AD = np.diag([1.0, 1.0, 1e-7])  # columns are vech coordinates for n=2
        rank, full, _ = io.check_rank_condition(AD)
        assert full  # default tolerance keeps the small singular value
        rank, full, kernel = io.check_rank_condition(AD, tol=1e-3)
        assert rank == 2 and not full and len(kernel) == 1

    def test_thm3_implies_full_rank(self, random_system, random_psd):
        rng = np.random.default_rng(40)
        for _ in range(10):
            n = int(rng.integers(2, 4))
            sys = random_system(rng, n=n, m=1)
            bundle = io.generate_bundle(
                sys, random_psd(rng, n), N=n + 3, M=n, seed=int(rng.integers(1 << 30))
            )
            if io.check_thm3(bundle):
                AD = io.build_A_matrix(sys, bundle) @ io.duplication_map(n)
                assert io.check_rank_condition(AD)[1]


class TestThm3:
    def test_holds_on_rich_instance(self, rich_instance):
        assert io.check_thm3(rich_instance["bundle"]) is True

    def test_fails_on_collinear_inits(self, random_system, random_psd):
        rng = np.random.default_rng(36)
        sys = random_system(rng, n=2, m=1)
        v = np.array([1.0, 2.0])
        bundle = io.generate_bundle(
            sys,
            random_psd(rng, 2),
            N=6,
            M=3,
            init_sampler=lambda r: v * r.uniform(0.5, 2.0),
            seed=5,
        )
        assert io.check_thm3(bundle) is False

    def test_hypotheses(self, random_system, random_psd):
        rng = np.random.default_rng(37)
        sys = random_system(rng, n=3, m=1)
        Q = random_psd(rng, 3)
        with pytest.raises(io.HypothesisUnmet):
            io.check_thm3(io.generate_bundle(sys, Q, N=4, M=3, seed=0))  # N < n+2
        with pytest.raises(io.HypothesisUnmet):
            io.check_thm3(io.generate_bundle(sys, Q, N=6, M=2, seed=0))  # M < n


class TestProp2Certificate:
    def test_worked_instance_certifies(self, example_instance):
        report = io.assess(example_instance["sys"], example_instance["bundle"])
        assert report.verdict == "unique_by_dual"
        rec = report.prop2
        assert rec.rank_Phi == 2
        assert rec.intersection_trivial
        assert rec.max_violation < 1e-6
        # data entries carry four decimals, so 0 is met only to ~1e-5
        assert abs(rec.dual_value) < 1e-4
        w = np.linalg.eigvalsh(rec.Phi_star)
        assert w.min() > -1e-9

    def test_zero_objective_trace_free_kernel(self):
        # tr(0 * Phi) with a trace-free constraint keeps Phi = I: full rank,
        # so the only matrix supported on its null space is 0
        d = np.array([[1.0, 0.0], [0.0, -1.0]]) / np.sqrt(2.0)
        rec = io.prop2_certificate(np.zeros((2, 2)), [d])
        np.testing.assert_allclose(rec.Phi_star, np.eye(2), atol=1e-9)
        assert rec.rank_Phi == 2
        assert rec.intersection_trivial
        assert rec.dual_value == pytest.approx(0.0, abs=1e-12)

    def test_empty_kernel_rejected(self):
        with pytest.raises(io.DimensionMismatch):
            io.prop2_certificate(np.eye(2), [])

    def test_trace_constraint_collapses_to_zero(self):
        # tr(Phi) = 0 with Phi >= 0 forces Phi = 0: rank 0, and the null space
        # is everything, so the intersection test cannot pass
        rec = io.prop2_certificate(np.eye(2), [np.eye(2) / np.sqrt(2.0)])
        assert np.linalg.norm(rec.Phi_star) < 1e-6
        assert rec.rank_Phi == 0
        assert not rec.intersection_trivial

    def test_dual_value_matches_grid_search(self):
        # boundary objective diag(1, 0) with an off-diagonal constraint: the
        # feasible cone is the nonnegative diagonals, so min tr(Q' Phi) = 0
        Qp = np.diag([1.0, 0.0])
        d = np.array([[0.0, 1.0], [1.0, 0.0]]) / np.sqrt(2.0)
        rec = io.prop2_certificate(Qp, [d])
        best = np.inf
        for p in np.linspace(0.0, 2.0, 41):
            for s in np.linspace(0.0, 2.0, 41):
                for r in np.linspace(-1.0, 1.0, 41):
                    Phi = np.array([[p, r], [r, s]])
                    if np.linalg.eigvalsh(Phi)[0] < -1e-12:
                        continue
                    if abs(np.sum(d * Phi)) > 1e-9:
                        continue
                    best = min(best, float(np.sum(Qp * Phi)))
        assert best == pytest.approx(0.0, abs=1e-12)
        assert rec.dual_value == pytest.approx(best, abs=1e-6)
        # the certifying pair: Phi* supported on e2, kernel direction off-diagonal
        assert rec.rank_Phi == 1
        assert rec.intersection_trivial

    def test_never_certifies_ambiguous_instances(self, random_system):
        """Interior cost + rank-deficient data means several PSD costs fit the
        same trajectories, so the dual route must stay silent."""
        rng = np.random.default_rng(38)
        hit = 0
        for _ in range(8):
            sys = random_system(rng, n=2, m=1)
            G = rng.standard_normal((2, 2))
            Q = G @ G.T + 0.3 * np.eye(2)  # strictly PD: ambiguity is real
            Q *= 0.8 / np.linalg.norm(Q)
            bundle = io.generate_bundle(sys, Q, N=4, M=1, seed=int(rng.integers(1 << 30)))
            report = io.assess(sys, bundle)
            if report.kernel_dim > 0:
                hit += 1
                assert report.verdict == "not_determined"
        assert hit >= 5  # single short episodes are rank-deficient in practice


class TestAssess:
    def test_full_rank_verdict_and_solution(self, rich_instance):
        report = io.assess(rich_instance["sys"], rich_instance["bundle"])
        assert report.verdict == "unique_by_rank"
        assert report.full_column_rank and report.kernel_dim == 0
        assert report.prop2 is None
        assert np.linalg.norm(report.q_prime - rich_instance["Qbar"]) < 1e-6

    def test_thm3_fallback_when_rank_is_inconclusive(self, rich_instance):
        # an absurd rank tolerance empties the rank route; the spanning test
        # still settles uniqueness
        report = io.assess(rich_instance["sys"], rich_instance["bundle"], tol=1e9)
        assert not report.full_column_rank
        assert report.thm3_holds is True
        assert report.verdict == "unique_by_thm3"

    def test_thm3_recorded_as_none_when_unmet(self, example_instance):
        report = io.assess(example_instance["sys"], example_instance["bundle"])
        assert report.thm3_holds is None  # M = 1 < n

    def test_rejects_noisy_bundle(self, rich_instance):
        noisy = io.add_noise(rich_instance["bundle"], snr_db_x=20.0, seed=1)
        with pytest.raises(io.DimensionMismatch):
            io.assess(rich_instance["sys"], noisy)

    def test_json_layout(self, rich_instance, example_instance):
        doc = io.assess(rich_instance["sys"], rich_instance["bundle"]).to_json()
        assert set(doc) == {"rank_AD", "verdict", "kernel_dim", "prop2"}
        assert doc["prop2"] is None
        doc = io.assess(example_instance["sys"], example_instance["bundle"]).to_json()
        assert set(doc) == {"rank_AD", "verdict", "kernel_dim", "prop2"}
        assert set(doc["prop2"]) == {
            "Phi_star",
            "rank_Phi",
            "intersection_trivial",
            "dual_value",
        }
        assert doc["rank_AD"] == 5 and doc["kernel_dim"] == 1
