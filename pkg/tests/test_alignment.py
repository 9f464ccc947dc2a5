"""Alignment: similarity, cross-reference masses, exact EMD vs an LP oracle,
and the fixed-alignment baselines."""

import numpy as np
import pytest
from scipy.optimize import linprog

from momalign.alignment import (
    EPS_MASS,
    Masses,
    alignment_score,
    cross_reference_products,
    emd_score,
    fixed_alignment_cross,
    fixed_alignment_pp,
    marginal_masses,
    similarity_matrix,
    solve_emd,
)
from momalign.descriptor import DescriptorSequence
from momalign.linalg import cosine


def make_seq(vectors, scale_ids=None, times=None):
    v = np.asarray(vectors, dtype=np.float64)
    n = v.shape[0]
    if scale_ids is None:
        scale_ids = np.zeros(n, dtype=np.int64)
    if times is None:
        times = np.arange(n)
    return DescriptorSequence(v, scale_ids, times)


def random_seq(rng, n, dim=5):
    return make_seq(rng.standard_normal((n, dim)))


def lp_oracle(sim, mu, gamma):
    """Brute-force transportation LP via scipy's HiGHS solver."""
    m, n = sim.shape
    cost = (1.0 - sim).ravel()
    a_eq = []
    for i in range(m):
        row = np.zeros(m * n)
        row[i * n : (i + 1) * n] = 1.0
        a_eq.append(row)
    for j in range(n):
        col = np.zeros(m * n)
        col[j::n] = 1.0
        a_eq.append(col)
    b_eq = np.concatenate([mu, gamma])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def random_masses(rng, m, n):
    mu = rng.uniform(0.05, 1.0, m)
    gamma = rng.uniform(0.05, 1.0, n)
    return Masses(mu / mu.sum(), gamma / gamma.sum())


class TestSimilarityMatrix:
    def test_self_similarity_diagonal_ones(self):
        rng = np.random.default_rng(0)
        q = random_seq(rng, 4)
        sim = similarity_matrix(q, q)
        assert np.allclose(np.diag(sim), 1.0, atol=1e-12)

    def test_orthogonal_sets_all_zero(self):
        q = make_seq(np.eye(4)[:2])
        s = make_seq(np.eye(4)[2:])
        assert np.allclose(similarity_matrix(q, s), 0.0, atol=1e-15)

    def test_matches_cosine_oracle(self):
        rng = np.random.default_rng(1)
        q = random_seq(rng, 3)
        s = random_seq(rng, 4)
        sim = similarity_matrix(q, s)
        for i in range(3):
            for j in range(4):
                assert sim[i, j] == pytest.approx(
                    cosine(q.vectors[i], s.vectors[j]), abs=1e-12
                )

    def test_rejects_dim_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            similarity_matrix(random_seq(rng, 2, dim=3), random_seq(rng, 2, dim=4))


class TestMarginalMasses:
    def test_hand_example_with_clamp(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        q = make_seq([e1, e2])
        s = make_seq([e1, e1])
        raw_mu, raw_gamma = cross_reference_products(q, s)
        assert np.allclose(raw_mu, [1.0, 0.0], atol=1e-15)
        assert np.allclose(raw_gamma, [0.5, 0.5], atol=1e-15)
        masses = marginal_masses(q, s)
        assert masses.mu[0] == pytest.approx(1.0, abs=1e-5)
        assert masses.mu[1] >= EPS_MASS
        assert np.allclose(masses.gamma, [0.5, 0.5], atol=1e-5)

    def test_orthonormal_self_masses_uniform(self):
        q = make_seq(np.eye(3))
        masses = marginal_masses(q, q)
        assert np.allclose(masses.mu, 1.0 / 3, atol=1e-5)
        assert np.allclose(masses.gamma, 1.0 / 3, atol=1e-5)

    def test_raw_products_match_direct_oracle(self):
        rng = np.random.default_rng(3)
        q = random_seq(rng, 4)
        s = random_seq(rng, 4)
        raw_mu, raw_gamma = cross_reference_products(q, s)
        s_mean = s.vectors.mean(axis=0)
        q_mean = q.vectors.mean(axis=0)
        for l in range(4):
            assert raw_mu[l] == pytest.approx(float(q.vectors[l] @ s_mean), abs=1e-12)
            assert raw_gamma[l] == pytest.approx(float(s.vectors[l] @ q_mean), abs=1e-12)

    def test_output_satisfies_invariants(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            q = random_seq(rng, int(rng.integers(1, 7)))
            s = random_seq(rng, int(rng.integers(1, 7)))
            masses = marginal_masses(q, s)
            assert masses.mu.min() >= EPS_MASS - 1e-15
            assert masses.gamma.min() >= EPS_MASS - 1e-15
            assert masses.mu.sum() == pytest.approx(1.0, abs=1e-12)
            assert masses.gamma.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_empty(self):
        rng = np.random.default_rng(5)
        q = random_seq(rng, 2)
        empty = DescriptorSequence(
            np.zeros((0, 5)), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        )
        with pytest.raises(ValueError):
            marginal_masses(q, empty)


class TestSolveEmd:
    def test_single_route(self):
        plan = solve_emd(np.array([[0.3]]), Masses([1.0], [1.0]))
        assert plan.values[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert plan.objective == pytest.approx(0.7, abs=1e-12)

    def test_zero_cost_diagonal(self):
        sim = np.eye(2)
        plan = solve_emd(sim, Masses([0.5, 0.5], [0.5, 0.5]))
        assert np.allclose(plan.values, 0.5 * np.eye(2), atol=1e-9)
        assert plan.objective == pytest.approx(0.0, abs=1e-9)

    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(60):
            m = int(rng.integers(1, 7))
            n = int(rng.integers(1, 7))
            sim = rng.uniform(-1, 1, size=(m, n))
            masses = random_masses(rng, m, n)
            plan = solve_emd(sim, masses)
            oracle = lp_oracle(sim, masses.mu, masses.gamma)
            assert abs(plan.objective - oracle) < 1e-6

    def test_plan_feasible(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = int(rng.integers(1, 8))
            n = int(rng.integers(1, 8))
            sim = rng.uniform(-1, 1, size=(m, n))
            masses = random_masses(rng, m, n)
            plan = solve_emd(sim, masses)
            assert plan.values.min() >= 0.0
            assert np.allclose(plan.values.sum(axis=1), masses.mu, atol=1e-8)
            assert np.allclose(plan.values.sum(axis=0), masses.gamma, atol=1e-8)

    def test_degenerate_ties_terminate(self):
        # Uniform costs and equal masses: heavily degenerate, must not cycle.
        sim = np.zeros((5, 5))
        masses = Masses(np.full(5, 0.2), np.full(5, 0.2))
        plan = solve_emd(sim, masses)
        assert plan.objective == pytest.approx(1.0, abs=1e-9)

    def test_deterministic_under_ties(self):
        sim = np.zeros((4, 3))
        masses = Masses(np.full(4, 0.25), np.full(3, 1 / 3))
        a = solve_emd(sim, masses)
        b = solve_emd(sim, masses)
        assert np.array_equal(a.values, b.values)

    def test_rejects_unbalanced(self):
        with pytest.raises(ValueError):
            Masses([0.6, 0.5], [0.5, 0.5])

    def test_rejects_non_finite_cost(self):
        with pytest.raises(ValueError):
            solve_emd(np.array([[np.nan]]), Masses([1.0], [1.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            solve_emd(np.zeros((2, 2)), Masses([1.0], [1.0]))


class TestAlignmentScore:
    def test_identity_pairing(self):
        sim = np.eye(2)
        plan = solve_emd(sim, Masses([0.5, 0.5], [0.5, 0.5]))
        assert alignment_score(sim, plan) == pytest.approx(1.0, abs=1e-9)

    def test_constant_similarity(self):
        rng = np.random.default_rng(8)
        sim = np.full((3, 4), 0.42)
        masses = random_masses(rng, 3, 4)
        plan = solve_emd(sim, masses)
        assert alignment_score(sim, plan) == pytest.approx(0.42, abs=1e-9)

    def test_score_equals_one_minus_objective(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            sim = rng.uniform(-1, 1, size=(4, 5))
            masses = random_masses(rng, 4, 5)
            plan = solve_emd(sim, masses)
            assert alignment_score(sim, plan) == pytest.approx(
                1.0 - plan.objective, abs=1e-9
            )

    def test_bounded(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            q = random_seq(rng, int(rng.integers(1, 6)))
            s = random_seq(rng, int(rng.integers(1, 6)))
            assert -1.0 - 1e-12 <= emd_score(q, s) <= 1.0 + 1e-12


class TestAlignmentInvariances:
    def test_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            q = random_seq(rng, int(rng.integers(1, 6)))
            s = random_seq(rng, int(rng.integers(1, 6)))
            assert emd_score(q, s) == pytest.approx(emd_score(s, q), abs=1e-9)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            q = random_seq(rng, 4)
            s = random_seq(rng, 5)
            c = float(rng.uniform(0.1, 10.0))
            scaled = make_seq(c * q.vectors)
            assert emd_score(scaled, s) == pytest.approx(emd_score(q, s), abs=1e-9)

    def test_support_permutation_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            q = random_seq(rng, 4)
            s = random_seq(rng, 5)
            perm = rng.permutation(5)
            permuted = make_seq(s.vectors[perm])
            assert emd_score(q, permuted) == pytest.approx(emd_score(q, s), abs=1e-9)


class TestFixedBaselines:
    def test_pp_self_is_one(self):
        rng = np.random.default_rng(14)
        q = random_seq(rng, 4)
        assert fixed_alignment_pp(q, q) == pytest.approx(1.0, abs=1e-12)

    def test_pp_orthogonal_is_zero(self):
        q = make_seq(np.eye(4)[:2])
        s = make_seq(np.eye(4)[2:])
        assert fixed_alignment_pp(q, s) == 0.0

    def test_pp_matches_per_timestamp_oracle(self):
        rng = np.random.default_rng(15)
        q = random_seq(rng, 5)
        s = random_seq(rng, 5)
        oracle = np.mean(
            [cosine(q.vectors[i], s.vectors[i]) for i in range(5)]
        )
        assert fixed_alignment_pp(q, s) == pytest.approx(oracle, abs=1e-12)

    def test_pp_rejects_structure_mismatch(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ValueError):
            fixed_alignment_pp(random_seq(rng, 3), random_seq(rng, 4))

    def test_cross_repeated_descriptor(self):
        q = make_seq([[1.0, 2.0], [1.0, 2.0]])
        assert fixed_alignment_cross(q, q) == pytest.approx(1.0, abs=1e-12)

    def test_cross_is_mean_of_similarity(self):
        rng = np.random.default_rng(17)
        q = random_seq(rng, 3)
        s = random_seq(rng, 6)
        assert fixed_alignment_cross(q, s) == pytest.approx(
            float(np.mean(similarity_matrix(q, s))), abs=1e-12
        )
