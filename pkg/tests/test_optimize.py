"""Monotone projection, risk-estimate minimizers, and their grid oracles."""

import itertools

import numpy as np
import pytest

from nefshrink import (
    DataMatrix,
    RowOrder,
    SolverOptions,
    aure,
    grid_minimize_separable_quadratic,
    grid_oracle_ure,
    isotonic_box_projection,
    make_family,
    minimize_aure,
    minimize_ure,
    sample_feasible_weights,
    sample_matrix,
    ure,
)

from conftest import family_case


def enumerate_feasible(order, values):
    """Literal enumeration of monotone weight vectors over a value lattice."""
    for combo in itertools.combinations_with_replacement(values, order.n_groups):
        yield order.expand_group_values(np.array(combo))


def random_tau_instance(rng, n, p, kind="poisson"):
    """Instance with distinct-ish tau row sums so the ordering bites."""
    spec, theta, _ = family_case(kind, n, p, rng)
    if spec.trials is not None:
        raise ValueError("use a non-trial family here")
    tau = rng.integers(1, 4, (n, p))
    data = sample_matrix(spec, theta, tau, seed=int(rng.integers(1 << 30)))
    return spec, data


class TestRowOrder:
    def test_permutation_descends_by_row_sums(self):
        order = RowOrder.from_row_sums([2.0, 4.0, 3.0])
        np.testing.assert_array_equal(order.permutation, [1, 2, 0])
        np.testing.assert_array_equal(order.group_ids, [0, 1, 2])

    def test_ties_share_groups(self):
        order = RowOrder.from_row_sums([3.0, 1.0, 3.0])
        np.testing.assert_array_equal(order.permutation, [0, 2, 1])
        np.testing.assert_array_equal(order.group_ids, [0, 0, 1])
        assert order.n_groups == 2

    def test_feasibility_predicate(self):
        order = RowOrder.from_row_sums([2.0, 4.0])  # requires b1 >= b2
        assert order.is_feasible([0.9, 0.4])
        assert not order.is_feasible([0.4, 0.9])
        assert not order.is_feasible([1.2, 0.4])
        tied = RowOrder.from_row_sums([2.0, 2.0])
        assert tied.is_feasible([0.4, 0.4])
        assert not tied.is_feasible([0.4, 0.5])

    def test_expand_and_inverse(self):
        order = RowOrder.from_row_sums([3.0, 1.0, 3.0])
        np.testing.assert_array_equal(order.group_of_row(), [0, 1, 0])
        np.testing.assert_array_equal(
            order.expand_group_values([0.2, 0.7]), [0.2, 0.7, 0.2]
        )


class TestIsotonicBoxProjection:
    def test_already_feasible_is_untouched(self):
        order = RowOrder.from_row_sums([2.0, 4.0])  # b1 >= b2
        out = isotonic_box_projection([0.9, 0.4], [1.0, 1.0], order)
        np.testing.assert_array_equal(out, [0.9, 0.4])

    def test_violating_pair_pools_to_mean(self):
        order = RowOrder.from_row_sums([2.0, 4.0])
        out = isotonic_box_projection([0.3, 0.8], [1.0, 1.0], order)
        np.testing.assert_allclose(out, [0.55, 0.55])

    def test_weighted_triple_matches_fine_grid(self):
        # exact lattice optimum at 1e-3 via the dynamic program
        order = RowOrder.from_row_sums([3.0, 2.0, 1.0])  # b1 <= b2 <= b3
        targets = np.array([1.4, 0.2, 0.5])
        weights = np.array([2.0, 1.0, 1.0])
        out = isotonic_box_projection(targets, weights, order)
        np.testing.assert_allclose(out, [0.875, 0.875, 0.875])
        b_grid, _ = grid_minimize_separable_quadratic(
            weights, -2.0 * weights * targets, order, 1e-3
        )
        assert np.abs(out - b_grid).max() < 2e-3

    def test_box_clip_after_pooling(self):
        order = RowOrder.from_row_sums([3.0, 2.0, 1.0])
        out = isotonic_box_projection([-0.5, 0.2, 1.7], [1.0, 1.0, 1.0], order)
        np.testing.assert_array_equal(out, [0.0, 0.2, 1.0])

    def test_zero_weight_passes_through_to_nearest_feasible(self):
        order = RowOrder.from_row_sums([3.0, 2.0, 1.0])  # b1 <= b2 <= b3
        # free middle coordinate above its feasible interval
        out = isotonic_box_projection([0.2, 0.9, 0.5], [1.0, 0.0, 1.0], order)
        np.testing.assert_allclose(out, [0.2, 0.5, 0.5])
        # free middle coordinate below its feasible interval
        out = isotonic_box_projection([0.3, 0.1, 0.8], [1.0, 0.0, 1.0], order)
        np.testing.assert_allclose(out, [0.3, 0.3, 0.8])
        # free middle coordinate inside its feasible interval
        out = isotonic_box_projection([0.2, 0.4, 0.8], [1.0, 0.0, 1.0], order)
        np.testing.assert_allclose(out, [0.2, 0.4, 0.8])

    def test_all_zero_weights_pool_to_plain_mean(self):
        order = RowOrder.from_row_sums([2.0, 1.0])
        out = isotonic_box_projection([0.9, 0.4], [0.0, 0.0], order)
        np.testing.assert_allclose(out, [0.65, 0.65])

    def test_tie_groups_share_one_value(self):
        order = RowOrder.from_row_sums([2.0, 2.0])
        out = isotonic_box_projection([0.9, 0.4], [1.0, 1.0], order)
        np.testing.assert_allclose(out, [0.65, 0.65])

    def test_idempotent_and_feasible_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            order = RowOrder.from_row_sums(rng.integers(1, 4, n).astype(float))
            targets = rng.uniform(-0.5, 1.5, n)
            weights = rng.uniform(0.0, 3.0, n)
            weights[rng.uniform(size=n) < 0.25] = 0.0
            out = isotonic_box_projection(targets, weights, order)
            assert order.is_feasible(out)
            again = isotonic_box_projection(out, weights, order)
            # re-averaging a pooled tie group costs at most an ulp
            np.testing.assert_allclose(again, out, rtol=0, atol=1e-14)

    def test_validation_errors(self):
        order = RowOrder.from_row_sums([2.0, 1.0])
        with pytest.raises(ValueError, match="nonnegative"):
            isotonic_box_projection([0.5, 0.5], [1.0, -1.0], order)
        with pytest.raises(ValueError, match="length"):
            isotonic_box_projection([0.5], [1.0], order)


class TestSeparableGridOracle:
    def test_matches_literal_enumeration(self):
        rng = np.random.default_rng(3)
        values = np.linspace(0.0, 1.0, 21)  # 0.05 lattice
        for _ in range(25):
            n = int(rng.integers(1, 5))
            order = RowOrder.from_row_sums(rng.integers(1, 4, n).astype(float))
            quad = rng.uniform(0.0, 3.0, n)
            lin = rng.uniform(-3.0, 3.0, n)
            b_dp, val_dp = grid_minimize_separable_quadratic(quad, lin, order, 0.05)
            best = min(
                (float(quad @ (b**2) + lin @ b), tuple(b))
                for b in enumerate_feasible(order, values)
            )
            assert val_dp == pytest.approx(best[0], abs=1e-12)
            np.testing.assert_allclose(b_dp, best[1], atol=1e-12)


class TestMinimizeAure:
    def test_identical_rows_push_to_full_shrinkage(self):
        data = DataMatrix(np.tile([2.0, 3.0], (4, 1)), np.ones((4, 2)))
        result = minimize_aure(data, make_family("poisson"))
        np.testing.assert_array_equal(result.b, np.ones(4))
        assert result.converged and result.target_kind == "grand_mean"

    def test_closed_form_two_row_case(self):
        data = DataMatrix([[0.0, 0.0], [10.0, 10.0]], np.ones((2, 2)))
        result = minimize_aure(data, make_family("normal"))
        np.testing.assert_allclose(result.b, [0.02, 0.02], rtol=1e-12)
        assert result.objective == pytest.approx(aure(data, result.b, make_family("normal")), abs=0)

    def test_dominates_coarse_lattice(self, rng):
        values = np.linspace(0.0, 1.0, 21)
        for trial in range(10):
            spec, data = random_tau_instance(rng, 3, 2)
            result = minimize_aure(data, spec)
            for b in enumerate_feasible(RowOrder.from_tau(data.tau), values):
                assert result.objective <= aure(data, b, spec) + 1e-12

    def test_matches_fine_dynamic_program(self, rng):
        for trial in range(5):
            spec, data = random_tau_instance(rng, 4, 2, kind="normal")
            result = minimize_aure(data, spec)
            order = RowOrder.from_tau(data.tau)
            ybar = data.y.mean(axis=0)
            a = ((data.y - ybar) ** 2).sum(axis=1)
            v = (spec.nu0 + spec.nu1 * data.y + spec.nu2 * data.y**2) / (data.tau + spec.nu2)
            s = (1.0 - 1.0 / data.n) * v.sum(axis=1)
            b_dp, _ = grid_minimize_separable_quadratic(a, -2.0 * s, order, 1e-4)
            assert abs(result.objective - aure(data, b_dp, spec)) < 1e-8
            assert np.abs(result.b - b_dp).max() < 1e-3

    def test_needs_two_rows(self):
        data = DataMatrix([[1.0, 2.0]], np.ones((1, 2)))
        with pytest.raises(ValueError, match="two rows"):
            minimize_aure(data, make_family("normal"))


class TestMinimizeUre:
    def test_constant_matrix_fully_shrinks(self):
        spec = make_family("normal")
        data = DataMatrix(np.full((3, 2), 5.0), np.ones((3, 2)))
        result = minimize_ure(data, spec)
        np.testing.assert_array_equal(result.b, np.ones(3))
        np.testing.assert_array_equal(result.mu, np.full(2, 5.0))
        assert result.objective == pytest.approx(-1.0)
        assert result.converged

    def test_single_row_fixed_point_and_oracle(self):
        spec = make_family("normal")
        data = DataMatrix([[2.0, -1.0]], np.ones((1, 2)))
        result = minimize_ure(data, spec)
        # stationarity: b = clip(S/A(mu)), mu = clip(weighted mean) = Y when b > 0
        s = 2.0  # V = 1 per cell
        a = float(((data.y[0] - result.mu) ** 2).sum())
        if a > 0:
            assert result.b[0] == pytest.approx(min(1.0, max(0.0, s / a)))
        _, _, oracle_val = grid_oracle_ure(data, spec, 1e-3)
        assert result.objective <= oracle_val + 1e-6

    def test_poisson_instance_beats_coarse_oracle(self, rng):
        spec, data = random_tau_instance(rng, 3, 2)
        result = minimize_ure(data, spec)
        _, _, oracle_val = grid_oracle_ure(data, spec, 1e-2)
        assert result.objective <= oracle_val + 1e-6

    def test_two_sided_agreement_with_fine_oracle(self, rng):
        for trial in range(12):
            n = 1 + trial % 2
            spec, data = random_tau_instance(rng, n, 2, kind="normal")
            result = minimize_ure(data, spec)
            _, _, oracle_val = grid_oracle_ure(data, spec, 1e-3)
            assert result.objective <= oracle_val + 1e-9
            assert oracle_val <= result.objective + 1e-4

    def test_output_feasible_and_consistent(self, rng):
        for trial in range(10):
            spec, data = random_tau_instance(rng, 6, 3)
            result = minimize_ure(data, spec)
            assert RowOrder.from_tau(data.tau).is_feasible(result.b)
            assert np.all(np.abs(result.mu) <= data.data_range)
            assert result.objective == ure(data, result.b, result.mu, spec)

    def test_row_permutation_equivariance(self, rng):
        spec, data = random_tau_instance(rng, 5, 2)
        result = minimize_ure(data, spec)
        perm = np.random.default_rng(0).permutation(5)
        permuted = DataMatrix(data.y[perm], data.tau[perm])
        result_p = minimize_ure(permuted, spec)
        np.testing.assert_allclose(result_p.b, result.b[perm], atol=1e-12)
        assert result_p.objective == pytest.approx(result.objective, rel=1e-12)

    def test_iteration_budget_reports_nonconvergence(self, rng):
        spec, data = random_tau_instance(rng, 8, 3)
        opts = SolverOptions(max_outer_iterations=1, tolerance=1e-16)
        result = minimize_ure(data, spec, opts)
        assert not result.converged
        assert RowOrder.from_tau(data.tau).is_feasible(result.b)


class TestGridOracleUre:
    def test_tiny_case_matches_literal_enumeration(self):
        spec = make_family("normal")
        data = DataMatrix([[2.0]], np.ones((1, 1)))
        b, mu, val = grid_oracle_ure(data, spec, 0.5)
        best = np.inf
        for bv in (0.0, 0.5, 1.0):
            for mv in np.arange(-2.0, 2.0 + 0.25, 0.5):
                best = min(best, ure(data, [bv], [mv], spec))
        assert val == pytest.approx(best, abs=1e-15)
        assert val == ure(data, b, mu, spec)

    def test_refinement_never_increases(self, rng):
        spec, data = random_tau_instance(rng, 2, 2)
        _, _, coarse = grid_oracle_ure(data, spec, 0.25)
        _, _, fine = grid_oracle_ure(data, spec, 0.125)
        assert fine <= coarse

    def test_size_guards(self):
        spec = make_family("normal")
        big = DataMatrix(np.zeros((6, 2)) + 1.0, np.ones((6, 2)))
        with pytest.raises(ValueError, match="n <= 5"):
            grid_oracle_ure(big, spec, 0.5)
        wide = DataMatrix(np.ones((2, 4)), np.ones((2, 4)))
        with pytest.raises(ValueError, match="n <= 5"):
            grid_oracle_ure(wide, spec, 0.5)
        tall = DataMatrix(np.ones((5, 2)), np.arange(1, 11).reshape(5, 2))
        with pytest.raises(ValueError, match="monotone weight vectors"):
            grid_oracle_ure(tall, spec, 1e-3)


class TestSampleFeasibleWeights:
    def test_always_feasible(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            order = RowOrder.from_row_sums(rng.integers(1, 4, n).astype(float))
            b = sample_feasible_weights(order, rng)
            assert order.is_feasible(b)

    def test_deterministic_per_seed(self):
        order = RowOrder.from_row_sums([3.0, 2.0, 1.0])
        a = sample_feasible_weights(order, np.random.default_rng(11))
        b = sample_feasible_weights(order, np.random.default_rng(11))
        np.testing.assert_array_equal(a, b)


class TestSolverOptions:
    def test_defaults(self):
        opts = SolverOptions()
        assert opts.max_outer_iterations == 200
        assert opts.tolerance == 1e-10
        assert opts.mu_update == "closed_form"

    def test_validation(self):
        with pytest.raises(ValueError, match="at least 1"):
            SolverOptions(max_outer_iterations=0)
        with pytest.raises(ValueError, match="positive"):
            SolverOptions(tolerance=0.0)
        with pytest.raises(ValueError, match="mu_update"):
            SolverOptions(mu_update="gradient")
