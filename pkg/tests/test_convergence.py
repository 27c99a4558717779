import math

import numpy as np
import pytest

import latticesde as lat
from latticesde.convergence import (
    cauchy_constants,
    cauchy_table,
    moment_constants,
    simulate_levels,
)


@pytest.fixture(scope="module")
def decoupled_setup():
    """Interaction-free model: sites evolve independently."""
    config = lat.sample_configuration(2.0, 5.0, 1, 1.0, 400)
    model = lat.make_model("linear", 1.0, kernel_cap=0.0, rho=1.0,
                           sigma0=0.5, p=2.0)
    zeta = lat.WeightedSeq(config, np.ones(config.n_sites))
    return config, model, zeta


class TestMomentField:
    def test_zero_model_is_identically_zero(self, single_site_config):
        model = lat.make_model("linear", 1.0, p=2.0)
        zeta = lat.WeightedSeq(single_site_config, np.zeros(1))
        ens = lat.simulate_truncated(
            model, single_site_config, [0], zeta, 0.5, 0.01, 8, 0
        )
        field = lat.moment_field(ens, 2.0)
        assert np.all(field.per_site == 0.0)

    def test_frozen_sites_report_exact_power(self, poisson_1d):
        model = lat.make_model("cubic", 0.0, kernel_cap=0.1, rho=1.0,
                               p=4.0, sigma0=0.2)
        rng = np.random.default_rng(1)
        zeta = lat.WeightedSeq(poisson_1d, rng.standard_normal(poisson_1d.n_sites))
        ens = lat.simulate_truncated(model, poisson_1d, [0], zeta, 0.5, 0.01, 16, 2)
        field = lat.moment_field(ens, 4.0)
        for x in range(1, poisson_1d.n_sites):
            # trajectory is bitwise constant; the p-th power itself may land
            # one ulp off the scalar evaluation (vectorized pow)
            assert field.per_site[x] == pytest.approx(
                abs(zeta.values[x]) ** 4, rel=1e-15
            )
            assert field.stderr[x] == 0.0

    def test_ou_sup_matches_oracle(self, ou_ensemble):
        field = lat.moment_field(ou_ensemble, 2.0)
        _, stationary = lat.ou_moment_oracle(1.0, math.sqrt(2.0), 0.0, 1.0)
        assert field.per_site[0] == pytest.approx(stationary, abs=3.5 * field.stderr[0])


class TestZNorm:
    def test_zero_field(self, single_site_config):
        field = lat.MomentField(single_site_config, 2.0, np.zeros(1), np.zeros(1), 4)
        assert lat.z_norm(field, 1.0) == 0.0

    def test_single_site_at_origin(self, single_site_config):
        field = lat.MomentField(single_site_config, 2.0, np.ones(1), np.zeros(1), 4)
        assert lat.z_norm(field, 1.0) == pytest.approx(1.0)

    def test_two_site_value(self):
        cfg = lat.configuration_from_points([[0.0], [1.0]], rho=0.5)
        field = lat.MomentField(cfg, 2.0, np.ones(2), np.zeros(2), 4)
        assert lat.z_norm(field, 1.0) == pytest.approx(
            math.sqrt(1.0 + math.exp(-1.0))
        )
        assert lat.z_norm(field, 1.0) == pytest.approx(1.1695638, abs=1e-6)

    def test_monotone_in_weight(self, poisson_1d):
        rng = np.random.default_rng(3)
        field = lat.MomentField(
            poisson_1d, 2.0, rng.uniform(0, 2, poisson_1d.n_sites),
            np.zeros(poisson_1d.n_sites), 4,
        )
        for alpha, beta in [(0.3, 0.5), (0.5, 1.0), (1.0, 2.0)]:
            assert lat.z_norm(field, beta) <= lat.z_norm(field, alpha) + 1e-12


class TestConstants:
    def test_moment_constants_formulas(self):
        model = lat.make_model(
            "cubic", 0.0, kernel_cap=0.05, rho=1.0,
            sigma0=0.1, sigma1=0.2, sigma2=0.02, p=4.0,
        )
        c = model.growth_c  # |b| + 1 = 1
        consts = moment_constants(model, 2.0)
        assert consts["A1"] == pytest.approx(0.0 + 1.0 + 2.0**3 * c**2)
        assert consts["A2"] == pytest.approx(4 * 0.2**2 + 4 * c**2 * 2.0**3)
        assert consts["A3"] == pytest.approx(4 * 0.05**2 + 16 * 4 * 0.02**2)
        assert consts["A4"] == pytest.approx(5 * 16 * 16 * c**2 * 2.0)

    def test_cauchy_constants_formulas(self):
        model = lat.make_model(
            "cubic", 0.0, kernel_cap=0.05, rho=1.0,
            sigma1=0.2, sigma2=0.02, p=4.0,
        )
        consts = cauchy_constants(model)
        assert consts["B1"] == pytest.approx(0.0 + 1.0 + 2 * 0.2**2)
        assert consts["B2"] == pytest.approx(4 * 0.05**2 + 2 * 16 * 0.02**2)


class TestTailBound:
    def test_fully_frozen_levels_level_independent(self, poisson_1d):
        model = lat.make_model("cubic", 0.0, kernel_cap=0.05, rho=1.0,
                               p=4.0, sigma0=0.1)
        rng = np.random.default_rng(5)
        zeta = lat.WeightedSeq(poisson_1d, rng.standard_normal(poisson_1d.n_sites))
        ensembles = [
            lat.simulate_truncated(model, poisson_1d, [], zeta, 0.5, 0.01, 8, 6)
            for _ in range(3)
        ]
        fields = [lat.moment_field(e, 4.0) for e in ensembles]
        report = lat.tail_bound_check(
            fields, 0.5, model=model, zeta=zeta, a_low=0.25, T=0.5
        )
        exact = math.fsum(
            (np.exp(-0.5 * poisson_1d.radii) * np.abs(zeta.values) ** 4).tolist()
        )
        assert report.sup_sum == pytest.approx(exact, rel=1e-14)
        assert report.level_sums[0] == report.level_sums[1] == report.level_sums[2]
        assert report.plateau_ok
        assert report.ceiling_ok

    def test_zero_model_zero_sum_positive_ceiling(self, poisson_1d):
        model = lat.make_model("linear", 1.0, p=2.0)
        zeta = lat.WeightedSeq(poisson_1d, np.zeros(poisson_1d.n_sites))
        ensembles = [
            lat.simulate_truncated(
                model, poisson_1d, range(poisson_1d.n_sites), zeta, 0.5, 0.01, 8, 7
            )
            for _ in range(3)
        ]
        fields = [lat.moment_field(e, 2.0) for e in ensembles]
        report = lat.tail_bound_check(
            fields, 0.5, model=model, zeta=zeta, a_low=0.25, T=0.5
        )
        assert report.sup_sum == 0.0
        assert report.ceiling > 0.0
        assert report.plateau_ok and report.ceiling_ok

    def test_needs_three_levels(self, poisson_1d):
        model = lat.make_model("linear", 1.0, p=2.0)
        zeta = lat.WeightedSeq(poisson_1d, np.zeros(poisson_1d.n_sites))
        ens = lat.simulate_truncated(
            model, poisson_1d, [], zeta, 0.5, 0.01, 4, 8
        )
        fields = [lat.moment_field(ens, 2.0)] * 2
        with pytest.raises(ValueError):
            lat.tail_bound_check(fields, 0.5, model=model, zeta=zeta, a_low=0.25, T=0.5)


class TestCauchy:
    def test_identical_levels_give_exact_zero(self, decoupled_setup):
        config, model, zeta = decoupled_setup
        full = np.arange(config.n_sites)
        ensembles = simulate_levels(
            model, config, [full, full, full], zeta, 0.5, 0.01, 16, 9
        )
        report = cauchy_table(
            ensembles, [full, full, full], 0.5, model=model, a_low=0.25
        )
        for row in report.rows:
            assert row.distance == 0.0
            assert row.dominator == 0.0

    def test_decoupled_distance_identity(self, decoupled_setup):
        # with a == 0 and sigma2 == 0, only newly-thawed sites contribute,
        # and their contribution is exactly the single-level moment of
        # |xi - zeta| on the larger truncation
        config, model, zeta = decoupled_setup
        levels = lat.exhaustion_sequence(config, 3)
        ensembles = simulate_levels(
            model, config, levels, zeta, 0.5, 0.01, 64, 10
        )
        p = model.p
        report = cauchy_table(ensembles, levels, 0.5, model=model, a_low=0.25)
        weights = np.exp(-0.5 * config.radii)
        for row in report.rows:
            big = ensembles[row.level_m]
            thawed = np.setdiff1d(levels[row.level_m], levels[row.level_n])
            drift_pow = np.abs(big.paths - zeta.values[None, :, None]) ** p
            per_site = drift_pow.mean(axis=0).max(axis=1)
            expected = math.fsum((weights[thawed] * per_site[thawed]).tolist())
            assert row.distance == pytest.approx(expected, rel=1e-12)

    def test_coupled_levels_decrease(self, level_ensembles):
        config, model, zeta, levels, ensembles = level_ensembles
        report = cauchy_table(ensembles, levels, 0.5, model=model, a_low=0.25)
        assert report.decreasing_ok

    def test_weight_order_enforced(self, decoupled_setup):
        config, model, zeta = decoupled_setup
        full = np.arange(config.n_sites)
        ensembles = simulate_levels(model, config, [full, full], zeta, 0.5, 0.01, 8, 11)
        with pytest.raises(ValueError):
            cauchy_table(ensembles, [full, full], 0.2, model=model, a_low=0.25)

    def test_mismatched_seeds_rejected(self, decoupled_setup):
        config, model, zeta = decoupled_setup
        full = np.arange(config.n_sites)
        a = lat.simulate_truncated(model, config, full, zeta, 0.25, 0.01, 4, 1)
        b = lat.simulate_truncated(model, config, full, zeta, 0.25, 0.01, 4, 2)
        with pytest.raises(ValueError, match="seed"):
            cauchy_table([a, b], [full, full], 0.5, model=model, a_low=0.25)

    def test_non_nested_levels_rejected(self, decoupled_setup):
        config, model, zeta = decoupled_setup
        with pytest.raises(ValueError):
            simulate_levels(
                model, config, [np.array([1]), np.array([0])], zeta,
                0.5, 0.01, 4, 12,
            )

    def test_threads_do_not_change_results(self, decoupled_setup):
        config, model, zeta = decoupled_setup
        levels = lat.exhaustion_sequence(config, 3)
        seq = simulate_levels(model, config, levels, zeta, 0.25, 0.01, 8, 13, threads=1)
        par = simulate_levels(model, config, levels, zeta, 0.25, 0.01, 8, 13, threads=3)
        for a, b in zip(seq, par):
            assert np.array_equal(a.paths, b.paths)


class TestUniqueness:
    def test_deterministic_linear_first_order(self, decoupled_setup):
        config, _, _ = decoupled_setup
        model = lat.make_model("linear", 1.0, kernel_cap=0.0, rho=1.0, p=2.0)
        zeta = lat.WeightedSeq(config, np.ones(config.n_sites))
        report = lat.uniqueness_crosscheck(
            model, config, zeta, 1.0, 0.05, 4, 14, alpha=0.5, scheme="explicit"
        )
        # deterministic Euler: halving dt halves the defect
        assert report.ratio == pytest.approx(2.0, abs=0.25)

    def test_frozen_system_has_zero_discrepancy(self, single_site_config):
        model = lat.make_model("linear", 1.0, p=2.0)
        zeta = lat.WeightedSeq(single_site_config, np.zeros(1))
        report = lat.uniqueness_crosscheck(
            model, single_site_config, zeta, 0.5, 0.05, 4, 15, alpha=0.5
        )
        assert report.disc_coarse == 0.0 and report.disc_fine == 0.0
        assert math.isnan(report.ratio)

    def test_noisy_cubic_strong_order(self, single_site_config):
        model = lat.make_model("cubic", 0.0, sigma0=0.5, p=4.0)
        zeta = lat.WeightedSeq(single_site_config, np.ones(1))
        report = lat.uniqueness_crosscheck(
            model, single_site_config, zeta, 1.0, 0.05, 400, 16, alpha=0.5
        )
        assert report.ratio >= math.sqrt(2.0) * 0.9
