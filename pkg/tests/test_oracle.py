import numpy as np
import pytest

from creflow.errors import (
    ConstructionViolated,
    DegenerateWorld,
    InsufficientSamples,
    SingularSystem,
)
from creflow.flow import LinearVelocity
from creflow.oracle import (
    DiscreteWorld,
    QuadraticProbe,
    check_factored,
    default_grid,
    make_factored_world,
    parabola_argmin,
    population_point,
    random_world,
    run_suite,
    suite_corrective,
    suite_direction,
    suite_locality,
    suite_masked,
    suite_nft,
    suite_variance,
    verify_corrective_target,
    verify_direction,
    verify_reward_locality,
    verify_variance,
)


class TestDiscreteWorld:
    def test_validation(self):
        with pytest.raises(DegenerateWorld):
            DiscreteWorld(np.zeros((2, 2)), np.array([0.6, 0.6]), np.array([1, 0]))
        with pytest.raises(DegenerateWorld):
            DiscreteWorld(np.zeros((2, 2)), np.array([1.0, -0.0]), np.array([1, 0]))

    def test_positive_moments(self):
        world = DiscreteWorld(
            np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]]),
            np.array([0.25, 0.25, 0.5]),
            np.array([1, 1, 0]),
        )
        assert world.p == 0.5
        assert np.allclose(world.positive_mean(), [1.0, 0.0])
        assert np.allclose(world.positive_cov(), [[1.0, 0.0], [0.0, 0.0]])


class TestPopulationPoint:
    def test_point_mass_velocity(self):
        atom = np.array([[1.0, -2.0]])
        world = DiscreteWorld(atom, np.array([1.0]), np.array([1]))
        for t in (0.2, 0.7, 1.0):
            xt = np.array([0.4, 0.9])
            pp = population_point(world, xt, t)
            assert np.allclose(pp.v_old, (xt - atom[0]) / t)
            assert pp.alpha == 1.0
            assert np.allclose(pp.v_plus, pp.v_old)

    def test_all_rewarded(self):
        rng = np.random.default_rng(0)
        world = DiscreteWorld(rng.standard_normal((3, 2)), np.full(3, 1 / 3), np.ones(3, int))
        pp = population_point(world, rng.standard_normal(2), 0.5)
        assert pp.alpha == 1.0
        assert np.allclose(pp.v_plus, pp.v_old)
        assert pp.v_minus is None
        with pytest.raises(DegenerateWorld):
            population_point(world, np.zeros(2), 0.5, require_two_sided=True)

    def test_symmetric_two_atom_alpha_half(self):
        world = DiscreteWorld(
            np.array([[1.0, 0.0], [-1.0, 0.0]]),
            np.array([0.5, 0.5]),
            np.array([1, 0]),
        )
        for t in (0.2, 0.5, 0.9):
            xt = (1 - t) * np.array([0.0, 0.0])  # midpoint, scaled
            pp = population_point(world, xt, t)
            assert np.isclose(pp.alpha, 0.5)

    def test_mixture_and_delta_identities(self):
        rng = np.random.default_rng(1)
        world = random_world(rng, 6, 3)
        for _ in range(25):
            t = rng.uniform(0.1, 1.0)
            xt = rng.standard_normal(3)
            pp = population_point(world, xt, t)
            mix = pp.alpha * pp.v_plus + (1 - pp.alpha) * pp.v_minus
            assert np.max(np.abs(mix - pp.v_old)) < 1e-10
            delta_from_split = (1 - pp.alpha) * (pp.v_plus - pp.v_minus)
            assert np.max(np.abs(delta_from_split - pp.delta)) < 1e-10
            assert 0.0 <= pp.alpha <= 1.0

    def test_alpha_reverts_to_prior_at_t1(self):
        rng = np.random.default_rng(2)
        world = random_world(rng, 5, 2)
        pp = population_point(world, rng.standard_normal(2), 1.0)
        assert np.isclose(pp.alpha, world.p)
        assert np.max(np.abs(pp.bar_delta - pp.delta)) < 1e-12

    def test_small_t_far_point_stable(self):
        rng = np.random.default_rng(3)
        world = random_world(rng, 4, 2)
        pp = population_point(world, np.array([50.0, -40.0]), 0.01)
        assert np.all(np.isfinite(pp.v_old))
        assert 0.0 <= pp.alpha <= 1.0


class TestParabolaArgmin:
    def test_exact_on_quadratic(self):
        rng = np.random.default_rng(4)
        target = rng.standard_normal(4)
        weights = rng.uniform(0.5, 2.0, 4)

        def f(v):
            return float(np.sum(weights * (v - target) ** 2))

        out = parabola_argmin(f, np.zeros(4), range(4))
        assert np.allclose(out, target, atol=1e-12)

    def test_flat_coordinate_raises(self):
        with pytest.raises(SingularSystem):
            parabola_argmin(lambda v: float(v[0] ** 2), np.zeros(2), [1])


class TestSuites:
    def test_nft_suite(self):
        report = suite_nft(0)
        assert report.passed, [c.to_dict() for c in report.checks if not c.passed]

    def test_masked_suite(self):
        report = suite_masked(0)
        assert report.passed

    def test_locality_suite(self):
        report = suite_locality(0, mc_samples=20_000)
        assert report.passed

    def test_corrective_suite(self):
        report = suite_corrective(0, mc_samples=20_000)
        assert report.passed

    def test_direction_suite(self):
        report = suite_direction(0)
        assert report.passed

    def test_variance_suite(self):
        report, var_report = suite_variance(0, mc_samples=20_000)
        assert report.passed, [c.to_dict() for c in report.checks if not c.passed]
        assert 1.8 <= var_report.slope <= 2.2

    def test_run_suite_all(self):
        report = run_suite("nft", 1)
        assert report.suite == "nft"
        with pytest.raises(KeyError):
            run_suite("bogus", 0)


class TestLocality:
    def test_factored_world_self_test(self):
        rng = np.random.default_rng(5)
        world, mask_bits = make_factored_world(
            on_x0s=rng.standard_normal((2, 1)),
            on_probs=np.array([0.5, 0.5]),
            on_rewards=np.array([1, 0]),
            off_x0s=rng.standard_normal((2, 1)),
            off_probs=np.array([0.3, 0.7]),
        )
        check_factored(world, mask_bits)

    def test_non_factored_detected_and_reports_gap(self):
        # off-mask coordinate correlates with reward: not factored
        world = DiscreteWorld(
            np.array([[1.0, 5.0], [-1.0, -5.0]]),
            np.array([0.5, 0.5]),
            np.array([1, 0]),
        )
        mask_bits = np.array([True, False])
        with pytest.raises(ConstructionViolated):
            check_factored(world, mask_bits)
        rng = np.random.default_rng(6)
        report = verify_reward_locality(
            world, mask_bits, [(np.array([0.1, 0.0]), 0.5)], rng,
            mc_samples=2_000, check_construction=False,
        )
        gap = [c for c in report.checks if c.name == "locality_off_mask_velocity_gap"][0]
        assert gap.value > 1e-3  # negative control: the gap is real


class TestCorrectiveTarget:
    def test_single_positive_atom_deterministic(self):
        world = DiscreteWorld(
            np.array([[2.0, 0.0], [0.0, 1.0]]),
            np.array([0.4, 0.6]),
            np.array([1, 0]),
        )
        rng = np.random.default_rng(7)
        report = verify_corrective_target(
            world, np.array([0.5, 0.5]), 0.5, group_sizes=(1,), mc_samples=2_000, rng=rng
        )
        mean_check = [c for c in report.checks if "mean_unbiased" in c.name][0]
        assert mean_check.passed and mean_check.value < 1e-12


class TestDirection:
    def test_off_mask_optimum_is_reference(self):
        rng = np.random.default_rng(8)
        world = random_world(rng, 4, 3)
        mask = np.array([True, False, False])
        v_ref = rng.standard_normal(3)
        probe = QuadraticProbe(1.0, 0.5, 0.4, mask, v_ref=v_ref)
        report = verify_direction(world, probe, default_grid(world, rng, 2, 2), beta=1.0)
        assert report.passed

    def test_singular_system(self):
        rng = np.random.default_rng(9)
        world = random_world(rng, 3, 2)
        with pytest.raises(ValueError):
            QuadraticProbe(0.0, 0.0, 0.0, np.array([True, False]))
        probe = QuadraticProbe(0.0, 0.0, 1.0, np.array([True, False]))
        probe.a = probe.b = probe.gamma = 0.0  # bypass construction check
        with pytest.raises(SingularSystem):
            verify_direction(world, probe, default_grid(world, rng, 1, 1), beta=1.0)


class TestVariance:
    def test_insufficient_samples_guard(self):
        rng = np.random.default_rng(10)
        world = random_world(rng, 4, 3, spread=2.5, min_pos=2)
        model = LinearVelocity(world.dim, rng=rng, scale=0.3)
        with pytest.raises(InsufficientSamples):
            verify_variance(
                world, model, np.geomspace(0.05, 0.6, 6), sigma_xi=0.1,
                group_size=2, mc_samples=8, rng=rng,
            )

    def test_exact_matches_mc_loosely(self):
        rng = np.random.default_rng(11)
        world = random_world(rng, 4, 3, spread=2.5, min_pos=2)
        model = LinearVelocity(world.dim, rng=rng, scale=0.3)
        report, var_report = verify_variance(
            world, model, np.geomspace(0.01, 0.6, 8), sigma_xi=0.1,
            group_size=2, mc_samples=40_000, rng=rng, lambda_cr=3.0,
        )
        for rec in var_report.records:
            assert abs(rec["mc_cr"] - rec["exact_cr"]) < 0.12 * max(rec["exact_cr"], 1e-12)
            assert abs(rec["mc_nft"] - rec["exact_nft"]) < 0.2 * rec["exact_nft"]
