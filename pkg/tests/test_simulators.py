"""Builtin simulators: closed-form oracles, noise statistics, batch/scalar
bitwise agreement, and environment encapsulation."""

import math

import numpy as np
import pytest

from asbi.rng import derive_seed
from asbi.simulators import (
    ActionGrid,
    BoxSimulator,
    DepositSimulator,
    Observation,
    TargetEnvironment,
    ToySimulator,
    get_simulator,
)


class TestActionGrid:
    def test_toy_grid_is_21_half_steps(self):
        grid = ToySimulator().spec.action_grid
        assert len(grid) == 21
        assert grid.value_dim == 1
        vals = grid.values[:, 0]
        assert vals[0] == -5.0 and vals[-1] == 5.0
        assert np.allclose(np.diff(vals), 0.5)

    def test_box_grid_is_41_half_steps(self):
        grid = BoxSimulator().spec.action_grid
        assert len(grid) == 41
        assert grid.values[0, 0] == 0.0 and grid.values[-1, 0] == 20.0

    def test_deposit_grid_is_54_actions_of_4_coords(self):
        grid = DepositSimulator().spec.action_grid
        assert len(grid) == 54
        assert grid.value_dim == 4

    def test_duplicate_rows_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            ActionGrid(np.array([[1.0, 2.0], [1.0, 2.0]]))

    def test_find_resolves_exact_rows_only(self):
        grid = ToySimulator().spec.action_grid
        action = grid.find([2.5])
        assert action.index == 15 and action.values[0] == 2.5
        with pytest.raises(ValueError, match="not on the grid"):
            grid.find([2.51])


class TestToySimulator:
    def setup_method(self):
        self.sim = ToySimulator()

    def test_noiseless_closed_form(self):
        # theta_1 * exp(3 - xi) + theta_2 * xi evaluated by hand
        assert self.sim.noiseless([-3.0, 1.0], [3.0]).values[0] == 0.0
        assert self.sim.noiseless([-3.0, 1.0], [0.0]).values[0] == pytest.approx(
            -60.256610769563004, rel=1e-14)
        assert self.sim.noiseless([-3.0, 1.0], [5.0]).values[0] == pytest.approx(
            4.593994150290162, rel=1e-14)
        assert self.sim.noiseless([1.0, 0.0], [3.0]).values[0] == 1.0

    def test_pure_noise_moments(self):
        theta = np.zeros((100_000, 2))
        xis = np.full(100_000, 2.0)
        seeds = np.arange(100_000)
        obs = self.sim.simulate_batch(theta, xis, seeds)
        x = np.array([o.values[0] for o in obs])
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1.0) < 0.05

    def test_noiseless_matches_monte_carlo_mean(self):
        theta = np.array([-3.0, 1.0])
        n = 1_000_000
        obs = self.sim.simulate_batch(np.tile(theta, (n, 1)), np.full(n, 4.0),
                                      np.arange(n))
        mean = np.mean([o.values[0] for o in obs])
        assert mean == pytest.approx(self.sim.noiseless(theta, [4.0]).values[0], abs=0.01)

    def test_scalar_and_batch_paths_agree_bitwise(self):
        g = np.random.default_rng(5)
        thetas = g.uniform(-5, 5, size=(50, 2))
        xis = g.choice(self.sim.spec.action_grid.values[:, 0], size=50)
        seeds = [derive_seed(9, "t", i) for i in range(50)]
        batch = self.sim.simulate_batch(thetas, xis, seeds)
        for i in range(50):
            single = self.sim.simulate(thetas[i], [xis[i]], seeds[i])
            assert np.array_equal(single.values, batch[i].values)

    def test_same_seed_reproduces_bitwise(self):
        a = self.sim.simulate([1.0, -2.0], [0.5], 777)
        b = self.sim.simulate([1.0, -2.0], [0.5], 777)
        assert np.array_equal(a.values, b.values)
        assert a.valid and b.valid

    def test_theta_outside_bounds_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            self.sim.noiseless([6.0, 0.0], [0.0])


class TestBoxSimulator:
    def setup_method(self):
        self.sim = BoxSimulator()

    def test_no_impact_at_zero_speed(self):
        obs = self.sim.noiseless([0.5, 0.5, 0.5], [0.0])
        assert obs.valid
        assert np.array_equal(obs.values, [0.30, 0.0, 0.075])

    def test_hand_derived_off_table_case(self):
        # theta=(0.2,0.2,0.2), xi=7: v2 = 10.5/1.84375 = 5.6949 m/s,
        # mu = 0.22, slide = 7.51 m, far past the 1.2 m edge
        obs = self.sim.noiseless([0.2, 0.2, 0.2], [7.0])
        assert not obs.valid
        assert np.array_equal(obs.values, [-1.0, -1.0, -1.0])
        assert self.sim.slide_distance([0.2, 0.2, 0.2], 7.0) == pytest.approx(
            7.513682641308625, rel=1e-12)

    def test_hand_derived_on_table_case(self):
        # theta=(0.8,0.8,0.8), xi=3: slide 0.0841 m, rest at x = 0.3841 m
        obs = self.sim.noiseless([0.8, 0.8, 0.8], [3.0])
        assert obs.valid
        assert obs.values[0] == pytest.approx(0.3840951286688435, rel=1e-12)
        assert obs.values[1] == 0.0 and obs.values[2] == 0.075

    def test_friction_monotonicity(self):
        high = self.sim.slide_distance([1.0, 1.0, 1.0], 20.0)
        low = self.sim.slide_distance([0.0, 0.0, 1.0], 20.0)
        assert high < low

    def test_validity_is_decided_before_noise(self):
        # rest position 1.199: always valid even when noise crosses the edge;
        # rest position 1.201: always the invalid sentinel
        theta = [0.5, 0.5, 0.5]
        just_on = [self.sim.simulate(theta, [5.766814444160225], s) for s in range(1000)]
        assert all(o.valid for o in just_on)
        assert any(o.values[0] > 1.2 for o in just_on)
        just_off = [self.sim.simulate(theta, [5.773225579485441], s) for s in range(50)]
        assert all(not o.valid for o in just_off)
        assert all(np.array_equal(o.values, [-1.0, -1.0, -1.0]) for o in just_off)

    def test_noise_hits_first_two_coordinates_only(self):
        theta = [0.8, 0.8, 0.8]
        obs = [self.sim.simulate(theta, [3.0], s) for s in range(2000)]
        xs = np.array([o.values[0] for o in obs])
        ys = np.array([o.values[1] for o in obs])
        zs = np.array([o.values[2] for o in obs])
        assert np.all(zs == 0.075)
        assert xs.std() == pytest.approx(0.005, rel=0.2)
        assert ys.std() == pytest.approx(0.005, rel=0.2)
        assert ys.mean() == pytest.approx(0.0, abs=0.001)

    def test_scalar_and_batch_paths_agree_bitwise(self):
        g = np.random.default_rng(6)
        thetas = g.uniform(0, 1, size=(60, 3))
        xis = g.choice(self.sim.spec.action_grid.values[:, 0], size=60)
        seeds = [derive_seed(3, "b", i) for i in range(60)]
        batch = self.sim.simulate_batch(thetas, xis, seeds)
        validities = {o.valid for o in batch}
        assert validities == {True, False}, "want both regimes in the comparison"
        for i in range(60):
            single = self.sim.simulate(thetas[i], [xis[i]], seeds[i])
            assert np.array_equal(single.values, batch[i].values)
            assert single.valid == batch[i].valid

    def test_pair_distance_rules(self):
        valid_a = Observation(values=np.array([0.6, 0.0, 0.075]))
        valid_b = Observation(values=np.array([0.9, 0.0, 0.075]))
        invalid = Observation(values=np.array([-1.0, -1.0, -1.0]), valid=False)
        assert self.sim.pair_distance(valid_a, valid_b) == pytest.approx(0.3, rel=1e-12)
        assert self.sim.pair_distance(invalid, invalid) == 0.0
        # one cube off the table: distance from the on-table cube to the edge
        assert self.sim.pair_distance(valid_a, invalid) == pytest.approx(0.6, rel=1e-12)
        assert self.sim.pair_distance(invalid, valid_b) == pytest.approx(0.3, rel=1e-12)


class TestDepositSimulator:
    def setup_method(self):
        self.sim = DepositSimulator()

    def test_mass_is_normalized(self):
        theta = [0.3, 0.3, 0.5]
        action = [80.0, 0.0, 2.0, 0.0]
        clean = self.sim.noiseless(theta, action)
        assert clean.values.shape == (256,)
        assert clean.values.sum() == pytest.approx(1.0, abs=1e-12)
        noisy = self.sim.simulate(theta, action, 11)
        assert noisy.values.sum() == pytest.approx(1.0, abs=3 * 16 * 1e-3)

    def test_restitution_widens_the_mound(self):
        action = [80.0, 0.0, 2.0, 0.0]
        wide = self.sim.noiseless([0.3, 0.3, 0.9], action).values.reshape(16, 16)
        narrow = self.sim.noiseless([0.3, 0.3, 0.1], action).values.reshape(16, 16)
        pos = np.arange(16) - 7.5
        moment = lambda g: float((g * (pos[None, :] ** 2 + pos[:, None] ** 2)).sum())
        assert moment(wide) > moment(narrow)

    def test_summary_flag_selects_encoding(self):
        theta = [0.3, 0.3, 0.5]
        flat = self.sim.noiseless(theta, [80.0, 0.0, 2.0, 0.0])
        summary = self.sim.noiseless(theta, [80.0, 0.0, 2.0, 1.0])
        assert flat.values.shape == (256,)
        assert summary.values.shape == (36,)
        assert np.all((summary.values >= 0) & (summary.values <= 1))
        assert self.sim.observation_group([80.0, 0.0, 2.0, 0.0]) == 0
        assert self.sim.observation_group([80.0, 0.0, 2.0, 1.0]) == 1
        assert self.sim.group_obs_dim(0) == 256
        assert self.sim.group_obs_dim(1) == 36

    def test_offset_mirror_symmetry(self):
        theta = [0.4, 0.2, 0.6]
        up = self.sim.noiseless(theta, [20.0, 30.0, 0.5, 0.0]).values.reshape(16, 16)
        down = self.sim.noiseless(theta, [20.0, -30.0, 0.5, 0.0]).values.reshape(16, 16)
        assert np.array_equal(up, down[::-1, :])

    def test_seeded_determinism(self):
        a = self.sim.simulate([0.1, 0.2, 0.3], [140.0, 30.0, 5.0, 1.0], 99)
        b = self.sim.simulate([0.1, 0.2, 0.3], [140.0, 30.0, 5.0, 1.0], 99)
        assert np.array_equal(a.values, b.values)


class TestTargetEnvironment:
    def test_fresh_noise_per_call(self):
        env = TargetEnvironment(ToySimulator(), [-3.0, 1.0], seed=2024)
        a = env.observe([3.0])
        b = env.observe([3.0])
        assert not np.array_equal(a.values, b.values)
        # mean response at (-3,1), xi=3 is 0 with unit noise
        assert abs(a.values[0]) < 5.0 and abs(b.values[0]) < 5.0

    def test_box_env_valid_at_moderate_speed(self):
        env = TargetEnvironment(BoxSimulator(), [0.8, 0.8, 0.8], seed=1)
        obs = env.observe([3.0])
        assert obs.valid

    def test_off_grid_action_rejected(self):
        env = TargetEnvironment(ToySimulator(), [0.0, 0.0], seed=1)
        with pytest.raises(ValueError, match="not on the grid"):
            env.observe([0.3])

    def test_hidden_theta_is_not_exposed(self):
        env = TargetEnvironment(ToySimulator(), [-3.0, 1.0], seed=1)
        assert not hasattr(env, "hidden_theta")
        assert not hasattr(env, "theta")
        assert "-3" not in repr(env)

    def test_hidden_theta_must_lie_in_bounds(self):
        with pytest.raises(ValueError, match="outside"):
            TargetEnvironment(ToySimulator(), [-9.0, 0.0], seed=1)

    def test_same_seed_same_observation_sequence(self):
        seq = []
        for _ in range(2):
            env = TargetEnvironment(ToySimulator(), [-3.0, 1.0], seed=5)
            seq.append([env.observe([1.0]).values[0] for _ in range(3)])
        assert seq[0] == seq[1]
        assert len(set(seq[0])) == 3


class TestRegistry:
    def test_builtin_names(self):
        assert get_simulator("toy").spec.obs_dim == 1
        assert get_simulator("box").spec.obs_dim == 3
        assert get_simulator("deposit").spec.obs_dim == 256

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown simulator"):
            get_simulator("warp")
