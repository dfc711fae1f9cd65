import numpy as np
import pytest

from abscov.env import (CapacityError, Environment, GuState, _blocked_kernel,
                        _segment_hits_boxes, abs_position_valid,
                        generate_environment, gu_positions_valid, is_los,
                        los_mask, random_gu_positions, step_gus)
from conftest import single_building_env


class TestGenerateEnvironment:
    def test_default_lattice(self):
        env = generate_environment(0, 1000.0, 31.25, 200, (30.0, 89.0))
        assert env.n_buildings == 200
        xs = {(b.x, b.y) for b in env.buildings}
        assert len(xs) == 200  # no overlap: distinct lattice cells
        for b in env.buildings:
            assert b.x % 31.25 == 0 and b.y % 31.25 == 0
            assert 0 <= b.x <= 1000 - 31.25 and 0 <= b.y <= 1000 - 31.25
            assert 30.0 <= b.height <= 89.0

    def test_zero_buildings(self):
        env = generate_environment(0, 1000.0, 31.25, 0)
        assert env.buildings == []

    def test_deterministic(self):
        a = generate_environment(42, 1000.0, 31.25, 200)
        b = generate_environment(42, 1000.0, 31.25, 200)
        assert a.buildings == b.buildings

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            generate_environment(0, 1000.0, 31.25, 1025)

    def test_indivisible_side(self):
        with pytest.raises(ValueError):
            generate_environment(0, 1000.0, 30.0, 10)


class TestIsLos:
    def test_vertical_open_cell(self, empty_env):
        assert is_los(empty_env, (500.0, 500.0), (500.0, 500.0))

    def test_altitude_clearance(self):
        # building crossed at t in [0.1, 0.3] where the segment altitude
        # ranges over [42.3, 54.1] m, above the 30 m roof
        env = single_building_env(420.0, 480.0, 40.0, 30.0)
        assert is_los(env, (400.0, 500.0), (600.0, 500.0))

    def test_roof_grazed_blocked(self):
        env = single_building_env(420.0, 480.0, 40.0, 54.1)
        assert not is_los(env, (400.0, 500.0), (600.0, 500.0))

    def test_no_obstacles(self, empty_env):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, g = rng.uniform(0, 1000, 2), rng.uniform(0, 1000, 2)
            assert is_los(empty_env, a, g)

    def test_blocked_by_tall_building(self):
        env = single_building_env(480.0, 480.0, 40.0, 80.0)
        assert not is_los(env, (400.0, 500.0), (600.0, 500.0))

    def test_touching_face_counts_blocked(self):
        env = single_building_env(400.0, 400.0, 100.0, 59.0)
        # vertical segment sliding along the x=400 face
        assert not is_los(env, (400.0, 450.0), (400.0, 450.0))

    def test_segment_undirected(self, default_env):
        rng = np.random.default_rng(1)
        x0, y0, x1, y1, h = default_env.building_arrays()
        z0 = np.zeros_like(h)
        for _ in range(200):
            p = np.append(rng.uniform(0, 1000, 2), default_env.abs_altitude)
            q = np.append(rng.uniform(0, 1000, 2), default_env.gu_height)
            fwd = _segment_hits_boxes(p, q[None, :], x0, y0, z0, x1, y1, h)[0]
            rev = _segment_hits_boxes(q, p[None, :], x0, y0, z0, x1, y1, h)[0]
            assert fwd == rev

    def test_kernel_matches_reference(self, default_env):
        rng = np.random.default_rng(2)
        x0, y0, x1, y1, h = default_env.building_arrays()
        z0 = np.zeros_like(h)
        abs_pos = rng.uniform(0, 1000, 2)
        gus = rng.uniform(0, 1000, (200, 2))
        p0 = np.array([abs_pos[0], abs_pos[1], default_env.abs_altitude])
        p1 = np.column_stack([gus, np.full(200, default_env.gu_height)])
        ref = ~_segment_hits_boxes(p0, p1, x0, y0, z0, x1, y1, h)
        assert np.array_equal(ref, los_mask(default_env, abs_pos, gus))

    def test_los_monotone_in_altitude(self):
        # raising the flight altitude never turns a LoS pair into NLoS
        low = generate_environment(3, 1000.0, 31.25, 200, (30.0, 89.0),
                                   abs_altitude=60.0)
        high = generate_environment(3, 1000.0, 31.25, 200, (30.0, 89.0),
                                    abs_altitude=120.0)
        rng = np.random.default_rng(3)
        gus = random_gu_positions(low, 100, rng)
        for _ in range(5):
            a = rng.uniform(0, 1000, 2)
            los_low = los_mask(low, a, gus)
            los_high = los_mask(high, a, gus)
            assert (los_high | ~los_low).all()


class TestAbsPositionValid:
    def test_over_tall_building(self):
        env = single_building_env(500.0, 500.0, 31.25, 89.0, hp=60.0)
        assert not abs_position_valid(env, (510.0, 510.0))

    def test_over_short_building(self):
        env = single_building_env(500.0, 500.0, 31.25, 30.0, hp=60.0)
        assert abs_position_valid(env, (510.0, 510.0))

    def test_outside_area(self, empty_env):
        assert not abs_position_valid(empty_env, (-1.0, 0.0))
        assert not abs_position_valid(empty_env, (0.0, 1000.1))


class TestStepGus:
    def test_zero_speed(self, default_env):
        rng = np.random.default_rng(0)
        pos = random_gu_positions(default_env, 30, rng)
        state = GuState(pos, 0.0)
        out = step_gus(default_env, state, 0.5, rng)
        assert np.array_equal(out.positions, pos)

    def test_displacement_norm(self, default_env):
        # each GU moves exactly v*dt = 1 m, or stays when every heading fails
        rng = np.random.default_rng(1)
        pos = random_gu_positions(default_env, 100, rng)
        out = step_gus(default_env, GuState(pos, 2.0), 0.5, rng)
        norms = np.sqrt(((out.positions - pos) ** 2).sum(axis=1))
        assert np.all((np.abs(norms - 1.0) < 1e-9) | (norms == 0.0))

    def test_open_area_exact(self, empty_env):
        rng = np.random.default_rng(2)
        pos = np.full((50, 2), 500.0)
        out = step_gus(empty_env, GuState(pos, 2.0), 0.5, rng)
        norms = np.sqrt(((out.positions - pos) ** 2).sum(axis=1))
        assert np.allclose(norms, 1.0)

    def test_invariants_preserved_many_steps(self, default_env):
        # 10^4 GU-steps: positions stay inside the area and outside buildings
        rng = np.random.default_rng(3)
        state = GuState(random_gu_positions(default_env, 100, rng), 2.0)
        for _ in range(100):
            state = step_gus(default_env, state, 0.5, rng)
            assert gu_positions_valid(default_env, state.positions).all()


class TestSerialization:
    def test_round_trip(self, default_env):
        text = default_env.to_json()
        env2 = Environment.from_json(text)
        assert env2.to_json() == text
        assert env2.n_buildings == default_env.n_buildings
        assert env2.area_side == default_env.area_side

    def test_two_decimal_coordinates(self, default_env):
        import json

        doc = json.loads(default_env.to_json())
        for b in doc["buildings"]:
            assert round(b["x"], 2) == b["x"]
            assert round(b["h"], 2) == b["h"]
