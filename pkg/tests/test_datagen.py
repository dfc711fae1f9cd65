import json

import numpy as np
import pytest

from abscov.channel import ChannelParams
from abscov.datagen import (Sample, collect, read_samples, split,
                            write_manifest)
from abscov.mission import MissionSetup, TimeConfig


@pytest.fixture(scope="module")
def small_setup(default_env):
    params = ChannelParams.from_db(n_abs=3)
    cfg = TimeConfig(trial_s=20.0, period_s=10.0)
    return MissionSetup(default_env, params, cfg, k=32, n_abs=3, n_gu=30,
                        v_gu=2.0)


def gather(setup, strategy, n_trials, seed):
    out = []
    count = collect(setup, strategy, n_trials, seed, out.append)
    return count, out


class TestCollect:
    def test_sample_count_per_trial(self, small_setup):
        count, samples = gather(small_setup, "cRandom", 1, 0)
        assert count == small_setup.time.n_steps == len(samples)

    def test_zero_trials(self, small_setup):
        count, samples = gather(small_setup, "cKMeans", 0, 0)
        assert count == 0 and samples == []

    def test_sample_invariants(self, small_setup):
        _, samples = gather(small_setup, "mixed", 2, 1)
        for s in samples:
            assert s.gu_counts.sum() == small_setup.n_gu
            assert s.abs_counts.sum() == small_setup.n_abs
            assert set(np.unique(s.cgu_mask)) <= {0, 1}
            assert (s.cgu_mask <= (s.gu_counts > 0)).all()

    def test_reproducible_bytes(self, small_setup):
        _, a = gather(small_setup, "cRandom", 2, 7)
        _, b = gather(small_setup, "cRandom", 2, 7)
        assert [s.to_json() for s in a] == [s.to_json() for s in b]

    def test_mixed_rate_between_pure_rates(self, small_setup):
        # the mixed positive-cell rate interpolates the pure strategies
        def rate(samples):
            return np.mean([s.cgu_mask.sum() / max(1, (s.gu_counts > 0).sum())
                            for s in samples])

        _, rnd = gather(small_setup, "cRandom", 2, 3)
        _, km = gather(small_setup, "cKMeans", 2, 3)
        mixed_rate = (rate(rnd) + rate(km)) / 2
        lo, hi = sorted([rate(rnd), rate(km)])
        assert lo - 1e-12 <= mixed_rate <= hi + 1e-12

    def test_bad_strategy(self, small_setup):
        with pytest.raises(ValueError):
            collect(small_setup, "florp", 1, 0, lambda s: None)

    def test_json_round_trip(self, small_setup, tmp_path):
        _, samples = gather(small_setup, "cRandom", 1, 5)
        path = tmp_path / "data.jsonl"
        path.write_text("".join(s.to_json() + "\n" for s in samples))
        back = list(read_samples(path))
        assert len(back) == len(samples)
        a, g, m = back[0]
        assert np.array_equal(a, samples[0].abs_counts)
        assert np.array_equal(g, samples[0].gu_counts)
        assert np.array_equal(m, samples[0].cgu_mask)

    def test_manifest(self, small_setup, tmp_path):
        path = tmp_path / "data.manifest.json"
        write_manifest(path, small_setup, "cRandom", 9, 123)
        doc = json.loads(path.read_text())
        assert doc["k"] == 32 and doc["n"] == 3 and doc["m"] == 30
        assert doc["count"] == 123 and doc["strategy"] == "cRandom"
        assert doc["env"] == small_setup.env.digest()

    def test_manifest_mixed_shards(self, small_setup, tmp_path):
        path = tmp_path / "mixed.manifest.json"
        shards = [{"n": 3, "m": 100, "count": 400},
                  {"n": 5, "m": 60, "count": 400}]
        write_manifest(path, small_setup, "mixed", 1, 800, shards=shards)
        doc = json.loads(path.read_text())
        assert doc["shards"] == shards


class TestSplit:
    def test_ninety_ten(self):
        train, val = split(100, 0.1, 0)
        assert len(train) == 90 and len(val) == 10

    def test_floor_on_validation(self):
        train, val = split(3, 0.5, 0)
        assert len(val) == 1 and len(train) == 2

    def test_disjoint_exhaustive(self):
        train, val = split(57, 0.25, 3)
        both = np.concatenate([train, val])
        assert np.array_equal(np.sort(both), np.arange(57))

    def test_seeded(self):
        assert np.array_equal(split(50, 0.2, 4)[1], split(50, 0.2, 4)[1])
        assert not np.array_equal(split(50, 0.2, 4)[1], split(50, 0.2, 5)[1])

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            split(10, 0.0, 0)
