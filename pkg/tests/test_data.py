import json

import numpy as np
import pytest

from dtlight.data import (Dataset, Episode, compute_rtg, load_dataset,
                          max_offline_return, sample_batch,
                          top_c_trajectories, write_dataset)


def make_episode(rewards, obs_dim=3, actions=None, seed=0):
    rng = np.random.default_rng(seed)
    t = len(rewards)
    return Episode(
        obs=rng.normal(size=(t, obs_dim)),
        actions=actions if actions is not None else rng.integers(0, 4, size=t),
        rewards=rewards,
    )


class TestComputeRtg:
    def test_hand_example(self):
        np.testing.assert_array_equal(
            compute_rtg([1.0, 2.0, 3.0]), [6.0, 5.0, 3.0]
        )

    def test_negative_rewards(self):
        np.testing.assert_array_equal(
            compute_rtg([-1.0, -1.0, -1.0]), [-3.0, -2.0, -1.0]
        )

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=50)
        expected = [r[i:].sum() for i in range(50)]
        np.testing.assert_allclose(compute_rtg(r), expected, rtol=1e-12)

    def test_first_entry_is_return(self):
        ep = make_episode(list(range(10)))
        assert ep.rtg[0] == ep.episode_return

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_rtg([])


class TestDataset:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Episode(obs=np.zeros((3, 2)), actions=[0, 1], rewards=[0.0, 0.0, 0.0])

    def test_returns_and_max(self):
        ds = Dataset(episodes=[make_episode([1.0, 1.0]), make_episode([5.0])])
        np.testing.assert_array_equal(ds.returns, [2.0, 5.0])
        assert max_offline_return(ds) == 5.0

    def test_max_return_empty_rejected(self):
        with pytest.raises(ValueError):
            max_offline_return(Dataset(episodes=[]))

    def test_top_c_sorted_by_return(self):
        eps = [make_episode([r]) for r in (1.0, 9.0, 4.0, 9.0)]
        ds = Dataset(episodes=eps)
        top = top_c_trajectories(ds, 3)
        assert [e.episode_return for e in top] == [9.0, 9.0, 4.0]
        # tie between indices 1 and 3 resolves to the earlier episode first
        assert top[0] is eps[1] and top[1] is eps[3]

    def test_top_c_too_large(self):
        with pytest.raises(ValueError):
            top_c_trajectories(Dataset(episodes=[make_episode([0.0])]), 2)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        eps = [make_episode(list(np.linspace(-3, 7, 11)), seed=s) for s in range(3)]
        path = write_dataset(
            tmp_path / "d.json", eps, scenario="s", agent_id="a",
            behavior="emp", seed=4, num_actions=4, control_step_s=10,
        )
        ds = load_dataset(path)
        assert ds.scenario == "s" and ds.agent_id == "a"
        assert ds.behavior == "emp" and ds.seed == 4
        for orig, got in zip(eps, ds.episodes):
            np.testing.assert_array_equal(orig.obs, got.obs)
            np.testing.assert_array_equal(orig.actions, got.actions)
            np.testing.assert_array_equal(orig.rewards, got.rewards)

    def test_rewrite_byte_identical(self, tmp_path):
        eps = [make_episode([1.5, -2.25])]
        kw = dict(scenario="s", agent_id="a", behavior="emp", seed=0,
                  num_actions=4, control_step_s=10)
        a = write_dataset(tmp_path / "a.json", eps, **kw)
        b = write_dataset(tmp_path / "b.json", eps, **kw)
        assert a.read_bytes() == b.read_bytes()

    def test_schema_version_checked(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"schema_version": 99, "episodes": []}))
        with pytest.raises(ValueError):
            load_dataset(p)

    def test_action_range_checked(self, tmp_path):
        eps = [make_episode([0.0, 0.0], actions=[0, 7])]
        path = write_dataset(
            tmp_path / "d.json", eps, scenario="s", agent_id="a",
            behavior="emp", seed=0, num_actions=8, control_step_s=10,
        )
        doc = json.loads(path.read_text())
        doc["num_actions"] = 4
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_dataset(path)

    def test_no_tmp_file_left_behind(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise OSError("disk full")

        monkeypatch.setattr(json, "dump", boom)
        with pytest.raises(OSError):
            write_dataset(
                tmp_path / "d.json", [make_episode([0.0])], scenario="s",
                agent_id="a", behavior="emp", seed=0, num_actions=4,
                control_step_s=10,
            )
        assert list(tmp_path.iterdir()) == []


class TestSampleBatch:
    def setup_method(self):
        self.ds = Dataset(
            episodes=[make_episode(list(rng_r), seed=s)
                      for s, rng_r in enumerate(
                          np.random.default_rng(0).normal(size=(5, 40)))]
        )

    def test_shapes(self):
        b = sample_batch(self.ds, batch_size=16, k=8,
                         rng=np.random.default_rng(0))
        assert b.states.shape == (16, 8, 3)
        assert b.actions.shape == (16, 8)
        assert b.rtg.shape == (16, 8)
        assert b.timesteps.shape == (16, 8)
        assert b.valid_mask.shape == (16, 8)
        assert len(b) == 16

    def test_padding_left_and_zeroed(self):
        ds = Dataset(episodes=[make_episode([1.0, 2.0, 3.0])])
        rng = np.random.default_rng(0)
        saw_padding = False
        for _ in range(50):
            b = sample_batch(ds, batch_size=4, k=5, rng=rng)
            for i in range(4):
                mask = b.valid_mask[i]
                n = mask.sum()
                # contiguous suffix of valid steps
                assert mask[5 - n:].all() and not mask[:5 - n].any()
                if n < 5:
                    saw_padding = True
                    assert not b.states[i, :5 - n].any()
                    assert not b.actions[i, :5 - n].any()
        assert saw_padding

    def test_rtg_entries_match_oracle(self):
        rng = np.random.default_rng(3)
        b = sample_batch(self.ds, batch_size=32, k=6, rng=rng)
        for i in range(32):
            valid = b.valid_mask[i]
            ts = b.timesteps[i][valid]
            # identify the source episode by its observation rows
            t0 = int(ts[0])
            match = None
            for ep in self.ds.episodes:
                if len(ep) > t0 and np.array_equal(ep.obs[t0], b.states[i][valid][0]):
                    match = ep
                    break
            assert match is not None
            np.testing.assert_allclose(
                b.rtg[i][valid], match.rtg[ts], rtol=1e-12
            )

    def test_rtg_telescopes_inside_window(self):
        b = sample_batch(self.ds, batch_size=16, k=6,
                         rng=np.random.default_rng(5))
        for i in range(16):
            valid = b.valid_mask[i]
            if valid.sum() < 2:
                continue
            rtg = b.rtg[i][valid]
            # each difference must equal some step reward of some episode
            diffs = rtg[:-1] - rtg[1:]
            all_rewards = np.concatenate(
                [e.rewards for e in self.ds.episodes]
            )
            for d in diffs:
                assert np.min(np.abs(all_rewards - d)) < 1e-9

    def test_end_index_uniform(self):
        ds = Dataset(episodes=[make_episode([0.0] * 10)])
        rng = np.random.default_rng(0)
        counts = np.zeros(10)
        n = 10_000
        for _ in range(n // 100):
            b = sample_batch(ds, batch_size=100, k=3, rng=rng)
            ends = [int(b.timesteps[i][b.valid_mask[i]][-1]) for i in range(100)]
            for e in ends:
                counts[e] += 1
        sigma = np.sqrt(n * 0.1 * 0.9)
        assert np.all(np.abs(counts - n / 10) < 3 * sigma)

    def test_length_proportional_episode_choice(self):
        # episode lengths 30 vs 10: expect 3:1 sampling ratio
        ds = Dataset(episodes=[make_episode([1.0] * 30, seed=0),
                               make_episode([2.0] * 10, seed=1)])
        rng = np.random.default_rng(0)
        n, long_hits = 4000, 0
        b = sample_batch(ds, batch_size=n, k=1, rng=rng)
        for i in range(n):
            # rtg of the short episode is a multiple of 2 in [2, 20]
            r = b.rtg[i][0]
            if r > 20 or r % 2 == 1:
                long_hits += 1
            else:
                # ambiguous values (even <= 20) occur in both; count by obs
                t = int(b.timesteps[i][0])
                long_hits += np.array_equal(b.states[i][0], ds.episodes[0].obs[t])
        p = 0.75
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(long_hits - n * p) < 3 * sigma

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            sample_batch(Dataset(episodes=[]), batch_size=4, k=3)

    def test_bad_context_rejected(self):
        with pytest.raises(ValueError):
            sample_batch(self.ds, batch_size=4, k=0)
