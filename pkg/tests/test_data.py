import numpy as np
import pytest
from numpy.testing import assert_allclose

from actionsynth import data as d
from actionsynth import geometry as geo
from actionsynth.errors import DeadEnd, FormatError, RateError, SchemaError


@pytest.fixture(scope="module")
def toy():
    return d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=3, items_per_tag=6,
                                                     duration_range=(8, 14), seed=11))


class FakeClassifier:
    """Confidence oracle keyed off a fixed per-item answer."""

    def __init__(self, n_tags, confident=True):
        self.n_tags = n_tags
        self.confident = confident

    def probabilities(self, clip):
        probs = np.full(self.n_tags, (1.0 - 0.9) / (self.n_tags - 1))
        if self.confident and clip.tag is not None:
            probs[:] = 0.1 / (self.n_tags - 1)
            probs[clip.tag] = 0.9
        else:
            probs[:] = 1.0 / self.n_tags
        return probs


class TestDownsample:
    def _clip(self, T, hz):
        return geo.MotionClip(np.stack([geo.identity_sixd(2)] * T),
                              np.arange(T * 3, dtype=float).reshape(T, 3), frame_rate=hz)

    def test_halves_even_lengths(self):
        out = d.downsample(self._clip(10, 60.0), 30.0)
        assert len(out) == 5 and out.frame_rate == 30.0

    def test_identity_at_target(self):
        clip = self._clip(7, 30.0)
        out = d.downsample(clip, 30.0)
        assert len(out) == 7
        assert_allclose(out.root, clip.root)

    def test_90hz_9_frames_keeps_0_3_6(self):
        clip = self._clip(9, 90.0)
        out = d.downsample(clip, 30.0)
        assert len(out) == 3
        assert_allclose(out.root, clip.root[[0, 3, 6]])

    def test_upsampling_rejected(self):
        with pytest.raises(RateError):
            d.downsample(self._clip(4, 30.0), 60.0)


class TestToyDataset:
    def test_deterministic_under_seed(self):
        a = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=4, seed=5))
        b = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=4, seed=5))
        for x, y in zip(a.items, b.items):
            assert np.array_equal(x.action.rotations, y.action.rotations)
            assert np.array_equal(x.initial_motion.root, y.initial_motion.root)

    def test_counts(self):
        ds = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=10, seed=0))
        assert len(ds) == 20
        assert d.transition_matrix(ds.items, 2).sum() == 20

    def test_context_is_true_previous_tail(self, toy):
        # items inside a chain: initial motion == tail of the previous action
        per_chain = max(4, 2 * 3)
        for i in range(1, len(toy.items)):
            if i % per_chain == 0:
                continue
            prev, cur = toy.items[i - 1], toy.items[i]
            k = toy.context_len
            assert_allclose(cur.initial_motion.rotations, prev.action.rotations[-k:])

    def test_linear_classifier_separates_tags(self, toy):
        from sklearn.linear_model import LogisticRegression
        from sklearn.model_selection import cross_val_score

        X = np.stack([it.action.rotations.std(axis=0).ravel() for it in toy.items])
        y = np.array([it.current_tag for it in toy.items])
        score = cross_val_score(LogisticRegression(max_iter=2000), X, y, cv=3).mean()
        assert score >= 0.95

    def test_vocabulary_has_root_and_inplace(self, toy):
        kinds = {t.kind for t in toy.vocabulary.tags}
        assert "intention-root" in kinds and "intention-inplace" in kinds


class TestContainerIO:
    def test_binary_round_trip_bit_identical(self, toy, tmp_path):
        p1, p2 = tmp_path / "a.mot", tmp_path / "b.mot"
        d.save_dataset(toy, str(p1))
        loaded = d.load_dataset(str(p1))
        d.save_dataset(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_round_trip(self, toy, tmp_path):
        path = tmp_path / "toy.json"
        d.save_dataset(toy, str(path))
        loaded = d.load_dataset(str(path))
        assert len(loaded) == len(toy)
        assert_allclose(loaded.items[0].trajectory, toy.items[0].trajectory)

    def test_empty_dataset(self, toy, tmp_path):
        empty = d.MotionDataset(vocabulary=toy.vocabulary, items=[],
                                context_len=toy.context_len)
        path = tmp_path / "empty.mot"
        d.save_dataset(empty, str(path))
        loaded = d.load_dataset(str(path))
        assert len(loaded) == 0 and len(loaded.vocabulary) == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mot"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError) as err:
            d.load_dataset(str(path))
        assert "magic" in str(err.value)

    def test_truncated_blob(self, toy, tmp_path):
        path = tmp_path / "trunc.mot"
        d.save_dataset(toy, str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 200])
        with pytest.raises(FormatError) as err:
            d.load_dataset(str(path))
        assert err.value.offset is not None

    def test_action_duration_mismatch_names_invariant(self, toy, tmp_path):
        path = tmp_path / "bad.json"
        d.save_dataset(toy, str(path), manifest=True)
        import json
        doc = json.loads(path.read_text())
        doc["items"][0]["duration"] += 1
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            d.load_dataset(str(path))
        assert "duration" in str(err.value)

    def test_motion_round_trip(self, toy, tmp_path):
        clip = toy.items[0].action
        path = tmp_path / "m.mot"
        d.save_motion(str(path), clip, sidecar={"actions": []})
        loaded, header = d.load_motion(str(path))
        assert_allclose(loaded.rotations, clip.rotations.astype(np.float32))
        assert header["sidecar"] == {"actions": []}

    def test_downsampled_on_load(self, tmp_path):
        import json

        # a 60 Hz file: contexts carry 2 * k frames, actions 2 * T
        k, T, n_j = 2, 4, 3
        ident = geo.identity_sixd(n_j).tolist()
        doc = {
            "kind": "dataset", "format_version": 1, "frame_rate": 60.0,
            "n_joints": n_j, "context_len": k, "skeleton": "builtin:standard22",
            "vocabulary": [{"name": "a", "kind": "intention-inplace"},
                           {"name": "b", "kind": "intention-root"}],
            "items": [{
                "current_tag": 0, "next_tag": 1, "duration": 2 * T,
                "initial_rotations": [ident] * (2 * k),
                "initial_root": [[float(i), 0.0, 0.9] for i in range(2 * k)],
                "action_rotations": [ident] * (2 * T),
                "action_root": [[float(i), 1.0, 0.9] for i in range(2 * T)],
                "trajectory": [[float(i), 1.0] for i in range(2 * T)],
            }],
        }
        path = tmp_path / "fast.json"
        path.write_text(json.dumps(doc))
        loaded = d.load_dataset(str(path))
        assert loaded.frame_rate == 30.0
        assert len(loaded.items[0].initial_motion) == k
        assert len(loaded.items[0].action) == T
        assert_allclose(loaded.items[0].action.root[:, 0], [0.0, 2.0, 4.0, 6.0])


class TestSplit:
    def test_small_class(self, toy):
        train, test = d.split_train_test(toy, ratio=0.2, seed=0)
        # 6 per class -> ceil(1.2) = 2 test each
        counts = {}
        for it in test:
            counts[it.current_tag] = counts.get(it.current_tag, 0) + 1
        assert all(v == 2 for v in counts.values())
        assert len(train) + len(test) == len(toy)

    def test_cap_applies(self):
        ds = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=30, seed=2))
        _, test = d.split_train_test(ds, ratio=0.5, cap=4, seed=0)
        counts = {}
        for it in test:
            counts[it.current_tag] = counts.get(it.current_tag, 0) + 1
        assert all(v == 4 for v in counts.values())

    def test_partition_is_disjoint_and_deterministic(self, toy):
        t1 = d.split_train_test(toy, seed=3)
        t2 = d.split_train_test(toy, seed=3)
        assert [id(x) for x in t1[0]] == [id(x) for x in t2[0]]
        ids_train = {id(x) for x in t1[0]}
        ids_test = {id(x) for x in t1[1]}
        assert not (ids_train & ids_test)


class TestTransitionMatrix:
    def test_empty(self):
        assert d.transition_matrix([], 3).sum() == 0

    def test_single_item(self, toy):
        item = toy.items[0]
        m = d.transition_matrix([item], 3)
        assert m[item.current_tag, item.next_tag] == 1 and m.sum() == 1

    def test_matches_brute_force(self, toy):
        m = d.transition_matrix(toy.items, 3)
        for i in range(3):
            for j in range(3):
                expected = sum(1 for it in toy.items
                               if it.current_tag == i and it.next_tag == j)
                assert m[i, j] == expected


class TestMultiactionTestset:
    def test_empty_pool(self, toy):
        chains = d.build_multiaction_testset([], [], toy.vocabulary,
                                             FakeClassifier(3, confident=False),
                                             "overall", n_actions=5)
        assert chains == []

    def test_alternating_two_tag_chains(self):
        ds = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=6, seed=4))
        # force a strictly alternating transition matrix
        for i, it in enumerate(ds.items):
            it.next_tag = 1 - it.current_tag
        chains = d.build_multiaction_testset(ds.items, ds.items, ds.vocabulary,
                                             FakeClassifier(2), "overall",
                                             n_actions=8, seed=0)
        assert len(chains) == len(ds.items)
        for chain in chains:
            tags = [a.tag for a in chain.actions]
            assert all(tags[i] != tags[i + 1] for i in range(len(tags) - 1))

    def test_overall_transitions_seen_in_training(self, toy):
        chains = d.build_multiaction_testset(toy.items, toy.items, toy.vocabulary,
                                             FakeClassifier(3), "overall",
                                             n_actions=6, seed=1)
        counts = d.transition_matrix(toy.items, 3)
        for chain in chains:
            tags = [a.tag for a in chain.actions]
            for a, b in zip(tags[:-1], tags[1:]):
                assert counts[a, b] > 0

    def test_sufficient_mode_candidates(self, toy):
        chains = d.build_multiaction_testset(toy.items, toy.items, toy.vocabulary,
                                             FakeClassifier(3), "sufficient",
                                             n_actions=6, seed=2)
        assert chains and all(len(c.actions) == 6 for c in chains)

    def test_dead_end_raises(self):
        ds = d.generate_toy_dataset(d.ToyDatasetConfig(n_tags=2, items_per_tag=3, seed=6))
        for it in ds.items:
            it.next_tag = 1 - it.current_tag
        # only tag-0 items pass the confidence gate, but every transition
        # from tag 0 leads to tag 1, whose pool is empty
        with pytest.raises(DeadEnd):
            d.build_multiaction_testset(ds.items, ds.items, ds.vocabulary,
                                        _PoolOnly(ds.items, keep_tag=0), "overall",
                                        n_actions=4, seed=0)

    def test_testset_file_round_trip(self, toy, tmp_path):
        chains = d.build_multiaction_testset(toy.items, toy.items, toy.vocabulary,
                                             FakeClassifier(3), "overall",
                                             n_actions=4, seed=3)
        path = tmp_path / "chains.json"
        d.save_testset(chains, str(path))
        loaded = d.load_testset(str(path))
        assert len(loaded) == len(chains)
        assert [a.tag for a in loaded[0].actions] == [a.tag for a in chains[0].actions]
        if chains[0].actions[0].trajectory is not None:
            assert_allclose(loaded[0].actions[0].trajectory, chains[0].actions[0].trajectory)


class _PoolOnly:
    """Confident only for one item's tag: empties the pool for other tags."""

    def __init__(self, items, keep_tag):
        self.keep_tag = keep_tag

    def probabilities(self, clip):
        probs = np.zeros(2)
        if clip.tag == self.keep_tag:
            probs[clip.tag] = 1.0
        else:
            probs[:] = 0.4
        return probs
