import json

import numpy as np
import numpy.testing as npt
import pytest

from grand.datasets import Dataset, load_canonical, row_normalize, save_canonical, synthetic_sbm
from grand.errors import FormatError, IndexOutOfRange, IoError
from grand.sparse import densify, sym_normalize
from grand.trainer import Hyperparams, evaluate, fit, predict


def write_minimal(directory, features="1.0,2.0\n3.0,4.0\n", labels="0\n1\n",
                  edges="0\t1\n", split=None):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "features.csv").write_text(features)
    (directory / "labels.txt").write_text(labels)
    (directory / "edges.tsv").write_text(edges)
    split = split or {"train": [0], "val": [1], "test": [], "num_classes": 2}
    (directory / "split.json").write_text(json.dumps(split))
    return directory


class TestLoadCanonical:
    def test_minimal_fixture(self, tmp_path):
        ds = load_canonical(write_minimal(tmp_path / "tiny"))
        assert ds.meta["n"] == 2
        assert ds.meta["d"] == 2
        assert ds.adjacency.nnz == 2

    def test_features_normalized_by_default(self, tmp_path):
        ds = load_canonical(write_minimal(tmp_path / "t"))
        npt.assert_allclose(ds.features.sum(axis=1), 1.0, atol=1e-12)

    def test_normalization_flag_off(self, tmp_path):
        ds = load_canonical(write_minimal(tmp_path / "t"), normalize_features=False)
        npt.assert_array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0]])

    def test_overlapping_masks_rejected(self, tmp_path):
        d = write_minimal(tmp_path / "bad",
                          split={"train": [0], "val": [0], "test": [1],
                                 "num_classes": 2})
        with pytest.raises(FormatError):
            load_canonical(d)

    def test_missing_file(self, tmp_path):
        d = write_minimal(tmp_path / "m")
        (d / "labels.txt").unlink()
        with pytest.raises(IoError):
            load_canonical(d)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(IoError):
            load_canonical(tmp_path / "nope")

    def test_label_out_of_range(self, tmp_path):
        d = write_minimal(tmp_path / "lbl", labels="0\n5\n")
        with pytest.raises(FormatError):
            load_canonical(d)

    def test_edge_id_out_of_range(self, tmp_path):
        d = write_minimal(tmp_path / "edge", edges="0\t7\n")
        with pytest.raises(IndexOutOfRange):
            load_canonical(d)

    def test_binary_features_roundtrip(self, tmp_path):
        d = write_minimal(tmp_path / "bin")
        (d / "features.csv").unlink()
        ds0 = None
        # f32 payload: values must survive exactly at f32 resolution.
        import struct
        payload = np.array([[1.5, 2.25], [3.0, -4.5]], dtype="<f4")
        (d / "features.bin").write_bytes(
            b"GRFD" + struct.pack("<III", 2, 2, 0) + payload.tobytes())
        ds = load_canonical(d, normalize_features=False)
        npt.assert_array_equal(ds.features, payload.astype(np.float64))

    def test_corrupt_binary_header(self, tmp_path):
        d = write_minimal(tmp_path / "hdr")
        (d / "features.csv").unlink()
        (d / "features.bin").write_bytes(b"XXXX" + b"\0" * 12)
        with pytest.raises(FormatError):
            load_canonical(d)


class TestRowNormalize:
    def test_simple_row(self):
        npt.assert_array_equal(row_normalize(np.array([[2.0, 2.0]])), [[0.5, 0.5]])

    def test_zero_row_unchanged(self):
        x = np.array([[0.0, 0.0], [1.0, 3.0]])
        out = row_normalize(x)
        npt.assert_array_equal(out[0], [0.0, 0.0])
        npt.assert_allclose(out[1], [0.25, 0.75], atol=1e-15)


class TestRoundTrip:
    @pytest.mark.parametrize("fmt", ["csv", "bin"])
    def test_load_save_load(self, tmp_path, fmt):
        ds = synthetic_sbm(30, 3, 0.4, 0.05, 5, seed=1)
        if fmt == "bin":  # f32 storage: snap values first so reload is exact
            ds.features[:] = ds.features.astype("<f4").astype(np.float64)
        save_canonical(ds, tmp_path / "a", features_format=fmt)
        one = load_canonical(tmp_path / "a", normalize_features=False)
        save_canonical(one, tmp_path / "b", features_format=fmt)
        two = load_canonical(tmp_path / "b", normalize_features=False)
        npt.assert_array_equal(one.features, two.features)
        npt.assert_array_equal(one.labels, two.labels)
        npt.assert_array_equal(densify(one.adjacency), densify(two.adjacency))
        for name in ("train", "val", "test"):
            npt.assert_array_equal(one.masks[name], two.masks[name])
        npt.assert_array_equal(ds.features, one.features)
        npt.assert_array_equal(densify(ds.adjacency), densify(one.adjacency))


class TestSyntheticSbm:
    def test_two_cliques(self):
        ds = synthetic_sbm(10, 2, 1.0, 0.0, 3, seed=0)
        d = densify(ds.adjacency)
        same = ds.labels[:, None] == ds.labels[None, :]
        off_diag = ~np.eye(10, dtype=bool)
        npt.assert_array_equal(d[same & off_diag], 1.0)
        npt.assert_array_equal(d[~same], 0.0)

    def test_equal_probabilities_degree_ratio(self):
        ds = synthetic_sbm(400, 2, 0.2, 0.2, 3, seed=3)
        d = densify(ds.adjacency)
        same = ds.labels[:, None] == ds.labels[None, :]
        within = d[same & ~np.eye(400, dtype=bool)].mean()
        between = d[~same].mean()
        assert abs(within / between - 1.0) < 0.15

    def test_split_fractions_and_stratification(self):
        ds = synthetic_sbm(200, 4, 0.3, 0.05, 8, seed=5)
        assert len(ds.masks["train"]) == 20
        assert len(ds.masks["val"]) == 20
        assert len(ds.masks["test"]) == 160
        train_labels = ds.labels[ds.masks["train"]]
        assert set(train_labels.tolist()) == {0, 1, 2, 3}

    def test_homophily_gap_over_plain_mlp(self):
        # Neighborhood averaging recovers the block signal drowned in
        # feature noise: propagated accuracy beats the no-propagation
        # model by 10+ points on average over 5 seeds.
        accs = {0: [], 4: []}
        for seed in range(5):
            ds = synthetic_sbm(200, 2, 0.5, 0.05, 16, seed=seed)
            a_hat = sym_normalize(ds.adjacency)
            for k in accs:
                hp = Hyperparams(prop_steps=k, n_augment=2, drop_rate=0.5,
                                 temperature=0.5, consistency_weight=1.0,
                                 lr=0.01, hidden=16, dropout_input=0.2,
                                 dropout_hidden=0.2, patience=40,
                                 max_epochs=300, seed=seed)
                params, _ = fit(ds, hp, a_hat=a_hat)
                probs = predict(params, a_hat, ds.features, k)
                accs[k].append(evaluate(probs, ds.labels, ds.masks["test"]))
        gap = np.mean(accs[4]) - np.mean(accs[0])
        assert gap >= 0.10
