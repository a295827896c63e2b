import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rctree.data import (
    RawTable,
    Transform,
    encode_and_scale,
    fit_transform,
    kfold_split,
    load_csv,
    synthetic_oblique,
)
from rctree.errors import ConfigError, DataError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        raw = load_csv(write(tmp_path, "x1,x2,y\n1,2,a\n3,4,b\n5,6,a\n"))
        assert raw.n_rows == 3
        assert raw.feature_names == ("x1", "x2")
        assert raw.labels == ("a", "b", "a")

    def test_empty_cell_located(self, tmp_path):
        with pytest.raises(DataError, match=r"row 3, column 'x2'"):
            load_csv(write(tmp_path, "x1,x2,y\n1,2,a\n3,,b\n"))

    def test_label_by_name(self, tmp_path):
        raw = load_csv(write(tmp_path, "class,x1\nu,0.1\nv,0.2\n"), label_column="class")
        assert raw.labels == ("u", "v") and raw.feature_names == ("x1",)

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match="row 2"):
            load_csv(write(tmp_path, "x1,y\n1,2,3\n"))

    def test_missing_header(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            load_csv(write(tmp_path, "1,2\n3,4\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            load_csv(write(tmp_path, ""))

    def test_duplicate_names(self, tmp_path):
        with pytest.raises(DataError, match="duplicate"):
            load_csv(write(tmp_path, "x,x\n1,2\n"))

    def test_unknown_label_name(self, tmp_path):
        with pytest.raises(DataError, match="label column"):
            load_csv(write(tmp_path, "x,y\n1,2\n"), label_column="class")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "none.csv")

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_bytes(b"x,y\n\xff\xfe,1\n")
        with pytest.raises(DataError, match="UTF-8"):
            load_csv(path)

    def test_without_labels(self, tmp_path):
        raw = load_csv(write(tmp_path, "x1,x2\n1,2\n"), label_column=None)
        assert raw.labels is None and raw.feature_names == ("x1", "x2")


class TestEncodeAndScale:
    def test_min_max(self):
        ds, _ = encode_and_scale(RawTable.from_arrays([[2.0], [4.0], [6.0]], [1, 2, 1]))
        np.testing.assert_allclose(ds.X.ravel(), [0.0, 0.5, 1.0])

    def test_unseen_value_clamped(self):
        _, tf = encode_and_scale(RawTable.from_arrays([[2.0], [4.0], [6.0]], [1, 2, 1]))
        ds = tf.apply(RawTable.from_arrays([[8.0], [0.0]], [1, 1]))
        np.testing.assert_allclose(ds.X.ravel(), [1.0, 0.0])

    def test_categorical_one_hot(self):
        raw = RawTable(("c",), (("r", "g", "b", "g"),), ("1", "2", "1", "2"))
        ds, _ = encode_and_scale(raw)
        assert ds.X.shape == (4, 3)
        np.testing.assert_array_equal(ds.X.sum(axis=1), 1)
        assert ds.feature_names == ("c=r", "c=g", "c=b")

    def test_unknown_level_warns(self):
        raw = RawTable(("c",), (("r", "g"),), ("1", "2"))
        _, tf = encode_and_scale(raw)
        with pytest.warns(UserWarning, match="unknown levels"):
            ds = tf.apply(RawTable(("c",), (("z",),), ("1",)))
        np.testing.assert_array_equal(ds.X, [[0, 0]])

    def test_constant_feature_warns_and_scales_to_zero(self):
        with pytest.warns(UserWarning, match="constant"):
            ds, _ = encode_and_scale(RawTable.from_arrays([[3.0], [3.0]], [1, 2]))
        np.testing.assert_array_equal(ds.X, 0)

    def test_labels_in_first_appearance_order(self):
        ds, tf = encode_and_scale(RawTable.from_arrays([[0.0], [1.0], [2.0]], ["b", "a", "b"]))
        assert tf.class_names == ("b", "a")
        np.testing.assert_array_equal(ds.y, [1, 2, 1])

    def test_idempotent(self, rng):
        raw = RawTable.from_arrays(rng.normal(size=(20, 3)), rng.integers(0, 2, 20))
        ds, tf = encode_and_scale(raw)
        again, _ = encode_and_scale(RawTable.from_arrays(ds.X, raw.labels, raw.feature_names))
        np.testing.assert_allclose(again.X, ds.X, atol=1e-15)
        np.testing.assert_allclose(tf.apply(raw).X, ds.X)

    def test_no_leak_from_other_rows(self, rng):
        X = rng.normal(size=(10, 2))
        fit = np.arange(7)
        _, before = encode_and_scale(RawTable.from_arrays(X, np.zeros(10)), fit)
        X[8] = [1e6, -1e6]
        _, after = encode_and_scale(RawTable.from_arrays(X, np.zeros(10)), fit)
        assert before.to_dict() == after.to_dict()

    def test_missing_column_on_apply(self):
        _, tf = encode_and_scale(RawTable.from_arrays([[0.0, 1.0], [1.0, 0.0]], [1, 2], ["a", "b"]))
        with pytest.raises(DataError, match="missing columns"):
            tf.apply(RawTable.from_arrays([[0.0]], [1], ["a"]))

    def test_unknown_label_on_apply(self):
        _, tf = encode_and_scale(RawTable.from_arrays([[0.0], [1.0]], ["x", "y"]))
        with pytest.raises(DataError, match="not seen"):
            tf.apply(RawTable.from_arrays([[0.5]], ["z"]))

    def test_empty_fit_rows(self):
        with pytest.raises(ConfigError):
            fit_transform(RawTable.from_arrays([[0.0], [1.0]], [1, 2]), [])

    def test_transform_round_trip(self, tmp_path):
        raw = RawTable(("c", "x"), (("r", "g"), ("1.0", "2.0")), ("1", "2"), "y")
        _, tf = encode_and_scale(raw)
        tf.save(tmp_path / "t.json")
        back = Transform.load(tmp_path / "t.json")
        assert back == tf
        np.testing.assert_array_equal(back.apply(raw).X, tf.apply(raw).X)

    def test_malformed_transform(self):
        with pytest.raises(DataError):
            Transform.from_dict({"features": [{"kind": "numeric"}]})


class TestKFold:
    def test_sizes(self):
        assert [len(f) for f in kfold_split(10, 5, 0)] == [2] * 5

    @given(st.integers(1, 200), st.integers(1, 10), st.integers(0, 2**63 - 1))
    def test_partition(self, N, k, seed):
        if k > N:
            with pytest.raises(ConfigError):
                kfold_split(N, k, seed)
            return
        folds = kfold_split(N, k, seed)
        np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(N))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_seeded(self):
        a, b = kfold_split(50, 5, 3), kfold_split(50, 5, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, kfold_split(50, 5, 4)))

    def test_k_zero(self):
        with pytest.raises(ConfigError):
            kfold_split(5, 0, 0)


class TestSynthetic:
    def test_shape_and_classes(self):
        raw = synthetic_oblique(n=500, p=12, seed=1)
        assert raw.n_rows == 500 and len(raw.feature_names) == 12
        assert set(raw.labels) == {"1", "2", "3"}

    def test_deterministic(self):
        assert synthetic_oblique(n=50, seed=5) == synthetic_oblique(n=50, seed=5)

    def test_noise_free_labels_follow_the_tree(self):
        raw = synthetic_oblique(n=300, p=9, seed=2, flip=0.0)
        X = np.array(raw.columns, dtype=float).T
        # root split on the first three features
        right = X[:, 0] - X[:, 1] + 0.5 * X[:, 2] - 0.25 <= 0
        third = -X[:, 6] + 0.5 * X[:, 7] + X[:, 8] - 0.25 > 0
        want = np.where(right, np.where(third, 3, 1), 0)
        y = np.array(raw.labels, dtype=int)
        np.testing.assert_array_equal(y[right], want[right])

    def test_needs_nine_features(self):
        with pytest.raises(ConfigError):
            synthetic_oblique(p=8)

    def test_from_arrays_preserves_values(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            raw = RawTable.from_arrays([[0.1, 1 / 3]], [0])
        assert float(raw.columns[1][0]) == 1 / 3
