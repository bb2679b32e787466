import math

import numpy as np
import pytest

from saaf.data import (Dataset, FeatureTransform, KFold, RandomSplit, denormalize, gen_additive, gen_fig2,
                       load_csv, metrics, normalize, split)
from saaf.errors import IngestionError, UsageError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestGenerators:
    def test_fig2(self):
        ds = gen_fig2(seed=3)
        assert len(ds) == 21
        assert ds.X[0, 0] == -1.0 and ds.X[-1, 0] == 1.0
        np.testing.assert_array_equal(gen_fig2(seed=3).t, ds.t)
        assert not np.array_equal(gen_fig2(seed=4).t, ds.t)
        np.testing.assert_allclose(gen_fig2(noise=0).t, np.sin(np.pi * ds.X[:, 0]))

    def test_additive_independence(self):
        ds = gen_additive(10_000, 3, seed=0)
        C = np.corrcoef(ds.X.T)
        assert np.max(np.abs(C[np.triu_indices(3, 1)])) < 0.05
        assert ds.X.min() >= -1 and ds.X.max() <= 1

    def test_additive_linear_affine_fit(self):
        ds = gen_additive(5000, 3, seed=1, components=("linear",))
        A = np.hstack([ds.X, np.ones((len(ds), 1))])
        coef, *_ = np.linalg.lstsq(A, ds.t, rcond=None)
        rmse = np.sqrt(np.mean((A @ coef - ds.t) ** 2))
        assert rmse == pytest.approx(0.1, rel=0.05)

    def test_additive_deterministic(self):
        a, b = gen_additive(50, 2, seed=9), gen_additive(50, 2, seed=9)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.t, b.t)

    def test_additive_bad_args(self):
        with pytest.raises(UsageError):
            gen_additive(0, 2)
        with pytest.raises(UsageError):
            gen_additive(10, 2, components=("cubic",))


class TestCsv:
    def test_basic(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b,t\n1,2,3\n4,5,6\n"), "t")
        assert len(ds) == 2 and ds.feature_names == ("a", "b")
        np.testing.assert_array_equal(ds.t, [3, 6])

    def test_missing_target(self, tmp_path):
        with pytest.raises(IngestionError, match="a, b, t"):
            load_csv(write(tmp_path, "a,b,t\n1,2,3\n"), "y")

    def test_nan_row_rejected(self, tmp_path):
        with pytest.warns(UserWarning, match="1 row"):
            ds = load_csv(write(tmp_path, "a,t\n1,2\nNaN,3\n4,5\n"), "t")
        assert len(ds) == 2 and ds.rejected_lines == (3,)

    def test_ragged_and_text(self, tmp_path):
        with pytest.raises(IngestionError) as info:
            load_csv(write(tmp_path, "a,t\n1,2\n3\nx,4\n"), "t")
        assert info.value.lines == [3, 4]

    def test_roundtrip(self, tmp_path):
        ds = gen_additive(20, 2, seed=0)
        back = load_csv(write(tmp_path, ds.to_csv()), "t")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.t, ds.t)


class TestNormalize:
    def test_minmax(self):
        ds, tf = normalize(Dataset(np.array([[0.0], [5.0], [10.0]]), [1, 2, 3]))
        np.testing.assert_allclose(ds.X[:, 0], [-1, 0, 1])

    @pytest.mark.parametrize("mode", ["minmax_to_grid", "zscore"])
    def test_inverse(self, mode):
        raw = gen_additive(100, 3, seed=2)
        ds, tf = normalize(raw, mode)
        assert np.max(np.abs(denormalize(ds).X - raw.X)) <= 1e-12
        back = FeatureTransform.from_dict(tf.to_dict())
        np.testing.assert_array_equal(back.apply(raw.X), ds.X)

    def test_constant_column(self):
        X = np.array([[1.0, 3.0], [2.0, 3.0]])
        with pytest.warns(UserWarning, match="constant"):
            ds, _ = normalize(Dataset(X, [0, 0]))
        np.testing.assert_array_equal(ds.X[:, 1], 0.0)

    def test_bad_mode(self):
        with pytest.raises(UsageError):
            normalize(gen_fig2(), "robust")


class TestMetrics:
    def test_examples(self):
        m = metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
        assert m["rmse"] == 0 and m["pearson"] == pytest.approx(1.0)
        assert metrics([-1.0, -2.0, 5.0], [1.0, 2.0, -5.0])["pearson"] == pytest.approx(-1.0)
        assert metrics([0.0, 0.0], [0.0, 2.0])["rmse"] == pytest.approx(math.sqrt(2))

    def test_zero_variance(self):
        assert metrics([1.0, 1.0], [0.0, 2.0])["pearson"] is None

    def test_mismatch(self):
        with pytest.raises(UsageError):
            metrics([1.0], [1.0, 2.0])


class TestSplit:
    def test_random(self):
        (tr, te), = split(10, RandomSplit(0.8, seed=0))
        assert len(tr) == 8 and len(te) == 2
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(10))

    def test_kfold(self):
        folds = split(9, KFold(3, seed=0))
        assert [len(te) for _, te in folds] == [3, 3, 3]
        assert sorted(np.concatenate([te for _, te in folds]).tolist()) == list(range(9))

    def test_same_seed(self):
        a, b = split(30, KFold(3, seed=5)), split(30, KFold(3, seed=5))
        for (ta, ea), (tb, eb) in zip(a, b):
            np.testing.assert_array_equal(ea, eb)

    def test_errors(self):
        with pytest.raises(UsageError):
            split(2, KFold(3))
        with pytest.raises(UsageError):
            split(10, RandomSplit(1.0))
