import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbinit.data import (TOY_NOISE_VARIANCE, generate_toy, load_csv, split_and_standardize,
                         toy_function, write_csv)
from vbinit.exceptions import EmptyDataset, ParseError
from vbinit.numkernel import make_rng


class TestToy:
    def test_noiseless_values(self):
        assert toy_function(0.0) == 0.0
        expected = 1 + np.sqrt(3) / 2 - np.sqrt(2) / 2
        assert toy_function(np.pi) == pytest.approx(expected, abs=1e-15)

    def test_noise_variance(self):
        x, y = generate_toy(10_000, seed=0, return_raw=True)
        x0, y0 = generate_toy(10_000, seed=0, noiseless=True, return_raw=True)
        np.testing.assert_array_equal(x, x0)
        assert np.var(y - y0) == pytest.approx(TOY_NOISE_VARIANCE, rel=0.1)
        assert x.min() >= -10 and x.max() <= 10

    def test_split_and_determinism(self):
        a = generate_toy(1000, seed=4)
        b = generate_toy(1000, seed=4)
        assert a.x_train.shape == (800, 1) and a.x_test.shape == (200, 1)
        np.testing.assert_array_equal(a.x_test, b.x_test)
        assert not np.array_equal(a.x_test, generate_toy(1000, seed=5).x_test)

    def test_training_split_is_standardized(self):
        d = generate_toy(500, seed=1)
        np.testing.assert_allclose(d.x_train.mean(), 0, atol=1e-12)
        np.testing.assert_allclose(d.y_train.std(), 1, atol=1e-12)
        np.testing.assert_allclose(d.unstandardize_y(d.y_train).std(), d.y_std[0], rtol=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            generate_toy(1)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 60), st.integers(0, 2 ** 32 - 1))
def test_permuting_test_rows_leaves_train_statistics(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = rng.normal(size=(n, 1))
    base = split_and_standardize(x, y, 0.25, make_rng(seed))
    test_idx = make_rng(seed).permutation(n)[:n - base.x_train.shape[0]]
    shuffled = rng.permutation(test_idx)
    x2, y2 = x.copy(), y.copy()
    x2[test_idx] = x[shuffled]
    y2[test_idx] = y[shuffled] * 100.0
    other = split_and_standardize(x2, y2, 0.25, make_rng(seed))
    np.testing.assert_array_equal(base.x_mean, other.x_mean)
    np.testing.assert_array_equal(base.x_std, other.x_std)
    np.testing.assert_array_equal(base.y_mean, other.y_mean)
    np.testing.assert_array_equal(base.y_std, other.y_std)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_two_rows(self, tmp_path):
        p = _write(tmp_path / "d.csv", "a,y\n1,2\n3,4\n")
        d = load_csv(p)
        assert d.x_train.shape == (1, 1) and d.x_test.shape == (1, 1)

    def test_default_split_is_ninety_ten(self, tmp_path):
        rng = np.random.default_rng(0)
        p = tmp_path / "d.csv"
        write_csv(p, rng.normal(size=(50, 2)), rng.normal(size=50))
        d = load_csv(p)
        assert d.x_train.shape == (45, 2) and d.y_test.shape == (5, 1)

    def test_non_numeric_cell_is_located(self, tmp_path):
        p = _write(tmp_path / "d.csv", "a,b,y\n1,2,3\n4,oops,6\n")
        with pytest.raises(ParseError) as info:
            load_csv(p)
        assert info.value.row == 3 and info.value.column == "b"
        assert "oops" in str(info.value) and "row 3" in str(info.value)

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(_write(tmp_path / "d.csv", "a,y\n1,2\n3\n"))

    def test_empty_files(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_csv(_write(tmp_path / "e.csv", ""))
        with pytest.raises(EmptyDataset):
            load_csv(_write(tmp_path / "h.csv", "a,y\n"))

    def test_class_column_becomes_one_hot(self, tmp_path):
        rows = "\n".join(f"{i * 0.1},{i % 3}" for i in range(30))
        d = load_csv(_write(tmp_path / "c.csv", "x,label\n" + rows + "\n"), "classification")
        assert d.y_train.shape[1] == 3
        assert set(np.unique(d.y_train)) == {0.0, 1.0}
        np.testing.assert_array_equal(d.y_std, np.ones(3))

    def test_bad_class_label(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_csv(_write(tmp_path / "c.csv", "x,label\n1,0\n2,1.5\n"), "classification")
        assert info.value.column == "label"

    def test_multiple_label_columns(self, tmp_path):
        p = tmp_path / "m.csv"
        write_csv(p, np.ones((10, 2)), np.arange(20.0).reshape(10, 2))
        d = load_csv(p, label_columns=2)
        assert d.x_train.shape[1] == 2 and d.y_train.shape[1] == 2
        with pytest.raises(ParseError):
            load_csv(p, label_columns=4)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(20, 2)), rng.normal(size=20)
        p = tmp_path / "r.csv"
        write_csv(p, x, y)
        d = load_csv(p, test_fraction=0.5)
        restored = np.sort(np.concatenate([d.unstandardize_y(d.y_train),
                                           d.unstandardize_y(d.y_test)])[:, 0])
        np.testing.assert_allclose(restored, np.sort(y), rtol=1e-12)
