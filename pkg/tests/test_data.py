import numpy as np
import pytest

from hsbnn.data import DataError, Standardizer, ingest, make_split, random_split, read_table, teacher_student, toy_sine


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_standardizer_uses_training_rows_only(rng):
    x = rng.normal(3.0, 2.0, size=(50, 3))
    y = rng.normal(size=50)
    x[40:] += 100.0  # test rows far away must not leak into the statistics
    sp = make_split(x, y, np.arange(40), np.arange(40, 50))
    np.testing.assert_allclose(sp.x_train.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(sp.x_train.std(0), 1.0)
    np.testing.assert_allclose(sp.stats.x_mean, x[:40].mean(0))
    assert sp.x_test.mean() > 10
    np.testing.assert_allclose(sp.stats.inverse_y(sp.y_test), y[40:])


def test_constant_columns_are_dropped(rng):
    x = np.column_stack([rng.normal(size=20), np.ones(20)])
    st = Standardizer.fit(x, rng.normal(size=20))
    assert st.transform_x(x).shape == (20, 1)
    assert Standardizer.from_dict(st.to_dict()).kept_columns.tolist() == [0]
    with pytest.raises(DataError):
        Standardizer.fit(x, np.ones(20))


def test_read_table_formats(tmp_path):
    t = read_table(_write(tmp_path, "a,b\n1,2\n3,4\n"), header=True)
    np.testing.assert_array_equal(t, [[1, 2], [3, 4]])
    t = read_table(_write(tmp_path, "# note\n1 2 3\n\n4\t5 6\n", "w.txt"))
    assert t.shape == (2, 3)
    t = read_table(_write(tmp_path, "1;2\n3;4\n", "s.txt"), delimiter=";")
    assert t.shape == (2, 2)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1,2\n3,x\n", "row 2, column 2"),
        ("1,2\n3,\n", "row 2, column 2"),
        ("1,2\n3,nan\n", "row 2, column 2"),
        ("1,2\n3,4,5\n", "row 2 has 3 columns"),
        ("# only a comment\n", "no data rows"),
        ("1\n2\n", "feature column"),
    ],
)
def test_read_table_errors_name_the_location(tmp_path, text, fragment):
    with pytest.raises(DataError, match=fragment):
        read_table(_write(tmp_path, text))


def test_ingest_split_is_seeded(tmp_path, rng):
    rows = "\n".join(f"{a},{b}" for a, b in rng.normal(size=(30, 2)))
    p = _write(tmp_path, rows + "\n")
    a = ingest(p, 0.8, np.random.default_rng(1))
    b = ingest(p, 0.8, np.random.default_rng(1))
    np.testing.assert_array_equal(a.x_train, b.x_train)
    assert len(a.y_train) == 24 and len(a.y_test) == 6
    c = ingest(p, train_idx=np.arange(10))
    assert len(c.y_test) == 20
    with pytest.raises(DataError):
        random_split(3, 0.0, rng)


def test_generators(rng):
    x, y = toy_sine(500, rng, 0.0, (-1.0, 2.0))
    assert x.min() >= -1 and x.max() <= 2
    np.testing.assert_allclose(y, np.sin(x[:, 0]))
    x1, y1 = teacher_student(5, np.random.default_rng(0), noise_std=0.0)
    x2, y2 = teacher_student(5, np.random.default_rng(0), noise_std=0.0)
    np.testing.assert_array_equal(y1, y2)
    assert x1.shape == (5, 2)
    with pytest.raises(ValueError):
        toy_sine(0, rng)
