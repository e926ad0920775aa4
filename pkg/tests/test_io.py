import numpy as np
import pytest

from conftest import make_dataset
from cmidebias.errors import DataWarning, MissingColumn, NonNumericFeature, RatingOutOfRange, ShapeMismatch
from cmidebias.io import load_coat, load_coat_full, load_csv, load_dataset, read_sidecar, save_csv, write_coat_dir
from cmidebias.perturbation import discretize
from cmidebias.synthetic import coat_like_ratings

SCHEMA = {"user": "u", "item": "i", "x_r": ["f1", "f2"], "x_nr": "bias", "exposure": "e", "click": "c"}


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def three_rows(tmp_path):
    return write(tmp_path / "in.csv", "u,i,f1,f2,bias,e,c\n"
                                      "1,10,0.1,-2.5,0.30000000000000004,1,1\n"
                                      "2,11,1e-300,3.141592653589793,0.7,1,0\n"
                                      "3,12,-0.0,123456.789,0.2,0,0\n")


def test_three_row_round_trip(tmp_path, three_rows):
    ds = load_csv(three_rows, SCHEMA)
    assert len(ds) == 3
    assert ds.x_nr[0] == 0.30000000000000004 and ds.x_r[1, 0] == 1e-300
    out = tmp_path / "out.csv"
    save_csv(ds, out)
    back = load_dataset(out)
    assert back.equals(ds)
    np.testing.assert_array_equal(back.x_r.view(np.int64), ds.x_r.view(np.int64))  # bit-identical, signed zero too
    save_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()


def test_missing_exposure_defaults_to_exposed(tmp_path):
    p = write(tmp_path / "a.csv", "u,i,f1,f2,bias,c\n1,1,0,0,0.5,1\n2,2,1,1,0.2,0\n")
    schema = {k: v for k, v in SCHEMA.items() if k != "exposure"}
    with pytest.warns(DataWarning):
        ds = load_csv(p, schema)
    assert ds.exposure.tolist() == [1, 1]


def test_categorical_bias_attribute_sets_k(tmp_path):
    lines = ["u,i,f1,f2,bias,e,c"] + [f"{j},{j},0,{j},{'abc'[j % 3]},1,{j % 2}" for j in range(9)]
    ds = load_csv(write(tmp_path / "b.csv", "\n".join(lines) + "\n"), SCHEMA)
    assert ds.x_nr_kind == "categorical"
    assert discretize(ds).k == 3


def test_categorical_features_are_one_hot(tmp_path):
    p = write(tmp_path / "c.csv", "u,i,f1,f2,bias,e,c\n1,1,red,0,0.5,1,1\n2,2,blue,1,0.2,1,0\n3,3,red,2,0.1,1,0\n")
    ds = load_csv(p, {**SCHEMA, "categorical": ["f1"]})
    assert list(ds.feature_names) == ["f1=blue", "f1=red", "f2"]
    np.testing.assert_array_equal(ds.x_r[:, :2], [[0, 1], [1, 0], [0, 1]])


def test_missing_column(three_rows):
    with pytest.raises(MissingColumn):
        load_csv(three_rows, {**SCHEMA, "x_r": ["f1", "f9"]})


def test_non_numeric_feature(tmp_path):
    p = write(tmp_path / "d.csv", "u,i,f1,f2,bias,e,c\n1,1,abc,0,0.5,1,1\n")
    with pytest.raises(NonNumericFeature):
        load_csv(p, SCHEMA)


def test_native_round_trip_keeps_metadata_and_origin(tmp_path):
    ds = make_dataset(12, continuous=False)
    ds = ds.replace(origin=np.array(["logged"] * 6 + ["clean"] * 6, dtype=object))
    path = tmp_path / "ds.csv"
    save_csv(ds, path, metadata={"seed": 4})
    back = load_dataset(path)
    assert back.equals(ds)
    assert list(back.origin) == list(ds.origin)
    assert read_sidecar(path)["metadata"] == {"seed": 4}


# --- Coat layout ------------------------------------------------------------------------


@pytest.fixture
def coat_dir(tmp_path):
    m = coat_like_ratings(seed=3, n_users=20, n_items=25, train_per_user=5, test_per_user=3)
    write_coat_dir(tmp_path / "coat", m.train, m.test, m.user_features, m.item_features, m.user_names, m.item_names)
    return tmp_path / "coat", m


def test_coat_loader(coat_dir):
    path, m = coat_dir
    data = load_coat_full(path, shape=(20, 25))
    train, test = data.train, data.test
    assert len(train) == 100 and len(test) == 60
    assert train.split == "train" and test.split == "benchmark"
    assert train.x_r.shape[1] == 14 + 33
    u, i = train.user_id, train.item_id
    np.testing.assert_array_equal(train.click, (m.train[u, i] >= 4).astype(int))
    np.testing.assert_array_equal(train.x_nr, data.propensity.propensity(m.train[u, i]))
    assert np.all(train.exposure == 1)
    hist = np.array([np.sum(m.train == r) for r in range(1, 6)]) / 100
    assert hist.sum() == pytest.approx(1.0, abs=1e-12)
    assert data.propensity.observed_rate == pytest.approx(100 / 500)


def test_coat_click_rule():
    from cmidebias.io import CLICK_MIN_RATING

    assert CLICK_MIN_RATING == 4


def test_coat_shape_mismatch(coat_dir):
    with pytest.raises(ShapeMismatch):
        load_coat(coat_dir[0])  # the default expects the full 290 x 300 grid


def test_coat_rating_out_of_range(coat_dir):
    path, m = coat_dir
    bad = m.train.copy()
    bad[0, 0] = 7
    write_coat_dir(path, bad, m.test, m.user_features, m.item_features)
    with pytest.raises(RatingOutOfRange):
        load_coat(path, shape=(20, 25))


def test_coat_round_trip_through_native_format(coat_dir, tmp_path):
    train, _ = load_coat(coat_dir[0], shape=(20, 25))
    save_csv(train, tmp_path / "train.csv")
    assert load_dataset(tmp_path / "train.csv").equals(train)
