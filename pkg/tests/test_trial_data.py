import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, ORCHID_COVARIATES
from winstats.trial_data import (
    DataError,
    TrialDataset,
    load_csv,
    parse_levels,
    recode_direction,
    validate,
    write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_small_csv(tmp_path):
    p = _write(tmp_path, "y,z,age\n1,1,0.5\n3,0,1.5\n2,1,-0.2\n2,0,0.0\n")
    ds = load_csv(p, "y", "z", ["age"])
    assert ds.n == 4 and ds.n_levels == 3
    np.testing.assert_array_equal(ds.y, [1, 3, 2, 2])
    np.testing.assert_array_equal(ds.z, [1, 0, 1, 0])
    np.testing.assert_allclose(ds.x[:, 0], [0.5, 1.5, -0.2, 0.0])


def test_treatment_coded_one_two_rejected(tmp_path):
    p = _write(tmp_path, "y,z\n1,1\n3,2\n2,1\n2,2\n")
    with pytest.raises(DataError, match="non-binary treatment"):
        load_csv(p, "y", "z")


@pytest.mark.parametrize("body,msg", [
    ("y,z\n1,1\n3,0\n2,1\n,0\n", "missing value"),
    ("y,z\n1,1\n3,0\n2,1\nNA,0\n", "missing value"),
    ("y,z\n2,1\n2,0\n2,1\n2,0\n", "fewer than 2"),
])
def test_load_rejects_bad_content(tmp_path, body, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path, body), "y", "z")


def test_missing_column(tmp_path):
    p = _write(tmp_path, "y,z\n1,1\n3,0\n2,1\n2,0\n")
    with pytest.raises(DataError, match="missing column"):
        load_csv(p, "y", "z", ["age"])


def test_string_levels_and_declared_count(tmp_path):
    p = _write(tmp_path, "y,z\nbad,1\ngood,0\nok,1\nok,0\n")
    ds = load_csv(p, "y", "z", levels="bad<ok<good")
    np.testing.assert_array_equal(ds.y, [1, 3, 2, 2])
    assert ds.labels == ("bad", "ok", "good")
    with pytest.raises(DataError, match="not in declared levels"):
        load_csv(p, "y", "z", levels="bad<good")
    q = _write(tmp_path, "y,z\n1,1\n3,0\n1,1\n3,0\n", "e.csv")
    assert load_csv(q, "y", "z").n_levels == 2  # inferred: observed levels only
    declared = load_csv(q, "y", "z", n_levels=4)
    assert declared.n_levels == 4
    np.testing.assert_array_equal(declared.y, [1, 3, 1, 3])


def test_orchid_schema():
    ds = load_csv(DATA / "orchid_like.csv", "day14_status", "hcq", ORCHID_COVARIATES)
    assert ds.n == 479 and ds.n_levels == 7 and ds.p == 8


def test_parse_levels():
    assert parse_levels("a < b<c") == ["a", "b", "c"]
    for bad in ("a", "a<a", "a<<b"):
        with pytest.raises(DataError):
            parse_levels(bad)


def test_dataset_invariants():
    x = np.zeros((4, 0))
    with pytest.raises(DataError):
        TrialDataset(y=np.array([1, 2, 3]), z=np.array([1, 0, 1]), x=np.zeros((3, 0)), n_levels=3)
    with pytest.raises(DataError):
        TrialDataset(y=np.array([1, 2, 4, 1]), z=np.array([1, 0, 1, 0]), x=x, n_levels=3)
    with pytest.raises(DataError):
        TrialDataset(y=np.array([1, 2, 2, 1]), z=np.array([1, 1, 1, 1]), x=x, n_levels=2)
    ds = TrialDataset(y=np.array([1, 2, 2, 1]), z=np.array([1, 0, 1, 0]), x=x, n_levels=2)
    with pytest.raises(ValueError):
        ds.y[0] = 2  # immutable


def _ds(y, z, L=3):
    y = np.asarray(y)
    return TrialDataset(y=y, z=np.asarray(z), x=np.zeros((len(y), 0)), n_levels=L)


def test_recode_examples():
    ds = _ds([1, 3, 2, 2], [1, 0, 1, 0])
    low = recode_direction(ds, "lower_better")
    np.testing.assert_array_equal(low.y, [3, 1, 2, 2])
    assert low.reversed
    np.testing.assert_array_equal(recode_direction(ds, "higher_better").y, ds.y)
    twice = recode_direction(low, "lower_better")
    np.testing.assert_array_equal(twice.y, ds.y)
    assert not twice.reversed


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=4, max_size=30))
def test_recode_reverses_every_pairwise_order(ys):
    y = np.array(ys)
    z = np.arange(len(y)) % 2
    ds = _ds(y, z, L=6)
    r = recode_direction(ds, "lower_better").y
    np.testing.assert_array_equal(y[:, None] > y[None, :], r[:, None] < r[None, :])


def test_validate_examples():
    rep = validate(_ds([3, 2, 2, 1], [1, 1, 0, 0]))
    assert rep.arm_counts == (2, 2) and rep.ok
    assert rep.level_counts_by_arm.sum() == 4
    np.testing.assert_array_equal(rep.level_counts_by_arm.sum(axis=0), [2, 2])
    assert any("level 3" in w for w in rep.warnings)  # level 3 only among treated

    from types import SimpleNamespace
    all_treated = SimpleNamespace(y=np.array([1, 2, 3, 1]), z=np.ones(4, int), n_levels=3)
    rep = validate(all_treated)
    assert "control arm empty" in rep.errors and not rep.ok


def test_csv_roundtrip(tmp_path, rng):
    n = 25
    x = rng.normal(size=(n, 3))
    y = rng.integers(1, 5, n)
    y[:4] = [1, 2, 3, 4]
    z = np.arange(n) % 2
    ds = TrialDataset(y=y, z=z, x=x, n_levels=4, covariate_names=("a", "b", "c"))
    p = tmp_path / "rt.csv"
    write_csv(ds, p)
    back = load_csv(p, "y", "z", ["a", "b", "c"])
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.z, ds.z)
    np.testing.assert_array_equal(back.x, ds.x)
