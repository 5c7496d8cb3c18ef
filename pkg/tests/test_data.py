import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpsurv.data import (CovariatePath, DataError, Dataset, Subject, default_bounds, event_grid,
                         load_dataset, validate, write_dataset)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_constant_paths(tmp_path):
    f = _write(tmp_path / "s.csv", "id,time,status,y,z1\na,1.5,1,0.2,3\nb,2.0,0,-1,4\nc,0.5,1,1.1,5\n")
    ds = load_dataset(f)
    assert ds.n == 3 and ds.d == 1 and ds.q == 1 and ds.p == 0
    assert all(s.z.is_constant for s in ds.subjects)
    assert ds.tau == 2.0
    np.testing.assert_array_equal(ds.z0[:, 0], [3, 4, 5])


def test_step_semantics(tmp_path):
    s = _write(tmp_path / "s.csv", "id,time,status,y,z1\n1,4,1,0,1\n")
    c = _write(tmp_path / "c.csv", "id,start,z1\n1,2.0,5\n")
    ds = load_dataset(s, c)
    path = ds.subjects[0].z
    assert path.value(2.0)[0] == 1.0  # left-continuous at the breakpoint
    assert path.value(2.0 + 1e-12)[0] == 5.0
    assert path.value(3.9)[0] == 5.0
    assert path.value(0.0)[0] == 1.0


@pytest.mark.parametrize("row, msg", [
    ("1,1.0,2,0,1", "status must be 0 or 1"),
    ("1,0,1,0,1", "time must be positive"),
    ("1,abc,1,0,1", "non-numeric"),
    ("1,1.0,1,0", "expected 5 fields"),
])
def test_ingestion_errors_name_the_row(tmp_path, row, msg):
    f = _write(tmp_path / "s.csv", "id,time,status,y,z1\n" + row + "\n")
    with pytest.raises(DataError, match=msg) as exc:
        load_dataset(f)
    assert "row 2" in str(exc.value)


def test_missing_column_and_duplicate_start(tmp_path):
    with pytest.raises(DataError, match="missing column 'y'"):
        load_dataset(_write(tmp_path / "a.csv", "id,time,status,z1\n1,1,1,0\n"))
    s = _write(tmp_path / "s.csv", "id,time,status,y,z1\n1,4,1,0,1\n")
    c = _write(tmp_path / "c.csv", "id,start,z1\n1,2,5\n1,2,6\n")
    with pytest.raises(DataError, match=r"row 3: duplicate \(id, start\)"):
        load_dataset(s, c)


def test_roundtrip_with_time_varying_paths(tmp_path):
    paths = [CovariatePath([0.0, 1.0], [[0.1, 1.0], [0.2, -1.0]]),
             CovariatePath.constant([np.pi, 2.0 / 3.0])]
    subs = [Subject(2.5, 1, 0.3, paths[0], "x"), Subject(1.25, 0, -0.7, paths[1], "y")]
    ds = Dataset(tuple(subs), 3.0, 1, 1)
    write_dataset(ds, tmp_path / "s.csv", tmp_path / "c.csv")
    back = load_dataset(tmp_path / "s.csv", tmp_path / "c.csv", q=1, tau=3.0)
    assert back == ds


@given(st.lists(st.tuples(st.floats(0.01, 10), st.integers(0, 1), st.floats(-5, 5),
                          st.floats(-5, 5)), min_size=1, max_size=12))
@settings(max_examples=40, deadline=None)
def test_roundtrip_property(tmp_path_factory, rows):
    t, s, y, z = map(np.array, zip(*rows))
    ds = Dataset.from_arrays(t, s, y, z, tau=10.0)
    d = tmp_path_factory.mktemp("rt")
    write_dataset(ds, d / "s.csv")
    assert load_dataset(d / "s.csv", tau=10.0) == ds


def test_caglad_at_every_breakpoint():
    bp = np.array([0.0, 0.5, 1.0, 2.0])
    vals = np.arange(4.0)[:, None]
    path = CovariatePath(bp, vals)
    for k in range(1, 4):
        assert path.value(bp[k])[0] == vals[k - 1, 0]
    assert path.total_variation(10.0) == 3.0
    assert path.total_variation(1.0) == 1.0


def test_path_validation():
    with pytest.raises(DataError):
        CovariatePath([0.5], [[1.0]])
    with pytest.raises(DataError):
        CovariatePath([0.0, 1.0, 1.0], [[1.0], [2.0], [3.0]])


def test_event_grid():
    ds = Dataset.from_arrays([2, 1, 2, 3], [1, 1, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0])
    np.testing.assert_array_equal(event_grid(ds), [1.0, 2.0])
    with pytest.raises(ValueError):
        event_grid(Dataset.from_arrays([1.0], [0], [0.0], [0.0]))


def test_validate_warnings():
    ds = Dataset.from_arrays([1.0, 2.0], [0, 0], [1.0, 2.0], [0.0, 0.0])
    rep = validate(ds, 0.0, 1.5)
    assert "no observations below a" in rep.warnings
    assert "no uncensored events; A is unidentifiable" in rep.warnings
    assert not rep.ok
    with pytest.raises(ValueError):
        validate(ds, 1.0, 1.0)


def test_validate_simulated_is_clean():
    from cpsurv.sim import Scenario, simulate_dataset

    ds = simulate_dataset(Scenario(n=300), np.random.default_rng(0))
    a, b = default_bounds(ds.y)
    rep = validate(ds, a, b)
    assert rep.warnings == []
    assert np.all(rep.total_variation == 0)


def test_default_bounds_inner_80():
    a, b = default_bounds(np.arange(101.0))
    assert (a, b) == (pytest.approx(10.0), pytest.approx(90.0))


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset.from_arrays([1.0, 5.0], [1, 1], [0, 0], [0, 0], tau=2.0)
    with pytest.raises(DataError):
        Dataset.from_arrays([1.0], [1], [0], [[0.0, 1.0]], q=3)
