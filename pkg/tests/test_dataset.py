from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softhybrid import dataset
from softhybrid.dataset import Dataset, DatasetFormatError, excite, load, save, split
from softhybrid.plant import nominal_plant

NOM = nominal_plant()


@pytest.fixture(scope="module")
def small():
    return excite(NOM, 500, 0.1, seed=2)


def test_record_count():
    assert len(excite(NOM, 20000, 0.1, seed=0)) == 20000


def test_frozen_walk_stays_home():
    ds = excite(NOM, 300, 0.0, seed=1)
    assert np.all(ds.commands == 0)
    assert np.all(np.linalg.norm(ds.positions, axis=1) <= 3 * NOM.noise_std * np.sqrt(2))


@pytest.mark.parametrize("delta", [0.05, 0.1, 0.3])
def test_steps_bounded(delta):
    ds = excite(NOM, 2000, delta, seed=3)
    assert np.all(np.abs(np.diff(ds.commands, axis=0)) <= delta + 1e-12)
    assert np.all(np.abs(ds.commands[0]) <= delta)
    assert np.all(np.abs(ds.commands) <= 1.0)


def test_walk_covers_the_box():
    ds = excite(NOM, 20000, 0.1, seed=0)
    assert np.all(ds.commands.min(axis=0) < -0.95) and np.all(ds.commands.max(axis=0) > 0.95)


def test_deterministic(small):
    assert excite(NOM, 500, 0.1, seed=2) == small
    assert excite(NOM, 500, 0.1, seed=3) != small


def test_positions_bounded():
    ds = excite(replace(NOM, noise_std=0.0), 5000, 0.2, seed=5)
    assert np.all(np.abs(ds.positions) <= NOM.bound())


@pytest.mark.parametrize("n,delta", [(99, 0.1), (1000, -0.1), (1000, 1.5)])
def test_bad_arguments(n, delta):
    with pytest.raises(ValueError):
        excite(NOM, n, delta)


def test_default_split_proportions():
    ds = Dataset(np.zeros((20000, 2)), np.zeros((20000, 2)))
    assert [hi - lo for lo, hi in ds.split] == [14000, 2000, 4000]


@pytest.mark.parametrize("fractions", [(1.0, 0.0, 0.0), (0.7, 0.2, 0.2), (0.5, 0.5), (0.8, -0.1, 0.3)])
def test_bad_fractions(small, fractions):
    with pytest.raises(ValueError):
        split(small, fractions)


@given(st.integers(100, 3000), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_split_partitions_in_order(n, a, b):
    f = (a, b, 1.0)
    total = sum(f)
    f = (a / total, b / total, 1.0 - a / total - b / total)
    ds = Dataset(np.arange(2 * n, dtype=float).reshape(n, 2), np.zeros((n, 2)))
    try:
        ds = split(ds, f)
    except ValueError:
        return  # a part would round to zero records
    parts = [ds.part(name)[0] for name in ("train", "val", "test")]
    assert all(len(p) >= 1 for p in parts)
    assert np.array_equal(np.concatenate(parts), ds.commands)


def test_round_trip(tmp_path, small):
    path = tmp_path / "d.csv"
    save(small, path)
    assert load(path) == small
    assert path.read_text().splitlines()[0] == "step,u1,u2,x,y"


def test_round_trip_custom_split(tmp_path, small):
    ds = split(small, (0.5, 0.25, 0.25))
    save(ds, tmp_path / "d.csv")
    assert load(tmp_path / "d.csv").split == ds.split


def test_one_dimensional_header(tmp_path):
    ds = Dataset(np.zeros((100, 1)), np.ones((100, 1)), plant_id="arm")
    save(ds, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "step,u1,q1"
    assert load(tmp_path / "a.csv") == ds


def test_bad_cell_names_line(tmp_path, small):
    path = tmp_path / "d.csv"
    save(small, path)
    lines = path.read_text().splitlines()
    lines[7] = lines[7].replace(lines[7].split(",")[2], "oops")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r"d\.csv:8:"):
        load(path)


def test_short_row_names_line(tmp_path, small):
    path = tmp_path / "d.csv"
    save(small, path)
    lines = path.read_text().splitlines()
    lines[3] = "2,0.1"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=r":4:"):
        load(path)


def test_record_count_checked(tmp_path, small):
    path = tmp_path / "d.csv"
    save(small, path)
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(DatasetFormatError):
        load(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load(tmp_path / "none.csv")


def test_file_size_regression(tmp_path):
    # measured once: 20000 records in repr() text take about 81 bytes per row
    ds = excite(NOM, 20000, 0.1, seed=0)
    save(ds, tmp_path / "big.csv")
    size = (tmp_path / "big.csv").stat().st_size
    assert 60 * 20000 <= size <= 100 * 20000


def test_immutable(small):
    with pytest.raises(ValueError):
        small.commands[0, 0] = 3.0


def test_sidecar_location():
    assert dataset.sidecar_path("x/data.csv").name == "data.json"
