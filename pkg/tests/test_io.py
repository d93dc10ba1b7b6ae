import struct

import numpy as np
import pytest

from rsrkit.data import Dataset
from rsrkit.errors import InvalidDataset
from rsrkit.generators import HaystackParams, gen_haystack
from rsrkit.io import load_truth, read_csv, read_dataset, save_truth, truth_path, write_csv, write_dataset


@pytest.fixture
def inst():
    return gen_haystack(HaystackParams(n1=20, n0=15, d=2, D=4, seed=8))


def test_binary_round_trip(tmp_path, inst):
    data, _ = inst
    p = tmp_path / "x.rsrd"
    write_dataset(p, data, epsilon=0.25)
    back, eps = read_dataset(p)
    assert np.array_equal(back.points, data.points)
    assert np.array_equal(back.labels, data.labels)
    assert eps == 0.25


def test_binary_layout(tmp_path):
    data = Dataset(np.array([[1.0, 3.0], [2.0, 4.0]]), np.array([True, False]))
    p = tmp_path / "tiny.rsrd"
    write_dataset(p, data)
    raw = p.read_bytes()
    assert raw[:4] == b"RSRD"
    assert struct.unpack_from("<IIII", raw, 4) == (1, 2, 2, 1)
    # column-major: point 0 then point 1
    assert struct.unpack_from("<4d", raw, 20) == (1.0, 2.0, 3.0, 4.0)
    assert raw[52:] == b"\x01\x00"


def test_unlabelled(tmp_path):
    data = Dataset(np.ones((3, 2)))
    p = tmp_path / "u.rsrd"
    write_dataset(p, data)
    back, eps = read_dataset(p)
    assert back.labels is None and eps is None


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-1],
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
    lambda b: b[:10],
])
def test_corrupt(tmp_path, inst, mutate):
    p = tmp_path / "c.rsrd"
    write_dataset(p, inst[0])
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(InvalidDataset):
        read_dataset(p)


def test_csv_round_trip(tmp_path, inst):
    data, _ = inst
    p = tmp_path / "x.csv"
    write_csv(p, data)
    assert p.read_text().splitlines()[0] == "x0,x1,x2,x3,label"
    back = read_csv(p)
    assert np.array_equal(back.points, data.points)
    assert np.array_equal(back.labels, data.labels)


def test_truth_sidecar(tmp_path, inst):
    _, truth = inst
    p = truth_path(tmp_path / "x.rsrd")
    assert p.name == "x.truth.json"
    save_truth(p, truth)
    back = load_truth(p)
    assert np.array_equal(back.basis, truth.basis)
    assert np.array_equal(back.labels, truth.labels)
