import csv

import numpy as np
import pytest

import precise.autograd as ag
from precise.autograd import ShapeError, Tensor
from precise.data import LabeledDataset, gen_synthetic
from precise.explain import (class_average_distances, distance_report, export_prototypes,
                             is_row_diagonally_dominant, prototype_coverage, write_class_average_csv)
from precise.model import ArchSpec, encode, forward, init_model
from precise.pgm import read_pgm

from . import oracles


@pytest.fixture
def model8():
    ds = gen_synthetic([6, 4], side=8, seed=0)
    return init_model(ArchSpec((8, 8), (12,), 3), 2, 2, seed=3, init_images=ds.images, init_labels=ds.labels,
                      norm=ds.stats(), dtype=np.float64)


def test_export_four_files_in_range_and_deterministic(model8, tmp_path):
    paths = export_prototypes(model8, tmp_path / "a")
    names = sorted(p.split("/")[-1] for p in paths)
    assert names == ["proto_0_0.pgm", "proto_0_1.pgm", "proto_1_2.pgm", "proto_1_3.pgm"]
    for p in paths:
        img = read_pgm(p)
        assert img.shape == (8, 8) and img.dtype == np.uint8
    again = export_prototypes(model8, tmp_path / "b")
    for p, q in zip(paths, again):
        assert open(p, "rb").read() == open(q, "rb").read()


def test_report_row_equals_classifier_input(model8):
    ds = gen_synthetic([3, 2], side=8, seed=5)
    rep = distance_report(model8, ds)
    out = forward(model8, Tensor(ds.flat()))
    assert rep.distances.tobytes() == out.distances.data.tobytes()
    assert rep.predicted.tolist() == np.argmax(out.probs.data, axis=1).tolist()
    assert rep.nearest.tolist() == np.argmin(rep.distances, axis=1).tolist()
    assert np.all(rep.distances >= 0)
    assert rep.names == [f"query_{i}" for i in range(5)]


def test_report_zero_column_for_coincident_prototype(model8):
    ds = gen_synthetic([1, 1], side=8, seed=2)
    with ag.no_grad():
        z = encode(model8, Tensor(ds.flat())).data
    model8.bank.prototypes.data[0] = z[0]
    assert distance_report(model8, ds).distances[0, 0] <= 1e-6


def test_report_shape_mismatch(model8):
    with pytest.raises(ShapeError):
        distance_report(model8, gen_synthetic([1, 1], side=9))


def test_report_csv(model8, tmp_path):
    ds = gen_synthetic([2, 1], side=8)
    rep = distance_report(model8, ds, names=["a", "b", "c"])
    rep.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0][:4] == ["image", "pred", "proto_0_class", "proto_0_dist"] and len(rows[0]) == 2 + 2 * 4
    assert rows[1][0] == "a" and float(rows[1][3]) == rep.distances[0, 0]
    assert [rows[1][2 + 2 * k] for k in range(4)] == ["0", "0", "1", "1"]


def test_class_average_oracle(model8):
    ds = gen_synthetic([4, 3], side=8, seed=7)
    mat = class_average_distances(model8, ds)
    D = distance_report(model8, ds).distances.tolist()
    ref = oracles.class_average(D, ds.labels.tolist(), 2, 2)
    np.testing.assert_allclose(mat, ref, rtol=0, atol=1e-12)


def test_class_average_single_image_and_absent_class(model8, tmp_path):
    ds = LabeledDataset(gen_synthetic([1, 1], side=8).images[:1], [0], 2)
    mat = class_average_distances(model8, ds)
    row = distance_report(model8, ds).distances[0]
    np.testing.assert_allclose(mat[0], [row[:2].mean(), row[2:].mean()], rtol=0, atol=1e-15)
    assert np.all(np.isnan(mat[1]))
    write_class_average_csv(mat, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["data_class", "proto_class_0", "proto_class_1"] and len(rows) == 2


def test_diagonal_dominance_helper():
    assert is_row_diagonally_dominant(np.array([[2.536, 5.171], [7.932, 3.499]]))
    assert not is_row_diagonally_dominant(np.array([[1.0, 1.0], [3.0, 2.0]]))
    assert is_row_diagonally_dominant(np.array([[1.0, 2.0], [np.nan, np.nan]]))


def test_prototype_coverage(model8):
    ds = gen_synthetic([6, 4], side=8, seed=0)
    with ag.no_grad():
        z = encode(model8, Tensor(ds.flat())).data
    model8.bank.prototypes.data[:] = z[[0, 1, 6, 7]]
    assert prototype_coverage(model8, ds) == [True, True]
    model8.bank.prototypes.data[:] = z[[0, 1, 2, 3]]
    assert prototype_coverage(model8, ds) == [True, False]
