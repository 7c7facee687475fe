import struct

import numpy as np
import pytest

from conftest import naive_topk
from knnrobust.errors import FormatError, ValidationError
from knnrobust.vecdata import (
    GroundTruth,
    VectorSet,
    exact_ground_truth,
    load_ground_truth,
    load_vectors,
    make_synthetic,
    save_ground_truth,
    save_vectors,
    split_train_query,
    synthetic_centers,
)


class TestVectorSet:
    def test_defaults_dense_ids(self):
        vs = VectorSet(np.zeros((3, 2), dtype=np.float32))
        assert vs.n == 3 and vs.d == 2
        assert np.array_equal(vs.ids, [0, 1, 2])

    def test_float32_preserved_other_dtypes_promoted(self):
        assert VectorSet(np.ones((2, 2), dtype=np.float32)).data.dtype == np.float32
        assert VectorSet(np.ones((2, 2), dtype=np.float64)).data.dtype == np.float64
        assert VectorSet(np.ones((2, 2), dtype=np.int32)).data.dtype == np.float64

    def test_non_finite_reports_row(self):
        data = np.zeros((4, 2), dtype=np.float32)
        data[2, 1] = np.nan
        with pytest.raises(ValidationError, match="row 2"):
            VectorSet(data)

    def test_bad_shapes_and_ids(self):
        with pytest.raises(ValidationError):
            VectorSet(np.zeros((0, 3), dtype=np.float32))
        with pytest.raises(ValidationError):
            VectorSet(np.zeros(4, dtype=np.float32))
        with pytest.raises(ValidationError, match="ids"):
            VectorSet(np.zeros((3, 1), dtype=np.float32), ids=np.array([0, 1, 3]))
        with pytest.raises(ValidationError, match="ids"):
            VectorSet(np.zeros((3, 1), dtype=np.float32), ids=np.array([0, 1, 1]))

    def test_data_read_only(self):
        vs = VectorSet(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            vs.data[0, 0] = 1.0


class TestBinaryFormat:
    def test_round_trip_identity(self, tmp_path):
        vs = make_synthetic(50, 6, 3, 1.0, seed=4)
        path = tmp_path / "a.vds"
        save_vectors(vs, path)
        back = load_vectors(path)
        assert np.array_equal(back.data, vs.data)
        assert back.data.dtype == np.float32
        assert np.array_equal(back.ids, vs.ids)

    def test_direct_decode(self, tmp_path):
        path = tmp_path / "raw.vds"
        payload = b"VDS1" + struct.pack("<II", 3, 2) + np.arange(6, dtype="<f4").tobytes()
        path.write_bytes(payload)
        vs = load_vectors(path)
        assert (vs.n, vs.d) == (3, 2)
        assert np.array_equal(vs.data, np.arange(6, dtype=np.float32).reshape(3, 2))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vds"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_vectors(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.vds"
        path.write_bytes(b"VDS1" + struct.pack("<II", 3, 2) + b"\x00" * 8)
        with pytest.raises(FormatError, match="expected"):
            load_vectors(path)

    def test_non_finite_value_reports_row(self, tmp_path):
        data = np.zeros((3, 2), dtype="<f4")
        data[1, 0] = np.inf
        path = tmp_path / "inf.vds"
        path.write_bytes(b"VDS1" + struct.pack("<II", 3, 2) + data.tobytes())
        with pytest.raises(FormatError, match="row 1"):
            load_vectors(path)


class TestCsvFormat:
    def test_direct_decode(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("1.0,2.0\n3.0,4.0\n")
        vs = load_vectors(path, format="csv")
        assert (vs.n, vs.d) == (2, 2)
        assert np.array_equal(vs.data, np.array([[1, 2], [3, 4]], dtype=np.float32))

    def test_round_trip(self, tmp_path):
        vs = make_synthetic(20, 3, 2, 1.0, seed=9)
        path = tmp_path / "r.csv"
        save_vectors(vs, path, format="csv")
        back = load_vectors(path, format="csv")
        assert np.array_equal(back.data, vs.data)

    def test_width_mismatch_reports_row(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(FormatError, match="row 1"):
            load_vectors(path, format="csv")

    def test_bad_value_reports_row(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("1.0,2.0\n3.0,oops\n")
        with pytest.raises(FormatError, match="row 1"):
            load_vectors(path, format="csv")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValidationError):
            save_vectors(make_synthetic(4, 2, 1, 1.0, seed=0), tmp_path / "x", format="hdf5")


class TestMakeSynthetic:
    def test_mean_near_center(self):
        vs = make_synthetic(100, 2, 1, 1.0, seed=7)
        center = synthetic_centers(2, 1, 1.0, seed=7)[0]
        bound = 4.0 / np.sqrt(100)
        assert np.all(np.abs(vs.data.mean(axis=0) - center) < bound)

    def test_deterministic(self):
        a = make_synthetic(64, 5, 4, 0.5, seed=11)
        b = make_synthetic(64, 5, 4, 0.5, seed=11)
        assert np.array_equal(a.data, b.data)

    def test_preconditions(self):
        with pytest.raises(ValidationError):
            make_synthetic(10, 2, 0, 1.0, seed=1)
        with pytest.raises(ValidationError):
            make_synthetic(2, 2, 5, 1.0, seed=1)
        with pytest.raises(ValidationError):
            make_synthetic(10, 2, 2, 0.0, seed=1)


class TestExactGroundTruth:
    def test_hand_case(self):
        base = VectorSet(np.array([[0, 0], [1, 0], [5, 0]], dtype=np.float32))
        queries = VectorSet(np.array([[0.4, 0]], dtype=np.float32))
        gt = exact_ground_truth(base, queries, 2)
        assert np.array_equal(gt.ids[0], [0, 1])
        assert np.allclose(gt.dists[0], [0.4, 0.6], rtol=1e-6)

    def test_query_equals_base_point(self):
        base = make_synthetic(30, 4, 2, 1.0, seed=3)
        queries = VectorSet(base.data[7:8])
        gt = exact_ground_truth(base, queries, 1)
        assert gt.ids[0, 0] == 7
        assert gt.dists[0, 0] == 0.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(12)
        base = VectorSet(rng.normal(0, 1, (200, 8)).astype(np.float32))
        queries = VectorSet(rng.normal(0, 1, (25, 8)).astype(np.float32))
        gt = exact_ground_truth(base, queries, 10)
        for i in range(queries.n):
            ids, dists = naive_topk(base.data, base.ids, queries.data[i], 10)
            assert np.array_equal(gt.ids[i], ids)
            assert np.allclose(gt.dists[i], dists, rtol=1e-12)

    def test_duplicate_ties_break_by_smaller_id(self):
        row = np.array([1.0, 2.0], dtype=np.float32)
        base = VectorSet(np.stack([row + 5, row, row, row + 3]))
        gt = exact_ground_truth(base, VectorSet(row[None, :]), 3)
        assert np.array_equal(gt.ids[0], [1, 2, 3])

    def test_k_equals_n_returns_all(self):
        base = make_synthetic(17, 3, 2, 1.0, seed=5)
        gt = exact_ground_truth(base, VectorSet(base.data[:4]), base.n)
        for row in gt.ids:
            assert np.array_equal(np.sort(row), np.arange(base.n))

    def test_k_too_large(self):
        base = make_synthetic(5, 2, 1, 1.0, seed=0)
        with pytest.raises(ValidationError):
            exact_ground_truth(base, base, 6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError, match="dimension"):
            exact_ground_truth(make_synthetic(5, 2, 1, 1.0, seed=0),
                               make_synthetic(5, 3, 1, 1.0, seed=0), 2)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(31)
        base = VectorSet(rng.normal(0, 1, (60, 5)).astype(np.float32))
        queries = VectorSet(rng.normal(0, 1, (10, 5)).astype(np.float32))
        perm = rng.permutation(base.n)
        shuffled = VectorSet(base.data[perm], ids=base.ids[perm])
        a = exact_ground_truth(base, queries, 7)
        b = exact_ground_truth(shuffled, queries, 7)
        assert np.array_equal(a.ids, b.ids)
        assert np.array_equal(a.dists, b.dists)

    def test_threads_do_not_change_result(self):
        rng = np.random.default_rng(8)
        base = VectorSet(rng.normal(0, 1, (300, 6)).astype(np.float32))
        queries = VectorSet(rng.normal(0, 1, (40, 6)).astype(np.float32))
        a = exact_ground_truth(base, queries, 5, threads=1)
        b = exact_ground_truth(base, queries, 5, threads=4)
        assert np.array_equal(a.ids, b.ids)
        assert np.array_equal(a.dists, b.dists)

    def test_distance_consistency(self):
        base = make_synthetic(120, 6, 4, 1.0, seed=21)
        queries = VectorSet(np.random.default_rng(2).normal(0, 5, (15, 6)).astype(np.float32))
        gt = exact_ground_truth(base, queries, 8)
        assert (np.diff(gt.dists, axis=1) >= 0).all()
        for i in range(queries.n):
            for j in range(gt.k):
                d = np.sqrt(((base.data[gt.ids[i, j]].astype(np.float64)
                              - queries.data[i].astype(np.float64)) ** 2).sum())
                assert abs(d - gt.dists[i, j]) <= 1e-6 * max(d, 1e-30)


class TestGroundTruthType:
    def test_invariants_enforced(self):
        with pytest.raises(ValidationError, match="non-decreasing"):
            GroundTruth(2, np.array([[0, 1]]), np.array([[2.0, 1.0]]))
        with pytest.raises(ValidationError, match="distinct"):
            GroundTruth(2, np.array([[1, 1]]), np.array([[1.0, 2.0]]))
        with pytest.raises(ValidationError):
            GroundTruth(2, np.array([[0, 1]]), np.array([[-1.0, 2.0]]))

    def test_file_round_trip(self, tmp_path):
        base = make_synthetic(40, 4, 2, 1.0, seed=13)
        gt = exact_ground_truth(base, VectorSet(base.data[:6]), 5)
        path = tmp_path / "t.gtk"
        save_ground_truth(gt, path)
        back = load_ground_truth(path)
        assert np.array_equal(back.ids, gt.ids)
        assert np.array_equal(back.dists, gt.dists.astype(np.float32).astype(np.float64))

    def test_file_errors(self, tmp_path):
        path = tmp_path / "bad.gtk"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_ground_truth(path)
        path.write_bytes(b"GTK1" + struct.pack("<II", 4, 3) + b"\x00" * 4)
        with pytest.raises(FormatError, match="expected"):
            load_ground_truth(path)


class TestSplit:
    def test_partition(self):
        vs = make_synthetic(50, 3, 2, 1.0, seed=17)
        train, queries = split_train_query(vs, 10, seed=3)
        assert train.n == 40 and queries.n == 10
        combined = np.vstack([train.data, queries.data])
        assert np.array_equal(np.sort(combined, axis=0), np.sort(vs.data, axis=0))

    def test_deterministic(self):
        vs = make_synthetic(30, 2, 2, 1.0, seed=1)
        a = split_train_query(vs, 5, seed=9)[1]
        b = split_train_query(vs, 5, seed=9)[1]
        assert np.array_equal(a.data, b.data)

    def test_bounds(self):
        vs = make_synthetic(10, 2, 1, 1.0, seed=0)
        with pytest.raises(ValidationError):
            split_train_query(vs, 10, seed=0)
        with pytest.raises(ValidationError):
            split_train_query(vs, 0, seed=0)
