import numpy as np
import pytest

from conftest import naive_topk
from knnrobust.core import (
    BruteIndex,
    FpLabel,
    IndexSpec,
    QueryResult,
    build,
    label_fp,
    parse_spec,
    query,
)
from knnrobust.errors import ValidationError
from knnrobust.vecdata import VectorSet, exact_ground_truth, make_synthetic


class TestIndexSpec:
    def test_valid_specs(self):
        IndexSpec("brute")
        IndexSpec("balltree", {"leaf_size": 8})
        IndexSpec("balltree", {"leaf_size": 8, "max_nodes": 4})
        IndexSpec("kdforest", {"num_trees": 2, "max_checks": 10, "seed": 0})

    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="unknown index kind"):
            IndexSpec("hnsw")

    def test_param_key_checks(self):
        with pytest.raises(ValidationError, match="missing"):
            IndexSpec("balltree")
        with pytest.raises(ValidationError, match="unknown params"):
            IndexSpec("brute", {"leaf_size": 3})

    def test_param_value_checks(self):
        with pytest.raises(ValidationError, match=">= 1"):
            IndexSpec("balltree", {"leaf_size": 0})
        with pytest.raises(ValidationError, match="integer"):
            IndexSpec("balltree", {"leaf_size": 2.5})
        with pytest.raises(ValidationError, match="integer"):
            IndexSpec("balltree", {"leaf_size": True})

    def test_label_and_parse(self):
        spec = parse_spec("kdforest:num_trees=4,max_checks=100")
        assert spec.kind == "kdforest"
        assert spec.params == {"num_trees": 4, "max_checks": 100}
        assert spec.label() == "kdforest(max_checks=100,num_trees=4)"
        assert parse_spec("brute").label() == "brute"

    def test_parse_errors(self):
        with pytest.raises(ValidationError):
            parse_spec("balltree:leaf_size")
        with pytest.raises(ValidationError):
            parse_spec("balltree:leaf_size=big")


class TestQueryResult:
    def test_invariants(self):
        QueryResult(np.array([3, 1]), np.array([0.5, 0.7]))
        with pytest.raises(ValidationError, match="non-decreasing"):
            QueryResult(np.array([3, 1]), np.array([0.7, 0.5]))
        with pytest.raises(ValidationError, match="distinct"):
            QueryResult(np.array([3, 3]), np.array([0.5, 0.7]))
        with pytest.raises(ValidationError):
            QueryResult(np.array([1, 2]), np.array([0.5]))


class TestLabelFp:
    def test_identical_results(self):
        truth = np.array([1.0, 2.0, 3.0])
        res = QueryResult(np.array([4, 5, 6]), truth.copy())
        label = label_fp(res, truth)
        assert label.recall == 1.0 and not label.is_fp

    def test_nine_of_ten(self):
        truth = np.linspace(1, 10, 10)
        dists = truth.copy()
        dists[-1] = 10.0 * 1.2  # beyond the relaxed bound at epsilon=0.1
        res = QueryResult(np.arange(10), dists)
        label = label_fp(res, truth, epsilon=0.1)
        assert label.recall == pytest.approx(0.9)
        assert label.is_fp

    def test_epsilon_relaxation(self):
        truth = np.array([1.0, 2.0])
        res = QueryResult(np.array([0, 1]), np.array([1.0, 2.2]))
        assert label_fp(res, truth, epsilon=0.0).is_fp
        assert not label_fp(res, truth, epsilon=0.1).is_fp

    def test_permutation_invariant(self):
        truth = np.array([1.0, 2.0, 3.0])
        dists = np.array([0.5, 2.5, 3.5])
        a = label_fp(QueryResult(np.array([1, 2, 3]), dists), truth)
        b = label_fp(QueryResult(np.array([3, 2, 1]), dists), truth)
        assert a.recall == b.recall and a.is_fp == b.is_fp

    def test_set_logic_oracle(self):
        rng = np.random.default_rng(77)
        base = VectorSet(rng.normal(0, 1, (200, 6)).astype(np.float32))
        queries = rng.normal(0, 1, (30, 6)).astype(np.float32)
        gt = exact_ground_truth(base, VectorSet(queries), 8)
        subject = build(IndexSpec("kdforest", {"num_trees": 1, "max_checks": 8, "seed": 2}), base)
        for i in range(queries.shape[0]):
            res = subject.query(queries[i], 8)
            label = label_fp(res, gt.dists[i], epsilon=0.0, query_id=i)
            naive = sum(1 for d in res.dists if d <= gt.dists[i, -1]) / 8
            assert label.recall == pytest.approx(naive)
            assert label.is_fp == (naive < 1.0)

    def test_length_mismatch(self):
        res = QueryResult(np.array([0, 1]), np.array([1.0, 2.0]))
        with pytest.raises(ValidationError, match="length"):
            label_fp(res, np.array([1.0, 2.0, 3.0]))

    def test_invariant_is_fp_iff_recall_below_one(self):
        assert FpLabel(0, True, 0.5).is_fp
        truth = np.array([1.0])
        exact = label_fp(QueryResult(np.array([0]), np.array([1.0])), truth)
        assert exact.recall == 1.0 and not exact.is_fp


class TestBuildAndQuery:
    def test_brute_matches_ground_truth(self):
        base = make_synthetic(100, 4, 3, 1.0, seed=6)
        queries = VectorSet(np.random.default_rng(1).normal(0, 3, (20, 4)).astype(np.float32))
        gt = exact_ground_truth(base, queries, 7)
        index = build(IndexSpec("brute"), base)
        for i in range(queries.n):
            res = query(index, queries.data[i], 7)
            assert np.array_equal(res.ids, gt.ids[i])
            assert np.array_equal(res.dists, gt.dists[i])

    def test_brute_self_query(self):
        base = make_synthetic(50, 3, 2, 1.0, seed=2)
        res = build(IndexSpec("brute"), base).query(base.data[13], 1)
        assert res.ids[0] == 13 and res.dists[0] == 0.0

    def test_brute_vs_naive_scan(self):
        rng = np.random.default_rng(40)
        base = VectorSet(rng.normal(0, 1, (100, 4)).astype(np.float32))
        index = BruteIndex(base)
        for q in rng.normal(0, 1, (10, 4)).astype(np.float32):
            res = index.query(q, 6)
            ids, dists = naive_topk(base.data, base.ids, q, 6)
            assert np.array_equal(res.ids, ids)

    def test_balltree_leaf_size_one_exact(self):
        base = make_synthetic(50, 4, 2, 1.0, seed=8)
        tree = build(IndexSpec("balltree", {"leaf_size": 1}), base)
        brute = build(IndexSpec("brute"), base)
        queries = np.random.default_rng(3).normal(0, 4, (15, 4)).astype(np.float32)
        for q in queries:
            assert np.array_equal(tree.query(q, 5).ids, brute.query(q, 5).ids)

    def test_kdforest_invalid_trees(self):
        base = make_synthetic(20, 3, 2, 1.0, seed=0)
        with pytest.raises(ValidationError):
            build(IndexSpec("kdforest", {"num_trees": 0, "max_checks": 5}), base)

    def test_kdforest_exhaustive_recall_one(self):
        base = make_synthetic(80, 5, 3, 1.0, seed=10)
        queries = VectorSet(np.random.default_rng(5).normal(0, 3, (15, 5)).astype(np.float32))
        gt = exact_ground_truth(base, queries, 6)
        index = build(IndexSpec("kdforest", {"num_trees": 3, "max_checks": base.n, "seed": 1}), base)
        for i in range(queries.n):
            res = index.query(queries.data[i], 6)
            assert label_fp(res, gt.dists[i]).recall == 1.0

    def test_build_time_recorded(self):
        base = make_synthetic(200, 6, 3, 1.0, seed=1)
        index = build(IndexSpec("balltree", {"leaf_size": 16}), base)
        assert index.build_seconds >= 0.0

    def test_kdforest_recall_monotone_in_max_checks(self):
        base = make_synthetic(400, 8, 5, 1.0, seed=14)
        queries = VectorSet(np.random.default_rng(7).normal(0, 5, (60, 8)).astype(np.float32))
        gt = exact_ground_truth(base, queries, 1)
        recalls = []
        for mc in (1, base.n // 4, base.n):
            index = build(IndexSpec("kdforest", {"num_trees": 3, "max_checks": mc, "seed": 4}), base)
            rec = [label_fp(index.query(queries.data[i], 1), gt.dists[i]).recall
                   for i in range(queries.n)]
            recalls.append(np.mean(rec))
        assert recalls[0] <= recalls[1] <= recalls[2]
        assert recalls[2] == 1.0

    def test_query_dimension_mismatch(self):
        base = make_synthetic(20, 3, 2, 1.0, seed=0)
        index = build(IndexSpec("brute"), base)
        with pytest.raises(ValidationError, match="dimension"):
            index.query(np.zeros(4), 2)
