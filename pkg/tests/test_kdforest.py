import numpy as np
import pytest

from conftest import naive_topk
from knnrobust.errors import ValidationError
from knnrobust.kdforest import build_kdforest, query_kdforest
from knnrobust.vecdata import VectorSet, make_synthetic


def subset_of(tree, nid):
    return tree.perm[tree.start[nid]:tree.end[nid]]


class TestBuild:
    def test_top_dims_one_uses_max_variance_dim(self):
        rng = np.random.default_rng(3)
        base = VectorSet(rng.normal(0, 1, (300, 6)).astype(np.float32))
        forest = build_kdforest(base, num_trees=2, top_dims=1, seed=9)
        for tree in forest.trees:
            for nid in np.nonzero(tree.split_dim >= 0)[0]:
                pts = forest.data[subset_of(tree, nid)]
                variances = pts.var(axis=0)
                expected = int(np.argsort(-variances, kind="stable")[0])
                assert tree.split_dim[nid] == expected

    def test_split_dim_within_top_dims(self):
        rng = np.random.default_rng(4)
        base = VectorSet(rng.normal(0, 1, (300, 8)).astype(np.float32))
        forest = build_kdforest(base, num_trees=2, top_dims=3, seed=1)
        for tree in forest.trees:
            for nid in np.nonzero(tree.split_dim >= 0)[0]:
                pts = forest.data[subset_of(tree, nid)]
                top3 = set(np.argsort(-pts.var(axis=0), kind="stable")[:3].tolist())
                assert int(tree.split_dim[nid]) in top3

    def test_deterministic_for_seed(self):
        base = make_synthetic(200, 5, 4, 1.0, seed=6)
        a = build_kdforest(base, num_trees=4, top_dims=3, seed=42)
        b = build_kdforest(base, num_trees=4, top_dims=3, seed=42)
        for ta, tb in zip(a.trees, b.trees):
            assert np.array_equal(ta.split_dim, tb.split_dim)
            assert np.array_equal(ta.split_val, tb.split_val)
            assert np.array_equal(ta.perm, tb.perm)

    def test_each_tree_indexes_all_points(self):
        base = make_synthetic(150, 4, 3, 1.0, seed=8)
        forest = build_kdforest(base, num_trees=3, top_dims=2, seed=0)
        for tree in forest.trees:
            assert np.array_equal(np.sort(tree.perm), np.arange(base.n))
            leaves = np.nonzero(tree.split_dim < 0)[0]
            spans = sorted((int(tree.start[n]), int(tree.end[n])) for n in leaves)
            cursor = 0
            for lo, hi in spans:
                assert lo == cursor
                cursor = hi
            assert cursor == base.n

    def test_points_on_correct_side_of_every_ancestor(self):
        rng = np.random.default_rng(11)
        base = VectorSet(rng.normal(0, 1, (300, 5)).astype(np.float32))
        forest = build_kdforest(base, num_trees=2, top_dims=2, seed=5)
        for tree in forest.trees:
            stack = [(0, [])]  # node, list of (dim, val, is_left)
            while stack:
                nid, constraints = stack.pop()
                if tree.split_dim[nid] < 0:
                    pts = forest.data[subset_of(tree, nid)]
                    for dim, val, is_left in constraints:
                        side = pts[:, dim] <= val
                        assert side.all() if is_left else (~side).all()
                    continue
                dim, val = int(tree.split_dim[nid]), float(tree.split_val[nid])
                stack.append((int(tree.left[nid]), constraints + [(dim, val, True)]))
                stack.append((int(tree.right[nid]), constraints + [(dim, val, False)]))

    def test_duplicate_points_become_leaf(self):
        base = VectorSet(np.ones((50, 3), dtype=np.float32))
        forest = build_kdforest(base, num_trees=1, top_dims=1, seed=0, leaf_size=4)
        tree = forest.trees[0]
        assert tree.split_dim[0] == -1  # zero variance everywhere: oversized leaf

    def test_preconditions(self):
        base = make_synthetic(20, 3, 2, 1.0, seed=0)
        with pytest.raises(ValidationError):
            build_kdforest(base, num_trees=0, top_dims=1, seed=0)
        with pytest.raises(ValidationError):
            build_kdforest(base, num_trees=1, top_dims=0, seed=0)
        with pytest.raises(ValidationError):
            build_kdforest(base, num_trees=1, top_dims=4, seed=0)


class TestQuery:
    def test_exhaustive_equals_brute_oracle(self):
        rng = np.random.default_rng(19)
        base = VectorSet(rng.normal(0, 1, (300, 10)).astype(np.float32))
        forest = build_kdforest(base, num_trees=4, top_dims=5, seed=3)
        queries = np.vstack([base.data[:5], rng.normal(0, 1, (15, 10)).astype(np.float32)])
        for q in queries:
            res = query_kdforest(forest, q, 10, max_checks=base.n)
            ids, dists = naive_topk(base.data, base.ids, q, 10)
            assert np.array_equal(res.ids, ids)
            assert np.allclose(res.dists, dists, rtol=1e-12)

    def test_indexed_point_found_first(self):
        base = make_synthetic(200, 6, 4, 1.0, seed=14)
        forest = build_kdforest(base, num_trees=3, top_dims=3, seed=2)
        res = query_kdforest(forest, base.data[17], 1, max_checks=1)
        assert res.ids[0] == 17
        assert res.dists[0] == 0.0

    def test_recall_monotone_in_max_checks(self):
        base = make_synthetic(500, 8, 6, 1.0, seed=22)
        rng = np.random.default_rng(9)
        queries = rng.normal(0, 5, (100, 8)).astype(np.float32)
        forest = build_kdforest(base, num_trees=4, top_dims=4, seed=7)
        truth = [set(naive_topk(base.data, base.ids, q, 10)[0].tolist()) for q in queries]
        recalls = []
        for mc in (10, base.n // 10, base.n):
            hits = sum(len(set(query_kdforest(forest, q, 10, mc).ids.tolist()) & t)
                       for q, t in zip(queries, truth))
            recalls.append(hits / (len(queries) * 10))
        assert recalls[0] <= recalls[1] <= recalls[2]
        assert recalls[2] == 1.0

    def test_duplicates_across_trees_counted_once(self):
        base = make_synthetic(100, 4, 2, 1.0, seed=4)
        forest = build_kdforest(base, num_trees=4, top_dims=2, seed=1)
        q = np.zeros(4)
        res = query_kdforest(forest, q, 5, max_checks=5)
        assert len(set(res.ids.tolist())) == 5

    def test_preconditions(self):
        base = make_synthetic(30, 3, 2, 1.0, seed=0)
        forest = build_kdforest(base, num_trees=1, top_dims=1, seed=0)
        with pytest.raises(ValidationError):
            query_kdforest(forest, np.zeros(2), 1, max_checks=5)
        with pytest.raises(ValidationError):
            query_kdforest(forest, np.zeros(3), 5, max_checks=4)
        with pytest.raises(ValidationError):
            query_kdforest(forest, np.zeros(3), 0, max_checks=5)
