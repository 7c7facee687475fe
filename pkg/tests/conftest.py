import numpy as np


def naive_topk(data: np.ndarray, ids: np.ndarray, q, k: int):
    """Independent reference: full scan, lexicographic (distance, id) sort."""
    diff = data.astype(np.float64) - np.asarray(q, dtype=np.float64)
    dists = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((ids, dists))[:k]
    return ids[order], dists[order]
