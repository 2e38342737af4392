"""
portsim ItemKNN
Item-item cosine neighborhoods over click vectors.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from portsim.recommenders.base import RankingModel, RecommenderParams


def top_neighbors(
    matrix: sparse.spmatrix, neighbors: int
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Per item, the ids of its most cosine-similar items (descending similarity,
    ascending id on ties, self and zero similarity excluded) and their scores.
    """
    clicks = sparse.csc_matrix(matrix, dtype=float)
    n_items = clicks.shape[1]
    norms = np.sqrt(np.asarray(clicks.multiply(clicks).sum(axis=0)).ravel())
    dots = (clicks.T @ clicks).tocsr()
    dots.sort_indices()

    neighbor_ids: List[np.ndarray] = []
    neighbor_sims: List[np.ndarray] = []
    for item in range(n_items):
        start, end = dots.indptr[item], dots.indptr[item + 1]
        cols = dots.indices[start:end]
        vals = dots.data[start:end]
        keep = (cols != item) & (vals > 0)
        cols, vals = cols[keep], vals[keep]
        sims = vals / (norms[item] * norms[cols])
        order = np.lexsort((cols, -sims))[:neighbors]
        neighbor_ids.append(cols[order].astype(np.int64))
        neighbor_sims.append(sims[order])
    return neighbor_ids, neighbor_sims


@dataclass
class ItemKNNModel(RankingModel):
    neighbor_ids: List[np.ndarray]
    neighbor_sims: List[np.ndarray]

    @classmethod
    def fit(cls, matrix, candidate_mask, params: RecommenderParams, rng) -> "ItemKNNModel":
        ids, sims = top_neighbors(matrix, params.knn_neighbors)
        return cls(ids, sims)

    def similarity(self, a: int, b: int) -> float:
        hits = np.flatnonzero(self.neighbor_ids[a] == b)
        return float(self.neighbor_sims[a][hits[0]]) if hits.size else 0.0

    def score(self, consumer_row: Optional[int], profile_items, candidates) -> Optional[np.ndarray]:
        if len(profile_items) == 0:
            return None
        totals = np.zeros(len(self.neighbor_ids))
        for item in profile_items:
            totals[self.neighbor_ids[item]] += self.neighbor_sims[item]
        return totals[candidates]
