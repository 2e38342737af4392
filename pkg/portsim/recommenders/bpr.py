"""
portsim BPR
Bayesian personalized ranking with mini-batched stochastic pairwise updates.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import expit

from portsim.recommenders.base import RankingModel, RecommenderParams

NEGATIVE_RESAMPLE_ROUNDS = 10


def sample_negatives(
    users: np.ndarray,
    candidates: np.ndarray,
    positive_keys: np.ndarray,
    n_items: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    One unclicked candidate item per user, uniform over candidates.
    Entries that stay clashing after the resample rounds are -1.
    """
    negatives = candidates[rng.integers(len(candidates), size=len(users))]
    for _ in range(NEGATIVE_RESAMPLE_ROUNDS):
        clash = np.isin(users * n_items + negatives, positive_keys, assume_unique=False)
        if not clash.any():
            return negatives
        negatives[clash] = candidates[rng.integers(len(candidates), size=int(clash.sum()))]
    clash = np.isin(users * n_items + negatives, positive_keys)
    negatives[clash] = -1
    return negatives


@dataclass
class BPRModel(RankingModel):
    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray

    @classmethod
    def fit(cls, matrix, candidate_mask, params: RecommenderParams, rng) -> "BPRModel":
        n_users, n_items = matrix.shape
        coo = sparse.coo_matrix(matrix)
        pos_users = coo.row.astype(np.int64)
        pos_items = coo.col.astype(np.int64)
        positive_keys = np.unique(pos_users * n_items + pos_items)
        candidates = np.flatnonzero(candidate_mask)

        users = rng.normal(0.0, params.init_scale, (n_users, params.factors))
        items = rng.normal(0.0, params.init_scale, (n_items, params.factors))
        bias = np.zeros(n_items)
        model = cls(users, items, bias)
        if len(pos_users) == 0 or len(candidates) == 0:
            return model

        lr, reg = params.learning_rate, params.bpr_regularization
        for _ in range(params.epochs):
            order = rng.permutation(len(pos_users))
            for start in range(0, len(order), params.batch_size):
                batch = order[start:start + params.batch_size]
                u, i = pos_users[batch], pos_items[batch]
                j = sample_negatives(u, candidates, positive_keys, n_items, rng)
                keep = j >= 0
                u, i, j = u[keep], i[keep], j[keep]
                if len(u) == 0:
                    continue

                xu, yi, yj = users[u], items[i], items[j]
                x_uij = np.einsum("ij,ij->i", xu, yi - yj) + bias[i] - bias[j]
                g = expit(-x_uij)[:, None]

                np.add.at(users, u, lr * (g * (yi - yj) - reg * xu))
                np.add.at(items, i, lr * (g * xu - reg * yi))
                np.add.at(items, j, lr * (-g * xu - reg * yj))
                np.add.at(bias, i, lr * (g[:, 0] - reg * bias[i]))
                np.add.at(bias, j, lr * (-g[:, 0] - reg * bias[j]))
        return model

    def score(self, consumer_row: Optional[int], profile_items, candidates) -> Optional[np.ndarray]:
        if consumer_row is None:
            return None
        return self.item_factors[candidates] @ self.user_factors[consumer_row] + self.item_bias[candidates]
