"""
portsim ALS
Implicit-feedback alternating least squares with confidence weighting.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse

from portsim.recommenders.base import RankingModel, RecommenderParams


def confidence_matrix(matrix: sparse.csr_matrix, alpha: float) -> sparse.csr_matrix:
    """c_ui = 1 + alpha * r_ui on observed entries; unobserved entries are implicitly 1."""
    conf = sparse.csr_matrix(matrix, dtype=float, copy=True)
    conf.data = 1.0 + alpha * conf.data
    return conf


def als_objective(
    conf: sparse.csr_matrix, users: np.ndarray, items: np.ndarray, regularization: float
) -> float:
    """
    sum_ui c_ui (p_ui - x_u.y_i)^2 + reg (|X|^2 + |Y|^2), with p_ui = 1 on
    observed entries and c_ui = 1, p_ui = 0 elsewhere.
    """
    coo = conf.tocoo()
    predicted = np.einsum("ij,ij->i", users[coo.row], items[coo.col])
    all_squares = float(np.sum((users.T @ users) * (items.T @ items)))
    observed = float(np.sum(coo.data * (1.0 - predicted) ** 2 - predicted ** 2))
    penalty = regularization * float(np.sum(users ** 2) + np.sum(items ** 2))
    return all_squares + observed + penalty


def _solve_side(conf: sparse.csr_matrix, fixed: np.ndarray, regularization: float) -> np.ndarray:
    """Exact ridge solve of every row given the other side's factors."""
    n_rows, d = conf.shape[0], fixed.shape[1]
    gram = fixed.T @ fixed
    ridge = regularization * np.eye(d)
    solved = np.zeros((n_rows, d))
    for row in range(n_rows):
        start, end = conf.indptr[row], conf.indptr[row + 1]
        cols = conf.indices[start:end]
        c = conf.data[start:end]
        f = fixed[cols]
        lhs = gram + (f.T * (c - 1.0)) @ f + ridge
        rhs = f.T @ c
        solved[row] = np.linalg.solve(lhs, rhs)
    return solved


@dataclass
class ALSModel(RankingModel):
    user_factors: np.ndarray
    item_factors: np.ndarray
    objective_history: List[float] = field(default_factory=list)

    @classmethod
    def fit(cls, matrix, candidate_mask, params: RecommenderParams, rng) -> "ALSModel":
        n_users, n_items = matrix.shape
        conf = confidence_matrix(matrix, params.alpha)
        conf_t = conf.T.tocsr()
        users = rng.normal(0.0, params.init_scale, (n_users, params.factors))
        items = rng.normal(0.0, params.init_scale, (n_items, params.factors))

        history = [als_objective(conf, users, items, params.regularization)]
        for _ in range(params.sweeps):
            users = _solve_side(conf, items, params.regularization)
            items = _solve_side(conf_t, users, params.regularization)
            history.append(als_objective(conf, users, items, params.regularization))
        return cls(user_factors=users, item_factors=items, objective_history=history)

    def score(self, consumer_row: Optional[int], profile_items, candidates) -> Optional[np.ndarray]:
        if consumer_row is None:
            return None
        return self.item_factors[candidates] @ self.user_factors[consumer_row]
