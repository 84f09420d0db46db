"""User- and item-based kNN top-N recommendation over set similarities.

Scores are similarity sums. For item-kNN the score of a candidate ``i`` for
user ``u`` adds ``value(i, j)`` over the neighbors ``j`` of ``i`` that ``u``
experienced; for user-kNN it adds ``value(u, v)`` over the neighbors ``v`` of
``u`` that experienced ``i``. Rating magnitudes are ignored. Negative
(penalised) similarities lower the score.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .exceptions import ConfigurationError
from .similarity import MeasureSpec, NeighborLists, top_k_all

SCHEMES = {"item-knn": "item", "user-knn": "user"}
DEFAULT_K = 80


def scheme_axis(scheme: str) -> str:
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ConfigurationError(f"unknown scheme {scheme!r}; use user-knn or item-knn", "--scheme") from None


@dataclass(frozen=True)
class NeighborModel:
    axis: str
    k: int
    spec: MeasureSpec
    neighbors: NeighborLists

    def neighbors_of(self, e: int) -> list[tuple[int, float]]:
        if not 0 <= e < self.neighbors.n_entities:
            raise IndexError(f"{self.axis} index {e} out of range")
        return self.neighbors.row(e)

    def weight_matrix(self) -> sp.csr_matrix:
        return self.neighbors.to_sparse()


def fit_models(train: Dataset, axis: str, specs: Sequence[MeasureSpec], k: int = DEFAULT_K, workers: int = 1) -> list[NeighborModel]:
    """One :class:`NeighborModel` per spec, sharing a single co-occurrence pass."""
    lists = top_k_all(train, axis, specs, k, workers=workers)
    return [NeighborModel(axis, k, spec, nl) for spec, nl in zip(specs, lists)]


def fit_model(train: Dataset, axis: str, spec: MeasureSpec, k: int = DEFAULT_K, workers: int = 1) -> NeighborModel:
    return fit_models(train, axis, [spec], k, workers)[0]


def score_item_knn(model: NeighborModel, train: Dataset, u: int, i: int) -> float:
    if model.axis != "item":
        raise ConfigurationError("score_item_knn needs an item-axis model")
    profile = train.items_of(u)
    total = 0.0
    for j, value in model.neighbors_of(i):
        if _contains(profile, j):
            total += value
    return total


def score_user_knn(model: NeighborModel, train: Dataset, u: int, i: int) -> float:
    if model.axis != "user":
        raise ConfigurationError("score_user_knn needs a user-axis model")
    raters = train.users_of(i)
    total = 0.0
    for v, value in model.neighbors_of(u):
        if _contains(raters, v):
            total += value
    return total


def _contains(sorted_arr: np.ndarray, x: int) -> bool:
    p = np.searchsorted(sorted_arr, x)
    return p < len(sorted_arr) and sorted_arr[p] == x


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple[tuple[int, float], ...]

    def item_indices(self) -> list[int]:
        return [i for i, _ in self.items]

    def __len__(self):
        return len(self.items)


def _select(user: int, cols: np.ndarray, scores: np.ndarray, seen: np.ndarray, n: int) -> RecommendationList:
    keep = (scores != 0) & ~np.isin(cols, seen, assume_unique=True)
    cols, scores = cols[keep], scores[keep]
    if len(cols) > n:
        # cut at the n-th largest score, keeping every tie for the index rule
        cut = -np.partition(-scores, n - 1)[n - 1]
        mask = scores >= cut
        cols, scores = cols[mask], scores[mask]
    order = np.lexsort((cols, -scores))[:n]
    return RecommendationList(user, tuple(zip(cols[order].tolist(), scores[order].tolist())))


def _score_rows(model: NeighborModel, train: Dataset, users: np.ndarray) -> sp.csr_matrix:
    w = model.weight_matrix()
    r = train.interaction_matrix()
    if model.axis == "item":
        return (r[users] @ w.T.tocsr()).tocsr()
    return (w[users] @ r).tocsr()


def recommend_top_n(model: NeighborModel, train: Dataset, u: int, n: int = 10) -> RecommendationList:
    """Top-``n`` unrated items for user ``u``; zero-score candidates are dropped."""
    if n < 1:
        raise ConfigurationError(f"N must be at least 1, got {n}", "--top-n")
    if not 0 <= u < train.n_users:
        raise IndexError(f"user index {u} out of range")
    scores = _score_rows(model, train, np.array([u]))
    lo, hi = scores.indptr[0], scores.indptr[1]
    return _select(u, scores.indices[lo:hi].astype(np.int64), scores.data[lo:hi], train.items_of(u), n)


def recommend_all(
    model: NeighborModel,
    train: Dataset,
    n: int = 10,
    users: Iterable[int] | None = None,
    workers: int = 1,
    batch_size: int = 512,
) -> dict[int, RecommendationList]:
    """Top-``n`` lists for many users, scored in sparse batches.

    Each user's scores depend only on their own row, so batching and thread
    count do not change the result.
    """
    if n < 1:
        raise ConfigurationError(f"N must be at least 1, got {n}", "--top-n")
    users = np.arange(train.n_users) if users is None else np.asarray(sorted(set(users)), dtype=np.int64)
    batches = [users[s:s + batch_size] for s in range(0, len(users), batch_size)]

    def work(batch):
        scores = _score_rows(model, train, batch)
        out = []
        for row, u in enumerate(batch.tolist()):
            lo, hi = scores.indptr[row], scores.indptr[row + 1]
            out.append(_select(u, scores.indices[lo:hi].astype(np.int64), scores.data[lo:hi], train.items_of(u), n))
        return out

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(b) for b in batches]
    return {rl.user: rl for part in results for rl in part}


def write_recommendations(lists: Mapping[int, RecommendationList], d: Dataset, out: TextIO) -> None:
    """Write ``user_token \\t item_token \\t rank \\t score`` lines, users in index order."""
    for u in sorted(lists):
        for rank, (i, score) in enumerate(lists[u].items, start=1):
            out.write(f"{d.user_ids[u]}\t{d.item_ids[i]}\t{rank}\t{score!r}\n")
