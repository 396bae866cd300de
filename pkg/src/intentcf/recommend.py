"""Recommendation strategies over a frozen checkpoint: blended ranking,
single-channel ranking, caller-supplied intent distributions and
intent-based item similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SplitDataset
from .errors import ParameterError
from .evaluation import RankedList, Scorer, rank_items
from .intent import IntentModel


@dataclass
class IntentOverride:
    """Sparse channel -> weight map replacing the predicted distribution.
    Weights are nonnegative with at least one positive entry; they are
    renormalized over the provided channels."""

    weights: dict[int, float]

    def __post_init__(self):
        if not self.weights:
            raise ParameterError("intent override must name at least one channel")
        vals = np.array(list(self.weights.values()), dtype=np.float64)
        if np.any(vals < 0) or vals.sum() <= 0:
            raise ParameterError("override weights must be nonnegative with a positive sum")

    def normalized(self) -> dict[int, float]:
        total = sum(self.weights.values())
        return {int(c): w / total for c, w in self.weights.items()}


def _check_user(split: SplitDataset, user: int) -> None:
    if not 0 <= user < split.train.n_users:
        raise ParameterError(f"unknown user index {user} (N={split.train.n_users})")


def recommend_blended(scorer: Scorer, split: SplitDataset, user: int, n: int) -> RankedList:
    """Same scoring path as evaluation, truncated to n items."""
    _check_user(split, user)
    scores = scorer.blended_scores(split.train, np.array([user]))[0]
    return rank_items(user, scores, split.train.rows[user][0], n)


def recommend_in_channel(scorer: Scorer, split: SplitDataset, user: int, channel: int, n: int) -> RankedList:
    """Rank under one intent channel only: scores are the channel embedding's
    inner products, no cross-channel blending."""
    _check_user(split, user)
    scores = scorer.channel_scores(split.train, np.array([user]), channel)[0]
    return rank_items(user, scores, split.train.rows[user][0], n)


def recommend_with_intent(
    scorer: Scorer, split: SplitDataset, user: int, override: IntentOverride, n: int
) -> RankedList:
    """Weighted-average prediction with the override in place of the
    predicted top-L weights."""
    _check_user(split, user)
    scores = scorer.override_scores(split.train, np.array([user]), override.normalized())[0]
    return rank_items(user, scores, split.train.rows[user][0], n)


def similar_items(
    intent_model: IntentModel, phi: np.ndarray, item: int, n: int, measure: str = "cosine"
) -> list[tuple[int, float]]:
    """Items ranked by similarity between channel distributions (phi
    columns); the query item itself is excluded, ties break by index.

    measure: "cosine" (default) or "symkl" (negated symmetric KL, mapped to
    a descending-is-better score).
    """
    m = phi.shape[1]
    if not 0 <= item < m:
        raise ParameterError(f"unknown item index {item} (M={m})")
    if measure not in ("cosine", "symkl"):
        raise ParameterError(f"measure must be cosine or symkl, got {measure!r}")
    col = phi[:, item]
    if measure == "cosine":
        norms = np.linalg.norm(phi, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        sims = (phi.T @ col) / (norms * max(np.linalg.norm(col), 1e-300))
    else:
        eps = 1e-12
        p = np.clip(col, eps, None)[:, None]
        q = np.clip(phi, eps, None)
        kl_pq = (p * (np.log(p) - np.log(q))).sum(axis=0)
        kl_qp = (q * (np.log(q) - np.log(p))).sum(axis=0)
        sims = -(kl_pq + kl_qp)
    order = np.lexsort((np.arange(m), -sims))
    order = order[order != item][:n]
    return [(int(j), float(sims[j])) for j in order]
