"""Ranking evaluation: the zero-noise scoring path, top-k metrics and the
genre co-occurrence validation of learned channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import RatingMatrix, SplitDataset
from .errors import ParameterError
from .intent import IntentModel, encode_users, item_intents, top_items_per_channel
from .nn import softmax_temp
from .preference import (
    PreferenceModel,
    decompose_ratings_batch,
    encode_preference,
    select_top_channels_batch,
)

METRICS = ("precision", "recall", "map", "ndcg")


@dataclass
class RankedList:
    """Candidate items for one user, best first; training items excluded,
    ties broken by item index."""

    user: int
    items: np.ndarray
    scores: np.ndarray


class Scorer:
    """Deterministic scoring over frozen models: gamma from the encoder mean,
    channel selection, tailored inputs, encoder-mean embeddings, weighted
    inner products. Shared by evaluation and all recommendation modes."""

    def __init__(
        self,
        intent_model: IntentModel,
        pref_model: PreferenceModel,
        top_l: int,
        tau: float,
        intent_min_rating: float | None = None,
    ):
        self.intent = intent_model
        self.pref = pref_model
        self.top_l = top_l
        self.tau = tau
        self.intent_min_rating = intent_min_rating
        self._phi: np.ndarray | None = None

    @property
    def phi(self) -> np.ndarray:
        """(K, M) item intent matrix under the frozen parameters."""
        if self._phi is None:
            with ad.no_grad():
                self._phi = item_intents(self.intent, self.tau).values
        return self._phi

    def intent_rows(self, train: RatingMatrix, users: np.ndarray) -> np.ndarray:
        """Dense binary intent-network inputs for the given users."""
        x = np.zeros((len(users), train.n_items))
        for r, u in enumerate(users):
            idx, vals = train.rows[u]
            if self.intent_min_rating is not None:
                idx = idx[vals >= self.intent_min_rating]
            x[r, idx] = 1.0
        return x

    def gamma(self, train: RatingMatrix, users: np.ndarray) -> np.ndarray:
        """(B, K) zero-noise channel distributions."""
        with ad.no_grad():
            mu, _ = encode_users(self.intent, self.intent_rows(train, users))
            return softmax_temp(mu, self.tau).data

    def channel_embeddings(self, train: RatingMatrix, users: np.ndarray, channel_idx: np.ndarray) -> np.ndarray:
        """(B, L, d) encoder means of the tailored inputs for the requested
        channels (channel_idx is (B, L))."""
        with ad.no_grad():
            r_dense = train.dense(users)
            tails = decompose_ratings_batch(r_dense, ad.Tensor(self.phi), channel_idx)
            mu, _ = encode_preference(self.pref, tails)
        b, top_l = channel_idx.shape
        return mu.data.reshape(b, top_l, self.pref.d)

    def blended_scores(self, train: RatingMatrix, users: np.ndarray) -> np.ndarray:
        """(B, M) weighted-average predictions over each user's top-L
        channels."""
        gamma = self.gamma(train, users)
        idx, weights = select_top_channels_batch(gamma, self.top_l)
        emb = self.channel_embeddings(train, users, idx)  # (B, L, d)
        v = self.pref.item_matrix.data  # (d, M)
        per_channel = np.einsum("bld,dm->blm", emb, v)
        return np.einsum("bl,blm->bm", weights, per_channel)

    def channel_scores(self, train: RatingMatrix, users: np.ndarray, channel: int) -> np.ndarray:
        """(B, M) single-channel predictions, no blending."""
        if not 0 <= channel < self.intent.k:
            raise ParameterError(f"channel {channel} out of range for K={self.intent.k}")
        idx = np.full((len(users), 1), channel, dtype=np.intp)
        emb = self.channel_embeddings(train, users, idx)[:, 0, :]
        return emb @ self.pref.item_matrix.data

    def override_scores(self, train: RatingMatrix, users: np.ndarray, override: dict[int, float]) -> np.ndarray:
        """(B, M) predictions under a caller-supplied intent distribution."""
        if not override:
            raise ParameterError("intent override must name at least one channel")
        channels = sorted(override)
        weights = np.array([override[c] for c in channels], dtype=np.float64)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ParameterError("override weights must be nonnegative with a positive sum")
        for c in channels:
            if not 0 <= c < self.intent.k:
                raise ParameterError(f"channel {c} out of range for K={self.intent.k}")
        weights = weights / weights.sum()
        idx = np.tile(np.array(channels, dtype=np.intp), (len(users), 1))
        emb = self.channel_embeddings(train, users, idx)  # (B, |channels|, d)
        per_channel = np.einsum("bld,dm->blm", emb, self.pref.item_matrix.data)
        return np.einsum("l,blm->bm", weights, per_channel)


def order_by_score(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, ties by item index ascending."""
    return np.lexsort((np.arange(scores.size), -scores))


def rank_items(user: int, scores: np.ndarray, exclude: np.ndarray, k_cut: int) -> RankedList:
    if k_cut < 1:
        raise ParameterError(f"cutoff must be >= 1, got {k_cut}")
    masked = scores.astype(np.float64, copy=True)
    masked[exclude] = -np.inf
    order = order_by_score(masked)
    n_valid = scores.size - len(exclude)
    order = order[: min(k_cut, n_valid)]
    return RankedList(user, order, masked[order])


def rank_user(scorer: Scorer, split: SplitDataset, user: int, k_cut: int) -> RankedList:
    """Deterministic ranking for one user; training items are masked out."""
    train = split.train
    if not 0 <= user < train.n_users:
        raise ParameterError(f"unknown user index {user} (N={train.n_users})")
    if train.rows[user][0].size == 0:
        raise ParameterError(f"user {user} has no training items")
    scores = scorer.blended_scores(train, np.array([user]))[0]
    return rank_items(user, scores, train.rows[user][0], k_cut)


def metrics_at_k(ranked_items: np.ndarray, positives, k: int) -> tuple[float, float, float, float]:
    """(P@k, R@k, AP@k, NDCG@k) with binary relevance.

    AP normalizes by min(|positives|, k); NDCG uses 1/log2(rank+1) gains with
    the ideal ranking placing min(|positives|, k) hits first.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    pos = set(int(p) for p in positives)
    if not pos:
        raise ParameterError("metrics need at least one positive item")
    top = [int(i) for i in ranked_items[:k]]
    hits = 0
    ap_sum = 0.0
    dcg = 0.0
    for rank, item in enumerate(top, start=1):
        if item in pos:
            hits += 1
            ap_sum += hits / rank
            dcg += 1.0 / np.log2(rank + 1)
    n_ideal = min(len(pos), k)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, n_ideal + 1))
    return (
        hits / k,
        hits / len(pos),
        ap_sum / n_ideal,
        dcg / idcg,
    )


@dataclass
class MetricReport:
    """Per-metric, per-cutoff means over users with at least one positive
    test item."""

    cutoffs: tuple[int, ...]
    values: dict[str, dict[int, float]]
    n_users: int
    seed: int | None = None

    def as_rows(self) -> list[list[str]]:
        header = ["metric"] + [f"@{k}" for k in self.cutoffs]
        rows = [header]
        for m in METRICS:
            rows.append([m] + [f"{self.values[m][k]:.4f}" for k in self.cutoffs])
        return rows

    def text_table(self) -> str:
        rows = self.as_rows()
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        lines.append(f"users: {self.n_users}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "n_users": self.n_users,
            "seed": self.seed,
            "metrics": {m: {str(k): v for k, v in self.values[m].items()} for m in METRICS},
        }


def positives_for_user(split: SplitDataset, user: int) -> np.ndarray:
    idx, vals = split.test.rows[user]
    return idx[vals >= split.rating_threshold]


def evaluate(
    scorer: Scorer,
    split: SplitDataset,
    cutoffs: tuple[int, ...] = (5, 10),
    users: np.ndarray | None = None,
    chunk: int = 512,
) -> MetricReport:
    """Mean ranking metrics over users holding >= 1 positive test item."""
    train = split.train
    users = np.arange(train.n_users) if users is None else np.asarray(users)
    kmax = max(cutoffs)
    sums = {m: {k: 0.0 for k in cutoffs} for m in METRICS}
    counted = 0
    for lo in range(0, len(users), chunk):
        batch = users[lo : lo + chunk]
        batch = np.array([u for u in batch if train.rows[u][0].size > 0], dtype=np.intp)
        if batch.size == 0:
            continue
        scores = scorer.blended_scores(train, batch)
        for r, u in enumerate(batch):
            pos = positives_for_user(split, u)
            if pos.size == 0:
                continue
            ranked = rank_items(int(u), scores[r], train.rows[u][0], kmax)
            for k in cutoffs:
                p, rec, ap, ndcg = metrics_at_k(ranked.items, pos, k)
                sums["precision"][k] += p
                sums["recall"][k] += rec
                sums["map"][k] += ap
                sums["ndcg"][k] += ndcg
            counted += 1
    if counted == 0:
        raise ParameterError("no users with positive test items to evaluate")
    values = {m: {k: sums[m][k] / counted for k in cutoffs} for m in METRICS}
    return MetricReport(tuple(cutoffs), values, counted)


@dataclass
class CooccurrenceReport:
    rate: float
    per_channel: list[float]
    baseline_rate: float
    top_t: int
    shuffles: int
    seed: int

    def as_dict(self) -> dict:
        return {
            "rate": self.rate,
            "baseline_rate": self.baseline_rate,
            "per_channel": self.per_channel,
            "top_t": self.top_t,
            "shuffles": self.shuffles,
            "seed": self.seed,
        }


def _pair_success_rate(groups: list[np.ndarray], genre_sets: list[frozenset]) -> tuple[float, list[float]]:
    total_pairs = 0
    total_hits = 0
    per_channel = []
    for group in groups:
        pairs = 0
        hits = 0
        for a in range(len(group)):
            ga = genre_sets[group[a]]
            for b in range(a + 1, len(group)):
                pairs += 1
                if ga & genre_sets[group[b]]:
                    hits += 1
        per_channel.append(hits / pairs if pairs else 0.0)
        total_pairs += pairs
        total_hits += hits
    return (total_hits / total_pairs if total_pairs else 0.0), per_channel


def cooccurrence_rate(
    channel_item: np.ndarray,
    genre_sets: list[frozenset],
    top_t: int = 20,
    shuffles: int = 100,
    seed: int = 0,
) -> CooccurrenceReport:
    """Fraction of within-channel top-T item pairs sharing >= 1 genre,
    pooled over channels, against a size-matched random-grouping baseline
    (uniform item shuffles, averaged).

    channel_item is (M, K): column k scores the items of channel k.
    """
    if top_t < 2:
        raise ParameterError(f"top_t must be >= 2 to form pairs, got {top_t}")
    m, k = channel_item.shape
    if len(genre_sets) != m:
        raise ParameterError(f"genre table covers {len(genre_sets)} items, expected {m}")
    top = top_items_per_channel(channel_item, top_t)
    groups = [np.array([j for j, _ in channel], dtype=np.intp) for channel in top]
    rate, per_channel = _pair_success_rate(groups, genre_sets)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 9090])))
    sizes = [len(g) for g in groups]
    baseline_sum = 0.0
    for _ in range(shuffles):
        rand_groups = [rng.choice(m, size=s, replace=False) for s in sizes]
        b_rate, _ = _pair_success_rate(rand_groups, genre_sets)
        baseline_sum += b_rate
    return CooccurrenceReport(rate, per_channel, baseline_sum / shuffles, top_t, shuffles, int(seed))
