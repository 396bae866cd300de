"""Disentangled contrastive learning: dropout-augmented channel views
against the original-feedback embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError
from .nn import l2_normalize
from .preference import PreferenceModel, encode_preference

_AUG_STREAM = 4242  # seed-sequence tag separating augmentation draws


@dataclass
class AugmentationConfig:
    node_dropout_rate: float = 0.1
    edge_dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("node_dropout_rate", "edge_dropout_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {rate}")


def _aug_rng(cfg: AugmentationConfig, step: int, substream: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(cfg.seed), _AUG_STREAM, int(step), int(substream)])
    return np.random.Generator(np.random.Philox(seq))


def augment(r_il: np.ndarray, cfg: AugmentationConfig, step: int, substream: int = 0) -> np.ndarray:
    """Edge dropout on individual entries, node dropout on the whole row,
    then re-L2-normalization. Deterministic given (seed, step, substream)."""
    r = np.asarray(r_il, dtype=np.float64)
    rng = _aug_rng(cfg, step, substream)
    keep = rng.random(r.shape) >= cfg.edge_dropout_rate
    out = r * keep
    if rng.random() < cfg.node_dropout_rate:
        out = np.zeros_like(out)
    norm = np.sqrt((out * out).sum())
    return out / norm if norm > 0 else out


def augmentation_mask(shape: tuple[int, int], cfg: AugmentationConfig, step: int) -> np.ndarray:
    """0/1 dropout mask for a (rows, M) batch of tailored inputs; one node
    draw per row, one edge draw per entry."""
    rng = _aug_rng(cfg, step, substream=0)
    edge = (rng.random(shape) >= cfg.edge_dropout_rate).astype(np.float64)
    node = (rng.random(shape[0]) >= cfg.node_dropout_rate).astype(np.float64)
    return edge * node[:, None]


def embed_original(model: PreferenceModel, r_rows) -> Tensor:
    """Encoder mean of the L2-normalized raw rating rows (no sampling)."""
    mu, _ = encode_preference(model, l2_normalize(ad.as_tensor(r_rows)))
    return mu


@dataclass
class ContrastiveBatch:
    """Original embeddings (B, d) against per-channel augmented embeddings,
    stored user-major as (B*L, d)."""

    originals: Tensor
    augmented: Tensor
    n_channels: int
    tau_c: float

    def __post_init__(self):
        b = self.originals.shape[0]
        if b < 2:
            raise ParameterError(f"contrastive batch needs at least 2 users, got {b}")
        if self.tau_c <= 0:
            raise ParameterError(f"tau_c must be positive, got {self.tau_c}")
        if self.augmented.shape[0] != b * self.n_channels:
            raise ParameterError(
                f"augmented rows {self.augmented.shape[0]} != batch {b} * channels {self.n_channels}"
            )


def contrastive_loss(batch: ContrastiveBatch, include_positive: bool = False) -> Tensor:
    """sum over users and channel slots of
    -log exp(cos(ori_i, aug_il)/tau_c) / sum_{i' != i} exp(cos(ori_i, aug_i'l)/tau_c).

    Negatives are the other in-batch users' augmented views at the same
    channel slot. The positive pair is excluded from the denominator unless
    include_positive is set. Cosine of a zero vector is 0.
    """
    b = batch.originals.shape[0]
    ori_n = ad.l2norm_rows(batch.originals)
    inv_tau = 1.0 / batch.tau_c
    denom_mask = np.ones((b, b)) if include_positive else 1.0 - np.eye(b)
    diag_idx = np.arange(b)[:, None]
    total = None
    for l in range(batch.n_channels):
        rows = np.arange(b) * batch.n_channels + l
        aug_n = ad.l2norm_rows(ad.gather_rows(batch.augmented, rows))
        sim = ad.matmul(ori_n, ad.transpose(aug_n))  # (B, B) cosines
        scaled = ad.mul(sim, inv_tau)
        pos = ad.reshape(ad.take_along_last(scaled, diag_idx), (b,))
        denom = ad.tsum(ad.mul(ad.exp(scaled), Tensor(denom_mask)), axis=1)
        term = ad.tsum(ad.sub(ad.log(denom), pos))
        total = term if total is None else ad.add(total, term)
    return total
