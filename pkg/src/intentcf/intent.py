"""Intent recognition: Dirichlet-style prior in softmax basis, user intent
distributions, the shared-embedding item intent network and both intent
losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError, ShapeError
from .nn import MlpParams, diag_gaussian_kl, gaussian_reparameterize, init_mlp, mlp_forward, softmax_temp

PROB_FLOOR = 1e-10


@dataclass
class LaplacePrior:
    """Diagonal Gaussian approximating a Dirichlet(alpha) in softmax basis.

    mu_k = log a_k - mean(log a); var_k = (1/a_k)(1 - 2/K) + (1/K^2) sum 1/a.
    """

    alpha: np.ndarray
    mu: np.ndarray
    sigma_diag: np.ndarray


def laplace_prior(alpha) -> LaplacePrior:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size < 2:
        raise ParameterError(f"alpha must be a vector with K >= 2, got shape {alpha.shape}")
    if np.any(alpha <= 0):
        raise ParameterError("all Dirichlet concentrations must be positive")
    k = alpha.size
    log_a = np.log(alpha)
    mu = log_a - log_a.mean()
    sigma = (1.0 / alpha) * (1.0 - 2.0 / k) + (1.0 / k**2) * (1.0 / alpha).sum()
    return LaplacePrior(alpha, mu, sigma)


def standard_prior(k: int) -> LaplacePrior:
    """N(0, I) fallback for the degenerate single-channel model, where the
    softmax-basis Dirichlet approximation has zero variance."""
    return LaplacePrior(np.ones(k), np.zeros(k), np.ones(k))


@dataclass
class IntentModel:
    """Encoder psi (input M, two K-dim heads), free channel logits (softmaxed
    per column over items) and the item intent network nu fed by the shared
    first-layer embedding rows."""

    encoder_psi: MlpParams
    beta_logits: Tensor
    item_net_nu: MlpParams
    k: int

    @property
    def n_items(self) -> int:
        return self.beta_logits.shape[0]

    @property
    def embedding(self) -> Tensor:
        # first-layer weight matrix of psi; row j is the item-j embedding
        return self.encoder_psi.weights[0]

    def beta(self) -> Tensor:
        """M x K channel matrix; each column sums to 1 over items."""
        return ad.softmax(self.beta_logits, axis=0)

    def parameters(self) -> list[Tensor]:
        return self.encoder_psi.parameters() + [self.beta_logits] + self.item_net_nu.parameters()


def init_intent_model(
    n_items: int, k: int, hidden: int, item_hidden: int, rng: np.random.Generator
) -> IntentModel:
    psi = init_mlp([n_items, hidden, 2 * k], rng, "psi")
    beta_logits = ad.parameter(0.1 * rng.standard_normal((n_items, k)), "beta.logits")
    nu = init_mlp([hidden, item_hidden, k], rng, "nu")
    return IntentModel(psi, beta_logits, nu, k)


def encode_user(model: IntentModel, item_idx) -> tuple[Tensor, Tensor]:
    """Variational posterior parameters for one user's binary row, given as
    the indices of observed items. The first layer is the sum of embedding
    rows over observed items."""
    item_idx = np.asarray(item_idx, dtype=np.intp)
    if item_idx.size == 0:
        raise ParameterError("cannot encode a user with no observed items (cold user)")
    if item_idx.max() >= model.n_items:
        raise ShapeError(f"item index {item_idx.max()} out of range for M={model.n_items}")
    psi = model.encoder_psi
    emb = ad.tsum(ad.gather_rows(psi.weights[0], item_idx), axis=0)
    h = ad.tanh(ad.add(emb, psi.biases[0]))
    out = h
    for l in range(1, psi.n_layers):
        out = ad.add(ad.matmul(out, psi.weights[l]), psi.biases[l])
        if l != psi.n_layers - 1:
            out = ad.tanh(out)
    return ad.slice_cols(out, 0, model.k), ad.slice_cols(out, model.k, 2 * model.k)


def encode_users(model: IntentModel, x_dense: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batch version of encode_user over dense 0/1 rows (B, M)."""
    out = mlp_forward(model.encoder_psi, x_dense)
    return ad.slice_cols(out, 0, model.k), ad.slice_cols(out, model.k, 2 * model.k)


@dataclass
class UserIntent:
    s: Tensor
    gamma: Tensor


def sample_gamma(mu: Tensor, logvar: Tensor, noise, tau: float) -> UserIntent:
    """Reparameterized softmax-basis sample and its channel distribution.
    Pass zero noise for the deterministic evaluation path."""
    sigma = ad.exp(ad.mul(logvar, 0.5))
    s = gaussian_reparameterize(mu, sigma, noise)
    return UserIntent(s, softmax_temp(s, tau))


@dataclass
class ItemIntentMatrix:
    """K x M; column j is item j's distribution over channels."""

    phi: Tensor

    @property
    def values(self) -> np.ndarray:
        return self.phi.data


def item_intents(model: IntentModel, tau: float) -> ItemIntentMatrix:
    """Soft channel distributions for every item: column j is
    softmax(f_nu(W_j) / tau). The relaxed distribution is used everywhere;
    no one-hot sampling."""
    logits = mlp_forward(model.item_net_nu, model.embedding)  # (M, K)
    phi_rows = softmax_temp(logits, tau, axis=-1)
    return ItemIntentMatrix(ad.transpose(phi_rows))


def multinomial_recon_loss(x_dense: np.ndarray, gamma: Tensor, beta: Tensor, floor: float = PROB_FLOOR) -> Tensor:
    """-sum_i sum_{j observed} log (beta gamma_i)_j over the batch."""
    probs = ad.matmul(gamma, ad.transpose(beta))  # (B, M)
    logp = ad.log(ad.clip_min(probs, floor))
    return ad.mul(ad.tsum(ad.mul(Tensor(x_dense), logp)), -1.0)


def intent_kl(mu: Tensor, logvar: Tensor, prior: LaplacePrior) -> Tensor:
    """Closed-form diagonal Gaussian KL against the prior, summed over the
    batch."""
    return diag_gaussian_kl(mu, logvar, prior.mu, prior.sigma_diag)


@dataclass
class IntentLossParts:
    total: Tensor
    recon: Tensor
    kl: Tensor
    gamma: Tensor  # first-sample channel distributions, (B, K)
    mu: Tensor
    logvar: Tensor


def intent_elbo_loss(
    model: IntentModel,
    prior: LaplacePrior,
    x_dense: np.ndarray,
    noise: np.ndarray,
    eta: float,
    tau: float,
    mc_samples: int = 1,
    floor: float = PROB_FLOOR,
) -> IntentLossParts:
    """Negative ELBO of the intent network over a batch of binary rows.

    noise has shape (H, B, K) or (B, K); the reconstruction is averaged over
    the H Monte Carlo samples while the KL stays analytic.
    """
    if eta < 0:
        raise ParameterError(f"eta must be nonnegative, got {eta}")
    if mc_samples < 1:
        raise ParameterError(f"mc_samples must be >= 1, got {mc_samples}")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 2:
        noise = noise[None]
    if noise.shape[0] < mc_samples:
        raise ShapeError(f"noise provides {noise.shape[0]} samples, need {mc_samples}")
    mu, logvar = encode_users(model, x_dense)
    beta = model.beta()
    recon = None
    gamma0 = None
    for h in range(mc_samples):
        gamma = sample_gamma(mu, logvar, noise[h], tau).gamma
        if gamma0 is None:
            gamma0 = gamma
        term = multinomial_recon_loss(x_dense, gamma, beta, floor)
        recon = term if recon is None else ad.add(recon, term)
    recon = ad.mul(recon, 1.0 / mc_samples)
    kl = intent_kl(mu, logvar, prior)
    total = ad.add(recon, ad.mul(kl, eta))
    return IntentLossParts(total, recon, kl, gamma0, mu, logvar)


def item_intent_kl_loss(
    phi: ItemIntentMatrix | Tensor,
    gamma: Tensor,
    x_dense: np.ndarray,
    floor: float = PROB_FLOOR,
) -> Tensor:
    """sum over observed (i, j) of KL(phi_j || gamma_i) with the user side
    treated as constant: gradients reach only the item network and the shared
    embedding, never the user encoder heads."""
    phi_t = phi.phi if isinstance(phi, ItemIntentMatrix) else phi  # (K, M)
    phi_rows = ad.transpose(phi_t)  # (M, K)
    gamma_const = gamma.detach()
    log_gamma = ad.log(ad.clip_min(gamma_const, floor))
    # sum_j c_j * sum_k phi_jk log phi_jk, with c_j the batch count of item j
    counts = Tensor(np.asarray(x_dense).sum(axis=0))  # (M,)
    neg_entropy = ad.tsum(ad.mul(phi_rows, ad.log(ad.clip_min(phi_rows, floor))), axis=1)  # (M,)
    term1 = ad.tsum(ad.mul(counts, neg_entropy))
    # sum_i sum_k (X phi)_ik log gamma_ik
    cross = ad.tsum(ad.mul(ad.matmul(Tensor(np.asarray(x_dense, dtype=np.float64)), phi_rows), log_gamma))
    return ad.sub(term1, cross)


def top_items_per_channel(beta_values: np.ndarray, top_t: int) -> list[list[tuple[int, float]]]:
    """For each channel (column), the top_t items by probability, ties broken
    by item index."""
    if top_t < 1:
        raise ParameterError(f"top_t must be >= 1, got {top_t}")
    m, k = beta_values.shape
    t = min(top_t, m)
    out = []
    for c in range(k):
        col = beta_values[:, c]
        order = np.lexsort((np.arange(m), -col))[:t]
        out.append([(int(j), float(col[j])) for j in order])
    return out
