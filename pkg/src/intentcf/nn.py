"""Standard layers on top of the tape: MLPs, softmax with temperature,
normalization, reparameterization, diagonal-Gaussian KL and Adam."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError, ShapeError, TrainingError

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": ad.tanh,
    "linear": lambda t: t,
}


@dataclass
class MlpParams:
    """Per-layer weights/biases plus the hidden activation identifier.

    ``weights[l]`` has shape (in_l, out_l) and adjacent layers chain. The
    activation is applied after every layer except the last.
    """

    weights: list[Tensor]
    biases: list[Tensor]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases):
            raise ParameterError("weights and biases must pair up per layer")
        for l in range(len(self.weights) - 1):
            out_l = self.weights[l].shape[1]
            in_next = self.weights[l + 1].shape[0]
            if out_l != in_next:
                raise ShapeError(
                    f"layer {l} output dim {out_l} does not chain into layer {l + 1} input dim {in_next}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_mlp(dims: list[int], rng: np.random.Generator, prefix: str, activation: str = "tanh") -> MlpParams:
    """Glorot-uniform init of an MLP with layer sizes dims[0] -> ... -> dims[-1]."""
    weights, biases = [], []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(ad.parameter(w, f"{prefix}.w{l}"))
        biases.append(ad.parameter(np.zeros(fan_out), f"{prefix}.b{l}"))
    return MlpParams(weights, biases, activation)


def mlp_forward(params: MlpParams, x) -> Tensor:
    """Composition of affine layers with the hidden activation on all but
    the final layer."""
    h = ad.as_tensor(x)
    expected = params.weights[0].shape[0]
    if h.data.shape[-1] != expected:
        raise ShapeError(
            f"input last dimension {h.data.shape} does not match first layer input ({expected},)"
        )
    act = _ACTIVATIONS[params.activation]
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if l != last:
            h = act(h)
    return h


def softmax_temp(logits, tau: float, axis: int = -1) -> Tensor:
    """softmax(logits / tau); smaller tau sharpens the distribution."""
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    logits = ad.as_tensor(logits)
    return ad.softmax(ad.mul(logits, 1.0 / tau), axis=axis)


def l2_normalize(v) -> Tensor:
    """v / ||v||2 along the last axis; an all-zero vector passes through."""
    return ad.l2norm_rows(ad.as_tensor(v))


def gaussian_reparameterize(mu, sigma, noise) -> Tensor:
    """mu + noise * sigma elementwise (sigma is the standard deviation)."""
    mu, sigma, noise = ad.as_tensor(mu), ad.as_tensor(sigma), ad.as_tensor(noise)
    if not (mu.data.shape == sigma.data.shape == noise.data.shape):
        raise ShapeError(
            f"mu {mu.data.shape}, sigma {sigma.data.shape} and noise {noise.data.shape} must share a shape"
        )
    return ad.add(mu, ad.mul(noise, sigma))


def diag_gaussian_kl(mu_q: Tensor, logvar_q: Tensor, mu_p, var_p) -> Tensor:
    """KL( N(mu_q, diag(exp(logvar_q))) || N(mu_p, diag(var_p)) ), closed form,
    summed over all elements. mu_p/var_p are constants (arrays or scalars)."""
    mu_p = np.asarray(mu_p, dtype=np.float64)
    var_p = np.asarray(var_p, dtype=np.float64)
    if np.any(var_p <= 0):
        raise ParameterError("prior variances must be positive")
    var_q = ad.exp(logvar_q)
    diff = ad.sub(Tensor(mu_p), mu_q)
    quad = ad.mul(ad.mul(diff, diff), 1.0 / var_p)
    trace = ad.mul(var_q, 1.0 / var_p)
    logdet = ad.sub(Tensor(np.log(var_p)), logvar_q)
    total = ad.add(ad.add(quad, trace), ad.sub(logdet, Tensor(1.0)))
    return ad.mul(ad.tsum(total), 0.5)


class Adam:
    """Adaptive-moment optimizer over named parameters. Deterministic."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: list[Tensor], grads: dict[str, np.ndarray]) -> None:
        for p in params:
            g = grads.get(p.name)
            if g is not None and not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {p.name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            g = grads.get(p.name)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.name!r} {p.data.shape}")
            m = self.m.setdefault(p.name, np.zeros_like(p.data))
            v = self.v.setdefault(p.name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, a in self.m.items():
            out[f"adam.m.{k}"] = a
        for k, a in self.v.items():
            out[f"adam.v.{k}"] = a
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m = {k[len("adam.m."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.v.")}


def finite_difference_gradients(
    loss_fn: Callable[[], float], params: list[Tensor], h: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central finite differences of loss_fn w.r.t. every parameter coordinate.

    loss_fn reads the parameters' current ``.data`` in place; it must be
    deterministic (fix any noise beforehand).
    """
    out = {}
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_fn()
            flat[i] = orig - h
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        out[p.name] = g
    return out


def max_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    """max over coordinates of |ga - gn| / max(|ga|, |gn|), ignoring pairs
    where both magnitudes are below 1e-8."""
    worst = 0.0
    for name, ga in analytic.items():
        gn = numeric[name]
        scale = np.maximum(np.abs(ga), np.abs(gn))
        diff = np.abs(ga - gn)
        mask = scale > 1e-8
        if np.any(mask):
            worst = max(worst, float((diff[mask] / scale[mask]).max()))
    return worst
