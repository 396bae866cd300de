"""Two-stage optimization: intent pretraining, unified training with all
four losses, warm-up schedules, checkpointing and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .contrast import AugmentationConfig, ContrastiveBatch, augmentation_mask, contrastive_loss, embed_original
from .data import BinaryMatrix, SplitDataset, binarize
from .errors import CheckpointError, ParameterError, TrainingError, UsageError
from .evaluation import Scorer, evaluate
from .intent import (
    IntentModel,
    LaplacePrior,
    init_intent_model,
    intent_elbo_loss,
    item_intent_kl_loss,
    item_intents,
    laplace_prior,
    standard_prior,
)
from .nn import Adam
from .preference import (
    PreferenceModel,
    decompose_ratings_batch,
    encode_preference,
    init_preference_model,
    preference_elbo_loss,
    select_top_channels_batch,
)

VARIANTS = ("ddcf", "ddcf-n", "ddcf-s", "k1-baseline")

# seed-sequence stream tags
_INIT, _SHUFFLE, _NOISE_INTENT, _NOISE_PREF, _ZERO_NEG = 0, 1, 2, 3, 5


def _stream_rng(seed: int, tag: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag, int(step)])))


@dataclass
class TrainConfig:
    """All hyperparameters of a run. Field names double as config-file keys."""

    k: int = 50
    d: int = 32
    l: int = 2
    intent_hidden: int = 100
    item_hidden: int = 100
    pref_hidden: int = 100
    tau_start: float = 1.0
    tau_end: float = 0.4
    tau_c: float = 0.2
    eta_max: float = 1.0
    kappa: int = 1000
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 0.001
    alpha_k: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    pretrain_epochs: int = 50
    unified_epochs: int = 100
    patience: int = 10
    seed: int = 0
    mc_samples: int = 1
    node_dropout: float = 0.1
    edge_dropout: float = 0.1
    prob_floor: float = 1e-10
    intent_min_rating: float | None = None
    include_positive_pair: bool = False
    detach_tailored: bool = False
    pref_zero_negatives: bool = False
    pref_target_raw: bool = False
    skip_pretrain: bool = False
    variant: str = "ddcf"

    def validate(self) -> None:
        if not (self.k >= self.l >= 1):
            raise UsageError(f"need K >= L >= 1, got K={self.k}, L={self.l}")
        for name in ("tau_start", "tau_end", "tau_c", "learning_rate"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lambda2", "lambda3", "lambda4", "eta_max"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.kappa < 1:
            raise UsageError(f"kappa must be >= 1, got {self.kappa}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.d < 1 or self.intent_hidden < 1 or self.pref_hidden < 1 or self.item_hidden < 1:
            raise UsageError("all layer widths must be >= 1")
        if self.pretrain_epochs < 0 or self.unified_epochs < 0:
            raise UsageError("epoch counts must be >= 0")
        if self.mc_samples < 1:
            raise UsageError(f"mc_samples must be >= 1, got {self.mc_samples}")
        for name in ("node_dropout", "edge_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise UsageError(f"{name} must lie in [0, 1], got {rate}")
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def resolve_variant(cfg: TrainConfig) -> TrainConfig:
    """Apply the variant's semantics: positives-only intent input (ddcf-n),
    no contrastive loss (ddcf-s), or the single-channel baseline."""
    out = dataclasses.replace(cfg)
    if cfg.variant == "ddcf-n":
        if out.intent_min_rating is None:
            out.intent_min_rating = 4.0
    elif cfg.variant == "ddcf-s":
        out.lambda4 = 0.0
    elif cfg.variant == "k1-baseline":
        out.k = 1
        out.l = 1
    return out


def warmup(
    step: int, kappa: int, eta_max: float, tau_start: float, tau_end: float, total_steps: int
) -> tuple[float, float]:
    """Linear KL-penalty ramp (0 -> eta_max over kappa steps) and linear
    temperature anneal (tau_start -> tau_end over total_steps, then flat)."""
    if kappa < 1:
        raise ParameterError(f"kappa must be >= 1, got {kappa}")
    eta = eta_max * min(step / kappa, 1.0)
    frac = min(step / total_steps, 1.0) if total_steps > 0 else 1.0
    tau = tau_start + (tau_end - tau_start) * frac
    return eta, tau


@dataclass
class TrainerState:
    cfg: TrainConfig
    n_users: int
    n_items: int
    intent: IntentModel
    pref: PreferenceModel
    prior: LaplacePrior
    opt: Adam
    epoch: int = 0
    global_batch: int = 0
    best_val: float = -np.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    tau: float = 1.0
    eta: float = 0.0
    history: list = field(default_factory=list)

    def parameters(self, stage: str):
        if stage == "pretrain":
            return self.intent.parameters()
        return self.intent.parameters() + self.pref.parameters()

    def all_parameters(self):
        return self.intent.parameters() + self.pref.parameters()


def build_state(cfg: TrainConfig, n_users: int, n_items: int) -> TrainerState:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(cfg.seed), _INIT])))
    intent = init_intent_model(n_items, cfg.k, cfg.intent_hidden, cfg.item_hidden, rng)
    pref = init_preference_model(n_items, cfg.d, cfg.pref_hidden, rng)
    # softmax-basis Dirichlet approximation needs K >= 2; the single-channel
    # baseline falls back to a unit Gaussian (gamma is identically 1 anyway)
    prior = laplace_prior(np.full(cfg.k, cfg.alpha_k)) if cfg.k >= 2 else standard_prior(1)
    return TrainerState(cfg, n_users, n_items, intent, pref, prior, Adam(cfg.learning_rate), tau=cfg.tau_start)


def _zero_negative_mask(obs: np.ndarray, step: int, seed: int) -> np.ndarray:
    """Widen the reconstruction mask with one sampled unobserved item per
    observed item (zero targets)."""
    rng = _stream_rng(seed, _ZERO_NEG, step)
    out = obs.copy()
    for r in range(obs.shape[0]):
        unobs = np.flatnonzero(obs[r] == 0)
        n = int(obs[r].sum())
        if n == 0 or unobs.size == 0:
            continue
        pick = rng.choice(unobs, size=min(n, unobs.size), replace=False)
        out[r, pick] = 1.0
    return out


@dataclass
class BatchLosses:
    total: Tensor
    l1: Tensor
    l2: Tensor
    l3: Tensor | None
    l4: Tensor | None
    kl_intent: Tensor
    kl_pref: Tensor | None

    def scalars(self) -> dict:
        out = {
            "l1": self.l1.item(),
            "l2": self.l2.item(),
            "l3": self.l3.item() if self.l3 is not None else 0.0,
            "l4": self.l4.item() if self.l4 is not None else 0.0,
            "kl_intent": self.kl_intent.item(),
            "kl_pref": self.kl_pref.item() if self.kl_pref is not None else 0.0,
        }
        out["total"] = self.total.item()
        return out


def compute_batch_losses(
    state: TrainerState,
    xb: np.ndarray,
    rb: np.ndarray,
    eta: float,
    tau: float,
    step: int,
    stage: str,
) -> BatchLosses:
    """All loss terms for one batch of users (dense binary rows xb, dense
    rating rows rb). Pretraining evaluates only the two intent terms."""
    cfg = state.cfg
    b = xb.shape[0]
    noise_i = _stream_rng(cfg.seed, _NOISE_INTENT, step).standard_normal((cfg.mc_samples, b, cfg.k))
    l1 = intent_elbo_loss(state.intent, state.prior, xb, noise_i, eta, tau, cfg.mc_samples, cfg.prob_floor)
    phi = item_intents(state.intent, tau)
    l2 = item_intent_kl_loss(phi, l1.gamma, xb, cfg.prob_floor)
    total = ad.add(l1.total, ad.mul(l2, cfg.lambda2))
    l3 = l4 = kl_pref = None

    if stage == "unified" and (cfg.lambda3 > 0 or cfg.lambda4 > 0):
        idx, _ = select_top_channels_batch(l1.gamma.data, cfg.l)
        phi_src = Tensor(phi.values) if cfg.detach_tailored else phi.phi
        tails = decompose_ratings_batch(rb, phi_src, idx)
        if cfg.lambda3 > 0:
            obs = np.repeat((rb > 0).astype(np.float64), cfg.l, axis=0)
            if cfg.pref_zero_negatives:
                obs = _zero_negative_mask(obs, step, cfg.seed)
            targets = Tensor(np.repeat(rb, cfg.l, axis=0)) if cfg.pref_target_raw else tails
            noise_p = _stream_rng(cfg.seed, _NOISE_PREF, step).standard_normal((b * cfg.l, cfg.d))
            parts3 = preference_elbo_loss(state.pref, tails, targets, obs, noise_p, eta)
            l3, kl_pref = parts3.total, parts3.kl
            total = ad.add(total, ad.mul(l3, cfg.lambda3))
        if cfg.lambda4 > 0 and b >= 2:
            aug_cfg = AugmentationConfig(cfg.node_dropout, cfg.edge_dropout, cfg.seed)
            mask = augmentation_mask((b * cfg.l, rb.shape[1]), aug_cfg, step)
            augmented = ad.l2norm_rows(ad.mul(tails, Tensor(mask)))
            u_aug, _ = encode_preference(state.pref, augmented)
            u_ori = embed_original(state.pref, rb)
            l4 = contrastive_loss(
                ContrastiveBatch(u_ori, u_aug, cfg.l, cfg.tau_c), cfg.include_positive_pair
            )
            total = ad.add(total, ad.mul(l4, cfg.lambda4))
    return BatchLosses(total, l1.total, l2, l3, l4, l1.kl, kl_pref)


@dataclass
class TrainResult:
    out_dir: str
    best_checkpoint: str
    last_checkpoint: str
    manifest_path: str
    history: list
    best_val: float
    best_epoch: int


def _effective_pretrain_epochs(cfg: TrainConfig) -> int:
    return 0 if cfg.skip_pretrain else cfg.pretrain_epochs


def run_epoch(state: TrainerState, data: SplitDataset, x_bin: BinaryMatrix, epoch: int, stage: str) -> dict:
    """One pass over the training users; returns the epoch record."""
    cfg = state.cfg
    n = state.n_users
    total_epochs = _effective_pretrain_epochs(cfg) + cfg.unified_epochs
    _, tau = warmup(epoch, cfg.kappa, cfg.eta_max, cfg.tau_start, cfg.tau_end, max(total_epochs - 1, 1))
    state.tau = tau
    perm = _stream_rng(cfg.seed, _SHUFFLE, epoch).permutation(n)
    sums = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "l4": 0.0, "kl_intent": 0.0, "kl_pref": 0.0, "total": 0.0}
    t0 = time.time()
    for lo in range(0, n, cfg.batch_size):
        users = perm[lo : lo + cfg.batch_size]
        xb = x_bin.dense(users)
        rb = data.train.dense(users)
        eta, _ = warmup(state.global_batch, cfg.kappa, cfg.eta_max, cfg.tau_start, cfg.tau_end,
                        max(total_epochs - 1, 1))
        state.eta = eta
        losses = compute_batch_losses(state, xb, rb, eta, tau, state.global_batch, stage)
        scalars = losses.scalars()
        if not np.isfinite(scalars["total"]):
            raise TrainingError(
                f"non-finite loss at batch {state.global_batch} (epoch {epoch}, stage {stage}): "
                + ", ".join(f"{k}={v:.6g}" for k, v in scalars.items())
            )
        params = state.parameters(stage)
        grads = ad.gradients(losses.total, params)
        state.opt.step(params, grads)
        state.global_batch += 1
        for key in sums:
            sums[key] += scalars.get(key, 0.0)
    record = {
        "epoch": epoch,
        "stage": stage,
        "eta": state.eta,
        "tau": state.tau,
        "seconds": round(time.time() - t0, 3),
        "kl_intent_per_user": sums["kl_intent"] / n,
        "kl_pref_per_user": sums["kl_pref"] / n,
    }
    for key in ("l1", "l2", "l3", "l4", "total"):
        record[key] = sums[key]
    return record


def validation_recall_at_10(state: TrainerState, data: SplitDataset) -> float:
    scorer = Scorer(state.intent, state.pref, state.cfg.l, state.tau, state.cfg.intent_min_rating)
    report = evaluate(scorer, dataclasses.replace(data, test=data.valid), cutoffs=(10,))
    return report.values["recall"][10]


def train(
    data: SplitDataset,
    cfg: TrainConfig,
    out_dir: str,
    resume_from: str | None = None,
    log=None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Full two-stage run: pretrain the intent networks, then optimize the
    unified loss with per-epoch validation, best-checkpoint retention and
    early stopping. Deterministic given (config, seed).

    stop_after_epoch interrupts at an epoch boundary without changing the
    schedules; resuming from last.ckpt continues the identical trajectory.
    """
    os.makedirs(out_dir, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        cfg = state.cfg
        if state.n_items != data.train.n_items or state.n_users != data.train.n_users:
            raise CheckpointError(
                f"checkpoint was trained on N={state.n_users}, M={state.n_items}; "
                f"dataset has N={data.train.n_users}, M={data.train.n_items}"
            )
    else:
        cfg = resolve_variant(cfg)
        cfg.validate()
        state = build_state(cfg, data.train.n_users, data.train.n_items)
    x_bin = binarize(data.train, cfg.intent_min_rating)
    eff_pre = _effective_pretrain_epochs(cfg)
    total_epochs = eff_pre + cfg.unified_epochs
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    t_start = time.time()
    stopped_early = False
    for epoch in range(state.epoch, total_epochs):
        stage = "pretrain" if epoch < eff_pre else "unified"
        record = run_epoch(state, data, x_bin, epoch, stage)
        if stage == "unified":
            val = validation_recall_at_10(state, data)
            record["val_recall_at_10"] = val
            if val > state.best_val:
                state.best_val = val
                state.best_epoch = epoch
                state.bad_epochs = 0
                state.epoch = epoch + 1
                save_checkpoint(best_path, state)
            else:
                state.bad_epochs += 1
        state.epoch = epoch + 1
        state.history.append(record)
        save_checkpoint(last_path, state)
        if log is not None:
            log(record)
        if stage == "unified" and state.bad_epochs >= cfg.patience:
            stopped_early = True
            break
        if stop_after_epoch is not None and state.epoch >= stop_after_epoch:
            break
    if not os.path.exists(best_path):
        # pretrain-only runs still expose a usable checkpoint
        save_checkpoint(best_path, state)
    manifest = _write_manifest(state, out_dir, time.time() - t_start, stopped_early, resume_from)
    return TrainResult(out_dir, best_path, last_path, manifest, state.history, state.best_val, state.best_epoch)


def _write_manifest(state: TrainerState, out_dir: str, wall: float, stopped_early: bool,
                    resume_from: str | None) -> str:
    cfg = state.cfg
    lines = [
        "run manifest",
        f"config_hash: {cfg.config_hash()}",
        f"seed: {cfg.seed}",
        f"variant: {cfg.variant}",
        f"users: {state.n_users}",
        f"items: {state.n_items}",
        f"config: {json.dumps(cfg.to_dict(), sort_keys=True)}",
    ]
    if cfg.skip_pretrain:
        lines.append("warning: pretraining skipped; joint training may converge to a poor local optimum")
    if resume_from:
        lines.append(f"resumed_from: {resume_from}")
    lines.append("epochs:")
    header = ["epoch", "stage", "l1", "l2", "l3", "l4", "kl_intent/u", "kl_pref/u", "val_r@10", "eta", "tau", "secs"]
    lines.append("  " + "  ".join(header))
    for r in state.history:
        row = [
            str(r["epoch"]), r["stage"],
            f"{r['l1']:.2f}", f"{r['l2']:.2f}", f"{r['l3']:.2f}", f"{r['l4']:.4f}",
            f"{r['kl_intent_per_user']:.4f}", f"{r['kl_pref_per_user']:.4f}",
            f"{r.get('val_recall_at_10', float('nan')):.4f}",
            f"{r['eta']:.3f}", f"{r['tau']:.3f}", f"{r['seconds']:.1f}",
        ]
        lines.append("  " + "  ".join(row))
    if stopped_early:
        lines.append(f"early_stop: no val improvement for {cfg.patience} epochs")
    lines.append(f"best_epoch: {state.best_epoch}")
    lines.append(f"best_val_recall_at_10: {state.best_val if np.isfinite(state.best_val) else 'n/a'}")
    lines.append(f"wall_clock_seconds: {wall:.1f}")
    path = os.path.join(out_dir, "run_manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as fh:
        json.dump(state.history, fh, indent=1, sort_keys=True)
    return path


# checkpoint format: magic, version, u64 header length, JSON header,
# concatenated little-endian float64 arrays, footer magic
_MAGIC = b"ICF1"
_FOOTER = b"ICFE"
_VERSION = 1


def _collect_arrays(state: TrainerState) -> dict[str, np.ndarray]:
    arrays = {p.name: p.data for p in state.all_parameters()}
    arrays["prior.mu"] = state.prior.mu
    arrays["prior.var"] = state.prior.sigma_diag
    arrays["prior.alpha"] = state.prior.alpha
    arrays.update(state.opt.state_arrays())
    return arrays


def save_checkpoint(path: str, state: TrainerState) -> None:
    """Atomic versioned binary checkpoint; byte-deterministic for a given
    state (no timestamps)."""
    arrays = _collect_arrays(state)
    spec = []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        spec.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "format": "intentcf.checkpoint",
        "version": _VERSION,
        "k": state.cfg.k,
        "d": state.cfg.d,
        "l": state.cfg.l,
        "m": state.n_items,
        "n": state.n_users,
        "config": state.cfg.to_dict(),
        "counters": {
            "epoch": state.epoch,
            "global_batch": state.global_batch,
            "adam_t": state.opt.t,
            "best_val": None if not np.isfinite(state.best_val) else state.best_val,
            "best_epoch": state.best_epoch,
            "bad_epochs": state.bad_epochs,
            "tau": state.tau,
            "eta": state.eta,
        },
        "rng": {"seed": state.cfg.seed, "scheme": "counter-based (seed, stream, step)"},
        "arrays": spec,
        "payload_bytes": offset,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for entry in spec:
            fh.write(np.ascontiguousarray(arrays[entry["name"]]).astype("<f8").tobytes())
        fh.write(_FOOTER)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> TrainerState:
    """Strict inverse of save_checkpoint; every failure names the section."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise CheckpointError("bad magic: not an intentcf checkpoint")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {_VERSION})")
    hlen = struct.unpack("<Q", raw[8:16])[0]
    if len(raw) < 16 + hlen:
        raise CheckpointError("header truncated")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"header corrupt: {exc}") from None
    payload_start = 16 + hlen
    payload_bytes = header.get("payload_bytes")
    expected = payload_start + payload_bytes + len(_FOOTER)
    if len(raw) < expected:
        raise CheckpointError(
            f"payload truncated: file has {len(raw)} bytes, expected {expected}"
        )
    if raw[payload_start + payload_bytes : expected] != _FOOTER:
        raise CheckpointError("footer missing or corrupt")
    try:
        cfg = TrainConfig.from_dict(header["config"])
    except (KeyError, TypeError, UsageError) as exc:
        raise CheckpointError(f"config section invalid: {exc}") from None
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + entry["offset"]
        stop = start + count * 8
        if stop > payload_start + payload_bytes:
            raise CheckpointError(f"array {entry['name']!r} extends past the payload")
        arrays[entry["name"]] = np.frombuffer(raw[start:stop], dtype="<f8").astype(np.float64).reshape(shape)

    state = build_state(cfg, header["n"], header["m"])
    for p in state.all_parameters():
        if p.name not in arrays:
            raise CheckpointError(f"array {p.name!r} missing from checkpoint")
        if arrays[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"array {p.name!r} has shape {arrays[p.name].shape}, model expects {p.data.shape}"
            )
        p.data = arrays[p.name].copy()
    for name in ("prior.mu", "prior.var", "prior.alpha"):
        if name not in arrays:
            raise CheckpointError(f"array {name!r} missing from checkpoint")
    state.prior = LaplacePrior(arrays["prior.alpha"].copy(), arrays["prior.mu"].copy(), arrays["prior.var"].copy())
    counters = header["counters"]
    state.opt.load_state_arrays(arrays, counters["adam_t"])
    state.epoch = counters["epoch"]
    state.global_batch = counters["global_batch"]
    state.best_val = -np.inf if counters["best_val"] is None else counters["best_val"]
    state.best_epoch = counters["best_epoch"]
    state.bad_epochs = counters["bad_epochs"]
    state.tau = counters["tau"]
    state.eta = counters["eta"]
    return state


def scorer_from_state(state: TrainerState) -> Scorer:
    return Scorer(state.intent, state.pref, state.cfg.l, state.tau, state.cfg.intent_min_rating)
