"""Semi-supervised objective: likelihood, adversarial and virtual adversarial losses."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .model import Batch, Endemic, save_checkpoint

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

LogitsFn = Callable[[Mapping[str, torch.Tensor]], torch.Tensor]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good_state: Optional[dict] = None, epoch: int = -1):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.epoch = epoch


class NumericAbort(FloatingPointError):
    pass


@dataclass
class LossConfig:
    lambda_ml: float = 1.0
    lambda_at: float = 1.0
    lambda_vat: float = 1.0
    eps_at: float = 2.0
    eps_vat: float = 2.0
    xi: float = 1e-6
    power_iters: int = 1
    adv_all_inputs: bool = False

    def __post_init__(self):
        for name in ("lambda_ml", "lambda_at", "lambda_vat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.eps_at <= 0 or self.eps_vat <= 0 or self.xi <= 0:
            raise ValueError("perturbation radii and xi must be positive")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")

    @property
    def perturbed_keys(self) -> tuple[str, ...]:
        from .model import CONTINUOUS_INPUTS

        return CONTINUOUS_INPUTS if self.adv_all_inputs else ("word_emb",)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    divergence_threshold: float = 1e6
    stop_at_accuracy: Optional[float] = None


class ClampCounter:
    """How many probabilities were raised to the floor inside :func:`ml_loss`."""

    count = 0


def ml_loss(probs, labels) -> torch.Tensor:
    """Mean negative log-likelihood of ``labels`` under ``probs``."""
    probs = torch.as_tensor(probs, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    probs = probs.reshape(len(labels), -1)
    picked = probs[torch.arange(len(labels)), labels]
    low = picked < PROB_FLOOR
    if bool(low.any()):
        ClampCounter.count += int(low.sum())
        log.warning("ml_loss: %d probabilities clamped to %g", int(low.sum()), PROB_FLOOR)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def _example_norm(tensors: Sequence[torch.Tensor]) -> torch.Tensor:
    """Per-example L2 norm taken jointly over all tensors (batch dim first)."""
    sq = sum(t.reshape(t.shape[0], -1).pow(2).sum(-1) for t in tensors)
    return torch.sqrt(sq)


def _normalize(tensors: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    norm = _example_norm(tensors)
    safe = torch.where(norm > 0, norm, torch.ones_like(norm))
    out = []
    for t in tensors:
        shape = (-1,) + (1,) * (t.dim() - 1)
        scale = torch.where(norm > 0, 1.0 / safe, torch.zeros_like(norm)).reshape(shape)
        out.append(t * scale)
    return out


def at_perturbation(grad, eps: float):
    """``eps * g / ||g||`` per example; zero gradient gives zero perturbation.

    ``grad`` is a tensor with a leading batch dimension, or a dict of such
    tensors normalised jointly.
    """
    if isinstance(grad, Mapping):
        keys = list(grad)
        scaled = _normalize([grad[k].detach() for k in keys])
        return {k: eps * v for k, v in zip(keys, scaled)}
    return eps * _normalize([grad.detach()])[0]


def kl_from_logits(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """Per-example KL(p || q)."""
    logp = F.log_softmax(p_logits, dim=-1)
    logq = F.log_softmax(q_logits, dim=-1)
    return (logp.exp() * (logp - logq)).sum(-1)


def vat_direction(
    logits_fn: LogitsFn,
    inputs: Mapping[str, torch.Tensor],
    keys: Sequence[str],
    cfg: LossConfig,
    generator: Optional[torch.Generator] = None,
    p_logits: Optional[torch.Tensor] = None,
) -> dict[str, torch.Tensor]:
    """Adversarial direction by finite-difference power iteration, scaled to ``eps_vat``."""
    base = {k: v.detach() for k, v in inputs.items()}
    if p_logits is None:
        with torch.no_grad():
            p_logits = logits_fn(base)
    p_logits = p_logits.detach()
    d = [torch.randn(base[k].shape, generator=generator, dtype=base[k].dtype) for k in keys]
    d = _normalize(d)
    for _ in range(cfg.power_iters):
        d = [x.clone().requires_grad_(True) for x in d]
        shifted = dict(base)
        for k, x in zip(keys, d):
            shifted[k] = base[k] + cfg.xi * x
        kl = kl_from_logits(p_logits, logits_fn(shifted)).sum()
        grads = torch.autograd.grad(kl, d, allow_unused=True)
        grads = [torch.zeros_like(x) if g is None else g for x, g in zip(d, grads)]
        d = _normalize([g.detach() for g in grads])
    return {k: cfg.eps_vat * x for k, x in zip(keys, d)}


def vat_loss(
    logits_fn: LogitsFn,
    inputs: Mapping[str, torch.Tensor],
    cfg: LossConfig,
    generator: Optional[torch.Generator] = None,
    keys: Optional[Sequence[str]] = None,
) -> torch.Tensor:
    """Mean KL between predictions at ``x`` (held constant) and at ``x + r_adv``.

    Does not need labels. Raises :class:`NumericAbort` on a non-finite value.
    """
    keys = list(keys if keys is not None else cfg.perturbed_keys)
    with torch.no_grad():
        p_logits = logits_fn({k: v.detach() for k, v in inputs.items()})
    r = vat_direction(logits_fn, inputs, keys, cfg, generator, p_logits)
    perturbed = dict(inputs)
    for k in keys:
        perturbed[k] = inputs[k] + r[k]
    loss = kl_from_logits(p_logits, logits_fn(perturbed)).mean()
    if not torch.isfinite(loss):
        raise NumericAbort(f"non-finite VAT loss {loss.item()} (batch of {p_logits.shape[0]})")
    return loss.clamp_min(0.0)


def at_loss(
    logits_fn: LogitsFn,
    inputs: Mapping[str, torch.Tensor],
    labels: torch.Tensor,
    cfg: LossConfig,
    keys: Optional[Sequence[str]] = None,
) -> torch.Tensor:
    """Cross-entropy at inputs shifted by ``eps_at`` along the loss gradient."""
    keys = list(keys if keys is not None else cfg.perturbed_keys)
    probe = {k: v.detach().requires_grad_(k in keys) for k, v in inputs.items()}
    loss = F.cross_entropy(logits_fn(probe), labels)
    grads = torch.autograd.grad(loss, [probe[k] for k in keys], allow_unused=True)
    grads = {k: torch.zeros_like(probe[k]) if g is None else g for k, g in zip(keys, grads)}
    r = at_perturbation(grads, cfg.eps_at)
    perturbed = dict(inputs)
    for k in keys:
        perturbed[k] = inputs[k] + r[k]
    return F.cross_entropy(logits_fn(perturbed), labels)


def objective(
    model: Endemic,
    batch: Batch,
    cfg: LossConfig,
    generator: Optional[torch.Generator] = None,
) -> dict[str, torch.Tensor]:
    """Loss parts and their weighted total for one batch.

    ML and AT use the labelled rows only; VAT uses every row. A part whose
    weight is zero is not computed (it is reported as 0), so its random
    draws are not consumed either.
    """
    zero = torch.zeros((), dtype=torch.float64)
    labelled = batch.labels >= 0
    parts = {"ml": zero, "at": zero, "vat": zero}
    inputs = model.continuous_inputs(batch)

    def train_logits(x):
        return model.logits_from(x, train=True, generator=generator)

    def eval_logits(x):
        return model.logits_from(x, train=False)

    if bool(labelled.any()) and (cfg.lambda_ml > 0 or cfg.lambda_at > 0):
        idx = torch.nonzero(labelled).reshape(-1)
        lab_inputs = {k: v[idx] for k, v in inputs.items()}
        y = batch.labels[idx]
        if cfg.lambda_ml > 0:
            parts["ml"] = F.cross_entropy(train_logits(lab_inputs), y)
        if cfg.lambda_at > 0:
            parts["at"] = at_loss(train_logits, lab_inputs, y, cfg)
    if cfg.lambda_vat > 0 and len(batch) > 0:
        parts["vat"] = vat_loss(eval_logits, inputs, cfg, generator)
    parts["total"] = cfg.lambda_ml * parts["ml"] + cfg.lambda_at * parts["at"] + cfg.lambda_vat * parts["vat"]
    return parts


@torch.no_grad()
def accuracy(model: Endemic, batch: Batch) -> float:
    labelled = batch.labels >= 0
    if not bool(labelled.any()):
        return float("nan")
    pred = model.logits(batch).argmax(-1)
    return float((pred[labelled] == batch.labels[labelled]).double().mean())


def batch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    model: Endemic
    history: list[dict]
    epochs_run: int


LOG_COLUMNS = ("epoch", "L_ML", "L_AT", "L_VAT", "total", "train_acc")


def train(
    model: Endemic,
    data: Batch,
    cfg: TrainConfig = TrainConfig(),
    checkpoint_dir=None,
    log_path=None,
) -> TrainResult:
    """Optimise ``model`` in place on ``data`` (labelled and unlabelled rows).

    Contextual-feature statistics are fitted on ``data`` first. Batch order
    and dropout/VAT noise derive from ``cfg.seed`` only, so a fixed seed gives
    a bit-identical loss trajectory. With ``checkpoint_dir`` the model is
    saved after every epoch. Raises :class:`TrainingDiverged` carrying the
    last good state if the epoch loss exceeds the divergence threshold.
    """
    if not bool((data.labels >= 0).any()):
        raise ValueError("training data needs at least one labelled tweet")
    raw = torch.cat([data.tweet_feats, data.user_feats], dim=-1).numpy()
    model.context.standardizer.fit(raw)

    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history: list[dict] = []
    last_good = copy.deepcopy(model.state_dict())
    log_fh = open(log_path, "w", newline="") if log_path else None
    writer = csv.writer(log_fh) if log_fh else None
    if writer:
        writer.writerow(LOG_COLUMNS)
    epoch = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            sums = {"ml": 0.0, "at": 0.0, "vat": 0.0, "total": 0.0}
            chunks = batch_order(len(data), cfg.batch_size, rng)
            for chunk in chunks:
                parts = objective(model, data.select(chunk.tolist()), cfg.loss, gen)
                total = parts["total"]
                value = float(total.detach())
                if not np.isfinite(value) or value > cfg.divergence_threshold:
                    raise TrainingDiverged(
                        f"epoch {epoch}: loss {value:.4g} exceeds {cfg.divergence_threshold:g}",
                        last_good,
                        epoch,
                    )
                opt.zero_grad()
                if total.requires_grad:
                    total.backward()
                    bad = [n for n, p in model.named_parameters() if p.grad is not None and not torch.isfinite(p.grad).all()]
                    if bad:
                        raise TrainingDiverged(f"epoch {epoch}: non-finite gradients in {bad}", last_good, epoch)
                    opt.step()
                for k in sums:
                    sums[k] += float(parts[k].detach())
            model.eval()
            row = {
                "epoch": epoch,
                "L_ML": sums["ml"] / len(chunks),
                "L_AT": sums["at"] / len(chunks),
                "L_VAT": sums["vat"] / len(chunks),
                "total": sums["total"] / len(chunks),
                "train_acc": accuracy(model, data),
            }
            history.append(row)
            last_good = copy.deepcopy(model.state_dict())
            if writer:
                writer.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in LOG_COLUMNS])
            if checkpoint_dir is not None:
                save_checkpoint(model, checkpoint_dir, {"epoch": epoch, "seed": cfg.seed})
            log.info("epoch %d total %.4f acc %.3f", epoch, row["total"], row["train_acc"])
            if cfg.stop_at_accuracy is not None and row["train_acc"] >= cfg.stop_at_accuracy:
                break
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return TrainResult(model, history, epoch)

