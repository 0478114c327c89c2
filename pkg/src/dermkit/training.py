"""Dual-distillation training: MSE distillation, masked biased cross-entropy,
the cosine weight schedule, the combined objective, the frozen-backbone
training step, and finite-difference gradient verification.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import Tensor

from .adapter import AdapterParams, apply_bias, compute_vocab_bias, image_summary, project_student
from .backbone import ToyBackbone

CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A training step produced a non-finite loss; parameters were left
    untouched."""


@dataclass
class SupervisionItem:
    """One training example: image, teacher embedding, prompt, masked target."""

    image: Tensor
    teacher: Tensor
    prompt_tokens: list[int]
    target_tokens: list[int]
    mask: list[int]

    def __post_init__(self) -> None:
        if len(self.mask) != len(self.target_tokens):
            raise ValueError("mask length must equal target length")
        if sum(self.mask) < 1:
            raise ValueError("each item needs at least one supervised position")


@dataclass
class ScheduleState:
    step: int
    t_max: int
    s: float
    r: float
    lambda_sft: float
    lambda_d: float
    bump_enabled: bool


@dataclass
class LossReport:
    step: int
    loss_sft: float
    loss_distill: float
    total: float
    lambda_sft: float
    lambda_d: float
    grad_norm_adapters: float
    backbone_digest: str

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def schedule_weights(step: int, t_max: int, bump: bool = False) -> ScheduleState:
    """Progress-dependent loss weights.

    r(s) = 0.5 * (1 - cos(pi * clip((s - 0.10) / 0.60, 0, 1)))
    lambda_sft = 0.6 + 0.4 * (1 - r)           in [0.6, 1.0]
    lambda_d   = 0.05 + 0.30 * r               in [0.05, 0.35]

    With the bump enabled and s > 0.95 the pair is pinned to (0.70, 0.30).
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not 0 <= step <= t_max:
        raise ValueError(f"step {step} outside [0, {t_max}]")
    s = step / t_max
    r = 0.5 * (1.0 - math.cos(math.pi * min(max((s - 0.10) / 0.60, 0.0), 1.0)))
    lambda_sft = 0.6 + 0.4 * (1.0 - r)
    lambda_d = 0.05 + 0.30 * r
    if bump and s > 0.95:
        lambda_sft, lambda_d = 0.70, 0.30
    return ScheduleState(
        step=step, t_max=t_max, s=s, r=r,
        lambda_sft=lambda_sft, lambda_d=lambda_d, bump_enabled=bump,
    )


def loss_distill(z_batch: Tensor, t_batch: Tensor) -> Tensor:
    """Mean over the batch of squared L2 distance between student projection
    and teacher embedding."""
    if z_batch.shape != t_batch.shape or z_batch.ndim != 2:
        raise ValueError(
            f"student/teacher batches must share [B, D_t], got "
            f"{tuple(z_batch.shape)} vs {tuple(t_batch.shape)}"
        )
    return ((z_batch - t_batch) ** 2).sum(dim=1).mean()


def _item_biased_ce(item: SupervisionItem, backbone: ToyBackbone, params: AdapterParams) -> Tensor:
    """Per-item masked cross-entropy with the vocabulary bias applied at
    supervised positions. The bias is computed once per image."""
    vocab = backbone.vocab_size
    for tok in item.target_tokens:
        if not 0 <= tok < vocab:
            raise ValueError(f"target token id {tok} outside vocabulary of size {vocab}")
    summary = image_summary(item.image.to(params.gate_alpha.dtype), params)
    bias = compute_vocab_bias(summary, backbone, params)

    seq = torch.tensor(item.prompt_tokens + item.target_tokens, dtype=torch.long)
    logits = backbone.logits(seq)  # frozen; no grad path
    n_prompt = len(item.prompt_tokens)
    losses = []
    for t, target in enumerate(item.target_tokens):
        if item.mask[t] != 1:
            continue
        step_logits = apply_bias(logits[n_prompt - 1 + t], bias, params.gate_alpha, 1)
        losses.append(-torch.log_softmax(step_logits, dim=-1)[target])
    return torch.stack(losses).mean()


def _batched_biased_ce(
    batch: Sequence[SupervisionItem], backbone: ToyBackbone, params: AdapterParams
) -> Tensor:
    """Vectorized equivalent of the per-item path for uniform-length batches."""
    dtype = params.gate_alpha.dtype
    vocab = backbone.vocab_size
    for item in batch:
        for tok in item.target_tokens:
            if not 0 <= tok < vocab:
                raise ValueError(f"target token id {tok} outside vocabulary of size {vocab}")
    from .adapter import encode_patches, partition_patches

    grids = torch.stack(
        [partition_patches(item.image.to(dtype), params.dims.patch_size) for item in batch]
    )
    b, n, width = grids.shape
    feats = encode_patches(grids.reshape(b * n, width), params).reshape(b, n, -1)
    summaries = params.summary_proj(feats.mean(dim=1))
    biases = params.lowrank_up(params.lowrank_down(summaries)) @ backbone.w_lm

    seqs = torch.tensor(
        [item.prompt_tokens + item.target_tokens for item in batch], dtype=torch.long
    )
    logits = backbone.logits(seqs)
    n_prompt = len(batch[0].prompt_tokens)
    t_len = len(batch[0].target_tokens)
    step_logits = logits[:, n_prompt - 1 : n_prompt - 1 + t_len, :]
    masks = torch.tensor([item.mask for item in batch], dtype=dtype)
    biased = step_logits + params.gate_alpha * masks.unsqueeze(-1) * biases.unsqueeze(1)
    targets = torch.tensor([item.target_tokens for item in batch], dtype=torch.long)
    ce = -torch.log_softmax(biased, dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    per_item = (ce * masks).sum(dim=1) / masks.sum(dim=1)
    return per_item.mean()


def loss_sft_biased(
    batch: Sequence[SupervisionItem], backbone: ToyBackbone, params: AdapterParams
) -> Tensor:
    """Batch mean of the per-item supervised cross-entropy over biased logits."""
    if not batch:
        raise ValueError("empty batch")
    uniform = (
        len({len(i.prompt_tokens) for i in batch}) == 1
        and len({len(i.target_tokens) for i in batch}) == 1
        and len({tuple(i.image.shape) for i in batch}) == 1
        and len(batch) > 1
    )
    if uniform:
        return _batched_biased_ce(batch, backbone, params)
    return torch.stack([_item_biased_ce(item, backbone, params) for item in batch]).mean()


def total_loss(sft: float | Tensor, distill: float | Tensor, sched: ScheduleState) -> float | Tensor:
    return sched.lambda_sft * sft + sched.lambda_d * distill


def batch_summaries(batch: Sequence[SupervisionItem], params: AdapterParams) -> tuple[Tensor, Tensor]:
    """Stack student projections and teacher embeddings for a batch."""
    dtype = params.gate_alpha.dtype
    z_rows = [
        project_student(image_summary(item.image.to(dtype), params), params) for item in batch
    ]
    t_rows = [item.teacher.to(dtype) for item in batch]
    return torch.stack(z_rows), torch.stack(t_rows)


def lr_multiplier(step: int, t_max: int, warmup_frac: float = 0.05) -> float:
    """Linear warm-up over the first warmup_frac of training, then cosine
    decay to zero at t_max. Applied to the optimizer learning rate."""
    warmup_steps = max(1, int(round(warmup_frac * t_max)))
    if step < warmup_steps:
        return (step + 1) / warmup_steps
    progress = (step - warmup_steps) / max(1, t_max - warmup_steps)
    return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class TrainState:
    params: AdapterParams
    optimizer: torch.optim.Optimizer
    t_max: int
    bump: bool
    base_lr: float
    warmup_frac: float
    step: int = 0
    backbone_digest: str = ""
    history: list[LossReport] = field(default_factory=list, repr=False)


def make_train_state(
    params: AdapterParams,
    backbone: ToyBackbone,
    t_max: int,
    bump: bool = False,
    base_lr: float = 2e-4,
    warmup_frac: float = 0.05,
    weight_decay: float = 0.01,
) -> TrainState:
    optimizer = torch.optim.AdamW(params.parameters(), lr=base_lr, weight_decay=weight_decay)
    return TrainState(
        params=params,
        optimizer=optimizer,
        t_max=t_max,
        bump=bump,
        base_lr=base_lr,
        warmup_frac=warmup_frac,
        backbone_digest=backbone.digest(),
    )


def train_step(state: TrainState, batch: Sequence[SupervisionItem], backbone: ToyBackbone) -> LossReport:
    """One optimization step of the combined objective. Gradients reach only
    the adapter parameters; the backbone digest is asserted unchanged."""
    sched = schedule_weights(min(state.step, state.t_max), state.t_max, state.bump)
    z_batch, t_batch = batch_summaries(batch, state.params)
    l_distill = loss_distill(z_batch, t_batch)
    l_sft = loss_sft_biased(batch, backbone, state.params)
    total = total_loss(l_sft, l_distill, sched)

    if not torch.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}: "
            f"sft={float(l_sft)!r} distill={float(l_distill)!r}; step aborted"
        )

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    grad_sq = 0.0
    for p in state.params.parameters():
        if p.grad is not None:
            grad_sq += float((p.grad.detach() ** 2).sum())
    lr = state.base_lr * lr_multiplier(state.step, state.t_max, state.warmup_frac)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1

    digest = backbone.digest()
    if digest != state.backbone_digest:
        raise RuntimeError("backbone parameters changed during train_step")

    sft_val, distill_val = float(l_sft.detach()), float(l_distill.detach())
    report = LossReport(
        step=state.step,
        loss_sft=sft_val,
        loss_distill=distill_val,
        total=sched.lambda_sft * sft_val + sched.lambda_d * distill_val,
        lambda_sft=sched.lambda_sft,
        lambda_d=sched.lambda_d,
        grad_norm_adapters=math.sqrt(grad_sq),
        backbone_digest=digest,
    )
    state.history.append(report)
    return report


def write_run_log(history: Sequence[LossReport], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for report in history:
            fh.write(report.to_json() + "\n")


def gradcheck(
    loss_fn: Callable[[AdapterParams], Tensor],
    params: AdapterParams,
    epsilon: float = 1e-5,
) -> float:
    """Compare the analytic gradient of every adapter coordinate against
    central finite differences (f(x+eps) - f(x-eps)) / (2 eps).

    Returns the worst relative error, where each coordinate's error is
    |analytic - fd| / max(|analytic|, |fd|, 0.01); the 0.01 floor keeps
    finite-difference roundoff on dead coordinates from dominating.
    Parameters must be 64-bit.
    """
    for p in params.parameters():
        if p.dtype != torch.float64:
            raise ValueError("gradcheck requires float64 parameters")

    loss = loss_fn(params)
    grads = torch.autograd.grad(loss, list(params.parameters()), allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params.parameters(), grads):
            analytic = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + epsilon
                f_plus = float(loss_fn(params))
                flat[i] = orig - epsilon
                f_minus = float(loss_fn(params))
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * epsilon)
                a = float(analytic.view(-1)[i])
                rel = abs(a - fd) / max(abs(a), abs(fd), 0.01)
                worst = max(worst, rel)
    return worst


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "params": state.params.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "schedule": {"step": state.step, "t_max": state.t_max, "bump": state.bump},
            "base_lr": state.base_lr,
            "warmup_frac": state.warmup_frac,
            "backbone_digest": state.backbone_digest,
        },
        path,
    )


def load_checkpoint(path: str | Path, params: AdapterParams, backbone: ToyBackbone) -> TrainState:
    blob = torch.load(Path(path), weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    if blob["backbone_digest"] != backbone.digest():
        raise ValueError("checkpoint was trained against a different backbone")
    params.load_state_dict(blob["params"])
    state = make_train_state(
        params,
        backbone,
        t_max=blob["schedule"]["t_max"],
        bump=blob["schedule"]["bump"],
        base_lr=blob["base_lr"],
        warmup_frac=blob["warmup_frac"],
    )
    state.optimizer.load_state_dict(blob["optimizer"])
    state.step = blob["schedule"]["step"]
    return state
