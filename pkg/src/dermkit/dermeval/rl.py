"""Score-oriented REINFORCE training for the evaluator.

Stage 1 teaches a toy autoregressive policy to emit the canonical score
block via token cross-entropy; stage 2 aligns the emitted scores with
physician annotations by policy gradient. The reward is the negative mean
squared error over the six dimensions, centered by an exponential moving
average baseline; gradients reach only generated tokens through a
teacher-forced pass over each sampled sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .evalformat import DIMENSIONS, ParseFailure, ScoreVector, SCORE_HEADER, parse_eval

PARSE_FAILURE_REWARD = -16.0  # worst case: every dimension off by the full 4-point span

# Token vocabulary for the toy evaluator: one header token, one token per
# dimension label, one per representable score value, and a terminator.
SCORE_GRID = [round(1.0 + 0.1 * i, 1) for i in range(41)]
HEADER_TOKEN = SCORE_HEADER + "\n"
LABEL_TOKENS = [f"{dim}: " for dim in DIMENSIONS]
SCORE_TOKENS = [f"{v:.1f}\n" for v in SCORE_GRID]
EOS_TOKEN = ""
VOCAB: list[str] = [HEADER_TOKEN, *LABEL_TOKENS, *SCORE_TOKENS, EOS_TOKEN]
SEQ_LEN = 2 + 2 * len(DIMENSIONS)  # header, six (label, score) pairs, EOS

_SCORE_TOKEN_BASE = 1 + len(LABEL_TOKENS)
_EOS_ID = len(VOCAB) - 1
# positions whose token is fixed by the format (everything but the scores)
STRUCTURAL_POSITIONS = [0] + [1 + 2 * d for d in range(len(DIMENSIONS))] + [SEQ_LEN - 1]


@dataclass(frozen=True)
class RLState:
    """EMA reward baseline plus the positive loss-combination weights."""

    baseline: float = 0.0
    decay: float = 0.99
    w_rl: float = 1.0
    w_text: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.w_rl <= 0 or self.w_text < 0:
            raise ValueError("w_rl must be positive and w_text nonnegative")


def reward(predicted: ScoreVector, physician: ScoreVector) -> float:
    """Negative mean squared error over the six dimensions; 0 iff equal."""
    return -sum((p - g) ** 2 for p, g in zip(predicted.as_tuple(), physician.as_tuple())) / 6.0


def ema_update(state: RLState, r: float) -> RLState:
    if not (r == r and abs(r) != float("inf")):
        raise ValueError(f"non-finite reward {r!r}")
    return replace(state, baseline=state.decay * state.baseline + (1.0 - state.decay) * r)


def sor_loss(
    sampled_tokens,
    token_logprobs,
    gen_mask,
    r: float,
    state: RLState,
    text_loss,
):
    """w_rl * [-(r - baseline) * sum of generated-token logprobs] + w_text * text_loss.

    The baseline is treated as a constant; only logprobs (and the text loss)
    carry gradient. ``gen_mask`` marks generated, non-prompt positions.
    """
    if len(sampled_tokens) != len(gen_mask):
        raise ValueError("gen_mask length must match sampled token count")
    mask_total = sum(int(m) for m in gen_mask)
    if mask_total == 0:
        raise ValueError("no generated tokens to assign credit to")
    advantage = r - state.baseline
    if isinstance(token_logprobs, Tensor):
        mask = torch.as_tensor([float(m) for m in gen_mask], dtype=token_logprobs.dtype)
        logprob_sum = (token_logprobs * mask).sum()
    else:
        logprob_sum = sum(lp for lp, m in zip(token_logprobs, gen_mask) if m)
    return state.w_rl * (-advantage * logprob_sum) + state.w_text * text_loss


def score_vector_to_tokens(scores: ScoreVector) -> list[int]:
    """Canonical token sequence rendering the score block."""
    tokens = [0]
    for d, value in enumerate(scores.as_tuple()):
        idx = round((value - 1.0) / 0.1)
        if not 0 <= idx < len(SCORE_GRID) or abs(SCORE_GRID[idx] - value) > 1e-9:
            raise ValueError(f"score {value} is not on the 0.1 grid")
        tokens.append(1 + d)
        tokens.append(_SCORE_TOKEN_BASE + idx)
    tokens.append(_EOS_ID)
    return tokens


def tokens_to_text(tokens) -> str:
    return "".join(VOCAB[int(t)] for t in tokens)


class EvalPolicy(nn.Module):
    """Toy conditional generator over the evaluation-token vocabulary.

    Factorizes the sequence as per-position categoricals conditioned on the
    input features through position-private affine heads; private heads keep
    the format anchor and the policy-gradient signal from fighting over
    shared weights.
    """

    def __init__(self, feature_dim: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(
            torch.randn(SEQ_LEN, len(VOCAB), feature_dim, generator=gen) * 0.05
        )
        self.bias = nn.Parameter(torch.zeros(SEQ_LEN, len(VOCAB)))

    def forward(self, features: Tensor) -> Tensor:
        """[B, k] features -> [B, SEQ_LEN, vocab] logits."""
        return torch.einsum("bk,tvk->btv", features, self.weight) + self.bias

    def sample(self, features: Tensor, generator: torch.Generator | None = None) -> Tensor:
        with torch.no_grad():
            probs = F.softmax(self(features), dim=-1)
            flat = probs.reshape(-1, probs.shape[-1])
            draws = torch.multinomial(flat, 1, generator=generator)
            return draws.reshape(features.shape[0], SEQ_LEN)

    def greedy(self, features: Tensor) -> Tensor:
        with torch.no_grad():
            return self(features).argmax(dim=-1)

    def logprobs(self, features: Tensor, tokens: Tensor) -> Tensor:
        """Teacher-forced per-token log-probabilities of the given sequences."""
        logp = F.log_softmax(self(features), dim=-1)
        return logp.gather(-1, tokens.unsqueeze(-1)).squeeze(-1)


@dataclass
class TwoStageResult:
    policy: EvalPolicy
    stage1_epochs: int
    stage1_parse_rate: float
    reward_trajectory: list[float] = field(repr=False, default_factory=list)
    final_mean_abs_error: float = float("nan")
    final_state: RLState | None = None


def _parse_rate(policy: EvalPolicy, features: Tensor, generator: torch.Generator) -> float:
    tokens = policy.sample(features, generator=generator)
    ok = sum(
        1 for row in tokens if not isinstance(parse_eval(tokens_to_text(row)), ParseFailure)
    )
    return ok / len(tokens)


def train_format_stage(
    policy: EvalPolicy,
    corpus: list[tuple[Tensor, ScoreVector]],
    target_parse_rate: float = 0.99,
    max_epochs: int = 800,
    lr: float = 5e-2,
    holdout_frac: float = 0.25,
    seed: int = 0,
) -> tuple[int, float]:
    """Supervised cross-entropy on canonical sequences until held-out
    sampled generations parse at the target rate."""
    n_hold = max(1, int(len(corpus) * holdout_frac))
    train, held = corpus[:-n_hold], corpus[-n_hold:]
    feats = torch.stack([f for f, _ in train])
    targets = torch.tensor([score_vector_to_tokens(s) for _, s in train])
    held_feats = torch.stack([f for f, _ in held])
    opt = torch.optim.Adam(policy.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    rate = 0.0
    for epoch in range(1, max_epochs + 1):
        opt.zero_grad()
        logits = policy(feats)
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))
        loss.backward()
        opt.step()
        if epoch % 20 == 0 or epoch == max_epochs:
            rate = _parse_rate(policy, held_feats, gen)
            if rate >= target_parse_rate:
                return epoch, rate
    return max_epochs, rate


def _structural_text_loss(policy: EvalPolicy, feats: Tensor, targets: Tensor) -> Tensor:
    """Cross-entropy restricted to format-fixed positions; keeps the block
    parseable during stage 2 without dragging score tokens toward corpus
    marginals."""
    logits = policy(feats)[:, STRUCTURAL_POSITIONS, :]
    tgt = targets[:, STRUCTURAL_POSITIONS]
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1))


def train_score_stage(
    policy: EvalPolicy,
    corpus: list[tuple[Tensor, ScoreVector]],
    state: RLState,
    steps: int = 3000,
    batch_size: int = 16,
    lr: float = 1e-2,
    seed: int = 0,
    baseline_warmup: int = 128,
) -> tuple[list[float], RLState]:
    """Sampled generation + score-oriented REINFORCE updates.

    The baseline EMA is warmed on a gradient-free sample pass first so the
    earliest updates are already variance-reduced.
    """
    feats = torch.stack([f for f, _ in corpus])
    physician = [s for _, s in corpus]
    targets = torch.tensor([score_vector_to_tokens(s) for _, s in corpus])
    opt = torch.optim.Adam(policy.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    if baseline_warmup:
        idx = torch.randint(0, len(corpus), (baseline_warmup,), generator=gen)
        warm_tokens = policy.sample(feats[idx], generator=gen)
        for b in range(baseline_warmup):
            parsed = parse_eval(tokens_to_text(warm_tokens[b]))
            r = (
                PARSE_FAILURE_REWARD
                if isinstance(parsed, ParseFailure)
                else reward(parsed, physician[int(idx[b])])
            )
            state = ema_update(state, r)
    trajectory = []
    for _ in range(steps):
        idx = torch.randint(0, len(corpus), (batch_size,), generator=gen)
        batch_feats = feats[idx]
        tokens = policy.sample(batch_feats, generator=gen)
        logprobs = policy.logprobs(batch_feats, tokens)
        text_loss = _structural_text_loss(policy, batch_feats, targets[idx])
        losses = []
        batch_rewards = []
        for b in range(batch_size):
            parsed = parse_eval(tokens_to_text(tokens[b]))
            r = (
                PARSE_FAILURE_REWARD
                if isinstance(parsed, ParseFailure)
                else reward(parsed, physician[int(idx[b])])
            )
            batch_rewards.append(r)
            # text_loss is shared across the batch, so the mean below keeps
            # its weight at w_text exactly
            losses.append(sor_loss(tokens[b], logprobs[b], [1] * SEQ_LEN, r, state, text_loss))
            state = ema_update(state, r)
        opt.zero_grad()
        torch.stack(losses).mean().backward()
        opt.step()
        trajectory.append(sum(batch_rewards) / batch_size)
    return trajectory, state


def mean_abs_error(policy: EvalPolicy, corpus: list[tuple[Tensor, ScoreVector]]) -> float:
    """Greedy-decode MAE per dimension against the physician scores."""
    feats = torch.stack([f for f, _ in corpus])
    tokens = policy.greedy(feats)
    errors = []
    for b, (_, phys) in enumerate(corpus):
        parsed = parse_eval(tokens_to_text(tokens[b]))
        if isinstance(parsed, ParseFailure):
            errors.append(4.0)
            continue
        errors.append(
            sum(abs(p - g) for p, g in zip(parsed.as_tuple(), phys.as_tuple())) / 6.0
        )
    return sum(errors) / len(errors)


def two_stage_train(
    format_corpus: list[tuple[Tensor, ScoreVector]],
    scored_corpus: list[tuple[Tensor, ScoreVector]],
    policy: EvalPolicy,
    state: RLState | None = None,
    stage1_target: float = 0.99,
    stage1_max_epochs: int = 800,
    stage2_steps: int = 8000,
    stage2_batch: int = 32,
    stage2_lr: float = 1e-2,
    seed: int = 0,
) -> TwoStageResult:
    """Format SFT followed by score-oriented REINFORCE alignment.

    Refuses to enter stage 2 when the stage-1 parse rate is below 95%.
    """
    state = state or RLState()
    epochs, rate = train_format_stage(
        policy, format_corpus, target_parse_rate=stage1_target,
        max_epochs=stage1_max_epochs, seed=seed,
    )
    if rate < 0.95:
        raise RuntimeError(
            f"stage-1 parse rate {rate:.3f} below 0.95; refusing to start stage 2"
        )
    trajectory, state = train_score_stage(
        policy, scored_corpus, state, steps=stage2_steps,
        batch_size=stage2_batch, lr=stage2_lr, seed=seed + 1,
    )
    return TwoStageResult(
        policy=policy,
        stage1_epochs=epochs,
        stage1_parse_rate=rate,
        reward_trajectory=trajectory,
        final_mean_abs_error=mean_abs_error(policy, scored_corpus),
        final_state=state,
    )


def make_format_cases(
    n_cases: int, feature_dim: int = 8, seed: int = 0
) -> list[tuple[Tensor, ScoreVector]]:
    """Format-only corpus: random features paired with arbitrary half-grid
    scores. Carries no input-to-score signal, so stage 1 can only teach the
    canonical layout."""
    gen = torch.Generator().manual_seed(seed)
    half_grid = [1.0 + 0.5 * i for i in range(9)]
    cases = []
    for _ in range(n_cases):
        feats = torch.randn(feature_dim, generator=gen)
        picks = torch.randint(0, len(half_grid), (6,), generator=gen)
        cases.append((feats, ScoreVector.from_values(half_grid[int(i)] for i in picks)))
    return cases


def make_eval_cases(
    n_cases: int, feature_dim: int = 8, n_profiles: int = 6, seed: int = 0
) -> list[tuple[Tensor, ScoreVector]]:
    """Synthetic evaluator corpus: each case carries a profile signature in
    its features, and the physician scores are a fixed function of the
    profile (half-point grid)."""
    gen = torch.Generator().manual_seed(seed)
    half_grid = [1.0 + 0.5 * i for i in range(9)]
    profile_scores = []
    for _ in range(n_profiles):
        picks = torch.randint(0, len(half_grid), (6,), generator=gen)
        profile_scores.append(ScoreVector.from_values(half_grid[int(i)] for i in picks))
    cases = []
    for i in range(n_cases):
        profile = i % n_profiles
        base = torch.zeros(feature_dim)
        base[profile % feature_dim] = 1.0
        noise = 0.05 * torch.randn(feature_dim, generator=gen)
        cases.append((base + noise, profile_scores[profile]))
    return cases
