"""Deterministic frozen toy decoder.

A seeded, attention-free token model standing in for the real 7B backbone:
token + position embeddings, a causal cumulative-mean mixer, one residual
feed-forward block, and a tied output matrix ``w_lm``. Every parameter is
frozen; a digest over all parameter bytes certifies that training never
writes them.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn.functional as F
from torch import Tensor


class ToyBackbone:
    """Frozen decoder exposing hidden width, vocab size, w_lm, and a logits
    function over token prefixes."""

    def __init__(
        self,
        vocab_size: int = 64,
        d_model: int = 32,
        d_hidden: int = 64,
        max_len: int = 128,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.max_len = max_len
        gen = torch.Generator().manual_seed(seed)

        def randn(*shape: int, scale: float) -> Tensor:
            t = torch.randn(shape, generator=gen, dtype=torch.float64) * scale
            t = t.to(dtype)
            t.requires_grad_(False)
            return t

        self.tok_emb = randn(vocab_size, d_model, scale=1.0)
        self.pos_emb = randn(max_len, d_model, scale=0.3)
        self.w1 = randn(d_model, d_hidden, scale=d_model**-0.5)
        self.b1 = randn(d_hidden, scale=0.1)
        self.w2 = randn(d_hidden, d_model, scale=d_hidden**-0.5)
        self.b2 = randn(d_model, scale=0.1)
        self.w_lm = randn(d_model, vocab_size, scale=d_model**-0.5)
        self._digest = self._compute_digest()

    def _param_list(self) -> list[Tensor]:
        return [self.tok_emb, self.pos_emb, self.w1, self.b1, self.w2, self.b2, self.w_lm]

    def _compute_digest(self) -> str:
        h = hashlib.sha256()
        for t in self._param_list():
            h.update(str(tuple(t.shape)).encode())
            h.update(t.detach().to(torch.float64).contiguous().numpy().tobytes())
        return h.hexdigest()

    def digest(self) -> str:
        """Recompute the parameter hash; equal to the construction-time value
        as long as nothing wrote the backbone."""
        return self._compute_digest()

    @property
    def construction_digest(self) -> str:
        return self._digest

    def hidden_states(self, tokens: Tensor) -> Tensor:
        """[T] or [B, T] int tokens -> [.., T, d_model] causal hidden states."""
        if tokens.ndim == 1:
            return self.hidden_states(tokens.unsqueeze(0)).squeeze(0)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be [T] or [B, T], got {tuple(tokens.shape)}")
        if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
            raise ValueError("token id out of vocabulary range")
        t_len = tokens.shape[1]
        if t_len > self.max_len:
            raise ValueError(f"sequence length {t_len} exceeds max_len {self.max_len}")
        emb = self.tok_emb[tokens] + self.pos_emb[:t_len]
        denom = torch.arange(1, t_len + 1, dtype=emb.dtype).view(1, t_len, 1)
        ctx = emb.cumsum(dim=1) / denom
        return ctx + F.silu(ctx @ self.w1 + self.b1) @ self.w2 + self.b2

    def logits(self, tokens: Tensor) -> Tensor:
        """Next-token logits at every position of the prefix."""
        return self.hidden_states(tokens) @ self.w_lm
