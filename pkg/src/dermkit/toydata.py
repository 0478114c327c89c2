"""Synthetic desk-scale training corpus for the toy stack.

Each pair couples an image whose mean-patch vector carries a linearly
separable token signature, a teacher embedding that is an exact linear
function of that mean patch, and a target sequence repeating the pair's
characteristic token. Both loss terms are therefore jointly reducible, which
is what the overfit checks rely on.
"""

from __future__ import annotations

import torch

from .adapter import AdapterDims, partition_patches
from .backbone import ToyBackbone
from .training import SupervisionItem


def make_toy_pairs(
    n_pairs: int,
    dims: AdapterDims,
    backbone: ToyBackbone,
    seed: int = 0,
    n_token_groups: int = 8,
    prompt_len: int = 4,
    target_len: int = 8,
    dtype: torch.dtype = torch.float32,
) -> list[SupervisionItem]:
    gen = torch.Generator().manual_seed(seed)
    p = dims.patch_size
    height = width = 2 * p  # four patches per image
    patch_dim = dims.patch_dim

    token_pool = torch.randperm(backbone.vocab_size, generator=gen)[:n_token_groups]
    signatures = torch.randn(n_token_groups, patch_dim, generator=gen, dtype=torch.float64)
    signatures /= signatures.norm(dim=1, keepdim=True)
    teacher_map = torch.randn(dims.d_t, patch_dim, generator=gen, dtype=torch.float64)
    teacher_map *= patch_dim**-0.5

    pairs = []
    for i in range(n_pairs):
        group = i % n_token_groups
        token = int(token_pool[group])
        mean_patch = (
            0.5
            + 0.2 * signatures[group]
            + 0.05 * torch.randn(patch_dim, generator=gen, dtype=torch.float64)
        )
        n_patches = (height // p) * (width // p)
        jitter = 0.02 * torch.randn(n_patches, patch_dim, generator=gen, dtype=torch.float64)
        jitter -= jitter.mean(dim=0, keepdim=True)  # keeps the patch mean exact
        grid = (mean_patch.unsqueeze(0) + jitter).clamp(0.0, 1.0)
        img = (
            grid.reshape(height // p, width // p, p, p, dims.channels)
            .permute(0, 2, 1, 3, 4)
            .reshape(height, width, dims.channels)
        )
        actual_mean = partition_patches(img, p).mean(dim=0)
        teacher = teacher_map @ actual_mean
        prompt = torch.randint(0, backbone.vocab_size, (prompt_len,), generator=gen)
        pairs.append(
            SupervisionItem(
                image=img.to(dtype),
                teacher=teacher.to(dtype),
                prompt_tokens=[int(t) for t in prompt],
                target_tokens=[token] * target_len,
                mask=[1] * target_len,
            )
        )
    return pairs
