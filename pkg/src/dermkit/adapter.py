"""Frozen-backbone adapter path: patch partition, residual bottleneck
compression, patch-mean summary, student projection, and the gated
vocabulary-logit bias.

All trainable quantities live in :class:`AdapterParams`; the backbone is
never touched. The bias path is ``b = W_lm^T @ lowrank(summary)`` and is
added to logits as ``logits + alpha * m * b`` only at supervised positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn


class ShapeError(ValueError):
    """Raised when an input does not satisfy a declared dimension contract."""


@dataclass(frozen=True)
class AdapterDims:
    """Widths of the adapter stack.

    patch_size: side length P of square non-overlapping patches.
    channels:   image channel count C.
    d_c:        compressed patch-feature width.
    d_b:        inner width of each residual bottleneck block.
    n_blocks:   number of bottleneck blocks.
    d_s:        image-summary width (defaults to d_c downstream).
    d_t:        teacher embedding width.
    rank:       inner rank of the low-rank map into decoder hidden space.
    d_model:    decoder hidden width of the frozen backbone.
    """

    patch_size: int = 16
    channels: int = 1
    d_c: int = 64
    d_b: int = 16
    n_blocks: int = 2
    d_s: int = 64
    d_t: int = 32
    rank: int = 16
    d_model: int = 64

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def partition_patches(img: Tensor, patch_size: int) -> Tensor:
    """Split an [H, W, C] image into flattened non-overlapping patches.

    Returns an [N, P*P*C] grid where row k is the k-th patch in row-major
    patch order; :func:`assemble_patches` inverts it exactly.
    """
    if img.ndim != 3:
        raise ShapeError(f"expected [H, W, C] image, got shape {tuple(img.shape)}")
    h, w, c = img.shape
    p = patch_size
    if p <= 0 or h % p != 0 or w % p != 0:
        raise ShapeError(f"patch size {p} does not divide image dims {h}x{w}")
    grid = (
        img.reshape(h // p, p, w // p, p, c)
        .permute(0, 2, 1, 3, 4)
        .reshape((h // p) * (w // p), p * p * c)
    )
    return grid.contiguous()


def assemble_patches(grid: Tensor, height: int, width: int, channels: int, patch_size: int) -> Tensor:
    """Inverse of :func:`partition_patches`."""
    p = patch_size
    nh, nw = height // p, width // p
    if grid.shape != (nh * nw, p * p * channels):
        raise ShapeError(f"grid shape {tuple(grid.shape)} inconsistent with image dims")
    return (
        grid.reshape(nh, nw, p, p, channels)
        .permute(0, 2, 1, 3, 4)
        .reshape(height, width, channels)
        .contiguous()
    )


class BottleneckBlock(nn.Module):
    """Residual block ``u + up(silu(down(u)))`` with a narrow inner width."""

    def __init__(self, d_c: int, d_b: int, dtype: torch.dtype):
        super().__init__()
        self.down = nn.Linear(d_c, d_b, dtype=dtype)
        self.up = nn.Linear(d_b, d_c, dtype=dtype)

    def forward(self, u: Tensor) -> Tensor:
        return u + self.up(F.silu(self.down(u)))


class AdapterParams(nn.Module):
    """All trainable quantities: compression, bottlenecks, summary projection,
    student projection, low-rank map into decoder space, and the gate alpha.
    """

    def __init__(self, dims: AdapterDims, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.dims = dims
        self.compress = nn.Linear(dims.patch_dim, dims.d_c, bias=False, dtype=dtype)
        self.bottlenecks = nn.ModuleList(
            BottleneckBlock(dims.d_c, dims.d_b, dtype) for _ in range(dims.n_blocks)
        )
        self.summary_proj = nn.Linear(dims.d_c, dims.d_s, bias=False, dtype=dtype)
        self.student_proj = nn.Linear(dims.d_s, dims.d_t, dtype=dtype)
        self.lowrank_down = nn.Linear(dims.d_s, dims.rank, bias=False, dtype=dtype)
        self.lowrank_up = nn.Linear(dims.rank, dims.d_model, bias=False, dtype=dtype)
        self.gate_alpha = nn.Parameter(torch.zeros((), dtype=dtype))

    @property
    def alpha(self) -> float:
        return float(self.gate_alpha.detach())


def _seeded_init(params: AdapterParams, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)

    def fill(t: Tensor, scale: float) -> None:
        with torch.no_grad():
            t.copy_(torch.randn(t.shape, generator=gen, dtype=torch.float64).to(t.dtype) * scale)

    fill(params.compress.weight, params.dims.patch_dim ** -0.5)
    for block in params.bottlenecks:
        fill(block.down.weight, params.dims.d_c ** -0.5)
        fill(block.down.bias, 0.0)
        with torch.no_grad():
            block.up.weight.zero_()
            block.up.bias.zero_()
    with torch.no_grad():
        params.summary_proj.weight.copy_(
            torch.eye(params.dims.d_s, params.dims.d_c, dtype=params.summary_proj.weight.dtype)
        )
    fill(params.student_proj.weight, 0.01)
    fill(params.student_proj.bias, 0.0)
    fill(params.lowrank_down.weight, params.dims.d_s ** -0.5)
    with torch.no_grad():
        params.lowrank_up.weight.zero_()
        params.gate_alpha.zero_()


def init_identity(dims: AdapterDims, seed: int = 0, dtype: torch.dtype = torch.float32) -> AdapterParams:
    """Identity-initialized adapters: the bias path contributes exactly zero
    (gate alpha = 0 AND the low-rank up factor = 0), bottleneck up-maps are
    zero so each block is an exact identity, and the student projection is
    small-random (it does not affect generation).
    """
    params = AdapterParams(dims, dtype=dtype)
    _seeded_init(params, seed)
    return params


def init_for_training(dims: AdapterDims, seed: int = 0, dtype: torch.dtype = torch.float32) -> AdapterParams:
    """Training initialization that still reproduces base behavior exactly.

    Keeping both alpha and the low-rank up factor at zero puts the bias path
    on a gradient saddle (each factor's gradient is scaled by the other), so
    here only alpha stays zero while the up factor is small-random. The bias
    term alpha*m*b is still exactly zero before the first update.
    """
    params = init_identity(dims, seed=seed, dtype=dtype)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        w = params.lowrank_up.weight
        w.copy_(torch.randn(w.shape, generator=gen, dtype=torch.float64).to(w.dtype) * 0.05)
    return params


def encode_patches(grid: Tensor, params: AdapterParams) -> Tensor:
    """Linear compression followed by the residual bottleneck stack."""
    if grid.ndim != 2 or grid.shape[1] != params.dims.patch_dim:
        raise ShapeError(
            f"grid row width {tuple(grid.shape)} != compress input width {params.dims.patch_dim}"
        )
    feats = params.compress(grid)
    for block in params.bottlenecks:
        feats = block(feats)
    return feats


def aggregate_summary(features: Tensor, params: AdapterParams) -> Tensor:
    """Patch-mean aggregation followed by the learned summary projection.

    Order-invariant in the patch axis by construction.
    """
    if features.ndim != 2 or features.shape[0] < 1:
        raise ShapeError("aggregate_summary needs a nonempty [N, d_c] feature matrix")
    return params.summary_proj(features.mean(dim=0))


def project_student(summary: Tensor, params: AdapterParams) -> Tensor:
    """Map the image summary to teacher-embedding space (the z of the
    distillation loss)."""
    if summary.shape != (params.dims.d_s,):
        raise ShapeError(f"summary shape {tuple(summary.shape)} != ({params.dims.d_s},)")
    return params.student_proj(summary)


def image_summary(img: Tensor, params: AdapterParams) -> Tensor:
    """Full vision-side forward: patches -> features -> summary."""
    grid = partition_patches(img, params.dims.patch_size)
    return aggregate_summary(encode_patches(grid, params), params)


def compute_vocab_bias(summary: Tensor, backbone, params: AdapterParams) -> Tensor:
    """Vocabulary-direction bias ``b = W_lm^T @ h_v`` where h_v is the
    low-rank mapping of the image summary into decoder hidden space."""
    h_v = params.lowrank_up(params.lowrank_down(summary))
    if h_v.shape[-1] != backbone.d_model:
        raise ShapeError(
            f"low-rank output width {h_v.shape[-1]} != backbone hidden width {backbone.d_model}"
        )
    return backbone.w_lm.T @ h_v


def apply_bias(logits: Tensor, bias: Tensor, alpha: Tensor | float, mask_t: int) -> Tensor:
    """Biased logits ``logits + alpha * m_t * b``.

    Returns the input unchanged (same object, bitwise) whenever the gate is
    off or the position is unsupervised.
    """
    if logits.shape != bias.shape:
        raise ShapeError(f"logits width {tuple(logits.shape)} != bias width {tuple(bias.shape)}")
    if mask_t not in (0, 1):
        raise ValueError(f"mask value must be 0 or 1, got {mask_t}")
    if mask_t == 0:
        return logits
    if isinstance(alpha, (int, float)) and alpha == 0:
        return logits
    return logits + alpha * mask_t * bias
