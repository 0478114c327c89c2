import numpy as np
import pytest
import torch

from dermkit.adapter import (
    AdapterDims,
    ShapeError,
    aggregate_summary,
    apply_bias,
    assemble_patches,
    compute_vocab_bias,
    encode_patches,
    image_summary,
    init_for_training,
    init_identity,
    partition_patches,
    project_student,
)


def rand_image(h, w, c, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(h, w, c, generator=gen, dtype=torch.float64)


class TestPartition:
    def test_4x4_reassembly_identity(self):
        img = rand_image(4, 4, 1)
        grid = partition_patches(img, 2)
        assert grid.shape == (4, 4)
        back = assemble_patches(grid, 4, 4, 1, 2)
        assert torch.equal(back, img)

    def test_constant_single_patch(self):
        img = torch.full((2, 2, 1), 0.37, dtype=torch.float64)
        grid = partition_patches(img, 2)
        assert grid.shape == (1, 4)
        assert torch.all(grid == 0.37)

    def test_6x4x3_patch_count(self):
        grid = partition_patches(rand_image(6, 4, 3), 2)
        assert grid.shape == (6, 12)

    def test_row_major_patch_order(self):
        # image where each patch is filled with its row-major index
        img = torch.zeros(4, 6, 1)
        idx = 0
        for bi in range(2):
            for bj in range(3):
                img[2 * bi : 2 * bi + 2, 2 * bj : 2 * bj + 2, 0] = idx
                idx += 1
        grid = partition_patches(img, 2)
        for k in range(6):
            assert torch.all(grid[k] == k)

    @pytest.mark.parametrize("h,w,p", [(5, 4, 2), (4, 5, 2), (4, 4, 3)])
    def test_indivisible_dims_rejected(self, h, w, p):
        with pytest.raises(ShapeError):
            partition_patches(rand_image(h, w, 1), p)

    def test_reconstruction_property(self):
        for seed in range(5):
            img = rand_image(8, 12, 2, seed=seed)
            grid = partition_patches(img, 4)
            assert torch.equal(assemble_patches(grid, 8, 12, 2, 4), img)


class TestEncodePatches:
    def test_zero_up_maps_give_compress_exactly(self, small_dims):
        params = init_identity(small_dims, seed=1, dtype=torch.float64)
        grid = partition_patches(rand_image(8, 8, 1, seed=2), 4)
        out = encode_patches(grid, params)
        assert torch.equal(out, params.compress(grid))

    def test_scalar_oracle(self, small_dims):
        params = init_identity(small_dims, seed=3, dtype=torch.float64)
        with torch.no_grad():  # make the blocks non-trivial
            for block in params.bottlenecks:
                block.up.weight.copy_(torch.randn_like(block.up.weight) * 0.3)
                block.up.bias.copy_(torch.randn_like(block.up.bias) * 0.1)
        grid = partition_patches(rand_image(8, 8, 1, seed=4), 4)
        out = encode_patches(grid, params).detach().numpy()

        # independent per-element recomputation in numpy
        def silu(x):
            return x / (1.0 + np.exp(-x))

        w_c = params.compress.weight.detach().numpy()
        feats = grid.numpy() @ w_c.T
        for block in params.bottlenecks:
            wd, bd = block.down.weight.detach().numpy(), block.down.bias.detach().numpy()
            wu, bu = block.up.weight.detach().numpy(), block.up.bias.detach().numpy()
            feats = feats + silu(feats @ wd.T + bd) @ wu.T + bu
        np.testing.assert_allclose(out, feats, rtol=1e-12, atol=1e-14)

    def test_wrong_row_width_rejected(self, small_dims):
        params = init_identity(small_dims)
        with pytest.raises(ShapeError):
            encode_patches(torch.zeros(3, small_dims.patch_dim + 1), params)


class TestAggregateSummary:
    def test_identical_rows(self, small_dims):
        params = init_identity(small_dims, dtype=torch.float64)
        v = torch.randn(small_dims.d_c, dtype=torch.float64)
        feats = v.repeat(5, 1)
        expected = params.summary_proj(v)
        assert torch.allclose(aggregate_summary(feats, params), expected)

    def test_permutation_invariance(self, small_dims):
        params = init_identity(small_dims, dtype=torch.float64)
        feats = torch.randn(7, small_dims.d_c, dtype=torch.float64)
        base = aggregate_summary(feats, params)
        for seed in range(5):
            perm = torch.randperm(7, generator=torch.Generator().manual_seed(seed))
            assert torch.allclose(aggregate_summary(feats[perm], params), base)

    def test_two_unit_rows_identity_proj(self):
        dims = AdapterDims(patch_size=1, channels=2, d_c=2, d_b=2, n_blocks=1,
                           d_s=2, d_t=2, rank=2, d_model=2)
        params = init_identity(dims, dtype=torch.float64)  # summary_proj is identity
        feats = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        out = aggregate_summary(feats, params)
        assert torch.allclose(out, torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_empty_rejected(self, small_dims):
        params = init_identity(small_dims)
        with pytest.raises(ShapeError):
            aggregate_summary(torch.zeros(0, small_dims.d_c), params)


class TestProjectStudent:
    def test_identity_map_gives_zero_distill(self, small_dims):
        dims = AdapterDims(patch_size=4, channels=1, d_c=8, d_b=4, n_blocks=1,
                           d_s=8, d_t=8, rank=4, d_model=16)
        params = init_identity(dims, dtype=torch.float64)
        with torch.no_grad():
            params.student_proj.weight.copy_(torch.eye(8, dtype=torch.float64))
            params.student_proj.bias.zero_()
        t = torch.randn(8, dtype=torch.float64)
        z = project_student(t, params)
        assert torch.equal(z, t)

    def test_zero_map(self, small_dims):
        params = init_identity(small_dims, dtype=torch.float64)
        with torch.no_grad():
            params.student_proj.weight.zero_()
            params.student_proj.bias.zero_()
        z = project_student(torch.randn(small_dims.d_s, dtype=torch.float64), params)
        assert torch.all(z == 0)

    def test_matvec_oracle(self, small_dims):
        params = init_identity(small_dims, seed=9, dtype=torch.float64)
        summary = torch.randn(small_dims.d_s, dtype=torch.float64)
        z = project_student(summary, params).detach().numpy()
        w = params.student_proj.weight.detach().numpy()
        b = params.student_proj.bias.detach().numpy()
        expected = np.array(
            [sum(w[i, j] * float(summary[j]) for j in range(small_dims.d_s)) + b[i]
             for i in range(small_dims.d_t)]
        )
        np.testing.assert_allclose(z, expected, rtol=1e-12)


class TestVocabBias:
    def test_identity_init_zero_bias(self, small_dims, small_backbone64):
        params = init_identity(small_dims, dtype=torch.float64)
        summary = torch.randn(small_dims.d_s, dtype=torch.float64)
        b = compute_vocab_bias(summary, small_backbone64, params)
        assert b.shape == (small_backbone64.vocab_size,)
        assert torch.all(b == 0)

    def test_identity_w_lm_returns_hidden(self, small_dims):
        class Stub:
            d_model = small_dims.d_model
            vocab_size = small_dims.d_model
            w_lm = torch.eye(small_dims.d_model, dtype=torch.float64)

        params = init_for_training(small_dims, seed=5, dtype=torch.float64)
        summary = torch.randn(small_dims.d_s, dtype=torch.float64)
        h_v = params.lowrank_up(params.lowrank_down(summary))
        assert torch.allclose(compute_vocab_bias(summary, Stub(), params), h_v)

    def test_double_loop_oracle(self, small_dims, small_backbone64):
        params = init_for_training(small_dims, seed=6, dtype=torch.float64)
        summary = torch.randn(small_dims.d_s, dtype=torch.float64,
                              generator=torch.Generator().manual_seed(8))
        b = compute_vocab_bias(summary, small_backbone64, params).detach().numpy()

        w_lm = small_backbone64.w_lm.numpy()
        down = params.lowrank_down.weight.detach().numpy()
        up = params.lowrank_up.weight.detach().numpy()
        s = summary.numpy()
        inner = np.array([sum(down[r, j] * s[j] for j in range(len(s))) for r in range(down.shape[0])])
        h_v = np.array([sum(up[i, r] * inner[r] for r in range(len(inner))) for i in range(up.shape[0])])
        expected = np.array(
            [sum(w_lm[i, v] * h_v[i] for i in range(len(h_v))) for v in range(w_lm.shape[1])]
        )
        denom = np.maximum(np.abs(expected), 1e-30)
        assert np.max(np.abs(b - expected) / denom) <= 1e-12


class TestApplyBias:
    def test_gate_off_bitwise(self):
        logits = torch.randn(16, dtype=torch.float64)
        out = apply_bias(logits, torch.randn(16, dtype=torch.float64), 0.0, 1)
        assert out is logits

    def test_unsupervised_position(self):
        logits = torch.randn(16, dtype=torch.float64)
        out = apply_bias(logits, torch.randn(16, dtype=torch.float64), 1.0, 0)
        assert out is logits

    def test_direct_substitution(self):
        logits = torch.tensor([1.0, 1.0])
        bias = torch.tensor([0.5, -0.5])
        out = apply_bias(logits, bias, 1.0, 1)
        assert torch.allclose(out, torch.tensor([1.5, 0.5]))

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            apply_bias(torch.zeros(3), torch.zeros(4), 1.0, 1)

    def test_bad_mask_value(self):
        with pytest.raises(ValueError):
            apply_bias(torch.zeros(3), torch.zeros(3), 1.0, 2)


class TestIdentityInit:
    def test_alpha_reads_back_zero(self, small_dims):
        assert init_identity(small_dims).alpha == 0.0

    def test_bias_path_exactly_zero_on_any_image(self, small_dims, small_backbone64):
        params = init_identity(small_dims, seed=11, dtype=torch.float64)
        for seed in range(3):
            img = rand_image(8, 8, 1, seed=seed)
            summary = image_summary(img, params)
            bias = compute_vocab_bias(summary, small_backbone64, params)
            prompt = torch.randint(0, 48, (6,), generator=torch.Generator().manual_seed(seed))
            logits = small_backbone64.logits(prompt)
            biased = apply_bias(logits[-1], bias, params.gate_alpha, 1)
            assert float((biased - logits[-1]).detach().abs().max()) == 0.0

    def test_training_init_also_starts_at_base_behavior(self, small_dims, small_backbone64):
        params = init_for_training(small_dims, seed=11, dtype=torch.float64)
        img = rand_image(8, 8, 1, seed=3)
        bias = compute_vocab_bias(image_summary(img, params), small_backbone64, params)
        assert torch.any(bias != 0)  # saddle-breaking init gives a live bias direction
        logits = small_backbone64.logits(torch.arange(5))
        biased = apply_bias(logits[-1], bias, params.gate_alpha, 1)
        assert float((biased - logits[-1]).detach().abs().max()) == 0.0

    def test_encode_equals_compress_at_init(self, small_dims):
        params = init_identity(small_dims, seed=12, dtype=torch.float64)
        grid = partition_patches(rand_image(8, 8, 1, seed=13), 4)
        assert torch.equal(encode_patches(grid, params), params.compress(grid))
