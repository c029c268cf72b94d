"""Autoencoder shape contracts, quantizer properties, loss schedule."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wurstkit import vqgan as vq
from wurstkit.autodiff import Tensor

CFG = vq.VQGANConfig(widths=(8, 12), codebook_size=16)


def tiny_model(seed=0):
    return vq.VQGAN(CFG, np.random.default_rng(seed))


class TestShapes:
    def test_encode_shape_64(self):
        m = tiny_model()
        lat = m.encode(np.random.default_rng(1).random((2, 3, 64, 64)).astype(np.float32))
        assert lat.shape == (2, 4, 16, 16)

    def test_encode_rejects_indivisible(self):
        m = tiny_model()
        with pytest.raises(ValueError):
            m.encode(np.zeros((1, 3, 63, 63), dtype=np.float32))

    def test_encode_rejects_wrong_channels(self):
        m = tiny_model()
        with pytest.raises(ValueError):
            m.encode(np.zeros((1, 4, 64, 64), dtype=np.float32))

    def test_decode_shape_and_range(self):
        m = tiny_model()
        img = m.decode(np.random.default_rng(2).standard_normal((2, 4, 16, 16)).astype(np.float32))
        assert img.shape == (2, 3, 64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0

    @given(st.sampled_from([16, 24, 32, 48]))
    @settings(max_examples=4, deadline=None)
    def test_roundtrip_shape_identity(self, size):
        m = tiny_model()
        x = np.random.default_rng(3).random((1, 3, size, size)).astype(np.float32)
        rec = m.reconstruct(x)
        assert rec.shape == x.shape


class TestQuantizer:
    def test_nearest_of_two(self):
        cb = np.array([[0, 0, 0, 0], [1, 1, 1, 1]], dtype=np.float32)
        lat = np.array([0.2, 0.1, 0.0, 0.0], dtype=np.float32).reshape(4, 1, 1)
        tokens, quant = vq.quantize(lat, cb)
        assert tokens[0, 0] == 0
        np.testing.assert_array_equal(quant.reshape(4), cb[0])

    def test_tie_breaks_to_lowest_index(self):
        cb = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], dtype=np.float32)
        lat = np.zeros((4, 1, 1), dtype=np.float32)  # equidistant
        tokens, _ = vq.quantize(lat, cb)
        assert tokens[0, 0] == 0

    def test_idempotent_on_codebook_vectors(self):
        rng = np.random.default_rng(4)
        cb = rng.standard_normal((8, 4)).astype(np.float32)
        tokens = rng.integers(0, 8, size=(3, 3))
        lat = cb[tokens].transpose(2, 0, 1)
        tokens2, quant = vq.quantize(lat, cb)
        np.testing.assert_array_equal(tokens2, tokens)
        np.testing.assert_array_equal(quant, lat)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            vq.quantize(np.zeros((5, 2, 2), dtype=np.float32), np.zeros((4, 4), dtype=np.float32))

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=40, deadline=None)
    def test_never_increases_distance(self, seed):
        rng = np.random.default_rng(seed)
        cb = rng.standard_normal((12, 4)).astype(np.float32)
        cell = rng.standard_normal((1, 4)).astype(np.float32)
        idx = vq.nearest_entries(cell, cb)[0]
        chosen = np.sum((cell[0] - cb[idx]) ** 2)
        for k in range(12):
            assert chosen <= np.sum((cell[0] - cb[k]) ** 2) + 1e-6

    def test_straight_through_gradient_passthrough(self):
        # the loss gradient wrt the encoder output must equal the loss
        # gradient wrt the quantized output, exactly (pass-through)
        m = tiny_model()
        lat = Tensor(np.random.default_rng(5).standard_normal((1, 4, 4, 4)).astype(np.float64), requires_grad=True)
        _, zq, _, _ = m.quantize_st(lat)
        probe = np.random.default_rng(6).standard_normal(zq.shape)
        (zq * Tensor(probe)).sum().backward()
        np.testing.assert_array_equal(lat.grad, probe)

    def test_straight_through_values_are_quantized(self):
        m = tiny_model()
        x = np.random.default_rng(7).random((1, 3, 16, 16)).astype(np.float32)
        lat = m.encode(x)
        tokens, zq, _, _ = m.quantize_st(lat)
        _, want = vq.quantize(lat.data, m.codebook.data)
        np.testing.assert_allclose(zq.data, want, rtol=1e-6)

    def test_commitment_and_codebook_losses_positive(self):
        m = tiny_model()
        x = np.random.default_rng(8).random((2, 3, 16, 16)).astype(np.float32)
        _, _, cb_loss, commit = m.quantize_st(m.encode(x))
        assert float(cb_loss.data) > 0
        assert float(commit.data) > 0

    def test_revive_dead_entries(self):
        cb = vq.nn.Parameter(np.zeros((6, 4), dtype=np.float32))
        usage = np.array([3, 0, 1, 0, 0, 2])
        batch = np.random.default_rng(9).standard_normal((10, 4)).astype(np.float32)
        n = vq.revive_dead_entries(cb, usage, batch, np.random.default_rng(10))
        assert n == 3
        for row in (1, 3, 4):
            assert np.any(cb.data[row] != 0)
        for row in (0, 2, 5):
            np.testing.assert_array_equal(cb.data[row], 0)


class TestQuantDropout:
    def test_rate_extremes(self):
        rng = np.random.default_rng(11)
        assert not any(vq.maybe_drop_quantization(rng, 0.0) for _ in range(50))
        assert all(vq.maybe_drop_quantization(rng, 1.0) for _ in range(50))

    def test_rate_domain(self):
        with pytest.raises(ValueError):
            vq.maybe_drop_quantization(np.random.default_rng(0), 1.2)

    def test_monte_carlo_frequency(self):
        rng = np.random.default_rng(12)
        hits = sum(vq.maybe_drop_quantization(rng, 0.1) for _ in range(100_000))
        assert hits / 100_000 == pytest.approx(0.1, abs=0.005)


class TestLossSchedule:
    def test_perfect_reconstruction_zero_loss(self):
        img = np.random.default_rng(13).random((1, 3, 16, 16)).astype(np.float32)
        perc = vq.PerceptualNet()
        out = vq.stage_a_loss(Tensor(img), Tensor(img.copy()), step=0, cfg=CFG, perceptual_net=perc)
        assert float(out["total"].data) == pytest.approx(0.0, abs=1e-10)

    def test_adv_weight_schedule(self):
        assert vq.adv_weight_at(9_999, CFG) == 0.0
        assert vq.adv_weight_at(10_000, CFG) == 0.01
        assert vq.adv_weight_at(0, CFG) == 0.0

    def test_unit_residual_mse_only(self):
        img = Tensor(np.zeros((1, 3, 8, 8)))
        rec = Tensor(np.ones((1, 3, 8, 8)))
        out = vq.stage_a_loss(img, rec, step=0, cfg=CFG)
        assert float(out["total"].data) == pytest.approx(1.0, rel=1e-12)

    def test_shape_guard(self):
        with pytest.raises(ValueError):
            vq.stage_a_loss(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 3, 4, 4))), 0, CFG)

    def test_breakdown_terms_reported(self):
        rng = np.random.default_rng(14)
        img = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
        rec = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
        disc = vq.PatchDiscriminator(np.random.default_rng(15))
        logits = disc(rec)
        out = vq.stage_a_loss(img, rec, step=20_000, cfg=CFG, perceptual_net=vq.PerceptualNet(), logits_fake=logits)
        assert out["w_adv"] == 0.01
        for key in ("total", "mse", "adv", "perc"):
            assert key in out

    def test_hinge_losses(self):
        real = Tensor(np.full((1, 1, 2, 2), 2.0))
        fake = Tensor(np.full((1, 1, 2, 2), -2.0))
        assert float(vq.hinge_d_loss(real, fake).data) == pytest.approx(0.0)
        real2 = Tensor(np.zeros((1, 1, 2, 2)))
        assert float(vq.hinge_d_loss(real2, fake).data) == pytest.approx(1.0)
        assert float(vq.hinge_g_loss(fake).data) == pytest.approx(2.0)

    def test_perceptual_net_is_frozen_and_seeded(self):
        a = vq.PerceptualNet()
        b = vq.PerceptualNet()
        for (n, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data, err_msg=n)
            assert not pa.requires_grad


class TestTrainingGraph:
    def test_gradients_reach_everything(self):
        m = tiny_model()
        img = np.random.default_rng(16).random((2, 3, 32, 32)).astype(np.float32)
        lat = m.encode(img)
        _, zq, cb_loss, commit = m.quantize_st(lat)
        rec = m.decode_train(zq)
        out = vq.stage_a_loss(Tensor(img), rec, step=0, cfg=CFG, perceptual_net=vq.PerceptualNet())
        (out["total"] + cb_loss + commit).backward()
        # every parameter is connected to the loss graph (block interiors
        # behind zero-initialized projections correctly report zero grads)
        missing = [n for n, p in m.named_parameters() if p.grad is None]
        assert missing == [], f"parameters disconnected from loss: {missing}"
        for name in ("codebook", "encoder.out.w", "decoder.out.w", "decoder.inp.w"):
            p = dict(m.named_parameters())[name]
            assert np.any(p.grad), f"{name} gradient is identically zero"
