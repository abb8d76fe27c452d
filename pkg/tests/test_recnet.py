"""Tests for the reconstruction network: quantization, losses, architecture."""

import numpy as np
import pytest

from fedforge import Codebook, RecNet, Tape, Tensor, backward, quantize, rec_loss, vq_loss
from fedforge import autodiff as ad
from fedforge.autodiff import SgdState, sgd_step, zero_grads
from fedforge.datagen import gen_real, samples_to_arrays
from fedforge.params import ParamSet

from gradcheck_util import check_grads


def make_codebook(rows) -> Codebook:
    arr = np.asarray(rows, dtype=np.float32)
    return Codebook(Tensor(arr, requires_grad=True), arr.shape[0], arr.shape[1])


def latent_grid(vectors) -> Tensor:
    """Stack (P, d) vectors into a (1, d, P, 1) latent grid tensor."""
    arr = np.asarray(vectors, dtype=np.float32)
    grid = arr.T[None, :, :, None]
    return Tensor(np.ascontiguousarray(grid), requires_grad=True)


def brute_force_indices(vectors: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Per-row exhaustive argmin over all codes (float64 distances)."""
    out = []
    for row in vectors.astype(np.float64):
        dists = [float(np.sum((row - e) ** 2)) for e in emb.astype(np.float64)]
        out.append(int(np.argmin(dists)))
    return np.array(out)


class TestEncodeDecodeShapes:
    def test_zero_image_finite_latent(self):
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(0))
        z = net.encode(Tensor(np.zeros((1, 1, 32, 32), np.float32)))
        assert np.all(np.isfinite(z.data))

    def test_encode_deterministic(self):
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(0))
        x = Tensor(gen_real(5).image[None])
        np.testing.assert_array_equal(net.encode(x).data, net.encode(x).data)

    def test_latent_shape_two_downsamples(self):
        net = RecNet(num_codes=8, code_dim=6, rng=np.random.default_rng(0))
        z = net.encode(Tensor(np.zeros((2, 1, 32, 32), np.float32)))
        assert z.shape == (2, 6, 8, 8)

    def test_decode_mirrors_encoder(self):
        net = RecNet(num_codes=8, code_dim=6, rng=np.random.default_rng(0))
        out = net.decode(Tensor(np.zeros((2, 6, 8, 8), np.float32)))
        assert out.shape == (2, 1, 32, 32)

    def test_decode_deterministic(self):
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(1))
        q = Tensor(np.random.default_rng(2).normal(size=(1, 4, 8, 8)).astype(np.float32))
        np.testing.assert_array_equal(net.decode(q).data, net.decode(q).data)

    def test_encode_wrong_shape(self):
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="encode expects"):
            net.encode(Tensor(np.zeros((1, 1, 16, 16), np.float32)))

    def test_decode_wrong_shape(self):
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="decode expects"):
            net.decode(Tensor(np.zeros((1, 4, 4, 4), np.float32)))


class TestQuantize:
    def test_nearest_code_hand_case(self):
        cb = make_codebook([[0.0, 0.0], [1.0, 1.0]])
        q = quantize(latent_grid([[0.9, 0.8]]), cb)
        assert q.indices.ravel().tolist() == [1]
        np.testing.assert_array_equal(q.quantized.data.ravel(), np.float32([1.0, 1.0]))

    def test_tie_breaks_to_lowest_index(self):
        cb = make_codebook([[0.0, 0.0], [1.0, 1.0]])
        q = quantize(latent_grid([[0.5, 0.5]]), cb)
        assert q.indices.ravel().tolist() == [0]

    def test_exact_match_returns_same_vector(self):
        rows = np.random.default_rng(3).uniform(-1, 1, (6, 4)).astype(np.float32)
        cb = make_codebook(rows)
        q = quantize(latent_grid([rows[3]]), cb)
        assert q.indices.ravel().tolist() == [3]
        np.testing.assert_array_equal(q.quantized.data.ravel(), rows[3])

    def test_quantized_rows_copied_exactly(self):
        rng = np.random.default_rng(4)
        cb = make_codebook(rng.uniform(-1, 1, (5, 3)))
        latent = Tensor(rng.normal(size=(2, 3, 4, 4)).astype(np.float32))
        q = quantize(latent, cb)
        flat = q.quantized.data.transpose(0, 2, 3, 1).reshape(-1, 3)
        np.testing.assert_array_equal(flat, cb.embeddings.data[q.indices.ravel()])

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(2, 17))
        d = int(rng.integers(1, 9))
        cb = make_codebook(rng.uniform(-1, 1, (m, d)))
        vectors = rng.uniform(-1, 1, (12, d)).astype(np.float32)
        q = quantize(latent_grid(vectors), cb)
        np.testing.assert_array_equal(q.indices.ravel(),
                                      brute_force_indices(vectors, cb.embeddings.data))

    @pytest.mark.parametrize("seed", range(10))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(2000 + seed)
        cb = make_codebook(rng.uniform(-1, 1, (9, 5)))
        latent = Tensor(rng.normal(size=(1, 5, 3, 3)).astype(np.float32))
        first = quantize(latent, cb)
        second = quantize(Tensor(first.quantized.data.copy()), cb)
        np.testing.assert_array_equal(first.indices, second.indices)

    def test_channel_mismatch(self):
        cb = make_codebook(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="code_dim"):
            quantize(Tensor(np.zeros((1, 2, 2, 2), np.float32)), cb)

    def test_codebook_invariants(self):
        with pytest.raises(ValueError, match="num_codes"):
            Codebook(Tensor(np.zeros((1, 3), np.float32)), 1, 3)


class TestVqLoss:
    def test_perfect_alignment_zero_loss_zero_grads(self):
        rows = np.random.default_rng(5).uniform(-1, 1, (4, 3)).astype(np.float32)
        cb = make_codebook(rows)
        latent = latent_grid([rows[0], rows[2]])
        with Tape():
            q = quantize(latent, cb)
            loss = vq_loss(latent, q, alpha=1.0, beta=4.0)
            backward(loss)
        assert loss.item() == 0.0
        np.testing.assert_array_equal(latent.grad, np.zeros_like(latent.data))
        np.testing.assert_array_equal(cb.embeddings.grad, np.zeros_like(rows))

    def test_paper_default_weighting(self):
        # single position: loss = (alpha + beta) * mean(delta^2) with alpha=1, beta=4
        cb = make_codebook([[0.0, 0.0], [5.0, 5.0]])
        latent = latent_grid([[0.3, -0.4]])
        q = quantize(latent, cb)
        loss = vq_loss(latent, q, alpha=1.0, beta=4.0)
        expected = 5.0 * np.mean(np.float32([0.3, -0.4]) ** 2)
        assert loss.item() == pytest.approx(expected, rel=1e-6)

    def test_alignment_term_never_moves_encoder(self):
        rng = np.random.default_rng(6)
        cb = make_codebook(rng.uniform(-1, 1, (4, 3)))
        latent = latent_grid(rng.uniform(-1, 1, (5, 3)))
        with Tape():
            q = quantize(latent, cb)
            backward(vq_loss(latent, q, alpha=1.0, beta=0.0))
        np.testing.assert_array_equal(latent.grad, np.zeros_like(latent.data))
        assert np.any(cb.embeddings.grad != 0)

    def test_commitment_term_never_moves_codebook(self):
        rng = np.random.default_rng(7)
        cb = make_codebook(rng.uniform(-1, 1, (4, 3)))
        latent = latent_grid(rng.uniform(-1, 1, (5, 3)))
        with Tape():
            q = quantize(latent, cb)
            backward(vq_loss(latent, q, alpha=0.0, beta=1.0))
        np.testing.assert_array_equal(cb.embeddings.grad, np.zeros((4, 3), np.float32))
        assert np.any(latent.grad != 0)

    def test_foreign_result_rejected(self):
        rng = np.random.default_rng(8)
        cb = make_codebook(rng.uniform(-1, 1, (4, 3)))
        a = latent_grid(rng.uniform(-1, 1, (2, 3)))
        b = latent_grid(rng.uniform(-1, 1, (2, 3)))
        q = quantize(a, cb)
        with pytest.raises(ValueError, match="not produced"):
            vq_loss(b, q)


class TestStraightThrough:
    def test_gradient_bypasses_argmin(self):
        """d(decode . quantize)/d(latent) equals d(decode)/d(input) at the
        quantized value: the selection step is invisible to gradients."""
        net = RecNet(num_codes=8, code_dim=4, rng=np.random.default_rng(9))
        x = Tensor(gen_real(11).image[None])
        latent_probe = net.encode(x)
        with Tape():
            latent = net.encode(x)
            q = quantize(latent, net.codebook)
            backward(rec_loss(x, net.decode(q.quantized)))
        through_ste = latent.grad.copy()

        leaf = Tensor(q.quantized.data.copy(), requires_grad=True)
        with Tape():
            backward(rec_loss(x, net.decode(leaf)))
        np.testing.assert_array_equal(through_ste, leaf.grad)
        assert np.any(through_ste != 0)
        np.testing.assert_array_equal(latent_probe.data, latent.data)

    def test_grad_reaches_encoder_weights(self):
        """Finite-difference check on one encoder weight through the full
        encode -> quantize -> decode -> mse path. The FD probes the
        frozen-selection surrogate, which is the function the
        straight-through estimator actually differentiates."""
        net = RecNet(num_codes=6, code_dim=3, rng=np.random.default_rng(10))
        x = Tensor(gen_real(21).image[None])
        base_latent = net.encode(x)
        base_q = quantize(base_latent, net.codebook)
        correction = (base_q.quantized.data - base_latent.data).copy()

        def loss_fn():
            latent = net.encode(x)
            dec_in = ad.add(latent, Tensor(correction))
            return rec_loss(x, net.decode(dec_in))

        def real_loss():
            latent = net.encode(x)
            q = quantize(latent, net.codebook)
            return rec_loss(x, net.decode(q.quantized))

        with Tape():
            backward(real_loss())
        grads = net.enc1_w.grad.reshape(-1)
        coord = int(np.argmax(np.abs(grads)))  # a live (non-dead-relu) weight
        analytic = float(grads[coord])
        assert analytic != 0.0
        flat = net.enc1_w.data.reshape(-1)
        h = 1e-3
        orig = flat[coord]
        flat[coord] = orig + h
        fp = loss_fn().item()
        flat[coord] = orig - h
        fm = loss_fn().item()
        flat[coord] = orig
        numeric = (fp - fm) / (2 * h)
        assert numeric == pytest.approx(analytic, rel=1e-2, abs=1e-5)


class TestRecLoss:
    def test_perfect_reconstruction(self):
        x = Tensor(gen_real(1).image[None])
        assert rec_loss(x, x).item() == 0.0

    def test_hand_value(self):
        assert rec_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0])).item() == pytest.approx(0.5)

    def test_quadratic_scaling(self):
        x = Tensor(np.zeros(4, np.float32))
        r = np.float32([0.1, -0.2, 0.3, 0.05])
        small = rec_loss(x, Tensor(r)).item()
        big = rec_loss(x, Tensor(2 * r)).item()
        assert big == pytest.approx(4 * small, rel=1e-5)


class TestTrainingSanity:
    def test_200_steps_strictly_decrease_vq_plus_rec(self):
        net = RecNet(num_codes=16, code_dim=8, rng=np.random.default_rng(42))
        params = ParamSet(net.named_params())
        images, _ = samples_to_arrays([gen_real(s) for s in range(8)])
        x = Tensor(images)
        sgd = SgdState(learning_rate=0.01, momentum=0.5)

        def step() -> float:
            with Tape():
                latent = net.encode(x)
                q = quantize(latent, net.codebook)
                loss = ad.add(vq_loss(latent, q), rec_loss(x, net.decode(q.quantized)))
                zero_grads(params.tensors())
                backward(loss)
            sgd_step(params, sgd)
            return loss.item()

        initial = step()
        final = initial
        for _ in range(199):
            final = step()
        assert final < initial
        assert np.all(np.isfinite(net.codebook.embeddings.data))
