"""Encoder/decoder losses: analytic values, Monte Carlo cross-checks, gradients."""

import math

import numpy as np
import pytest

from npvae.errors import DimensionError
from npvae.nn import IDENTITY, SIGMOID, Adam, Mlp, glorot_init, mlp_forward
from npvae.rng import Rng
from npvae.vae import (
    P_HI,
    P_LO,
    bernoulli_nll,
    clamp_probs,
    decode,
    elbo_forward,
    elbo_with_grads,
    encode,
    kl_unit_gaussian,
    reparameterize,
    split_encoder_output,
    vae_loss,
)


def make_pair(seed=0, obs=6, z=2, hidden=(8,)):
    enc = glorot_init(Rng(seed), [obs, *hidden, 2 * z], IDENTITY)
    dec = glorot_init(Rng(seed + 1), [z, *hidden, obs], SIGMOID)
    return enc, dec


class TestClampAndSplit:
    def test_clamp_bounds(self):
        p = clamp_probs(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
        assert p[0] == P_LO and p[1] == P_LO
        assert p[2] == 0.5
        assert p[3] == P_HI and p[4] == P_HI

    def test_split_halves_columns(self):
        out = np.arange(12.0).reshape(2, 6)
        mu, logvar = split_encoder_output(out)
        assert np.array_equal(mu, out[:, :3])
        assert np.array_equal(logvar, out[:, 3:])

    def test_split_rejects_odd(self):
        with pytest.raises(DimensionError):
            split_encoder_output(np.zeros((2, 5)))


class TestEncodeDecode:
    def test_zero_encoder_gives_standard_posterior(self):
        enc = Mlp([np.zeros((4, 6))], [np.zeros((1, 6))])
        mu, logvar = encode(enc, Rng(0).standard_normal(3, 4))
        assert np.array_equal(mu, np.zeros((3, 3)))
        assert np.array_equal(logvar, np.zeros((3, 3)))

    def test_zero_decoder_gives_half(self):
        dec = Mlp([np.zeros((2, 5))], [np.zeros((1, 5))], SIGMOID)
        p = decode(dec, Rng(0).standard_normal(3, 2))
        assert np.array_equal(p, np.full((3, 5), 0.5))

    def test_decode_range(self):
        _, dec = make_pair(seed=3)
        p = decode(dec, Rng(1).standard_normal(10, 2) * 10)
        assert (p > 0).all() and (p < 1).all()


class TestReparameterize:
    def test_tiny_variance_collapses_to_mean(self):
        mu = Rng(5).standard_normal(4, 3)
        z = reparameterize(mu, np.full((4, 3), -60.0), Rng(6).standard_normal(4, 3))
        assert np.allclose(z, mu, rtol=0, atol=1e-12)

    def test_exact_formula(self):
        mu = np.array([[1.0, -1.0]])
        logvar = np.array([[0.0, math.log(4.0)]])
        eps = np.array([[0.5, 0.5]])
        z = reparameterize(mu, logvar, eps)
        assert np.allclose(z, [[1.5, 0.0]], atol=1e-15)

    def test_sample_variance_matches_logvar(self):
        n = 200000
        logvar = math.log(2.25)
        z = reparameterize(
            np.zeros((n, 1)), np.full((n, 1), logvar), Rng(777).standard_normal(n, 1)
        )
        assert 0.98 * 2.25 < z.var() < 1.02 * 2.25

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            reparameterize(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)))


class TestBernoulliNll:
    def test_half_probs_give_dim_log2(self):
        # p = 0.5 everywhere: every pixel costs ln 2 regardless of target
        y = np.array([[0.0, 1.0], [1.0, 1.0]])
        nll = bernoulli_nll(np.full((2, 2), 0.5), y)
        assert abs(nll - 2.0 * math.log(2.0)) < 1e-15

    def test_perfect_prediction_near_zero(self):
        y = np.array([[0.0, 1.0, 1.0, 0.0]])
        assert bernoulli_nll(y.copy(), y) < 1e-5

    def test_against_naive_loops(self):
        rng = Rng(31)
        p = rng.uniform(4, 5) * 0.98 + 0.01
        y = (rng.uniform(4, 5) > 0.5).astype(np.float64)
        total = 0.0
        for i in range(4):
            for j in range(5):
                total -= y[i, j] * math.log(p[i, j]) + (1 - y[i, j]) * math.log(
                    1 - p[i, j]
                )
        assert abs(bernoulli_nll(p, y) - total / 4) < 1e-12

    def test_clamps_before_log(self):
        y = np.array([[1.0]])
        nll = bernoulli_nll(np.array([[0.0]]), y)  # would be inf unclamped
        assert math.isfinite(nll)
        assert abs(nll - (-math.log(P_LO))) < 1e-9

    def test_fractional_targets_supported(self):
        # non-binarized pixels in [0,1] enter the same bilinear form
        p = np.array([[0.25]])
        y = np.array([[0.5]])
        expected = -(0.5 * math.log(0.25) + 0.5 * math.log(0.75))
        assert abs(bernoulli_nll(p, y) - expected) < 1e-15


class TestKl:
    def test_standard_posterior_zero(self):
        assert kl_unit_gaussian(np.zeros((3, 4)), np.zeros((3, 4))) == 0.0

    def test_unit_mean_half_nat(self):
        assert abs(kl_unit_gaussian(np.array([[1.0]]), np.array([[0.0]])) - 0.5) < 1e-15

    def test_against_naive_loops(self):
        rng = Rng(40)
        mu = rng.standard_normal(5, 3)
        logvar = rng.standard_normal(5, 3) * 0.5
        total = 0.0
        for i in range(5):
            for j in range(3):
                total += -0.5 * (
                    1.0 + logvar[i, j] - mu[i, j] ** 2 - math.exp(logvar[i, j])
                )
        assert abs(kl_unit_gaussian(mu, logvar) - total / 5) < 1e-12

    def test_nonnegative_everywhere(self):
        rng = Rng(41)
        for _ in range(50):
            mu = rng.standard_normal(4, 3) * 2
            logvar = rng.standard_normal(4, 3)
            assert kl_unit_gaussian(mu, logvar) >= 0.0

    def test_monte_carlo_agreement(self):
        # E_q[log q - log p] over 2e5 draws matches the analytic value
        # within 2% relative; means are kept away from 0 so the relative
        # bar stays meaningful against Monte Carlo noise
        rng = Rng(2025)
        n_mc = 200000
        for trial in range(20):
            u = rng.uniform(3)
            mu = (0.75 + 1.25 * float(u[0])) * (1.0 if u[1] >= 0.5 else -1.0)
            logvar = 2.0 * float(u[2]) - 1.0
            analytic = kl_unit_gaussian(np.array([[mu]]), np.array([[logvar]]))
            z = mu + math.exp(0.5 * logvar) * rng.standard_normal(n_mc)
            log_q = (
                -0.5 * (math.log(2 * math.pi) + logvar)
                - 0.5 * (z - mu) ** 2 / math.exp(logvar)
            )
            log_p = -0.5 * math.log(2 * math.pi) - 0.5 * z**2
            mc = float((log_q - log_p).mean())
            assert abs(mc - analytic) / analytic < 0.02


class TestVaeLoss:
    def test_forward_identity_decomposition(self):
        # loss pieces recompute exactly from the aux tensors it returns
        enc, dec = make_pair(seed=20)
        y = (Rng(21).uniform(5, 6) > 0.5).astype(np.float64)
        eps = Rng(22).standard_normal(5, 2)
        losses, aux = elbo_forward(enc, dec, y, eps)
        assert losses.neg_reconstruction == bernoulli_nll(aux["p"], y)
        assert losses.kl == kl_unit_gaussian(aux["mu"], aux["logvar"])
        assert losses.penalty == 0.0
        assert losses.elbo == -(losses.neg_reconstruction + losses.kl)

    def test_vae_loss_matches_manual_pipeline(self):
        enc, dec = make_pair(seed=23)
        y = (Rng(24).uniform(4, 6) > 0.5).astype(np.float64)
        eps = Rng(25).standard_normal(4, 2)
        losses = vae_loss(enc, dec, y, eps)
        mu, logvar = encode(enc, y)
        z = reparameterize(mu, logvar, eps)
        p = decode(dec, z)
        assert losses.neg_reconstruction == bernoulli_nll(p, y)
        assert losses.kl == kl_unit_gaussian(mu, logvar)

    def test_grads_match_forward_losses(self):
        enc, dec = make_pair(seed=26)
        y = (Rng(27).uniform(4, 6) > 0.5).astype(np.float64)
        eps = Rng(28).standard_normal(4, 2)
        with_g, _ = elbo_with_grads(enc, dec, y, eps)
        plain = vae_loss(enc, dec, y, eps)
        assert with_g.neg_reconstruction == plain.neg_reconstruction
        assert with_g.kl == plain.kl

    def test_finite_difference_full_model(self):
        enc, dec = make_pair(seed=29, obs=5, z=2, hidden=(6,))
        y = (Rng(30).uniform(3, 5) > 0.5).astype(np.float64)
        eps = Rng(31).standard_normal(3, 2)

        def total():
            losses, grads = elbo_with_grads(enc, dec, y, eps)
            return losses.neg_reconstruction + losses.kl, grads

        _, grads = total()
        h = 1e-6
        for name, arr in {**enc.blocks("z_encoder"), **dec.blocks("decoder")}.items():
            g = grads[name]
            flat = arr.reshape(-1)
            for i in range(0, flat.size, 9):
                orig = flat[i]
                flat[i] = orig + h
                up = total()[0]
                flat[i] = orig - h
                dn = total()[0]
                flat[i] = orig
                fd = (up - dn) / (2 * h)
                assert abs(g.reshape(-1)[i] - fd) / max(1.0, abs(fd)) < 1e-5, name

    def test_encoder_decoder_dim_check(self):
        enc = glorot_init(Rng(0), [4, 6])       # 3-d posterior
        dec = glorot_init(Rng(1), [2, 4], SIGMOID)  # expects 2-d codes
        with pytest.raises(DimensionError):
            elbo_with_grads(enc, dec, np.zeros((2, 4)), np.zeros((2, 3)))

    def test_determinism(self):
        enc, dec = make_pair(seed=32)
        y = (Rng(33).uniform(4, 6) > 0.5).astype(np.float64)
        eps = Rng(34).standard_normal(4, 2)
        a, ga = elbo_with_grads(enc, dec, y, eps)
        b, gb = elbo_with_grads(enc, dec, y, eps)
        assert a.neg_reconstruction == b.neg_reconstruction and a.kl == b.kl
        assert all(np.array_equal(ga[k], gb[k]) for k in ga)

    def test_hook_receives_means_and_adds_gradient(self):
        enc, dec = make_pair(seed=35)
        y = (Rng(36).uniform(4, 6) > 0.5).astype(np.float64)
        eps = Rng(37).standard_normal(4, 2)
        seen = {}

        def hook(mu):
            seen["mu"] = mu.copy()
            return 7.25, np.zeros_like(mu)

        losses, _ = elbo_with_grads(enc, dec, y, eps, mu_hook=hook)
        assert losses.penalty == 7.25
        mu, _ = encode(enc, y)
        assert np.array_equal(seen["mu"], mu)

    def test_training_improves_elbo(self):
        # 20 Adam steps at a small rate on one fixed batch with frozen
        # noise must not decrease the single-sample ELBO
        enc, dec = make_pair(seed=38, obs=8, z=2, hidden=(10,))
        y = (Rng(39).uniform(16, 8) > 0.5).astype(np.float64)
        eps = Rng(40).standard_normal(16, 2)
        params = {**enc.blocks("z_encoder"), **dec.blocks("decoder")}
        opt = Adam(lr=1e-5)
        start = vae_loss(enc, dec, y, eps).elbo
        prev = start
        for _ in range(20):
            _, grads = elbo_with_grads(enc, dec, y, eps)
            opt.step(params, grads)
            cur = vae_loss(enc, dec, y, eps).elbo
            assert cur >= prev - 1e-9
            prev = cur
        assert prev > start
