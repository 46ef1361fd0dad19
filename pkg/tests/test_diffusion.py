"""Tests for the embedding diffusion schedule, forward process and reverse steps."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from radar.core.diffusion import (
    DenoiserNet,
    build_schedule,
    ddr_regularizer,
    denoise_embeddings,
    elbo_loss,
    forward_diffuse,
    forward_sample,
    forward_step,
    reverse_step,
    timestep_encoding,
)
from radar.core.validation import ValidationError
from radar.numerics.rng import make_rng
from radar.numerics.tensor import Tape, Tensor


def _zero_net(x_t: Tensor, t: np.ndarray) -> Tensor:
    return Tensor(np.zeros(x_t.shape))


class TestSchedule:
    def test_endpoints(self) -> None:
        sched = build_schedule(50, 0.5, 0.01, 0.2)
        assert sched.alpha_bar[0] == 1.0
        assert sched.one_minus_alpha_bar[1] == pytest.approx(0.5 * 0.01)
        assert sched.one_minus_alpha_bar[50] == pytest.approx(0.5 * 0.2)

    def test_alpha_bar_decreases(self) -> None:
        sched = build_schedule(20, 1.0, 0.05, 0.5)
        assert (np.diff(sched.alpha_bar) < 0).all()
        assert ((sched.betas[1:] > 0) & (sched.betas[1:] < 1)).all()

    def test_alpha_bar_is_product_of_steps(self) -> None:
        sched = build_schedule(10, 0.8, 0.02, 0.3)
        np.testing.assert_allclose(np.cumprod(1.0 - sched.betas[1:]), sched.alpha_bar[1:])

    def test_rejects_bad_parameters(self) -> None:
        with pytest.raises(ValidationError):
            build_schedule(1, 0.5, 0.01, 0.2)
        with pytest.raises(ValidationError):
            build_schedule(10, 1.5, 0.01, 0.2)
        with pytest.raises(ValidationError):
            build_schedule(10, 0.5, 0.3, 0.2)


class TestForwardProcess:
    def test_zero_noise_scales_signal(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x0 = np.ones((3, 2))
        out = forward_sample(x0, 4, sched, eps=np.zeros((3, 2)))
        np.testing.assert_allclose(out.numpy(), np.sqrt(sched.alpha_bar[4]) * x0)

    def test_zero_scale_is_identity(self) -> None:
        sched = build_schedule(10, 0.0, 0.01, 0.2)
        x0 = make_rng(0, "x").normal(size=(4, 3))
        out = forward_sample(x0, 7, sched, make_rng(1, "eps"))
        np.testing.assert_allclose(out.numpy(), x0)

    def test_per_row_timesteps(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        out = forward_sample(np.ones((2, 1)), np.array([1, 10]), sched, eps=np.zeros((2, 1)))
        np.testing.assert_allclose(out.numpy()[:, 0], np.sqrt(sched.alpha_bar[[1, 10]]))

    def test_rejects_out_of_range_step(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        with pytest.raises(ValidationError):
            forward_sample(np.ones((1, 1)), 11, sched, make_rng(0, "eps"))
        with pytest.raises(ValidationError):
            forward_sample(np.ones((1, 1)), 0, sched, make_rng(0, "eps"))

    def test_closed_form_marginal_is_gaussian(self) -> None:
        sched = build_schedule(10, 1.0, 0.1, 0.6)
        samples = forward_sample(np.zeros((5000, 1)), 10, sched, make_rng(3, "ks")).numpy()
        z = samples[:, 0] / np.sqrt(sched.one_minus_alpha_bar[10])
        assert stats.kstest(z, "norm").pvalue > 1e-3

    def test_stepwise_chain_matches_closed_form(self) -> None:
        sched = build_schedule(8, 1.0, 0.1, 0.6)
        rng = make_rng(4, "chain")
        x = Tensor(np.zeros((5000, 1)))
        for t in range(1, 9):
            x = forward_step(x, t, sched, rng)
        z = x.numpy()[:, 0] / np.sqrt(sched.one_minus_alpha_bar[8])
        assert stats.kstest(z, "norm").pvalue > 1e-3

    def test_short_chain_two_sample(self) -> None:
        sched = build_schedule(5, 0.5, 0.01, 0.2)
        x0 = np.full((10_000, 1), 0.8)
        closed = forward_sample(x0, 5, sched, make_rng(5, "closed")).numpy()[:, 0]
        rng = make_rng(6, "stepwise")
        x = Tensor(x0)
        for t in range(1, 6):
            x = forward_step(x, t, sched, rng)
        assert stats.ks_2samp(closed, x.numpy()[:, 0]).pvalue > 0.01

    def test_forward_diffuse_at_zero(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x0 = Tensor(np.ones((2, 2)))
        state = forward_diffuse(x0, 0, sched)
        assert state.x_t is x0


class TestReverseProcess:
    def test_last_step_returns_posterior_mean(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x_t = Tensor(np.ones((2, 3)))
        out = reverse_step(x_t, 1, _zero_net, sched, make_rng(0, "rev"))
        np.testing.assert_allclose(out.numpy(), sched.posterior_mean_coef2[1] * np.ones((2, 3)))

    def test_noiseless_schedule_returns_input(self) -> None:
        sched = build_schedule(10, 0.0, 0.01, 0.2)
        x = Tensor(make_rng(0, "x").normal(size=(3, 2)))
        out = denoise_embeddings(x, _zero_net, sched, 5, make_rng(1, "d"))
        np.testing.assert_allclose(out.numpy(), x.numpy())

    def test_deterministic_denoising_is_reproducible(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        net = DenoiserNet.init(3, make_rng(0, "net"), hidden=8, time_dim=4)
        x = Tensor(make_rng(1, "x").normal(size=(4, 3)))
        a = denoise_embeddings(x, net, sched, 3, deterministic=True)
        b = denoise_embeddings(x, net, sched, 3, deterministic=True)
        np.testing.assert_array_equal(a.numpy(), b.numpy())

    def test_zero_steps_is_identity(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x = Tensor(np.ones((2, 2)))
        assert denoise_embeddings(x, _zero_net, sched, 0) is x

    def test_too_many_steps(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        with pytest.raises(ValidationError):
            denoise_embeddings(Tensor(np.ones((1, 1))), _zero_net, sched, 11)


class TestDenoiserNet:
    def test_output_shape(self) -> None:
        net = DenoiserNet.init(5, make_rng(0, "net"), hidden=7, time_dim=4)
        out = net(Tensor(np.zeros((3, 5))), np.array([1, 2, 3]))
        assert out.shape == (3, 5)
        assert len(net.tensors()) == 4

    def test_timestep_encoding_odd_width(self) -> None:
        enc = timestep_encoding(np.array([0, 1]), 5)
        assert enc.shape == (2, 5)
        np.testing.assert_allclose(enc[0, :2], [0.0, 0.0])
        np.testing.assert_allclose(enc[0, 2:4], [1.0, 1.0])


class TestElbo:
    def test_zero_predictor_gives_squared_norm(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x0 = Tensor([[1.0, 2.0], [0.0, 3.0]])
        loss = elbo_loss(x0, _zero_net, sched, make_rng(0, "elbo"))
        assert loss.item() == pytest.approx((5.0 + 9.0) / 2.0)

    def test_trains_denoiser(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        net = DenoiserNet.init(2, make_rng(0, "net"), hidden=4, time_dim=2)
        x0 = Tensor(make_rng(1, "x").normal(size=(6, 2)))
        with Tape() as tape:
            loss = elbo_loss(x0, net, sched, make_rng(2, "elbo"))
        grads = tape.backward(loss)
        assert np.abs(grads.array_for(net.w_out)).sum() > 0

    def test_empty_batch(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        with pytest.raises(ValidationError):
            elbo_loss(Tensor(np.zeros((0, 2))), _zero_net, sched, make_rng(0, "elbo"))

    def test_regularizer_waits_for_warmup(self) -> None:
        sched = build_schedule(10, 0.5, 0.01, 0.2)
        x = Tensor(np.ones((2, 2)))
        before = ddr_regularizer(x, _zero_net, sched, 2, 5, 0.1, make_rng(0, "ddr"))
        after = ddr_regularizer(x, _zero_net, sched, 5, 5, 0.1, make_rng(0, "ddr"))
        assert before.item() == 0.0
        assert after.item() == pytest.approx(0.1 * 2.0)
