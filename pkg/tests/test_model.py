import numpy as np
import pytest
import torch

from seqdisent.errors import ConfigError
from seqdisent.model import (LOGVAR_MIN, GaussianParams, ModelConfig, SequentialVAE, audio_config,
                             reparameterize, video_config)


def tiny_video(size=16, dtype=torch.float64, **kw):
    torch.manual_seed(0)
    n = int(np.log2(size / 4))
    args = dict(d_zf=3, d_zt=2, feature_dim=8, rnn_hidden=8, enc_channels=[4] * n, dec_channels=[4] * (n + 1),
                dfp_hidden=6)
    args.update(kw)
    return SequentialVAE(video_config(size, grid=4, k=1, **args)).to(dtype).eval()


def tiny_audio():
    torch.manual_seed(0)
    return SequentialVAE(audio_config(feature_dim=8, rnn_hidden=8, audio_hidden=8, dfp_hidden=4,
                                      d_zf=3, d_zt=2)).double().eval()


def test_default_config_layer_widths():
    cfg = ModelConfig(image_size=64)
    assert cfg.enc_channels == [64, 128, 256, 512]
    assert cfg.dec_channels == [512, 256, 128, 128, 64]
    assert (cfg.d_zf, cfg.d_zt, cfg.rnn_hidden) == (256, 32, 256)
    assert video_config(64).dfp_classes == 64


@pytest.mark.parametrize("kw", [dict(image_size=48), dict(modality="text"), dict(d_zf=0),
                                dict(image_size=32, enc_channels=[4, 4])])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_posterior_and_decoder_shapes():
    m = tiny_video()
    x = torch.rand(2, 5, 1, 16, 16, dtype=torch.float64)
    q_f, q_t = m.infer(m.encode_frames(x))
    assert q_f.mean.shape == q_f.log_var.shape == (2, 3)
    assert q_t.mean.shape == q_t.log_var.shape == (2, 5, 2)
    out = m.decode(q_f.mean, q_t.mean)
    assert out.shape == x.shape
    assert out.min() > 0 and out.max() < 1
    assert m.predict_dynamic_factor(q_t.mean).shape == (2, 5, 16)


def test_audio_head_is_binary():
    m = tiny_audio()
    x = torch.rand(2, 4, 80, dtype=torch.float64)
    out = m(x)
    assert out["dfp_logits"].shape == (2, 4, 2)
    assert out["x_hat"].shape == x.shape


def test_dim_mismatch_errors():
    m = tiny_video()
    with pytest.raises(ConfigError):
        m.decode(torch.zeros(1, 4, dtype=torch.float64), torch.zeros(1, 2, 2, dtype=torch.float64))
    with pytest.raises(ConfigError):
        m.predict_dynamic_factor(torch.zeros(1, 2, 5, dtype=torch.float64))


def test_repeated_frames_finite():
    m = tiny_video()
    x = torch.rand(1, 1, 1, 16, 16, dtype=torch.float64).repeat(1, 6, 1, 1, 1)
    q_f, q_t = m.infer(m.encode_frames(x))
    assert torch.isfinite(q_f.mean).all() and torch.isfinite(q_t.log_var).all()


def test_dynamic_posterior_is_causal():
    m = tiny_video()
    g = torch.Generator().manual_seed(1)
    feats = torch.randn(3, 6, 8, generator=g, dtype=torch.float64)
    base = m.infer_dynamic(feats)
    for t in range(6):
        f2 = feats.clone()
        f2[:, t:] += torch.randn(3, 6 - t, 8, generator=g, dtype=torch.float64)
        out = m.infer_dynamic(f2)
        assert torch.equal(out.mean[:, :t], base.mean[:, :t])
        assert torch.equal(out.log_var[:, :t], base.log_var[:, :t])
        assert not torch.equal(out.mean[:, t], base.mean[:, t])


def test_decoder_factorizes_over_frames():
    m = tiny_video()
    g = torch.Generator().manual_seed(2)
    z_f = torch.randn(2, 3, generator=g, dtype=torch.float64)
    z_t = torch.randn(2, 5, 2, generator=g, dtype=torch.float64)
    base = m.decode(z_f, z_t)
    for s in range(5):
        z2 = z_t.clone()
        z2[:, s] += 1.0
        out = m.decode(z_f, z2)
        for t in range(5):
            if t != s:
                assert torch.equal(out[:, t], base[:, t])
        assert not torch.equal(out[:, s], base[:, s])


def test_prior_boundary_and_purity():
    m = tiny_video()
    empty = torch.zeros(2, 0, 2, dtype=torch.float64)
    p1 = m.prior_dynamic(empty)
    p1b = m.prior_dynamic(empty)
    assert torch.equal(p1.mean, p1b.mean)
    assert torch.equal(p1.mean[0], p1.mean[1])  # no dependence on the batch row at t=1
    prefix = torch.randn(2, 3, 2, dtype=torch.float64)
    assert torch.equal(m.prior_dynamic(prefix).mean, m.prior_dynamic(prefix.clone()).mean)


def test_teacher_forced_prior_matches_prefix_calls():
    m = tiny_video()
    z = torch.randn(2, 4, 2, dtype=torch.float64)
    tf = m.prior_teacher_forced(z)
    for t in range(4):
        p = m.prior_dynamic(z[:, :t])
        torch.testing.assert_close(tf.mean[:, t], p.mean, rtol=0, atol=1e-12)
        torch.testing.assert_close(tf.log_var[:, t], p.log_var, rtol=0, atol=1e-12)


def test_prior_rollout_finite():
    m = tiny_video()
    z = m.sample_prior(4, 5, torch.Generator().manual_seed(0))
    assert z.shape == (4, 5, 2) and torch.isfinite(z).all()


def test_reparameterize_monte_carlo():
    p = GaussianParams(torch.tensor([1.5, -2.0], dtype=torch.float64).expand(100_000, 2),
                       torch.tensor([0.4, -1.0], dtype=torch.float64).expand(100_000, 2))
    s = reparameterize(p, torch.Generator().manual_seed(0))
    np.testing.assert_allclose(s.mean(0).numpy(), [1.5, -2.0], rtol=0.01)
    np.testing.assert_allclose(s.std(0).numpy(), np.exp([0.2, -0.5]), rtol=0.01)


def test_reparameterize_degenerate_and_gradient():
    mean = torch.tensor([0.3, -0.7], dtype=torch.float64, requires_grad=True)
    p = GaussianParams.from_raw(torch.cat([mean, torch.full((2,), -1e4, dtype=torch.float64)]))
    assert p.log_var.min().item() == LOGVAR_MIN
    s = reparameterize(p, torch.Generator().manual_seed(0))
    torch.testing.assert_close(s, mean.detach(), atol=1e-4, rtol=0)
    s.sum().backward()
    torch.testing.assert_close(mean.grad, torch.ones(2, dtype=torch.float64))


def test_static_mean_gradient_matches_finite_differences():
    m = tiny_video()
    feats = torch.randn(2, 3, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda f: m.infer_static(f).mean, (feats,), eps=1e-6, atol=1e-8, rtol=1e-3)


def test_dfp_head_gradient_matches_finite_differences():
    m = tiny_video()
    z = torch.randn(2, 3, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(m.predict_dynamic_factor, (z,), eps=1e-6, atol=1e-8, rtol=1e-3)


def test_eval_mode_deterministic_and_nan_free():
    m = tiny_video(size=32)
    x = torch.rand(3, 4, 1, 32, 32, dtype=torch.float64)
    a = m(x, torch.Generator().manual_seed(5))
    b = m(x, torch.Generator().manual_seed(5))
    for k in ("z_f", "z_t", "x_hat", "dfp_logits"):
        assert torch.equal(a[k], b[k])
        assert torch.isfinite(a[k]).all()
