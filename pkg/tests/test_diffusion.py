"""Tests for the DDPM schedule, timestep map, denoiser, and reconstruction."""

import math

import numpy as np
import pytest

from graphleak import diffusion as dif
from graphleak import dp, graphgen
from graphleak.numerics import Tensor, gradcheck


@pytest.fixture(scope="module")
def schedule():
    return dif.build_schedule(100)


def test_schedule_boundary_values(schedule):
    assert schedule.alpha_bars[0] == 1.0
    sched200 = dif.build_schedule(200)
    assert sched200.alpha_bars[-1] < 0.01


def test_schedule_strictly_decreasing(schedule):
    assert np.all(np.diff(schedule.alpha_bars) < 0)
    assert np.all((schedule.betas[1:] > 0) & (schedule.betas[1:] < 1))


def test_schedule_cumprod_identity(schedule):
    assert np.allclose(
        schedule.alpha_bars[1:], np.cumprod(schedule.alphas[1:]), rtol=1e-12
    )


def test_schedule_posterior_sigma_formula(schedule):
    t = 50
    expect = math.sqrt(
        schedule.betas[t]
        * (1 - schedule.alpha_bars[t - 1])
        / (1 - schedule.alpha_bars[t])
    )
    assert schedule.posterior_sigmas[t] == pytest.approx(expect)
    assert schedule.posterior_sigmas[1] == 0.0  # 1 - abar_0 = 0


def test_forward_sample_variance_identity(schedule):
    z0 = np.zeros(100_000)
    for t in [1, 10, 25, 50, 75, 100]:
        z_t, eps = dif.forward_sample(z0, t, schedule, seed=t)
        target = 1.0 - schedule.alpha_bars[t]
        resid = z_t - math.sqrt(schedule.alpha_bars[t]) * z0
        assert np.var(resid) == pytest.approx(target, rel=0.02)
        assert z_t.shape == eps.shape


def test_forward_sample_low_noise_limit(schedule):
    # noise std at t=1 is ~0.025, so 0.15 is a ~6-sigma band
    z0 = np.full(1000, 0.7)
    z_t, _ = dif.forward_sample(z0, 1, schedule, seed=0)
    assert np.allclose(z_t, z0, atol=0.15)
    assert np.mean(np.abs(z_t - z0)) < 0.05


def test_effective_timestep_cases(schedule):
    assert dif.effective_timestep(0.0, schedule) == dif.EffectiveTimestep(1, False)
    target = 1.0 - schedule.alpha_bars[60]
    assert dif.effective_timestep(target, schedule).t == 60
    over = dif.effective_timestep(5.0, schedule)
    assert over.t == schedule.steps
    assert over.out_of_range


def test_effective_timestep_monotone(schedule):
    sweep = np.linspace(0.0, 1.2, 100)
    ts = [dif.effective_timestep(float(s), schedule).t for s in sweep]
    assert all(a <= b for a, b in zip(ts, ts[1:]))


def test_conditioning_presence_masks_rows():
    values = np.arange(12.0).reshape(4, 3)
    signal = dif.build_conditioning(values, [1, 0, 1, 0], "explanations")
    assert signal.rows.shape == (4, 4)
    assert np.all(signal.rows[1] == 0)
    assert np.all(signal.rows[3] == 0)
    assert signal.rows[0, -1] == 1.0


def _tiny_fixture(n_windows=6, k=8, seed=0):
    params = graphgen.SbmParams(
        n=48, num_classes=2, p_in=0.4, p_out=0.05, mean_radius=2.0,
        feature_noise=0.4, feature_dim=5,
    )
    graph = graphgen.generate_sbm(params, seed=seed)
    rng = np.random.default_rng(seed + 1)
    windows, signals = [], []
    for center in rng.choice(graph.n, size=n_windows, replace=False):
        win = graphgen.sample_egonet(graph, int(center), k, seed=int(center))
        windows.append(win)
        signals.append(win.features.copy())
    return windows, signals


class _ZeroPredictor:
    """Denoiser stub always predicting zero noise."""

    def __init__(self, config):
        self.config = config

    def forward_tensors(self, z, cond, t):
        return Tensor(np.zeros((self.config.window, self.config.window)))


def test_untrained_zero_denoiser_loss_is_k_squared(schedule):
    windows, signals = _tiny_fixture()
    k = windows[0].k
    config = dif.DenoiserConfig(window=k, cond_dim=signals[0].shape[1] + 1)
    zero = _ZeroPredictor(config)
    loss = dif.average_denoiser_loss(
        zero, windows, signals, "features", schedule, trials=128, seed=3
    )
    # predicting 0 leaves E||eps||^2; symmetric noise keeps per-entry var 1
    assert loss == pytest.approx(k * k, rel=0.1)


def test_training_beats_untrained_on_held_out(schedule):
    train_w, train_s = _tiny_fixture(seed=0)
    held_w, held_s = _tiny_fixture(seed=9)
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    losses = []
    for seed in range(3):
        trained = dif.train_denoiser(
            train_w, train_s, "features", schedule, config=config,
            steps=150, seed=seed,
        )
        untrained = dif.Denoiser.init(config, seed=seed + 50)
        l_trained = dif.average_denoiser_loss(
            trained, held_w, held_s, "features", schedule, trials=48, seed=77
        )
        l_untrained = dif.average_denoiser_loss(
            untrained, held_w, held_s, "features", schedule, trials=48, seed=77
        )
        losses.append(l_trained / l_untrained)
    assert np.median(losses) < 0.9


def test_denoiser_gradcheck_tiny_config():
    config = dif.DenoiserConfig(window=4, cond_dim=3, layers=1, hidden=8,
                                heads=2, t_embed_dim=4)
    denoiser = dif.Denoiser.init(config, seed=1, scale=0.3)
    rng = np.random.default_rng(2)
    z_t = rng.standard_normal((4, 4))
    cond = rng.standard_normal((4, 3))
    eps = rng.standard_normal((4, 4))

    params = denoiser.parameter_items()
    tensors = [t for _, t in params]

    def loss_fn(inputs):
        return dif.denoiser_loss(denoiser, z_t, cond, 2, eps)

    report = gradcheck(loss_fn, tensors, step=1e-5, tol=1e-3)
    assert report.passed, report.failures


def test_reconstruct_contract_and_determinism(schedule):
    windows, signals = _tiny_fixture()
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    denoiser = dif.train_denoiser(
        windows, signals, "features", schedule, config=config, steps=60, seed=0
    )
    spec = dp.calibrate("gaussian", epsilon=5.0, delta=1e-5)
    noisy = dp.perturb(signals[0], spec, seed=1)
    signal = dif.build_conditioning(noisy, np.ones(8), "features")

    class Knowledge:
        mechanism = "gaussian"
        epsilon_hat = 5.0
        delta_hat = 1e-5
        alpha_hat = 10.0

    scores = dif.reconstruct(signal, denoiser, schedule, Knowledge(), seed=4)
    assert scores.shape == (8, 8)
    assert np.array_equal(scores, scores.T)
    assert np.all(np.diag(scores) == 0)
    off = scores[np.triu_indices(8, k=1)]
    assert np.all((off > 0) & (off < 1))

    again = dif.reconstruct(signal, denoiser, schedule, Knowledge(), seed=4)
    assert np.array_equal(scores, again)
    other = dif.reconstruct(signal, denoiser, schedule, Knowledge(), seed=5)
    assert not np.array_equal(scores, other)


def test_reconstruct_masked_signal_ignores_values(schedule):
    windows, signals = _tiny_fixture()
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    denoiser = dif.train_denoiser(
        windows, signals, "features", schedule, config=config, steps=60, seed=0
    )

    class Knowledge:
        mechanism = "gaussian"
        epsilon_hat = 5.0
        delta_hat = 1e-5
        alpha_hat = 10.0

    rng = np.random.default_rng(6)
    values = rng.standard_normal((8, 5))
    masked = dif.build_conditioning(values, np.zeros(8), "features")
    permuted = dif.build_conditioning(values[::-1].copy(), np.zeros(8), "features")
    a = dif.reconstruct(masked, denoiser, schedule, Knowledge(), seed=7)
    b = dif.reconstruct(permuted, denoiser, schedule, Knowledge(), seed=7)
    assert np.array_equal(a, b)


def test_reconstruct_rejects_mismatched_signal(schedule):
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    denoiser = dif.Denoiser.init(config, seed=0)

    class Knowledge:
        mechanism = "gaussian"
        epsilon_hat = 1.0
        delta_hat = 1e-5

    bad = dif.ConditioningSignal(rows=np.zeros((8, 9)), kind="features")
    with pytest.raises(dif.DiffusionError):
        dif.reconstruct(bad, denoiser, schedule, Knowledge(), seed=0)


def test_reconstruct_unknown_mechanism_needs_override(schedule):
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    denoiser = dif.Denoiser.init(config, seed=0)

    class Knowledge:
        mechanism = "unknown"
        epsilon_hat = 1.0
        delta_hat = 1e-5

    signal = dif.ConditioningSignal(rows=np.zeros((8, 6)), kind="features")
    with pytest.raises(dif.DiffusionError):
        dif.reconstruct(signal, denoiser, schedule, Knowledge(), seed=0)
    out = dif.reconstruct(
        signal, denoiser, schedule, Knowledge(), seed=0, sigma2_override=0.5
    )
    assert out.shape == (8, 8)


def test_denoiser_save_load_round_trip(tmp_path, schedule):
    windows, signals = _tiny_fixture()
    config = dif.DenoiserConfig(window=8, cond_dim=6)
    denoiser = dif.train_denoiser(
        windows, signals, "features", schedule, config=config, steps=30, seed=0
    )
    path = tmp_path / "model.ddpm"
    dif.save_denoiser(denoiser, path)
    loaded = dif.load_denoiser(path)
    assert loaded.config == denoiser.config
    for name, tensor in denoiser.params.items():
        assert np.array_equal(loaded.params[name].data, tensor.data)
    z = np.random.default_rng(0).standard_normal((8, 8))
    cond = np.zeros((8, 6))
    assert np.array_equal(
        loaded.forward(z, cond, 5), denoiser.forward(z, cond, 5)
    )
