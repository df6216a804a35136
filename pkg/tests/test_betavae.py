import numpy as np
import pytest

from comporth.betavae import (
    BetaVAE, LatentCode, ModelCheckpoint, VaeConfig, elbo_loss, plateaued, train,
)
from comporth.corpus import FactorGrid
from comporth.errors import ConfigError, ShapeError
from comporth.numeric.rng import seeded_normal
from comporth.renderer import generate_dataset

from .gradcheck import numeric_grad, rel_error


@pytest.fixture(scope="module")
def small_data():
    grid = FactorGrid(max_length=2, x_shifts=(-1, 0, 1), y_shifts=(0, 1), spacings=(0,))
    return generate_dataset(grid)


def test_shapes_and_zero_input():
    model = BetaVAE(32)
    code = model.encode(np.zeros((2, 64, 64)))
    assert code.mu.shape == code.logvar.shape == (2, 32)
    # zero biases and a black image: every activation stays at zero
    assert np.all(code.mu == 0)
    assert model.decode(code.mu).shape == (2, 64, 64, 1)


def test_zero_init_head_gives_prior():
    model = BetaVAE(8, seed=3)
    model.store["enc.fc2.w"] = np.zeros_like(model.store["enc.fc2.w"])
    code = model.encode(np.random.default_rng(0).random((3, 64, 64)))
    assert np.all(code.mu == 0) and np.all(code.logvar == 0)


def test_eval_mode_is_deterministic(dataset):
    store, _ = dataset
    model = BetaVAE(16, seed=1)
    x = store.batch([10, 20, 30])
    a, b = model.encode(x), model.encode(x)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sample, a.mu)
    assert np.array_equal(model.reconstruct(x), model.reconstruct(x))
    z = np.random.default_rng(0).standard_normal((2, 16))
    assert np.array_equal(model.decode(z), model.decode(z))
    out = model.decode(z)
    assert np.all((out > 0) & (out < 1))


def test_sampled_code_uses_recorded_noise(dataset):
    store, _ = dataset
    model = BetaVAE(16, seed=1)
    noise = seeded_normal((2, 16), 5, 0)
    code = model.encode(store.batch([1, 2]), noise)
    assert np.allclose(code.sample, code.mu + np.exp(code.logvar / 2) * noise)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        BetaVAE(8).encode(np.zeros((1, 32, 32)))
    with pytest.raises(ShapeError):
        BetaVAE(8).decode(np.zeros((1, 9)))


def test_elbo_terms(rng):
    img = (rng.random((64, 64)) > 0.5).astype(float)
    rec = rng.uniform(0.1, 0.9, (64, 64))
    zero = LatentCode(np.zeros(4), np.zeros(4), np.zeros(4))
    total, r, kl = elbo_loss(img, rec, zero, beta=4)
    assert kl == 0 and total == r
    code = LatentCode(rng.standard_normal(4), rng.standard_normal(4), np.zeros(4))
    t0, r0, k0 = elbo_loss(img, rec, code, beta=0)
    assert t0 == r0 and k0 > 0
    t1, _, _ = elbo_loss(img, rec, code, beta=1.5)
    t2, _, _ = elbo_loss(img, rec, code, beta=3.0)
    assert (t2 - r0) == pytest.approx(2 * (t1 - r0), rel=1e-12)


def test_end_to_end_gradient_check(dataset):
    store, _ = dataset
    model = BetaVAE(4, seed=2, dtype=np.float64)
    rng = np.random.default_rng(0)
    for name in model.store.names():
        if name.endswith(".b"):
            # non-zero biases keep pre-activations off the ReLU kink
            model.store[name] = rng.normal(0, 0.1, model.store[name].shape)
    x = store.batch([100, 9000], dtype=np.float64)
    noise = rng.standard_normal((2, 4))
    beta = 3.0
    _, _, _, grads = model.loss_and_grads(x, beta, noise)

    def loss(_):
        return model.loss_and_grads(x, beta, noise, need_grads=False)[0]

    for name in model.store.names():
        p = model.store[name]
        coords = rng.choice(p.size, size=min(p.size, 6), replace=False)
        num = numeric_grad(loss, p, eps=1e-6, coords=coords)
        assert rel_error(grads[name].reshape(-1)[coords], num.reshape(-1)[coords]) < 1e-4, name


def test_kl_non_negative(dataset):
    store, _ = dataset
    model = BetaVAE(8, seed=4)
    _, _, kl, _ = model.loss_and_grads(store.batch(range(0, 25_000, 2_500)), 1.0, need_grads=False)
    assert kl >= 0


def test_config_validation():
    with pytest.raises(ConfigError):
        VaeConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        VaeConfig(recon="l1")
    with pytest.raises(ConfigError):
        VaeConfig.from_dict({"latent_size": 8, "gamma": 1})
    cfg = VaeConfig(latent_size=16, beta=2.0)
    assert VaeConfig.from_dict(cfg.to_dict()) == cfg
    assert VaeConfig().batch_size == 64 and VaeConfig().max_epochs == 1000


def test_plateau_rule():
    assert not plateaued([10.0] * 10, patience=20, window=5, min_rel=1e-4)
    assert plateaued([10.0] * 25, patience=20, window=5, min_rel=1e-4)
    falling = list(np.linspace(100, 50, 30))
    assert not plateaued(falling, patience=20, window=5, min_rel=1e-4)


def _tiny_config(**kw):
    base = dict(latent_size=8, beta=1.0, learning_rate=1e-3, batch_size=16, max_epochs=6,
                steps_per_epoch=8, seed=11)
    base.update(kw)
    return VaeConfig(**base)


def test_training_reduces_loss_and_is_reproducible(small_data, tmp_path):
    store, manifest = small_data
    ids = np.arange(store.count)
    a = train(_tiny_config(), ids, store)
    b = train(_tiny_config(), ids, store)
    losses = [h["loss"] for h in a.history]
    assert len(losses) == 6
    # smoothed trend is downward
    assert np.mean(losses[-2:]) < np.mean(losses[:2])
    assert a.history == b.history
    a.save(tmp_path / "a.ckpt")
    b.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    loaded = ModelCheckpoint.load(tmp_path / "a.ckpt")
    assert loaded.config == a.config and loaded.history == a.history
    x = store.batch(ids[:4])
    assert np.array_equal(loaded.model.reconstruct(x), a.model.reconstruct(x))


def test_training_monitors_held_out_fold(small_data):
    store, _ = small_data
    ck = train(_tiny_config(max_epochs=2), np.arange(0, store.count, 2), store,
               monitor_ids=np.arange(1, store.count, 2))
    assert "monitor_loss" in ck.history[-1]


def test_early_stop(small_data):
    store, _ = small_data
    ck = train(_tiny_config(max_epochs=50, patience=2, smoothing=1, min_rel_improvement=10.0),
               np.arange(store.count), store)
    assert ck.stopped_early and ck.epoch == 3


def test_empty_training_set(small_data):
    with pytest.raises(ConfigError):
        train(_tiny_config(), [], small_data[0])
