import numpy as np
import pytest

from comporth import disent
from comporth.betavae import BetaVAE
from comporth.errors import ConfigError
from comporth.perturb import DEFAULT_LEVELS, emit_grid, grid_raster, perturb_all, perturb_unit


@pytest.fixture(scope="module")
def model32():
    return BetaVAE(32, seed=5)


@pytest.fixture(scope="module")
def samples(dataset):
    store, _ = dataset
    ids = [0, 4000, 12000, 24000]
    return ids, store.batch(ids)


def test_default_levels():
    assert len(DEFAULT_LEVELS) == 9
    assert DEFAULT_LEVELS[0] == -3.0 and DEFAULT_LEVELS[-1] == 3.0
    assert DEFAULT_LEVELS[4] == 0.0


def test_baseline_column_is_bit_exact(model32, samples):
    ids, x = samples
    recon = model32.decode(model32.encode(x).mu)[..., 0]
    for mode in ("absolute", "additive"):
        g = perturb_unit(model32, x, 7, sample_ids=ids, mode=mode)
        assert np.array_equal(g.images[:, g.baseline_column], recon)


def test_absolute_level_equal_to_mu_reproduces_baseline(model32, samples):
    ids, x = samples
    mu = model32.encode(x[:1]).mu
    g = perturb_unit(model32, x[:1], 3, levels=[float(mu[0, 3])], sample_ids=ids[:1])
    assert np.array_equal(g.images[0, 1], g.images[0, 0])


def test_all_units_give_one_panel_each(model32, samples):
    ids, x = samples
    grids = perturb_all(model32, x, sample_ids=ids)
    assert len(grids) == 32
    assert [g.unit for g in grids] == list(range(32))
    for g in grids:
        assert g.shape == (len(ids), len(DEFAULT_LEVELS) + 1)
        assert g.sample_ids == tuple(ids)


def test_additive_mode_includes_zero_offset(model32, samples):
    _, x = samples
    g = perturb_unit(model32, x, 0, levels=[-1.0, 1.0], mode="additive")
    assert g.levels == (-1.0, 0.0, 1.0)
    assert g.baseline_column == 1
    assert g.shape == (len(x), 3)


def test_other_coordinates_untouched(model32, samples):
    _, x = samples
    mu = model32.encode(x).mu
    seen = []

    class Spy:
        latent_size = model32.latent_size
        canvas = model32.canvas

        def encode(self, images):
            return model32.encode(images)

        def decode(self, z):
            seen.append(z.copy())
            return model32.decode(z)

    perturb_unit(Spy(), x, 11, levels=[-2.0, 2.0])
    others = [j for j in range(32) if j != 11]
    assert len(seen) == 3
    for z in seen:
        assert np.array_equal(z[:, others], mu[:, others])
    assert np.all(seen[1][:, 11] == -2.0) and np.all(seen[2][:, 11] == 2.0)


@pytest.mark.parametrize("levels", [[], [0.0, 0.0], [1.0, -1.0]])
def test_bad_levels_rejected(model32, samples, levels):
    with pytest.raises(ConfigError):
        perturb_unit(model32, samples[1], 0, levels=levels)


def test_unit_out_of_range(model32, samples):
    with pytest.raises(ConfigError):
        perturb_unit(model32, samples[1], 32)


def test_raster_layout(model32, samples, tmp_path):
    _, x = samples
    g = perturb_unit(model32, x, 0, levels=[-1.0, 1.0])
    r = grid_raster(g)
    assert r.shape == (4 * 65 - 1, 3 * 65 - 1)
    assert np.all(r[64, :] == 0.5) and np.all(r[:, 64] == 0.5)
    assert np.array_equal(r[65:129, 130:194], g.images[1, 2])
    with_orig = grid_raster(g, originals=x[..., 0])
    assert with_orig.shape == (4 * 65 - 1, 4 * 65 - 1)
    assert np.array_equal(with_orig[:64, :64], x[0, ..., 0])
    p1 = emit_grid(g, tmp_path / "a.pgm")
    p2 = emit_grid(g, tmp_path / "b.pgm")
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().startswith(b"P5\n")


def test_low_mi_unit_moves_pixels_less_than_top_unit(small_vae, dataset):
    store, manifest = dataset
    model = small_vae.model
    fs = disent.make_factor_set("surface", manifest)
    m = disent.mi_matrix(model, store, fs)
    unit_mi = m.mi.max(axis=1)
    top, low = int(np.argmax(unit_mi)), int(np.argmin(unit_mi))
    assert unit_mi[low] < 0.25 * unit_mi[top]
    x = store.batch(np.arange(0, store.count, 1000))

    def change(unit):
        g = perturb_unit(model, x, unit)
        base = g.images[:, :1]
        return float(np.abs(g.images[:, 1:] - base).mean())

    assert change(low) < change(top)
