"""Convolutional beta-VAE: encoder, reparameterized latent, decoder, training.

Encoder: four 4x4 stride-2 convolutions (32, 32, 64, 64 channels) with ReLU,
then dense 256 and a dense head producing ``mu || logvar``. The decoder
mirrors it with transposed convolutions and ends in per-pixel logits; the
reconstruction is ``sigmoid(logits)``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .numeric import ops
from .numeric.layers import Chain, Conv2d, ConvTranspose2d, Dense, Flatten, ReLU, Reshape
from .numeric.optim import adam_step
from .numeric.params import ParamStore, load_checkpoint, save_checkpoint
from .numeric.rng import generator, seeded_normal

log = logging.getLogger(__name__)

LOGVAR_CLAMP = (-10.0, 10.0)
CHANNELS = (32, 32, 64, 64)
HIDDEN = 256

GRID_BETAS = tuple(2 ** i for i in range(8))
GRID_LATENT_SIZES = tuple(2 ** i for i in range(3, 8))
GRID_LEARNING_RATES = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class VaeConfig:
    latent_size: int = 32
    beta: float = 4.0
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 1000
    seed: int = 0
    # None means one full pass over the training ids per epoch
    steps_per_epoch: int | None = None
    recon: str = "bce"
    patience: int = 20
    smoothing: int = 5
    min_rel_improvement: float = 1e-4
    monitor_size: int = 1024

    def __post_init__(self):
        if self.latent_size < 2:
            raise ConfigError(f"latent_size must be >= 2, got {self.latent_size}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1 or None")
        if self.recon not in ("bce", "mse"):
            raise ConfigError(f"recon must be 'bce' or 'mse', got {self.recon!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown VaeConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    sample: np.ndarray
    noise: np.ndarray | None = None


class BetaVAE:
    def __init__(self, latent_size: int, canvas=(64, 64), seed: int = 0, dtype=np.float32,
                 store: ParamStore | None = None):
        self.latent_size = int(latent_size)
        self.canvas = tuple(canvas)
        if self.canvas[0] % 16 or self.canvas[1] % 16:
            raise ConfigError(f"canvas {self.canvas} must be divisible by 16")
        fh, fw = self.canvas[0] // 16, self.canvas[1] // 16
        c = CHANNELS
        self.encoder = Chain([
            Conv2d("enc.conv1", 1, c[0], 4, 2, 1), ReLU(),
            Conv2d("enc.conv2", c[0], c[1], 4, 2, 1), ReLU(),
            Conv2d("enc.conv3", c[1], c[2], 4, 2, 1), ReLU(),
            Conv2d("enc.conv4", c[2], c[3], 4, 2, 1), ReLU(),
            Flatten(),
            Dense("enc.fc1", fh * fw * c[3], HIDDEN), ReLU(),
            Dense("enc.fc2", HIDDEN, 2 * self.latent_size, gain=1.0),
        ])
        self.decoder = Chain([
            Dense("dec.fc1", self.latent_size, HIDDEN), ReLU(),
            Dense("dec.fc2", HIDDEN, fh * fw * c[3]), ReLU(),
            Reshape((fh, fw, c[3])),
            ConvTranspose2d("dec.deconv1", c[3], c[2], 4, 2, 1), ReLU(),
            ConvTranspose2d("dec.deconv2", c[2], c[1], 4, 2, 1), ReLU(),
            ConvTranspose2d("dec.deconv3", c[1], c[0], 4, 2, 1), ReLU(),
            ConvTranspose2d("dec.deconv4", c[0], 1, 4, 2, 1, gain=1.0),
        ])
        if store is None:
            store = ParamStore(dtype=dtype)
            rng = generator(seed, 0)
            self.encoder.init(store, rng)
            self.decoder.init(store, rng)
        self.store = store

    @property
    def dtype(self):
        return self.store.dtype

    def _check(self, images):
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4 or images.shape[1:] != self.canvas + (1,):
            raise ShapeError("BetaVAE.encode", images.shape, self.canvas + (1,))
        return images.astype(self.dtype, copy=False)

    def _split_head(self, h):
        mu = h[:, :self.latent_size]
        raw = h[:, self.latent_size:]
        logvar = np.clip(raw, *LOGVAR_CLAMP)
        return mu, logvar, raw

    def encode(self, images, noise=None) -> LatentCode:
        """Encode a batch (n, H, W[, 1]). Without ``noise`` the sample is ``mu``."""
        x = self._check(np.asarray(images))
        mu, logvar, _ = self._split_head(self.encoder.forward(self.store, x))
        if noise is None:
            return LatentCode(mu, logvar, mu.copy())
        return LatentCode(mu, logvar, mu + np.exp(0.5 * logvar) * noise, noise)

    def decode_logits(self, z):
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim == 1:
            z = z[None]
        if z.shape[1] != self.latent_size:
            raise ShapeError("BetaVAE.decode", z.shape, (self.latent_size,))
        return self.decoder.forward(self.store, z)

    def decode(self, z):
        """Reconstruction probabilities, shape (n, H, W, 1)."""
        return ops.sigmoid(self.decode_logits(z))

    def reconstruct(self, images, batch_size: int = 256):
        """Deterministic reconstructions (z = mu)."""
        out = []
        for i in range(0, len(images), batch_size):
            out.append(self.decode(self.encode(images[i:i + batch_size]).mu))
        return np.concatenate(out) if out else np.zeros((0,) + self.canvas + (1,), self.dtype)

    def encode_means(self, images, batch_size: int = 256):
        return np.concatenate([self.encode(images[i:i + batch_size]).mu
                               for i in range(0, len(images), batch_size)])

    def loss_and_grads(self, images, beta: float, noise=None, recon: str = "bce", need_grads=True):
        """Batch-mean ELBO terms and gradients wrt every parameter.

        Returns ``(total, recon_term, kl_term, grads)``; ``grads`` is None when
        ``need_grads`` is false.
        """
        x = self._check(np.asarray(images))
        n = x.shape[0]
        h = self.encoder.forward(self.store, x)
        mu, logvar, raw = self._split_head(h)
        if noise is None:
            std = None
            z = mu
        else:
            std = np.exp(0.5 * logvar)
            z = mu + std * noise
        logits = self.decoder.forward(self.store, z)
        if recon == "bce":
            rec = ops.bce_logits_sum(logits, x) / n
        else:
            rec = ops.squared_error_sum(ops.sigmoid(logits), x) / n
        kl = ops.gaussian_kl(mu, logvar) / n
        total = rec + beta * kl
        if not np.isfinite(total):
            raise NumericalError(f"non-finite loss (recon={rec}, kl={kl})")
        if not need_grads:
            return total, rec, kl, None
        grads = self.store.zero_grads()
        if recon == "bce":
            dlogits = ops.bce_logits_sum_grad(logits, x) / n
        else:
            p = ops.sigmoid(logits)
            dlogits = ops.sigmoid_grad(ops.squared_error_sum_grad(p, x), p) / n
        dz = self.decoder.backward(self.store, grads, dlogits.astype(self.dtype, copy=False))
        dmu_kl, dlogvar_kl = ops.gaussian_kl_grad(mu, logvar)
        dmu = dz + beta * dmu_kl / n
        dlogvar = beta * dlogvar_kl / n
        if noise is not None:
            dlogvar = dlogvar + dz * noise * 0.5 * std
        inside = (raw >= LOGVAR_CLAMP[0]) & (raw <= LOGVAR_CLAMP[1])
        dh = np.concatenate([dmu, dlogvar * inside], axis=1).astype(self.dtype, copy=False)
        self.encoder.backward(self.store, grads, dh)
        return total, rec, kl, grads


def elbo_loss(image, reconstruction, code: LatentCode, beta: float, recon: str = "bce"):
    """``(total, recon_term, kl_term)`` for one image (or a batch, summed)."""
    image = np.asarray(image, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64).reshape(image.shape)
    if recon == "bce":
        rec = ops.bce_sum(reconstruction, image)
    else:
        rec = ops.squared_error_sum(reconstruction, image)
    kl = ops.gaussian_kl(np.asarray(code.mu, np.float64), np.asarray(code.logvar, np.float64))
    return rec + beta * kl, rec, kl


# --- checkpoints -----------------------------------------------------------

@dataclass
class ModelCheckpoint:
    model: BetaVAE
    config: VaeConfig
    epoch: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False

    def header(self) -> dict:
        return {
            "kind": "betavae",
            "canvas": list(self.model.canvas),
            "latent_size": self.model.latent_size,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "history": self.history,
            "stopped_early": self.stopped_early,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.model.store, self.header())

    @classmethod
    def load(cls, path, dtype=np.float32) -> "ModelCheckpoint":
        store, header = load_checkpoint(path, dtype)
        if header.get("kind") != "betavae":
            raise ConfigError(f"{path} is not a beta-VAE checkpoint (kind={header.get('kind')!r})")
        model = BetaVAE(header["latent_size"], tuple(header["canvas"]), store=store)
        return cls(model, VaeConfig.from_dict(header["config"]), header["epoch"],
                   header["history"], header.get("stopped_early", False))


# --- training --------------------------------------------------------------

def _batches(n_ids: int, batch_size: int, seed: int):
    """Endless stream of index batches from seeded reshuffled passes."""
    epoch = 0
    while True:
        perm = generator(seed, 1_000_000 + epoch).permutation(n_ids)
        for i in range(0, n_ids - batch_size + 1 if n_ids >= batch_size else 1, batch_size):
            yield perm[i:i + batch_size]
        epoch += 1


def plateaued(losses: Sequence[float], patience: int, window: int, min_rel: float) -> bool:
    """True when the ``window``-smoothed loss improved by less than ``min_rel``
    (relative) over the last ``patience`` epochs."""
    if len(losses) < patience + window:
        return False
    arr = np.asarray(losses, dtype=np.float64)
    now = arr[-window:].mean()
    then = arr[-window - patience:len(arr) - patience].mean()
    return (then - now) < min_rel * abs(then)


def evaluate_loss(model: BetaVAE, images, beta: float, recon: str = "bce", batch_size: int = 256):
    """Mean ELBO terms over ``images`` with z = mu."""
    tot = rec = kl = 0.0
    n = len(images)
    for i in range(0, n, batch_size):
        b = images[i:i + batch_size]
        t, r, k, _ = model.loss_and_grads(b, beta, None, recon, need_grads=False)
        tot += t * len(b)
        rec += r * len(b)
        kl += k * len(b)
    return tot / n, rec / n, kl / n


def train(config: VaeConfig, train_ids, store, monitor_ids=None, canvas=None,
          progress=None) -> ModelCheckpoint:
    """Train a fresh beta-VAE on ``store`` images ``train_ids``.

    Early stopping watches the loss on ``monitor_ids`` (a held-out fold) when
    given, else the per-epoch training loss.
    """
    train_ids = np.asarray(train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise ConfigError("empty training set")
    canvas = canvas or store.canvas
    model = BetaVAE(config.latent_size, canvas, seed=config.seed)
    bs = min(config.batch_size, train_ids.size)
    steps = config.steps_per_epoch or max(1, train_ids.size // bs)
    monitor = None
    if monitor_ids is not None and len(monitor_ids):
        monitor_ids = np.asarray(monitor_ids, dtype=np.int64)[:config.monitor_size]
        monitor = store.batch(monitor_ids)
    stream = _batches(train_ids.size, bs, config.seed)
    ckpt = ModelCheckpoint(model, config)
    watched = []
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        for _ in range(steps):
            idx = next(stream)
            x = store.batch(train_ids[idx])
            noise = seeded_normal((len(idx), config.latent_size), config.seed, step)
            try:
                total, rec, kl, grads = model.loss_and_grads(x, config.beta, noise, config.recon)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {step}: {exc}") from exc
            adam_step(model.store, grads, config.learning_rate)
            sums += (total, rec, kl)
            step += 1
        entry = {"epoch": epoch, "loss": sums[0] / steps, "recon": sums[1] / steps, "kl": sums[2] / steps}
        if monitor is not None:
            entry["monitor_loss"], entry["monitor_recon"], entry["monitor_kl"] = \
                evaluate_loss(model, monitor, config.beta, config.recon)
        entry = {k: (float(v) if k != "epoch" else v) for k, v in entry.items()}
        ckpt.history.append(entry)
        ckpt.epoch = epoch
        watched.append(entry["monitor_loss"] if monitor is not None else entry["loss"])
        log.info("epoch %d loss %.2f recon %.2f kl %.2f (%.1fs)", epoch, entry["loss"],
                 entry["recon"], entry["kl"], time.perf_counter() - t0)
        if progress is not None:
            progress(entry)
        if plateaued(watched, config.patience, config.smoothing, config.min_rel_improvement):
            ckpt.stopped_early = True
            break
    return ckpt
