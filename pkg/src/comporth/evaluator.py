"""Word classifier used to score reconstructions (Reconstruction Accuracy).

Two 5x5 stride-2 convolutions (16, 32 channels), a dense hidden layer of 128
units and a softmax over the word vocabulary. It is trained on the original
images only, and a reconstruction is scored by the probability it assigns to
the target word.
"""
from __future__ import annotations

import logging
import numpy as np

from .errors import ConfigError, NotTrainedError, ShapeError
from .numeric import ops
from .numeric.layers import Chain, Conv2d, Dense, Flatten, ReLU
from .numeric.optim import adam_step
from .numeric.params import ParamStore, load_checkpoint, save_checkpoint
from .numeric.rng import generator

log = logging.getLogger(__name__)

ACCURACY_TARGET = 0.995


class EvaluatorModel:
    def __init__(self, n_classes: int = 62, canvas=(64, 64), seed: int = 0,
                 store: ParamStore | None = None, trained: bool = False):
        self.n_classes = n_classes
        self.canvas = tuple(canvas)
        if self.canvas[0] % 4 or self.canvas[1] % 4:
            raise ConfigError(f"canvas {self.canvas} must be divisible by 4")
        flat = (self.canvas[0] // 4) * (self.canvas[1] // 4) * 32
        self.net = Chain([
            Conv2d("cls.conv1", 1, 16, 5, 2, 2), ReLU(),
            Conv2d("cls.conv2", 16, 32, 5, 2, 2), ReLU(),
            Flatten(),
            Dense("cls.fc1", flat, 128), ReLU(),
            Dense("cls.fc2", 128, n_classes, gain=1.0),
        ])
        if store is None:
            store = ParamStore()
            self.net.init(store, generator(seed, 0))
        self.store = store
        self.trained = trained
        self.history: list[dict] = []

    def _check(self, images):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2 or (images.ndim == 3 and images.shape == self.canvas + (1,)):
            images = images[None]
        if images.ndim == 3:
            images = images[..., None]
        if images.shape[1:] != self.canvas + (1,):
            raise ShapeError("EvaluatorModel", images.shape, self.canvas + (1,))
        return images

    def logits(self, images, batch_size: int = 512):
        x = self._check(images)
        return np.concatenate([self.net.forward(self.store, x[i:i + batch_size])
                               for i in range(0, len(x), batch_size)])

    def predict_proba(self, images, batch_size: int = 512):
        """(n, n_classes) probability rows."""
        return ops.softmax(self.logits(images, batch_size).astype(np.float64))

    def save(self, path) -> None:
        save_checkpoint(path, self.store, {"kind": "evaluator", "n_classes": self.n_classes,
                                           "canvas": list(self.canvas), "trained": self.trained,
                                           "history": self.history})

    @classmethod
    def load(cls, path) -> "EvaluatorModel":
        store, header = load_checkpoint(path)
        if header.get("kind") != "evaluator":
            raise ConfigError(f"{path} is not an evaluator checkpoint")
        model = cls(header["n_classes"], tuple(header["canvas"]), store=store,
                    trained=header["trained"])
        model.history = header.get("history", [])
        return model


def top1_accuracy(model: EvaluatorModel, images, labels) -> float:
    pred = np.argmax(model.logits(images), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def fit(model: EvaluatorModel, images_of, labels, seed: int = 0, lr: float = 1e-3,
        batch_size: int = 64, max_epochs: int = 30, target: float | None = ACCURACY_TARGET,
        max_steps: int | None = None):
    """Cross-entropy training. ``images_of(ids)`` returns a float batch.

    Stops after the first epoch whose full-pass top-1 accuracy reaches
    ``target``; ``max_steps`` cuts training short (used by sanity controls).
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    step = 0
    for epoch in range(1, max_epochs + 1):
        perm = generator(seed, 1_000_000 + epoch).permutation(n)
        losses = []
        for i in range(0, n, batch_size):
            idx = perm[i:i + batch_size]
            x = images_of(idx)
            grads = model.store.zero_grads()
            loss, dlogits = ops.softmax_cross_entropy(model.net.forward(model.store, x), labels[idx])
            model.net.backward(model.store, grads, dlogits.astype(np.float32))
            adam_step(model.store, grads, lr)
            losses.append(loss)
            step += 1
            if max_steps is not None and step >= max_steps:
                return model
        acc = top1_accuracy(model, images_of(np.arange(n)), labels)
        model.history.append({"epoch": epoch, "loss": float(np.mean(losses)), "train_top1": acc})
        log.info("evaluator epoch %d loss %.4f top1 %.4f", epoch, np.mean(losses), acc)
        if target is not None and acc >= target:
            break
    return model


def train_evaluator(store, manifest, seed: int = 0, max_epochs: int = 30,
                    target: float = ACCURACY_TARGET, lr: float = 1e-3) -> EvaluatorModel:
    """Train on every original image until top-1 train accuracy >= ``target``."""
    labels = np.array([a.word.index for a in manifest], dtype=np.int64)
    if len(labels) != store.count:
        raise ConfigError(f"manifest has {len(labels)} rows but store has {store.count} images")
    n_classes = int(labels.max()) + 1
    model = EvaluatorModel(n_classes, store.canvas, seed=seed)
    fit(model, store.batch, labels, seed=seed, lr=lr, max_epochs=max_epochs, target=target)
    final = model.history[-1]["train_top1"] if model.history else 0.0
    if final < target:
        raise ConfigError(f"evaluator reached only {final:.4f} top-1 after {len(model.history)} "
                          f"epochs (target {target}); check rendering and labels")
    model.trained = True
    return model


def reconstruction_accuracy(model: EvaluatorModel, reconstruction, target):
    """Probability the evaluator assigns to word index ``target``.

    With a single image returns a float; with a batch and a sequence of
    targets returns ``(per_image, mean)``.
    """
    if not model.trained:
        raise NotTrainedError("evaluator has not been trained")
    recon = np.asarray(reconstruction)
    single = recon.ndim == 2 or (recon.ndim == 3 and recon.shape[-1] == 1 and recon.shape[:2] == model.canvas)
    probs = model.predict_proba(recon)
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.size == 1 and probs.shape[0] > 1:
        targets = np.repeat(targets, probs.shape[0])
    if targets.size != probs.shape[0]:
        raise ShapeError("reconstruction_accuracy", probs.shape, targets.shape)
    per = probs[np.arange(len(targets)), targets]
    if single:
        return float(per[0])
    return per, float(per.mean())


def score_batch(model: EvaluatorModel, reconstructions, targets):
    """``(target_prob, top1_index)`` arrays for a batch of reconstructions."""
    if not model.trained:
        raise NotTrainedError("evaluator has not been trained")
    probs = model.predict_proba(reconstructions)
    targets = np.asarray(targets, dtype=np.int64)
    return probs[np.arange(len(targets)), targets], probs.argmax(axis=1)
