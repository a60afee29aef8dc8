"""Unary probability predictors.

``LinearPatchScorer`` scores every pixel with a linear function of its
neighbourhood and applies a softmax down each column, so every column is a
distribution over surface rows. ``PrecomputedMap`` passes an already computed
map through unchanged, which is how oracle-noise maps enter training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from surfseg._backend import kernels
from surfseg.core import Grid2, InputError, Kind, SurfaceTrace, gaussian_columns
from surfseg.synth import STREAM_ORACLE, STREAM_SHUFFLE, rng


def column_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)


@dataclass(frozen=True)
class LinearPatchScorer:
    patch_rows: int = 9
    patch_cols: int = 9
    temperature: float = 1.0
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1 or self.patch_rows % 2 == 0 \
                or self.patch_cols % 2 == 0:
            raise InputError("patch dimensions must be odd positive integers")
        if not self.temperature > 0:
            raise InputError("temperature must be positive")
        n = self.patch_rows * self.patch_cols + 1
        w = np.zeros(n) if self.weights is None else np.array(self.weights, dtype=np.float64).ravel()
        if w.size != n:
            raise InputError(f"expected {n} weights, got {w.size}")
        object.__setattr__(self, "weights", w)

    @property
    def params(self) -> np.ndarray:
        return self.weights

    def with_params(self, params) -> "LinearPatchScorer":
        return replace(self, weights=np.array(params, dtype=np.float64))

    @property
    def meta(self) -> dict:
        return {"patch_rows": self.patch_rows, "patch_cols": self.patch_cols,
                "temperature": self.temperature}

    def _pad(self, img):
        pr, pc = self.patch_rows // 2, self.patch_cols // 2
        return np.ascontiguousarray(np.pad(img, ((pr, pr), (pc, pc)), mode="edge"))

    def logits(self, img) -> np.ndarray:
        k = self.weights[:-1].reshape(self.patch_rows, self.patch_cols)
        return kernels.patch_logits(self._pad(np.asarray(img, dtype=np.float64)),
                                    np.ascontiguousarray(k), float(self.weights[-1]))

    def forward(self, img):
        img = img.data if isinstance(img, Grid2) else np.asarray(img, dtype=np.float64)
        if not np.all(np.isfinite(img)):
            raise InputError("image contains non-finite values")
        p = column_softmax(self.logits(img) / self.temperature)
        return p, (img, p)

    def backward_logits(self, img, g_logits) -> np.ndarray:
        gw = kernels.patch_weight_grad(self._pad(img), np.ascontiguousarray(g_logits),
                                       self.patch_rows, self.patch_cols)
        return np.append(gw.ravel(), g_logits.sum())

    def backward(self, cache, g_p) -> np.ndarray:
        img, p = cache
        g_z = p * (g_p - np.sum(p * g_p, axis=0))
        return self.backward_logits(img, g_z / self.temperature)


@dataclass(frozen=True)
class PrecomputedMap:
    """Identity predictor: the input already is the probability map."""

    params: np.ndarray = field(default_factory=lambda: np.empty(0))

    def with_params(self, params) -> "PrecomputedMap":
        return self

    def forward(self, img):
        img = img.data if isinstance(img, Grid2) else np.asarray(img, dtype=np.float64)
        return img, None

    def backward(self, cache, g_p) -> np.ndarray:
        return np.empty(0)


def predict(model, image) -> Grid2:
    p, _ = model.forward(image)
    return Grid2(p, Kind.PROBMAP)


@dataclass(frozen=True)
class OracleNoiseSpec:
    corrupt_fraction: float = 0.2
    position_noise_std: float = 4.0
    sigma_emit: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise InputError("corrupt_fraction must lie in [0, 1]")
        if self.position_noise_std < 0:
            raise InputError("position_noise_std must be non-negative")
        if self.sigma_emit is not None and not self.sigma_emit > 0:
            raise InputError("sigma_emit must be positive")


def oracle_displacement(spec: OracleNoiseSpec, n_cols: int, index: int = 0) -> np.ndarray:
    r = rng(spec.seed, STREAM_ORACLE, index)
    hit = r.random(n_cols) < spec.corrupt_fraction
    noise = r.normal(0.0, 1.0, n_cols) * spec.position_noise_std
    return np.where(hit, noise, 0.0)


def oracle_predict(spec: OracleNoiseSpec, truth, n_rows: int, index: int = 0) -> Grid2:
    """Emit Gaussian columns around the truth, displacing a random subset."""
    t = truth.x if isinstance(truth, SurfaceTrace) else np.asarray(truth, dtype=np.float64)
    centre = np.clip(t + oracle_displacement(spec, t.size, index), 0.0, n_rows - 1.0)
    sigma = spec.sigma_emit if spec.sigma_emit is not None else 0.1 * n_rows
    return Grid2(gaussian_columns(centre, n_rows, sigma), Kind.PROBMAP)


def pretrain(model: LinearPatchScorer, dataset, sigma_rel: float = 0.1, lr: float = 1e-4,
             epochs: int = 100, batch_size: int = 1, seed: int = 0):
    """Fit the scorer to Gaussian-relaxed targets by minimising the column KLD.

    ``dataset`` is a sequence of ``(image, truth)`` pairs. Returns the trained
    model and the mean KLD per epoch.
    """
    from surfseg.learning import AdamGroup, adam_step, kld_logit_grad, kld_loss, make_targets

    if not len(dataset):
        raise InputError("pretraining dataset is empty")
    images = [np.asarray(img.data if isinstance(img, Grid2) else img, dtype=np.float64)
              for img, _ in dataset]
    targets = [make_targets(t, img.shape[0], sigma_rel).t_map.data
               for img, (_, t) in zip(images, dataset)]
    group = AdamGroup.fresh(model.params)
    history = []
    for epoch in range(epochs):
        order = rng(seed, STREAM_SHUFFLE, epoch).permutation(len(images))
        total = 0.0
        for k in range(0, len(order), batch_size):
            batch = order[k:k + batch_size]
            g = np.zeros_like(group.params)
            for i in batch:
                p, _ = model.forward(images[i])
                loss, _ = kld_loss(p, targets[i])
                if not np.isfinite(loss):
                    from surfseg.learning import TrainingDiverged
                    raise TrainingDiverged("pretraining loss became non-finite", model)
                total += loss
                g += model.backward_logits(images[i], kld_logit_grad(p, targets[i], model.temperature))
            group = adam_step(group, g / len(batch), lr)
            model = model.with_params(group.params)
        history.append(total / len(images))
    return model, history


def save_model(path, model: LinearPatchScorer, log_w: float | None = None) -> None:
    from surfseg.learning import write_blob

    header = {"kind": "model", "model": model.meta}
    if log_w is not None:
        header["log_w"] = float(log_w)
    write_blob(path, header, [("weights", model.weights)])


def load_model(path) -> tuple[LinearPatchScorer, float | None]:
    """Load a model file or a checkpoint; returns the scorer and its log_w if stored."""
    from surfseg.learning import read_blob

    header, arrays = read_blob(path)
    meta = header.get("model") or {}
    weights = arrays.get("weights", arrays.get("predictor_params"))
    if weights is None:
        raise InputError(f"{path}: no predictor weights")
    return LinearPatchScorer(weights=weights, **meta), header.get("log_w")
