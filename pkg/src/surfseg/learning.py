"""Losses, Adam, and the alternating fine-tuning schedule.

Fine-tuning alternates two phases per round: the predictor is trained on the
training split with the smoothness weight frozen, then the smoothness weight
is trained on the validation split with the predictor frozen. The weight is
optimised as ``log_w`` so every smoothing solve stays convex.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from surfseg import d2c, smoothing
from surfseg.core import (
    GaussianField,
    Grid2,
    InputError,
    Kind,
    LengthMismatch,
    NumericalError,
    SurfaceTrace,
    gaussian_columns,
)
from surfseg.synth import STREAM_SHUFFLE, rng

EPS_P = 1e-12
BETA1, BETA2, EPS_ADAM = 0.9, 0.999, 1e-8


class TruthOutOfRange(InputError):
    def __init__(self, col):
        super().__init__(f"truth position of column {col} is outside the rows")
        self.col = col


class NotADistribution(InputError):
    def __init__(self, col):
        super().__init__(f"column {col} does not sum to 1")
        self.col = col


class NonFiniteGradient(NumericalError):
    pass


class TrainingDiverged(NumericalError):
    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


class EmptySplit(InputError):
    pass


# -- targets and losses -------------------------------------------------------

@dataclass(frozen=True)
class GaussianTargets:
    t_map: Grid2
    sigma_rel: float


def make_targets(t, n_rows: int, sigma_rel: float = 0.1) -> GaussianTargets:
    x = t.x if isinstance(t, SurfaceTrace) else np.asarray(t, dtype=np.float64)
    if not sigma_rel > 0:
        raise InputError("sigma_rel must be positive")
    bad = np.flatnonzero((x < 0) | (x > n_rows - 1))
    if bad.size:
        raise TruthOutOfRange(int(bad[0]))
    return GaussianTargets(Grid2(gaussian_columns(x, n_rows, sigma_rel * n_rows), Kind.PROBMAP),
                           sigma_rel)


def _arr(g):
    return g.data if isinstance(g, Grid2) else np.asarray(g, dtype=np.float64)


def kld_loss(p, targets) -> tuple[float, np.ndarray]:
    """Sum over columns of KL(T_i || P_i) and its gradient w.r.t. ``p``."""
    p = _arr(p)
    t = _arr(targets.t_map if isinstance(targets, GaussianTargets) else targets)
    if p.shape != t.shape:
        raise LengthMismatch(f"map shape {p.shape} != target shape {t.shape}")
    off = np.flatnonzero(np.abs(p.sum(axis=0) - 1.0) > 1e-9)
    if off.size:
        raise NotADistribution(int(off[0]))
    pf = np.maximum(p, EPS_P)
    pos = t > 0
    loss = float(np.sum(t[pos] * (np.log(t[pos]) - np.log(pf[pos]))))
    return loss, -t / pf


def kld_logit_grad(p, t, temperature: float = 1.0) -> np.ndarray:
    """Gradient of the KLD w.r.t. logits when ``p = softmax(logits / temperature)``."""
    return (_arr(p) - _arr(t)) / temperature


def mse_loss(x, t) -> tuple[float, np.ndarray]:
    x = x.x if isinstance(x, SurfaceTrace) else np.asarray(x, dtype=np.float64)
    t = t.x if isinstance(t, SurfaceTrace) else np.asarray(t, dtype=np.float64)
    if x.shape != t.shape:
        raise LengthMismatch(f"{x.size} predictions vs {t.size} targets")
    d = x - t
    return float(d @ d), 2.0 * d


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamGroup:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamGroup":
        p = np.array(params, dtype=np.float64)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0)


def adam_step(group: AdamGroup, grads, lr: float) -> AdamGroup:
    g = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("non-finite gradient passed to Adam")
    if lr < 0:
        raise InputError("learning rate must be non-negative")
    t = group.t + 1
    m = BETA1 * group.m + (1.0 - BETA1) * g
    v = BETA2 * group.v + (1.0 - BETA2) * g * g
    m_hat = m / (1.0 - BETA1**t)
    v_hat = v / (1.0 - BETA2**t)
    params = group.params - lr * m_hat / (np.sqrt(v_hat) + EPS_ADAM)
    return AdamGroup(params, m, v, t)


# -- training state -----------------------------------------------------------

@dataclass
class FinetuneConfig:
    lr_predictor: float = 1e-5
    lr_sb: float = 1e-2
    ep_unet: int = 10
    ep_sb: int = 10
    rounds: int = 5
    sigma_rel: float = 0.1
    w_init: float = 1e-5
    seed: int = 0
    batch_size: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneConfig":
        return _from_dict(cls, d, "train")


def _from_dict(cls, d, section):
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise InputError(f"unknown key '{section}.{key}'")
    return cls(**d)


@dataclass
class TrainState:
    predictor: AdamGroup
    sb: AdamGroup
    rounds_done: int = 0
    unet_epochs: int = 0
    sb_epochs: int = 0
    rng_seed: int = 0
    history: list = field(default_factory=list)

    @property
    def predictor_params(self) -> np.ndarray:
        return self.predictor.params

    @property
    def log_w(self) -> float:
        return float(self.sb.params[0])

    @property
    def w(self) -> float:
        return math.exp(self.log_w)

    def snapshot(self) -> "TrainState":
        return copy.deepcopy(self)


def init_state(params, w_init: float = 1e-5, seed: int = 0) -> TrainState:
    if not w_init > 0:
        raise InputError("w_init must be positive")
    return TrainState(AdamGroup.fresh(params), AdamGroup.fresh([math.log(w_init)]), rng_seed=seed)


# -- fine tuning --------------------------------------------------------------

def sample_gradient(model, image, truth, log_w, tau=d2c.DEFAULT_TAU, wrap=False,
                    want_params=True, fit=None):
    """Loss and gradients (w.r.t. model params and log_w) for one sample."""
    cache = None
    if fit is None:
        p, cache = model.forward(image)
        fit = d2c.fit_map(p, tau)
    gf = GaussianField(fit.gamma, fit.sigma)
    w = math.exp(log_w)
    sys = smoothing.assemble(gf, w, wrap)
    x = smoothing.solve(sys)
    loss, g_x = mse_loss(x, truth)
    grads = smoothing.backward(sys, gf, x, g_x)
    g_log_w = grads.d_w * w
    g_params = None
    if want_params:
        g_p = d2c.fit_backward(fit, grads.d_gamma, grads.d_sigma)
        g_params = model.backward(cache, g_p)
    return loss, g_params, g_log_w


def _batches(n, batch_size, seed, epoch):
    order = rng(seed, STREAM_SHUFFLE, epoch).permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def alternate_finetune(train_set, val_set, state: TrainState, config: FinetuneConfig, model,
                       tau: float = d2c.DEFAULT_TAU, wrap: bool = False) -> tuple[TrainState, object]:
    """Run the configured rounds of alternating fine-tuning.

    ``train_set``/``val_set`` are sequences of ``(input, truth)`` pairs fed to
    ``model.forward``. Returns the new state and the model rebuilt from its
    predictor parameters.
    """
    if config.batch_size < 1:
        raise InputError("batch_size must be >= 1")
    state = state.snapshot()
    model = model.with_params(state.predictor.params)
    if config.rounds > 0 and config.ep_unet > 0 and model.params.size and not len(train_set):
        raise EmptySplit("training split is empty")
    if config.rounds > 0 and config.ep_sb > 0 and not len(val_set):
        raise EmptySplit("validation split is empty")
    seed = state.rng_seed
    for _ in range(config.rounds):
        for _ in range(config.ep_unet):
            epoch = state.unet_epochs + state.sb_epochs
            if model.params.size:
                for batch in _batches(len(train_set), config.batch_size, seed, epoch):
                    total, g_sum = 0.0, np.zeros_like(model.params)
                    for k in batch:
                        img, truth = train_set[k]
                        loss, g, _ = sample_gradient(model, img, truth, state.log_w, tau, wrap)
                        total += loss
                        g_sum += g
                    _guard(total, state)
                    state.predictor = adam_step(state.predictor, g_sum / len(batch), config.lr_predictor)
                    model = model.with_params(state.predictor.params)
            state.unet_epochs += 1
        if config.ep_sb:
            fits = [d2c.fit_map(model.forward(img)[0], tau) for img, _ in val_set]
        for _ in range(config.ep_sb):
            epoch = state.unet_epochs + state.sb_epochs
            epoch_loss = 0.0
            for batch in _batches(len(val_set), config.batch_size, seed, epoch):
                total, g = 0.0, 0.0
                for k in batch:
                    loss, _, g_lw = sample_gradient(model, None, val_set[k][1], state.log_w, tau,
                                                    wrap, want_params=False, fit=fits[k])
                    total += loss
                    g += g_lw
                _guard(total, state)
                epoch_loss += total
                state.sb = adam_step(state.sb, [g / len(batch)], config.lr_sb)
            state.history.append(epoch_loss / len(val_set))
            state.sb_epochs += 1
        state.rounds_done += 1
    return state, model


def _guard(loss, state):
    if not math.isfinite(loss):
        raise TrainingDiverged("loss became non-finite", state.snapshot())


# -- checkpoint container -----------------------------------------------------
# One JSON header line, then a little-endian float64 payload whose length and
# layout the header declares.

MAGIC = "surfseg-checkpoint"


def write_blob(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    layout = [[name, int(np.asarray(a).size)] for name, a in arrays]
    header = dict(header, format=MAGIC, version=1, layout=layout,
                  payload_length=sum(n for _, n in layout))
    payload = np.concatenate([np.ravel(a) for _, a in arrays]) if arrays else np.empty(0)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.astype("<f8").tobytes())


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    head, sep, body = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except ValueError as exc:
        raise InputError(f"{path}: bad header") from exc
    if not sep or header.get("format") != MAGIC:
        raise InputError(f"{path}: not a surfseg checkpoint")
    payload = np.frombuffer(body, dtype="<f8")
    if payload.size != header["payload_length"]:
        raise InputError(f"{path}: payload has {payload.size} values, header says "
                         f"{header['payload_length']}")
    arrays, k = {}, 0
    for name, n in header["layout"]:
        arrays[name] = payload[k:k + n].astype(np.float64)
        k += n
    return header, arrays


def save_checkpoint(path, state: TrainState, model_meta: dict) -> None:
    header = {
        "kind": "checkpoint",
        "model": model_meta,
        "log_w": state.log_w,
        "steps": {"predictor": state.predictor.t, "sb": state.sb.t},
        "schedule": {"rounds_done": state.rounds_done, "unet_epochs": state.unet_epochs,
                     "sb_epochs": state.sb_epochs},
        "rng_seed": state.rng_seed,
    }
    write_blob(path, header, [
        ("predictor_params", state.predictor.params),
        ("predictor_m", state.predictor.m),
        ("predictor_v", state.predictor.v),
        ("sb_m", state.sb.m),
        ("sb_v", state.sb.v),
    ])


def load_checkpoint(path) -> tuple[TrainState, dict]:
    header, a = read_blob(path)
    if header.get("kind") != "checkpoint":
        raise InputError(f"{path}: expected a checkpoint, found {header.get('kind')}")
    pred = AdamGroup(a["predictor_params"], a["predictor_m"], a["predictor_v"],
                     header["steps"]["predictor"])
    sb = AdamGroup(np.array([header["log_w"]]), a["sb_m"], a["sb_v"], header["steps"]["sb"])
    sched = header["schedule"]
    state = TrainState(pred, sb, sched["rounds_done"], sched["unet_epochs"], sched["sb_epochs"],
                       header["rng_seed"])
    return state, header["model"]


def config_dict(cfg) -> dict:
    return asdict(cfg)
