"""Full-batch semi-supervised training with Adam and patience-based stopping."""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 0.001
    max_epochs: int = 500
    patience: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("Adam moments must lie in [0, 1) and eps must be positive")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place. Returns ``params``.

    ``params`` and ``grads`` are name -> array mappings (or a HanParams and a
    matching dict of gradients).
    """
    for name, g in grads.items():
        if g is None or not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite or missing gradient for {name!r} "
                                 f"at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - config.beta1) * g if m is None else config.beta1 * m + (1.0 - config.beta1) * g
        v = (1.0 - config.beta2) * g * g if v is None else config.beta2 * v + (1.0 - config.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p = params[name]
        update = config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        if isinstance(p, T.Tensor):
            p.data = p.data - update
        else:
            params[name] = p - update
    return params


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    def train_losses(self):
        return [r.train_loss for r in self.epochs]

    def val_losses(self):
        return [r.val_loss for r in self.epochs]

    def write_csv(self, path, timings=False):
        """Write per-epoch losses; wall times only when ``timings`` is set."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss"] + (["seconds"] if timings else []))
            for r in self.epochs:
                row = [r.epoch, repr(r.train_loss), repr(r.val_loss)]
                writer.writerow(row + ([f"{r.seconds:.6f}"] if timings else []))


def validation_loss(graph, indices, params, config, val_ids, ablate=None):
    out = M.forward(graph, indices, params, config, mode="eval", ablate=ablate)
    return float(M.loss(out.Z, graph.labels, val_ids, params).item())


def check_splits(graph):
    try:
        train_ids, val_ids = graph.splits["train"], graph.splits["val"]
    except KeyError as exc:
        raise ConfigError(f"graph has no {exc.args[0]!r} split") from None
    seen = set()
    for name in ("train", "val", "test"):
        ids = set(int(i) for i in graph.splits.get(name, ()))
        if ids & seen:
            raise ConfigError("train/val/test splits overlap")
        seen |= ids
    if len(train_ids) == 0 or len(val_ids) == 0:
        raise ConfigError("train and val splits must be non-empty")
    return np.asarray(train_ids), np.asarray(val_ids)


def fit(graph, han_config, train_config, indices=None, ablate=None, params=None):
    """Train on the train split, monitor validation loss, restore the best epoch.

    Returns ``(params, TrainLog)``. Deterministic given ``train_config.seed``.
    """
    han_config.validate()
    train_config.validate()
    if not han_config.meta_paths:
        han_config.meta_paths = list(graph.meta_paths)
    train_ids, val_ids = check_splits(graph)
    if indices is None:
        indices = M.build_indices(graph, han_config.meta_paths)
    if params is None:
        params = M.init_params(graph.feature_dims(), graph.num_classes, han_config,
                               seed=train_config.seed)
    history = TrainLog()
    if train_config.max_epochs == 0:
        return params, history

    state = AdamState()
    best_state = params.state()
    bad_epochs = 0
    for epoch in range(1, train_config.max_epochs + 1):
        t0 = time.perf_counter()
        T.zero_grad(params.values())
        out = M.forward(graph, indices, params, han_config, mode="train",
                        seed=(train_config.seed, epoch), ablate=ablate)
        objective = M.loss(out.Z, graph.labels, train_ids, params, train_config.weight_decay)
        train_loss = float(objective.item())
        if not np.isfinite(train_loss):
            raise NumericalError(f"training loss became {train_loss} at epoch {epoch}")
        T.backward(objective)
        adam_step(params, {k: v.grad for k, v in params.items()}, state, train_config)

        val_loss = validation_loss(graph, indices, params, han_config, val_ids, ablate)
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, time.perf_counter() - t0))
        log.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < history.best_val_loss:
            history.best_val_loss, history.best_epoch = val_loss, epoch
            best_state = params.state()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_config.patience:
                break
    history.stopped_epoch = history.epochs[-1].epoch
    params.load_state(best_state)
    return params, history
