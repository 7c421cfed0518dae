"""Planted-signal heterogeneous graphs for desk-scale experiments.

Target nodes ``M`` carry class labels and noisy class-mean features. Every
unordered target pair is linked through a fresh auxiliary node of type ``A``
with probability ``p_in`` (same class) or ``p_out`` (different classes), so
``M-A-M`` is a stochastic block model over the targets. Type ``D`` nodes are
wired to targets uniformly with ``p_noise``; ``M-D-M`` carries no class signal.

Features are the class mean plus Gaussian noise. A ``corrupt_fraction`` of the
targets draw their noise with scale ``corrupt_noise`` around a shared offset of
norm ``corrupt_shift``, so some neighbours are worth less than others and the
offset makes them recognisable from their features. The finished matrix is
divided by its overall standard deviation.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .hetgraph import EdgeType, HeteroGraph

TARGET, INFORMATIVE, NOISE = "M", "A", "D"
INFORMATIVE_PATH = "M-A-M"
NOISE_PATH = "M-D-M"


@dataclass
class SyntheticConfig:
    num_target: int = 300
    num_classes: int = 3
    num_noise: int = 60
    p_in: float = 0.2
    p_out: float = 0.02
    p_noise: float = 0.05
    feature_dim: int = 32
    feature_noise: float = 3.0
    corrupt_fraction: float = 0.5
    corrupt_noise: float = 10.0
    corrupt_shift: float = 10.0
    train_fraction: float = 0.2
    val_fraction: float = 0.1

    def validate(self):
        for name in ("p_in", "p_out", "p_noise", "corrupt_fraction"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        for name in ("num_target", "num_classes", "num_noise", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.num_classes > self.num_target:
            raise ConfigError("more classes than target nodes")
        if self.feature_noise < 0 or self.corrupt_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        if not (0 <= self.train_fraction and 0 <= self.val_fraction
                and self.train_fraction + self.val_fraction <= 1):
            raise ConfigError("train/val fractions must be non-negative and sum to at most 1")
        return self

    def to_dict(self):
        return asdict(self)


def _stratified_splits(labels, num_classes, train_fraction, val_fraction, rng):
    parts = {"train": [], "val": [], "test": []}
    for c in range(num_classes):
        ids = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(train_fraction * len(ids)))
        n_va = int(round(val_fraction * len(ids)))
        parts["train"].append(ids[:n_tr])
        parts["val"].append(ids[n_tr:n_tr + n_va])
        parts["test"].append(ids[n_tr + n_va:])
    return {k: np.sort(np.concatenate(v)).astype(np.int64) for k, v in parts.items()}


def generate_synthetic(config=None, seed=0):
    cfg = (config or SyntheticConfig()).validate()
    rng = np.random.default_rng(seed)
    n, C = cfg.num_target, cfg.num_classes

    labels = rng.permutation(np.arange(n) % C).astype(np.int64)

    src, dst = np.triu_indices(n, k=1)
    prob = np.where(labels[src] == labels[dst], cfg.p_in, cfg.p_out)
    hit = rng.random(len(src)) < prob
    src, dst = src[hit], dst[hit]
    num_informative = len(src)
    aux = np.arange(num_informative)
    informative = np.stack([np.concatenate([src, dst]), np.concatenate([aux, aux])], axis=1)
    informative = informative[np.lexsort((informative[:, 1], informative[:, 0]))]
    noise = np.argwhere(rng.random((n, cfg.num_noise)) < cfg.p_noise)

    means = rng.normal(size=(C, cfg.feature_dim))
    scale = np.full(n, cfg.feature_noise)
    corrupt = rng.random(n) < cfg.corrupt_fraction
    scale[corrupt] = cfg.corrupt_noise
    offset = rng.normal(size=cfg.feature_dim)
    offset *= cfg.corrupt_shift / np.linalg.norm(offset)
    feats = means[labels] + scale[:, None] * rng.normal(size=(n, cfg.feature_dim))
    feats[corrupt] += offset
    # one global scale factor: unit overall spread, signal-to-noise untouched
    feats /= feats.std()

    splits = _stratified_splits(labels, C, cfg.train_fraction, cfg.val_fraction, rng)
    graph = HeteroGraph(
        node_types=[TARGET, INFORMATIVE, NOISE],
        edge_types=[EdgeType("MA", TARGET, INFORMATIVE), EdgeType("MD", TARGET, NOISE)],
        node_keys={
            TARGET: [f"m{i}" for i in range(n)],
            INFORMATIVE: [f"a{i}" for i in range(num_informative)],
            NOISE: [f"d{i}" for i in range(cfg.num_noise)],
        },
        edges={"MA": informative.astype(np.int64), "MD": noise.astype(np.int64)},
        features={TARGET: feats},
        target_type=TARGET,
        num_classes=C,
        labels=labels,
        splits=splits,
        meta_paths=[INFORMATIVE_PATH, NOISE_PATH],
    )
    return graph.validate()


def intra_class_fraction(index, labels, include_self=False):
    """Fraction of meta-path neighbour pairs whose endpoints share a class."""
    rows, cols = index.rows, index.indices
    if not include_self:
        keep = rows != cols
        rows, cols = rows[keep], cols[keep]
    if len(rows) == 0:
        return float("nan")
    return float(np.mean(labels[rows] == labels[cols]))
