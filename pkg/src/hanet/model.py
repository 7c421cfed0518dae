"""Hierarchical attention over meta-path neighbourhoods.

Forward pass: type-specific projection, per-(meta-path, head) attention over
meta-path neighbours, head concatenation, then a learned softmax weighting of
the meta-paths. The classifier sits on the fused embedding.

Parameter shapes depend only on the schema (feature dims, class count) and the
config, never on node or edge counts, so trained parameters transfer to other
graphs with the same schema.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, LoadError
from .hetgraph import build_neighbor_index, compile_meta_path

CHECKPOINT_FORMAT = "hanet-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "elu": T.elu,
    "tanh": T.tanh,
    "leaky_relu": T.leaky_relu,
    "identity": lambda x: x,
}


@dataclass
class HanConfig:
    hidden: int = 8          # per-head width; embedding dim is heads * hidden
    heads: int = 8
    q_dim: int = 128
    dropout: float = 0.6
    slope: float = 0.2       # leaky-relu slope on attention logits
    activation: str = "elu"  # applied to the aggregated neighbour sum
    meta_paths: list = field(default_factory=list)

    @property
    def embed_dim(self):
        return self.heads * self.hidden

    def validate(self):
        if self.heads < 1 or self.hidden < 1 or self.q_dim < 1:
            raise ConfigError("heads, hidden and q_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; "
                              f"choose from {sorted(_ACTIVATIONS)}")
        return self

    def to_dict(self):
        return asdict(self)


class HanParams:
    """Ordered collection of named parameter tensors."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def shapes(self):
        return {k: tuple(v.shape) for k, v in self.tensors.items()}

    def num_parameters(self):
        return sum(v.size for v in self.tensors.values())

    def state(self):
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.tensors[k].data = np.array(v, dtype=np.float64)

    def copy(self):
        return HanParams({k: T.Tensor(v.data.copy(), requires_grad=v.requires_grad)
                          for k, v in self.tensors.items()})


@dataclass
class ForwardOutput:
    Z: T.Tensor              # fused embedding, n x embed_dim
    Z_paths: list            # semantic-specific embeddings, one per meta-path
    alpha: dict              # meta-path name -> (E x K) attention, CSR edge order
    beta: np.ndarray         # meta-path weights
    w: np.ndarray            # unnormalised meta-path importances
    beta_tensor: T.Tensor = None


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return T.Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def endpoint_types(meta_paths):
    return sorted({mp.split("-")[0].strip() for mp in meta_paths})


def init_params(feature_dims, num_classes, config, seed=0):
    """Glorot-uniform parameters; the semantic bias starts at zero.

    ``feature_dims`` maps node type to input feature width. Only meta-path
    endpoint types get a projection.
    """
    config.validate()
    if not config.meta_paths:
        raise ConfigError("config lists no meta-paths")
    rng = np.random.default_rng(seed)
    F1, F2, K, F = config.embed_dim, config.hidden, config.heads, config.embed_dim
    tensors = {}
    for t in endpoint_types(config.meta_paths):
        if t not in feature_dims:
            raise ConfigError(f"node type {t!r} has no features to project")
        d = feature_dims[t]
        tensors[f"proj.{t}"] = _glorot(rng, (d, F1), d, F1)
    for mp in config.meta_paths:
        tensors[f"att.{mp}"] = _glorot(rng, (K, 2 * F2), 2 * F2, 1)
    tensors["sem.W"] = _glorot(rng, (F, config.q_dim), F, config.q_dim)
    tensors["sem.b"] = T.Tensor(np.zeros(config.q_dim), requires_grad=True)
    tensors["sem.q"] = _glorot(rng, (config.q_dim,), config.q_dim, 1)
    tensors["clf.C"] = _glorot(rng, (F, num_classes), F, num_classes)
    return HanParams(tensors)


def build_indices(graph, meta_paths, threads=1):
    """One :class:`NeighborIndex` per meta-path, in the given order."""
    compiled = [compile_meta_path(mp, graph) for mp in meta_paths]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda mp: build_neighbor_index(graph, mp), compiled))
    return [build_neighbor_index(graph, mp) for mp in compiled]


# --- node level ------------------------------------------------------------

def project(features, proj):
    """Type-specific projection of raw features (rows are nodes)."""
    features = T.as_tensor(features)
    if features.ndim != 2 or features.shape[1] != proj.shape[0]:
        raise DimensionError(f"projection expects {proj.shape[0]} input features, "
                             f"got shape {features.shape}")
    return T.matmul(features, proj)


def node_attention_logits(h_i, h_j, a, slope=0.2):
    """Attention logit of neighbour ``j`` for node ``i`` under one head."""
    h_i, h_j, a = (np.asarray(v, dtype=np.float64) for v in (h_i, h_j, a))
    if h_i.shape != h_j.shape or a.shape != (2 * h_i.shape[0],):
        raise DimensionError(f"attention vector {a.shape} must be twice the feature "
                             f"width {h_i.shape}")
    x = float(a @ np.concatenate([h_i, h_j]))
    return x if x > 0 else slope * x


def node_level_attention(h, index, att, config, training=False, seed=0, uniform=False):
    """Attend over meta-path neighbours of every node, all heads at once.

    ``h`` is the projected feature tensor (n x heads*hidden); head k reads
    columns [k*hidden, (k+1)*hidden). Returns the per-head embeddings
    (n x heads x hidden) and the attention coefficients (E x heads) before
    dropout. ``uniform`` replaces learned attention with 1/|neighbours|.
    """
    n, K, F2 = h.shape[0], config.heads, config.hidden
    if h.shape[1] != K * F2:
        raise DimensionError(f"projected width {h.shape[1]} != heads*hidden = {K * F2}")
    if index.num_nodes != n:
        raise DimensionError(f"index covers {index.num_nodes} nodes, features have {n}")
    hk = T.reshape(h, (n, K, F2))
    if uniform:
        deg = index.degrees()[index.rows].astype(np.float64)
        alpha = T.Tensor(np.repeat((1.0 / deg)[:, None], K, axis=1))
    else:
        if att.shape != (K, 2 * F2):
            raise DimensionError(f"attention parameters {att.shape} != {(K, 2 * F2)}")
        s_self = T.head_dot(hk, T.take(att, (slice(None), slice(0, F2))))
        s_nbr = T.head_dot(hk, T.take(att, (slice(None), slice(F2, 2 * F2))))
        logits = T.add(T.gather_rows(s_self, index.rows), T.gather_rows(s_nbr, index.indices))
        alpha = T.segment_softmax(T.leaky_relu(logits, config.slope), index.indptr)
    used = T.dropout(alpha, config.dropout, seed, training)
    agg = T.spmm(index.indptr, index.indices, used, hk)
    return _ACTIVATIONS[config.activation](agg), alpha


def multi_head_concat(heads):
    """Concatenate per-head (n x hidden) embeddings in head order."""
    heads = list(heads)
    if not heads:
        raise DimensionError("no heads to concatenate")
    if len({tuple(h.shape) for h in heads}) != 1:
        raise DimensionError(f"head shapes differ: {[h.shape for h in heads]}")
    return T.concat(heads, axis=1)


# --- semantic level --------------------------------------------------------

def semantic_attention(Z_paths, W, b, q, uniform=False):
    """Weight and fuse semantic-specific embeddings.

    Returns ``(beta, Z, w)``: the softmax weights, the fused embedding and the
    per-meta-path importances (each the node-average of q . tanh(W z + b)).
    """
    Z_paths = list(Z_paths)
    if not Z_paths:
        raise ContractError("semantic attention needs at least one meta-path")
    if len({tuple(z.shape) for z in Z_paths}) != 1:
        raise DimensionError(f"semantic-specific embeddings differ in shape: "
                             f"{[z.shape for z in Z_paths]}")
    w = T.stack([T.mean(T.matmul(T.tanh(T.add(T.matmul(z, W), b)), q)) for z in Z_paths])
    if uniform:
        beta = T.Tensor(np.full(len(Z_paths), 1.0 / len(Z_paths)))
    else:
        beta = T.softmax(w)
    Z = T.mul(T.take(beta, 0), Z_paths[0])
    for p in range(1, len(Z_paths)):
        Z = T.add(Z, T.mul(T.take(beta, p), Z_paths[p]))
    return beta, Z, w


def forward(graph, indices, params, config, mode="eval", seed=0, ablate=None):
    """Full pass from raw target features to the fused embedding.

    ``mode`` is "train" (dropout on) or "eval". ``ablate`` is None, "nd"
    (uniform neighbour weights) or "sem" (uniform meta-path weights).
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    if ablate not in (None, "nd", "sem"):
        raise ContractError(f"unknown ablation {ablate!r}")
    if len(indices) != len(config.meta_paths):
        raise ContractError(f"{len(config.meta_paths)} meta-paths configured, "
                            f"{len(indices)} neighbour indices given")
    training = mode == "train"
    target = graph.target_type
    h = project(graph.features[target], params[f"proj.{target}"])
    h = T.dropout(h, config.dropout, (seed, 0), training)

    Z_paths, alpha = [], {}
    for p, (mp, index) in enumerate(zip(config.meta_paths, indices)):
        z, a = node_level_attention(h, index, params[f"att.{mp}"], config, training,
                                    seed=(seed, 1 + p), uniform=ablate == "nd")
        Z_paths.append(T.reshape(z, (z.shape[0], config.embed_dim)))
        alpha[mp] = a.data
    beta, Z, w = semantic_attention(Z_paths, params["sem.W"], params["sem.b"], params["sem.q"],
                                    uniform=ablate == "sem")
    return ForwardOutput(Z, Z_paths, alpha, beta.data.copy(), w.data.copy(), beta)


def logits(Z, params, ids=None):
    if ids is not None:
        Z = T.gather_rows(Z, ids)
    return T.matmul(Z, params["clf.C"])


def weight_penalty(params):
    total = None
    for v in params.values():
        term = T.sum(T.mul(v, v))
        total = term if total is None else T.add(total, term)
    return total


def loss(Z, labels, ids, params, weight_decay=0.0):
    """Mean cross-entropy over ``ids`` plus ``weight_decay`` times the squared L2 norm."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise ContractError("loss over an empty labeled set")
    y = np.asarray(labels)[ids]
    if (y < 0).any():
        raise ContractError("loss requested on unlabeled nodes")
    value = T.cross_entropy(logits(Z, params, ids), y)
    if weight_decay:
        value = T.add(value, T.mul(weight_penalty(params), weight_decay))
    return value


# --- checkpoints -----------------------------------------------------------

def schema_signature(graph, config):
    dims = graph.feature_dims()
    return {
        "target_type": graph.target_type,
        "num_classes": graph.num_classes,
        "feature_dims": {t: dims[t] for t in endpoint_types(config.meta_paths)},
    }


def save_checkpoint(path, params, config, schema, extra=None):
    """JSON container of named tensors; floats use shortest round-trip repr."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "schema": schema,
        "extra": extra or {},
        "tensors": [{"name": k, "shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                    for k, v in params.items()],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, config, schema, extra)``."""
    path = Path(path)
    if not path.exists():
        raise LoadError("missing checkpoint", path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"bad checkpoint json: {exc}", path) from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise LoadError("not a hanet checkpoint", path)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"unsupported checkpoint version {doc.get('version')}", path)
    config = HanConfig(**doc["config"]).validate()
    tensors = {}
    for entry in doc["tensors"]:
        data = np.array(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise LoadError(f"tensor {entry['name']!r} has {data.size} values for shape {shape}",
                            path)
        tensors[entry["name"]] = T.Tensor(data.reshape(shape), requires_grad=True)
    return HanParams(tensors), config, doc["schema"], doc.get("extra", {})


def check_compatible(graph, config, schema):
    found = schema_signature(graph, config)
    if found != schema:
        raise ConfigError(f"checkpoint schema {schema} does not match graph schema {found}")
