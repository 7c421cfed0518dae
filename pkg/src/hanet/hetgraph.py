"""Heterogeneous graph model, on-disk format and meta-path neighbour indices.

A graph directory holds::

    schema.json          node types (+ feature dims), edge types, target type, classes
    nodes_<type>.tsv     one key per line; line order assigns ids 0..n-1
    edges_<etype>.tsv    src_key <TAB> dst_key
    features_<type>.tsv  key <TAB> v1,v2,...   (types with feature_dim > 0)
    labels.tsv           key <TAB> class      (target type, may be partial)
    splits.json          {"train": [...], "val": [...], "test": [...]} keys (optional)
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, LoadError, MetaPathError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class EdgeType:
    name: str
    src: str
    dst: str


@dataclass
class HeteroGraph:
    """Typed nodes and edges with per-type features and partial target labels.

    Node ids are dense per type. ``edges[name]`` is an (m, 2) int array of
    (src id, dst id); ``labels`` has one entry per target node, -1 if unlabeled.
    ``splits`` maps split name to target-node ids.
    """

    node_types: list
    edge_types: list
    node_keys: dict
    edges: dict
    features: dict
    target_type: str
    num_classes: int
    labels: np.ndarray
    splits: dict = field(default_factory=dict)
    meta_paths: list = field(default_factory=list)

    def __post_init__(self):
        self._key_index = {}

    def num_nodes(self, node_type):
        return len(self.node_keys[node_type])

    def edge_type(self, name):
        for et in self.edge_types:
            if et.name == name:
                return et
        raise KeyError(name)

    def node_id(self, node_type, key):
        if node_type not in self._key_index:
            self._key_index[node_type] = {k: i for i, k in enumerate(self.node_keys[node_type])}
        try:
            return self._key_index[node_type][key]
        except KeyError:
            raise KeyError(f"unknown {node_type} node {key!r}") from None

    def feature_dims(self):
        return {t: int(f.shape[1]) for t, f in self.features.items()}

    def labeled_ids(self):
        return np.flatnonzero(self.labels >= 0)

    def adjacency(self, etype, reverse=False):
        """CSR (indptr, indices) of one edge type, deduplicated, optionally transposed."""
        et = self.edge_type(etype)
        pairs = self.edges[etype]
        src_t, dst_t = (et.dst, et.src) if reverse else (et.src, et.dst)
        if reverse:
            pairs = pairs[:, ::-1]
        n_rows, n_cols = self.num_nodes(src_t), self.num_nodes(dst_t)
        keys = np.unique(pairs[:, 0].astype(np.int64) * n_cols + pairs[:, 1])
        rows = keys // n_cols
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        return indptr, keys - rows * n_cols

    def validate(self):
        if len(self.node_types) + len(self.edge_types) <= 2:
            raise ConfigError("a heterogeneous graph needs more than two node plus edge types")
        if len(set(self.node_types)) != len(self.node_types):
            raise ConfigError("duplicate node type names")
        if len({et.name for et in self.edge_types}) != len(self.edge_types):
            raise ConfigError("duplicate edge type names")
        if self.target_type not in self.node_types:
            raise ConfigError(f"target type {self.target_type!r} is not a node type")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        for et in self.edge_types:
            for t in (et.src, et.dst):
                if t not in self.node_types:
                    raise ConfigError(f"edge type {et.name!r} references unknown node type {t!r}")
            pairs = self.edges[et.name]
            if pairs.ndim != 2 or pairs.shape[1] != 2:
                raise ConfigError(f"edges of {et.name!r} must be an (m, 2) array")
            if len(pairs):
                if pairs.min() < 0 or pairs[:, 0].max() >= self.num_nodes(et.src) \
                        or pairs[:, 1].max() >= self.num_nodes(et.dst):
                    raise ConfigError(f"edge endpoint out of range in {et.name!r}")
        for t, f in self.features.items():
            if f.shape[0] != self.num_nodes(t):
                raise ConfigError(f"features of {t!r} have {f.shape[0]} rows, "
                                  f"expected {self.num_nodes(t)}")
        if self.target_type not in self.features:
            raise ConfigError(f"target type {self.target_type!r} has no features")
        if self.labels.shape != (self.num_nodes(self.target_type),):
            raise ConfigError("labels must have one entry per target node")
        if self.labels.max(initial=-1) >= self.num_classes or self.labels.min(initial=0) < -1:
            raise ConfigError("label outside [0, num_classes)")
        seen = set()
        for name, ids in self.splits.items():
            if name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split {name!r}")
            ids = set(int(i) for i in ids)
            if seen & ids:
                raise ConfigError("splits overlap")
            if any(self.labels[i] < 0 for i in ids):
                raise ConfigError(f"split {name!r} contains unlabeled nodes")
            seen |= ids
        return self


# --- directory format ------------------------------------------------------

def _read_lines(path):
    if not path.exists():
        raise LoadError("missing file", path)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def load_graph(path):
    """Read and validate a graph directory."""
    root = Path(path)
    schema_path = root / "schema.json"
    if not schema_path.exists():
        raise LoadError("missing file", schema_path)
    try:
        schema = json.loads(schema_path.read_text(encoding="utf-8"))
        node_specs = schema["node_types"]
        edge_specs = schema["edge_types"]
        target = schema["target_type"]
        num_classes = int(schema["num_classes"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"bad schema: {exc}", schema_path) from None

    node_types = [n["name"] for n in node_specs]
    dims = {n["name"]: int(n.get("feature_dim", 0)) for n in node_specs}
    edge_types = [EdgeType(e["name"], e["src"], e["dst"]) for e in edge_specs]
    for et in edge_types:
        for t in (et.src, et.dst):
            if t not in dims:
                raise LoadError(f"edge type {et.name!r} uses unknown node type {t!r}", schema_path)

    node_keys, key_index = {}, {}
    for t in node_types:
        f = root / f"nodes_{t}.tsv"
        keys = []
        for lineno, line in _read_lines(f):
            key = line.strip()
            if "\t" in key:
                raise LoadError("node line must hold a single key", f, lineno)
            keys.append(key)
        index = {k: i for i, k in enumerate(keys)}
        if len(index) != len(keys):
            raise LoadError("duplicate node key", f)
        node_keys[t], key_index[t] = keys, index

    def lookup(t, key, f, lineno):
        try:
            return key_index[t][key]
        except KeyError:
            raise LoadError(f"unknown {t} node {key!r}", f, lineno) from None

    edges = {}
    for et in edge_types:
        f = root / f"edges_{et.name}.tsv"
        pairs = []
        for lineno, line in _read_lines(f):
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise LoadError(f"malformed edge line {line!r}", f, lineno)
            pairs.append((lookup(et.src, parts[0].strip(), f, lineno),
                          lookup(et.dst, parts[1].strip(), f, lineno)))
        edges[et.name] = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    features = {}
    for t in node_types:
        if dims[t] <= 0:
            continue
        f = root / f"features_{t}.tsv"
        mat = np.full((len(node_keys[t]), dims[t]), np.nan)
        filled = np.zeros(len(node_keys[t]), dtype=bool)
        for lineno, line in _read_lines(f):
            parts = line.split("\t")
            if len(parts) != 2:
                raise LoadError("feature line must be key<TAB>values", f, lineno)
            i = lookup(t, parts[0].strip(), f, lineno)
            try:
                row = [float(v) for v in parts[1].split(",")]
            except ValueError:
                raise LoadError("non-numeric feature value", f, lineno) from None
            if len(row) != dims[t]:
                raise LoadError(f"expected {dims[t]} feature values, got {len(row)}", f, lineno)
            if filled[i]:
                raise LoadError(f"duplicate feature row for {parts[0]!r}", f, lineno)
            mat[i], filled[i] = row, True
        if not filled.all():
            missing = node_keys[t][int(np.flatnonzero(~filled)[0])]
            raise LoadError(f"no feature row for node {missing!r}", f)
        features[t] = mat

    if target not in node_keys:
        raise LoadError(f"target type {target!r} is not declared", schema_path)
    labels = np.full(len(node_keys[target]), -1, dtype=np.int64)
    label_path = root / "labels.tsv"
    if label_path.exists():
        for lineno, line in _read_lines(label_path):
            parts = line.split("\t")
            if len(parts) != 2:
                raise LoadError("label line must be key<TAB>class", label_path, lineno)
            i = lookup(target, parts[0].strip(), label_path, lineno)
            try:
                c = int(parts[1])
            except ValueError:
                raise LoadError("non-integer class", label_path, lineno) from None
            if not 0 <= c < num_classes:
                raise LoadError(f"class {c} outside [0, {num_classes})", label_path, lineno)
            labels[i] = c

    splits = {}
    split_path = root / "splits.json"
    if split_path.exists():
        try:
            raw = json.loads(split_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise LoadError(f"bad json: {exc}", split_path) from None
        for name, keys in raw.items():
            if name not in SPLIT_NAMES:
                raise LoadError(f"unknown split {name!r}", split_path)
            ids = []
            for k in keys:
                if k not in key_index[target]:
                    raise LoadError(f"unknown {target} node {k!r} in split {name!r}", split_path)
                ids.append(key_index[target][k])
            splits[name] = np.array(ids, dtype=np.int64)

    graph = HeteroGraph(node_types, edge_types, node_keys, edges, features, target,
                        num_classes, labels, splits, list(schema.get("meta_paths", [])))
    try:
        graph.validate()
    except ConfigError as exc:
        raise LoadError(str(exc), root) from None
    return graph


def save_graph(graph, path):
    """Write ``graph`` in the directory format read by :func:`load_graph`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    dims = graph.feature_dims()
    schema = {
        "node_types": [{"name": t, "feature_dim": dims.get(t, 0)} for t in graph.node_types],
        "edge_types": [{"name": e.name, "src": e.src, "dst": e.dst} for e in graph.edge_types],
        "target_type": graph.target_type,
        "num_classes": graph.num_classes,
    }
    if graph.meta_paths:
        schema["meta_paths"] = list(graph.meta_paths)
    (root / "schema.json").write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")

    def write(name, lines):
        with open(root / name, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line + "\n")

    for t in graph.node_types:
        write(f"nodes_{t}.tsv", graph.node_keys[t])
    for et in graph.edge_types:
        sk, dk = graph.node_keys[et.src], graph.node_keys[et.dst]
        write(f"edges_{et.name}.tsv", (f"{sk[s]}\t{dk[d]}" for s, d in graph.edges[et.name]))
    for t, mat in graph.features.items():
        keys = graph.node_keys[t]
        write(f"features_{t}.tsv",
              (f"{keys[i]}\t" + ",".join(repr(float(v)) for v in row) for i, row in enumerate(mat)))
    tk = graph.node_keys[graph.target_type]
    write("labels.tsv", (f"{tk[i]}\t{int(graph.labels[i])}" for i in graph.labeled_ids()))
    if graph.splits:
        splits = {name: [tk[int(i)] for i in graph.splits[name]]
                  for name in SPLIT_NAMES if name in graph.splits}
        (root / "splits.json").write_text(json.dumps(splits, indent=1) + "\n", encoding="utf-8")


# --- meta-paths ------------------------------------------------------------

@dataclass(frozen=True)
class MetaPath:
    """A symmetric-endpoint type sequence resolved to oriented edge-type hops.

    ``steps`` holds ``(edge_type_name, reverse)`` pairs; ``reverse`` means the
    hop walks the edge type from its dst side to its src side.
    """

    name: str
    node_types: tuple
    steps: tuple

    @property
    def endpoint_type(self):
        return self.node_types[0]


def compile_meta_path(spec, graph):
    types = [t.strip() for t in spec.split("-")]
    if len(types) < 2 or any(not t for t in types):
        raise MetaPathError(f"meta-path {spec!r} must name at least two node types")
    for t in types:
        if t not in graph.node_types:
            raise MetaPathError(f"meta-path {spec!r}: unknown node type {t!r}")
    if types[0] != types[-1]:
        raise MetaPathError(f"meta-path {spec!r} has asymmetric endpoints "
                            f"{types[0]!r} and {types[-1]!r}")
    steps = []
    for a, b in zip(types, types[1:]):
        options = [(et.name, False) for et in graph.edge_types if (et.src, et.dst) == (a, b)]
        options += [(et.name, True) for et in graph.edge_types
                    if (et.dst, et.src) == (a, b) and et.src != et.dst]
        if not options:
            raise MetaPathError(f"meta-path {spec!r}: no edge type connects {a!r} to {b!r}")
        if len(options) > 1:
            raise MetaPathError(f"meta-path {spec!r}: hop {a}->{b} is ambiguous "
                                f"between {[o[0] for o in options]}")
        steps.append(options[0])
    return MetaPath("-".join(types), tuple(types), tuple(steps))


class NeighborIndex:
    """Meta-path neighbour sets of the endpoint type in CSR layout.

    Rows are sorted and duplicate-free and always contain the node itself.
    """

    def __init__(self, name, indptr, indices):
        self.name = name
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.indptr))

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    @property
    def num_edges(self):
        return len(self.indices)

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self):
        return np.diff(self.indptr)

    def as_sets(self):
        return [set(self.neighbors(i).tolist()) for i in range(self.num_nodes)]

    def __repr__(self):
        return f"NeighborIndex({self.name!r}, nodes={self.num_nodes}, pairs={self.num_edges})"


def _add_self_loops(indptr, indices):
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    keys = np.unique(np.concatenate([rows * n + indices, np.arange(n, dtype=np.int64) * (n + 1)]))
    rows = keys // n
    out = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=out[1:])
    return out, keys - rows * n


def build_neighbor_index(graph, mp):
    """Binarised commuting-matrix pattern of ``mp`` plus self-loops."""
    if isinstance(mp, str):
        mp = compile_meta_path(mp, graph)
    indptr, indices = graph.adjacency(*mp.steps[0])
    for etype, reverse in mp.steps[1:]:
        b_indptr, b_indices = graph.adjacency(etype, reverse)
        et = graph.edge_type(etype)
        n_cols = graph.num_nodes(et.src if reverse else et.dst)
        indptr, indices = kernels.bool_spgemm(indptr, indices, b_indptr, b_indices, n_cols)
    indptr, indices = _add_self_loops(indptr, indices)
    return NeighborIndex(mp.name, indptr, indices)
