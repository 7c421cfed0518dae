from pathlib import Path

import numpy as np
import pytest

from hanet import kernels
from hanet import tensor as T
from hanet.hetgraph import EdgeType, HeteroGraph, load_graph

DATA = Path(__file__).parent / "data"


@pytest.fixture
def toy_dir():
    return DATA / "imdb_toy"


@pytest.fixture
def toy_graph(toy_dir):
    return load_graph(toy_dir)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)


def finite_difference(fn, tensor, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to every entry of ``tensor``."""
    grad = np.zeros_like(tensor.data)
    for idx in np.ndindex(tensor.shape):
        orig = tensor.data[idx]
        tensor.data[idx] = orig + h
        up = fn().item()
        tensor.data[idx] = orig - h
        down = fn().item()
        tensor.data[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def gradient_errors(fn, tensors, h=1e-5):
    """Max entrywise |analytic - fd| / (|fd| + 1e-8) for each tensor."""
    T.zero_grad(tensors)
    T.backward(fn())
    errors = []
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        fd = finite_difference(fn, t, h)
        errors.append(float(np.max(np.abs(analytic - fd) / (np.abs(fd) + 1e-8))))
    return errors


def random_hetero_graph(rng, max_nodes=50, n_types=None, density=None):
    """Random schema with one edge type per unordered pair of distinct node types."""
    n_types = n_types or int(rng.integers(2, 5))
    types = [f"T{i}" for i in range(n_types)]
    sizes = {t: int(rng.integers(1, max_nodes + 1)) for t in types}
    edge_types, edges = [], {}
    for a in range(n_types):
        for b in range(a + 1, n_types):
            src, dst = (types[a], types[b]) if rng.random() < 0.5 else (types[b], types[a])
            name = f"{src}{dst}"
            p = density if density is not None else rng.uniform(0.0, 0.12)
            mask = rng.random((sizes[src], sizes[dst])) < p
            pairs = np.argwhere(mask)
            # duplicate a few pairs; the index must ignore multiplicity
            if len(pairs):
                pairs = np.concatenate([pairs, pairs[rng.integers(0, len(pairs), size=len(pairs) // 4)]])
                pairs = pairs[rng.permutation(len(pairs))]
            edge_types.append(EdgeType(name, src, dst))
            edges[name] = pairs.astype(np.int64).reshape(-1, 2)
    target = types[0]
    graph = HeteroGraph(
        node_types=types,
        edge_types=edge_types,
        node_keys={t: [f"{t.lower()}_{i}" for i in range(sizes[t])] for t in types},
        edges=edges,
        features={target: rng.normal(size=(sizes[target], 3))},
        target_type=target,
        num_classes=2,
        labels=np.full(sizes[target], -1, dtype=np.int64),
    )
    if n_types == 2 and len(edge_types) == 1:
        # |types| + |edge types| must exceed 2; add an unused same-type edge type
        graph.edge_types.append(EdgeType("T1T1", "T1", "T1"))
        graph.edges["T1T1"] = np.zeros((0, 2), dtype=np.int64)
    return graph


def random_meta_path(rng, graph, max_hops=4):
    """Random type sequence that starts and ends at the target type."""
    types = graph.node_types
    start = graph.target_type
    hops = int(rng.integers(2, max_hops + 1))
    seq = [start]
    for h in range(hops - 1):
        choices = [t for t in types if t != seq[-1]]
        if h == hops - 2:
            choices = [t for t in choices if t != start] or choices
        seq.append(choices[int(rng.integers(len(choices)))])
    if seq[-1] == start:
        seq = seq[:-1]
    seq.append(start)
    return "-".join(seq)


def enumerate_paths(graph, spec):
    """Meta-path neighbour sets by depth-first enumeration of every path instance."""
    seq = spec.split("-")
    adj = []
    for a, b in zip(seq, seq[1:]):
        nxt = {}
        for et in graph.edge_types:
            pairs = graph.edges[et.name]
            if (et.src, et.dst) == (a, b):
                for s, d in pairs:
                    nxt.setdefault(int(s), []).append(int(d))
            elif (et.dst, et.src) == (a, b):
                for s, d in pairs:
                    nxt.setdefault(int(d), []).append(int(s))
        adj.append(nxt)
    result = []
    for start in range(graph.num_nodes(seq[0])):
        found = {start}
        stack = [(start, 0)]
        while stack:
            node, depth = stack.pop()
            if depth == len(adj):
                found.add(node)
                continue
            for nb in adj[depth].get(node, ()):
                stack.append((nb, depth + 1))
        result.append(found)
    return result


def small_instance(seed=0, n=20, q_dim=8, hidden=4, heads=2, dropout=0.5):
    """Tiny planted graph with initialised parameters: (graph, indices, params, config)."""
    from hanet import model as M
    from hanet.synthetic import SyntheticConfig, generate_synthetic

    graph = generate_synthetic(SyntheticConfig(num_target=n, num_noise=6, p_in=0.5, p_out=0.1,
                                               p_noise=0.2, feature_dim=5, train_fraction=0.4,
                                               val_fraction=0.2), seed=seed)
    cfg = M.HanConfig(hidden=hidden, heads=heads, q_dim=q_dim, dropout=dropout,
                      meta_paths=list(graph.meta_paths))
    params = M.init_params(graph.feature_dims(), graph.num_classes, cfg, seed=seed)
    return graph, M.build_indices(graph, cfg.meta_paths), params, cfg
