"""Time the compiled and numpy kernel backends on planted-signal graphs.

    python benchmarks/bench_kernels.py --nodes 300 1000 2000 --repeat 5

Each row is the best of ``--repeat`` runs. The ``epoch`` row is one full
training step (forward, backward, Adam) through the whole model.
"""
import argparse
import json
import time

import numpy as np

from hanet import kernels
from hanet import model as M
from hanet import tensor as T
from hanet import train as TR
from hanet.synthetic import SyntheticConfig, generate_synthetic


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(graph, heads=8, hidden=8, seed=0):
    rng = np.random.default_rng(seed)
    ma = graph.adjacency("MA")
    am = graph.adjacency("MA", reverse=True)
    n_cols = graph.num_nodes("M")
    # the product the M-A-M index is built from
    idx = M.build_indices(graph, ["M-A-M"])[0]
    E, n = idx.num_edges, idx.num_nodes
    logits = rng.normal(size=(E, heads))
    x = rng.normal(size=(n, heads, hidden))
    g = rng.normal(size=(n, heads, hidden))

    def cases(k):
        alpha = k.segment_softmax(idx.indptr, logits)
        return {
            "bool_spgemm": lambda: k.bool_spgemm(ma[0], ma[1], am[0], am[1], n_cols),
            "segment_softmax": lambda: k.segment_softmax(idx.indptr, logits),
            "segment_softmax_backward": lambda: k.segment_softmax_backward(idx.indptr, alpha, logits),
            "spmm": lambda: k.spmm(idx.indptr, idx.indices, alpha, x),
            "spmm_backward": lambda: k.spmm_backward(idx.indptr, idx.indices, alpha, x, g),
        }
    return cases, E


def epoch_case(graph):
    cfg = M.HanConfig(meta_paths=list(graph.meta_paths))
    indices = M.build_indices(graph, cfg.meta_paths)
    params = M.init_params(graph.feature_dims(), graph.num_classes, cfg)
    state, tcfg = TR.AdamState(), TR.TrainConfig()
    train_ids = graph.splits["train"]

    def step():
        T.zero_grad(params.values())
        out = M.forward(graph, indices, params, cfg, mode="train", seed=(0, state.step + 1))
        loss = M.loss(out.Z, graph.labels, train_ids, params, tcfg.weight_decay)
        T.backward(loss)
        TR.adam_step(params, {k: v.grad for k, v in params.items()}, state, tcfg)
    return step


def run(sizes, repeat):
    backends = kernels.available_backends()
    rows = []
    for n in sizes:
        graph = generate_synthetic(SyntheticConfig(num_target=n, p_in=min(0.2, 60.0 / n),
                                                   p_out=min(0.02, 6.0 / n)), seed=0)
        cases, pairs = kernel_cases(graph)
        timings = {}
        for name in backends:
            for op, fn in cases(kernels.get_backend(name)).items():
                timings.setdefault(op, {})[name] = best_of(fn, repeat)
            previous = kernels.set_backend(name)
            try:
                step = epoch_case(graph)
                step()  # warm up
                timings.setdefault("epoch", {})[name] = best_of(step, repeat)
            finally:
                kernels.set_backend(previous)
        for op, by_backend in timings.items():
            rows.append({"nodes": n, "pairs": pairs, "op": op, **by_backend})
    return backends, rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, nargs="+", default=[300, 1000, 2000])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the rows to this file")
    args = p.parse_args(argv)
    backends, rows = run(args.nodes, args.repeat)
    header = f"{'nodes':>6} {'pairs':>8} {'op':<26}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>9}"
    print(header)
    for r in rows:
        line = f"{r['nodes']:>6} {r['pairs']:>8} {r['op']:<26}"
        line += "".join(f"{1e3 * r[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            line += f"{r['python'] / r['cython']:>8.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
