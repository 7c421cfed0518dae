"""Embedding evaluation: KNN classification, KMeans clustering, attention reports.

Conventions:

* KNN uses Euclidean distance by default. Neighbours at equal distance are
  ordered by node id; a tied vote goes to the lowest class index.
* Macro-F1 over a declared class count gives F1 = 0 to a class absent from both
  predictions and truth.
* NMI normalises mutual information by the arithmetic mean of the two entropies.
* KMeans re-seeds an empty cluster at the point farthest from its current centre.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


def _check_pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DimensionError(f"label arrays differ in shape: {pred.shape} vs {truth.shape}")
    return pred.astype(np.int64), truth.astype(np.int64)


# --- classification metrics -----------------------------------------------

def per_class_f1(pred, truth, num_classes=None):
    pred, truth = _check_pair(pred, truth)
    if num_classes is None:
        classes = np.union1d(pred, truth)
    else:
        classes = np.arange(num_classes)
    scores = []
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2.0 * tp / denom)
    return np.array(scores)


def macro_f1(pred, truth, num_classes=None):
    scores = per_class_f1(pred, truth, num_classes)
    return float(scores.mean()) if len(scores) else 0.0


def micro_f1(pred, truth):
    """Pooled-count F1; identical to accuracy for single-label inputs."""
    pred, truth = _check_pair(pred, truth)
    if len(pred) == 0:
        return 0.0
    tp = np.sum(pred == truth)
    fp = fn = len(pred) - tp
    return float(2 * tp / (2 * tp + fp + fn))


# --- clustering metrics ----------------------------------------------------

def contingency(pred, truth):
    pred, truth = _check_pair(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _entropy(counts):
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth):
    table = contingency(pred, truth)
    n = table.sum()
    if n == 0:
        return 1.0
    h_p, h_t = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_p == 0.0 and h_t == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return max(0.0, min(1.0, mi / ((h_p + h_t) / 2.0)))


def ari(pred, truth):
    table = contingency(pred, truth)
    n = table.sum()

    def pairs(x):
        return (x * (x - 1) / 2.0).sum()

    index = pairs(table)
    a, b = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = a * b / total if total else 0.0
    max_index = (a + b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# --- KNN -------------------------------------------------------------------

def pairwise_distances(X, Y, metric="euclidean"):
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if metric == "euclidean":
        return np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2))
    if metric == "cosine":
        nx = np.linalg.norm(X, axis=1, keepdims=True)
        ny = np.linalg.norm(Y, axis=1, keepdims=True)
        return 1.0 - (X @ Y.T) / np.maximum(nx * ny.T, 1e-300)
    raise ValueError(f"unknown metric {metric!r}")


def knn_predict(train_X, train_y, test_X, k=5, train_ids=None, metric="euclidean"):
    train_y = np.asarray(train_y, dtype=np.int64)
    if not 1 <= k <= len(train_y):
        raise ContractError(f"k={k} needs between 1 and {len(train_y)} training points")
    if train_ids is None:
        train_ids = np.arange(len(train_y))
    train_ids = np.asarray(train_ids)
    n_classes = int(train_y.max()) + 1
    preds = np.empty(len(test_X), dtype=np.int64)
    chunk = 256
    for start in range(0, len(test_X), chunk):
        d = pairwise_distances(test_X[start:start + chunk], train_X, metric)
        ids = np.broadcast_to(train_ids, d.shape)
        order = np.lexsort((ids, d), axis=1)[:, :k]
        for r, nearest in enumerate(order):
            votes = np.bincount(train_y[nearest], minlength=n_classes)
            preds[start + r] = int(np.argmax(votes))
    return preds


def knn_classify(embeddings, train_ids, train_labels, test_ids, test_labels, k=5, repeats=10,
                 fraction=1.0, seed=0, metric="euclidean", num_classes=None):
    """Repeated KNN evaluation; each repeat samples ``fraction`` of the train ids.

    Repeat ``r`` draws its subset from ``default_rng([seed, r])``.
    """
    X = np.asarray(embeddings)
    train_ids, test_ids = np.asarray(train_ids), np.asarray(test_ids)
    train_labels, test_labels = np.asarray(train_labels), np.asarray(test_labels)
    if k > len(train_ids):
        raise ContractError(f"k={k} exceeds the {len(train_ids)} training points")
    size = max(k, int(round(fraction * len(train_ids))))
    if size > len(train_ids):
        raise ContractError(f"fraction {fraction} asks for more than {len(train_ids)} points")
    macro, micro = [], []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        pick = np.sort(rng.choice(len(train_ids), size=size, replace=False))
        pred = knn_predict(X[train_ids[pick]], train_labels[pick], X[test_ids], k,
                           train_ids=train_ids[pick], metric=metric)
        macro.append(macro_f1(pred, test_labels, num_classes))
        micro.append(micro_f1(pred, test_labels))
    return {
        "fraction": fraction, "k": k, "train_size": size,
        "macro_f1_mean": float(np.mean(macro)), "macro_f1_std": float(np.std(macro)),
        "micro_f1_mean": float(np.mean(micro)), "micro_f1_std": float(np.std(micro)),
        "macro_f1": macro, "micro_f1": micro,
    }


# --- KMeans ----------------------------------------------------------------

def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(X, n_clusters, seed=0, max_iter=300):
    """Lloyd iterations from ``n_clusters`` distinct random points.

    Stops at the first assignment fixpoint. Returns ``(labels, centers, inertia)``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= n_clusters <= n:
        raise ContractError(f"cannot form {n_clusters} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = X[np.sort(rng.choice(n, size=n_clusters, replace=False))].copy()
    labels = None
    for _ in range(max_iter):
        d = _sq_dist(X, centers)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        own = d[np.arange(n), labels]
        for c in range(n_clusters):
            if not np.any(labels == c):
                far = int(np.argmax(own))
                labels[far] = c
                own[far] = -np.inf
        for c in range(n_clusters):
            centers[c] = X[labels == c].mean(axis=0)
    inertia = float(_sq_dist(X, centers)[np.arange(n), labels].sum())
    return labels, centers, inertia


def kmeans_cluster(X, n_clusters, repeats=10, seed=0, max_iter=300):
    """Independent KMeans runs seeded ``[seed, r]``; returns (assignments, inertias)."""
    runs = [kmeans(X, n_clusters, seed=[seed, r], max_iter=max_iter) for r in range(repeats)]
    return [r[0] for r in runs], [r[2] for r in runs]


def clustering_scores(X, truth, n_clusters, repeats=10, seed=0):
    assignments, _ = kmeans_cluster(X, n_clusters, repeats, seed)
    nmis = [nmi(a, truth) for a in assignments]
    aris = [ari(a, truth) for a in assignments]
    return {
        "nmi_mean": float(np.mean(nmis)), "nmi_std": float(np.std(nmis)),
        "ari_mean": float(np.mean(aris)), "ari_std": float(np.std(aris)),
        "nmi": nmis, "ari": aris,
    }


# --- reports ---------------------------------------------------------------

def evaluate_embeddings(embeddings, graph, fractions=(0.2, 0.4, 0.6, 0.8), k=5, repeats=10,
                        seed=0, metric="euclidean"):
    """KNN over the test split (references drawn from the train split) and
    KMeans over all labeled target nodes."""
    labels = graph.labels
    train, test = graph.splits["train"], graph.splits["test"]
    classification = [
        knn_classify(embeddings, train, labels[train], test, labels[test], k=k, repeats=repeats,
                     fraction=f, seed=seed, metric=metric, num_classes=graph.num_classes)
        for f in fractions
    ]
    labeled = graph.labeled_ids()
    clustering = clustering_scores(np.asarray(embeddings)[labeled], labels[labeled],
                                   graph.num_classes, repeats, seed)
    return {"classification": classification, "clustering": clustering}


@dataclass
class AttentionReport:
    meta_paths: list
    betas: list                              # (meta_path, beta, w), beta descending
    nodes: dict = field(default_factory=dict)  # node id -> meta_path -> rows

    def rows(self, node):
        """Flat rows (meta_path, neighbor, mean, per-head alphas) for one node."""
        out = []
        for mp in self.meta_paths:
            for nbr, mean_alpha, heads in self.nodes[node][mp]:
                out.append((mp, nbr, mean_alpha, heads))
        return out


def inspect_attention(output, indices, node="*"):
    """Attention coefficients from a forward pass, without recomputation."""
    meta_paths = [idx.name for idx in indices]
    betas = sorted(zip(meta_paths, output.beta.tolist(), output.w.tolist()),
                   key=lambda r: (-r[1], meta_paths.index(r[0])))
    n = indices[0].num_nodes
    if node == "*":
        targets = range(n)
    else:
        if not isinstance(node, (int, np.integer)) or not 0 <= node < n:
            raise KeyError(f"unknown node {node!r}")
        targets = [int(node)]
    report = AttentionReport(meta_paths, betas)
    for i in targets:
        per_path = {}
        for mp, idx in zip(meta_paths, indices):
            lo, hi = idx.indptr[i], idx.indptr[i + 1]
            alpha = output.alpha[mp][lo:hi]
            mean_alpha = alpha.mean(axis=1)
            entries = [(int(j), float(m), alpha[e].tolist())
                       for e, (j, m) in enumerate(zip(idx.indices[lo:hi], mean_alpha))]
            entries.sort(key=lambda r: (-r[1], r[0]))
            per_path[mp] = entries
        report.nodes[i] = per_path
    return report


def write_attention_csv(report, path, keys):
    heads = len(next(iter(next(iter(report.nodes.values())).values()))[0][2])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "meta_path", "neighbor", "alpha_mean"]
                   + [f"alpha_head{k}" for k in range(heads)])
        for i in report.nodes:
            for mp, nbr, mean_alpha, per_head in report.rows(i):
                w.writerow([keys[i], mp, keys[nbr], repr(mean_alpha)] + [repr(a) for a in per_head])


def write_betas_csv(report_or_betas, path):
    betas = report_or_betas.betas if isinstance(report_or_betas, AttentionReport) else report_or_betas
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["meta_path", "beta", "w"])
        for mp, beta, imp in betas:
            w.writerow([mp, repr(beta), repr(imp)])


def write_embeddings_tsv(embeddings, keys, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, row in zip(keys, np.asarray(embeddings)):
            fh.write(key + "\t" + ",".join(repr(float(v)) for v in row) + "\n")


def write_report_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
