"""``hanet`` command line: gen-synthetic, train, eval, inspect.

Exit codes: 0 success, 2 usage, 3 data or validation error, 4 numerical failure.
Output files never contain timestamps, so reruns can be diffed byte for byte.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from . import evaluation as E
from . import model as M
from . import train as TR
from .errors import ConfigError, HanetError, NumericalError
from .hetgraph import load_graph, save_graph
from .synthetic import SyntheticConfig, generate_synthetic, intra_class_fraction

log = logging.getLogger("hanet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class EvalOptions:
    train_fractions: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    k: int = 5
    repeats: int = 10
    seed: int = 0
    metric: str = "euclidean"

    def validate(self):
        if self.k < 1 or self.repeats < 1:
            raise ConfigError("k and repeats must be >= 1")
        if any(not 0 < f <= 1 for f in self.train_fractions):
            raise ConfigError("train fractions must lie in (0, 1]")
        if self.metric not in ("euclidean", "cosine"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        return self


@dataclass
class RunConfig:
    """Everything that determines a run; the JSON form has one section per part."""
    model: M.HanConfig = field(default_factory=M.HanConfig)
    train: TR.TrainConfig = field(default_factory=TR.TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    ablate: str = None

    SECTIONS = {"model": M.HanConfig, "train": TR.TrainConfig, "eval": EvalOptions}

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.SECTIONS) - {"ablate"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        parts = {}
        for name, kind in cls.SECTIONS.items():
            section = doc.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            defaults = vars(kind())
            for key, value in section.items():
                _check_type(f"{name}.{key}", value, defaults[key])
            parts[name] = kind(**section)
        return cls(ablate=doc.get("ablate"), **parts)

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        if self.ablate not in (None, "nd", "sem"):
            raise ConfigError(f"ablate must be 'nd', 'sem' or null, got {self.ablate!r}")
        return self

    def to_dict(self):
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "eval": vars(self.eval).copy(), "ablate": self.ablate}


def _check_type(name, value, default):
    if isinstance(default, bool) or default is None:
        return
    if isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{name} must be of type {type(default).__name__}, got {value!r}")


# flag name -> (section, field, type)
_OVERRIDES = {
    "hidden": ("model", "hidden", int),
    "heads": ("model", "heads", int),
    "q_dim": ("model", "q_dim", int),
    "dropout": ("model", "dropout", float),
    "slope": ("model", "slope", float),
    "activation": ("model", "activation", str),
    "lr": ("train", "lr", float),
    "weight_decay": ("train", "weight_decay", float),
    "max_epochs": ("train", "max_epochs", int),
    "patience": ("train", "patience", int),
    "seed": ("train", "seed", int),
}


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(path, force=False):
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(data, checkpoint):
    graph = load_graph(data)
    params, config, schema, extra = M.load_checkpoint(checkpoint)
    M.check_compatible(graph, config, schema)
    return graph, params, config, extra


# --- commands --------------------------------------------------------------

def cmd_gen_synthetic(args):
    cfg = SyntheticConfig()
    for flag, name in (("nodes", "num_target"), ("classes", "num_classes"), ("p_in", "p_in"),
                       ("p_out", "p_out"), ("p_noise", "p_noise"),
                       ("feature_noise", "feature_noise"), ("feature_dim", "feature_dim")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, name, value)
    graph = generate_synthetic(cfg, seed=args.seed)
    out = _prepare_out(args.out, args.force)
    save_graph(graph, out)
    _write_json(out / "generator.json", {"seed": args.seed, "config": cfg.to_dict()})
    idx = M.build_indices(graph, graph.meta_paths[:1])[0]
    print(f"wrote {graph.num_nodes(graph.target_type)} target nodes to {out}; "
          f"{idx.name} intra-class neighbour fraction "
          f"{intra_class_fraction(idx, graph.labels):.3f}")
    return EXIT_OK


def resolve_run_config(args, graph):
    run = RunConfig.load(args.config) if args.config else RunConfig()
    for flag, (section, name, _) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(run, section), name, value)
    if args.meta_paths:
        run.model.meta_paths = [m.strip() for m in args.meta_paths.split(",") if m.strip()]
    if args.ablate is not None:
        run.ablate = args.ablate
    if not run.model.meta_paths:
        run.model.meta_paths = list(graph.meta_paths)
    if not run.model.meta_paths:
        raise ConfigError("no meta-paths: pass --meta-paths or list them in schema.json")
    return run.validate()


def cmd_train(args):
    graph = load_graph(args.data)
    run = resolve_run_config(args, graph)
    out = _prepare_out(args.out, args.force)
    indices = M.build_indices(graph, run.model.meta_paths, threads=args.threads)
    for idx in indices:
        log.info("%s: %d nodes, %d neighbour pairs", idx.name, idx.num_nodes, idx.num_edges)
    params, history = TR.fit(graph, run.model, run.train, indices=indices, ablate=run.ablate)
    extra = {"ablate": run.ablate, "best_epoch": history.best_epoch,
             "stopped_epoch": history.stopped_epoch, "best_val_loss": history.best_val_loss}
    M.save_checkpoint(out / "checkpoint.json", params, run.model,
                      M.schema_signature(graph, run.model), extra)
    history.write_csv(out / "trainlog.csv", timings=args.timings)
    _write_json(out / "run_config.json", run.to_dict())
    with open(out / "id_map.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("type\tkey\tid\n")
        for t in graph.node_types:
            for i, key in enumerate(graph.node_keys[t]):
                fh.write(f"{t}\t{key}\t{i}\n")
    print(f"stopped at epoch {history.stopped_epoch}, best epoch {history.best_epoch} "
          f"(val loss {history.best_val_loss:.5f}); wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    graph, params, config, extra = _load_model(args.data, args.checkpoint)
    opts = EvalOptions()
    if args.train_fraction:
        opts.train_fractions = list(args.train_fraction)
    for name in ("k", "repeats", "seed", "metric"):
        if getattr(args, name) is not None:
            setattr(opts, name, getattr(args, name))
    opts.validate()
    indices = M.build_indices(graph, config.meta_paths, threads=args.threads)
    output = M.forward(graph, indices, params, config, mode="eval", ablate=extra.get("ablate"))
    emb = output.Z.data
    metrics = E.evaluate_embeddings(emb, graph, opts.train_fractions, opts.k, opts.repeats,
                                    opts.seed, opts.metric)
    report = E.inspect_attention(output, indices, node=0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = graph.node_keys[graph.target_type]
    E.write_report_json({
        "options": vars(opts),
        "ablate": extra.get("ablate"),
        "classification": metrics["classification"],
        "clustering": metrics["clustering"],
        "betas": [{"meta_path": mp, "beta": b, "w": w} for mp, b, w in report.betas],
    }, out / "report.json")
    E.write_embeddings_tsv(emb, keys, out / "embeddings.tsv")
    E.write_betas_csv(report, out / "betas.csv")
    for r in metrics["classification"]:
        print(f"train fraction {r['fraction']:.2f}: macro-F1 {r['macro_f1_mean']:.4f} "
              f"+- {r['macro_f1_std']:.4f}, micro-F1 {r['micro_f1_mean']:.4f} "
              f"+- {r['micro_f1_std']:.4f}")
    c = metrics["clustering"]
    print(f"clustering: NMI {c['nmi_mean']:.4f} +- {c['nmi_std']:.4f}, "
          f"ARI {c['ari_mean']:.4f} +- {c['ari_std']:.4f}")
    for mp, b, _ in report.betas:
        print(f"beta[{mp}] = {b:.4f}")
    return EXIT_OK


def cmd_inspect(args):
    graph, params, config, extra = _load_model(args.data, args.checkpoint)
    keys = graph.node_keys[graph.target_type]
    if args.node == "*":
        node, label = "*", "all"
    else:
        try:
            node = keys.index(args.node)
        except ValueError:
            raise ConfigError(f"unknown {graph.target_type} node {args.node!r}") from None
        label = args.node
    indices = M.build_indices(graph, config.meta_paths, threads=args.threads)
    output = M.forward(graph, indices, params, config, mode="eval", ablate=extra.get("ablate"))
    report = E.inspect_attention(output, indices, node)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    E.write_attention_csv(report, out / f"attention_{label}.csv", keys)
    E.write_betas_csv(report, out / "betas.csv")
    for mp, b, w in report.betas:
        print(f"beta[{mp}] = {b:.4f} (w = {w:.4f})")
    if node != "*":
        for mp, nbr, mean_alpha, _ in report.rows(node)[:args.top]:
            print(f"{mp}\t{keys[nbr]}\t{mean_alpha:.4f}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hanet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a planted-signal graph directory")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--p-in", type=float)
    g.add_argument("--p-out", type=float)
    g.add_argument("--p-noise", type=float)
    g.add_argument("--nodes", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--feature-noise", type=float)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="fit a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON run config; flags override its values")
    t.add_argument("--ablate", choices=["nd", "sem"])
    t.add_argument("--meta-paths", help="comma-separated, e.g. M-A-M,M-D-M")
    for flag, (_, _, kind) in _OVERRIDES.items():
        t.add_argument("--" + flag.replace("_", "-"), type=kind)
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--timings", action="store_true", help="add wall times to trainlog.csv")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="classification and clustering scores of the embeddings")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--train-fraction", type=float, nargs="+")
    e.add_argument("--k", type=int)
    e.add_argument("--repeats", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--metric", choices=["euclidean", "cosine"])
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="dump attention coefficients")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--node", required=True, help="target node key, or * for every node")
    i.add_argument("--out", default=".")
    i.add_argument("--top", type=int, default=10)
    i.add_argument("--threads", type=int, default=1)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("hanet: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"hanet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HanetError as exc:
        print(f"hanet: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
