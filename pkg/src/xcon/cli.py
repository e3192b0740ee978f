"""Experiment runner.

Subcommands: gen-synth, partition, train, assign, eval, estimate-k, run,
sweep. Every run directory receives an echo of the fully resolved config;
re-running from that file reproduces the report byte for byte at a fixed
thread count. Flags override config-file values, which override defaults.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import estimation, report as rpt, synth
from .clustering import semi_supervised_kmeans
from .engine.train import (TrainConfig, load_checkpoint, save_checkpoint, train,
                           write_trace_csv)
from .evaluation import (clustering_accuracy, report_text, write_contingency_csv,
                         write_report_csv)
from .partition import (format_partition_report, load_partition, partition_dataset,
                        partition_report, save_partition)
from .rng import stage_seed
from .store import build_subset_masks, l2_normalize, load_features, save_features

log = logging.getLogger("xcon")

_CONFIG_KEY = {"lam": "lambda"}
_FIELD_FOR_KEY = {"lambda": "lam"}


@dataclass
class RunConfig:
    features: str = ""
    meta: str = ""
    out: str = "out"
    seed: int = 0
    threads: int = 0             # 0 = leave BLAS pools alone
    dataset: str = ""            # report label; defaults to the features stem
    num_classes: int = 0         # 0 = from ground truth (or estimation)
    estimate_k: bool = False
    k_min: int = 0               # 0 = |seen classes|
    k_max: int = 0               # 0 = 2|seen| + 10
    tau: float = 0.07
    lam: float = 0.35
    alpha: float = 0.1
    k_partitions: int = 8
    coarse_batch: int = 256
    fine_batch: int = 32
    epochs: int = 200
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    view_mode: str = "feature_jitter"
    jitter_sigma: float = 0.05
    jitter_drop: float = 0.1
    hidden_dim: int = 2048
    proj_dim: int = 128

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            tau=self.tau, lam=self.lam, alpha=self.alpha,
            k_partitions=self.k_partitions, coarse_batch=self.coarse_batch,
            fine_batch=self.fine_batch, epochs=self.epochs, base_lr=self.base_lr,
            momentum=self.momentum, weight_decay=self.weight_decay,
            seed=stage_seed(self.seed, "train"), view_mode=self.view_mode,
            jitter_sigma=self.jitter_sigma, jitter_drop=self.jitter_drop,
            hidden_dim=self.hidden_dim, proj_dim=self.proj_dim)

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: _CONFIG_KEY.get(f.name, f.name)):
            key = _CONFIG_KEY.get(f.name, f.name)
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key}={val}")
        for stage in ("partition", "train", "assign", "estimate"):
            lines.append(f"# seed_{stage}={stage_seed(self.seed, stage)}")
        return "\n".join(lines) + "\n"


def _coerce(field_type, raw: str):
    if field_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {raw!r}")
    return field_type(raw)


def load_config_file(path) -> dict:
    """Parse a flat key=value config file into RunConfig field values."""
    types = {f.name: f.type for f in fields(RunConfig)}
    types = {name: eval(t) if isinstance(t, str) else t for name, t in types.items()}
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        name = _FIELD_FOR_KEY.get(key, key)
        if name not in types:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        out[name] = _coerce(types[name], raw.strip())
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for name, val in load_config_file(args.config).items():
            setattr(cfg, name, val)
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _apply_threads(threads: int):
    if threads > 0:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=threads)
    return None


def _load_pair(cfg: RunConfig):
    path = cfg.features
    if not path:
        raise ValueError("--features is required")
    return load_features(path, meta_path=cfg.meta or None)


def _resolve_k(cfg: RunConfig, m, view, out_dir: Path) -> int:
    if cfg.num_classes > 0:
        return cfg.num_classes
    if cfg.estimate_k:
        k_min = cfg.k_min or len(view.seen_classes)
        k_max = cfg.k_max or estimation.default_k_max(view)
        result = estimation.estimate_num_classes(m, view, k_min, k_max,
                                                 stage_seed(cfg.seed, "estimate"))
        _write_kcurve(out_dir, result)
        return result.k_hat
    unlabeled = ~view.labeled_mask
    truth = view.labels[unlabeled]
    if truth.size and truth.min() >= 0:
        return int(np.unique(view.labels[view.labels >= 0]).size)
    raise ValueError("cannot infer class count: pass --num-classes or --estimate-k")


def _write_kcurve(out_dir: Path, result: estimation.KSearchResult) -> None:
    with open(out_dir / "kcurve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "probe_acc"])
        for k, s in zip(result.ks, result.scores):
            w.writerow([k, repr(s)])
    (out_dir / "k_hat.txt").write_text(f"{result.k_hat}\n", encoding="utf-8")
    rpt.save_kcurve_figure(out_dir / "figures" / "kcurve.png",
                           result.ks, result.scores, result.k_hat)


def run_pipeline(cfg: RunConfig):
    """partition -> train -> embed -> assign -> evaluate, writing every
    artifact into cfg.out. Raises PipelineError naming the failing stage."""
    out_dir = Path(cfg.out)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    err_path = out_dir / "error.txt"
    if err_path.exists():
        err_path.unlink()
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    def stage(name, fn, *a, **kw):
        try:
            return fn(*a, **kw)
        except Exception as e:  # noqa: BLE001 - every stage error becomes an artifact
            raise PipelineError(name, e) from e

    m, view = stage("load", _load_pair, cfg)
    m = stage("normalize", l2_normalize, m)
    part = stage("partition", partition_dataset, m, cfg.k_partitions,
                 stage_seed(cfg.seed, "partition"))
    save_partition(out_dir / "partition.tsv", part, view)
    rpt.save_partition_figure(fig_dir / "partition_sizes.png", part.sizes)

    tcfg = cfg.train_config()
    model, trace = stage("train", train, m, view, part, tcfg)
    save_checkpoint(out_dir / "checkpoint.bin", model, tcfg)
    write_trace_csv(out_dir / "trace.csv", trace)
    rpt.save_trace_figure(fig_dir / "trace.png", trace)

    final = stage("embed", model.embed_adapter, m.data)
    k = stage("estimate" if cfg.estimate_k else "resolve-k",
              _resolve_k, cfg, m, view, out_dir)
    assignment = stage("assign", semi_supervised_kmeans, final, view, k,
                       stage_seed(cfg.seed, "assign"))
    _write_assignment(out_dir / "assignment.tsv", view, assignment.assignment)

    masks = stage("eval", build_subset_masks, view)
    result = stage("eval", clustering_accuracy, assignment.assignment, view.labels, masks)
    (out_dir / "report.txt").write_text(report_text(result), encoding="utf-8")
    write_report_csv(out_dir / "report.csv",
                     cfg.dataset or Path(cfg.features).stem, cfg.seed, result)
    write_contingency_csv(out_dir / "contingency.csv", result)
    coords = rpt.pca_project(final)
    rpt.write_pca_csv(out_dir / "pca.csv", view, coords, assignment.assignment)
    rpt.save_pca_figure(fig_dir / "pca.png", coords, assignment.assignment,
                        f"acc_all={result.acc_all:.3f}")
    rpt.save_contingency_figure(fig_dir / "contingency.png", result)
    return result


def _write_assignment(path, view, assignment) -> None:
    lines = [f"{view.ids[i]}\t{int(assignment[i])}" for i in range(view.n)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_assignment(path, view) -> np.ndarray:
    by_id = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rid, _, cluster = line.partition("\t")
            by_id[rid] = int(cluster)
    missing = [rid for rid in view.ids if rid not in by_id]
    if missing:
        raise ValueError(f"{path}: no assignment for id {missing[0]!r}")
    return np.array([by_id[rid] for rid in view.ids], dtype=np.int64)


# ----------------------------------------------------------------- commands

def cmd_gen_synth(args) -> int:
    spec = synth.GeneratorSpec(
        n_backgrounds=args.backgrounds, n_fine_classes=args.fine_classes,
        samples_per_class=args.samples_per_class, d=args.dim,
        background_scale=args.background_scale, class_scale=args.class_scale,
        noise_sigma=args.noise_sigma, seen_fraction=args.seen_fraction,
        labeled_fraction=args.labeled_fraction, seed=args.seed or 0)
    m, view, factors = synth.generate(spec)
    base = Path(args.out)
    base.parent.mkdir(parents=True, exist_ok=True)
    save_features(base, m, view)
    synth.save_factors(base.with_suffix(".factors"), view, factors)
    print(f"wrote {base.with_suffix('.bin')} ({m.n} rows, d={m.d}, "
          f"{len(view.seen_classes)} seen classes, {view.n_labeled} labeled)")
    return 0


def cmd_partition(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    out_dir = Path(cfg.out)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    m, view = _load_pair(cfg)
    m = l2_normalize(m)
    part = partition_dataset(m, cfg.k_partitions, stage_seed(cfg.seed, "partition"))
    save_partition(out_dir / "partition.tsv", part, view)
    table = format_partition_report(partition_report(part, view))
    (out_dir / "partition_report.txt").write_text(table, encoding="utf-8")
    rpt.save_partition_figure(out_dir / "figures" / "partition_sizes.png", part.sizes)
    print(table, end="")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    out_dir = Path(cfg.out)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    m, view = _load_pair(cfg)
    m = l2_normalize(m)
    if args.partition:
        part = load_partition(args.partition, view)
    else:
        part = partition_dataset(m, cfg.k_partitions, stage_seed(cfg.seed, "partition"))
        save_partition(out_dir / "partition.tsv", part, view)
    tcfg = cfg.train_config()
    model, trace = train(m, view, part, tcfg)
    save_checkpoint(out_dir / "checkpoint.bin", model, tcfg)
    write_trace_csv(out_dir / "trace.csv", trace)
    rpt.save_trace_figure(out_dir / "figures" / "trace.png", trace)
    print(f"trained {len(trace)} steps; final loss {trace[-1].loss_total:.4f}")
    return 0


def cmd_assign(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    out_dir = Path(cfg.out)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    m, view = _load_pair(cfg)
    m = l2_normalize(m)
    model, _ = load_checkpoint(args.checkpoint)
    final = model.embed_adapter(m.data)
    k = _resolve_k(cfg, m, view, out_dir)
    assignment = semi_supervised_kmeans(final, view, k, stage_seed(cfg.seed, "assign"))
    _write_assignment(out_dir / "assignment.tsv", view, assignment.assignment)
    print(f"assigned {view.n} rows to {k} clusters "
          f"(inertia {assignment.inertia:.4f}, {assignment.iterations} iterations)")
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args)
    out_dir = Path(cfg.out)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    m, view = _load_pair(cfg)
    pred = _read_assignment(args.assignment, view)
    masks = build_subset_masks(view)
    result = clustering_accuracy(pred, view.labels, masks)
    (out_dir / "report.txt").write_text(report_text(result), encoding="utf-8")
    write_report_csv(out_dir / "report.csv",
                     cfg.dataset or Path(cfg.features).stem, cfg.seed, result)
    write_contingency_csv(out_dir / "contingency.csv", result)
    rpt.save_contingency_figure(out_dir / "figures" / "contingency.png", result)
    print(report_text(result), end="")
    return 0


def cmd_estimate_k(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    out_dir = Path(cfg.out)
    (out_dir / "figures").mkdir(parents=True, exist_ok=True)
    m, view = _load_pair(cfg)
    m = l2_normalize(m)
    k_min = cfg.k_min or len(view.seen_classes)
    k_max = cfg.k_max or estimation.default_k_max(view)
    result = estimation.estimate_num_classes(m, view, k_min, k_max,
                                             stage_seed(cfg.seed, "estimate"))
    _write_kcurve(out_dir, result)
    print(f"k_hat={result.k_hat}")
    return 0


def cmd_run(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_pipeline(cfg)
    except PipelineError as e:
        (out_dir / "error.txt").write_text(f"stage={e.stage}\nerror={e.cause}\n",
                                           encoding="utf-8")
        print(str(e), file=sys.stderr)
        return 1
    print(report_text(result), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    _apply_threads(cfg.threads)
    axis = args.axis
    if axis == "alpha":
        values = [float(v) for v in args.values.split(",")]
    elif axis == "lambda":
        values = [float(v) for v in args.values.split(",")]
    elif axis == "K":
        values = [int(v) for v in args.values.split(",")]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    for value in values:
        for seed in seeds:
            sub = RunConfig(**{f.name: getattr(cfg, f.name) for f in fields(RunConfig)})
            sub.seed = seed
            if axis == "alpha":
                sub.alpha = value
            elif axis == "lambda":
                sub.lam = value
            else:
                sub.k_partitions = value
            sub.out = str(out_dir / f"{axis}_{value}" / f"seed{seed}")
            try:
                result = run_pipeline(sub)
                runs.append({"value": value, "seed": seed, "status": "ok",
                             "acc_all": result.acc_all, "acc_old": result.acc_old,
                             "acc_new": result.acc_new})
            except PipelineError as e:
                Path(sub.out).mkdir(parents=True, exist_ok=True)
                (Path(sub.out) / "error.txt").write_text(
                    f"stage={e.stage}\nerror={e.cause}\n", encoding="utf-8")
                log.error("sweep cell %s=%s seed=%s failed: %s", axis, value, seed, e)
                runs.append({"value": value, "seed": seed, "status": "failed",
                             "acc_all": "", "acc_old": "", "acc_new": ""})

    with open(out_dir / "sweep_runs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis, "seed", "status", "acc_all", "acc_old", "acc_new"])
        for r in runs:
            w.writerow([r["value"], r["seed"], r["status"], r["acc_all"],
                        r["acc_old"], r["acc_new"]])

    table = []
    for value in values:
        ok = [r for r in runs if r["value"] == value and r["status"] == "ok"]
        row = {"value": value, "n_ok": len(ok)}
        for key in ("acc_all", "acc_old", "acc_new"):
            row[key] = float(np.mean([r[key] for r in ok])) if ok else float("nan")
        table.append(row)
    with open(out_dir / "sweep_mean.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis, "n_ok", "acc_all", "acc_old", "acc_new"])
        for row in table:
            w.writerow([row["value"], row["n_ok"], repr(row["acc_all"]),
                        repr(row["acc_old"]), repr(row["acc_new"])])
    (out_dir / "figures").mkdir(exist_ok=True)
    rpt.save_sweep_figure(out_dir / "figures" / "sweep_acc.png", axis, values, table)
    failed = sum(r["status"] == "failed" for r in runs)
    print(f"sweep over {axis}: {len(runs)} runs, {failed} failed; "
          f"results in {out_dir / 'sweep_mean.csv'}")
    return 1 if failed == len(runs) else 0


# ------------------------------------------------------------------ parser

def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", help="base path of the <base>.bin/<base>.meta pair")
    p.add_argument("--meta", help="override metadata path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--threads", type=int, help="BLAS thread cap (0 = unlimited)")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--dataset", help="dataset label used in report CSV rows")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="supervised-vs-unsupervised mix in [0,1]")
    p.add_argument("--alpha", type=float, help="fine-loss weight")
    p.add_argument("--k-partitions", dest="k_partitions", type=int,
                   help="number of expert sub-datasets")
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--coarse-batch", dest="coarse_batch", type=int)
    p.add_argument("--fine-batch", dest="fine_batch", type=int)
    p.add_argument("--view-mode", dest="view_mode", choices=["stored_views", "feature_jitter"])
    p.add_argument("--jitter-sigma", dest="jitter_sigma", type=float)
    p.add_argument("--jitter-drop", dest="jitter_drop", type=float)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--proj-dim", dest="proj_dim", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)


def _add_assign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-classes", dest="num_classes", type=int,
                   help="cluster count for assignment (0 = from ground truth)")
    p.add_argument("--estimate-k", dest="estimate_k",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="estimate the class count instead of using ground truth")
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xcon",
                                     description="Category discovery on precomputed embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--out", required=True, help="output base path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backgrounds", type=int, default=2)
    p.add_argument("--fine-classes", dest="fine_classes", type=int, default=4)
    p.add_argument("--samples-per-class", dest="samples_per_class", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--background-scale", dest="background_scale", type=float, default=1.0)
    p.add_argument("--class-scale", dest="class_scale", type=float, default=0.3)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.1)
    p.add_argument("--seen-fraction", dest="seen_fraction", type=float, default=0.5)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("partition", help="split the dataset into expert sub-datasets")
    _add_io_flags(p)
    p.add_argument("--k-partitions", dest="k_partitions", type=int)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="train the representation model")
    _add_io_flags(p)
    _add_train_flags(p)
    p.add_argument("--partition", help="reuse a persisted partition file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("assign", help="cluster rows with a trained checkpoint")
    _add_io_flags(p)
    _add_assign_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("eval", help="score an assignment against ground truth")
    _add_io_flags(p)
    p.add_argument("--assignment", required=True, help="id<TAB>cluster file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("estimate-k", help="estimate the unlabeled class count")
    _add_io_flags(p)
    _add_assign_flags(p)
    p.set_defaults(func=cmd_estimate_k)

    p = sub.add_parser("run", help="full pipeline: partition, train, assign, eval")
    _add_io_flags(p)
    _add_train_flags(p)
    _add_assign_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the pipeline across an ablation axis")
    _add_io_flags(p)
    _add_train_flags(p)
    _add_assign_flags(p)
    p.add_argument("--axis", required=True, choices=["alpha", "lambda", "K"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
