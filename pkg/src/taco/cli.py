"""Command-line front end: ``taco <pretrain|transfer|scratch|compare|analyze|report>``.

Settings resolve in order: built-in defaults, ``--preset`` from the task
registry, ``--config`` JSON file, then explicit flags. Every run writes its
resolved config, run log and checkpoints under a run directory (by default
below ``$TACO_RUN_ROOT``, else ``./runs``).

Exit codes: 0 success, 1 usage or configuration error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from taco import metrics
from taco.paramspace import NoValidTasksError, load_checkpoint
from taco.runlog import RunLog
from taco.taskworld import load_registry, make_suite, suite_groups, task_spec
from taco.trainer import DivergenceError, TrainConfig

log = logging.getLogger("taco")

RUN_ROOT_ENV = "TACO_RUN_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2
TRANSFER_KEYS = ("n_e", "n_max", "threshold", "freeze_phi")


class UsageError(Exception):
    pass


def run_root():
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _flag(name):
    return "--" + name.replace("_", "-")


def _hidden(text):
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}")


def _add_train_flags(p):
    g = p.add_argument_group("training hyperparameters")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        typ = _hidden if f.name == "hidden_sizes" else type(f.default)
        if typ is int:
            typ = lambda s: int(float(s))  # noqa: E731  accepts 2e5
        g.add_argument(_flag(f.name), dest=f.name, type=typ, default=None, metavar=f.name.upper())
    p.add_argument("--config", help="JSON config file ({'train': {...}, 'transfer': {...}})")
    p.add_argument("--preset", help="named preset from the task registry, e.g. 'desk-transfer'")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="repeat to run several seeds (default: 0)")
    p.add_argument("--run-dir", help="output directory (default: under $%s)" % RUN_ROOT_ENV)
    p.add_argument("--registry", help="alternative task registry JSON")


def _add_transfer_flags(p):
    p.add_argument("--n-e", dest="n_e", type=lambda s: int(float(s)), default=None,
                   help="exploration steps before the policy is fine-tuned")
    p.add_argument("--n-max", dest="n_max", type=lambda s: int(float(s)), default=None,
                   help="environment-step budget on the new task")
    p.add_argument("--threshold", type=float, default=None, help="success rate that counts as solved")


def build_parser():
    ap = argparse.ArgumentParser(prog="taco", description="Compositional multi-task RL and transfer.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("pretrain", help="multi-task pretraining of a parameter set")
    _add_train_flags(p)
    p.add_argument("--suite", default="mt4-toy")
    p.add_argument("--mode", choices=("uniform", "balanced", "weighted", "online"), default="balanced")
    p.add_argument("--weights", help="comma-separated per-task weights for --mode weighted")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("transfer", help="transfer a pretrained parameter set to a new task")
    _add_train_flags(p)
    _add_transfer_flags(p)
    p.add_argument("--from", dest="source", required=True, help="pretraining checkpoint (.npz) or run dir")
    p.add_argument("--task", required=True, help="task name from the registry")
    p.add_argument("--freeze-phi", action="store_true", default=None,
                   help="keep the parameter set fixed and learn only the new compositional vector")

    p = sub.add_parser("scratch", help="single-task SAC from scratch")
    _add_train_flags(p)
    _add_transfer_flags(p)
    p.add_argument("--task", required=True)

    p = sub.add_parser("compare", help="paired transfer vs scratch runs plus a metrics row")
    _add_train_flags(p)
    _add_transfer_flags(p)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--task", required=True, help="task name from the registry")
    p.add_argument("--freeze-phi", action="store_true", default=None,
                   help="keep the parameter set fixed and learn only the new compositional vector")

    p = sub.add_parser("analyze", help="PCA of compositional vectors and task grouping")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    p.add_argument("--eps-scale", type=float, default=0.5)
    p.add_argument("--min-pts", type=int, default=1)

    p = sub.add_parser("report", help="aggregate compare runs into CSV")
    p.add_argument("runs", nargs="+", help="compare run directories")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--seeds-out", help="optional per-seed CSV path")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--n-max", dest="n_max", type=lambda s: int(float(s)), default=None)
    return ap


# configuration -----------------------------------------------------------------

def load_config_file(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(data) - {"train", "transfer"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return data


def resolve(args, registry):
    """Returns ``(train_dict, transfer_dict)`` after applying preset, file and flags."""
    train, transfer = {}, {}
    if getattr(args, "preset", None):
        presets = registry.get("presets", {})
        if args.preset not in presets:
            raise UsageError(f"unknown preset {args.preset!r}; known: {sorted(presets)}")
        pre = presets[args.preset]
        train.update(pre.get("train", {}))
        transfer.update(pre.get("transfer", {}))
    if getattr(args, "config", None):
        data = load_config_file(args.config)
        train.update(data.get("train", {}))
        transfer.update(data.get("transfer", {}))
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            train[f.name] = v
    for k in TRANSFER_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            transfer[k] = v
    unknown = set(transfer) - set(TRANSFER_KEYS)
    if unknown:
        raise UsageError(f"unknown transfer settings: {sorted(unknown)}")
    return train, transfer


def make_train_config(train, seed):
    try:
        return TrainConfig.from_dict(dict(train, seed=seed))
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}")


def make_transfer_config(train_cfg, transfer):
    from taco.transfer import TransferConfig

    try:
        return TransferConfig(train=train_cfg, **transfer)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid transfer config: {e}")


def _seeds(args):
    return args.seeds if args.seeds else [0]


def _load_source(source):
    p = Path(source)
    if p.is_dir():
        p = p / "best.npz"
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {source}")
    return load_checkpoint(p)


def _task(name, registry):
    try:
        return task_spec(name, 0, registry)
    except KeyError:
        raise UsageError(f"unknown task {name!r}; known: {sorted(registry['tasks'])}")


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# commands --------------------------------------------------------------------------

def cmd_pretrain(args, registry):
    from taco.pretrain import run_pretraining

    if args.suite not in registry.get("suites", {}):
        raise UsageError(f"unknown suite {args.suite!r}; known: {sorted(registry.get('suites', {}))}")
    train, _ = resolve(args, registry)
    specs = make_suite(args.suite, registry=registry)
    groups = suite_groups(args.suite, registry=registry) if args.mode == "balanced" else None
    weights = None
    if args.mode == "weighted":
        if not args.weights:
            raise UsageError("--mode weighted needs --weights")
        weights = [float(x) for x in args.weights.split(",")]
        if len(weights) != len(specs):
            raise UsageError(f"--weights needs {len(specs)} values")
    for seed in _seeds(args):
        cfg = make_train_config(train, seed)
        out = (Path(args.run_dir) / f"seed{seed}" if args.run_dir
               else run_root() / "pretrain" / f"{args.suite}-{args.mode}" / f"seed{seed}")
        out.mkdir(parents=True, exist_ok=True)
        res = run_pretraining(cfg, specs, args.mode, groups=groups, weights=weights,
                              run_dir=out, resume=args.resume)
        print(f"pretrain seed={seed} best_avg_success={res.best_success:.3f} dir={out}")
    return EXIT_OK


def _one_transfer(args, registry, train, transfer, seed, out):
    from taco.transfer import run_transfer

    ck = _load_source(args.source)
    spec = _task(args.task, registry)
    cfg = make_transfer_config(make_train_config(train, seed), transfer)
    if getattr(args, "freeze_phi", None):
        cfg.freeze_phi = True
    res = run_transfer(cfg, ck.phi, ck.W, spec, layout_hash=ck.layout_hash)
    out.mkdir(parents=True, exist_ok=True)
    res.log.write(out / "runlog.jsonl")
    _dump(out / "config.json", {"transfer": cfg.to_dict(), "task": args.task, "source": str(args.source)})
    np.savez(out / "final.npz", phi=res.phi.data, w_new=res.w_new)
    return res.log, cfg


def _one_scratch(args, registry, train, transfer, seed, out):
    from taco.transfer import run_scratch

    spec = _task(args.task, registry)
    cfg = make_train_config(train, seed)
    n_max = transfer.get("n_max", cfg.total_env_steps)
    runlog = run_scratch(cfg, spec, n_max=n_max)
    out.mkdir(parents=True, exist_ok=True)
    runlog.write(out / "runlog.jsonl")
    _dump(out / "config.json", {"train": cfg.to_dict(), "n_max": n_max, "task": args.task})
    return runlog


def _base(args, *parts):
    return Path(args.run_dir) if args.run_dir else run_root().joinpath(*parts)


def cmd_transfer(args, registry):
    train, transfer = resolve(args, registry)
    base = _base(args, "transfer", args.task + ("-fixed" if args.freeze_phi else ""))
    for seed in _seeds(args):
        runlog, cfg = _one_transfer(args, registry, train, transfer, seed, base / f"seed{seed}")
        steps = metrics.required_steps(runlog, cfg.threshold, cfg.n_max)
        final = runlog.records[-1]["avg_success"] if runlog.records else float("nan")
        print(f"transfer seed={seed} required_steps={steps} final_success={final:.3f}")
    return EXIT_OK


def cmd_scratch(args, registry):
    train, transfer = resolve(args, registry)
    base = _base(args, "scratch", args.task)
    threshold = transfer.get("threshold", 0.9)
    for seed in _seeds(args):
        runlog = _one_scratch(args, registry, train, transfer, seed, base / f"seed{seed}")
        print(f"scratch seed={seed} required_steps={metrics.required_steps(runlog, threshold)}")
    return EXIT_OK


def _compare_report(run_dir, threshold=0.9, n_max=None):
    run_dir = Path(run_dir)
    tdirs = sorted((run_dir / "transfer").glob("seed*"), key=lambda p: int(p.name[4:]))
    if not tdirs:
        raise UsageError(f"no transfer runs under {run_dir}")
    seeds, tl, sl = [], [], []
    for td in tdirs:
        sd = run_dir / "scratch" / td.name
        if not (sd / "runlog.jsonl").is_file():
            raise UsageError(f"unpaired run: {td} has no scratch counterpart")
        seeds.append(int(td.name[4:]))
        tl.append(RunLog.read(td / "runlog.jsonl"))
        sl.append(RunLog.read(sd / "runlog.jsonl"))
    task = tl[0].meta.get("task", run_dir.name)
    return metrics.build_report(task, tl, sl, seeds, threshold, n_max)


def cmd_compare(args, registry):
    train, transfer = resolve(args, registry)
    base = _base(args, "compare", args.task)
    threshold = transfer.get("threshold", 0.9)
    for seed in _seeds(args):
        _one_scratch(args, registry, train, transfer, seed, base / "scratch" / f"seed{seed}")
        _one_transfer(args, registry, train, transfer, seed, base / "transfer" / f"seed{seed}")
    rep = _compare_report(base, threshold, transfer.get("n_max"))
    text = metrics.report_csv([rep])
    (base / "report.csv").write_text(text)
    (base / "seeds.csv").write_text(metrics.seed_csv([rep]))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args, registry):
    from taco import neurals as nn
    from taco.taskdist import online_adjust, pca_project
    from taco.taskworld import ACTION_DIM, STATE_DIM

    ck = _load_source(args.source)
    layout_d = ck.meta.get("layout")
    layout = (nn.NetworkLayout.from_dict(layout_d) if layout_d
              else nn.NetworkLayout(STATE_DIM, ACTION_DIM, (64, 64)))
    if layout.layout_hash != ck.layout_hash or layout.n != ck.phi.n:
        raise UsageError("checkpoint carries no usable network layout")
    names = ck.meta.get("tasks") or [str(t) for t in range(ck.W.data.shape[1])]
    src = Path(args.source)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    coords, dirs, ratio = pca_project(ck.W.data, dims=2)
    G, P = online_adjust(ck.phi.data, ck.W.data, layout, min_pts=args.min_pts, eps_scale=args.eps_scale)
    group_of = {t: gi for gi, g in enumerate(G.groups) for t in g}
    with open(out / "analysis.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "pc1", "pc2", "group", "prob"])
        for t, name in enumerate(names):
            pc = list(coords[t]) + [0.0] * (2 - coords.shape[1])
            w.writerow([name, f"{pc[0]:.6f}", f"{pc[1]:.6f}", group_of[t], f"{P.probs[t]:.6f}"])
    _dump(out / "analysis.json", {"explained_variance_ratio": ratio.tolist(), "directions": dirs.tolist(),
                                  "groups": [[names[t] for t in g] for g in G.groups]})
    print(f"analysis written to {out / 'analysis.csv'}")
    return EXIT_OK


def cmd_report(args, registry):
    reports = [_compare_report(d, args.threshold, args.n_max) for d in args.runs]
    text = metrics.report_csv(reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.seeds_out:
        Path(args.seeds_out).write_text(metrics.seed_csv(reports))
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "transfer": cmd_transfer, "scratch": cmd_scratch,
            "compare": cmd_compare, "analyze": cmd_analyze, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        registry = load_registry(getattr(args, "registry", None))
        return COMMANDS[args.command](args, registry)
    except UsageError as e:
        print(f"taco {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NoValidTasksError) as e:
        print(f"taco {args.command}: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
