"""Command-line entry point: ``deepforget <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace

from . import attacks as A
from . import bounds as B
from . import data as D
from . import evalsuite as E
from . import model as M
from . import train as T
from . import unlearn as U
from .errors import FormatError
from .pipeline import RunConfig, report, resolve_output, run_pipeline, write_probe_csv
from .serial import csv_text, dumps, read_json, write_csv, write_json

GRID_R = (0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0)
GRID_C = (2, 3, 10, 100)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _out(path):
    p = resolve_output(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _train_cfg(args, base: T.TrainConfig) -> T.TrainConfig:
    kw = {}
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("wd", "weight_decay"), ("batch_size", "batch_size")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return replace(base, **kw)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics", help="write per-epoch metrics CSV here")


def cmd_gen_data(args) -> int:
    cfg = D.GenConfig(**read_json(args.config)) if args.config else D.GenConfig()
    kw = {k: v for k, v in (("seed", args.seed), ("cluster_spread", args.spread), ("samples_per_class", args.samples_per_class)) if v is not None}
    bundle = D.generate(replace(cfg, **kw))
    if args.scenario == "class":
        bundle = D.apply_scenario(bundle, D.Scenario.class_forget(_ints(args.classes)))
    elif args.scenario == "random":
        bundle = D.apply_scenario(bundle, D.Scenario.random_forget(args.fraction))
    bundle.save(_out(args.out))
    counts = {name: int(bundle.indices(name).size) for name in ("retain", "forget", "val", "test")}
    print(dumps({"path": str(_out(args.out)), "splits": counts}), end="")
    return 0


def _fit_cmd(args, split: str) -> int:
    bundle = D.load_bundle(args.data)
    base = T.TrainConfig(epochs=40, learning_rate=0.05)
    cfg = _train_cfg(args, base)
    arch = [bundle.input_dim, *_ints(args.hidden)]
    res = T.fit(M.init(arch, bundle.num_classes, cfg.seed), bundle, split, cfg)
    res.checkpoint.save(_out(args.out))
    if args.metrics:
        T.write_metrics_csv(res.history, _out(args.metrics))
    return 0


def cmd_unlearn(args) -> int:
    bundle = D.load_bundle(args.data)
    ckpt = M.load(args.ckpt)
    seed = args.seed if args.seed is not None else 0
    spec = U.default_spec(args.method, bundle.scenario.kind, seed)
    spec = replace(spec, train=_train_cfg(args, spec.train))
    if args.spec:
        spec = U.UnlearnSpec.from_dict({**spec.to_dict(), **read_json(args.spec)})
    res = U.unlearn(ckpt, bundle, spec)
    res.checkpoint.save(_out(args.out))
    if args.metrics and res.history:
        T.write_metrics_csv(res.history, _out(args.metrics))
    return 0


def cmd_eval(args) -> int:
    bundle = D.load_bundle(args.data)
    ckpt = M.load(args.ckpt)
    rep, hist = E.evaluate(ckpt, bundle)
    d = rep.to_dict()
    if args.ref:
        d["cka"] = [asdict(r) for r in E.cka_report(M.load(args.ref), ckpt, bundle)]
    if args.out:
        write_json(d, _out(args.out))
    else:
        print(dumps(d), end="")
    if args.hist:
        E.write_histogram_csv(hist, _out(args.hist))
    return 0


def cmd_attack(args) -> int:
    bundle = D.load_bundle(args.data)
    un = M.load(args.un)
    if args.kind == "fm":
        if not args.pre:
            raise SystemExit("--pre is required for the feature-map attack")
        res = A.feature_map_attack(M.load(args.pre), un, bundle).to_dict()
    elif args.kind == "hr":
        res = A.head_recovery_attack(un, bundle, normalize=args.normalize).to_dict()
    else:
        cfg = A.InversionConfig(probes=args.probes, iterations=args.iterations, seed=args.seed or 0)
        inv = A.inversion_attack(un, bundle, cfg)
        res = inv.to_dict()
        if args.csv:
            write_probe_csv(inv, _out(args.csv))
    if args.out:
        write_json(res, _out(args.out))
    else:
        print(dumps(res), end="")
    return 0


def cmd_bound(args) -> int:
    print(dumps(B.bound_result(args.r, args.C, oracle=not args.no_oracle).to_dict()), end="")
    return 0


def cmd_bound_grid(args) -> int:
    rows = []
    for C in _ints(args.C):
        for r in _floats(args.r):
            exact = B.exact_min_entropy(r, C)
            oracle = B.oracle_min(r, C)[0] if not args.no_oracle else float("nan")
            rows.append([r, C, exact, B.lower_bound(r, C), oracle, exact - B.lower_bound(r, C)])
    header = ["r", "C", "exact", "bound", "oracle", "gap"]
    if args.out:
        write_csv(header, rows, _out(args.out))
    else:
        sys.stdout.write(csv_text(header, rows))
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    code, manifest = run_pipeline(cfg, args.out)
    print(manifest)
    return code


def cmd_report(args) -> int:
    res = report(args.dir, args.out)
    for f in res.files:
        print(f)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepforget", description="Desk-scale deep feature forgetting lab.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON GenConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--scenario", choices=("none", "class", "random"), default="class")
    p.add_argument("--classes", default="0,1,2")
    p.add_argument("--fraction", type=float, default=0.10)
    p.set_defaults(fn=cmd_gen_data)

    for name, split in (("pretrain", "train"), ("retrain", "retain")):
        p = sub.add_parser(name, help=f"train from scratch on the {split} split")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--hidden", default="64,64,32")
        _add_train_flags(p)
        p.set_defaults(fn=lambda a, s=split: _fit_cmd(a, s))

    p = sub.add_parser("unlearn", help="apply an unlearning method to a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--method", required=True, choices=U.METHODS)
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON file with UnlearnSpec overrides")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_unlearn)

    p = sub.add_parser("eval", help="accuracy / MIA / norm report for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ref", help="reference checkpoint for CKA")
    p.add_argument("--out")
    p.add_argument("--hist")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("attack", help="recovery or inversion attack")
    p.add_argument("--kind", required=True, choices=("fm", "hr", "inv"))
    p.add_argument("--data", required=True)
    p.add_argument("--un", required=True)
    p.add_argument("--pre")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--csv", help="per-probe CSV (inv only)")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("bound", help="entropy bound for one (r, C) as JSON")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--no-oracle", action="store_true")
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("bound-grid", help="CSV of exact minimum, bound and oracle over a grid")
    p.add_argument("--r", default=",".join(str(r) for r in GRID_R))
    p.add_argument("--C", default=",".join(str(c) for c in GRID_C))
    p.add_argument("--no-oracle", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bound_grid)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("report", help="summary tables from a run directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (FormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
