"""Experiment matrix: pretrain -> retrain -> unlearn -> eval -> attack, plus report tables."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as A
from . import data as D
from . import evalsuite as E
from . import model as M
from . import train as T
from . import unlearn as U
from .serial import read_json, sha256_file, write_csv, write_dat, write_json

log = logging.getLogger("deepforget")

OUTPUT_ROOT_ENV = "DEEPFORGET_OUTPUT_ROOT"
MANIFEST = "manifest.json"


def resolve_output(path) -> Path:
    """Relative paths land under $DEEPFORGET_OUTPUT_ROOT when it is set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


@dataclass(frozen=True)
class AttackToggles:
    fm: bool = True
    hr: bool = True
    inv: bool = False
    normalize: bool = False
    probes: int = 20
    inv_iterations: int = 300


@dataclass(frozen=True)
class RunConfig:
    data: D.GenConfig = field(default_factory=D.GenConfig)
    scenarios: tuple = (D.Scenario.class_forget(), D.Scenario.random_forget())
    hidden: tuple = (64, 64, 32)
    pretrain: T.TrainConfig = field(default_factory=lambda: T.TrainConfig(epochs=40, learning_rate=0.05))
    retrain: bool = True
    # each entry is {"method": ..., "name": optional label, plus UnlearnSpec overrides}
    methods: tuple = tuple({"method": m} for m in U.METHODS)
    evaluate: bool = True
    cka: bool = True
    attacks: AttackToggles = field(default_factory=AttackToggles)
    seeds: tuple = (0,)
    output_dir: str = "runs/default"

    def __post_init__(self):
        labels = [m.get("name") or m["method"] for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError("method names in the matrix must be unique")
        bad = {"pretrained", "retrained"} & set(labels)
        if bad:
            raise ValueError(f"reserved method name(s): {sorted(bad)}")
        for m in self.methods:
            if m["method"] not in U.METHODS:
                raise ValueError(f"unknown unlearning method {m['method']!r}")
        if not self.scenarios or any(s.kind not in ("class", "random") for s in self.scenarios):
            raise ValueError("scenarios must be a non-empty list of class/random scenarios")
        if len({s.kind for s in self.scenarios}) != len(self.scenarios):
            raise ValueError("at most one scenario of each kind")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.attacks.probes < 1:
            raise ValueError("probes must be >= 1")

    @property
    def arch(self) -> list[int]:
        return [self.data.input_dim, *self.hidden]

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "scenarios": [s.to_dict() for s in self.scenarios],
            "hidden": list(self.hidden),
            "pretrain": asdict(self.pretrain),
            "retrain": self.retrain,
            "methods": [dict(m) for m in self.methods],
            "evaluate": self.evaluate,
            "cka": self.cka,
            "attacks": asdict(self.attacks),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__} | {"scenario", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "data" in d:
            kw["data"] = D.GenConfig(**d["data"])
        if "scenario" in d:
            kw["scenarios"] = (D.Scenario.from_dict(d["scenario"]),)
        if "scenarios" in d:
            kw["scenarios"] = tuple(D.Scenario.from_dict(s) for s in d["scenarios"])
        if "hidden" in d:
            kw["hidden"] = tuple(int(h) for h in d["hidden"])
        if "pretrain" in d:
            kw["pretrain"] = replace(cls().pretrain, **d["pretrain"])
        if "methods" in d:
            kw["methods"] = tuple({"method": m} if isinstance(m, str) else dict(m) for m in d["methods"])
        if "attacks" in d:
            kw["attacks"] = AttackToggles(**d["attacks"])
        if "seed" in d:
            kw["seeds"] = (int(d["seed"]),)
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        for k in ("retrain", "evaluate", "cka", "output_dir"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))


def method_spec(entry: dict, scenario_kind: str, seed: int) -> U.UnlearnSpec:
    """Scenario defaults for ``entry['method']`` with the entry's overrides on top."""
    entry = dict(entry)
    method = entry.pop("method")
    base = U.default_spec(method, scenario_kind, seed)
    if "train" in entry:
        entry["train"] = replace(base.train, **{**entry["train"], "seed": entry["train"].get("seed", seed)})
    return replace(base, **entry)


class _Artifacts:
    """Tracks every file the run writes so the manifest can hash them all."""

    def __init__(self, root: Path):
        self.root = root
        self.paths: list[Path] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def rel(self, p: Path) -> str:
        return p.relative_to(self.root).as_posix()

    def listing(self) -> list[dict]:
        out = []
        for p in sorted(set(self.paths)):
            if p.exists():
                out.append({"path": self.rel(p), "sha256": sha256_file(p), "bytes": p.stat().st_size})
        return out


def _eval_artifacts(art, ckpt, bundle, ref, cfg: RunConfig, stem: str, cell: dict) -> None:
    report, hist = E.evaluate(ckpt, bundle)
    cell["eval"] = art.rel(write_json(report.to_dict(), art.path(stem + ".eval.json")))
    hp = art.path(stem + ".hist.csv")
    E.write_histogram_csv(hist, hp)
    cell["hist"] = art.rel(hp)
    if cfg.cka and ref is not None:
        rows = [asdict(r) for r in E.cka_report(ref, ckpt, bundle, ("pretrained", cell["method"]))]
        cell["cka"] = art.rel(write_json(rows, art.path(stem + ".cka.json")))


def _attack_artifacts(art, pre, ckpt, bundle, cfg: RunConfig, seed: int, stem: str, cell: dict) -> None:
    t = cfg.attacks
    for kind, enabled in (("fm", t.fm), ("hr", t.hr)):
        if not enabled:
            continue
        t0 = time.perf_counter()
        if kind == "fm":
            res = A.feature_map_attack(pre, ckpt, bundle)
        else:
            res = A.head_recovery_attack(ckpt, bundle, normalize=t.normalize)
        d = res.to_dict()
        d.pop("seconds")  # wall-clock would break byte-identical reruns
        cell[kind] = art.rel(write_json(d, art.path(f"{stem}.{kind}.json")))
        log.info("%s %s attack: %.2fs", cell["method"], kind.upper(), time.perf_counter() - t0)
    if t.inv:
        icfg = A.InversionConfig(probes=t.probes, iterations=t.inv_iterations, seed=seed)
        res = A.inversion_attack(ckpt, bundle, icfg)
        cell["inv"] = art.rel(write_json(res.to_dict(), art.path(f"{stem}.inv.json")))
        write_probe_csv(res, art.path(f"{stem}.inv.csv"))


def write_probe_csv(res: A.InversionResult, path) -> None:
    rows = [(p.index, p.label, p.mse, p.control_mse, p.cosine, p.objective, p.iterations, int(p.failed)) for p in res.probes]
    write_csv(["row", "label", "mse", "control_mse", "cosine", "objective", "iterations", "failed"], rows, path)


def run_pipeline(cfg: RunConfig, out_dir=None) -> tuple[int, Path]:
    """Run the whole matrix; returns (exit status, manifest path).

    A failing stage stops the run but keeps everything written so far; the
    manifest then says ``incomplete`` and records the error.
    """
    root = resolve_output(out_dir if out_dir is not None else cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    art = _Artifacts(root)
    cells: list[dict] = []
    status, error = "complete", None
    art.path("config.json")
    write_json(cfg.to_dict(), root / "config.json")
    try:
        for seed in cfg.seeds:
            base = D.generate(replace(cfg.data, seed=seed))
            pre = None
            for scen in cfg.scenarios:
                bundle = D.apply_scenario(base, scen)
                bundle.save(art.path(f"data/{scen.kind}/seed{seed}.ufdb"))
                ck_dir, rep_dir = f"checkpoints/{scen.kind}/seed{seed}", f"reports/{scen.kind}/seed{seed}"
                if pre is None:
                    t0 = time.perf_counter()
                    res = T.fit(M.init(cfg.arch, cfg.data.num_classes, seed), bundle, "train", replace(cfg.pretrain, seed=seed))
                    pre = res.checkpoint
                    log.info("seed %d pretrain: %.1fs", seed, time.perf_counter() - t0)
                    pre_hist = res.history
                jobs = [("pretrained", lambda b=bundle: (pre, pre_hist))]
                if cfg.retrain:
                    def _retrain(b=bundle):
                        r = T.fit(M.init(cfg.arch, cfg.data.num_classes, seed), b, "retain", replace(cfg.pretrain, seed=seed))
                        return r.checkpoint, r.history
                    jobs.append(("retrained", _retrain))
                for entry in cfg.methods:
                    spec = method_spec(entry, scen.kind, seed)
                    jobs.append((spec.label, lambda b=bundle, s=spec: _do_unlearn(pre, b, s)))
                for label, job in jobs:
                    t0 = time.perf_counter()
                    ckpt, hist = job()
                    log.info("%s seed %d %s: %.1fs", scen.kind, seed, label, time.perf_counter() - t0)
                    cell = {"scenario": scen.kind, "seed": seed, "method": label}
                    cp = art.path(f"{ck_dir}/{label}.ufck")
                    ckpt.save(cp)
                    cell["checkpoint"] = art.rel(cp)
                    if hist:
                        mp = art.path(f"{rep_dir}/{label}.metrics.csv")
                        T.write_metrics_csv(hist, mp)
                        cell["metrics"] = art.rel(mp)
                    stem = f"{rep_dir}/{label}"
                    if cfg.evaluate:
                        _eval_artifacts(art, ckpt, bundle, pre if label != "pretrained" else None, cfg, stem, cell)
                    if label != "pretrained":
                        _attack_artifacts(art, pre, ckpt, bundle, cfg, seed, stem, cell)
                    cells.append(cell)
    except Exception as exc:  # any stage failure marks the run incomplete
        log.exception("run failed")
        status, error = "incomplete", f"{type(exc).__name__}: {exc}"
    manifest = {
        "format": "deepforget-manifest",
        "version": 1,
        "status": status,
        "error": error,
        "config": cfg.to_dict(),
        "cells": cells,
        "artifacts": art.listing(),
    }
    mp = write_json(manifest, root / MANIFEST)
    return (0 if status == "complete" else 1), mp


def _do_unlearn(pre, bundle, spec):
    res = U.unlearn(pre, bundle, spec)
    return res.checkpoint, res.history


# --- report ---------------------------------------------------------------


@dataclass
class ReportResult:
    files: list[Path]
    warnings: list[str]


_ACC_COLUMNS = {
    "class": ["train_forget", "train_retain", "test_forget", "test_retain"],
    "random": ["forget", "retain", "test"],
}


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else float("nan")


def report(run_dir, out_dir=None) -> ReportResult:
    """Seed-averaged summary tables from a run directory.

    Writes, per scenario, an accuracy/MIA table, recovered-UA and CKA tables
    (CSV plus whitespace .dat copies). Missing artifacts are listed as
    warnings and skipped.
    """
    run_dir = resolve_output(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "summary"
    warnings: list[str] = []
    files: list[Path] = []
    mpath = run_dir / MANIFEST
    if not mpath.exists():
        warnings.append(f"no {MANIFEST} in {run_dir}")
        return ReportResult(files, warnings)
    manifest = read_json(mpath)
    if manifest.get("status") != "complete":
        warnings.append(f"run is {manifest.get('status')}: {manifest.get('error')}")

    def load(cell, key):
        rel = cell.get(key)
        if rel is None:
            return None
        p = run_dir / rel
        if not p.exists():
            warnings.append(f"missing artifact {rel}")
            return None
        return read_json(p)

    by_scen: dict[str, dict[str, list[dict]]] = {}
    for cell in manifest.get("cells", []):
        by_scen.setdefault(cell["scenario"], {}).setdefault(cell["method"], []).append(cell)

    for kind, methods in by_scen.items():
        acc_cols = _ACC_COLUMNS[kind]
        extra = ["UA", "mia_e"] + (["mia_p"] if kind == "random" else [])
        table, recovered, cka_rows = [], [], []
        for name, cells in methods.items():
            evals = [e for e in (load(c, "eval") for c in cells) if e is not None]
            if evals:
                row = [name, len(evals)]
                row += [_mean([e["accuracies"].get(c) for e in evals]) for c in acc_cols]
                row += [_mean([e["ua"] for e in evals]), _mean([e["mia_e"] for e in evals])]
                if kind == "random":
                    row.append(_mean([e["mia_p"] for e in evals]))
                table.append(row)
            fms = [x for x in (load(c, "fm") for c in cells) if x is not None]
            hrs = [x for x in (load(c, "hr") for c in cells) if x is not None]
            if fms or hrs:
                recovered.append(
                    [
                        name,
                        _mean([e["ua"] for e in evals]) if evals else float("nan"),
                        _mean([x["ua"] for x in fms]),
                        _mean([x["ua"] for x in hrs]),
                    ]
                )
            ckas = [x for x in (load(c, "cka") for c in cells) if x is not None]
            if ckas:
                for split in [r["split"] for r in ckas[0]]:
                    sel = [r for rows in ckas for r in rows if r["split"] == split]
                    cka_rows.append([name, split, _mean([r["cka_feature"] for r in sel]), _mean([r["cka_logit"] for r in sel])])
        outputs = (
            (f"table_{kind}", ["method", "seeds", *acc_cols, *extra], table),
            (f"recovered_ua_{kind}", ["method", "unlearned_UA", "FM_UA", "HR_UA"], recovered),
            (f"cka_{kind}", ["method", "split", "cka_feature", "cka_logit"], cka_rows),
        )
        for stem, header, rows in outputs:
            if not rows:
                continue
            files.append(write_csv(header, rows, out / f"{stem}.csv"))
            files.append(write_dat(header, rows, out / f"{stem}.dat"))
    if warnings:
        out.mkdir(parents=True, exist_ok=True)
        wp = out / "warnings.txt"
        wp.write_text("\n".join(warnings) + "\n", encoding="utf-8")
        files.append(wp)
    return ReportResult(files, warnings)
