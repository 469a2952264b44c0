"""Accuracy, membership-inference, CKA and norm/entropy statistics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from .bounds import lower_bound
from .data import DatasetBundle
from .linalg import softmax_entropy
from .train import per_sample_ce

HIST_BINS = 30
MIA_HOLDOUT_FRAC = 0.2
# losses below this are ties: the attacker cannot resolve confidences above ~0.999
MIA_LOSS_FLOOR = 1e-3


def accuracy(ckpt: M.Checkpoint, bundle: DatasetBundle, split: str) -> float:
    X, y = bundle.split(split)
    if y.size == 0:
        raise ValueError(f"split {split!r} is empty")
    return 100.0 * float(np.mean(M.predict(ckpt, X) == y))


def report_splits(bundle: DatasetBundle) -> dict[str, str]:
    """Column label -> split name; class mode divides test by forget classes."""
    if bundle.scenario.kind == "class":
        return {
            "train_forget": "forget",
            "train_retain": "retain",
            "test_forget": "test_forget",
            "test_retain": "test_retain",
        }
    return {"forget": "forget", "retain": "retain", "test": "test"}


def split_accuracies(ckpt: M.Checkpoint, bundle: DatasetBundle, predict=None) -> dict[str, float]:
    predict = predict or (lambda X: M.predict(ckpt, X))
    out = {}
    for col, split in report_splits(bundle).items():
        X, y = bundle.split(split)
        if y.size:
            out[col] = 100.0 * float(np.mean(predict(X) == y))
    return out


# --- membership inference -------------------------------------------------


@dataclass
class MIAResult:
    mia_e: float
    mia_p: float
    tau: float
    degenerate: bool = False


def fit_loss_threshold(member_loss, nonmember_loss) -> tuple[float, bool]:
    """Threshold maximizing balanced accuracy of "member iff loss <= tau".

    Candidates are midpoints between consecutive distinct pooled losses;
    among equally good thresholds the largest is kept.
    """
    member_loss = np.asarray(member_loss, dtype=np.float64)
    nonmember_loss = np.asarray(nonmember_loss, dtype=np.float64)
    pooled = np.unique(np.concatenate([member_loss, nonmember_loss]))
    if pooled.size < 2:
        return float("nan"), True
    cands = 0.5 * (pooled[:-1] + pooled[1:])
    tpr = np.searchsorted(np.sort(member_loss), cands, side="right") / member_loss.size
    tnr = 1.0 - np.searchsorted(np.sort(nonmember_loss), cands, side="right") / nonmember_loss.size
    bal = 0.5 * (tpr + tnr)
    best = np.flatnonzero(bal >= bal.max() - 1e-15)[-1]
    return float(cands[best]), False


def mia_member_rows(bundle: DatasetBundle, seed: int | None = None) -> np.ndarray:
    """Seeded 20% sample of the retain split used as the attacker's member set."""
    r = bundle.indices("retain")
    rng = np.random.default_rng(np.random.SeedSequence([bundle.seed if seed is None else seed, 0x3A1A]))
    k = max(1, int(round(MIA_HOLDOUT_FRAC * r.size)))
    return np.sort(rng.choice(r, size=k, replace=False))


def sample_losses(ckpt: M.Checkpoint, bundle: DatasetBundle, rows) -> np.ndarray:
    return per_sample_ce(M.logits(ckpt, bundle.inputs[rows]), bundle.labels[rows])


def mia_scores(ckpt: M.Checkpoint, bundle: DatasetBundle, logits_fn=None) -> MIAResult:
    """Loss-threshold attacker fit on retain members vs test non-members.

    Losses are floored at MIA_LOSS_FLOOR so that a near-perfectly fit model
    does not get a threshold in the underflow regime, where the ordering of
    ~1e-6 losses is driven by class difficulty rather than membership.

    mia_e is the share of forget rows the attacker calls non-members; mia_p is
    its balanced accuracy separating forget (members) from test.
    """
    logits_fn = logits_fn or (lambda X: M.logits(ckpt, X))
    members = mia_member_rows(bundle)
    forget, test = bundle.indices("forget"), bundle.indices("test")
    if members.size == 0 or forget.size == 0 or test.size == 0:
        raise ValueError("retain, forget and test splits must be non-empty")

    def losses(rows):
        return np.maximum(per_sample_ce(logits_fn(bundle.inputs[rows]), bundle.labels[rows]), MIA_LOSS_FLOOR)

    l_mem, l_test, l_f = losses(members), losses(test), losses(forget)
    tau, degenerate = fit_loss_threshold(l_mem, l_test)
    if degenerate:
        return MIAResult(0.5, 0.5, tau, True)
    mia_e = float(np.mean(l_f > tau))
    mia_p = 0.5 * (float(np.mean(l_f <= tau)) + float(np.mean(l_test > tau)))
    return MIAResult(mia_e, mia_p, tau)


# --- CKA ------------------------------------------------------------------


def linear_cka(F1, F2) -> float:
    """Linear CKA between two representations of the same n inputs."""
    A = np.asarray(F1, dtype=np.float64)
    B = np.asarray(F2, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ValueError("inputs must be 2-D with the same number of rows")
    if A.shape[0] < 3:
        raise ValueError("need at least 3 rows")
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    aa = np.linalg.norm(A.T @ A)
    bb = np.linalg.norm(B.T @ B)
    if aa == 0 or bb == 0:
        raise ValueError("zero-variance representation: CKA undefined")
    return float(np.linalg.norm(A.T @ B) ** 2 / (aa * bb))


@dataclass
class CKAResult:
    split: str
    cka_feature: float
    cka_logit: float
    model_a: str = ""
    model_b: str = ""


def _safe_cka(F1, F2) -> float:
    try:
        return linear_cka(F1, F2)
    except ValueError:
        return float("nan")


def cka_report(ckpt_a: M.Checkpoint, ckpt_b: M.Checkpoint, bundle: DatasetBundle, ids=("a", "b")) -> list[CKAResult]:
    """Feature and logit CKA per split; NaN where one side has collapsed to a point."""
    out = []
    for col, split in report_splits(bundle).items():
        X, _ = bundle.split(split)
        if X.shape[0] < 3:
            continue
        ta, tb = M.forward(ckpt_a, X), M.forward(ckpt_b, X)
        out.append(CKAResult(col, _safe_cka(ta.features, tb.features), _safe_cka(ta.logits, tb.logits), *ids))
    return out


# --- norms and entropies --------------------------------------------------


@dataclass
class SplitStats:
    split: str
    feature_norm_mean: float
    logit_norm_mean: float
    entropy_mean: float
    feature_norms: np.ndarray = field(repr=False)
    logit_norms: np.ndarray = field(repr=False)
    entropies: np.ndarray = field(repr=False)


def norm_entropy_stats(ckpt: M.Checkpoint, bundle: DatasetBundle, splits=None) -> dict[str, SplitStats]:
    splits = splits or {"forget": "forget", "retain": "retain", "test": "test"}
    out = {}
    for col, split in splits.items():
        X, _ = bundle.split(split)
        if X.shape[0] == 0:
            raise ValueError(f"split {split!r} is empty")
        trace = M.forward(ckpt, X)
        fn = np.linalg.norm(trace.features, axis=1)
        ln = np.linalg.norm(trace.logits, axis=1)
        ent = softmax_entropy(trace.logits)
        out[col] = SplitStats(col, float(fn.mean()), float(ln.mean()), float(ent.mean()), fn, ln, ent)
    return out


def histogram_rows(stats: dict[str, SplitStats], bins: int = HIST_BINS) -> list[dict]:
    """Fixed-bin histograms over the pooled range, one block per split and quantity."""
    rows = []
    for quantity, attr in (("feature_norm", "feature_norms"), ("entropy", "entropies")):
        pooled = np.concatenate([getattr(s, attr) for s in stats.values()])
        lo, hi = float(pooled.min()), float(pooled.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        for name, s in stats.items():
            counts, _ = np.histogram(getattr(s, attr), bins=edges)
            for b in range(bins):
                rows.append(
                    {"bin_lo": edges[b], "bin_hi": edges[b + 1], "count": int(counts[b]), "split": name, "quantity": quantity}
                )
    return rows


def write_histogram_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count", "split", "quantity"])
        for r in rows:
            w.writerow([f"{r['bin_lo']:.17g}", f"{r['bin_hi']:.17g}", r["count"], r["split"], r["quantity"]])


def entropy_bound_slack(ckpt: M.Checkpoint, X) -> np.ndarray:
    """entropy(softmax(m(x))) minus the norm-based lower bound, per row (should be >= 0)."""
    h = M.logits(ckpt, X)
    return softmax_entropy(h) - lower_bound(np.linalg.norm(h, axis=1), h.shape[1])


# --- full report ----------------------------------------------------------


@dataclass
class EvalReport:
    scenario: str
    accuracies: dict[str, float]
    ua: float
    mia_e: float
    mia_p: float | None
    mia_tau: float
    mia_degenerate: bool
    means: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(ckpt: M.Checkpoint, bundle: DatasetBundle) -> tuple[EvalReport, list[dict]]:
    accs = split_accuracies(ckpt, bundle)
    forget_acc = accs.get("train_forget", accs.get("forget"))
    mia = mia_scores(ckpt, bundle)
    stats = norm_entropy_stats(ckpt, bundle)
    means = {
        k: {"feature_norm": s.feature_norm_mean, "logit_norm": s.logit_norm_mean, "entropy": s.entropy_mean}
        for k, s in stats.items()
    }
    report = EvalReport(
        scenario=bundle.scenario.kind,
        accuracies=accs,
        ua=100.0 - forget_acc,
        mia_e=mia.mia_e,
        mia_p=mia.mia_p if bundle.scenario.kind == "random" else None,
        mia_tau=mia.tau,
        mia_degenerate=mia.degenerate,
        means=means,
    )
    return report, histogram_rows(stats)
