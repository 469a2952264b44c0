"""Recovery attacks (feature-map alignment, head refit) and gradient-matching inversion."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from .data import DatasetBundle
from .evalsuite import mia_scores, report_splits
from .linalg import RankReport, least_squares
from .train import ce_loss


@dataclass
class RecoveryResult:
    kind: str
    W: np.ndarray = field(repr=False)
    accuracies: dict[str, float]
    ua: float
    mia_e: float
    rank: RankReport
    seconds: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["W"] = self.W.tolist()
        d["rank"] = {"rank": self.rank.rank, "cols": self.rank.cols, "deficient": self.rank.deficient}
        return d


def with_bias_column(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    return np.hstack([F, np.ones((F.shape[0], 1))])


def normalize_rows(F, eps: float = 1e-8) -> np.ndarray:
    """Unit-normalize rows; rows with norm below ``eps`` become zero rather than blowing up."""
    F = np.asarray(F, dtype=np.float64)
    n = np.linalg.norm(F, axis=1, keepdims=True)
    return np.where(n >= eps, F / np.where(n >= eps, n, 1.0), 0.0)


def _score(kind, W, rank, bundle, logits_fn, t0) -> RecoveryResult:
    accs = {}
    for col, split in report_splits(bundle).items():
        X, y = bundle.split(split)
        if y.size:
            accs[col] = 100.0 * float(np.mean(np.argmax(logits_fn(X), axis=1) == y))
    forget = accs.get("train_forget", accs.get("forget", 0.0))
    mia = mia_scores(None, bundle, logits_fn=logits_fn)
    return RecoveryResult(kind, W, accs, 100.0 - forget, mia.mia_e, rank, time.perf_counter() - t0)


def feature_map_attack(ckpt_pre: M.Checkpoint, ckpt_un: M.Checkpoint, bundle: DatasetBundle) -> RecoveryResult:
    """Map unlearned features onto pretrained ones by least squares on the val split,
    then classify with the pretrained head."""
    if ckpt_pre.input_dim != ckpt_un.input_dim:
        raise ValueError("models disagree on input dimension")
    t0 = time.perf_counter()
    Xv, _ = bundle.split("val")
    if Xv.shape[0] == 0:
        raise ValueError("validation split is empty")
    W, rank = least_squares(with_bias_column(M.features(ckpt_un, Xv)), M.features(ckpt_pre, Xv))

    def logits_fn(X):
        return M.apply_head(ckpt_pre, with_bias_column(M.features(ckpt_un, X)) @ W)

    return _score("FM", W, rank, bundle, logits_fn, t0)


def head_recovery_attack(ckpt_un: M.Checkpoint, bundle: DatasetBundle, normalize: bool = False) -> RecoveryResult:
    """Refit a linear head on unlearned val features against one-hot labels."""
    t0 = time.perf_counter()
    Xv, yv = bundle.split("val")
    if Xv.shape[0] == 0:
        raise ValueError("validation split is empty")

    def design(X):
        F = M.features(ckpt_un, X)
        return with_bias_column(normalize_rows(F) if normalize else F)

    targets = np.zeros((yv.size, ckpt_un.num_classes))
    targets[np.arange(yv.size), yv] = 1.0
    W, rank = least_squares(design(Xv), targets)
    return _score("HR", W, rank, bundle, lambda X: design(X) @ W, t0)


# --- gradient-matching inversion -------------------------------------------


@dataclass(frozen=True)
class InversionConfig:
    probes: int = 20
    iterations: int = 300
    step_size: float = 0.05
    fd_eps: float = 1e-5
    seed: int = 0


@dataclass
class ProbeResult:
    index: int
    label: int
    true_input: list[float]
    reconstruction: list[float]
    mse: float
    cosine: float
    control_mse: float
    objective: float
    iterations: int
    failed: bool = False


@dataclass
class InversionResult:
    probes: list[ProbeResult]

    @property
    def median_mse(self) -> float:
        ok = [p.mse for p in self.probes if not p.failed]
        return float(np.median(ok)) if ok else float("nan")

    @property
    def median_control_mse(self) -> float:
        ok = [p.control_mse for p in self.probes if not p.failed]
        return float(np.median(ok)) if ok else float("nan")

    def to_dict(self) -> dict:
        return {
            "median_mse": self.median_mse,
            "median_control_mse": self.median_control_mse,
            "probes": [asdict(p) for p in self.probes],
        }


def param_gradient(ckpt: M.Checkpoint, x, y: int) -> np.ndarray:
    """Flattened gradient of the single-sample cross-entropy w.r.t. every parameter."""
    trace = M.forward(ckpt, np.asarray(x, dtype=np.float64).reshape(1, -1))
    res = ce_loss(trace.logits, np.array([y]))
    return M.flatten(M.backward(ckpt, trace, res.dlogits).layers)


def gradient_distance(ckpt: M.Checkpoint, x, y: int, target: np.ndarray) -> float:
    d = param_gradient(ckpt, x, y) - target
    return float(d @ d)


def reconstruct(ckpt: M.Checkpoint, y: int, target: np.ndarray, x0, cfg: InversionConfig) -> tuple[np.ndarray, float, int]:
    """Adam on D(x') = ||grad(x') - target||^2 with central-difference input gradients.

    Stops immediately if the starting point already matches exactly.
    """
    x = np.array(x0, dtype=np.float64)
    d = x.size
    f = gradient_distance(ckpt, x, y, target)
    best_x, best_f = x.copy(), f
    m = np.zeros(d)
    v = np.zeros(d)
    b1, b2 = 0.9, 0.999
    it = 0
    for it in range(1, cfg.iterations + 1):
        if best_f == 0.0 or not np.isfinite(f):
            it -= 1
            break
        g = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = cfg.fd_eps
            g[j] = (gradient_distance(ckpt, x + e, y, target) - gradient_distance(ckpt, x - e, y, target)) / (2 * cfg.fd_eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - cfg.step_size * (m / (1 - b1**it)) / (np.sqrt(v / (1 - b2**it)) + 1e-12)
        f = gradient_distance(ckpt, x, y, target)
        if f < best_f:
            best_x, best_f = x.copy(), f
    return best_x, best_f, it


def inversion_attack(
    ckpt_un: M.Checkpoint,
    bundle: DatasetBundle,
    cfg: InversionConfig = InversionConfig(),
    probe_rows=None,
) -> InversionResult:
    """Reconstruct forget inputs from their true parameter gradient at the unlearned model.

    Each probe also runs a control reconstruction whose target is the gradient of
    a different, randomly chosen forget sample of the same class; its MSE against
    the probe input is what an attacker gets without sample-specific signal.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1A7]))
    forget = bundle.indices("forget")
    if forget.size < 2:
        raise ValueError("need at least two forget rows")
    rows = np.sort(rng.choice(forget, size=min(cfg.probes, forget.size), replace=False)) if probe_rows is None else np.asarray(probe_rows)
    train = bundle.indices("train")
    mu = bundle.inputs[train].mean(axis=0)
    sd = bundle.inputs[train].std(axis=0)

    out = []
    for row in rows:
        x, y = bundle.inputs[row], int(bundle.labels[row])
        same = forget[(bundle.labels[forget] == y) & (forget != row)]
        decoy = int(rng.choice(same if same.size else forget[forget != row]))
        x0 = mu + sd * rng.standard_normal(x.size)
        target = param_gradient(ckpt_un, x, y)
        decoy_target = param_gradient(ckpt_un, bundle.inputs[decoy], y)
        rec, obj, iters = reconstruct(ckpt_un, y, target, x0, cfg)
        ctrl, _, _ = reconstruct(ckpt_un, y, decoy_target, x0, cfg)
        failed = not (np.all(np.isfinite(rec)) and np.isfinite(obj))
        mse = float(np.mean((rec - x) ** 2)) if not failed else float("nan")
        denom = np.linalg.norm(rec) * np.linalg.norm(x)
        cos = float(rec @ x / denom) if denom > 0 and not failed else float("nan")
        out.append(
            ProbeResult(
                int(row), y, x.tolist(), rec.tolist(), mse, cos, float(np.mean((ctrl - x) ** 2)), obj, iters, failed
            )
        )
    return InversionResult(out)
