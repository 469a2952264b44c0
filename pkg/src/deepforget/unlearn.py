"""Unlearning methods: one-point contraction, gradient baselines, head-only rewrites."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as M
from .data import DatasetBundle
from .linalg import least_squares
from .train import FitResult, LossTerm, TrainConfig, ce_loss, fit

METHODS = (
    "OPC",
    "GA",
    "RL",
    "FT",
    "NGD",
    "NegGradPlus",
    "EUk",
    "CFk",
    "SalUn",
    "L1Sparse",
    "TrainFreeOPC",
    "TrainFreeRL",
)
TRAIN_FREE = {"TrainFreeOPC": "zero_forget", "TrainFreeRL": "random_label_forget"}


@dataclass(frozen=True)
class UnlearnSpec:
    method: str
    train: TrainConfig = field(default_factory=TrainConfig)
    coeff_ce: float = 1.0
    coeff_un: float = 0.7
    contract: str = "logits"
    alpha: float = 0.999
    sigma: float = 1e-7
    k: int = 3
    pt: float = 0.5
    l1_alpha: float = 1e-4
    rl_seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown unlearning method {self.method!r}")
        if min(self.coeff_ce, self.coeff_un, self.alpha, self.sigma, self.l1_alpha) < 0:
            raise ValueError("coefficients must be non-negative")
        if not 0 < self.pt <= 1:
            raise ValueError("pt must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.contract not in ("logits", "features"):
            raise ValueError("contract must be 'logits' or 'features'")

    @property
    def label(self) -> str:
        return self.name or self.method

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UnlearnSpec":
        d = dict(d)
        if "train" in d and isinstance(d["train"], dict):
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


# Desk-scale settings. Coefficients follow the published per-method table;
# epochs, learning rates and weight decay are retuned for the synthetic mixture.
# Unlearning runs use a stronger weight decay than pretraining: with nothing
# supporting the forget-class head rows, decay is what lets them fade.
UNLEARN_WD = 5e-3


def _cfg(epochs, lr):
    return TrainConfig(epochs=epochs, learning_rate=lr, weight_decay=UNLEARN_WD)


_DEFAULTS = {
    "class": {
        "OPC": dict(train=_cfg(30, 0.02), coeff_ce=1.0, coeff_un=0.7),
        "GA": dict(train=_cfg(5, 0.002)),
        "RL": dict(train=_cfg(10, 0.01)),
        "FT": dict(train=_cfg(20, 0.05)),
        "NGD": dict(train=_cfg(20, 0.05), sigma=1e-7),
        "NegGradPlus": dict(train=_cfg(20, 0.05), alpha=0.999),
        "EUk": dict(train=_cfg(20, 0.05), k=3),
        "CFk": dict(train=_cfg(20, 0.05), k=3),
        "SalUn": dict(train=_cfg(10, 0.01), pt=0.5),
        "L1Sparse": dict(train=_cfg(20, 0.05), l1_alpha=1e-4),
        "TrainFreeOPC": {},
        "TrainFreeRL": {},
    },
    "random": {
        "OPC": dict(train=_cfg(10, 0.01), coeff_ce=0.95, coeff_un=0.05),
        "GA": dict(train=_cfg(5, 0.0005)),
        "RL": dict(train=_cfg(10, 0.005)),
        "FT": dict(train=_cfg(20, 0.05)),
        "NGD": dict(train=_cfg(20, 0.05), sigma=1e-7),
        "NegGradPlus": dict(train=_cfg(20, 0.05), alpha=0.999),
        "EUk": dict(train=_cfg(20, 0.05), k=3),
        "CFk": dict(train=_cfg(20, 0.05), k=3),
        "SalUn": dict(train=_cfg(10, 0.005), pt=0.5),
        "L1Sparse": dict(train=_cfg(20, 0.05), l1_alpha=1e-4),
        "TrainFreeOPC": {},
        "TrainFreeRL": {},
    },
}


def default_spec(method: str, scenario_kind: str = "class", seed: int = 0, **overrides) -> UnlearnSpec:
    kw = dict(_DEFAULTS["random" if scenario_kind == "random" else "class"][method])
    if "train" in kw:
        kw["train"] = replace(kw["train"], seed=seed)
    kw["rl_seed"] = seed
    kw.update(overrides)
    return UnlearnSpec(method=method, **kw)


def random_other_labels(labels, num_classes: int, seed: int) -> np.ndarray:
    """Uniform draw from the C-1 classes different from each true label."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2E1A]))
    r = rng.integers(0, num_classes - 1, size=labels.size)
    return r + (r >= labels)


def random_labels(n: int, num_classes: int, seed: int) -> np.ndarray:
    """Uniform draw over all classes, so a row may keep its true label."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2E1B]))
    return rng.integers(0, num_classes, size=n)


def _require(bundle: DatasetBundle, *splits: str) -> dict[str, np.ndarray]:
    out = {}
    for s in splits:
        idx = bundle.indices(s)
        if idx.size == 0:
            raise ValueError(f"split {s!r} is empty")
        out[s] = idx
    return out


def _relabel_terms(bundle: DatasetBundle, spec: UnlearnSpec) -> list[LossTerm]:
    idx = _require(bundle, "retain", "forget")
    f = idx["forget"]
    fake = random_other_labels(bundle.labels[f], bundle.num_classes, spec.rl_seed)
    rows = np.concatenate([idx["retain"], f])
    labels = np.concatenate([bundle.labels[idx["retain"]], fake])
    return [LossTerm("retain+relabeled", rows, "ce", 1.0, labels)]


def saliency_mask(ckpt: M.Checkpoint, bundle: DatasetBundle, pt: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """1 on the top ``pt`` fraction of parameters by |grad of forget-set CE|, 0 elsewhere."""
    X, y = bundle.split("forget")
    trace = M.forward(ckpt, X)
    grads = M.backward(ckpt, trace, ce_loss(trace.logits, y).dlogits).layers
    flat = np.abs(M.flatten(grads))
    keep = int(np.ceil(pt * flat.size))
    chosen = np.zeros(flat.size)
    chosen[np.argsort(-flat, kind="stable")[:keep]] = 1.0
    masks, pos = [], 0
    for gw, gb in grads:
        mw = chosen[pos : pos + gw.size].reshape(gw.shape)
        pos += gw.size
        mb = chosen[pos : pos + gb.size]
        pos += gb.size
        masks.append((mw, mb))
    return masks


def _noise_hook(sigma: float):
    def hook(grads, ckpt, rng):
        return [(gw + rng.normal(0.0, sigma, gw.shape), gb + rng.normal(0.0, sigma, gb.shape)) for gw, gb in grads]

    return hook


def _l1_hook(l1_alpha: float):
    def hook(grads, ckpt, rng):
        return [
            (gw + l1_alpha * np.sign(l.weight), gb + l1_alpha * np.sign(l.bias))
            for (gw, gb), l in zip(grads, ckpt.layers)
        ]

    return hook


def unlearn_opc(ckpt: M.Checkpoint, bundle: DatasetBundle, spec: UnlearnSpec) -> FitResult:
    """Cross-entropy on retain plus the mean l2 norm of forget logits (or features)."""
    idx = _require(bundle, "retain", "forget")
    kind = "logit_norm" if spec.contract == "logits" else "feature_norm"
    terms = [
        LossTerm("retain", idx["retain"], "ce", spec.coeff_ce),
        LossTerm("forget", idx["forget"], kind, spec.coeff_un),
    ]
    return fit(ckpt, bundle, terms, spec.train)


def unlearn_baseline(ckpt: M.Checkpoint, bundle: DatasetBundle, spec: UnlearnSpec) -> FitResult:
    m, cfg = spec.method, spec.train
    n_layers = len(ckpt.layers)
    if m == "FT":
        return fit(ckpt, bundle, [LossTerm("retain", _require(bundle, "retain")["retain"])], cfg)
    if m == "GA":
        return fit(ckpt, bundle, [LossTerm("forget", _require(bundle, "forget")["forget"], "ascent")], cfg)
    if m == "RL":
        return fit(ckpt, bundle, _relabel_terms(bundle, spec), cfg)
    if m == "NGD":
        terms = [LossTerm("retain", _require(bundle, "retain")["retain"])]
        return fit(ckpt, bundle, terms, cfg, hooks=[_noise_hook(spec.sigma)])
    if m == "NegGradPlus":
        idx = _require(bundle, "retain", "forget")
        terms = [
            LossTerm("retain", idx["retain"], "ce", spec.alpha),
            LossTerm("forget", idx["forget"], "ascent", 1.0 - spec.alpha),
        ]
        return fit(ckpt, bundle, terms, cfg)
    if m in ("EUk", "CFk"):
        if spec.k > n_layers:
            raise ValueError(f"k={spec.k} exceeds the {n_layers} trainable layers")
        last = range(n_layers - spec.k, n_layers)
        start = ckpt
        if m == "EUk":
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE0]))
            layers = list(ckpt.copy().layers)
            for i in last:
                fan_in, fan_out = layers[i].shape
                layers[i] = M.init_layer(fan_in, fan_out, layers[i].activation, rng)
            start = replace(ckpt, layers=tuple(layers))
        terms = [LossTerm("retain", _require(bundle, "retain")["retain"])]
        return fit(start, bundle, terms, cfg, trainable=last)
    if m == "SalUn":
        masks = saliency_mask(ckpt, bundle, spec.pt)
        return fit(ckpt, bundle, _relabel_terms(bundle, spec), cfg, masks=masks)
    if m == "L1Sparse":
        terms = [LossTerm("retain", _require(bundle, "retain")["retain"])]
        return fit(ckpt, bundle, terms, cfg, hooks=[_l1_hook(spec.l1_alpha)])
    raise ValueError(f"{m!r} is not a gradient baseline")


def train_free_head(ckpt: M.Checkpoint, bundle: DatasetBundle, target_policy: str = "zero_forget", seed: int = 0) -> M.Checkpoint:
    """Refit only the head by least squares on frozen features of retain and forget rows.

    Targets are one-hot true labels on retain; on forget they are all-zero
    (``zero_forget``) or a seeded random one-hot over all classes
    (``random_label_forget``).
    """
    idx = _require(bundle, "retain", "forget")
    r, f = idx["retain"], idx["forget"]
    C = ckpt.num_classes
    rows = np.concatenate([r, f])
    phi = M.features(ckpt, bundle.inputs[rows])
    design = np.hstack([phi, np.ones((rows.size, 1))])
    targets = np.zeros((rows.size, C))
    targets[np.arange(r.size), bundle.labels[r]] = 1.0
    if target_policy == "random_label_forget":
        targets[r.size + np.arange(f.size), random_labels(f.size, C, seed)] = 1.0
    elif target_policy != "zero_forget":
        raise ValueError(f"unknown target policy {target_policy!r}")
    W, _ = least_squares(design, targets)
    return ckpt.with_head(W[:-1], W[-1])


@dataclass
class UnlearnResult:
    checkpoint: M.Checkpoint
    history: list[dict]


def unlearn(ckpt: M.Checkpoint, bundle: DatasetBundle, spec: UnlearnSpec) -> UnlearnResult:
    if spec.method in TRAIN_FREE:
        out = train_free_head(ckpt, bundle, TRAIN_FREE[spec.method], spec.rl_seed)
        return UnlearnResult(out, [])
    res = unlearn_opc(ckpt, bundle, spec) if spec.method == "OPC" else unlearn_baseline(ckpt, bundle, spec)
    return UnlearnResult(res.checkpoint, res.history)
