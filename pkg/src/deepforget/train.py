"""Mini-batch SGD with momentum, plus the batch losses it optimizes."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import model as M
from .data import DatasetBundle
from .linalg import log_softmax, softmax

NORM_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 256
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LossBatchResult:
    loss: float
    dlogits: np.ndarray


def ce_loss(logits, labels) -> LossBatchResult:
    """Mean cross-entropy (nats); dlogits = (softmax - onehot) / n."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, C = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= C)):
        raise ValueError("labels must be a length-n vector with values in [0, C)")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(np.mean(logp[rows, labels])) if n else 0.0
    d = softmax(logits)
    d[rows, labels] -= 1.0
    return LossBatchResult(loss, d / max(n, 1))


def per_sample_ce(logits, labels) -> np.ndarray:
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -logp[np.arange(logp.shape[0]), np.asarray(labels, dtype=np.int64)]


def logit_norm_loss(logits) -> LossBatchResult:
    """Mean row l2 norm; the subgradient at a zero row is taken as 0."""
    h = np.asarray(logits, dtype=np.float64)
    n = h.shape[0]
    norms = np.sqrt(np.sum(h * h, axis=1))
    safe = np.where(norms > NORM_EPS, norms, 1.0)
    d = np.where((norms > NORM_EPS)[:, None], h / safe[:, None], 0.0)
    return LossBatchResult(float(norms.mean()) if n else 0.0, d / max(n, 1))


LOSS_KINDS = ("ce", "ascent", "logit_norm", "feature_norm")


@dataclass(eq=False)
class LossTerm:
    """One weighted expectation in the training objective.

    ``kind``: ce (descend cross-entropy), ascent (ascend cross-entropy),
    logit_norm / feature_norm (mean l2 norm of logits / encoder features).
    """

    split: str
    indices: np.ndarray
    kind: str = "ce"
    weight: float = 1.0
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        self.indices = np.asarray(self.indices, dtype=np.int64)


# hook(grads, ckpt, rng) -> grads, applied to the summed objective gradient
GradHook = Callable[[list, M.Checkpoint, np.random.Generator], list]


@dataclass
class FitResult:
    checkpoint: M.Checkpoint
    history: list[dict] = field(default_factory=list)


def _term_grads(ckpt: M.Checkpoint, X, y, term: LossTerm):
    trace = M.forward(ckpt, X)
    if term.kind in ("ce", "ascent"):
        res = ce_loss(trace.logits, y)
        sign = -1.0 if term.kind == "ascent" else 1.0
        g = M.backward(ckpt, trace, sign * res.dlogits)
        metric = res.loss
    elif term.kind == "logit_norm":
        res = logit_norm_loss(trace.logits)
        g = M.backward(ckpt, trace, res.dlogits)
        metric = res.loss
    else:
        res = logit_norm_loss(trace.features)
        g = M.backward(ckpt, trace, np.zeros_like(trace.logits), dfeatures=res.dlogits)
        metric = res.loss
    correct = int(np.sum(np.argmax(trace.logits, axis=1) == y))
    return g.layers, metric, correct


def _batches(n: int, batch_size: int, rng: np.random.Generator, shuffle: bool):
    while True:
        order = rng.permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def sgd_step(params, velocity, grads, cfg: TrainConfig, trainable: Sequence[bool], masks=None):
    """In-place SGD update with momentum and L2 weight decay (torch.optim.SGD semantics)."""
    for i, ok in enumerate(trainable):
        if not ok:
            continue
        for j in range(2):
            p = params[i][j]
            d = grads[i][j] + cfg.weight_decay * p if cfg.weight_decay else grads[i][j]
            if masks is not None:
                d = d * masks[i][j]
            v = velocity[i][j]
            v *= cfg.momentum
            v += d
            p -= cfg.learning_rate * v


def fit(
    ckpt: M.Checkpoint,
    bundle: DatasetBundle,
    terms: Sequence[LossTerm] | str,
    cfg: TrainConfig,
    *,
    trainable: Iterable[int] | None = None,
    masks=None,
    hooks: Sequence[GradHook] = (),
    hook_seed: int | None = None,
) -> FitResult:
    """Minimize the weighted sum of ``terms`` starting from a copy of ``ckpt``.

    An epoch is one pass over the first term's rows; every other term draws
    batches of the same size from its own shuffled stream. ``terms`` may also
    be a split name, meaning plain cross-entropy on that split.
    """
    if isinstance(terms, str):
        terms = [LossTerm(terms, bundle.indices(terms), "ce")]
    terms = list(terms)
    if not terms or any(t.indices.size == 0 for t in terms):
        raise ValueError("every loss term needs at least one sample")

    work = ckpt.copy()
    n_layers = len(work.layers)
    train_set = set(range(n_layers)) if trainable is None else set(trainable)
    flags = [i in train_set for i in range(n_layers)]
    params = [(l.weight, l.bias) for l in work.layers]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    seeds = np.random.SeedSequence([cfg.seed, 0x5EED]).spawn(len(terms) + 1)
    streams = [
        _batches(t.indices.size, cfg.batch_size, np.random.default_rng(s), cfg.shuffle)
        for t, s in zip(terms, seeds)
    ]
    hook_rng = np.random.default_rng(seeds[-1] if hook_seed is None else hook_seed)
    steps = -(-terms[0].indices.size // cfg.batch_size)

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(len(terms))
        seen = np.zeros(len(terms))
        correct = np.zeros(len(terms))
        for _ in range(steps):
            total = None
            for k, (term, stream) in enumerate(zip(terms, streams)):
                pos = next(stream)
                rows = term.indices[pos]
                labels = bundle.labels[rows] if term.labels is None else term.labels[pos]
                grads, metric, ok = _term_grads(work, bundle.inputs[rows], labels, term)
                sums[k] += metric * rows.size
                seen[k] += rows.size
                correct[k] += ok
                if total is None:
                    total = [(term.weight * gw, term.weight * gb) for gw, gb in grads]
                else:
                    for (tw, tb), (gw, gb) in zip(total, grads):
                        tw += term.weight * gw
                        tb += term.weight * gb
            for hook in hooks:
                total = hook(total, work, hook_rng)
            sgd_step(params, velocity, total, cfg, flags, masks)
        for k, term in enumerate(terms):
            history.append(
                {
                    "epoch": epoch,
                    "split": term.split,
                    "kind": term.kind,
                    "loss": sums[k] / seen[k],
                    "accuracy": 100.0 * correct[k] / seen[k],
                }
            )
    return FitResult(work, history)


def write_metrics_csv(history: Sequence[dict], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["epoch", "split", "loss", "accuracy"])
        for row in history:
            w.writerow([row["epoch"], row["split"], f"{row['loss']:.17g}", f"{row['accuracy']:.17g}"])
