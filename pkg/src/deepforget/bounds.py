"""Minimum softmax entropy over a ball of logits: closed form, candidates, and a search oracle."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .linalg import log_softmax, softmax_entropy


def _v(r, C):
    return np.sqrt(C / (C - 1.0)) * np.asarray(r, dtype=np.float64)


def lower_bound(r, C: int):
    """log(1 + (C-1) exp(-sqrt(C/(C-1)) r)); vectorized over r."""
    out = np.log1p((C - 1.0) * np.exp(-_v(r, C)))
    return float(out) if np.ndim(out) == 0 else out


def exact_min_entropy(r, C: int):
    """H*(r, C) = log(1 + 1/kappa) + log(kappa (C-1)) / (kappa + 1), kappa = e^v / (C-1).

    Written with t = (C-1) e^{-v} = 1/kappa so that large radii do not overflow.
    """
    v = _v(r, C)
    t = (C - 1.0) * np.exp(-v)
    out = np.log1p(t) + v * t / (1.0 + t)
    return float(out) if np.ndim(out) == 0 else out


def minimizer(r: float, C: int) -> np.ndarray:
    """One large entry, C-1 equal small ones, zero sum, norm r."""
    h = np.full(C, -r / np.sqrt(C * (C - 1.0)))
    h[0] = np.sqrt((C - 1.0) / C) * r
    return h


@dataclass
class Candidate:
    b: int
    h: np.ndarray
    entropy: float


def stationary_candidates(r: float, C: int) -> list[Candidate]:
    """Two-level points with b large entries on the zero-sum sphere of radius r, b = 1..C-1."""
    out = []
    for b in range(1, C):
        hi = np.sqrt((C - b) / (b * C)) * r
        lo = -np.sqrt(b / (C * (C - b))) * r
        h = np.concatenate([np.full(b, hi), np.full(C - b, lo)])
        out.append(Candidate(b, h, softmax_entropy(h)))
    return out


def _entropy_and_grad(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logp = log_softmax(H)
    p = np.exp(logp)
    ent = np.maximum(-np.sum(p * logp, axis=1), 0.0)
    grad = -p * (logp + ent[:, None])
    return ent, grad


def _log_objective(H: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # log H has the same minimizers as H but keeps O(1) gradients where H ~ 0
    ent, grad = _entropy_and_grad(H)
    safe = np.maximum(ent, 1e-300)
    return np.log(safe), grad / safe[:, None], ent


def _project(H: np.ndarray, r: float) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    scale = np.where(norms > r, r / np.where(norms > 0, norms, 1.0), 1.0)
    return H * scale


def oracle_min(r: float, C: int, restarts: int = 32, iters: int = 2000, seed: int = 0) -> tuple[float, np.ndarray]:
    """Projected gradient descent of H(softmax(h)) over ||h|| <= r from seeded random starts.

    Descends log H (same minimizers, better scaled near zero entropy). Each
    restart keeps its own step size, halved until the projected step satisfies
    the sufficient-decrease test and doubled after every accepted step.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    if r == 0:
        return float(np.log(C)), np.zeros(C)
    rng = np.random.default_rng(np.random.SeedSequence([seed, C, 0xB0]))
    dirs = rng.standard_normal((restarts, C))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    H = dirs * r * rng.uniform(0.1, 1.0, size=(restarts, 1))
    step = np.full(restarts, 1.0)
    f, g, ent = _log_objective(H)
    for _ in range(iters):
        trial_step = step.copy()
        active = np.ones(restarts, dtype=bool)
        new_H, new_f = H.copy(), f.copy()
        for _ in range(60):
            cand = _project(H[active] - trial_step[active, None] * g[active], r)
            fc, _, _ = _log_objective(cand)
            d = cand - H[active]
            model_val = f[active] + np.sum(g[active] * d, axis=1) + np.sum(d * d, axis=1) / (2 * trial_step[active])
            ok = fc <= model_val + 1e-15
            idx = np.flatnonzero(active)
            new_H[idx[ok]] = cand[ok]
            new_f[idx[ok]] = fc[ok]
            active[idx[ok]] = False
            if not active.any():
                break
            trial_step[active] *= 0.5
        H, f = new_H, new_f
        _, g, ent = _log_objective(H)
        step = np.minimum(trial_step * 2.0, 1e4)
    best = int(np.argmin(f))
    return float(ent[best]), H[best]


@dataclass
class BoundResult:
    r: float
    C: int
    kappa: float
    h_star: list[float]
    exact_Hstar: float
    lower_bound: float
    oracle_min: float | None = None
    oracle_argmin: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def bound_result(r: float, C: int, oracle: bool = True, restarts: int = 32, iters: int = 2000) -> BoundResult:
    if r < 0 or C < 2:
        raise ValueError("need r >= 0 and C >= 2")
    kappa = float(np.exp(_v(r, C)) / (C - 1.0))
    res = BoundResult(
        r=float(r),
        C=int(C),
        kappa=kappa,
        h_star=minimizer(r, C).tolist(),
        exact_Hstar=exact_min_entropy(r, C),
        lower_bound=lower_bound(r, C),
    )
    if oracle:
        val, arg = oracle_min(r, C, restarts, iters)
        res.oracle_min, res.oracle_argmin = val, arg.tolist()
    return res


def distinct_levels(h, tol: float = 1e-3) -> int:
    """Number of clusters among sorted entries when gaps larger than ``tol`` split them."""
    s = np.sort(np.asarray(h, dtype=np.float64))
    return 1 + int(np.sum(np.diff(s) > tol))
