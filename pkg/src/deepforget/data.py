"""Synthetic Gaussian-mixture datasets with retain/forget/val/test splits."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError

RETAIN, FORGET, VAL, TEST = 0, 1, 2, 3
SPLIT_NAMES = {"retain": RETAIN, "forget": FORGET, "val": VAL, "test": TEST}

BUNDLE_MAGIC = b"UFDB"
BUNDLE_VERSION = 1
MEAN_RADIUS = 4.0


@dataclass(frozen=True)
class GenConfig:
    num_classes: int = 10
    input_dim: int = 16
    samples_per_class: int = 600
    cluster_spread: float = 1.0
    val_frac: float = 0.10
    test_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.input_dim < 2:
            raise ValueError("need num_classes >= 2 and input_dim >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if not (0 < self.val_frac < 1 and 0 < self.test_frac < 1):
            raise ValueError("fractions must lie in (0, 1)")
        if self.val_frac + self.test_frac >= 1:
            raise ValueError("val_frac + test_frac must be < 1")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")


@dataclass(frozen=True)
class Scenario:
    """``kind`` is "none", "class" (forget whole classes) or "random"."""

    kind: str = "none"
    classes: tuple[int, ...] = ()
    fraction: float = 0.0

    @classmethod
    def class_forget(cls, classes=(0, 1, 2)) -> "Scenario":
        return cls("class", tuple(sorted(int(c) for c in set(classes))))

    @classmethod
    def random_forget(cls, fraction: float = 0.10) -> "Scenario":
        if not 0 <= fraction <= 1:
            raise ValueError("fraction must lie in [0, 1]")
        return cls("random", (), float(fraction))

    def to_dict(self) -> dict:
        if self.kind == "class":
            return {"kind": "class", "classes": list(self.classes)}
        if self.kind == "random":
            return {"kind": "random", "fraction": self.fraction}
        return {"kind": "none"}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        kind = d.get("kind", "none")
        if kind == "class":
            return cls.class_forget(d.get("classes", (0, 1, 2)))
        if kind == "random":
            return cls.random_forget(d.get("fraction", 0.10))
        if kind == "none":
            return cls()
        raise ValueError(f"unknown scenario kind {kind!r}")


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    inputs: np.ndarray
    labels: np.ndarray
    tags: np.ndarray
    num_classes: int
    seed: int
    scenario: Scenario = field(default_factory=Scenario)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def indices(self, split: str) -> np.ndarray:
        """Row indices for a split name.

        Besides the four tags this understands ``train`` (retain + forget) and,
        under the class scenario, ``test_forget`` / ``test_retain``.
        """
        if split in SPLIT_NAMES:
            return np.flatnonzero(self.tags == SPLIT_NAMES[split])
        if split == "train":
            return np.flatnonzero((self.tags == RETAIN) | (self.tags == FORGET))
        if split in ("test_forget", "test_retain"):
            in_set = np.isin(self.labels, self.scenario.classes)
            want = in_set if split == "test_forget" else ~in_set
            return np.flatnonzero((self.tags == TEST) & want)
        raise KeyError(f"unknown split {split!r}")

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(name)
        return self.inputs[idx], self.labels[idx]

    def to_bytes(self) -> bytes:
        n, d = self.inputs.shape
        head = struct.pack("<4sIIIIQ", BUNDLE_MAGIC, BUNDLE_VERSION, n, d, self.num_classes, self.seed)
        sc = self.scenario
        kind = {"none": 0, "class": 1, "random": 2}[sc.kind]
        head += struct.pack("<BdI", kind, sc.fraction, len(sc.classes))
        head += struct.pack(f"<{len(sc.classes)}I", *sc.classes)
        return b"".join(
            [
                head,
                self.inputs.astype("<f8").tobytes(),
                self.labels.astype("<u4").tobytes(),
                self.tags.astype("u1").tobytes(),
            ]
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def _read(buf: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise FormatError(f"truncated file: need {size} bytes", pos)
    return struct.unpack_from(fmt, buf, pos), pos + size


def bundle_from_bytes(buf: bytes) -> DatasetBundle:
    (magic, version, n, d, C, seed), pos = _read(buf, 0, "<4sIIIIQ")
    if magic != BUNDLE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {BUNDLE_MAGIC!r}", 0)
    if version != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {version} (reader is v{BUNDLE_VERSION})", 4)
    (kind, fraction, ncls), pos = _read(buf, pos, "<BdI")
    classes, pos = _read(buf, pos, f"<{ncls}I")
    if kind not in (0, 1, 2):
        raise FormatError(f"unknown scenario tag {kind}", pos)
    scenario = Scenario(("none", "class", "random")[kind], tuple(classes), fraction)
    need = pos + 8 * n * d + 4 * n + n
    if len(buf) != need:
        raise FormatError(f"payload size mismatch: expected {need} bytes, found {len(buf)}", pos)
    inputs = np.frombuffer(buf, "<f8", n * d, pos).reshape(n, d).astype(np.float64)
    pos += 8 * n * d
    labels = np.frombuffer(buf, "<u4", n, pos).astype(np.int64)
    pos += 4 * n
    tags = np.frombuffer(buf, "u1", n, pos).copy()
    if labels.size and labels.max() >= C:
        raise FormatError("label out of range", pos - 4 * n)
    if tags.size and tags.max() > TEST:
        raise FormatError("unknown split tag", pos)
    return DatasetBundle(inputs, labels, tags, int(C), int(seed), scenario)


def load_bundle(path) -> DatasetBundle:
    return bundle_from_bytes(Path(path).read_bytes())


def generate(cfg: GenConfig) -> DatasetBundle:
    """Draw a class-balanced Gaussian mixture and a stratified train/val/test split.

    Class means lie on a sphere of radius 4 with isotropic noise of standard
    deviation ``cluster_spread``; every train row starts out tagged retain.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    C, d, m = cfg.num_classes, cfg.input_dim, cfg.samples_per_class
    dirs = rng.standard_normal((C, d))
    means = MEAN_RADIUS * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    labels = np.repeat(np.arange(C), m)
    inputs = means[labels] + cfg.cluster_spread * rng.standard_normal((C * m, d))

    n_val = int(round(cfg.val_frac * m))
    n_test = int(round(cfg.test_frac * m))
    tags = np.full(C * m, RETAIN, dtype=np.uint8)
    for c in range(C):
        rows = c * m + rng.permutation(m)
        tags[rows[:n_val]] = VAL
        tags[rows[n_val : n_val + n_test]] = TEST
    return DatasetBundle(inputs, labels.astype(np.int64), tags, C, int(cfg.seed))


def apply_scenario(bundle: DatasetBundle, scenario: Scenario) -> DatasetBundle:
    """Retag train rows as forget according to the scenario (val/test untouched)."""
    tags = bundle.tags.copy()
    train = (tags == RETAIN) | (tags == FORGET)
    tags[train] = RETAIN
    if scenario.kind == "class":
        bad = [c for c in scenario.classes if not 0 <= c < bundle.num_classes]
        if bad:
            raise ValueError(f"classes {bad} outside label range [0, {bundle.num_classes})")
        tags[train & np.isin(bundle.labels, scenario.classes)] = FORGET
    elif scenario.kind == "random":
        rows = np.flatnonzero(train)
        rng = np.random.default_rng(np.random.SeedSequence([bundle.seed, 0xF06E7]))
        k = int(round(scenario.fraction * rows.size))
        tags[np.sort(rng.choice(rows, size=k, replace=False))] = FORGET
    elif scenario.kind != "none":
        raise ValueError(f"unknown scenario kind {scenario.kind!r}")
    return replace(bundle, tags=tags, scenario=scenario)
