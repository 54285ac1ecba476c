"""Feature bags: the on-disk format, a synthetic MIL corpus, and batching.

Bag file layout (all little-endian)::

    b"PDVB" | u16 version=1 | u32 T | u32 D | u8 bag_label | u8 has_frame_labels
    | T*D float32 row-major | [T bytes of 0/1 if has_frame_labels] | u32 CRC32

The CRC covers every preceding byte. A corpus is a directory holding a
``manifest.txt`` (one relative path per line) plus the bag files it lists;
the first path component names the split (``train/...``, ``test/...``).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._framing import F32, Reader, atomic_write, f32_bytes, seal, unseal
from .errors import ConfigError, FormatError, ShapeMismatchError

BAG_MAGIC = b"PDVB"
BAG_VERSION = 1
BAG_SUFFIX = ".pdvb"
MANIFEST = "manifest.txt"
_HEADER = struct.Struct("<IIBB")  # T, D, bag_label, has_frame_labels


@dataclass
class FeatureBag:
    features: np.ndarray                      # (T, D) float32
    bag_label: int
    frame_labels: np.ndarray | None = None    # (T,) uint8
    id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"bag {self.id!r}: features must be T x D with T, D >= 1, "
                             f"got {self.features.shape}")
        if self.bag_label not in (0, 1):
            raise ValueError(f"bag {self.id!r}: bag_label must be 0 or 1, got {self.bag_label}")
        self.bag_label = int(self.bag_label)
        if self.frame_labels is not None:
            fl = np.asarray(self.frame_labels)
            if fl.shape != (self.T,):
                raise ValueError(f"bag {self.id!r}: {fl.shape[0] if fl.ndim else 0} frame labels "
                                 f"for T={self.T}")
            if not np.isin(fl, (0, 1)).all():
                raise ValueError(f"bag {self.id!r}: frame labels must be 0/1")
            self.frame_labels = fl.astype(np.uint8)
            if bool(self.frame_labels.any()) != bool(self.bag_label):
                raise ValueError(f"bag {self.id!r}: bag_label={self.bag_label} inconsistent "
                                 f"with frame labels")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


def encode_bag(bag: FeatureBag) -> bytes:
    has_fl = bag.frame_labels is not None
    parts = [BAG_MAGIC, struct.pack("<H", BAG_VERSION),
             _HEADER.pack(bag.T, bag.D, bag.bag_label, int(has_fl)),
             f32_bytes(bag.features)]
    if has_fl:
        parts.append(bag.frame_labels.astype(np.uint8).tobytes())
    return seal(b"".join(parts))


def _declared_bag_size(payload: memoryview):
    if len(payload) < _HEADER.size:
        return None
    T, D, _, has_fl = _HEADER.unpack_from(payload)
    return 6 + _HEADER.size + 4 * T * D + (T if has_fl else 0) + 4


def decode_bag(blob: bytes, bag_id: str = "") -> FeatureBag:
    what = f"bag {bag_id!r}" if bag_id else "bag"
    r = Reader(unseal(blob, BAG_MAGIC, BAG_VERSION, what, _declared_bag_size), what)
    T, D, label, has_fl = r.unpack(_HEADER.format)
    feats = r.floats((T, D))
    frames = np.frombuffer(r.raw(T), dtype=np.uint8).copy() if has_fl else None
    if r.remaining():
        raise FormatError(f"{what}: {r.remaining()} unexpected trailing bytes")
    try:
        return FeatureBag(feats, label, frames, bag_id)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_bag(bag: FeatureBag, path) -> None:
    atomic_write(path, encode_bag(bag))


def read_bag(path) -> FeatureBag:
    path = Path(path)
    return decode_bag(path.read_bytes(), path.stem)


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    """Knobs of the synthetic label-ambiguity corpus.

    ``sigma`` is the scale of the per-instance noise vector: each coordinate
    gets N(0, sigma^2 / d), so the noise norm is about ``sigma``. Anomalous
    instances are shifted by ``delta`` along one direction orthogonal to all
    normal cluster centres.

    With ``scene_per_bag`` (the default) every bag draws one cluster, like a
    video filmed at a single scene; otherwise each instance draws its own.
    """

    d: int = 64
    train_per_class: int = 200
    test_per_class: int = 50
    t_min: int = 40
    t_max: int = 80
    rho: float = 0.1
    n_clusters: int = 4
    center_scale: float = 2.0
    delta: float = 2.0
    sigma: float = 1.0
    seed: int = 0
    scene_per_bag: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d < 2:
            raise ConfigError(f"d must be >= 2, got {self.d}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.delta >= 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError(f"need 1 <= t_min <= t_max, got {self.t_min}, {self.t_max}")
        if self.n_clusters < 1 or self.train_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("n_clusters must be >= 1 and bag counts >= 0")


def anomaly_count(rho: float, T: int) -> int:
    # the tolerance keeps e.g. 0.1 * 70 = 7.000000000000001 from rounding up to 8
    return max(1, math.ceil(rho * T - 1e-9))


def generate_synthetic(cfg: SynthConfig) -> dict[str, list[FeatureBag]]:
    """Sample train and test splits; deterministic given ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    D = cfg.d
    direction = rng.normal(size=D)
    direction /= np.linalg.norm(direction)
    centers = rng.normal(size=(cfg.n_clusters, D))
    centers -= np.outer(centers @ direction, direction)
    centers *= cfg.center_scale / np.linalg.norm(centers, axis=1, keepdims=True)
    noise_std = cfg.sigma / math.sqrt(D)

    corpus: dict[str, list[FeatureBag]] = {}
    for split, count in (("train", cfg.train_per_class), ("test", cfg.test_per_class)):
        bags = []
        for label, name in ((0, "normal"), (1, "abnormal")):
            for j in range(count):
                T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
                scene = rng.integers(0, cfg.n_clusters, size=1 if cfg.scene_per_bag else T)
                x = np.broadcast_to(centers[scene], (T, D))
                x = x + rng.normal(0.0, noise_std, size=(T, D))
                frames = np.zeros(T, dtype=np.uint8)
                if label:
                    n = anomaly_count(cfg.rho, T)
                    start = int(rng.integers(0, T - n + 1))
                    x[start:start + n] += cfg.delta * direction
                    frames[start:start + n] = 1
                bags.append(FeatureBag(x.astype(np.float32), label, frames, f"{split}_{name}_{j:04d}"))
        corpus[split] = bags
    return corpus


# --------------------------------------------------------------------------
# corpus directories


def write_corpus(corpus: dict[str, list[FeatureBag]], out_dir) -> Path:
    out_dir = Path(out_dir)
    rels = []
    for split, bags in corpus.items():
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        for bag in bags:
            rel = f"{split}/{bag.id}{BAG_SUFFIX}"
            write_bag(bag, out_dir / rel)
            rels.append(rel)
    manifest = out_dir / MANIFEST
    manifest.write_text("".join(r + "\n" for r in rels), encoding="utf-8", newline="\n")
    return manifest


def manifest_path(corpus) -> Path:
    p = Path(corpus)
    return p / MANIFEST if p.is_dir() else p


def load_corpus(corpus) -> dict[str, list[FeatureBag]]:
    """Read every bag listed in a corpus manifest, grouped by split."""
    manifest = manifest_path(corpus)
    root = manifest.parent
    splits: dict[str, list[FeatureBag]] = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        rel = line.strip()
        if not rel:
            continue
        parts = Path(rel).parts
        split = parts[0] if len(parts) > 1 else "all"
        splits.setdefault(split, []).append(read_bag(root / rel))
    return splits


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    features: np.ndarray                  # (B, T_max, D), zero beyond each length
    lengths: np.ndarray                   # (B,)
    labels: np.ndarray                    # (B,) bag labels
    frame_labels: np.ndarray | None       # (B, T_max); padding marked -1
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.lengths)


def assemble_batch(bags: list[FeatureBag], pad_to: int | None = None) -> Batch:
    if not bags:
        raise ValueError("cannot assemble an empty batch")
    D = bags[0].D
    if any(b.D != D for b in bags):
        raise ShapeMismatchError(f"mixed feature dimensions in batch: {sorted({b.D for b in bags})}")
    lengths = np.array([b.T for b in bags], dtype=np.int64)
    T_max = int(lengths.max()) if pad_to is None else pad_to
    if T_max < lengths.max():
        raise ValueError(f"pad_to={pad_to} is shorter than the longest bag ({lengths.max()})")
    feats = np.zeros((len(bags), T_max, D), dtype=np.float32)
    have_frames = all(b.frame_labels is not None for b in bags)
    frames = np.full((len(bags), T_max), -1, dtype=np.int8) if have_frames else None
    for i, b in enumerate(bags):
        feats[i, :b.T] = b.features
        if have_frames:
            frames[i, :b.T] = b.frame_labels
    labels = np.array([b.bag_label for b in bags], dtype=np.int64)
    return Batch(feats, lengths, labels, frames, [b.id for b in bags])
