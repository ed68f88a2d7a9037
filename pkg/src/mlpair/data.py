"""Seeded synthetic group-activity episodes and their on-disk format.

Each actor-frame feature is ``action_embedding + noise + motif``. The motif is
a rank-1 sign tensor ``s · a_k[n] · p_k[t] · u`` where ``a_k`` is a per-class
actor sign pattern, ``p_k`` a per-class temporal phase profile, ``u`` a fixed
channel direction and ``s`` a random global sign. Every actor pattern has the
same number of +1 entries, and so does every phase profile, which gives:

* each single actor-frame feature has the same law in every class;
* a model that only sees positions independently, then averages over time and
  takes a max over actors, sees a class-independent multiset and sits at chance;
* scrambling the actor order per channel destroys the label.

Recovering the class needs both cross-actor and cross-frame comparisons.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
GENERATOR_VERSION = "planted-rank1-v1"
VOLLEYBALL_GROUPS = ("r_set", "r_spike", "r_pass", "r_winpoint", "l_set", "l_spike", "l_pass", "l_winpoint")


class DatasetFormatError(ValueError):
    """Manifest or blob on disk is malformed or inconsistent."""


@dataclass
class SynthSpec:
    frames: int = 9
    actors: int = 12
    dim: int = 64
    group_classes: int = 8
    action_classes: int = 9
    noise: float = 0.5
    motif_scale: float = 0.2
    scene_dim: int = 0
    scene_noise: float = 3.0

    def validate(self) -> None:
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")
        if self.group_classes < 2:
            raise ValueError("need at least 2 group classes")
        if self.actors < 2 or self.frames < 2:
            raise ValueError("motif placement needs at least 2 actors and 2 frames")
        if self.dim < 1 or self.action_classes < 1:
            raise ValueError("dim and action_classes must be positive")
        n_spatial, n_temporal = _pattern_grid(self.group_classes)
        if _count_sign_patterns(self.actors) < n_spatial or _count_sign_patterns(self.frames) < n_temporal:
            raise ValueError(
                f"{self.actors} actors x {self.frames} frames cannot hold "
                f"{self.group_classes} distinct motifs"
            )


@dataclass
class Episode:
    features: np.ndarray
    group_label: int
    action_labels: np.ndarray
    scene: np.ndarray | None = None


@dataclass
class Dataset:
    features: np.ndarray          # [E, T, N, D] float64
    group_labels: np.ndarray      # [E] int64
    action_labels: np.ndarray     # [E, N] int64
    scene: np.ndarray | None = None
    seed: int = 0
    spec: SynthSpec = field(default_factory=SynthSpec)
    class_names: list[str] = field(default_factory=list)
    splits: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.group_labels.shape[0])

    def __getitem__(self, i: int) -> Episode:
        return Episode(
            self.features[i],
            int(self.group_labels[i]),
            self.action_labels[i],
            None if self.scene is None else self.scene[i],
        )

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.group_labels[idx],
            self.action_labels[idx],
            None if self.scene is None else self.scene[idx],
            self.seed,
            self.spec,
            list(self.class_names),
        )

    def subset(self, name: str) -> "Dataset":
        if name not in self.splits:
            raise KeyError(f"dataset has no split {name!r}; available: {sorted(self.splits)}")
        start, count = self.splits[name]
        return self.take(np.arange(start, start + count))


def _pattern_grid(classes: int) -> tuple[int, int]:
    n_spatial = 2
    return n_spatial, math.ceil(classes / n_spatial)


def _count_sign_patterns(length: int) -> int:
    # balanced-count patterns, identified up to a global sign
    k = (length + 1) // 2
    total = math.comb(length, k)
    return total // 2 if length == 2 * k else total


def _sign_patterns(length: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` ±1 vectors with ceil(length/2) plus signs, pairwise distinct up to sign."""
    plus = (length + 1) // 2
    combos = list(itertools.combinations(range(length), plus))
    order = rng.permutation(len(combos))
    out: list[np.ndarray] = []
    for j in order:
        v = -np.ones(length)
        v[list(combos[j])] = 1.0
        if any(np.array_equal(v, w) or np.array_equal(v, -w) for w in out):
            continue
        out.append(v)
        if len(out) == count:
            break
    return np.stack(out)


@dataclass
class World:
    """Fixed per-seed quantities shared by all episodes."""

    action_embeddings: np.ndarray   # [C_a, D]
    direction: np.ndarray           # [D], RMS 1 per channel
    actor_patterns: np.ndarray      # [C_g, N]
    phase_profiles: np.ndarray      # [C_g, T]
    scene_embeddings: np.ndarray | None


def make_world(spec: SynthSpec, rng: np.random.Generator) -> World:
    n_spatial, n_temporal = _pattern_grid(spec.group_classes)
    spatial = _sign_patterns(spec.actors, n_spatial, rng)
    temporal = _sign_patterns(spec.frames, n_temporal, rng)
    pairs = [(i, j) for i in range(n_spatial) for j in range(n_temporal)][: spec.group_classes]
    u = rng.normal(size=spec.dim)
    u *= math.sqrt(spec.dim) / np.linalg.norm(u)
    scene = rng.normal(size=(spec.group_classes, spec.scene_dim)) if spec.scene_dim else None
    return World(
        action_embeddings=rng.normal(size=(spec.action_classes, spec.dim)),
        direction=u,
        actor_patterns=np.stack([spatial[i] for i, _ in pairs]),
        phase_profiles=np.stack([temporal[j] for _, j in pairs]),
        scene_embeddings=scene,
    )


def generate(seed: int, episodes: int, spec: SynthSpec | None = None) -> Dataset:
    """Draw ``episodes`` labeled episodes; identical seeds give bit-identical data."""
    spec = spec or SynthSpec()
    spec.validate()
    if episodes < 0:
        raise ValueError("episode count must be non-negative")
    rng = np.random.default_rng(seed)
    world = make_world(spec, rng)
    t, n, d = spec.frames, spec.actors, spec.dim
    groups = rng.integers(0, spec.group_classes, episodes)
    actions = rng.integers(0, spec.action_classes, (episodes, n))
    signs = rng.choice(np.array([-1.0, 1.0]), episodes)
    noise = rng.normal(0.0, 1.0, (episodes, t, n, d)) * spec.noise
    base = world.action_embeddings[actions]  # [E, N, D]
    motif = (
        signs[:, None, None]
        * world.phase_profiles[groups][:, :, None]
        * world.actor_patterns[groups][:, None, :]
    )  # [E, T, N]
    features = base[:, None, :, :] + noise + spec.motif_scale * motif[..., None] * world.direction
    scene = None
    if spec.scene_dim:
        scene = world.scene_embeddings[groups] + spec.scene_noise * rng.normal(size=(episodes, spec.scene_dim))
    names = list(VOLLEYBALL_GROUPS) if spec.group_classes == len(VOLLEYBALL_GROUPS) else [
        f"group_{k}" for k in range(spec.group_classes)
    ]
    return Dataset(features, groups.astype(np.int64), actions.astype(np.int64), scene, seed, spec, names)


def split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the test side gets ceil(ratio · E) episodes.

    Rounding up (with a 1e-9 guard) makes both 1/3 and 0.333 of 2481 give 827.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    total = len(dataset)
    n_test = math.ceil(ratio * total - 1e-9)
    if n_test <= 0 or n_test >= total:
        raise ValueError(f"ratio {ratio} on {total} episodes leaves an empty side")
    perm = np.random.default_rng(seed).permutation(total)
    return dataset.take(np.sort(perm[n_test:])), dataset.take(np.sort(perm[:n_test]))


def concat_splits(train: Dataset, test: Dataset) -> Dataset:
    """Join train and test back-to-back and record the ranges in ``splits``."""
    scene = None
    if train.scene is not None:
        scene = np.concatenate([train.scene, test.scene])
    out = Dataset(
        np.concatenate([train.features, test.features]),
        np.concatenate([train.group_labels, test.group_labels]),
        np.concatenate([train.action_labels, test.action_labels]),
        scene,
        train.seed,
        train.spec,
        list(train.class_names),
    )
    out.splits = {"train": (0, len(train)), "test": (len(train), len(test))}
    return out


# on-disk format: manifest.json + features.bin (<f4) + labels.bin (<i4)

def _layout(e: int, spec: SynthSpec, has_scene: bool) -> dict:
    feat = e * spec.frames * spec.actors * spec.dim
    scene = e * spec.scene_dim if has_scene else 0
    return {
        "features": {"file": "features.bin", "dtype": "<f4", "offset": 0, "count": feat},
        "scene": {"file": "features.bin", "dtype": "<f4", "offset": 4 * feat, "count": scene},
        "group_labels": {"file": "labels.bin", "dtype": "<i4", "offset": 0, "count": e},
        "action_labels": {"file": "labels.bin", "dtype": "<i4", "offset": 4 * e, "count": e * spec.actors},
    }


def save(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    e = len(dataset)
    spec = dataset.spec
    layout = _layout(e, spec, dataset.scene is not None)
    feats = dataset.features.astype("<f4").tobytes()
    if dataset.scene is not None:
        feats += dataset.scene.astype("<f4").tobytes()
    labels = dataset.group_labels.astype("<i4").tobytes() + dataset.action_labels.astype("<i4").tobytes()
    splits = dataset.splits or {"all": (0, e)}
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator_version": GENERATOR_VERSION,
        "seed": dataset.seed,
        "episodes": e,
        "splits": {k: {"start": s, "count": c} for k, (s, c) in splits.items()},
        "dims": {"frames": spec.frames, "actors": spec.actors, "dim": spec.dim, "scene_dim": spec.scene_dim if dataset.scene is not None else 0},
        "spec": vars(spec),
        "class_names": dataset.class_names,
        "layout": layout,
        "sha256": {
            "features.bin": hashlib.sha256(feats).hexdigest(),
            "labels.bin": hashlib.sha256(labels).hexdigest(),
        },
    }
    (path / "features.bin").write_bytes(feats)
    (path / "labels.bin").write_bytes(labels)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise DatasetFormatError("manifest.json must hold an object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"format version {manifest.get('format_version')!r} != supported {FORMAT_VERSION}"
        )
    for key in ("episodes", "dims", "spec", "layout", "splits", "seed"):
        if key not in manifest:
            raise DatasetFormatError(f"manifest.json lacks {key!r}")
    return manifest


def load(path) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path)
    try:
        spec = SynthSpec(**manifest["spec"])
        e = int(manifest["episodes"])
        has_scene = manifest["dims"].get("scene_dim", 0) > 0
        expected = _layout(e, spec, has_scene)
    except (TypeError, KeyError, ValueError) as exc:
        raise DatasetFormatError(f"manifest fields malformed: {exc}") from None
    if manifest["layout"] != expected:
        raise DatasetFormatError("manifest layout disagrees with the episode count and dims")
    blobs = {}
    for name in ("features.bin", "labels.bin"):
        blobs[name] = (path / name).read_bytes()
        want = sum(4 * v["count"] for v in expected.values() if v["file"] == name)
        if len(blobs[name]) != want:
            raise DatasetFormatError(f"{name}: {len(blobs[name])} bytes on disk, manifest implies {want}")

    def read(entry):
        return np.frombuffer(blobs[entry["file"]], dtype=entry["dtype"], count=entry["count"], offset=entry["offset"])

    t, n, d = spec.frames, spec.actors, spec.dim
    features = read(expected["features"]).astype(np.float64).reshape(e, t, n, d)
    scene = read(expected["scene"]).astype(np.float64).reshape(e, spec.scene_dim) if has_scene else None
    groups = read(expected["group_labels"]).astype(np.int64)
    actions = read(expected["action_labels"]).astype(np.int64).reshape(e, n)
    if e and (groups.min() < 0 or groups.max() >= spec.group_classes):
        raise DatasetFormatError("group label out of range")
    if e and (actions.min() < 0 or actions.max() >= spec.action_classes):
        raise DatasetFormatError("action label out of range")
    ds = Dataset(features, groups, actions, scene, int(manifest["seed"]), spec, list(manifest.get("class_names", [])))
    splits = {}
    for name, rng_ in manifest["splits"].items():
        start, count = int(rng_["start"]), int(rng_["count"])
        if start < 0 or start + count > e:
            raise DatasetFormatError(f"split {name!r} exceeds {e} episodes")
        splits[name] = (start, count)
    ds.splits = splits
    return ds


def manifest_hash(path) -> str:
    return hashlib.sha256((Path(path) / "manifest.json").read_bytes()).hexdigest()


def label_chi_square(labels: np.ndarray, classes: int) -> float:
    counts = np.bincount(labels, minlength=classes).astype(np.float64)
    expected = len(labels) / classes
    return float(((counts - expected) ** 2 / expected).sum())


__all__ = [
    "Dataset",
    "DatasetFormatError",
    "Episode",
    "SynthSpec",
    "concat_splits",
    "generate",
    "load",
    "save",
    "split",
]
