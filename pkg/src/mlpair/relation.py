"""Axis-mixing MLP relation blocks, ST/TS paths and the dual-path model.

Actor features are laid out ``[..., T, N, D]`` (an optional leading batch axis).
A mixing block normalizes over channels and then applies its two FC layers
along one axis, treating every other axis as batch with shared weights:

* actor axis   -> MLP-S (cross-actor relation inside a frame)
* time axis    -> MLP-T (an actor's evolution across frames)
* channel axis -> MLP-R (refinement inside each feature vector)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .autograd import (
    ShapeError,
    Tensor,
    add,
    affine,
    amax,
    dropout,
    gelu,
    layer_norm,
    mean,
    mul,
    swapaxes,
)
from .modules import Linear, Module, param

AXES = {"time": -3, "actor": -2, "channel": -1}
METHODS = ("mlp", "gcn", "transformer")
PATH_MODES = ("st", "ts", "dual")


@dataclass
class ModelConfig:
    method: str = "mlp"
    frames: int = 9
    actors: int = 12
    dim: int = 256
    blocks: int = 1
    dropout: float = 0.3
    paths: str = "dual"
    mlp_r: bool = True
    token_mix: bool = True
    scene: bool = False
    scene_dim: int = 16
    group_classes: int = 8
    action_classes: int = 9
    lam: float = 1.0
    heads: int = 8
    seed: int = 0
    zero_init: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.paths not in PATH_MODES:
            raise ValueError(f"unknown path mode {self.paths!r}; expected one of {PATH_MODES}")
        for name in ("frames", "actors", "dim", "group_classes", "action_classes", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.blocks < 0:
            raise ValueError("blocks must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.method != "mlp" and (not self.mlp_r or not self.token_mix):
            raise ValueError("--no-mlp-r / MLP-R-only ablations apply to method=mlp only")
        if not (self.mlp_r or self.token_mix):
            raise ValueError("a relation module needs MLP-R or token mixing")
        if self.method == "transformer" and self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.scene and self.scene_dim < 1:
            raise ValueError("scene branch needs scene_dim >= 1")

    @property
    def path_names(self) -> tuple[str, ...]:
        return ("st", "ts") if self.paths == "dual" else (self.paths,)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _move_to_last(x: Tensor, axis: int) -> Tensor:
    return x if axis == -1 else swapaxes(x, axis, -1)


class MlpBlock(Module):
    """``x + Drop(FC2(Drop(GeLU(FC1(LN(x))))))`` with both FCs acting along ``axis``.

    Hidden width equals the mixed-axis length. LayerNorm is always over
    channels so it stays defined when the mixed axis has length 1.
    """

    def __init__(self, axis: str, length: int, channels: int, p: float,
                 rng: np.random.Generator, zero_init: bool = False):
        self.axis = axis
        self.length = length
        self.p = p
        bound = 1.0 / np.sqrt(length)
        self.ln_gamma = param(np.ones(channels))
        self.ln_beta = param(np.zeros(channels))
        self.w1 = param(rng.uniform(-bound, bound, (length, length)))
        self.b1 = param(rng.uniform(-bound, bound, length))
        if zero_init:
            self.w2 = param(np.zeros((length, length)))
            self.b2 = param(np.zeros(length))
        else:
            self.w2 = param(rng.uniform(-bound, bound, (length, length)))
            self.b2 = param(rng.uniform(-bound, bound, length))

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        ax = AXES[self.axis]
        if x.ndim < 3 or x.shape[ax] != self.length:
            raise ShapeError(f"{self.axis} axis of {x.shape} does not match block length {self.length}")
        if x.shape[-1] != self.ln_gamma.shape[0]:
            raise ShapeError(f"channel axis of {x.shape} does not match {self.ln_gamma.shape[0]}")
        h = layer_norm(x, self.ln_gamma, self.ln_beta)
        h = _move_to_last(h, ax)
        h = gelu(affine(h, self.w1, self.b1))
        h = dropout(h, self.p, self.training, rng)
        h = affine(h, self.w2, self.b2)
        h = dropout(h, self.p, self.training, rng)
        h = _move_to_last(h, ax)
        return add(x, h)


def mlp_s(block: MlpBlock, x: Tensor, rng=None) -> Tensor:
    if block.axis != "actor":
        raise ValueError("mlp_s needs an actor-axis block")
    return block(x, rng)


def mlp_t(block: MlpBlock, x: Tensor, rng=None) -> Tensor:
    if block.axis != "time":
        raise ValueError("mlp_t needs a time-axis block")
    return block(x, rng)


def mlp_r(block: MlpBlock, x: Tensor, rng=None) -> Tensor:
    if block.axis != "channel":
        raise ValueError("mlp_r needs a channel-axis block")
    return block(x, rng)


class RelationModule(Module):
    """Blocks applied in series: SRM is [MLP-S, MLP-R], TRM is [MLP-T, MLP-R]."""

    def __init__(self, blocks: list):
        self.blocks = list(blocks)

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        for block in self.blocks:
            x = block(x, rng)
        return x


def srm(module: RelationModule, x: Tensor, rng=None) -> Tensor:
    return module(x, rng)


def trm(module: RelationModule, x: Tensor, rng=None) -> Tensor:
    return module(x, rng)


def run_stack(stack: list, x: Tensor, rng=None) -> Tensor:
    for module in stack:
        x = module(x, rng)
    return x


def pool_and_classify(xhat: Tensor, group_head: Linear, individual_head: Linear):
    """Mean over frames gives per-actor features; max over actors gives the group feature.

    Returns ``(group_logits, individual_logits, group_embedding)``.
    """
    individual = mean(xhat, -3)
    group = amax(individual, -2)
    return group_head(group), individual_head(individual), group


class Path(Module):
    """ST: ``TRMs(x + SRMs(x))``; TS: ``SRMs(x + TRMs(x))``. Owns its two heads."""

    def __init__(self, order: str, spatial: list, temporal: list, group_head: Linear, individual_head: Linear):
        if order not in ("st", "ts"):
            raise ValueError(f"path order must be 'st' or 'ts', got {order!r}")
        self.order = order
        self.spatial = spatial
        self.temporal = temporal
        self.group_head = group_head
        self.individual_head = individual_head

    def trunk(self, x: Tensor, rng=None) -> Tensor:
        first, second = (self.spatial, self.temporal) if self.order == "st" else (self.temporal, self.spatial)
        return run_stack(second, add(x, run_stack(first, x, rng)), rng)

    def __call__(self, x: Tensor, rng=None):
        return pool_and_classify(self.trunk(x, rng), self.group_head, self.individual_head)


def path_forward(path: Path, x: Tensor, rng=None) -> Tensor:
    return path.trunk(x, rng)


@dataclass
class ModelOutput:
    group: dict[str, Tensor]
    individual: dict[str, Tensor]
    embedding: dict[str, Tensor]
    scene: Tensor | None = None
    fused_group: Tensor = field(default=None)
    fused_individual: Tensor = field(default=None)


def _mean_of(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total if len(tensors) == 1 else mul(total, 1.0 / len(tensors))


UnitFactory = Callable[[str, "ModelConfig", np.random.Generator], Module]


def mlp_unit(kind: str, cfg: ModelConfig, rng: np.random.Generator) -> RelationModule:
    """One SRM (``kind='spatial'``) or TRM (``kind='temporal'``)."""
    blocks = []
    if cfg.token_mix:
        axis, length = ("actor", cfg.actors) if kind == "spatial" else ("time", cfg.frames)
        blocks.append(MlpBlock(axis, length, cfg.dim, cfg.dropout, rng, cfg.zero_init))
    if cfg.mlp_r:
        blocks.append(MlpBlock("channel", cfg.dim, cfg.dim, cfg.dropout, rng, cfg.zero_init))
    return RelationModule(blocks)


class RelationModel(Module):
    """Dual- or single-path actor relation model with late fusion of the heads."""

    def __init__(self, config: ModelConfig, unit: UnitFactory = mlp_unit):
        self.config = config
        rng = np.random.default_rng(config.seed)
        paths = {}
        for name in config.path_names:
            spatial = [unit("spatial", config, rng) for _ in range(config.blocks)]
            temporal = [unit("temporal", config, rng) for _ in range(config.blocks)]
            group_head = Linear(config.dim, config.group_classes, rng)
            individual_head = Linear(config.dim, config.action_classes, rng)
            paths[name] = Path(name, spatial, temporal, group_head, individual_head)
        self.paths = paths
        self.scene_head = Linear(config.scene_dim, config.group_classes, rng) if config.scene else None

    def relation_parameters(self) -> list[tuple[str, Tensor]]:
        """Parameters of the relation stacks only (heads excluded)."""
        out = []
        for pname, path in self.paths.items():
            for attr in ("spatial", "temporal"):
                for i, module in enumerate(getattr(path, attr)):
                    out.extend(module.named_parameters(f"paths.{pname}.{attr}.{i}."))
        return out

    def __call__(self, x, scene=None, rng: np.random.Generator | None = None) -> ModelOutput:
        return dual_forward(self, x, scene, rng)


def dual_forward(model: RelationModel, x, scene=None, rng=None) -> ModelOutput:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if scene is not None and model.scene_head is None:
        raise ValueError("scene features supplied but the model has no scene head")
    group, individual, embedding = {}, {}, {}
    for name, path in model.paths.items():
        group[name], individual[name], embedding[name] = path(x, rng)
    scene_logits = None
    if scene is not None:
        scene_logits = model.scene_head(scene if isinstance(scene, Tensor) else Tensor(scene))
    group_terms = list(group.values()) + ([scene_logits] if scene_logits is not None else [])
    return ModelOutput(
        group=group,
        individual=individual,
        embedding=embedding,
        scene=scene_logits,
        fused_group=_mean_of(group_terms),
        fused_individual=_mean_of(list(individual.values())),
    )


def build_mlp_air(config: ModelConfig) -> RelationModel:
    if config.method != "mlp":
        raise ValueError("build_mlp_air builds method='mlp' only")
    return RelationModel(config, mlp_unit)
