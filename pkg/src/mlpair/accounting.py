"""Closed-form parameter and MAC counts for the relation stacks and heads.

Conventions (also listed in every report's ``assumptions``):

* one multiply-accumulate = one FLOP unit; bias adds are free;
* LayerNorm, GeLU, ReLU, softmax and pooling cost nothing;
* an FC of shape A×A applied along one axis costs A² MACs per slot of the
  other axes, so MLP-S costs 2N²·T·D, MLP-T 2T²·N·D and MLP-R 2D²·T·N;
* GCN: 3D² MACs per token (W_a, W_b, W_g); adjacency products excluded;
* Transformer: 6D² MACs per token plus QKᵀ and AV score products (reported,
  never compared against the published table).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .relation import ModelConfig

ASSUMPTIONS = [
    "MAC convention: one multiply-accumulate counts as one FLOP; bias adds free",
    "excluded ops: LayerNorm, GeLU, ReLU, softmax, pooling",
    "tokens: actors inside a frame (spatial blocks) or frames of one actor (temporal blocks)",
    "GCN adjacency products (A·X, X·Xᵀ) excluded; Transformer score products QKᵀ, AV included",
    "MLP hidden width equals the mixed-axis length (expansion 1)",
    "N=12 actors is inferred from the published complexity fit, never stated by the source",
    "relation totals exclude the classification heads (listed as separate rows)",
]


@dataclass
class CostRow:
    name: str
    params: int
    macs: int
    relation: bool = True


@dataclass
class CostReport:
    rows: list[CostRow]
    frames: int
    actors: int
    dim: int
    assumptions: list[str] = field(default_factory=lambda: list(ASSUMPTIONS))

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def relation_params(self) -> int:
        return sum(r.params for r in self.rows if r.relation)

    @property
    def relation_macs(self) -> int:
        return sum(r.macs for r in self.rows if r.relation)


def mlp_block_cost(axis: str, t: int, n: int, d: int) -> tuple[int, int]:
    length = {"actor": n, "time": t, "channel": d}[axis]
    slots = t * n * d // length
    return 2 * (length * length + length) + 2 * d, 2 * length * length * slots


def gcn_block_cost(axis: str, t: int, n: int, d: int) -> tuple[int, int]:
    return 3 * d * d, 3 * d * d * t * n


def attn_block_cost(axis: str, t: int, n: int, d: int) -> tuple[int, int]:
    params = 6 * d * d + 6 * d + 4 * d
    seq_len, seqs = (n, t) if axis == "actor" else (t, n)
    scores = 2 * seq_len * seq_len * d * seqs
    return params, 6 * d * d * t * n + scores


def _unit_blocks(cfg: ModelConfig, kind: str) -> list[tuple[str, str]]:
    axis = "actor" if kind == "spatial" else "time"
    if cfg.method == "gcn":
        return [("gcn", axis)]
    if cfg.method == "transformer":
        return [("attn", axis)]
    blocks = []
    if cfg.token_mix:
        blocks.append(("mlp_s" if kind == "spatial" else "mlp_t", axis))
    if cfg.mlp_r:
        blocks.append(("mlp_r", "channel"))
    return blocks


_COST = {"mlp_s": mlp_block_cost, "mlp_t": mlp_block_cost, "mlp_r": mlp_block_cost,
         "gcn": gcn_block_cost, "attn": attn_block_cost}


def _build(cfg: ModelConfig, t: int, n: int, d: int) -> CostReport:
    rows = []
    for path in cfg.path_names:
        for kind in ("spatial", "temporal"):
            for i in range(cfg.blocks):
                for j, (name, axis) in enumerate(_unit_blocks(cfg, kind)):
                    p, m = _COST[name](axis, t, n, d)
                    rows.append(CostRow(f"{path}.{kind}.{i}.{j}.{name}", p, m))
        rows.append(CostRow(f"{path}.group_head", d * cfg.group_classes + cfg.group_classes,
                            d * cfg.group_classes, relation=False))
        rows.append(CostRow(f"{path}.individual_head", d * cfg.action_classes + cfg.action_classes,
                            n * d * cfg.action_classes, relation=False))
    if cfg.scene:
        rows.append(CostRow("scene_head", cfg.scene_dim * cfg.group_classes + cfg.group_classes,
                            cfg.scene_dim * cfg.group_classes, relation=False))
    return CostReport(rows, t, n, d)


def count_params(config: ModelConfig) -> CostReport:
    """Rows at the config's own T, N, D; the ``params`` column is what matters here."""
    return _build(config, config.frames, config.actors, config.dim)


def count_macs(config: ModelConfig, frames: int | None = None, actors: int | None = None, dim: int | None = None) -> CostReport:
    t = config.frames if frames is None else frames
    n = config.actors if actors is None else actors
    d = config.dim if dim is None else dim
    if min(t, n, d) < 1:
        raise ValueError("dims must be positive")
    return _build(config, t, n, d)


TABLE_FIELDS = ("method", "blocks", "params", "macs", "latency_us")


@dataclass
class ComparisonRow:
    method: str
    blocks: int
    params: int
    macs: int
    latency_us: float | None = None


def emit_comparison(methods, block_counts, frames: int = 9, actors: int = 12, dim: int = 256,
                    latencies: dict | None = None, **overrides) -> list[ComparisonRow]:
    """Relation-module params/MACs for each (method, blocks); latency filled from ``latencies``."""
    methods = list(methods)
    if not methods:
        raise ValueError("need at least one method")
    rows = []
    for method in methods:
        for b in block_counts:
            cfg = ModelConfig(method=method, frames=frames, actors=actors, dim=dim, blocks=b, **overrides)
            rep = count_macs(cfg)
            lat = (latencies or {}).get((method, b))
            rows.append(ComparisonRow(method, b, rep.relation_params, rep.relation_macs, lat))
    return rows


def comparison_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_FIELDS)
    for r in rows:
        w.writerow([r.method, r.blocks, r.params, r.macs, "" if r.latency_us is None else f"{r.latency_us:.1f}"])
    return buf.getvalue()


def comparison_table(rows: list[ComparisonRow]) -> str:
    lines = [f"{'method':<12} {'blocks':>6} {'params':>10} {'MACs':>12} {'latency':>12}"]
    for r in rows:
        lat = "-" if r.latency_us is None else f"{r.latency_us:.1f} us"
        lines.append(f"{r.method:<12} {r.blocks:>6} {r.params / 1e6:>9.2f}M {r.macs / 1e6:>11.2f}M {lat:>12}")
    return "\n".join(lines)


def report_table(report: CostReport) -> str:
    lines = [f"dims T={report.frames} N={report.actors} D={report.dim}",
             f"{'component':<36} {'params':>10} {'MACs':>14}"]
    for r in report.rows:
        lines.append(f"{r.name:<36} {r.params:>10} {r.macs:>14}")
    lines.append(f"{'relation total':<36} {report.relation_params:>10} {report.relation_macs:>14}")
    lines.append(f"{'model total':<36} {report.total_params:>10} {report.total_macs:>14}")
    lines.append("assumptions:")
    lines.extend(f"  - {a}" for a in report.assumptions)
    return "\n".join(lines)
