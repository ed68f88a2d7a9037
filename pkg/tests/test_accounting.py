import csv
import io

import numpy as np
import pytest

from mlpair.accounting import (
    ASSUMPTIONS,
    comparison_csv,
    comparison_table,
    count_macs,
    count_params,
    emit_comparison,
    mlp_block_cost,
    report_table,
)
from mlpair.baselines import build_model
from mlpair.relation import MlpBlock, ModelConfig

TABLE = dict(frames=9, actors=12, dim=256)


def relation_buffer_sum(cfg):
    return sum(p.data.size for _, p in build_model(cfg).relation_parameters())


def test_single_mlp_r_weight_shapes():
    block = MlpBlock("channel", 256, 256, 0.0, np.random.default_rng(0))
    fc = sum(getattr(block, k).data.size for k in ("w1", "b1", "w2", "b2"))
    assert fc == 2 * (256**2 + 256) == 131_584
    params, _ = mlp_block_cost("channel", 9, 12, 256)
    assert params == fc + 2 * 256  # LayerNorm scale and shift


@pytest.mark.parametrize("blocks,target", [(1, 0.53), (2, 1.05), (3, 1.58), (4, 2.11), (5, 2.64)])
def test_mlp_params_match_published(blocks, target):
    cfg = ModelConfig(blocks=blocks, **TABLE)
    analytic = count_params(cfg).relation_params
    assert analytic == relation_buffer_sum(cfg)
    assert abs(analytic / 1e6 - target) / target < 0.02


def test_gcn_and_transformer_params():
    gcn = ModelConfig(method="gcn", **TABLE)
    assert count_params(gcn).relation_params == relation_buffer_sum(gcn) == 786_432
    tr = ModelConfig(method="transformer", **TABLE)
    assert count_params(tr).relation_params == relation_buffer_sum(tr)
    assert abs(count_params(tr).relation_params / 1e6 - 1.58) / 1.58 < 0.02


def test_macs_match_published():
    mlp = count_macs(ModelConfig(**TABLE)).relation_macs
    assert mlp == 58_945_536
    assert abs(mlp / 1e6 - 58.52) / 58.52 < 0.03
    gcn = count_macs(ModelConfig(method="gcn", **TABLE)).relation_macs
    assert gcn == 84_934_656
    assert abs(gcn / 1e6 - 84.96) / 84.96 < 0.01


def test_zero_blocks_zero_relation_cost():
    rep = count_macs(ModelConfig(blocks=0, **TABLE))
    assert rep.relation_macs == 0 and rep.relation_params == 0


def test_totals_are_row_sums():
    rep = count_macs(ModelConfig(scene=True, **TABLE))
    assert rep.total_params == sum(r.params for r in rep.rows)
    assert rep.total_macs == sum(r.macs for r in rep.rows)
    assert rep.total_params == build_model(ModelConfig(scene=True, **TABLE)).num_parameters()


def test_macs_linear_in_blocks():
    one = count_macs(ModelConfig(**TABLE)).relation_macs
    for b in range(2, 6):
        assert count_macs(ModelConfig(blocks=b, **TABLE)).relation_macs == b * one


def test_channel_mixing_quadratic_in_dim():
    small = {r.name: r.macs for r in count_macs(ModelConfig(**TABLE)).rows}
    big = {r.name: r.macs for r in count_macs(ModelConfig(**TABLE), dim=512).rows}
    for name in small:
        if name.endswith("mlp_r"):
            assert big[name] == 4 * small[name]
        elif name.endswith(("mlp_s", "mlp_t")):
            assert big[name] == 2 * small[name]


def test_count_macs_rejects_bad_dims():
    with pytest.raises(ValueError):
        count_macs(ModelConfig(**TABLE), frames=0)


def test_assumptions_listed():
    rep = count_params(ModelConfig(**TABLE))
    assert rep.assumptions == ASSUMPTIONS
    assert any("N=12" in a for a in rep.assumptions)
    assert "assumptions:" in report_table(rep)


def test_comparison_ordering_and_buffers():
    rows = emit_comparison(["mlp", "gcn", "transformer"], [1, 2])
    by = {(r.method, r.blocks): r for r in rows}
    assert by[("mlp", 1)].params < by[("gcn", 1)].params < by[("transformer", 1)].params
    for r in rows:
        assert r.params == relation_buffer_sum(ModelConfig(method=r.method, blocks=r.blocks, **TABLE))


def test_comparison_csv_exact_integers():
    rows = emit_comparison(["mlp"], [1], latencies={("mlp", 1): 123.456})
    parsed = list(csv.DictReader(io.StringIO(comparison_csv(rows))))
    assert parsed == [{"method": "mlp", "blocks": "1", "params": "531416", "macs": "58945536", "latency_us": "123.5"}]
    assert "0.53M" in comparison_table(rows)


def test_empty_block_counts_header_only():
    assert comparison_csv(emit_comparison(["mlp"], [])) == "method,blocks,params,macs,latency_us\n"


def test_empty_methods_rejected():
    with pytest.raises(ValueError):
        emit_comparison([], [1])
