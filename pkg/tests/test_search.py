import json
import math

import numpy as np
import pytest
import torch

from fusionsearch import DTYPE
from fusionsearch import genotype as gt
from fusionsearch.fusion_net import FusionNetwork, analytic_param_count
from fusionsearch.genotype import CellGene, StepGene
from fusionsearch.hypernet import Hypernet, identity_weights
from fusionsearch.metrics import weighted_f1
from fusionsearch.ops import PrimitiveOpKind as K
from fusionsearch.search import (
    DivergenceError,
    TrainConfig,
    _cycle,
    _to_dtype,
    arch_step,
    baseline_genotype,
    cosine_lr,
    evaluate_genotype,
    late_fusion_genotype,
    loss_fn,
    run_baseline,
    run_search,
    space_for,
    weight_step,
)
from fusionsearch.tasks import PlantedTaskSpec, Split, generate
from oracles import central_difference, rel_err

TINY = dict(n_train=96, n_val=32, n_test=32)


@pytest.fixture(scope="module")
def tiny():
    return generate(PlantedTaskSpec(**TINY))


def _setup(data, seed=0, **space_kw):
    space = space_for(data, **space_kw)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    m = Hypernet(space, data.n_classes, 0.0, DTYPE)
    m.init_arch_(1e-3, generator=gen)
    cfg = TrainConfig(seed=seed)
    wo = torch.optim.Adam(m.weight_parameters(), lr=cfg.net_max_lr, weight_decay=cfg.net_l2)
    ao = torch.optim.Adam(m.arch_parameters(), lr=cfg.arch_lr, weight_decay=cfg.arch_l2)
    return m, wo, ao, gen


def test_cosine_schedule_closed_form():
    ep, hi, lo = 20, 3e-3, 1e-6
    assert cosine_lr(0, ep, hi, lo) == pytest.approx(hi, rel=1e-12)
    assert cosine_lr(ep // 2, ep, hi, lo) == pytest.approx((hi + lo) / 2, rel=1e-12)
    assert cosine_lr(ep, ep, hi, lo) == pytest.approx(lo, rel=1e-12)
    assert cosine_lr(5, ep, hi, lo) == pytest.approx(lo + 0.5 * (hi - lo) * (1 + math.cos(math.pi / 4)))


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(arch_lr=0.0), dict(net_l2=-1.0),
                                dict(net_min_lr=1.0, net_max_lr=0.1), dict(dropout=1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def _snapshot(params):
    return [p.detach().clone() for p in params]


def test_weight_step_leaves_arch_untouched(tiny):
    m, wo, _, _ = _setup(tiny, n_cells=2, n_steps=2)
    arch, weights = _snapshot(m.arch_parameters()), _snapshot(m.weight_parameters())
    weight_step(m, _to_dtype(tiny.train).subset(torch.arange(32)), wo, "multiclass")
    assert all(torch.equal(a, b) for a, b in zip(arch, m.arch_parameters()))
    assert any(not torch.equal(a, b) for a, b in zip(weights, m.weight_parameters()))


def test_arch_step_leaves_weights_untouched(tiny):
    m, _, ao, _ = _setup(tiny, n_cells=2, n_steps=2)
    arch, weights = _snapshot(m.arch_parameters()), _snapshot(m.weight_parameters())
    arch_step(m, _to_dtype(tiny.val), ao, "multiclass")
    assert all(torch.equal(a, b) for a, b in zip(weights, m.weight_parameters()))
    assert any(not torch.equal(a, b) for a, b in zip(arch, m.arch_parameters()))


def test_weight_steps_reduce_loss_on_separable_task():
    data = generate(PlantedTaskSpec(planted_op=K.Sum, label_noise=0.0, n_train=128, n_val=8, n_test=8))
    m, wo, _, _ = _setup(data)
    batch = _to_dtype(data.train)
    losses = [weight_step(m, batch, wo, "multiclass") for _ in range(50)]
    assert losses[-1] < 0.5 * losses[0]


def test_validation_gradient_wrt_gamma_logit(tiny):
    m, _, _, _ = _setup(tiny, n_cells=2, n_steps=2)
    m.eval()
    val = _to_dtype(tiny.val)
    gamma = m.cells[1].steps[1].gamma

    def loss():
        return loss_fn(m(val.features), val.labels, "multiclass")

    m.zero_grad()
    loss().backward()
    for k in range(5):
        num = central_difference(loss, gamma, (k,))
        assert rel_err(gamma.grad[k].item(), num) < 1e-4


def test_arch_step_raises_planted_identity_weights():
    """Only (A_1, B_0) is informative; both of its Identity weights should grow."""
    data = generate(PlantedTaskSpec(planted_pair=(1, 3), n_train=1000, n_val=500, n_test=10))
    wins = 0
    for seed in range(5):
        m, wo, ao, gen = _setup(data, seed=seed)
        tr, va = _cycle(_to_dtype(data.train), 64, gen), _cycle(_to_dtype(data.val), 64, gen)
        before = identity_weights(m.alphas[0].detach()).clone()
        for _ in range(100):
            weight_step(m, next(tr), wo, "multiclass")
            arch_step(m, next(va), ao, "multiclass")
        after = identity_weights(m.alphas[0].detach())
        wins += bool(after[1] > before[1] and after[3] > before[3])
    assert wins >= 4


def test_one_epoch_one_batch_accounting(tiny):
    cfg = TrainConfig(epochs=1, batch_size=1000)
    _, state = run_search(tiny, space_for(tiny), cfg)
    assert (state.weight_steps, state.arch_steps, state.epoch) == (1, 1, 1)


def test_best_score_is_running_max(tiny):
    g, state = run_search(tiny, space_for(tiny), TrainConfig(epochs=6, batch_size=32))
    scores = [r["val_metric"] for r in state.history]
    assert [r["best_score"] for r in state.history] == list(np.maximum.accumulate(scores))
    assert state.best_score == max(scores)
    best_epoch = scores.index(max(scores))
    assert g.digest() == state.history[best_epoch]["genotype"]


def test_search_is_reproducible_and_logs(tiny, tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=32, seed=5)
    g1, s1 = run_search(tiny, space_for(tiny, n_cells=2, n_steps=2), cfg, out_dir=tmp_path)
    g2, s2 = run_search(tiny, space_for(tiny, n_cells=2, n_steps=2), cfg)
    assert g1.digest() == g2.digest()
    assert s1.history == s2.history
    lines = [json.loads(x) for x in (tmp_path / "search_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2, 3]
    assert {"epoch", "train_loss", "val_metric", "genotype"} <= set(lines[0])


def test_resume_matches_uninterrupted_run(tiny, tmp_path):
    space = space_for(tiny, n_cells=2, n_steps=1)
    full_g, full = run_search(tiny, space, TrainConfig(epochs=3, batch_size=32, seed=2))
    run_search(tiny, space, TrainConfig(epochs=1, batch_size=32, seed=2), out_dir=tmp_path)
    g, resumed = run_search(tiny, space, TrainConfig(epochs=3, batch_size=32, seed=2), out_dir=tmp_path,
                            resume=tmp_path / "checkpoint.pt")
    assert g == full_g
    assert resumed.history == full.history
    assert (resumed.weight_steps, resumed.arch_steps) == (full.weight_steps, full.arch_steps)


def test_search_errors(tiny):
    empty = Split([f[:0] for f in tiny.val.features], tiny.val.labels[:0])
    broken = type(tiny)(tiny.train, empty, tiny.test, tiny.features, tiny.n_classes)
    with pytest.raises(ValueError):
        run_search(broken, space_for(tiny), TrainConfig(epochs=1))
    feats = [f.clone() for f in tiny.train.features]
    feats[0][0].fill_(float("inf"))
    bad = type(tiny)(Split(feats, tiny.train.labels), tiny.val, tiny.test, tiny.features, tiny.n_classes)
    m, wo, _, _ = _setup(bad)
    with pytest.raises((DivergenceError, FloatingPointError, ValueError)):
        weight_step(m, _to_dtype(bad.train), wo, "multiclass")
    m, wo, _, _ = _setup(tiny)
    with torch.no_grad():
        m.head.fc.bias.fill_(float("nan"))
    with pytest.raises(DivergenceError):
        weight_step(m, _to_dtype(tiny.train), wo, "multiclass")


def test_weighted_f1_hand_table():
    y_true = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]
    y_pred = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1]
    # per-class F1: 4/7 (support 4), 4/7 (support 3), 2/3 (support 3) -> (16/7 + 12/7 + 2) / 10
    assert weighted_f1(y_true, y_pred) == pytest.approx(0.6, abs=1e-12)
    ind_t = np.eye(3, dtype=int)[y_true]
    ind_p = np.eye(3, dtype=int)[y_pred]
    assert weighted_f1(ind_t, ind_p) == pytest.approx(0.6, abs=1e-12)
    assert weighted_f1([[0, 0]], [[1, 0]]) == 0.0


def _one_cell(space, inputs, steps):
    return gt.Genotype(space, (CellGene(inputs, steps),))


def test_evaluate_genotype_signal_beats_bias_and_is_deterministic():
    data = generate(PlantedTaskSpec(planted_op=K.Sum, label_noise=0.0, n_train=400, n_val=100, n_test=200))
    space = space_for(data)
    cfg = TrainConfig(eval_epochs=15)
    summed = _one_cell(space, (1, 5), gt.make_pattern("Sum").steps)
    zero = _one_cell(space, (1, 5), (StepGene(0, 1, K.Zero),))
    a, b = evaluate_genotype(summed, data, cfg), evaluate_genotype(summed, data, cfg)
    assert a == b
    assert a.metric > evaluate_genotype(zero, data, cfg).metric + 0.2
    assert a.param_count == analytic_param_count(summed, data.n_classes)


def test_param_count_matches_analytic_formula():
    data = generate(PlantedTaskSpec(**TINY))
    space = space_for(data, n_cells=2, n_steps=2, channels=5, length=3)
    g = gt.Genotype(space, (
        CellGene((0, 4), (StepGene(0, 1, K.LinearGLU), StepGene(2, 1, K.ConcatFC))),
        CellGene((4, 6), (StepGene(0, 1, K.Attention), StepGene(2, 0, K.Sum))),
    ))
    # adapters for A_0 (8 -> 5) and B_1 (16 -> 5), 2C^2 + (2C^2 + C), head C*K + K
    expected = (8 * 5 + 5) + (16 * 5 + 5) + 50 + 55 + (5 * 2 + 2)
    assert analytic_param_count(g, 2) == expected == FusionNetwork(g, 2, 0.0, DTYPE).param_count()


def test_fixed_sum_baseline_is_the_sum_pattern(tiny):
    space = space_for(tiny)
    cfg = TrainConfig(eval_epochs=3)
    searched = _one_cell(space, (1, 5), (StepGene(0, 1, K.LinearGLU),))
    base = run_baseline("fixed:Sum", tiny, space, cfg, searched, trials=1).values[0]
    direct = evaluate_genotype(_one_cell(space, (1, 5), gt.make_pattern("Sum").steps), tiny, cfg).metric
    assert base == direct


def test_random_baseline_reports_five_trials(tiny):
    space = space_for(tiny)
    searched = _one_cell(space, (1, 5), (StepGene(0, 1, K.ConcatFC),))
    res = run_baseline("random_selection", tiny, space, TrainConfig(eval_epochs=2), searched)
    assert len(res.values) == 5
    assert res.mean == pytest.approx(np.mean(res.values)) and res.std == pytest.approx(np.std(res.values))
    picks = {baseline_genotype("random_selection", space, searched, s).cells[0].inputs for s in range(20)}
    assert len(picks) > 3
    assert all(baseline_genotype("random_selection", space, searched, s).cells[0].steps == searched.cells[0].steps
               for s in range(5))


def test_late_fusion_uses_last_feature_per_modality(tiny):
    g = late_fusion_genotype(space_for(tiny, n_cells=2))
    names = g.space.node_names()
    assert [names[i] for i in g.cells[0].inputs] == ["A_2", "B_2"]
    assert g.cells[0].steps[0].op == K.ConcatFC
    assert g.cells[1].inputs[1] == g.space.n_features
    with pytest.raises(ValueError):
        baseline_genotype("nope", g.space, g, 0)
