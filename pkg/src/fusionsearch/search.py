"""Alternating first-order search of network weights and architecture logits,
evaluation retraining of derived genotypes, and ablation baselines."""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
import torch
import torch.nn.functional as F

from fusionsearch import DTYPE
from fusionsearch import genotype as gt
from fusionsearch.fusion_net import FusionNetwork
from fusionsearch.hypernet import Hypernet
from fusionsearch.metrics import task_metric
from fusionsearch.space import SearchSpaceConfig

log = logging.getLogger(__name__)

BASELINE_KINDS = ("random_selection", "late_fusion") + tuple(f"fixed:{k}" for k in gt.PATTERN_KINDS)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    dropout: float = 0.0
    arch_lr: float = 3e-3
    arch_l2: float = 1e-3
    net_max_lr: float = 3e-3
    net_min_lr: float = 1e-6
    net_l2: float = 1e-4
    seed: int = 0
    eval_epochs: int = 40
    arch_noise: float = 1e-3
    slot_resolution: str = "split"

    def __post_init__(self):
        if self.epochs < 1 or self.eval_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if min(self.arch_lr, self.net_max_lr, self.net_min_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.arch_l2, self.net_l2) < 0:
            raise ValueError("weight decay must be non-negative")
        if self.net_min_lr > self.net_max_lr:
            raise ValueError("net_min_lr must not exceed net_max_lr")

    def replace(self, **kw):
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class SearchState:
    model: Hypernet
    best_genotype: gt.Genotype
    best_score: float = -math.inf
    history: list = field(default_factory=list)
    epoch: int = 0
    weight_steps: int = 0
    arch_steps: int = 0


def cosine_lr(epoch, total, max_lr, min_lr):
    """Cosine annealing from ``max_lr`` at epoch 0 to ``min_lr`` at epoch ``total``."""
    return min_lr + 0.5 * (max_lr - min_lr) * (1 + math.cos(math.pi * epoch / total))


def space_for(data, n_cells=1, n_steps=1, channels=8, length=4):
    return SearchSpaceConfig(data.features, n_cells, n_steps, channels, length)


def batches(split, batch_size, generator=None):
    n = len(split)
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for lo in range(0, n, batch_size):
        yield split.subset(order[lo:lo + batch_size])


def loss_fn(logits, labels, task_mode):
    if task_mode == "multiclass":
        return F.cross_entropy(logits, labels.long())
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def _finite_or_raise(loss, what):
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite {what} loss ({loss.item()})")


def weight_step(model, batch, optimizer, task_mode):
    """One Adam step on network weights from a training batch; arch logits untouched."""
    model.train()
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model(batch.features), batch.labels, task_mode)
    _finite_or_raise(loss, "training")
    loss.backward()
    optimizer.step()
    return loss.item()


def arch_step(model, batch, optimizer, task_mode):
    """One Adam step on (alpha, beta, gamma) from a validation batch; weights untouched."""
    model.train()
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model(batch.features), batch.labels, task_mode)
    _finite_or_raise(loss, "validation")
    loss.backward()
    optimizer.step()
    return loss.item()


@torch.no_grad()
def evaluate(model, split, task_mode, batch_size=512):
    model.eval()
    logits = torch.cat([model(b.features) for b in batches(split, batch_size)])
    return task_metric(logits, split.labels, task_mode)


def _to_dtype(split):
    return type(split)([f.to(DTYPE) for f in split.features], split.labels)


def _cycle(split, batch_size, generator):
    while True:
        yield from batches(split, batch_size, generator)


def _save_checkpoint(path, state, w_opt, a_opt, gen):
    torch.save({
        "epoch": state.epoch,
        "model": state.model.state_dict(),
        "w_opt": w_opt.state_dict(),
        "a_opt": a_opt.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "batch_rng": gen.get_state(),
        "best_genotype": gt.serialize(state.best_genotype).decode(),
        "best_score": state.best_score,
        "history": state.history,
        "weight_steps": state.weight_steps,
        "arch_steps": state.arch_steps,
    }, path)


def run_search(data, space, cfg, out_dir=None, resume=None):
    """Alternate weight steps (train) and arch steps (val), one arch batch per weight batch.

    After every epoch the genotype is derived and kept as best if the relaxed
    hypernet reaches a strictly higher validation metric. Returns (best genotype, state).
    """
    if min(len(data.train), len(data.val)) == 0:
        raise ValueError("train and val splits must be non-empty")
    train, val = _to_dtype(data.train), _to_dtype(data.val)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = Hypernet(space, data.n_classes, cfg.dropout, DTYPE)
    model.init_arch_(cfg.arch_noise, generator=gen)
    w_opt = torch.optim.Adam(model.weight_parameters(), lr=cfg.net_max_lr, weight_decay=cfg.net_l2)
    a_opt = torch.optim.Adam(model.arch_parameters(), lr=cfg.arch_lr, weight_decay=cfg.arch_l2)
    state = SearchState(model, model.genotype(cfg.slot_resolution))
    if resume is not None:
        ck = torch.load(resume, weights_only=False)
        model.load_state_dict(ck["model"])
        w_opt.load_state_dict(ck["w_opt"])
        a_opt.load_state_dict(ck["a_opt"])
        torch.set_rng_state(ck["torch_rng"])
        gen.set_state(ck["batch_rng"])
        state.best_genotype = gt.deserialize(ck["best_genotype"])
        state.best_score = ck["best_score"]
        state.history = list(ck["history"])
        state.epoch = ck["epoch"]
        state.weight_steps, state.arch_steps = ck["weight_steps"], ck["arch_steps"]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    while state.epoch < cfg.epochs:
        # per-epoch stream keeps epoch-boundary checkpoints exactly resumable
        val_stream = _cycle(val, cfg.batch_size, gen)
        lr = cosine_lr(state.epoch, cfg.epochs, cfg.net_max_lr, cfg.net_min_lr)
        for group in w_opt.param_groups:
            group["lr"] = lr
        losses = []
        for tb in batches(train, cfg.batch_size, gen):
            losses.append(weight_step(model, tb, w_opt, data.task_mode))
            state.weight_steps += 1
            arch_step(model, next(val_stream), a_opt, data.task_mode)
            state.arch_steps += 1
        g = model.genotype(cfg.slot_resolution)
        score = evaluate(model, val, data.task_mode)
        if score > state.best_score:
            state.best_score, state.best_genotype = score, g
        state.epoch += 1
        record = {"epoch": state.epoch, "train_loss": float(np.mean(losses)), "val_metric": score,
                  "lr": lr, "genotype": g.digest(), "best_score": state.best_score}
        state.history.append(record)
        log.info(json.dumps(record))
        if out_dir:
            with open(os.path.join(out_dir, "search_log.jsonl"), "a") as f:
                f.write(json.dumps(record) + "\n")
            _save_checkpoint(os.path.join(out_dir, "checkpoint.pt"), state, w_opt, a_opt, gen)
    return state.best_genotype, state


def train_fusion_network(genotype, split, n_classes, task_mode, cfg, epochs):
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    split = _to_dtype(split)
    model = FusionNetwork(genotype, n_classes, cfg.dropout, DTYPE)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.net_max_lr, weight_decay=cfg.net_l2)
    for epoch in range(epochs):
        for group in opt.param_groups:
            group["lr"] = cosine_lr(epoch, epochs, cfg.net_max_lr, cfg.net_min_lr)
        model.train()
        for b in batches(split, cfg.batch_size, gen):
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(model(b.features), b.labels, task_mode)
            _finite_or_raise(loss, "evaluation-training")
            loss.backward()
            opt.step()
    return model


@dataclass
class EvalResult:
    metric: float
    param_count: int
    digest: str


def evaluate_genotype(genotype, data, cfg):
    """Fresh network from ``genotype``, trained on train+val, scored on test."""
    model = train_fusion_network(genotype, data.train.concat(data.val), data.n_classes,
                                 data.task_mode, cfg, cfg.eval_epochs)
    metric = evaluate(model, _to_dtype(data.test), data.task_mode)
    return EvalResult(metric, model.param_count(), genotype.digest())


@dataclass
class BaselineResult:
    kind: str
    values: list

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))


def random_selection_genotype(genotype, rng):
    """Uniformly re-sample every cell's input pair; cell bodies are kept."""
    cells = []
    for k, cell in enumerate(genotype.cells):
        pairs = list(combinations(range(genotype.space.n_predecessors(k)), 2))
        cells.append(gt.CellGene(pairs[rng.integers(len(pairs))], cell.steps))
    return genotype.with_cells(cells)


def late_fusion_genotype(space):
    """ConcatFC over the last feature of each modality, chaining further cells."""
    last = {}
    for i, f in enumerate(space.features):
        last[f.modality] = i
    lasts = [last[m] for m in space.modalities]
    if len(lasts) < 2:
        raise ValueError("late fusion needs at least two modalities")
    concat = gt.StepGene(0, 1, gt.PrimitiveOpKind.ConcatFC)
    cells = [gt.CellGene(tuple(sorted(lasts[:2])), (concat,))]
    for k in range(1, space.n_cells):
        prev = space.n_features + k - 1
        cells.append(gt.CellGene((lasts[(k + 1) % len(lasts)], prev), (concat,)))
    s = SearchSpaceConfig(space.features, space.n_cells, 1, space.channels, space.length)
    return gt.Genotype(s, tuple(cells))


def baseline_genotype(kind, space, searched, trial_seed):
    if kind == "random_selection":
        return random_selection_genotype(searched, np.random.default_rng(trial_seed))
    if kind == "late_fusion":
        return late_fusion_genotype(space)
    if kind.startswith("fixed:"):
        return gt.apply_pattern(searched, kind.split(":", 1)[1])
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


def run_baseline(kind, data, space, cfg, searched, trials=5):
    """Evaluate a baseline over ``trials`` seeds (``cfg.seed + t``)."""
    values = []
    for t in range(trials):
        tcfg = cfg.replace(seed=cfg.seed + t)
        g = baseline_genotype(kind, space, searched, tcfg.seed)
        values.append(evaluate_genotype(g, data, tcfg).metric)
    return BaselineResult(kind, values)
