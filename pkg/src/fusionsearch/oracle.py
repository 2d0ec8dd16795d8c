"""Exhaustive enumeration and ranking of tiny genotype spaces."""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, product

import torch

from fusionsearch import genotype as gt
from fusionsearch.ops import PrimitiveOpKind
from fusionsearch.search import _to_dtype, evaluate, train_fusion_network

DEFAULT_CAP = 10_000
DEFAULT_EPOCHS = 10


def _cell_choices(space, k):
    pairs = list(combinations(range(space.n_predecessors(k)), 2))
    step_choices = [
        [gt.StepGene(sx, sy, op) for sx in range(2 + s) for sy in range(2 + s) for op in PrimitiveOpKind]
        for s in range(space.n_steps)
    ]
    for pair in pairs:
        for steps in product(*step_choices):
            yield gt.CellGene(pair, steps)


def enumerate_genotypes(space, cap=DEFAULT_CAP):
    """Every valid genotype of ``space`` exactly once."""
    total = space.count_genotypes()
    if total > cap:
        raise ValueError(f"space has {total} genotypes, above the cap of {cap}")
    per_cell = [list(_cell_choices(space, k)) for k in range(space.n_cells)]
    for cells in product(*per_cell):
        yield gt.Genotype(space, cells)


@dataclass
class RankEntry:
    digest: str
    val: float
    test: float
    genotype: gt.Genotype = field(repr=False, default=None)


@dataclass
class GenotypeRanking:
    entries: list
    space_size: int
    epochs: int

    def rank_of(self, digest):
        """1-based rank: one plus the number of genotypes with strictly higher val metric."""
        for e in self.entries:
            if e.digest == digest:
                return 1 + sum(o.val > e.val for o in self.entries)
        raise KeyError(digest)

    def percentile(self, digest):
        return self.rank_of(digest) / self.space_size

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rank", "digest", "val_metric", "test_metric", "genotype"])
            for e in self.entries:
                w.writerow([self.rank_of(e.digest), e.digest, repr(e.val), repr(e.test),
                            gt._canonical(gt.to_dict(e.genotype)) if e.genotype else ""])

    @classmethod
    def from_csv(cls, path, epochs=DEFAULT_EPOCHS):
        entries = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                g = gt.deserialize(row["genotype"]) if row["genotype"] else None
                entries.append(RankEntry(row["digest"], float(row["val_metric"]), float(row["test_metric"]), g))
        return cls(entries, len(entries), epochs)


def _score(args):
    g, data, cfg, epochs = args
    torch.set_num_threads(1)
    model = train_fusion_network(g, data.train, data.n_classes, data.task_mode, cfg, epochs)
    return (evaluate(model, _to_dtype(data.val), data.task_mode),
            evaluate(model, _to_dtype(data.test), data.task_mode))


def brute_force_rank(space, data, cfg, epochs=DEFAULT_EPOCHS, cap=DEFAULT_CAP, workers=1):
    """Train every genotype on the train split with identical seeds; sort by val metric.

    ``workers > 1`` trains genotypes in separate processes.
    """
    genotypes = list(enumerate_genotypes(space, cap))
    jobs = [(g, data, cfg, epochs) for g in genotypes]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            scores = list(pool.map(_score, jobs))
    else:
        scores = [_score(j) for j in jobs]
    entries = [RankEntry(g.digest(), v, t, g) for g, (v, t) in zip(genotypes, scores)]
    entries.sort(key=lambda e: -e.val)
    return GenotypeRanking(entries, len(entries), epochs)
