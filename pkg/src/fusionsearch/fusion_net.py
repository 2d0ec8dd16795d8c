"""Discrete fusion network instantiated from a genotype."""

import torch
import torch.nn as nn

from fusionsearch.cell import FixedCell
from fusionsearch.feature_adapter import FeatureAdapter
from fusionsearch.hypernet import TaskHead
from fusionsearch.ops import op_param_count


class FusionNetwork(nn.Module):
    """Only features referenced by some cell get an adapter; only derived ops own weights."""

    def __init__(self, genotype, n_classes, dropout=0.0, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        space = genotype.space
        self.genotype = genotype
        self.used = genotype.used_features()
        self.adapters = nn.ModuleDict({
            str(i): FeatureAdapter(space.features[i], space.channels, space.length, dtype) for i in self.used
        })
        self.cells = nn.ModuleList([FixedCell(c.steps, space.channels, genotype.cell_output, dtype)
                                    for c in genotype.cells])
        self.head = TaskHead(space.channels, n_classes, dropout, dtype)

    def forward(self, raw_features):
        nodes = {i: self.adapters[str(i)](raw_features[i]) for i in self.used}
        n_feat = self.genotype.space.n_features
        for k, (gene, cell) in enumerate(zip(self.genotype.cells, self.cells)):
            i, j = gene.inputs
            nodes[n_feat + k] = cell(nodes[i], nodes[j])
        return self.head(nodes[n_feat + len(self.cells) - 1])

    def param_count(self):
        return sum(p.numel() for p in self.parameters())


def analytic_param_count(genotype, n_classes):
    """Adapters of used features + derived op weights + task head."""
    space = genotype.space
    c = space.channels
    adapters = sum(FeatureAdapter.param_count(space.features[i], c) for i in genotype.used_features())
    ops = sum(op_param_count(step.op, c) for cell in genotype.cells for step in cell.steps)
    return adapters + ops + TaskHead.param_count(c, n_classes)
