"""Lower level: a cell is an ordered sequence of inner steps over two inputs.

Node sequence of a cell: ``[x, y, step_1, ..., step_M]``. Step ``s`` (0-based)
reads two of the first ``2 + s`` nodes. The cell emits the sum of its step
outputs, or only the last step when ``output="last"``.
"""

import torch
import torch.nn as nn

from fusionsearch.genotype import StepGene
from fusionsearch.ops import NUM_OPS, PrimitiveOpKind, make_op


def _argmax(values):
    """First index of the maximum; deterministic lowest-index tie-break."""
    values = [float(v) for v in values]
    return max(range(len(values)), key=lambda i: (values[i], -i))


def mix(preds, logits):
    w = torch.softmax(logits, dim=0)
    out = w[0] * preds[0]
    for j in range(1, len(preds)):
        out = out + w[j] * preds[j]
    return out


def step_forward_relaxed(preds, beta_x, beta_y, gamma, ops):
    """Softmax-weighted mixture of every op applied to softly selected inputs.

    ``ops`` maps each PrimitiveOpKind to a callable ``(x, y) -> tensor``.
    """
    shape = preds[0].shape
    if any(p.shape != shape for p in preds):
        raise ValueError("predecessor shapes differ")
    if beta_x.shape != (len(preds),) or beta_y.shape != (len(preds),) or gamma.shape != (NUM_OPS,):
        raise ValueError("logit vector lengths do not match predecessors / op pool")
    x, y = mix(preds, beta_x), mix(preds, beta_y)
    w = torch.softmax(gamma, dim=0)
    out = None
    for kind in PrimitiveOpKind:
        if kind == PrimitiveOpKind.Zero:
            continue
        term = w[kind] * ops[kind](x, y)
        out = term if out is None else out + term
    return out


def derive_step(beta_x, beta_y, gamma):
    return StepGene(_argmax(beta_x), _argmax(beta_y), PrimitiveOpKind(_argmax(gamma)))


def _aggregate(step_outputs, output):
    if output == "last":
        return step_outputs[-1]
    if output != "sum":
        raise ValueError(f"unknown cell output mode {output!r}")
    out = step_outputs[0]
    for t in step_outputs[1:]:
        out = out + t
    return out


def cell_forward_relaxed(x, y, steps, output="sum"):
    """``steps``: sequence of ``(beta_x, beta_y, gamma, ops)`` tuples."""
    if x.shape != y.shape:
        raise ValueError(f"cell inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    nodes = [x, y]
    for beta_x, beta_y, gamma, ops in steps:
        nodes.append(step_forward_relaxed(nodes, beta_x, beta_y, gamma, ops))
    return _aggregate(nodes[2:], output)


def cell_forward_discrete(x, y, genes, ops, output="sum"):
    """``ops[s]`` is the callable implementing ``genes[s].op``."""
    if x.shape != y.shape:
        raise ValueError(f"cell inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    nodes = [x, y]
    for s, (gene, op) in enumerate(zip(genes, ops)):
        if not (0 <= gene.src_x < len(nodes) and 0 <= gene.src_y < len(nodes)):
            raise ValueError(f"step {s + 1}: source index out of range ({gene.src_x}, {gene.src_y})")
        nodes.append(op(nodes[gene.src_x], nodes[gene.src_y]))
    return _aggregate(nodes[2:], output)


class SearchStep(nn.Module):
    """All candidate ops of one step plus its (beta_x, beta_y, gamma) logits."""

    def __init__(self, index, channels, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        n_pred = 2 + index
        self.beta_x = nn.Parameter(torch.zeros(n_pred, dtype=dtype))
        self.beta_y = nn.Parameter(torch.zeros(n_pred, dtype=dtype))
        self.gamma = nn.Parameter(torch.zeros(NUM_OPS, dtype=dtype))
        self.ops = nn.ModuleList([make_op(k, channels, dtype) for k in PrimitiveOpKind])

    def arch_parameters(self):
        return [self.beta_x, self.beta_y, self.gamma]

    def as_tuple(self):
        return self.beta_x, self.beta_y, self.gamma, self.ops


class SearchCell(nn.Module):
    def __init__(self, n_steps, channels, dtype=None):
        super().__init__()
        self.steps = nn.ModuleList([SearchStep(s, channels, dtype) for s in range(n_steps)])

    def forward(self, x, y):
        return cell_forward_relaxed(x, y, [s.as_tuple() for s in self.steps])

    def arch_parameters(self):
        return [p for s in self.steps for p in s.arch_parameters()]

    def derive(self):
        return [derive_step(s.beta_x.detach(), s.beta_y.detach(), s.gamma.detach()) for s in self.steps]


class FixedCell(nn.Module):
    """Discrete cell built from a gene list; only the chosen ops own parameters."""

    def __init__(self, genes, channels, output="sum", dtype=None):
        super().__init__()
        self.genes = list(genes)
        self.output = output
        self.ops = nn.ModuleList([make_op(g.op, channels, dtype) for g in self.genes])

    def forward(self, x, y):
        return cell_forward_discrete(x, y, self.genes, self.ops, self.output)
