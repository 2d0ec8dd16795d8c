"""Upper level: α-weighted DAG over ``[features..., cells...]`` and the relaxed hypernet."""

from dataclasses import dataclass
from itertools import combinations

import torch
import torch.nn as nn

from fusionsearch.cell import SearchCell, derive_step, _argmax
from fusionsearch.feature_adapter import FeatureAdapter
from fusionsearch.genotype import CellGene, Genotype, StepGene

IDENTITY, ZERO = 0, 1
SLOT_RESOLUTIONS = ("split", "argmax")


def mixed_edge(alpha_edge, s):
    """``alpha_edge`` = [Identity logit, Zero logit]; the Zero branch contributes nothing."""
    return torch.softmax(alpha_edge, dim=0)[IDENTITY] * s


def identity_weights(alpha):
    """Per-edge softmax Identity weights for a (n_pred, 2) logit matrix."""
    return torch.softmax(alpha, dim=-1)[:, IDENTITY]


def cell_input_relaxed(node_values, alpha):
    """Sum of mixed edges from every predecessor; ``alpha`` has one row per predecessor."""
    if alpha.shape != (len(node_values), 2):
        raise ValueError(f"alpha must be ({len(node_values)}, 2), got {tuple(alpha.shape)}")
    shape = node_values[0].shape
    if any(v.shape != shape for v in node_values):
        raise ValueError("predecessor shapes differ")
    out = mixed_edge(alpha[0], node_values[0])
    for i in range(1, len(node_values)):
        out = out + mixed_edge(alpha[i], node_values[i])
    return out


def derive_cell_inputs(alpha):
    """Distinct predecessor pair (i, j), i < j, maximising the product of Identity weights.

    Ties resolve to the lexicographically smallest pair.
    """
    if alpha.shape[0] < 2:
        raise ValueError("a cell needs at least two predecessors")
    w = identity_weights(alpha.detach()).tolist()
    best, best_score = None, None
    for i, j in combinations(range(len(w)), 2):
        score = w[i] * w[j]
        if best_score is None or score > best_score:
            best, best_score = (i, j), score
    return best


def count_candidate_pairs(n_features, mode):
    if n_features < 2:
        raise ValueError("need at least two features")
    if mode == "cell_by_cell":
        return 2 * n_features
    if mode == "pairwise":
        return n_features * (n_features - 1) // 2
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class ArchParams:
    """Detached snapshot: ``alphas[k]`` is (n_pred_k, 2); ``steps[k][s]`` is (beta_x, beta_y, gamma)."""

    alphas: list
    steps: list

    def clone(self):
        return ArchParams([a.clone() for a in self.alphas],
                          [[tuple(t.clone() for t in st) for st in cell] for cell in self.steps])


def derive_step_split(beta_x, beta_y, gamma):
    """Step derivation for searches that fed one mixed tensor to both cell inputs.

    There the logits over nodes 0 (x) and 1 (y) are not separately identifiable,
    so their softmax mass is pooled into a single "cell input" candidate; when it
    wins, slot x reads x and slot y reads y.
    """
    gene = derive_step(beta_x, beta_y, gamma)

    def resolve(beta, own):
        w = torch.softmax(beta, dim=0).tolist()
        pooled = [w[0] + w[1]] + w[2:]
        choice = _argmax(pooled)
        return own if choice == 0 else choice + 1

    return StepGene(resolve(beta_x, 0), resolve(beta_y, 1), gene.op)


def discretize(arch, space, slot_resolution="split", cell_output="sum"):
    if slot_resolution not in SLOT_RESOLUTIONS:
        raise ValueError(f"slot_resolution must be one of {SLOT_RESOLUTIONS}")
    derive = derive_step_split if slot_resolution == "split" else derive_step
    cells = []
    for alpha, steps in zip(arch.alphas, arch.steps):
        genes = tuple(derive(bx, by, g) for bx, by, g in steps)
        cells.append(CellGene(derive_cell_inputs(alpha), genes))
    return Genotype(space, tuple(cells), cell_output)


class TaskHead(nn.Module):
    """Mean over L, dropout, affine map to class logits."""

    def __init__(self, channels, n_classes, dropout=0.0, dtype=None):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(channels, n_classes, dtype=dtype or torch.get_default_dtype())

    def forward(self, z):
        return self.fc(self.dropout(z.mean(dim=-1)))

    @staticmethod
    def param_count(channels, n_classes):
        return channels * n_classes + n_classes


class Hypernet(nn.Module):
    """Relaxed search model: every upper edge and inner step is a softmax mixture.

    The single mixed input of a cell feeds both of its slots; the task head
    reads the last cell.
    """

    def __init__(self, space, n_classes, dropout=0.0, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        self.space = space
        self.adapters = nn.ModuleList([FeatureAdapter(f, space.channels, space.length, dtype)
                                       for f in space.features])
        self.alphas = nn.ParameterList([nn.Parameter(torch.zeros(space.n_predecessors(k), 2, dtype=dtype))
                                        for k in range(space.n_cells)])
        self.cells = nn.ModuleList([SearchCell(space.n_steps, space.channels, dtype)
                                    for _ in range(space.n_cells)])
        self.head = TaskHead(space.channels, n_classes, dropout, dtype)

    def init_arch_(self, noise=1e-3, generator=None):
        with torch.no_grad():
            for p in self.arch_parameters():
                p.copy_(noise * torch.randn(p.shape, generator=generator, dtype=p.dtype))

    def arch_parameters(self):
        return list(self.alphas) + [p for c in self.cells for p in c.arch_parameters()]

    def weight_parameters(self):
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def arch(self):
        return ArchParams(
            [a.detach().clone() for a in self.alphas],
            [[(s.beta_x.detach().clone(), s.beta_y.detach().clone(), s.gamma.detach().clone())
              for s in c.steps] for c in self.cells],
        )

    def load_arch_(self, arch):
        with torch.no_grad():
            for a, v in zip(self.alphas, arch.alphas):
                a.copy_(v)
            for c, steps in zip(self.cells, arch.steps):
                for s, (bx, by, g) in zip(c.steps, steps):
                    s.beta_x.copy_(bx)
                    s.beta_y.copy_(by)
                    s.gamma.copy_(g)

    def adapt(self, raw_features):
        return [a(t) for a, t in zip(self.adapters, raw_features)]

    def forward_ncl(self, features):
        nodes = list(features)
        for alpha, cell in zip(self.alphas, self.cells):
            s = cell_input_relaxed(nodes, alpha)
            nodes.append(cell(s, s))
        return self.head(nodes[-1])

    def forward(self, raw_features):
        return self.forward_ncl(self.adapt(raw_features))

    def genotype(self, slot_resolution="split"):
        return discretize(self.arch(), self.space, slot_resolution)
