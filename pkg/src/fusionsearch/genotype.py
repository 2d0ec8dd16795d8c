"""Discrete fusion-network descriptions: validation, JSON round-trip, DOT export
and constructors for well-known fusion patterns."""

import hashlib
import json
from dataclasses import dataclass, field

from fusionsearch.ops import PrimitiveOpKind
from fusionsearch.space import SearchSpaceConfig

SCHEMA_VERSION = 1
CELL_OUTPUT_MODES = ("sum", "last")
PATTERN_KINDS = ("Sum", "ConcatFC", "MHA2", "AoA")


class GenotypeError(ValueError):
    """Schema or invariant violation; ``path`` points at the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class StepGene:
    """Sources index the cell's node sequence [x, y, step_1, ...]."""

    src_x: int
    src_y: int
    op: PrimitiveOpKind

    def __post_init__(self):
        object.__setattr__(self, "op", PrimitiveOpKind(self.op))


@dataclass(frozen=True)
class CellGene:
    inputs: tuple
    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        object.__setattr__(self, "steps", tuple(self.steps))


@dataclass(frozen=True)
class Genotype:
    space: SearchSpaceConfig
    cells: tuple
    cell_output: str = field(default="sum")

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        validate(self)

    def digest(self):
        return hashlib.sha256(_canonical(to_dict(self)).encode()).hexdigest()[:16]

    def used_features(self):
        f = self.space.n_features
        return sorted({i for c in self.cells for i in c.inputs if i < f})

    def with_cells(self, cells, n_steps=None):
        """Same inventory, different cells (``n_steps`` may change with them)."""
        space = self.space
        if n_steps is not None and n_steps != space.n_steps:
            space = SearchSpaceConfig(space.features, space.n_cells, n_steps, space.channels, space.length)
        return Genotype(space, tuple(cells), self.cell_output)


def validate(g):
    space = g.space
    if g.cell_output not in CELL_OUTPUT_MODES:
        raise GenotypeError("cell_output", f"must be one of {CELL_OUTPUT_MODES}, got {g.cell_output!r}")
    if len(g.cells) != space.n_cells:
        raise GenotypeError("cells", f"expected {space.n_cells} cells, got {len(g.cells)}")
    for k, cell in enumerate(g.cells):
        path = f"cells[{k}]"
        position = space.n_predecessors(k)
        if len(cell.inputs) != 2:
            raise GenotypeError(f"{path}.inputs", "exactly two inputs required")
        i, j = cell.inputs
        if not 0 <= i < j < position:
            raise GenotypeError(f"{path}.inputs", f"need 0 <= i < j < {position}, got ({i}, {j})")
        if len(cell.steps) != space.n_steps:
            raise GenotypeError(f"{path}.steps", f"expected {space.n_steps} steps, got {len(cell.steps)}")
        for s, step in enumerate(cell.steps):
            for slot in ("src_x", "src_y"):
                src = getattr(step, slot)
                if not 0 <= src < 2 + s:
                    raise GenotypeError(f"{path}.steps[{s}].{slot}",
                                        f"step {s + 1} may only read nodes 0..{s + 1}, got {src}")


def to_dict(g):
    return {
        "schema_version": SCHEMA_VERSION,
        "space": g.space.to_dict(),
        "cell_output": g.cell_output,
        "cells": [
            {
                "inputs": list(c.inputs),
                "steps": [{"src_x": s.src_x, "src_y": s.src_y, "op": s.op.name} for s in c.steps],
            }
            for c in g.cells
        ],
    }


def _canonical(d):
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def serialize(g):
    return (json.dumps(to_dict(g), indent=2) + "\n").encode()


def _get(d, key, path, kind):
    if not isinstance(d, dict) or key not in d:
        raise GenotypeError(f"{path}.{key}" if path else key, "missing field")
    v = d[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise GenotypeError(f"{path}.{key}" if path else key, f"expected integer, got {v!r}")
    if kind is not int and not isinstance(v, kind):
        raise GenotypeError(f"{path}.{key}" if path else key, f"expected {kind.__name__}, got {type(v).__name__}")
    return v


def from_dict(d):
    version = _get(d, "schema_version", "", int)
    if version != SCHEMA_VERSION:
        raise GenotypeError("schema_version", f"unsupported version {version}")
    try:
        space = SearchSpaceConfig.from_dict(_get(d, "space", "", dict))
    except (KeyError, TypeError, ValueError) as exc:
        raise GenotypeError("space", str(exc)) from exc
    cells = []
    for k, c in enumerate(_get(d, "cells", "", list)):
        path = f"cells[{k}]"
        inputs = _get(c, "inputs", path, list)
        steps = []
        for s, st in enumerate(_get(c, "steps", path, list)):
            spath = f"{path}.steps[{s}]"
            op = _get(st, "op", spath, str)
            if op not in PrimitiveOpKind.__members__:
                raise GenotypeError(f"{spath}.op", f"unknown op {op!r}")
            steps.append(StepGene(_get(st, "src_x", spath, int), _get(st, "src_y", spath, int),
                                  PrimitiveOpKind[op]))
        for n, v in enumerate(inputs):
            if isinstance(v, bool) or not isinstance(v, int):
                raise GenotypeError(f"{path}.inputs[{n}]", f"expected integer, got {v!r}")
        cells.append(CellGene(tuple(inputs), tuple(steps)))
    return Genotype(space, tuple(cells), d.get("cell_output", "sum"))


def deserialize(data):
    if isinstance(data, bytes):
        data = data.decode()
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GenotypeError("$", f"invalid JSON: {exc}") from exc
    return from_dict(d)


def save(g, path):
    with open(path, "wb") as f:
        f.write(serialize(g))


def load(path):
    with open(path, "rb") as f:
        return deserialize(f.read())


def to_dot(g):
    """Graphviz description. Steps are labelled C{cell}_S{step}, both 1-based."""
    names = g.space.node_names()
    lines = ["digraph genotype {", "  rankdir=LR;", '  node [fontname="Helvetica"];']
    used = sorted({i for c in g.cells for i in c.inputs if i < g.space.n_features})
    for i in used:
        lines.append(f'  "{names[i]}" [shape=box, style=filled, fillcolor=lightgrey];')
    for k, cell in enumerate(g.cells):
        n = k + 1
        lines.append(f"  subgraph cluster_C{n} {{")
        lines.append(f'    label="{names[g.space.n_features + k]}";')
        for s, step in enumerate(cell.steps):
            lines.append(f'    "C{n}_S{s + 1}" [label="C{n}_S{s + 1}\\n{step.op.name}"];')
        lines.append(f'    "{names[g.space.n_features + k]}" [shape=doublecircle];')
        lines.append("  }")
        sources = [names[cell.inputs[0]], names[cell.inputs[1]]] + [f"C{n}_S{s + 1}" for s in range(len(cell.steps))]
        for s, step in enumerate(cell.steps):
            lines.append(f'  "{sources[step.src_x]}" -> "C{n}_S{s + 1}" [label="x"];')
            lines.append(f'  "{sources[step.src_y]}" -> "C{n}_S{s + 1}" [label="y"];')
        outs = range(len(cell.steps)) if g.cell_output == "sum" else [len(cell.steps) - 1]
        for s in outs:
            lines.append(f'  "C{n}_S{s + 1}" -> "{names[g.space.n_features + k]}";')
    lines.append(f'  "{names[-1]}" -> "output";')
    lines.append('  "output" [shape=plaintext];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def make_pattern(kind, inputs=(0, 1), aoa_gate="x"):
    """Cell reproducing a hand-designed fusion module.

    AoA is attention followed by a LinearGLU of the attention output gated by
    cell input ``aoa_gate`` ("x", the query, or "y").
    """
    A, S = PrimitiveOpKind.Attention, PrimitiveOpKind
    if kind == "Sum":
        steps = [StepGene(0, 1, S.Sum)]
    elif kind == "ConcatFC":
        steps = [StepGene(0, 1, S.ConcatFC)]
    elif kind == "MHA2":
        steps = [StepGene(0, 1, A), StepGene(0, 1, A)]
    elif kind == "AoA":
        if aoa_gate not in ("x", "y"):
            raise ValueError(f"aoa_gate must be 'x' or 'y', got {aoa_gate!r}")
        steps = [StepGene(0, 1, A), StepGene(2, 0 if aoa_gate == "x" else 1, S.LinearGLU)]
    else:
        raise ValueError(f"unknown pattern {kind!r}; expected one of {PATTERN_KINDS}")
    return CellGene(tuple(inputs), tuple(steps))


def apply_pattern(g, kind, **kwargs):
    """Keep ``g``'s feature selection, replace every cell body with ``kind``."""
    cells = [make_pattern(kind, c.inputs, **kwargs) for c in g.cells]
    return g.with_cells(cells, n_steps=len(cells[0].steps))
