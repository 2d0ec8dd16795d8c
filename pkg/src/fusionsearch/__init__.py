"""Bilevel differentiable search over multimodal feature-fusion networks."""

import torch

DTYPE = torch.float64

from fusionsearch.ops import PrimitiveOpKind  # noqa: E402
from fusionsearch.space import FeatureSpec, SearchSpaceConfig  # noqa: E402
from fusionsearch.genotype import Genotype, CellGene, StepGene  # noqa: E402

__all__ = [
    "DTYPE",
    "PrimitiveOpKind",
    "FeatureSpec",
    "SearchSpaceConfig",
    "Genotype",
    "CellGene",
    "StepGene",
]
