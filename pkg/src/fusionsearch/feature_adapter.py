"""Reshaping of arbitrary-rank unimodal features to the common (N, C, L) layout."""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from fusionsearch.ops import channel_map


@dataclass
class RawFeature:
    """A batched raw feature; ``axis_roles`` tags every axis including the batch axis."""

    modality: str
    index: int
    tensor: torch.Tensor
    axis_roles: tuple

    def __post_init__(self):
        self.axis_roles = tuple(self.axis_roles)
        if len(self.axis_roles) != self.tensor.dim():
            raise ValueError(f"axis_roles {self.axis_roles} do not match tensor rank {self.tensor.dim()}")
        if not 2 <= self.tensor.dim() <= 5:
            raise ValueError(f"raw features must have rank 2-5, got {self.tensor.dim()}")
        if self.axis_roles.count("batch") != 1 or self.axis_roles[0] != "batch":
            raise ValueError("exactly one batch axis is required and it must come first")
        if self.axis_roles.count("channel") != 1:
            raise ValueError("no identifiable channel axis" if "channel" not in self.axis_roles
                             else "more than one channel axis")
        if self.axis_roles.count("temporal") > 1:
            raise ValueError("at most one temporal axis is allowed")
        if any(s < 1 for s in self.tensor.shape):
            raise ValueError("all dimensions must be >= 1")


def to_ncl(tensor, axis_roles, target_l):
    """Mean-pool spatial axes, then linearly resample time to ``target_l`` (endpoints aligned).

    ``axis_roles`` includes the batch axis. A feature without a temporal axis is
    treated as a length-1 sequence, which interpolation replicates.
    """
    if not torch.isfinite(tensor).all():
        raise ValueError("raw feature contains non-finite values")
    spatial = [i for i, r in enumerate(axis_roles) if r == "spatial"]
    roles = list(axis_roles)
    if spatial:
        tensor = tensor.mean(dim=spatial)
        roles = [r for r in roles if r != "spatial"]
    c_axis = roles.index("channel")
    if "temporal" in roles:
        t_axis = roles.index("temporal")
        tensor = tensor.permute(0, c_axis, t_axis)
    else:
        tensor = tensor.movedim(c_axis, 1).unsqueeze(-1)
    if tensor.shape[-1] != target_l:
        tensor = F.interpolate(tensor, size=target_l, mode="linear", align_corners=True)
    return tensor


def reshape_feature(raw, target_c, target_l, weight, bias=None):
    """Map a RawFeature to (N, target_c, target_l).

    ``weight`` has shape (C_raw, target_c); ``bias`` (target_c,) is optional.
    """
    if target_c < 1 or target_l < 1:
        raise ValueError("target_c and target_l must be >= 1")
    x = to_ncl(raw.tensor, raw.axis_roles, target_l)
    if weight.shape != (x.shape[1], target_c):
        raise ValueError(f"channel map must be ({x.shape[1]}, {target_c}), got {tuple(weight.shape)}")
    out = channel_map(x, weight)
    if bias is not None:
        out = out + bias[None, :, None]
    return out


class FeatureAdapter(nn.Module):
    """Trainable per-feature reshaping layer; weights are private to one feature."""

    def __init__(self, spec, channels, length, dtype=None):
        super().__init__()
        dtype = dtype or torch.get_default_dtype()
        self.spec = spec
        self.channels = channels
        self.length = length
        self.axis_roles = ("batch",) + tuple(spec.axis_roles)
        c_raw = spec.channels
        bound = 1.0 / math.sqrt(c_raw)
        self.weight = nn.Parameter(torch.empty(c_raw, channels, dtype=dtype).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(channels, dtype=dtype).uniform_(-bound, bound))

    def forward(self, tensor):
        raw = RawFeature(self.spec.modality, self.spec.index, tensor, self.axis_roles)
        return reshape_feature(raw, self.channels, self.length, self.weight, self.bias)

    @staticmethod
    def param_count(spec, channels):
        return spec.channels * channels + channels
