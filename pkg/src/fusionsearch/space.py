"""Search-space description shared by the hypernet, genotypes and the oracle."""

from dataclasses import dataclass, field
from math import comb, prod

from fusionsearch.ops import NUM_OPS

AXIS_ROLES = ("batch", "channel", "temporal", "spatial")


@dataclass(frozen=True)
class FeatureSpec:
    """One unimodal feature: its modality, depth index and per-sample shape.

    ``shape`` and ``axis_roles`` exclude the batch axis.
    """

    modality: str
    index: int
    shape: tuple
    axis_roles: tuple

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "axis_roles", tuple(self.axis_roles))
        if len(self.shape) != len(self.axis_roles):
            raise ValueError(f"{self.name}: shape {self.shape} and axis_roles {self.axis_roles} differ in rank")
        if not 1 <= len(self.shape) <= 4:
            raise ValueError(f"{self.name}: per-sample rank must be 1-4, got {len(self.shape)}")
        for role in self.axis_roles:
            if role not in AXIS_ROLES or role == "batch":
                raise ValueError(f"{self.name}: invalid axis role {role!r}")
        if self.axis_roles.count("channel") != 1:
            raise ValueError(f"{self.name}: exactly one channel axis required")
        if self.axis_roles.count("temporal") > 1:
            raise ValueError(f"{self.name}: at most one temporal axis allowed")
        if any(s < 1 for s in self.shape):
            raise ValueError(f"{self.name}: all dimensions must be >= 1")

    @property
    def name(self):
        return f"{self.modality}_{self.index}"

    @property
    def channels(self):
        return self.shape[self.axis_roles.index("channel")]

    def to_dict(self):
        return {
            "modality": self.modality,
            "index": self.index,
            "shape": list(self.shape),
            "axis_roles": list(self.axis_roles),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["modality"], int(d["index"]), tuple(d["shape"]), tuple(d["axis_roles"]))


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Feature inventory plus the cell/step counts and the inner (C, L) size.

    Features are ordered modality by modality; that order defines the
    upper-level node sequence ``[features..., cells...]``.
    """

    features: tuple
    n_cells: int = 1
    n_steps: int = 1
    channels: int = 8
    length: int = 4
    modalities: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.modalities:
            mods = []
            for f in self.features:
                if f.modality not in mods:
                    mods.append(f.modality)
            object.__setattr__(self, "modalities", tuple(mods))
        if len(self.features) < 2:
            raise ValueError("at least two features are required")
        if self.n_cells < 1 or self.n_steps < 1:
            raise ValueError("n_cells and n_steps must be >= 1")
        if self.channels < 1 or self.length < 1:
            raise ValueError("channels and length must be >= 1")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")

    @property
    def n_features(self):
        return len(self.features)

    def n_predecessors(self, cell):
        """Number of upper-level nodes preceding cell ``cell`` (0-based)."""
        return self.n_features + cell

    def node_names(self):
        return [f.name for f in self.features] + [f"Cell_{k}" for k in range(self.n_cells)]

    def count_genotypes(self):
        """Closed-form size of the discrete space (upper pairs x step choices)."""
        upper = prod(comb(self.n_predecessors(k), 2) for k in range(self.n_cells))
        per_cell = prod((2 + s) ** 2 * NUM_OPS for s in range(self.n_steps))
        return upper * per_cell ** self.n_cells

    def to_dict(self):
        return {
            "features": [f.to_dict() for f in self.features],
            "n_cells": self.n_cells,
            "n_steps": self.n_steps,
            "channels": self.channels,
            "length": self.length,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            features=tuple(FeatureSpec.from_dict(f) for f in d["features"]),
            n_cells=int(d["n_cells"]),
            n_steps=int(d["n_steps"]),
            channels=int(d["channels"]),
            length=int(d["length"]),
        )
