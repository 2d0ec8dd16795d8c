"""Run configuration: one YAML file per run, validated before any compute.

Column mapping to the usual search-configuration table:
C -> space.channels, L -> space.length, N -> space.n_cells, M -> space.n_steps,
Ep -> train.epochs, BS -> train.batch_size, Drpt -> train.dropout,
LR/L2 (arch) -> train.arch_lr/arch_l2, MaxLR/MinLR/L2 (network) ->
train.net_max_lr/net_min_lr/net_l2.
"""

import os
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fusionsearch.ops import PrimitiveOpKind
from fusionsearch.search import TrainConfig
from fusionsearch.space import FeatureSpec, SearchSpaceConfig
from fusionsearch import tasks

OUTPUT_ROOT_ENV = "FUSIONSEARCH_OUTPUT_ROOT"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FeatureEntry(_Strict):
    modality: str
    index: int = Field(ge=0)
    shape: list[int] = Field(min_length=1, max_length=4)
    axis_roles: list[Literal["channel", "temporal", "spatial"]]


class SpaceSection(_Strict):
    n_cells: int = Field(1, ge=1)
    n_steps: int = Field(1, ge=1)
    channels: int = Field(8, ge=1)
    length: int = Field(4, ge=1)
    features: Optional[list[FeatureEntry]] = None


class TrainSection(_Strict):
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(64, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    arch_lr: float = Field(3e-3, gt=0)
    arch_l2: float = Field(1e-3, ge=0)
    net_max_lr: float = Field(3e-3, gt=0)
    net_min_lr: float = Field(1e-6, gt=0)
    net_l2: float = Field(1e-4, ge=0)
    eval_epochs: int = Field(40, ge=1)
    arch_noise: float = Field(1e-3, ge=0)
    slot_resolution: Literal["split", "argmax"] = "split"

    @model_validator(mode="after")
    def _lr_order(self):
        if self.net_min_lr > self.net_max_lr:
            raise ValueError("net_min_lr must not exceed net_max_lr")
        return self


class PlantedSection(_Strict):
    n_modalities: int = Field(2, ge=1)
    features_per_modality: int = Field(3, ge=1)
    shapes: Optional[list[tuple[list[int], list[Literal["channel", "temporal", "spatial"]]]]] = None
    planted_pair: tuple[int, int] = (1, 5)
    planted_op: Literal["Sum", "Attention", "LinearGLU", "ConcatFC"] = "ConcatFC"
    n_classes: int = Field(2, ge=2)
    n_train: int = Field(2000, ge=1)
    n_val: int = Field(500, ge=1)
    n_test: int = Field(500, ge=1)
    label_noise: float = Field(0.05, ge=0.0, lt=1.0)
    task_mode: Literal["multiclass", "multilabel"] = "multiclass"
    teacher_channels: int = Field(8, ge=1)
    teacher_length: int = Field(4, ge=1)


class TaskSection(_Strict):
    kind: Literal["planted", "external"] = "planted"
    planted: PlantedSection = PlantedSection()
    manifest: Optional[str] = None

    @model_validator(mode="after")
    def _manifest_given(self):
        if self.kind == "external" and not self.manifest:
            raise ValueError("external tasks need a manifest path")
        return self


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "runs/default"
    space: SpaceSection = SpaceSection()
    train: TrainSection = TrainSection()
    task: TaskSection = TaskSection()

    def train_config(self, seed=None):
        return TrainConfig(seed=self.seed if seed is None else seed, **self.train.model_dump())

    def planted_spec(self):
        p = self.task.planted.model_dump()
        if p["shapes"] is None:
            p.pop("shapes")
        p["planted_op"] = PrimitiveOpKind[p["planted_op"]]
        return tasks.PlantedTaskSpec(seed=self.seed, **p)

    def load_data(self, base_dir="."):
        if self.task.kind == "planted":
            return tasks.generate(self.planted_spec())
        path = self.task.manifest
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return tasks.load_external(path)

    def search_space(self, data):
        feats = data.features
        if self.space.features is not None:
            declared = tuple(FeatureSpec(f.modality, f.index, tuple(f.shape), tuple(f.axis_roles))
                             for f in self.space.features)
            if declared != tuple(feats):
                raise ConfigError([("space.features", "declared features do not match the task's inventory")])
        s = self.space
        return SearchSpaceConfig(feats, s.n_cells, s.n_steps, s.channels, s.length)

    def resolve_output(self, override=None):
        out = override or self.output_dir
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(out):
            out = os.path.join(root, out)
        return out


class ConfigError(ValueError):
    """Carries (field path, message) pairs."""

    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


def parse_config(data):
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        problems = [(".".join(str(x) for x in e["loc"]) or "<root>", e["msg"]) for e in exc.errors()]
        raise ConfigError(problems) from None


def load_config(path):
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError([("<file>", f"invalid YAML: {exc}")]) from None
    return parse_config(data)
