"""Configuration objects shared by the model, the trainer and the CLI."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


class ConfigError(ValueError):
    """Raised with every validation problem found, not just the first."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class ModelConfig:
    embed_dim: int = 64
    num_queries: int = 100
    num_encoder_layers: int = 2
    num_decoder_layers: int = 3
    num_heads: int = 4
    num_object_classes: int = 3
    num_verb_classes: int = 6
    rpq_threshold: float = 0.9
    ffn_hidden_dim: int = 128
    in_channels: int = 3
    patch_size: int = 8
    proj_dim: int = 64
    person_class_id: int = 0
    temperature: float = 0.07
    aux_loss: bool = False
    detach_rpq: bool = False
    init_std: float = 0.02
    query_init_std: float = 1.0

    def validate(self) -> List[str]:
        problems = []
        for name in ("embed_dim", "num_queries", "num_encoder_layers", "num_decoder_layers",
                     "num_heads", "num_object_classes", "num_verb_classes", "ffn_hidden_dim",
                     "in_channels", "patch_size", "proj_dim"):
            if int(getattr(self, name)) < 1:
                problems.append(f"model.{name} must be a positive integer")
        if self.num_heads >= 1 and self.embed_dim % self.num_heads:
            problems.append("model.embed_dim must be divisible by model.num_heads")
        if self.embed_dim % 4:
            # the 2D sine encoding splits the width into sin/cos halves per axis
            problems.append("model.embed_dim must be divisible by 4")
        if self.patch_size % 2:
            problems.append("model.patch_size must be even")
        if not 0.0 < self.rpq_threshold < 1.0:
            problems.append("model.rpq_threshold must lie strictly between 0 and 1")
        if not 0 <= self.person_class_id < max(self.num_object_classes, 1):
            problems.append("model.person_class_id must index an object class")
        if self.temperature <= 0:
            problems.append("model.temperature must be positive")
        return problems

    def check(self) -> "ModelConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError([f"model: unknown field {k!r}" for k in sorted(unknown)])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class LossWeights:
    box: float = 5.0
    giou: float = 2.0
    cls: float = 1.0
    verb: float = 1.0
    caption: float = 1.0
    branch: float = 1.0
    no_object: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossWeights":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError([f"loss: unknown field {k!r}" for k in sorted(unknown)])
        return cls(**data)


@dataclass
class DatasetConfig:
    """One training source, either synthetic or read from a manifest."""

    name: str
    kind: str
    source: str = "synthetic"
    manifest: Optional[str] = None
    n_samples: int = 10
    verb_class_ids: List[int] = field(default_factory=list)
    person_class_id: int = 0
    sampling_weight: float = 1.0
    n_boxes: List[int] = field(default_factory=lambda: [1, 3])
    n_persons: List[int] = field(default_factory=lambda: [1, 1])
    num_frames: int = 4
    seed: int = 0


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    total_steps: int = 200
    decay_fraction: float = 0.9
    decay_gamma: float = 0.1
    grad_clip: float = 0.1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    datasets: List[DatasetConfig] = field(default_factory=list)
    plan: Dict[str, float] = field(default_factory=lambda: {"detection": 1, "action": 1})
    batch_size: int = 8
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    dn_enabled: bool = True
    dn_noise_scale: float = 0.4
    dn_label_flip_prob: float = 0.2
    fusion_mode: str = "max"
    action_start_step: int = 0
    num_frames: int = 4
    canvas: int = 32
    checkpoint_every: int = 0
    num_clusters: int = 100
    negatives_per_cluster: int = 10
    resample_negatives: bool = False

    def validate(self) -> List[str]:
        problems = list(self.model.validate())
        if not self.datasets:
            problems.append("datasets: at least one dataset is required")
        names = set()
        for i, ds in enumerate(self.datasets):
            where = f"datasets[{i}]"
            if ds.name in names:
                problems.append(f"{where}: duplicate dataset name {ds.name!r}")
            names.add(ds.name)
            if ds.kind not in ("detection", "action_image", "action_video", "caption"):
                problems.append(f"{where}: unknown kind {ds.kind!r}")
            if ds.source not in ("synthetic", "manifest"):
                problems.append(f"{where}: source must be 'synthetic' or 'manifest'")
            if ds.source == "manifest" and not ds.manifest:
                problems.append(f"{where}: manifest source needs a manifest path")
            if ds.source == "synthetic" and ds.n_samples < 1:
                problems.append(f"{where}: n_samples must be positive")
            if ds.sampling_weight <= 0:
                problems.append(f"{where}: sampling_weight must be positive")
            if ds.kind.startswith("action"):
                if not ds.verb_class_ids:
                    problems.append(f"{where}: action datasets must declare verb_class_ids")
                bad = [v for v in ds.verb_class_ids if not 0 <= v < self.model.num_verb_classes]
                if bad:
                    problems.append(f"{where}: verb ids {bad} outside [0, {self.model.num_verb_classes})")
        if self.datasets:
            covered = set()
            for ds in self.datasets:
                covered.update(ds.verb_class_ids)
            kinds = {ds.kind for ds in self.datasets}
            if kinds & {"action_image", "action_video"}:
                missing = sorted(set(range(self.model.num_verb_classes)) - covered)
                if missing:
                    problems.append(f"datasets: verb ids {missing} belong to no dataset")
            for group in self.plan:
                if group not in ("detection", "action", "caption"):
                    problems.append(f"plan: unknown group {group!r}")
                elif self.plan[group] <= 0:
                    problems.append(f"plan: ratio for {group!r} must be positive")
                elif not any(_group_of(ds.kind) == group for ds in self.datasets):
                    problems.append(f"plan: group {group!r} has no dataset")
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if self.fusion_mode not in ("max", "avg", "none"):
            problems.append("fusion_mode must be one of max, avg, none")
        if self.optim.total_steps < 1:
            problems.append("optim.total_steps must be positive")
        if not 0 < self.optim.decay_fraction <= 1:
            problems.append("optim.decay_fraction must lie in (0, 1]")
        if self.num_frames < 1:
            problems.append("num_frames must be positive")
        if self.canvas < max(16, self.model.patch_size):
            problems.append("canvas must be at least 16 and at least the patch size")
        if not 0 <= self.dn_label_flip_prob <= 1:
            problems.append("dn_label_flip_prob must lie in [0, 1]")
        if self.dn_noise_scale < 0:
            problems.append("dn_noise_scale must be non-negative")
        return problems

    def check(self) -> "RunConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        problems = []
        known = {f.name for f in dataclasses.fields(cls)}
        for key in sorted(set(data) - known):
            problems.append(f"unknown top-level field {key!r}")
        kwargs: Dict[str, Any] = {k: v for k, v in data.items() if k in known}
        try:
            kwargs["model"] = ModelConfig.from_dict(data.get("model", {}))
        except ConfigError as exc:
            problems.extend(exc.problems)
            kwargs["model"] = ModelConfig()
        except TypeError as exc:
            problems.append(f"model: {exc}")
            kwargs["model"] = ModelConfig()
        try:
            kwargs["loss"] = LossWeights.from_dict(data.get("loss", {}))
        except ConfigError as exc:
            problems.extend(exc.problems)
            kwargs["loss"] = LossWeights()
        try:
            kwargs["optim"] = OptimConfig(**data.get("optim", {}))
        except TypeError as exc:
            problems.append(f"optim: {exc}")
            kwargs["optim"] = OptimConfig()
        datasets = []
        for i, raw in enumerate(data.get("datasets", [])):
            try:
                datasets.append(DatasetConfig(**raw))
            except TypeError as exc:
                problems.append(f"datasets[{i}]: {exc}")
        kwargs["datasets"] = datasets
        if problems:
            # report value problems of the readable part alongside the structural ones
            try:
                problems.extend(cls(**kwargs).validate())
            except TypeError:
                pass
            raise ConfigError(problems)
        return cls(**kwargs)

    def config_hash(self) -> str:
        """Short digest of everything that affects the run; the output location is excluded."""
        data = self.to_dict()
        data.pop("output_dir", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _group_of(kind: str) -> str:
    return "action" if kind.startswith("action") else kind


def load_run_config(path: str) -> RunConfig:
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return RunConfig.from_dict(data)


def dump_run_config(config: RunConfig, path: str) -> None:
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
