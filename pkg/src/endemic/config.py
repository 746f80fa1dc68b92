"""Experiment configuration: nested sections addressed by flat dotted keys."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DATA_ROOT_ENV = "ENDEMIC_DATA_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class DimsConfig:
    K: int = 512
    G: int = 768
    C: int = 128
    k: int = 256
    N: int = 64
    E: int = 300


@dataclass
class KnowledgeConfig:
    epsilon: float = 0.8
    max_sentences: int = 50
    max_per_source: int = 10
    order: str = "scan"
    encoder_seed: int = 0


@dataclass
class GraphConfig:
    layers: int = 2
    teleport: float = 0.3
    walk_length: int = 5
    window: int = 2
    walks_per_node: int = 2
    negatives: int = 5
    epochs: int = 20
    lr: float = 0.01
    include_labels: bool = False


@dataclass
class CorpusConfig:
    tau_label: float = 0.8
    tau_cluster: float = 0.8
    max_cluster_size: int = 20
    max_age: int = 86400
    general_test_fraction: float = 0.2
    collected_at: int = 0  # 0: newest tweet timestamp


@dataclass
class ModelConfig:
    p_drop: float = 0.2
    vocab_min_count: int = 1


@dataclass
class LossSection:
    lambda_ml: float = 1.0
    lambda_at: float = 1.0
    lambda_vat: float = 1.0
    eps_at: float = 2.0
    eps_vat: float = 2.0
    xi: float = 1e-6
    power_iters: int = 1
    adv_all_inputs: bool = False


@dataclass
class TrainSection:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    stop_at_accuracy: float = 0.0  # 0: train all epochs


@dataclass
class SeedsConfig:
    model: int = 0
    train: int = 0
    graph: int = 0
    splits: int = 0


@dataclass
class PathsConfig:
    work_dir: str = "work"
    tweets: str = "tweets.jsonl"
    users: str = "users.jsonl"
    follows: str = "follows.tsv"
    claims: str = "claims.jsonl"
    evidence_store: str = "evidence_store.jsonl"
    schema: str = ""  # optional FeatureSchema JSON; empty for the built-in schema


@dataclass
class ExperimentConfig:
    dims: DimsConfig = field(default_factory=DimsConfig)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    base_dir: Optional[str] = field(default=None, compare=False)

    def validate(self) -> "ExperimentConfig":
        d = self.dims
        for name in ("K", "G", "C", "k", "N", "E"):
            if getattr(d, name) <= 0:
                raise ConfigError(f"dims.{name} must be positive")
        if d.K % 2:
            raise ConfigError("dims.K must be even")
        if not 0 < self.knowledge.epsilon <= 1:
            raise ConfigError("knowledge.epsilon must be in (0, 1]")
        if not 0 <= self.graph.teleport <= 1:
            raise ConfigError("graph.teleport must be in [0, 1]")
        if not 0 <= self.model.p_drop < 1:
            raise ConfigError("model.p_drop must be in [0, 1)")
        if self.knowledge.order not in ("scan", "similarity"):
            raise ConfigError("knowledge.order must be 'scan' or 'similarity'")
        return self

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "base_dir":
                continue
            section = getattr(self, f.name)
            for sf in dataclasses.fields(section):
                out[f"{f.name}.{sf.name}"] = getattr(section, sf.name)
        return out

    def set(self, key: str, value: Any) -> None:
        section_name, _, name = key.partition(".")
        section = getattr(self, section_name, None)
        if section is None or not dataclasses.is_dataclass(section) or not name:
            raise ConfigError(f"unknown config key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(section)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(section, name, _coerce(key, value, type(getattr(section, name))))

    def hash(self) -> str:
        payload = json.dumps(self.to_flat(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def resolve(self, name: str) -> Path:
        """Data path: absolute as given, else under $ENDEMIC_DATA_ROOT or the config file's directory."""
        p = Path(getattr(self.paths, name))
        if p.is_absolute():
            return p
        root = os.environ.get(DATA_ROOT_ENV) or self.base_dir or "."
        return Path(root) / p

    def work_dir(self) -> Path:
        p = Path(self.paths.work_dir)
        if p.is_absolute():
            return p
        return Path(self.base_dir or ".") / p


def _coerce(key: str, value: Any, typ: type):
    try:
        if typ is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if typ is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if typ is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {typ.__name__}") from exc


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path=None, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """Defaults, then the TOML file, then ``overrides`` (dotted key -> value)."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key, value in _flatten(data).items():
            cfg.set(key, value)
        cfg.base_dir = str(path.parent.resolve())
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    return cfg.validate()


def dump_toml(cfg: ExperimentConfig) -> str:
    lines = []
    current = None
    for key, value in cfg.to_flat().items():
        section, name = key.split(".", 1)
        if section != current:
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
            current = section
        lines.append(f"{name} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
