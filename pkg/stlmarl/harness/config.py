from dataclasses import asdict, dataclass, field
import json
import os
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from transformers import HfArgumentParser
import yaml

from ..env import ENVIRONMENTS, LaneConfig, ParticleConfig
from ..stl import FormulaConfig
from ..train import TRAIN_DEFAULTS, TrainConfig

SECTIONS = ("experiment", "env", "formula", "train")

class ConfigError(ValueError):
    pass

def parse_variant(name: str) -> Tuple[str, bool]:
    """Split a variant name `<stl|baseline>-<shield|noshield>` into reward mode and shield flag."""
    reward, _, shield = name.partition("-")
    if reward not in ("stl", "baseline") or shield not in ("shield", "noshield"):
        raise ConfigError(f"Invalid variant '{name}', expected '<stl|baseline>-<shield|noshield>'!")
    return reward, shield == "shield"

def variant_name(reward: str, shield: bool) -> str:
    return f"{reward}-{'shield' if shield else 'noshield'}"

@dataclass
class ExperimentConfig:
    env: Literal["particle", "lane"] = "particle"
    variants: List[str] = field(default_factory=lambda: ["stl-shield"])
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    # greedy evaluation episodes after training
    eval_episodes: int = 20
    num_workers: int = 1
    overwrite: bool = False
    # rolling window of the learning curves
    smoothing: int = 100

    def __post_init__(self):
        if not self.variants or not self.seeds:
            raise ConfigError("At least one variant and one seed are required!")
        for variant in self.variants:
            parse_variant(variant)
        if len(set(self.variants)) != len(self.variants) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("Variants and seeds must be unique!")
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"Unknown environment '{self.env}'!")
        if self.eval_episodes < 0 or self.num_workers < 1 or self.smoothing < 1:
            raise ConfigError("eval_episodes must be non-negative, num_workers and smoothing positive!")

@dataclass
class Experiment:
    experiment: ExperimentConfig
    env: ParticleConfig | LaneConfig
    formula: FormulaConfig
    train: TrainConfig

    def metadata(self) -> Dict[str, str]:
        """Everything needed to rebuild environment and networks, as safetensors metadata."""
        return dict(
            env=self.experiment.env,
            env_config=json.dumps(asdict(self.env)),
            formula=json.dumps(asdict(self.formula)),
        )

def _parse(cls: Type, section: str, values: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None):
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{section}' must be a mapping, got {type(values).__name__}!")
    try:
        obj, = HfArgumentParser(cls).parse_dict((defaults or dict()) | values, allow_extra_keys=False)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid section '{section}': {e}") from e
    return obj

def parse_config(data: Dict[str, Any]) -> Experiment:
    """Build an experiment from a mapping with the sections experiment, env, formula and train."""
    if unknown := set(data or {}) - set(SECTIONS):
        raise ConfigError(f"Unknown configuration sections {sorted(unknown)}, expected a subset of {list(SECTIONS)}!")
    data = data or dict()
    experiment = _parse(ExperimentConfig, "experiment", data.get("experiment", {}))
    config_class, _ = ENVIRONMENTS[experiment.env]
    env = _parse(config_class, "env", data.get("env", {}))
    default_formula = FormulaConfig(eps1=1.0, eps2=2.0) if experiment.env == "lane" else FormulaConfig()
    formula = _parse(FormulaConfig, "formula", data.get("formula", {}), asdict(default_formula))
    return Experiment(experiment, env, formula, _parse(TrainConfig, "train", data.get("train", {}), TRAIN_DEFAULTS[experiment.env]))

def load_config(path: str) -> Experiment:
    """Read an experiment from a JSON or YAML file."""
    try:
        with open(path) as f:
            if os.path.splitext(path)[1].lower() in (".yaml", ".yml"):
                data = yaml.safe_load(f)
            else:
                data = json.load(f)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"Configuration {path} must contain a mapping!")
    return parse_config(data)
