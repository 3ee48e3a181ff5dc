"""Run configuration: a JSON document with every default explicit.

Two presets exist.  ``paper`` mirrors the published training recipe
(500 epochs, batch 512, full-width encoder, 800 test samples per class) and
is not meant for laptop-scale runs; ``desk`` shrinks widths by 8x and the
schedule sizes so a full five-session run finishes in minutes on a CPU.
"""

import copy
import json
from dataclasses import asdict, dataclass, field

from .attention import AttentionConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .memory import STRATEGIES

PRESETS = ("paper", "desk")

ABLATION_COMPONENTS = ("moia", "ca_branch", "msca", "knowledge_transfer")
ABLATION_LABELS = {
    "moia": "w/o MOIA",
    "ca_branch": "w/o CA model",
    "msca": "w/o MSCA",
    "knowledge_transfer": "w/o Knowledge Transferring",
}


@dataclass
class DatasetConfig:
    family: str = "tep"
    n_channels: int = 52
    length: int = 128
    n_classes: int = 10
    class_signature_seed: int = 7
    noise_level: float = 1.0
    shared_drift_amp: float = 2.5
    informative_channels: int = 6
    signature_amp: float = 1.0
    class_ids: list = field(default_factory=lambda: list(range(10)))
    split_sizes: list = field(default_factory=lambda: [2, 2, 2, 2, 2])
    mode: str = "imbalanced"
    normal_count: int = 500
    fault_count: int = 48
    test_per_class: int = 800
    csv_train: list = None  # optional per-session CSV paths (bypass the generator)
    csv_test: str = None


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-5


@dataclass
class MemoryConfig:
    capacity: int = 100
    strategy: str = "baep"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown replay strategy {self.strategy!r}")


@dataclass
class ForestConfig:
    n_trees: int = 100
    mtry: int = None  # default floor(sqrt(embedding dim))


@dataclass
class ObjectiveConfig:
    tau: float = 0.07
    lambda_ca: float = 0.5
    mu_mcls: float = 0.6
    ca_projection_head: bool = True
    cs_projection_head: bool = False
    paper_literal_denominator: bool = False


@dataclass
class AblationConfig:
    use_moia: bool = True
    use_ca_branch: bool = True
    use_msca: bool = True
    use_knowledge_transfer: bool = True
    use_distillation: bool = True


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    method: str = "full"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 512
    epochs: int = 500
    augment_frac: float = 0.2
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    encoder_widths: list = field(default_factory=lambda: [64, 128, 256, 512])
    encoder_blocks: list = field(default_factory=lambda: [2, 2, 2, 2])
    moia_in_class_agnostic: bool = False
    attention_heads: int = 4
    attention_scale_mode: str = "paper_literal_d_over_h"
    forest: ForestConfig = field(default_factory=ForestConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    checkpoint_window: int = 10

    def encoder_config(self, with_moia=True):
        n = len(self.encoder_widths)
        stages = None if with_moia else tuple([False] * n)
        return EncoderConfig(
            in_channels=self.dataset.n_channels,
            widths=tuple(self.encoder_widths),
            blocks=tuple(self.encoder_blocks),
            moia_stages=stages,
        )

    def attention_config(self):
        return AttentionConfig(
            d_model=self.encoder_widths[-1],
            n_heads=self.attention_heads,
            scale_mode=self.attention_scale_mode,
        )

    @property
    def eval_every(self):
        return max(1, -(-self.epochs // 12))

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d)
        preset = d.get("preset", "desk")
        base = preset_config(preset) if preset in PRESETS else cls()
        _merge(base, d)
        return base

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _merge(config, overrides):
    for key, value in overrides.items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(config, key)
        if hasattr(current, "__dataclass_fields__") and isinstance(value, dict):
            _merge(current, value)
        else:
            setattr(config, key, value)
    return config


def preset_config(name, seed=0):
    if name == "paper":
        cfg = RunConfig(preset="paper", seed=seed)
    elif name == "desk":
        cfg = RunConfig(
            preset="desk",
            seed=seed,
            batch_size=64,
            epochs=60,
            optimizer=OptimizerConfig(learning_rate=0.003, weight_decay=1e-5),
            encoder_widths=[8, 16, 32, 64],
            dataset=DatasetConfig(normal_count=200, fault_count=48, test_per_class=100),
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return cfg


def apply_ablation(cfg, component=None, replay=None):
    """Return a copy of cfg with one variant toggled off, relabeled for reports."""
    out = RunConfig.from_dict(cfg.to_dict())
    if component is not None:
        if component not in ABLATION_COMPONENTS:
            raise ConfigError(f"unknown ablation component {component!r}; expected one of {ABLATION_COMPONENTS}")
        setattr(out.ablation, f"use_{component}", False)
        if component == "ca_branch":
            # fusion, its supervision, and the alignment all ride on the CA branch
            out.ablation.use_msca = False
            out.ablation.use_knowledge_transfer = False
        out.method = ABLATION_LABELS[component]
    if replay is not None:
        if replay not in STRATEGIES:
            raise ConfigError(f"unknown replay strategy {replay!r}")
        out.memory.strategy = replay
        out.method = f"replay:{replay}" if component is None else f"{out.method}+replay:{replay}"
    return out


def finetuning_config(cfg):
    """The no-memory / no-distillation lower bound."""
    out = RunConfig.from_dict(cfg.to_dict())
    out.memory.capacity = 0
    out.ablation.use_distillation = False
    out.method = "finetuning"
    return out
