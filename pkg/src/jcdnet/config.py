"""Run configuration and the ablation experiment table."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .inference import InferenceConfig
from .losses import AblationFlags, LossWeights


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 100
    batch_size: int = 20
    num_pairs: int = 3


@dataclass
class ModelSettings:
    """Model hyper-parameters; class count and feature width come from the data."""

    hidden_dim: int = 1024
    snippets_per_video: int = 500
    conv_kernel: int = 3
    dropout_rate: float = 0.7


@dataclass
class RunConfig:
    model: ModelSettings = field(default_factory=ModelSettings)
    loss: LossWeights = field(default_factory=LossWeights)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        sections = {"model": ModelSettings, "loss": LossWeights, "inference": InferenceConfig,
                    "optim": OptimConfig, "flags": AblationFlags}
        unknown = set(doc) - set(sections) - {"seed"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in sections.items():
            sub = doc.get(name, {})
            allowed = {f.name for f in fields(klass)}
            bad = set(sub) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**sub)
        cfg = cls(seed=int(doc.get("seed", 0)), **kwargs)
        cfg.flags.validate()
        return cfg

    def with_overrides(self, assignments) -> "RunConfig":
        """Apply ``section.key=value`` strings (values parsed as JSON when possible)."""
        doc = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.strip().split(".")
            if parts == ["seed"]:
                doc["seed"] = value
                continue
            if len(parts) != 2 or parts[0] not in doc or not isinstance(doc[parts[0]], dict):
                raise ValueError(f"override key {key!r} must look like section.name")
            if parts[1] not in doc[parts[0]]:
                raise ValueError(f"unknown config key {key!r}")
            doc[parts[0]][parts[1]] = value
        return RunConfig.from_dict(doc)

    def for_experiment(self, exp_id: int) -> "RunConfig":
        return replace(self, flags=experiment_flags(exp_id))


def load_run_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg = RunConfig.from_dict(json.load(fh))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    cfg.flags.validate()
    return cfg


_OFF = dict(use_cad=False, cad_supervised=True, use_tea=False, use_l_supp_mil=False,
            use_l_supp_coarse=False, use_l_norm=False, use_l_guide=False, use_l_cas=False)

# rows of the ablation table: which module / loss checkmarks are set
EXPERIMENTS = {
    1: {},
    2: dict(use_cad=True),
    3: dict(use_cad=True, cad_supervised=False),
    4: dict(use_tea=True, use_l_supp_mil=True),
    5: dict(use_cad=True, use_tea=True, use_l_supp_mil=True),
    6: dict(use_cad=True, use_tea=True, use_l_supp_coarse=True),
    7: dict(use_cad=True, use_tea=True, use_l_supp_mil=True, use_l_supp_coarse=True),
    8: dict(use_cad=True, use_tea=True, use_l_supp_mil=True, use_l_supp_coarse=True, use_l_norm=True),
    9: dict(use_cad=True, use_tea=True, use_l_supp_mil=True, use_l_supp_coarse=True, use_l_norm=True,
            use_l_guide=True),
    10: dict(use_cad=True, use_tea=True, use_l_supp_mil=True, use_l_supp_coarse=True, use_l_norm=True,
             use_l_guide=True, use_l_cas=True),
}


def experiment_flags(exp_id: int) -> AblationFlags:
    if exp_id not in EXPERIMENTS:
        raise ValueError(f"unknown experiment id {exp_id}; expected one of {sorted(EXPERIMENTS)}")
    flags = AblationFlags(**{**_OFF, **EXPERIMENTS[exp_id]})
    flags.validate()
    return flags


def synthetic_run_config(**overrides) -> RunConfig:
    """Desk-scale defaults for the synthetic conjoint benchmark."""
    cfg = RunConfig(
        model=ModelSettings(hidden_dim=32, snippets_per_video=60, conv_kernel=3, dropout_rate=0.7),
        optim=OptimConfig(lr=3e-3, weight_decay=1e-3, epochs=50, batch_size=20, num_pairs=3),
    )
    return cfg.with_overrides([f"{k}={json.dumps(v)}" for k, v in overrides.items()]) if overrides else cfg
