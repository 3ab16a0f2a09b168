"""Run configuration: one flat YAML mapping, CLI flags override file keys."""
import os
from dataclasses import asdict, dataclass, fields

import yaml

from .disentangler import Z_MODES, resolve_losses
from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    # corpus
    n_pairs: int = 2000
    n_heldout: int = 200
    n_mrc: int = 500
    constituent_fraction: float = 0.9
    two_way_fraction: float = 0.8
    n_sts: int = 100
    # encoder
    enc_dim: int = 64
    enc_blocks: int = 2
    max_len: int = 48
    warm_start_steps: int = 0
    warm_start_lr: float = 1e-3
    # disentangler
    latent_dim: int = 200
    hidden: int = 256
    probe_rank: int = 64
    delta: float = 0.4
    variant: str = "SP"
    siamese: bool = True
    losses: list = None
    z_mode: str = "pooled"
    fixed_kappa: float = None
    # optimisation
    lr_stage1: float = 5e-5
    lr_stage2: float = 2e-5
    steps_stage1: int = 500
    epochs_stage2: int = 3
    batch_stage1: int = 32
    batch_stage2: int = 32
    freeze_encoder_stage2: bool = False
    max_answer_len: int = 10
    probe_steps: int = 200
    probe_fit_pairs: int = 400
    probe_lr: float = 1e-2

    def validate(self):
        for key in ("lr_stage1", "lr_stage2", "probe_lr"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("n_pairs", "n_mrc", "enc_dim", "latent_dim", "hidden", "steps_stage1",
                    "batch_stage1", "batch_stage2", "max_len"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.batch_stage1 < 2 and self.siamese:
            raise ConfigError("batch_stage1 must be >= 2 for negative mining")
        if self.z_mode not in Z_MODES:
            raise ConfigError(f"z_mode must be one of {Z_MODES}")
        self.enabled_losses()
        return self

    def enabled_losses(self):
        return resolve_losses(self.variant, self.siamese, self.losses)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values = {}
        for key, value in doc.items():
            values[key] = _coerce(known[key], value)
        return cls(**values)

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a flat key-value mapping")
        return cls.from_dict(doc)

    def override(self, **kv):
        doc = self.to_dict()
        doc.update({k: v for k, v in kv.items() if v is not None})
        return RunConfig.from_dict(doc)

    def apply_env(self):
        seed = os.environ.get("S2DM_SEED")
        if seed is None:
            return self
        try:
            return self.override(seed=int(seed))
        except ValueError:
            raise ConfigError(f"S2DM_SEED must be an integer, got {seed!r}") from None


def _coerce(f, value):
    if value is None:
        return None
    kind = f.type
    try:
        if kind is bool or kind == "bool":
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return lowered in ("true", "1", "yes")
            return bool(value)
        if kind is int or kind == "int":
            return int(value)
        if kind is float or kind == "float":
            return float(value)
        if kind is list or kind == "list":
            if isinstance(value, str):
                return [v.strip() for v in value.split(",") if v.strip()]
            return list(value)
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {f.name}") from None
