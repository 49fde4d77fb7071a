"""Model, loss and run configuration, plus the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError

TASKS = ("edges", "normals", "semantics", "depth")
NUM_SCALES = 4


def default_taps(blocks: int, k: int = NUM_SCALES) -> tuple[int, ...]:
    """Evenly spaced 1-based encoder block indices ending at the last block.

    With fewer blocks than scales, indices repeat (e.g. 2 blocks -> 1,1,2,2).
    """
    return tuple(max(1, -(-(i + 1) * blocks // k)) for i in range(k))


@dataclass
class ModelConfig:
    patch: int = 16
    emb_dim: int = 384
    encoder_blocks: int = 4
    encoder_heads: int = 4
    taps: Optional[tuple[int, ...]] = None
    image_size: int = 224
    channels: int = 256
    window: int = 7
    wmca_layers: int = 2
    wmca_heads: int = 4
    ffn_expansion: int = 4
    wmca_out_proj: bool = True
    wmca_mask_padding: bool = False
    use_wmca: bool = True
    use_ggfm: bool = True
    se_reduction: int = 4
    depthwise: bool = False
    head_stem: int = 8
    num_classes: int = 40
    max_depth: float = 10.0
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.taps is None:
            self.taps = default_taps(self.encoder_blocks)
        self.taps = tuple(int(t) for t in self.taps)
        self.validate()

    @classmethod
    def small(cls, **overrides: Any) -> "ModelConfig":
        """Distilled variant: 64 decoder channels and depth-wise refinements."""
        return cls(**{"channels": 64, "depthwise": True, **overrides})

    @classmethod
    def toy(cls, **overrides: Any) -> "ModelConfig":
        """Desk-scale configuration used by the overfit tests."""
        base = dict(patch=16, emb_dim=64, encoder_blocks=2, image_size=64, channels=32,
                    window=4, num_classes=4)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.patch < 1 or self.emb_dim < 1:
            raise ConfigError("patch and emb_dim must be positive")
        if self.emb_dim % self.encoder_heads:
            raise ConfigError(f"emb_dim {self.emb_dim} not divisible by encoder_heads {self.encoder_heads}")
        if self.channels % self.wmca_heads:
            raise ConfigError(f"channels {self.channels} not divisible by wmca_heads {self.wmca_heads}")
        if len(self.taps) != NUM_SCALES:
            raise ConfigError(f"need exactly {NUM_SCALES} tap indices, got {self.taps}")
        if any(b > a for a, b in zip(self.taps[1:], self.taps[:-1])):
            raise ConfigError(f"tap indices must be non-decreasing: {self.taps}")
        if self.encoder_blocks >= NUM_SCALES and len(set(self.taps)) != NUM_SCALES:
            raise ConfigError(f"tap indices must be strictly increasing when blocks >= {NUM_SCALES}")
        if self.taps[0] < 1 or self.taps[-1] > self.encoder_blocks:
            raise ConfigError(f"tap indices {self.taps} out of range 1..{self.encoder_blocks}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError("channels must be even")
        if self.channels // self.se_reduction < 1:
            raise ConfigError("se_reduction too large for channel count")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.max_depth <= 0:
            raise ConfigError("max_depth must be positive")

    def check_image(self, h: int, w: int) -> None:
        """Full-model input constraint: the H/32 pyramid level must be integral."""
        if h % self.patch or w % self.patch:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {self.patch}")
        if h % (2 * self.patch) or w % (2 * self.patch):
            raise ConfigError(f"image {h}x{w} must be divisible by {2 * self.patch} for the coarsest scale")


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.75
    finetune_alpha: float = 0.75
    finetune_beta: float = 1.0
    huber_delta: float = 1.0
    lambda_grad: float = 1.0
    outdoor: bool = False
    consistency_weight: float = 0.1
    dwa_temperature: float = 2.0
    dwa_ema: float = 0.0
    dice_eps: float = 1.0
    edge_pos_weight_cap: float = 20.0
    ignore_index: int = 255

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.finetune_alpha, self.finetune_beta) < 0:
            raise ConfigError("seg mixing weights must be non-negative")
        if not 0.5 <= self.lambda_grad <= 2.0:
            raise ConfigError(f"lambda_grad {self.lambda_grad} outside [0.5, 2]")
        if self.dwa_temperature <= 0:
            raise ConfigError("DWA temperature must be positive")
        if not 0.0 <= self.dwa_ema < 1.0:
            raise ConfigError("dwa_ema must be in [0, 1)")

    def seg_weights(self, phase: str) -> tuple[float, float]:
        if phase == "initial":
            return self.alpha, self.beta
        if phase == "finetune":
            return self.finetune_alpha, self.finetune_beta
        raise ConfigError(f"unknown phase {phase!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    poly_power: float = 0.9
    steps: int = 1000
    finetune_fraction: float = 0.2
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 1

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not 0.0 <= self.finetune_fraction <= 1.0:
            raise ConfigError("finetune_fraction must be in [0, 1]")

    @property
    def initial_steps(self) -> int:
        return self.steps - self.finetune_steps

    @property
    def finetune_steps(self) -> int:
        return int(round(self.steps * self.finetune_fraction))

    def phase(self, step: int) -> str:
        return "initial" if step < self.initial_steps else "finetune"


# ---------------------------------------------------------------------------
# flat key = value files; keys are ``model.<field>``, ``loss.<field>`` or run fields


def _parse_value(raw: str, target_type: Any) -> Any:
    raw = raw.strip()
    kind = str(target_type)
    if "bool" in kind:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if "tuple" in kind:
        if raw.lower() in ("", "none"):
            return None
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if "int" in kind and "float" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str) -> RunConfig:
    sections: dict[str, dict[str, Any]] = {"model": {}, "loss": {}, "run": {}}
    types = {
        "model": {f.name: f.type for f in fields(ModelConfig)},
        "loss": {f.name: f.type for f in fields(LossConfig)},
        "run": {f.name: f.type for f in fields(RunConfig) if f.name not in ("model", "loss")},
    }
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        section = section or "run"
        if section not in types or name not in types[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            sections[section][name] = _parse_value(raw, types[section][name])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(model=ModelConfig(**sections["model"]), loss=LossConfig(**sections["loss"]),
                     **sections["run"])


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        if f.name in ("model", "loss"):
            sub = getattr(cfg, f.name)
            lines.extend(f"{f.name}.{g.name} = {_format_value(getattr(sub, g.name))}" for g in fields(sub))
        else:
            lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def model_config_from_dict(d: dict[str, Any]) -> ModelConfig:
    d = dict(d)
    if d.get("taps") is not None:
        d["taps"] = tuple(d["taps"])
    return ModelConfig(**d)


def model_config_to_dict(cfg: ModelConfig) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    d["taps"] = list(cfg.taps)
    return d
