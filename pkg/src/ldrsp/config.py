"""Flat key=value run configuration covering training, inference and data."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .infer import InferenceConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    manifest: str = ""
    out_dir: str = "runs"
    dtype: str = "float64"
    # training
    task: str = "multilabel"
    variant: str = "LDRSP"
    oracle: str = "f1"
    epochs: int = 100
    batch_size: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    adversarial_weight: float = 1.0
    seed: int = 0
    patience: int = 20
    sample_ratio: float = 0.5
    buffer_capacity: int = 0
    adv_steps: int = 1
    adv_lr: float = 0.5
    sample_steps: int = -1
    ebgan_margin: float = 1.0
    hidden_g: int = 150
    hidden_d: tuple[int, ...] = (250,)
    fcn_widths: tuple[int, ...] = (64, 128, 128)
    crop: int = 24
    n_crops: int = 36
    # inference
    eta: float = 0.02
    steps: int = 10
    normalized: bool = True
    grad_norm_floor: float = 1e-12

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def infer_config(self) -> InferenceConfig:
        return InferenceConfig(eta=self.eta, steps=self.steps, normalized=self.normalized,
                               grad_norm_floor=self.grad_norm_floor)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        """Hash of every field except the seed and output location."""
        body = "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items() if k not in ("seed", "out_dir"))
        return hashlib.sha256(body.encode()).hexdigest()[:10]

    def run_dir(self) -> Path:
        return Path(self.out_dir) / f"{self.digest()}-seed{self.seed}"

    def validate(self) -> None:
        self.train_config()
        self.infer_config()
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _field_types() -> dict[str, type]:
    defaults = RunConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    types = _field_types()
    if key not in types:
        raise KeyError(f"unknown config key {key!r}")
    kind = types[key]
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind is tuple:
        return tuple(int(p) for p in raw.split(",") if p.strip())
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    values = asdict(cfg)
    for key, raw in overrides.items():
        values[key] = parse_value(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except KeyError:
            raise ValueError(f"{origin}:{lineno}: unknown config key {key!r}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    """Read a config file; a relative ``manifest`` resolves against the file's directory."""
    path = Path(path)
    cfg = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    if cfg.manifest and not Path(cfg.manifest).is_absolute():
        cfg.manifest = str((path.parent / cfg.manifest).resolve())
    return cfg
