"""Run configuration: defaults, validation and the flat YAML file format."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ValidationError

SELF_TASKS = ("reconstruction", "denoising")


@dataclass
class RunConfig:
    # image / network size (desk scale by default)
    N: int = 64
    channels: int = 3
    base_channels: int = 16
    # adaptive threshold mu = a + mean(S) * b
    a: float = 0.4
    b: float = 0.2
    alpha_range: tuple[float, float] = (0.1, 1.0)
    forged_ratio: float = 3.0
    n_contrast: int = 5
    # total loss = lambda * self + focal
    lam: float = 1.0
    tau: float = 2.0
    lr: float = 1e-4
    batch_size: int = 16
    total_epochs: int = 40
    decay_milestones: tuple[float, ...] = (0.5, 0.7, 0.9)
    seed: int = 0
    smoothing_window: int = 21
    ssim_window: int = 11
    self_task: str = "reconstruction"
    warmup_fraction: float = 0.1
    refresh_fraction: float = 0.1
    checkpoint_every: int = 10
    mask_retries: int = 10

    def __post_init__(self) -> None:
        self.alpha_range = tuple(float(v) for v in self.alpha_range)
        self.decay_milestones = tuple(float(v) for v in self.decay_milestones)
        self.validate()

    def validate(self) -> None:
        def bad(name: str, why: str) -> ValidationError:
            return ValidationError(f"invalid config field '{name}': {why}")

        if self.a < 0:
            raise bad("a", "must be >= 0")
        if self.b < 0:
            raise bad("b", "must be >= 0")
        if self.a + self.b > 1:
            raise bad("a", f"a + b must be <= 1 (got {self.a + self.b:g})")
        if len(self.alpha_range) != 2:
            raise bad("alpha_range", "expected [lo, hi]")
        lo, hi = self.alpha_range
        if not 0 <= lo <= hi <= 1:
            raise bad("alpha_range", "need 0 <= lo <= hi <= 1")
        if self.tau < 0:
            raise bad("tau", "must be >= 0")
        if self.lam < 0:
            raise bad("lam", "must be >= 0")
        for name in ("smoothing_window", "ssim_window"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise bad(name, "must be odd and >= 1")
        if self.forged_ratio <= 0:
            raise bad("forged_ratio", "must be > 0")
        if self.channels not in (1, 3):
            raise bad("channels", "must be 1 or 3")
        if self.N < 16 or self.N % 16:
            raise bad("N", "must be a positive multiple of 16")
        if self.base_channels < 4:
            raise bad("base_channels", "must be >= 4")
        if self.n_contrast < 1:
            raise bad("n_contrast", "must be >= 1")
        if self.batch_size < 1:
            raise bad("batch_size", "must be >= 1")
        if self.total_epochs < 1:
            raise bad("total_epochs", "must be >= 1")
        if self.lr <= 0:
            raise bad("lr", "must be > 0")
        if self.self_task not in SELF_TASKS:
            raise bad("self_task", f"must be one of {SELF_TASKS}")
        if not all(0 < m <= 1 for m in self.decay_milestones):
            raise bad("decay_milestones", "fractions must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alpha_range"] = list(self.alpha_range)
        d["decay_milestones"] = list(self.decay_milestones)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# accepted spellings for the loss weight
_ALIASES = {"lambda": "lam"}


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    known = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ValidationError(f"unknown config key '{key}'")
        kwargs[name] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    """Read a flat YAML mapping; absent keys take the defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a flat key/value mapping")
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
