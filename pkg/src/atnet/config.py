"""Layered run configuration.

Flat key=value text files, overridden by command-line flags, on top of
built-in defaults that mirror the training protocol (S=10, lambda_p=0.002,
lr=2e-4, batch=10).  Every command writes its fully resolved configuration
into its output directory so a run can be replayed exactly.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Bad key, bad value, or unparseable config file (a usage error)."""


@dataclass
class RunConfig:
    # reproducibility / execution
    seed: int = 0
    threads: int = 1
    # degradation model
    n_warp_centers: int = 32
    warp_strength: tuple = (0.5, 4.0)
    warp_falloff_sigma: tuple = (8.0, 24.0)
    psf_sigma: tuple = (0.5, 3.0)
    noise_sigma: float = 0.01
    blur_first: bool = True
    pairs_per_image: int = 1
    # networks
    dropout_rate: float = 0.1
    prior_channels: int = 3
    upsample_mode: str = "bilinear"
    S: int = 10
    reduction: str = "per_channel"
    # training
    lr: float = 2e-4
    batch: int = 10
    iters: int = 0  # 0 = per-command default (200000 prior / 1500000 restoration)
    lambda_p: float = 0.002
    checkpoint_every: int = 10000
    cache_prior: bool = False
    resume_from: str = ""
    # feature extractor / embedding provider
    feature_weights: str = ""  # empty = seeded built-in descriptor
    feature_seed: int = 0
    loss_tap: str = "pool3"
    eval_tap: str = "pool5"
    embed_weights: str = ""
    embed_seed: int = 0
    embed_tap: str = "pool5"
    # paths
    input: str = ""
    output: str = ""
    manifest: str = ""
    atnet1_ckpt: str = ""
    atnet_ckpt: str = ""
    probes: str = ""
    gallery: str = ""
    save_prior: bool = False


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, text: str):
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 2:
                raise ValueError(f"expected 'lo,hi', got {text!r}")
            return tuple(parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for config key {key!r}: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def load_config_file(path) -> dict:
    """Parse a flat key=value file (# comments and blank lines allowed)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve_config(config_file=None, overrides=None) -> RunConfig:
    """Merge: command line > config file > built-in defaults."""
    cfg = RunConfig()
    layers = []
    if config_file:
        layers.append(load_config_file(config_file))
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for key, value in layer.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = _parse_value(key, value)
            setattr(cfg, key, value)
    return cfg


def dump_config(cfg: RunConfig, command: str = "") -> str:
    lines = []
    if command:
        lines.append(f"# command: {command}")
    for name in sorted(_FIELDS):
        lines.append(f"{name}={_format_value(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def write_run_config(cfg: RunConfig, out_dir, command: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    path.write_text(dump_config(cfg, command), encoding="utf-8")
    return path
