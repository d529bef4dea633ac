"""JSON configuration file holding every tunable default."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict
from pathlib import Path

from .data import SyntheticMarketConfig
from .evaluation import BIN_WIDTH, GER_THRESHOLDS
from .lifelong import LifelongConfig
from .pipeline import BuildConfig


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    train = asdict(LifelongConfig())
    train.update({"t0": 7, "last_month": None})
    return {
        "market": asdict(SyntheticMarketConfig()),
        "build": asdict(BuildConfig()),
        "train": train,
        "tune": {"budget": 60, "epochs_per_eval": 5, "eps": 0.01, "seed": 0, "month": None},
        "evaluate": {"thresholds": list(GER_THRESHOLDS), "bin_width": BIN_WIDTH, "top_k_weights": 15},
    }


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown configuration key {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {where}{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the JSON file at ``path`` (if any)."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _merge(cfg, doc, "")


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(json.dumps(default_config(), indent=2) + "\n", encoding="utf-8")


def market_config(cfg: dict) -> SyntheticMarketConfig:
    return SyntheticMarketConfig(**cfg["market"])


def build_config(cfg: dict) -> BuildConfig:
    return BuildConfig(**cfg["build"])


def lifelong_config(cfg: dict) -> LifelongConfig:
    train = {k: v for k, v in cfg["train"].items() if k not in ("t0", "last_month")}
    if train.get("lambdas") is not None:
        train["lambdas"] = tuple(train["lambdas"])
    return LifelongConfig(**train)
