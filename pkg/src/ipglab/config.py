"""Experiment configuration: an INI file with one section per module.

Every key is typed, range-checked and defaulted; unknown sections or keys are
rejected. ``scale = paper`` swaps in the published population sizes for any
size key the file leaves unset.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

from .guidance import Policy
from .recsys import TrainConfig
from .simenv import SimConfig

OUTPUT_DIR_ENV = "IPGLAB_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _names(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _join(values) -> str:
    return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


# section -> key -> (parser, formatter)
_SCALARS = {
    int: (int, str),
    float: (float, repr),
    str: (str, str),
}
_TUPLES = {
    "gammas": (_floats, _join),
    "k_values": (_ints, _join),
    "policies": (_names, _join),
    "trajectory_users": (_ints, _join),
}

SECTIONS = {
    "run": ("seed", "output_dir", "scale", "workers"),
    "embedspace": ("embed_noise_std",),
    "simenv": ("click_w", "click_b", "gamma", "boredom_window", "boredom_trigger",
               "boredom_decay", "item_boredom_coeff"),
    "recsys": ("learning_rate", "epochs", "l2_reg", "batch_size", "embed_dim", "init_noise",
               "encoder_decay"),
    "guidance": ("policies", "alpha"),
    "harness": ("n_users", "n_items", "n_targets", "collection_rounds", "guidance_rounds",
                "oracle_fraction", "gammas", "k_values", "trajectory_users"),
}

PAPER_SCALE = {"n_users": 6034, "n_items": 3533, "n_targets": 50}

# keys that never influence results
NON_SEMANTIC = {"output_dir", "workers"}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "ipglab-out"
    scale: str = "desk"
    workers: int = 1

    embed_noise_std: float = 0.4

    click_w: float = 10.0
    click_b: float = 0.8
    gamma: float = 0.8
    boredom_window: int = 10
    boredom_trigger: int = 5
    boredom_decay: float = 0.8
    item_boredom_coeff: float = 0.1

    learning_rate: float = 0.5
    epochs: int = 15
    l2_reg: float = 1e-3
    batch_size: int = 32
    embed_dim: int = 20
    init_noise: float = 0.1
    encoder_decay: float = 0.8

    policies: tuple = ("random", "greedy", "heuristic:0.5", "heuristic:1", "heuristic:2", "ipg")
    alpha: float = 1.0

    n_users: int = 500
    n_items: int = 500
    n_targets: int = 10
    collection_rounds: int = 100
    guidance_rounds: int = 20
    oracle_fraction: float = 0.3
    gammas: tuple = (0.6, 0.7, 0.8)
    k_values: tuple = (5, 10, 15, 20)
    trajectory_users: tuple = (0,)

    def __post_init__(self):
        try:
            self.sim_config()
            self.train_config()
            self.policy_list()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.scale not in ("desk", "paper"):
            raise ConfigError("scale must be 'desk' or 'paper'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.embed_noise_std <= 0:
            raise ConfigError("embed_noise_std must be positive")
        for name in ("n_users", "n_items", "n_targets", "collection_rounds", "guidance_rounds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_targets > self.n_items:
            raise ConfigError("n_targets cannot exceed n_items")
        if not 0.0 <= self.oracle_fraction <= 1.0:
            raise ConfigError("oracle_fraction must lie in [0, 1]")
        if not self.gammas or any(not 0.0 < g < 1.0 for g in self.gammas):
            raise ConfigError("gammas must be a non-empty list of values in (0, 1)")
        ks = list(self.k_values)
        if not ks or ks != sorted(set(ks)) or ks[0] < 1 or ks[-1] > self.guidance_rounds:
            raise ConfigError("k_values must be ascending, unique and within 1..guidance_rounds")
        if any(u < 0 or u >= self.n_users for u in self.trajectory_users):
            raise ConfigError("trajectory_users must be valid user ids")

    def sim_config(self, gamma: float | None = None) -> SimConfig:
        return SimConfig(w=self.click_w, b=self.click_b,
                         gamma=self.gamma if gamma is None else gamma,
                         boredom_window=self.boredom_window, boredom_trigger=self.boredom_trigger,
                         boredom_decay=self.boredom_decay,
                         item_boredom_coeff=self.item_boredom_coeff)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           l2_reg=self.l2_reg, batch_size=self.batch_size,
                           embed_dim=self.embed_dim, init_noise=self.init_noise,
                           seed=self.seed, encoder_decay=self.encoder_decay)

    def policy_list(self) -> list:
        return [Policy.parse(p, self.alpha) for p in self.policies]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def hash(self, keys=None) -> str:
        """Hex digest over the canonical text of ``keys`` (default: all semantic keys)."""
        keys = [k for k in _all_keys() if k not in NON_SEMANTIC] if keys is None else keys
        text = "\n".join(f"{k}={_format(k, getattr(self, k))}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _all_keys():
    return [k for keys in SECTIONS.values() for k in keys]


def _field_types():
    return {f.name: type(f.default) for f in dataclasses.fields(ExperimentConfig)}


def _parse(key: str, text: str):
    if key in _TUPLES:
        return _TUPLES[key][0](text)
    return _SCALARS[_field_types()[key]][0](text.strip())


def _format(key: str, value) -> str:
    if key in _TUPLES:
        return _TUPLES[key][1](value)
    return _SCALARS[_field_types()[key]][1](value)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            try:
                values[key] = _parse(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for '{key}' in [{section}]: {raw!r}") from exc
    if values.get("scale") == "paper":
        for key, val in PAPER_SCALE.items():
            values.setdefault(key, val)
    return ExperimentConfig(**values)


def load_config(path=None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the defaults. ``IPGLAB_OUTPUT_DIR`` overrides output_dir."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        path = Path(path)
        cfg = parse_config(path.read_text(), str(path))
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        cfg = cfg.replace(output_dir=env_dir)
    return cfg


def dump_config(cfg: ExperimentConfig, semantic_only: bool = False) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format(k, getattr(cfg, k))}" for k in keys
                     if not (semantic_only and k in NON_SEMANTIC))
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
