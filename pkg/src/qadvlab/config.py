"""Experiment configuration: one INI file with flat sections."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .attacks import AttackConfig
from .models import ROSTER
from .textio import config_hash
from .training import TrainConfig

OUT_ROOT_ENV = "QADVLAB_OUT_ROOT"
TASKS = ("ising", "mnist", "synthetic")


class ConfigError(ValueError):
    pass


def parse_epsilon_grid(text: str) -> list[float]:
    """``"0:0.02:0.2"`` (start:step:stop, inclusive) or ``"0,0.1,0.2"``."""
    text = text.strip()
    try:
        if ":" in text:
            start, step, stop = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ConfigError("epsilon grid step must be positive")
            count = int(round((stop - start) / step))
            grid = [round(start + i * step, 12) for i in range(count + 1)]
        else:
            grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"epsilon grid {text!r}: {exc}") from None
    if not grid:
        raise ConfigError("epsilon grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"epsilon grid must be strictly ascending: {grid}")
    if grid[0] < 0:
        raise ConfigError("epsilon grid entries must be nonnegative")
    return grid


def parse_members(text: str) -> list[int]:
    try:
        out = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad classifier list {text!r}") from None
    bad = [m for m in out if not 1 <= m <= len(ROSTER)]
    if not out or bad:
        raise ConfigError(f"classifier list {text!r} must name roster members 1..{len(ROSTER)}")
    return out


@dataclass
class ExperimentConfig:
    task: str = "ising"
    seed: int = 0
    out: Path = Path("runs/default")
    mnist_dir: Path = Path("mnist")
    ising_length: int = 8
    n_train: int = 300
    n_test: int = 100
    n_val: int = 100
    digits: tuple[int, int] = (1, 9)
    members: list[int] = field(default_factory=lambda: list(range(1, len(ROSTER) + 1)))
    training: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.01, epochs=10, batch_size=10))
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(step_alpha=0.02, epsilon_budget=0.18, max_iters=100))
    perturbation: AttackConfig = field(default_factory=lambda: AttackConfig(step_alpha=0.02, epsilon_budget=1.0, max_iters=200))
    epsilon_grid: list[float] = field(default_factory=lambda: parse_epsilon_grid("0:0.02:0.2"))
    subset: list[int] = field(default_factory=lambda: [1, 3, 6])
    surrogate: int = 1
    perturb_target: int = 2
    transfer_seeds: int = 5
    transfer_sample_size: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.members:
            raise ConfigError("roster is empty")
        missing = [m for m in self.subset + [self.surrogate, self.perturb_target] if m not in self.members]
        if missing:
            raise ConfigError(f"classifiers {missing} are used by attacks but not in the roster")

    def as_flat(self) -> dict:
        """Every setting as strings; the basis of the config hash."""
        flat = {}
        for f in fields(self):
            if f.name in ("out", "threads"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, (TrainConfig, AttackConfig)):
                flat.update({f"{f.name}.{k}": str(x) for k, x in v.__dict__.items()})
            else:
                flat[f.name] = str(v)
        return flat

    @property
    def hash(self) -> str:
        return config_hash(self.as_flat())

    def stamp(self) -> dict:
        return {"seed": self.seed, "config_hash": self.hash}


def _sub(obj, section: configparser.SectionProxy | None, rename: dict | None = None):
    if section is None:
        return obj
    rename = rename or {}
    kw = {}
    for key, text in section.items():
        name = rename.get(key, key)
        if name not in obj.__dict__:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        cur = obj.__dict__[name]
        try:
            if name == "sample_size":
                kw[name] = None if text.strip().lower() in ("", "none") else int(text)
            elif isinstance(cur, bool):
                kw[name] = section.getboolean(key)
            elif isinstance(cur, int):
                kw[name] = int(text)
            elif isinstance(cur, float):
                kw[name] = float(text)
            else:
                kw[name] = text.strip()
        except ValueError:
            raise ConfigError(f"[{section.name}] {key} = {text!r} is not valid") from None
    try:
        return replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {exc}") from None


def load_config(path=None, *, out=None, seed=None, threads=None, subset=None, epsilon_grid=None) -> ExperimentConfig:
    """Read an INI config (or defaults when ``path`` is None) and apply CLI overrides."""
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    cfg = ExperimentConfig.__new__(ExperimentConfig)
    base = ExperimentConfig()
    kw = dict(base.__dict__)
    get = lambda sec: cp[sec] if cp.has_section(sec) else None
    exp = get("experiment")
    if exp is not None:
        for key, text in exp.items():
            if key in ("task",):
                kw[key] = text.strip()
            elif key in ("seed", "ising_length", "n_train", "n_test", "n_val", "surrogate",
                         "perturb_target", "transfer_seeds", "transfer_sample_size", "threads"):
                try:
                    kw[key] = int(text)
                except ValueError:
                    raise ConfigError(f"[experiment] {key} = {text!r} is not an integer") from None
            elif key in ("out", "mnist_dir"):
                kw[key] = Path(text.strip())
            elif key == "digits":
                kw[key] = tuple(parse_members_raw(text))
            elif key in ("members", "subset"):
                kw[key] = parse_members(text)
            elif key == "epsilon_grid":
                kw[key] = parse_epsilon_grid(text)
            else:
                raise ConfigError(f"[experiment] unknown key {key!r}")
    kw["training"] = _sub(base.training, get("training"))
    kw["attack"] = _sub(base.attack, get("attack"))
    kw["perturbation"] = _sub(base.perturbation, get("perturbation"))
    for name in cp.sections():
        if name not in ("experiment", "training", "attack", "perturbation"):
            raise ConfigError(f"unknown section [{name}]")
    if seed is not None:
        kw["seed"] = int(seed)
    if threads is not None:
        kw["threads"] = int(threads)
    if subset is not None:
        kw["subset"] = parse_members(subset)
    if epsilon_grid is not None:
        kw["epsilon_grid"] = parse_epsilon_grid(epsilon_grid)
    if out is not None:
        kw["out"] = Path(out)
    # the only environment hook: a root prepended to relative run directories
    if os.environ.get(OUT_ROOT_ENV) and not kw["out"].is_absolute():
        kw["out"] = Path(os.environ[OUT_ROOT_ENV]) / kw["out"]
    cfg.__dict__.update(kw)
    cfg.__post_init__()
    return cfg


def parse_members_raw(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None
