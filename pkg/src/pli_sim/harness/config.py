"""Simulation configuration and its plain-text file format.

Config files are flat `key = value` lines with `#` comments. Nested settings
use dotted keys. Example:

    n_clients = 10
    learners_per_client = 50
    weeks = 12
    rounds = 20
    master_seed = 42
    archetype_mix = HighEngaged:0.5, LowEngaged:0.5
    training_window_weeks = none
    train.learning_rate = 0.1
    train.epochs = 200
    train.l2_lambda = 0.001
    train.convergence_tol = 1e-7
    clip.max_norm = 1.0
    noise.noise_multiplier = 0.0
    channel.loss_probability = 0.0
    channel.latency_ticks = 1        # or "lo:hi" for uniform latency
    policy.epsilon_tol = 0.02
    output_dir = runs/default

Unset noise/channel seeds are derived from the master seed at run time, so a
config file fully determines a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..hub import AcceptancePolicy
from ..privacy import ClipConfig, NoiseConfig
from ..trainer import TrainConfig
from ..transport import ChannelConfig, LatencySpec


class ConfigError(ValueError):
    """Bad key, value or combination in a simulation config."""


@dataclass(frozen=True)
class SimConfig:
    n_clients: int = 10
    learners_per_client: int = 50
    weeks: int = 12
    rounds: int = 20
    master_seed: int = 42
    archetype_mix: tuple[tuple[str, float], ...] = (
        ("HighEngaged", 0.5),
        ("LowEngaged", 0.5),
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    clip: ClipConfig = field(default_factory=ClipConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    policy: AcceptancePolicy = field(default_factory=AcceptancePolicy)
    output_dir: str | None = None
    min_clients: int = 2
    deadline_ticks: int = 1000
    validation_learners: int = 200
    training_window_weeks: int | None = None
    feature_kind: str = "raw"
    workers: int = 1
    dp_delta: float = 1e-5

    def __post_init__(self) -> None:
        for name in ("n_clients", "learners_per_client", "weeks", "rounds"):
            if getattr(self, name) < (0 if name == "rounds" else 1):
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 unsigned bits")
        total = sum(p for _, p in self.archetype_mix)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"archetype_mix proportions sum to {total}, expected 1")
        if any(p < 0 for _, p in self.archetype_mix):
            raise ConfigError("archetype_mix proportions must be non-negative")
        if self.min_clients < 1:
            raise ConfigError("min_clients must be positive")
        if self.validation_learners < 1:
            raise ConfigError("validation_learners must be positive")
        if self.training_window_weeks is not None and self.training_window_weeks < 1:
            raise ConfigError("training_window_weeks must be positive or unset")
        if self.feature_kind not in ("raw", "measures"):
            raise ConfigError("feature_kind must be 'raw' or 'measures'")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if not 0 < self.dp_delta < 1:
            raise ConfigError("dp_delta must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_clients": self.n_clients,
            "learners_per_client": self.learners_per_client,
            "weeks": self.weeks,
            "rounds": self.rounds,
            "master_seed": self.master_seed,
            "archetype_mix": {name: p for name, p in self.archetype_mix},
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "l2_lambda": self.train.l2_lambda,
                "convergence_tol": self.train.convergence_tol,
                "seed": self.train.seed,
            },
            "clip": {"max_norm": self.clip.max_norm},
            "noise": {
                "noise_multiplier": self.noise.noise_multiplier,
                "seed": self.noise.seed,
            },
            "channel": {
                "loss_probability": self.channel.loss_probability,
                "latency_ticks": (
                    f"{self.channel.latency.lo}"
                    if self.channel.latency.kind == "fixed"
                    else f"{self.channel.latency.lo}:{self.channel.latency.hi}"
                ),
                "seed": self.channel.seed,
            },
            "policy": {
                "epsilon_tol": self.policy.epsilon_tol,
                "validation_set_ref": self.policy.validation_set_ref,
            },
            "output_dir": self.output_dir,
            "min_clients": self.min_clients,
            "deadline_ticks": self.deadline_ticks,
            "validation_learners": self.validation_learners,
            "training_window_weeks": self.training_window_weeks,
            "feature_kind": self.feature_kind,
            "workers": self.workers,
            "dp_delta": self.dp_delta,
        }


def parse_kv_file(path) -> dict[str, str]:
    """Read flat `key = value` lines, ignoring blanks and # comments."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip().strip('"')
    return out


def _parse_mix(text: str) -> tuple[tuple[str, float], ...]:
    parts = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"archetype_mix entry {chunk!r} needs name:proportion")
        name, prop = chunk.rsplit(":", 1)
        parts.append((name.strip(), float(prop)))
    if not parts:
        raise ConfigError("archetype_mix is empty")
    return tuple(parts)


def _maybe_int(text: str) -> int | None:
    return None if text.lower() in ("none", "") else int(text)


_KNOWN_KEYS = {
    "n_clients", "learners_per_client", "weeks", "rounds", "master_seed",
    "archetype_mix", "output_dir", "min_clients", "deadline_ticks",
    "validation_learners", "training_window_weeks", "feature_kind", "workers",
    "dp_delta",
    "train.learning_rate", "train.epochs", "train.l2_lambda",
    "train.convergence_tol", "train.seed",
    "clip.max_norm",
    "noise.noise_multiplier", "noise.seed",
    "channel.loss_probability", "channel.latency_ticks", "channel.seed",
    "policy.epsilon_tol", "policy.validation_set_ref",
}


def sim_config_from_file(
    path, *, seed_override: int | None = None, out_override: str | None = None
) -> SimConfig:
    """Build a SimConfig from a key-value file plus CLI overrides."""
    raw = parse_kv_file(path)
    unknown = sorted(set(raw) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")

    defaults = SimConfig()

    def get(key: str, default):
        return raw.get(key, default)

    train = TrainConfig(
        learning_rate=float(get("train.learning_rate", defaults.train.learning_rate)),
        epochs=int(get("train.epochs", defaults.train.epochs)),
        l2_lambda=float(get("train.l2_lambda", defaults.train.l2_lambda)),
        convergence_tol=float(
            get("train.convergence_tol", defaults.train.convergence_tol)
        ),
        seed=int(get("train.seed", defaults.train.seed)),
    )
    clip = ClipConfig(max_norm=float(get("clip.max_norm", defaults.clip.max_norm)))
    noise = NoiseConfig(
        noise_multiplier=float(
            get("noise.noise_multiplier", defaults.noise.noise_multiplier)
        ),
        seed=_maybe_int(str(get("noise.seed", ""))),
    )
    channel = ChannelConfig(
        loss_probability=float(
            get("channel.loss_probability", defaults.channel.loss_probability)
        ),
        latency=LatencySpec.parse(str(get("channel.latency_ticks", "1"))),
        seed=_maybe_int(str(get("channel.seed", ""))),
    )
    policy = AcceptancePolicy(
        epsilon_tol=float(get("policy.epsilon_tol", defaults.policy.epsilon_tol)),
        validation_set_ref=str(
            get("policy.validation_set_ref", defaults.policy.validation_set_ref)
        ),
    )

    cfg = SimConfig(
        n_clients=int(get("n_clients", defaults.n_clients)),
        learners_per_client=int(get("learners_per_client", defaults.learners_per_client)),
        weeks=int(get("weeks", defaults.weeks)),
        rounds=int(get("rounds", defaults.rounds)),
        master_seed=int(get("master_seed", defaults.master_seed)),
        archetype_mix=(
            _parse_mix(raw["archetype_mix"])
            if "archetype_mix" in raw
            else defaults.archetype_mix
        ),
        train=train,
        clip=clip,
        noise=noise,
        channel=channel,
        policy=policy,
        output_dir=raw.get("output_dir"),
        min_clients=int(get("min_clients", defaults.min_clients)),
        deadline_ticks=int(get("deadline_ticks", defaults.deadline_ticks)),
        validation_learners=int(get("validation_learners", defaults.validation_learners)),
        training_window_weeks=_maybe_int(str(get("training_window_weeks", "none"))),
        feature_kind=str(get("feature_kind", defaults.feature_kind)),
        workers=int(get("workers", defaults.workers)),
        dp_delta=float(get("dp_delta", defaults.dp_delta)),
    )
    if seed_override is not None:
        cfg = replace(cfg, master_seed=seed_override)
    if out_override is not None:
        cfg = replace(cfg, output_dir=out_override)
    return cfg


def parse_grid_file(path) -> dict[str, list]:
    """Read a sweep grid: each line `field = v1, v2, ...` over TrainConfig fields."""
    raw = parse_kv_file(path)
    valid = {"learning_rate", "epochs", "l2_lambda", "convergence_tol", "seed"}
    grid: dict[str, list] = {}
    for key, value in raw.items():
        if key not in valid:
            raise ConfigError(f"{path}: {key!r} is not a sweepable training field")
        values = []
        for chunk in value.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            values.append(int(chunk) if key in ("epochs", "seed") else float(chunk))
        if not values:
            raise ConfigError(f"{path}: no values for {key!r}")
        grid[key] = values
    if not grid:
        raise ConfigError(f"{path}: empty grid")
    return grid
