"""Run configuration: one YAML document describing a whole run.

Every section is validated against an explicit schema; unknown keys are
rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .env import EnvConfig, STOP_NONNEG
from .learn import BCConfig, PPOConfig, SCHEMES
from .perception import PatchSpec
from .reproduce import RuntimeConfig


class ConfigError(Exception):
    """Schema violation or unreadable configuration file."""


@dataclass
class RunConfig:
    seed: int
    scheme: str
    patch: PatchSpec
    env: EnvConfig
    bc: BCConfig
    ppo: PPOConfig
    runtime: RuntimeConfig
    out_dir: Path
    benchmark_patch_count: int = 100
    train_patch_count: int = 20
    source_images: list = field(default_factory=list)
    torch_threads: int = 1


_SCHEMA = {
    "seed": int,
    "scheme": str,
    "patch": list,
    "torch_threads": int,
    "env": {
        "max_steps": int,
        "gamma": float,
        "grace_steps": int,
        "stop_rule": str,
        "max_radius": int,
    },
    "bc": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "reward_filter": bool,
    },
    "ppo": {
        "clip_epsilon": float,
        "epochs_per_batch": int,
        "minibatch_size": int,
        "learning_rate": float,
        "rollout_batch": int,
        "iterations": int,
        "entropy_coeff": float,
        "value_coeff": float,
        "max_grad_norm": float,
    },
    "runtime": {
        "thresh_sim": float,
        "max_total_strokes": int,
    },
    "benchmark": {
        "patch_count": int,
        "train_patch_count": int,
        "source_images": list,
    },
    "paths": {
        "out_dir": str,
    },
}


def _check_section(name: str, given: dict, schema: dict) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(given) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    for key, value in given.items():
        expected = schema[key]
        if isinstance(expected, dict):
            _check_section(f"{name}.{key}", value, expected)
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be a number, got {value!r}")
        elif not isinstance(value, expected) or (
            expected is int and isinstance(value, bool)
        ):
            raise ConfigError(
                f"{name}.{key} must be {expected.__name__}, got {value!r}"
            )


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse, validate and assemble one run configuration."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    _check_section("<root>", raw, _SCHEMA)
    if overrides:
        raw.update(overrides)

    seed = raw.get("seed", 0)
    scheme = raw.get("scheme", "combined")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    patch_raw = raw.get("patch", [41, 41])
    if len(patch_raw) != 2 or not all(isinstance(v, int) for v in patch_raw):
        raise ConfigError(f"patch must be [height, width] ints, got {patch_raw!r}")
    try:
        patch = PatchSpec(*patch_raw)
        env_raw = raw.get("env", {})
        env = EnvConfig(
            patch=patch,
            max_steps=env_raw.get("max_steps", 50),
            gamma=env_raw.get("gamma", 0.9),
            grace_steps=env_raw.get("grace_steps", 5),
            stop_rule=env_raw.get("stop_rule", STOP_NONNEG),
            max_radius=env_raw.get("max_radius", 8),
            seed=seed,
        )
        bc = BCConfig(**raw.get("bc", {}))
        ppo = PPOConfig(**raw.get("ppo", {}))
        runtime_raw = raw.get("runtime", {})
        runtime = RuntimeConfig(
            patch=patch,
            thresh_sim=runtime_raw.get("thresh_sim", 0.01),
            max_total_strokes=runtime_raw.get("max_total_strokes", 1000),
            max_radius=env.max_radius,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bench_raw = raw.get("benchmark", {})
    return RunConfig(
        seed=seed,
        scheme=scheme,
        patch=patch,
        env=env,
        bc=bc,
        ppo=ppo,
        runtime=runtime,
        out_dir=Path(raw.get("paths", {}).get("out_dir", "runs/out")),
        benchmark_patch_count=bench_raw.get("patch_count", 100),
        train_patch_count=bench_raw.get("train_patch_count", 20),
        source_images=bench_raw.get("source_images", []),
        torch_threads=raw.get("torch_threads", 1),
    )
