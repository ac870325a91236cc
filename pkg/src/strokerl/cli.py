"""Command-line surface: train, paint, bench and replay.

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 integrity
error (hash mismatch on replay).
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .benchmark import BenchmarkSpec, default_sources, make_benchmark
from .config import ConfigError, RunConfig, load_run_config
from .env import EnvConfig, STOP_NONNEG, STOP_STRICT_POS
from .imageio import ImageIOError, load_image, save_image
from .learn import SCHEMES, train_pipeline
from .policy import load_agent, save_agent
from .reproduce import RuntimeConfig, evaluate_benchmark, paint_image, replay_strokes

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4


class IntegrityError(Exception):
    pass


def _load_sources(cfg: RunConfig):
    if cfg.source_images:
        return [load_image(p) for p in cfg.source_images]
    return default_sources(cfg.patch, seed=cfg.seed)


def _training_pairs(cfg: RunConfig, sources):
    """Goal patches with alternating blank/random starts."""
    spec = BenchmarkSpec(patch=cfg.patch, patch_count=cfg.train_patch_count,
                         start_mode="random")
    pairs = make_benchmark(spec, sources, seed=cfg.seed + 17)
    goals = [goal for goal, _ in pairs]
    starts = [start if i % 2 else "blank" for i, (_, start) in enumerate(pairs)]
    return goals, starts


def _collection_env(cfg: RunConfig) -> EnvConfig:
    # Data collection keeps strictly positive rewards; evaluation uses nonneg.
    return EnvConfig(**{**cfg.env.__dict__, "stop_rule": STOP_STRICT_POS})


def _eval_env(cfg: RunConfig, seed_offset=0) -> EnvConfig:
    return EnvConfig(**{**cfg.env.__dict__, "stop_rule": STOP_NONNEG,
                        "seed": cfg.seed + seed_offset})


def write_stats_csv(history, path: Path) -> None:
    records = [h.as_record() for h in history]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()) if records else ["iteration"])
        writer.writeheader()
        writer.writerows(records)


def run_train(cfg: RunConfig, scheme: str) -> Path:
    sources = _load_sources(cfg)
    goals, starts = _training_pairs(cfg, sources)
    agent, history = train_pipeline(
        goals, _collection_env(cfg), cfg.bc, cfg.ppo, scheme,
        seed=cfg.seed, starts=starts, torch_threads=cfg.torch_threads,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.out_dir / f"checkpoint_{scheme}.pt"
    save_agent(agent, ckpt)
    write_stats_csv(history, cfg.out_dir / f"trainstats_{scheme}.csv")
    return ckpt


def run_bench(cfg: RunConfig) -> dict:
    sources = _load_sources(cfg)
    goals, starts = _training_pairs(cfg, sources)
    bench_random = make_benchmark(
        BenchmarkSpec(cfg.patch, cfg.benchmark_patch_count, "random"),
        sources, seed=cfg.seed + 101,
    )
    bench_blank = make_benchmark(
        BenchmarkSpec(cfg.patch, cfg.benchmark_patch_count, "blank"),
        sources, seed=cfg.seed + 202,
    )
    table = {}
    for scheme in SCHEMES:
        agent, _ = train_pipeline(
            goals, _collection_env(cfg), cfg.bc, cfg.ppo, scheme,
            seed=cfg.seed, starts=starts, torch_threads=cfg.torch_threads,
        )
        m_random = evaluate_benchmark(agent, bench_random, _eval_env(cfg, 1))
        m_blank = evaluate_benchmark(agent, bench_blank, _eval_env(cfg, 2))
        table[scheme] = {
            "benchmark1_random": m_random["mean_cumulative_reward"],
            "benchmark2_blank": m_blank["mean_cumulative_reward"],
            "benchmark1_final_loss": m_random["mean_final_loss"],
            "benchmark2_final_loss": m_blank["mean_final_loss"],
        }
    return table


def write_bench_outputs(table: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "benchmark1_random", "benchmark2_blank"])
        for scheme in SCHEMES:
            writer.writerow([
                scheme,
                f"{table[scheme]['benchmark1_random']:.6f}",
                f"{table[scheme]['benchmark2_blank']:.6f}",
            ])
    (out_dir / "bench_summary.json").write_text(json.dumps(table, indent=2))


@click.group()
def main():
    """Stroke-based image reproduction agent."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--scheme", default=None, type=click.Choice(SCHEMES))
def train(config_path, scheme):
    """Train an agent and write a checkpoint plus per-iteration stats."""
    try:
        cfg = load_run_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        ckpt = run_train(cfg, scheme or cfg.scheme)
    except ImageIOError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"checkpoint written to {ckpt}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--reference", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--strokes", default=1000, type=int)
@click.option("--thresh", default=0.01, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--patch", default=41, type=int)
def paint(checkpoint, reference, out_path, strokes, thresh, seed, patch):
    """Reproduce a reference image with a trained agent."""
    from .perception import PatchSpec

    try:
        agent = load_agent(checkpoint)
        ref = load_image(reference)
    except (ImageIOError, OSError, ValueError) as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    try:
        cfg = RuntimeConfig(patch=PatchSpec(patch, patch), thresh_sim=thresh,
                            max_total_strokes=strokes, seed=seed)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    result = paint_image(agent, ref, cfg)
    out = Path(out_path)
    try:
        save_image(result.canvas, out)
        out.with_suffix(".strokes.json").write_text(json.dumps(result.stroke_log))
        with open(out.with_suffix(".losstrace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stroke", "loss"])
            for i, loss in enumerate(result.loss_trace):
                writer.writerow([i, f"{loss:.12f}"])
    except (ImageIOError, OSError) as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    status = "budget exhausted" if result.budget_exhausted else "threshold reached"
    click.echo(f"painted {len(result.stroke_log['strokes'])} strokes "
               f"(final loss {result.final_loss:.6f}, {status})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def bench(config_path):
    """Train all schemes on one budget and tabulate benchmark rewards."""
    try:
        cfg = load_run_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        table = run_bench(cfg)
        write_bench_outputs(table, cfg.out_dir)
    except ImageIOError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"{'scheme':<12} {'benchmark1':>12} {'benchmark2':>12}")
    for scheme in SCHEMES:
        click.echo(f"{scheme:<12} {table[scheme]['benchmark1_random']:>12.4f} "
                   f"{table[scheme]['benchmark2_blank']:>12.4f}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--start", "start_path", default=None, type=click.Path())
def replay(log_path, out_path, start_path):
    """Rebuild a painted image from its stroke log and verify its hash."""
    try:
        log = json.loads(Path(log_path).read_text())
        start = load_image(start_path) if start_path else None
    except (OSError, json.JSONDecodeError, ImageIOError) as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    try:
        canvas = replay_strokes(log, start=start)
    except ValueError as exc:
        click.echo(f"integrity error: {exc}", err=True)
        sys.exit(EXIT_INTEGRITY)
    try:
        save_image(canvas, out_path)
    except ImageIOError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"replayed {len(log['strokes'])} strokes; hash verified")


if __name__ == "__main__":
    main()
