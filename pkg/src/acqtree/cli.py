"""Command-line interface.

Subcommands: ``run`` (one optimization run), ``sweep`` (seed fan-out),
``cluster`` (produce label files via k-means or the LLM endpoint),
``stats-test`` (Welch / pairwise tests on stdin data), ``bench-levy``
(synthetic pool CSV) and ``aggregate`` (traces to a summary CSV).
"""
from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from ._rng import RngHandle
from .bench import LevySpec, make_levy_pool
from .clustering import kmeans_cluster
from .llm import LlmEndpointConfig, llm_cluster, load_template
from .metrics import MetricSeries, aggregate as aggregate_runs
from .pool import load_pool, save_pool
from .runner import RunConfig, RunTrace, load_config, run as run_one
from .stats import (
    InapplicableTestError,
    games_howell,
    summarize_group,
    welch_anova,
)


@click.group()
def main():
    """Discrete-candidate Bayesian optimization toolkit."""


def _config_from(config, overrides) -> RunConfig:
    if config:
        return load_config(config, overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


_run_options = [
    click.option("--config", type=click.Path(), default=None, help="Config file (key=value sections)."),
    click.option("--seed", type=int, default=None),
    click.option("--policy", type=click.Choice(["llmat", "lfbo_root", "random"]), default=None),
    click.option("--depth", type=int, default=None),
    click.option("--budget", type=int, default=None),
    click.option("--n-init", "n_init", type=int, default=None),
    click.option("--p-threshold", "p_threshold", type=float, default=None),
    click.option("--clustering", type=click.Choice(["none", "kmeans", "llm", "file"]), default=None),
    click.option("--pool-path", "pool_path", type=click.Path(), default=None),
    click.option("--pool-source", "pool_source", type=click.Choice(["levy", "csv"]), default=None),
    click.option("--pool-sense", "pool_sense", type=click.Choice(["maximize", "minimize"]), default=None),
    click.option("--label-file", "label_file", type=click.Path(), default=None),
]


def _with_run_options(fn):
    for option in reversed(_run_options):
        fn = option(fn)
    return fn


@main.command("run")
@_with_run_options
@click.option("--out", type=click.Path(), default="trace.jsonl", show_default=True)
def run_command(config, out, **overrides):
    """Execute a single optimization run and write its trace."""
    try:
        cfg = _config_from(config, overrides)
        trace = run_one(cfg)
    except Exception as exc:
        raise click.ClickException(str(exc))
    trace.save(out)
    final = trace.records[-1] if trace.records else {}
    click.echo(
        f"wrote {out}: {len(trace.records)} iterations, "
        f"best={final.get('best')}, gap={final.get('gap')}"
    )


def _parse_seed_list(text: str) -> list[int]:
    seeds: list[int] = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if ".." in chunk:
            lo, hi = chunk.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif chunk:
            seeds.append(int(chunk))
    if not seeds:
        raise click.BadParameter("no seeds given")
    return seeds


@main.command("sweep")
@_with_run_options
@click.option("--seeds", required=True, help="Comma list and/or ranges, e.g. '0..14' or '1,3,7'.")
@click.option("--out-dir", type=click.Path(), default="traces", show_default=True)
def sweep_command(config, seeds, out_dir, **overrides):
    """Run the same config over a list of seeds, one trace file per seed."""
    seed_list = _parse_seed_list(seeds)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in seed_list:
        merged = dict(overrides)
        merged["seed"] = seed
        try:
            cfg = _config_from(config, merged)
            trace = run_one(cfg)
        except Exception as exc:
            raise click.ClickException(f"seed {seed}: {exc}")
        trace.save(out / f"seed{seed}.jsonl")
    click.echo(f"wrote {len(seed_list)} traces to {out}")


@main.command("cluster")
@click.option("--pool", "pool_path", type=click.Path(), required=True)
@click.option("--sense", type=click.Choice(["maximize", "minimize"]), default="minimize", show_default=True)
@click.option("--method", type=click.Choice(["kmeans", "llm"]), required=True)
@click.option("--clusters", "n_clusters", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Label CSV (doubles as the LLM cache).")
@click.option("--task", default="redoxmer", show_default=True, help="Shipped prompt template name.")
@click.option("--template-file", type=click.Path(), default=None, help="Override the shipped template.")
@click.option("--batch-size", type=int, default=50, show_default=True)
@click.option("--url", default=None, help="Chat-completion endpoint URL.")
@click.option("--model", default=None)
@click.option("--api-key-env", default="LLM_API_KEY", show_default=True)
@click.option("--timeout", type=float, default=60.0, show_default=True)
@click.option("--max-retries", type=int, default=3, show_default=True)
def cluster_command(pool_path, sense, method, n_clusters, seed, out, task,
                    template_file, batch_size, url, model, api_key_env, timeout, max_retries):
    """Produce or refresh a cluster label file for a pool."""
    try:
        pool = load_pool(pool_path, sense)
        if method == "kmeans":
            assignment = kmeans_cluster(pool, n_clusters, RngHandle(seed, "cluster/kmeans"))
            with open(out, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["id", "label"])
                for i, label in enumerate(assignment.labels):
                    writer.writerow([i, int(label)])
        else:
            if not url or not model:
                raise click.UsageError("--url and --model are required for method 'llm'")
            template = load_template(task, path=template_file, batch_size=batch_size)
            endpoint = LlmEndpointConfig(url=url, model=model, api_key_env=api_key_env,
                                         timeout=timeout, max_retries=max_retries)
            llm_cluster(pool, template, endpoint, out, n_clusters=n_clusters)
    except click.UsageError:
        raise
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote cluster labels to {out}")


@main.command("stats-test")
@click.option("--p-threshold", type=float, default=0.05, show_default=True)
@click.option("--correction", type=click.Choice(["none", "bonferroni"]), default="none", show_default=True)
def stats_test_command(p_threshold, correction):
    """Welch ANOVA and pairwise tests on 'label,value' CSV from stdin."""
    grouped: dict[int, list[float]] = {}
    reader = csv.reader(sys.stdin)
    for row in reader:
        if not row or row[0].strip().lower() == "label":
            continue
        try:
            grouped.setdefault(int(row[0]), []).append(float(row[1]))
        except (ValueError, IndexError):
            raise click.ClickException(f"malformed stdin row: {row!r}")
    if not grouped:
        raise click.ClickException("no data on stdin; expected 'label,value' rows")
    groups = [summarize_group(label, vals) for label, vals in sorted(grouped.items())]
    payload: dict = {
        "groups": [asdict(g) for g in groups],
        "p_threshold": p_threshold,
    }
    try:
        welch = welch_anova(groups)
        payload["welch"] = asdict(welch)
        payload["significant"] = welch.p_value < p_threshold
        pairs = games_howell(groups, correction)
        payload["pairwise"] = [
            {"pair": list(r.pair), "statistic": r.statistic, "df": r.df, "p_value": r.p_value}
            for r in pairs
        ]
    except InapplicableTestError as exc:
        payload["welch"] = None
        payload["pairwise"] = None
        payload["note"] = str(exc)
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@main.command("bench-levy")
@click.option("--dim", type=click.Choice(["1", "10"]), default="1", show_default=True)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--low", type=float, default=-10.0, show_default=True)
@click.option("--high", type=float, default=10.0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def bench_levy_command(dim, n, seed, low, high, out):
    """Emit a synthetic Levy pool in the ingestion CSV format."""
    try:
        spec = LevySpec(dim=int(dim), low=low, high=high, n=n, seed=seed)
        pool = make_levy_pool(spec)
        save_pool(pool, out)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(pool)} candidates to {out}")


@main.command("aggregate")
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["mean", "median"]), default="median", show_default=True)
@click.option("--normalize", is_flag=True, help="Divide regrets by each run's (y* - y0) span.")
@click.option("--out", type=click.Path(), required=True)
def aggregate_command(traces, mode, normalize, out):
    """Summarize trace files into a per-iteration CSV with dispersion bands."""
    runs = []
    try:
        for path in traces:
            trace = RunTrace.load(path)
            sign = 1.0 if trace.header["sense"] == "maximize" else -1.0
            runs.append(
                MetricSeries(
                    best=[sign * r["best"] for r in trace.records],
                    gap=[r["gap"] for r in trace.records],
                    regret=[r["regret"] for r in trace.records],
                    y_opt=trace.header["y_opt_internal"],
                    y_init=trace.header["y_init_internal"],
                )
            )
        summary = aggregate_runs(runs, mode=mode, normalize=normalize)
    except Exception as exc:
        raise click.ClickException(str(exc))
    columns = list(summary)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for i in range(len(summary["iteration"])):
            writer.writerow([_fmt(summary[c][i]) for c in columns])
    click.echo(f"wrote summary of {len(runs)} runs to {out}")


def _fmt(value):
    if isinstance(value, (np.integer, int)):
        return int(value)
    return repr(float(value))


if __name__ == "__main__":
    main()
