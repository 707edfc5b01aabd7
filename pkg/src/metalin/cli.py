"""Command line driver.

Usage::

    metalin <experiment> --config settings.json --out results.csv [--threads K] [--seed S]
    metalin verify [--subset <module>] [--out report.json]

Exit codes: 0 success, 1 config error, 2 verification failure, 3 numerical
failure (a singular system is named in the message).
"""

from __future__ import annotations

import dataclasses
import json
import sys

import click
import numpy as np

from .exceptions import ConfigError, MetalinError
from .experiments import RUNNERS, ExperimentConfig, resolve_threads, write_csv
from .verify import DEFAULT_SEED, MODULES, run_verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_NUMERICAL = 3


@click.group()
def main():
    """Meta linear regression experiments: closed-form learners and theory checks."""


def _experiment_command(name: str):
    @click.option("--config", "config_path", required=True, type=click.Path(exists=False))
    @click.option("--out", "out_path", required=True, type=click.Path())
    @click.option("--threads", type=int, default=None, help="worker threads (METALIN_THREADS wins)")
    @click.option("--seed", type=int, default=None, help="override the config's seed list with one seed")
    def command(config_path, out_path, threads, seed):
        try:
            config = ExperimentConfig.from_json(config_path, experiment=name)
            if seed is not None:
                config = dataclasses.replace(config, seeds=(seed,))
            n_threads = resolve_threads(threads)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        try:
            rows = RUNNERS[name](config, threads=n_threads)
        except (np.linalg.LinAlgError, MetalinError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        write_csv(rows, out_path)
        click.echo(f"{name}: wrote {len(rows)} rows to {out_path}")

    command.__name__ = name.replace("-", "_")
    return main.command(name=name)(command)


for _name in RUNNERS:
    _experiment_command(_name)


@main.command()
@click.option("--subset", type=click.Choice(MODULES), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="write the JSON report here")
@click.option("--seed", type=int, default=DEFAULT_SEED)
def verify(subset, out_path, seed):
    """Run every module's invariant suite; exit 0 iff all checks pass."""
    report = run_verify(seed=seed, subset=subset)
    text = json.dumps(report, indent=2)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        click.echo(text)
    for check in report["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        click.echo(f"[{status}] {check['module']}/{check['name']}", err=True)
    if not report["passed"]:
        sys.exit(EXIT_VERIFY)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
