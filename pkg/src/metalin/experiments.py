"""Experiment runners emitting reproducible, machine-readable CSV rows.

Every runner derives the random stream of each grid cell from
``(master seed, cell index)``, so output is byte-identical across runs and
thread counts; rows are buffered per cell and written in deterministic cell
order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .constants import asymptotic_constant, constant_ordering_check
from .estimators import ERM, MAML, BaMAML, IMAML, make_method, optimal_theta0
from .exceptions import ConfigError
from .numerics import make_rng
from .risk import decompose, population_risk, statistical_error
from .tasks import TaskDistribution, sample_datasets, sample_task, sample_tasks, split_sizes

EXPERIMENTS = ("win-prob", "sweep-hyper", "sweep-split", "decay", "constants")

_KNOWN_KEYS = {
    "experiment",
    "d",
    "N",
    "T",
    "s",
    "alpha",
    "gamma",
    "seeds",
    "repetitions",
    "task_pool",
    "alpha_grid",
    "gamma_grid",
    "s_grid",
    "logT_grid",
    "logN_grid",
    "method_a",
    "method_b",
    "noiseless",
    "n_samples",
}

# stream domains under one master seed
_STREAM_DIST = 0
_STREAM_POOL = 1
_STREAM_CELL = 2

COLUMNS = (
    "experiment",
    "method",
    "hyperparams",
    "d",
    "N",
    "T",
    "s",
    "seed",
    "metric",
    "value",
    "mc_std_error",
)

AGGREGATE_SEED = -1


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; unknown JSON keys are rejected.

    Defaults anchor the hyperparameters at alpha=0.7, gamma=0.1 and use a
    10^4-task pool for population expectations.  Grid fields are only
    required by the experiments that consume them.
    """

    experiment: str
    d: int = 1
    N: int = 100
    T: int = 1000
    s: float = 0.5
    alpha: float = 0.7
    gamma: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    repetitions: int = 20
    task_pool: int = 10000
    alpha_grid: tuple[float, ...] | None = None
    gamma_grid: tuple[float, ...] | None = None
    s_grid: tuple[float, ...] | None = None
    logT_grid: tuple[int, ...] | None = None
    logN_grid: tuple[int, ...] | None = None
    method_a: str = "bamaml"
    method_b: str = "maml"
    noiseless: bool = False
    n_samples: int = 10000

    @classmethod
    def from_dict(cls, data: dict, experiment: str | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(data)
        if experiment is not None:
            stated = merged.get("experiment")
            if stated is not None and stated != experiment:
                raise ConfigError(
                    f"config names experiment {stated!r} but {experiment!r} was requested"
                )
            merged["experiment"] = experiment
        for key in ("seeds", "alpha_grid", "gamma_grid", "s_grid", "logT_grid", "logN_grid"):
            if merged.get(key) is not None:
                merged[key] = tuple(merged[key])
        try:
            config = cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: str, experiment: str | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, experiment)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}"
            )
        for name in ("d", "N", "T", "repetitions", "task_pool", "n_samples"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 < self.s < 1.0:
            raise ConfigError(f"s must lie in (0, 1), got {self.s}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.gamma <= 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        for name in ("method_a", "method_b"):
            if getattr(self, name) not in ("erm", "maml", "imaml", "bamaml"):
                raise ConfigError(f"{name} must name a method, got {getattr(self, name)!r}")
        required = {
            "win-prob": ("logT_grid", "logN_grid"),
            "sweep-hyper": ("alpha_grid", "gamma_grid"),
            "sweep-split": ("s_grid",),
            "decay": (),
            "constants": (),
        }[self.experiment]
        for name in required:
            grid = getattr(self, name)
            if not grid:
                raise ConfigError(f"experiment {self.experiment!r} requires a non-empty {name}")
        if self.experiment == "decay" and not (self.logT_grid or self.logN_grid):
            raise ConfigError("decay requires logT_grid or logN_grid")
        for name in ("s_grid",):
            if getattr(self, name):
                for value in getattr(self, name):
                    if not 0.0 < value < 1.0:
                        raise ConfigError(f"{name} entries must lie in (0, 1), got {value}")
        for name in ("logT_grid", "logN_grid"):
            if getattr(self, name):
                for value in getattr(self, name):
                    if not isinstance(value, int) or value < 1:
                        raise ConfigError(f"{name} entries must be positive integers, got {value!r}")
        # splits that would empty one side are config errors, not runtime errors
        for s_value in (self.s,) + tuple(self.s_grid or ()):
            sizes_n = [self.N] + list(self.logN_grid or ())
            for n_value in sizes_n:
                try:
                    split_sizes(n_value, s_value)
                except Exception as exc:
                    raise ConfigError(f"invalid split s={s_value} for N={n_value}: {exc}") from exc
        if self.experiment == "decay":
            self._validate_decay_solvability()

    def _validate_decay_solvability(self) -> None:
        for t_value in self.logT_grid or (self.T,):
            n1, n2 = split_sizes(self.N, self.s)
            if t_value * min(n1, n2) < self.d:
                raise ConfigError(
                    f"T={t_value} with N={self.N}, s={self.s} risks a singular "
                    f"aggregate weight for erm/maml (T * min(N1, N2) < d)"
                )
        for n_value in self.logN_grid or ():
            n1, n2 = split_sizes(n_value, self.s)
            if self.T * min(n1, n2) < self.d:
                raise ConfigError(
                    f"N={n_value} with T={self.T}, s={self.s} risks a singular "
                    f"aggregate weight for erm/maml (T * min(N1, N2) < d)"
                )


@dataclass(frozen=True)
class ResultRow:
    """One metric value, one row; column set and order are fixed."""

    experiment: str
    method: str
    hyperparams: str
    d: int
    N: int
    T: int
    s: float
    seed: int
    metric: str
    value: float
    mc_std_error: float | None = None

    def as_record(self) -> list[str]:
        return [
            self.experiment,
            self.method,
            self.hyperparams,
            str(self.d),
            str(self.N),
            str(self.T),
            _fmt(self.s),
            str(self.seed),
            self.metric,
            _fmt(self.value),
            _fmt(self.mc_std_error),
        ]


def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def write_csv(rows: list[ResultRow], path: str) -> None:
    """Write rows as RFC-4180 CSV with a mandatory header."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row.as_record())


def resolve_threads(requested: int | None) -> int:
    """Thread count: the METALIN_THREADS environment variable wins over the flag."""
    env = os.environ.get("METALIN_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"METALIN_THREADS must be an integer, got {env!r}") from exc
    else:
        value = requested if requested is not None else 1
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _map_cells(fn, n_cells: int, threads: int) -> list:
    """Evaluate ``fn(cell_index)`` for every cell, returning results in cell order."""
    if threads <= 1 or n_cells <= 1:
        return [fn(i) for i in range(n_cells)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_cells)))


def _distribution(config: ExperimentConfig, seed: int) -> TaskDistribution:
    return TaskDistribution.general(make_rng(seed, _STREAM_DIST), config.d)


def _pool_tasks(config: ExperimentConfig, dist: TaskDistribution, seed: int):
    if config.noiseless:
        base = sample_task(make_rng(seed, _STREAM_POOL), dist)
        return [dataclasses.replace(base, noise_sigma=0.0)]
    return sample_tasks(make_rng(seed, _STREAM_POOL), dist, config.task_pool)


def _training_tasks(config, dist, pool, rng, n_tasks):
    # the finite pool *is* the task distribution: meta-training tasks are
    # i.i.d. picks from it, so the fitted solution converges to the pool
    # optimum and the risk decomposition stays exact
    if config.noiseless:
        return [pool[0]] * n_tasks
    picks = rng.integers(len(pool), size=n_tasks)
    return [pool[i] for i in picks]


def _method_instances(config: ExperimentConfig):
    return [
        ERM(),
        MAML(alpha=config.alpha),
        IMAML(gamma=config.gamma),
        BaMAML(gamma=config.gamma),
    ]


def _hyperparam_label(estimator) -> str:
    params = estimator.get_params()
    return ",".join(f"{k}={repr(v)}" for k, v in sorted(params.items()))


def run_win_prob(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Fraction of seeded trials where method_a's meta-test risk beats method_b's.

    Each trial picks fresh training tasks from the shared pool, fits both
    methods on the same datasets, and scores them by population risk at the
    fitted initialization over that pool (the closed-form notion of expected
    loss; the metric name records this).  Ties count against method_a.
    """
    seed = config.seeds[0]
    dist = _distribution(config, seed)
    pool = _pool_tasks(config, dist, seed)
    cells = [(t, n) for t in config.logT_grid for n in config.logN_grid]

    def run_cell(index: int) -> list[ResultRow]:
        t_count, n_points = cells[index]
        wins = 0
        for rep in range(config.repetitions):
            rng = make_rng(seed, _STREAM_CELL, index, rep)
            tasks = _training_tasks(config, dist, pool, rng, t_count)
            datasets = sample_datasets(rng, tasks, n_points, config.s)
            est_a = make_method(config.method_a, alpha=config.alpha, gamma=config.gamma)
            est_b = make_method(config.method_b, alpha=config.alpha, gamma=config.gamma)
            est_a.fit(datasets)
            est_b.fit(datasets)
            risk_a = population_risk(est_a, est_a.theta0_, pool, config.s)
            risk_b = population_risk(est_b, est_b.theta0_, pool, config.s)
            wins += 1 if risk_a < risk_b else 0
        fraction = wins / config.repetitions
        std_error = math.sqrt(fraction * (1.0 - fraction) / config.repetitions)
        return [
            ResultRow(
                experiment=config.experiment,
                method=f"{config.method_a}-vs-{config.method_b}",
                hyperparams=f"alpha={config.alpha!r},gamma={config.gamma!r}",
                d=config.d,
                N=n_points,
                T=t_count,
                s=config.s,
                seed=seed,
                metric="win_fraction_population_risk",
                value=fraction,
                mc_std_error=std_error,
            )
        ]

    results = _map_cells(run_cell, len(cells), threads)
    return [row for cell_rows in results for row in cell_rows]


def run_sweep_hyper(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Optimal population risk per method per hyperparameter on a shared pool."""
    seed = config.seeds[0]
    dist = _distribution(config, seed)
    pool = _pool_tasks(config, dist, seed)
    grid = [ERM()]
    grid += [MAML(alpha=a) for a in config.alpha_grid]
    grid += [IMAML(gamma=g) for g in config.gamma_grid]
    grid += [BaMAML(gamma=g) for g in config.gamma_grid]

    def run_cell(index: int) -> list[ResultRow]:
        est = grid[index]
        theta_star = optimal_theta0(est, pool, config.s)
        risk = population_risk(est, theta_star, pool, config.s)
        return [
            ResultRow(
                experiment=config.experiment,
                method=est.method,
                hyperparams=_hyperparam_label(est),
                d=config.d,
                N=config.N,
                T=config.T,
                s=config.s,
                seed=seed,
                metric="optimal_population_risk",
                value=risk,
            )
        ]

    results = _map_cells(run_cell, len(grid), threads)
    return [row for cell_rows in results for row in cell_rows]


def _aggregate(rows: list[ResultRow]) -> list[ResultRow]:
    """Median, mean and IQR over seeds for every (method, hyperparams, cell, metric)."""
    groups: dict[tuple, list[ResultRow]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row.method, row.hyperparams, row.d, row.N, row.T, row.s, row.metric)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        values = [r.value for r in groups[key]]
        template = groups[key][0]
        quartiles = statistics.quantiles(values, n=4) if len(values) > 1 else [values[0]] * 3
        for suffix, value in (
            ("median", statistics.median(values)),
            ("mean", statistics.fmean(values)),
            ("iqr", quartiles[2] - quartiles[0]),
        ):
            out.append(
                dataclasses.replace(
                    template,
                    seed=AGGREGATE_SEED,
                    metric=f"{template.metric}_{suffix}",
                    value=value,
                    mc_std_error=None,
                )
            )
    return out


def run_sweep_split(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Risk decomposition per train/validation split ratio, per seed plus aggregates."""
    master = config.seeds[0]
    dist = _distribution(config, master)
    pool = _pool_tasks(config, dist, master)
    cells = [(s_value, seed) for s_value in config.s_grid for seed in config.seeds]

    def run_cell(index: int) -> list[ResultRow]:
        s_value, seed = cells[index]
        rng = make_rng(seed, _STREAM_CELL, index)
        tasks = _training_tasks(config, dist, pool, rng, config.T)
        datasets = sample_datasets(rng, tasks, config.N, s_value)
        rows = []
        for est in _method_instances(config):
            report = decompose(est, datasets, pool, s_value)
            for metric, value in (
                ("total_risk", report.total_risk),
                ("optimal_population_risk", report.optimal_population_risk),
                ("statistical_error", report.statistical_error),
            ):
                rows.append(
                    ResultRow(
                        experiment=config.experiment,
                        method=est.method,
                        hyperparams=_hyperparam_label(est),
                        d=config.d,
                        N=config.N,
                        T=config.T,
                        s=s_value,
                        seed=seed,
                        metric=metric,
                        value=value,
                    )
                )
        return rows

    results = _map_cells(run_cell, len(cells), threads)
    rows = [row for cell_rows in results for row in cell_rows]
    return rows + _aggregate(rows)


def run_decay(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Median statistical error versus T and/or N, with a 1/x reference family."""
    master = config.seeds[0]
    dist = _distribution(config, master)
    pool = _pool_tasks(config, dist, master)
    cells = []
    for t_value in config.logT_grid or ():
        for seed in config.seeds:
            cells.append(("T", t_value, seed))
    for n_value in config.logN_grid or ():
        for seed in config.seeds:
            cells.append(("N", n_value, seed))

    def run_cell(index: int) -> list[ResultRow]:
        family, value, seed = cells[index]
        t_count = value if family == "T" else config.T
        n_points = value if family == "N" else config.N
        rng = make_rng(seed, _STREAM_CELL, index)
        tasks = _training_tasks(config, dist, pool, rng, t_count)
        datasets = sample_datasets(rng, tasks, n_points, config.s)
        rows = []
        for est in _method_instances(config):
            est.fit(datasets)
            theta_star = optimal_theta0(est, pool, config.s)
            err = statistical_error(est, est.theta0_, theta_star, pool, config.s)
            rows.append(
                ResultRow(
                    experiment=config.experiment,
                    method=est.method,
                    hyperparams=_hyperparam_label(est) + f",vary={family}",
                    d=config.d,
                    N=n_points,
                    T=t_count,
                    s=config.s,
                    seed=seed,
                    metric="statistical_error",
                    value=err,
                )
            )
        return rows

    results = _map_cells(run_cell, len(cells), threads)
    rows = [row for cell_rows in results for row in cell_rows]
    aggregates = _aggregate(rows)
    references = []
    for family, grid in (("T", config.logT_grid), ("N", config.logN_grid)):
        if not grid:
            continue
        axis = "T" if family == "T" else "N"
        anchor_values = [
            r.value
            for r in aggregates
            if r.metric == "statistical_error_median"
            and f"vary={family}" in r.hyperparams
            and getattr(r, axis) == grid[0]
        ]
        anchor = statistics.median(anchor_values)
        for value in grid:
            references.append(
                ResultRow(
                    experiment=config.experiment,
                    method="reference",
                    hyperparams=f"slope=-1,vary={family}",
                    d=config.d,
                    N=value if family == "N" else config.N,
                    T=value if family == "T" else config.T,
                    s=config.s,
                    seed=AGGREGATE_SEED,
                    metric="reference_decay",
                    value=anchor * grid[0] / value,
                )
            )
    return rows + aggregates + references


def run_constants(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Monte-Carlo dominating constants on hyperparameter grids plus their limits."""
    seed = config.seeds[0]
    eta = config.d / config.N
    rng = make_rng(seed, _STREAM_CELL)
    report = constant_ordering_check(
        eta=eta,
        d=config.d,
        n=config.N,
        n_samples=config.n_samples,
        rng=rng,
        alpha_grid=config.alpha_grid or (0.01, 0.05, 0.1, 0.2, 0.5),
        gamma_grid=config.gamma_grid or (1e-3, 0.1, 1.0, 10.0, 1e3),
        s_grid=config.s_grid or (0.1, 0.25, 0.5),
    )
    rows = []
    for estimates in (report.grid_a, report.grid_b):
        for est in estimates:
            cfg = dict(est.config)
            method = cfg.pop("method")
            label = ",".join(f"{k}={repr(v)}" for k, v in sorted(cfg.items()) if k not in ("d", "N"))
            rows.append(
                ResultRow(
                    experiment=config.experiment,
                    method=method,
                    hyperparams=label,
                    d=config.d,
                    N=config.N,
                    T=config.T,
                    s=cfg["s"],
                    seed=seed,
                    metric="dominating_constant",
                    value=est.value,
                    mc_std_error=est.mc_std_error,
                )
            )
    for method in ("erm", "maml", "imaml", "bamaml"):
        bound_only = method == "bamaml" and eta > 1.0
        rows.append(
            ResultRow(
                experiment=config.experiment,
                method=method,
                hyperparams=f"eta={eta!r}",
                d=config.d,
                N=config.N,
                T=config.T,
                s=config.s,
                seed=seed,
                metric="asymptotic_upper_bound" if bound_only else "asymptotic_limit",
                value=asymptotic_constant(method, eta),
            )
        )
    rows.append(
        ResultRow(
            experiment=config.experiment,
            method=f"{report.min_a.config['method']}-vs-{report.min_b.config['method']}",
            hyperparams=f"eta={eta!r}",
            d=config.d,
            N=config.N,
            T=config.T,
            s=config.s,
            seed=seed,
            metric=f"ordering_{report.verdict}",
            value=1.0 if report.ordered else 0.0,
        )
    )
    return rows


RUNNERS = {
    "win-prob": run_win_prob,
    "sweep-hyper": run_sweep_hyper,
    "sweep-split": run_sweep_split,
    "decay": run_decay,
    "constants": run_constants,
}
