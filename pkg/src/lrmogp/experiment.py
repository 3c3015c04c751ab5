"""Config-driven hyperparameter sweeps and the system condition estimate."""

from __future__ import annotations

import copy
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .data_gen import (
    AllenCahnParams,
    DataMatrix,
    TimeSplit,
    allen_cahn_generate,
    compress_training_outputs,
    split_dataset,
    stationary_generate,
)
from .errors import LrmogpError
from .graph_core import grid_graph, load_edge_list, partition_nodes
from .kernels import SEKernelParams
from .lowrank import TruncationPolicy
from .mogp import RegressionTask, assemble_problem, posterior_mean
from .stein_solvers import SolverConfig

__all__ = [
    "METRICS_HEADER",
    "DEFAULT_CONFIG",
    "ConfigError",
    "ExperimentConfig",
    "ConditionReport",
    "resolve_config",
    "load_config",
    "prepare_data",
    "run_experiment",
    "condition_estimate",
    "condition_report",
    "generate_data",
]

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "solver", "model", "alpha", "lengthscale", "sigma2",
    "iterations", "solution_rank", "runtime_s", "rel_residual", "converged",
]

DEFAULT_CONFIG = {
    "graph_path": None,
    # used when graph_path is null: grid lattice with random diagonals
    "graph": {"rows": 20, "cols": 25, "diagonal_prob": 0.3, "seed": 1},
    "model": "global_filter",
    "alpha": 1.0,
    "kernel": {"lengthscale": 10.0, "variance": 1.0},
    "noise": 5e-3,
    "data": {
        "source": "allen_cahn",
        "data_path": None,
        "allen_cahn": {"eps": 0.08, "diff": 100.0, "tau": 5e-4},
        "stationary": {"noise_std": None, "tol": 1e-6, "max_iter": 1_000_000},
        "time_length": 2000,
        "train_fraction": 0.1,
        "time_layout": "strided",
        "node_input_fraction": 0.2,
        "seed": 0,
        "rhs_tol": 1e-10,
        "rhs_max_rank": 10,
    },
    "solver": {
        "name": ["kpik", "lrpcg"],
        "rel_residual_tol": 1e-8,
        "max_iter": 50,
        "trunc_tol": 1e-10,
        "precond_steps": 2,
        "projection": "stein",
        "beta": "polak_ribiere",
    },
    "sweep": [],
    "output_dir": "results",
}

_MODELS = ("global_filter", "local_average", "dwa")
_SOLVERS = ("kpik", "lrpcg", "eig", "dense")
_SWEEPABLE = ("alpha", "lengthscale", "sigma2")


class ConfigError(LrmogpError, ValueError):
    """Invalid experiment configuration."""


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _sweep_points(raw):
    points = []
    for entry in raw:
        if isinstance(entry, dict):
            name, values = entry.get("parameter"), entry.get("values")
        else:
            name, values = entry
        if name not in _SWEEPABLE:
            raise ConfigError(f"cannot sweep {name!r}; choose from {_SWEEPABLE}")
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"sweep over {name!r} needs a non-empty list of values")
        points.append([name, [float(v) for v in values]])
    return points


def resolve_config(raw: dict, base_dir=None) -> dict:
    """Fill in defaults and validate; the result is what ``config_echo.json`` records."""
    cfg = _merge(DEFAULT_CONFIG, raw)
    if cfg["model"] not in _MODELS:
        raise ConfigError(f"model must be one of {_MODELS}, got {cfg['model']!r}")
    names = cfg["solver"]["name"]
    names = [names] if isinstance(names, str) else list(names)
    bad = [n for n in names if n not in _SOLVERS]
    if bad or not names:
        raise ConfigError(f"solver name must be from {_SOLVERS}, got {cfg['solver']['name']!r}")
    cfg["solver"]["name"] = names
    if cfg["data"]["source"] not in ("allen_cahn", "stationary"):
        raise ConfigError(f"unknown data source {cfg['data']['source']!r}")
    cfg["sweep"] = _sweep_points(cfg["sweep"])
    if cfg["model"] == "dwa" and any(p == "alpha" for p, _ in cfg["sweep"]):
        raise ConfigError("the degree-weighted average has no alpha; remove it from the sweep")
    for key in ("graph_path",):
        if cfg[key] is not None:
            cfg[key] = str(_resolve_path(cfg[key], base_dir))
            if not Path(cfg[key]).exists():
                raise ConfigError(f"{key} does not exist: {cfg[key]}")
    dp = cfg["data"]["data_path"]
    if dp is not None:
        cfg["data"]["data_path"] = str(_resolve_path(dp, base_dir))
        if not Path(cfg["data"]["data_path"]).exists():
            raise ConfigError(f"data_path does not exist: {cfg['data']['data_path']}")
    if not cfg["noise"] > 0:
        raise ConfigError("noise must be positive")
    try:
        _solver_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"solver settings: {exc}") from exc
    return cfg


def _resolve_path(p, base_dir):
    p = Path(p)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return resolve_config(raw, base_dir=path.parent)


@dataclass(frozen=True)
class ExperimentConfig:
    """Read-only view of a resolved config dict."""

    raw: dict

    @classmethod
    def from_file(cls, path):
        return cls(load_config(path))

    @classmethod
    def from_dict(cls, d, base_dir=None):
        return cls(resolve_config(d, base_dir))

    def __getitem__(self, key):
        return self.raw[key]


# Data ==========================================================================


def _graph(cfg):
    if cfg["graph_path"] is not None:
        return load_edge_list(cfg["graph_path"])
    gc = cfg["graph"]
    return grid_graph(gc["rows"], gc["cols"], gc["diagonal_prob"], gc["seed"])


def generate_data(cfg, g=None):
    """Return ``(graph, DataMatrix, info)`` for a resolved config."""
    g = g if g is not None else _graph(cfg)
    dc = cfg["data"]
    info = {}
    if dc["data_path"] is not None:
        d = DataMatrix.load(dc["data_path"])
        if d.shape[0] != g.node_count:
            raise ConfigError(f"data has {d.shape[0]} rows, graph has {g.node_count} nodes")
    elif dc["source"] == "allen_cahn":
        p = AllenCahnParams(n_steps=dc["time_length"], seed=dc["seed"], **dc["allen_cahn"])
        d = allen_cahn_generate(g, p)
    else:
        st = dc["stationary"]
        d, s, noise = stationary_generate(g, dc["time_length"], st["noise_std"], dc["seed"],
                                          st["tol"], st["max_iter"])
        info = {"stationary": s, "noise_std": noise}
    return g, d, info


@dataclass(frozen=True, eq=False)
class PreparedData:
    graph: object
    split: object
    Y: object
    partition: object
    info: dict


def prepare_data(cfg) -> PreparedData:
    g, d, info = generate_data(cfg)
    dc = cfg["data"]
    part = partition_nodes(g, dc["node_input_fraction"], dc["seed"])
    model = "dwa" if cfg["model"] == "dwa" else "filter"
    sd = split_dataset(d, part, TimeSplit(dc["train_fraction"], dc["time_layout"]), model)
    Y, rank, tail = compress_training_outputs(sd.Y, TruncationPolicy(dc["rhs_tol"], dc["rhs_max_rank"]))
    info.update(rhs_rank=rank, rhs_truncation_error=tail)
    return PreparedData(g, sd, Y, part, info)


def _task(cfg, prep: PreparedData, alpha, lengthscale, sigma2):
    sd = prep.split
    return RegressionTask(
        cfg["model"], sd.train_inputs, sd.target_inputs, prep.Y,
        sigma2=sigma2,
        kernel=SEKernelParams(lengthscale, cfg["kernel"]["variance"]),
        alpha=alpha,
        graph=prep.graph,
        partition=prep.partition if cfg["model"] == "dwa" else None,
        target_nodes=sd.target_nodes,
        target_times=sd.target_times,
    )


def _solver_config(cfg):
    sc = cfg["solver"]
    return SolverConfig(
        rel_residual_tol=sc["rel_residual_tol"],
        max_iter=sc["max_iter"],
        trunc=TruncationPolicy(sc["trunc_tol"]),
        precond_kpik_steps=sc["precond_steps"],
        projection=sc["projection"],
        beta=sc["beta"],
    )


def _points(cfg):
    base = {"alpha": float(cfg["alpha"]), "lengthscale": float(cfg["kernel"]["lengthscale"]),
            "sigma2": float(cfg["noise"])}
    if not cfg["sweep"]:
        return [(None, base)]
    out = []
    for name, values in cfg["sweep"]:
        for v in values:
            out.append(((name, v), dict(base, **{name: v})))
    return out


def _fmt(x):
    return repr(float(x))


def _row(cfg, point, report):
    return [
        report.solver_name, cfg["model"], _fmt(point["alpha"]), _fmt(point["lengthscale"]),
        _fmt(point["sigma2"]), str(report.iterations), str(report.solution_rank),
        f"{report.runtime_seconds:.6f}", f"{report.rel_residual:.6e}",
        "true" if report.converged else "false",
    ]


def run_experiment(config, out_dir=None, parallel=False, stream=None) -> int:
    """Run every (sweep point, solver) pair and write the result files.

    Returns 0 when every solve converged, 1 when some did not and 2 when a
    sweep point failed with an error. Rows already written stay in
    ``metrics.csv``.
    """
    stream = stream or sys.stderr
    cfg = config.raw if isinstance(config, ExperimentConfig) else config
    out = Path(out_dir if out_dir is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    try:
        prep = prepare_data(cfg)
    except (LrmogpError, ValueError) as exc:
        print(f"error: data preparation failed: {exc}", file=stream)
        return 2
    info = {k: v for k, v in prep.info.items() if k != "stationary"}
    (out / "data_info.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    scfg = _solver_config(cfg)
    points = _points(cfg)

    def run_point(item):
        label, pt = item
        task = _task(cfg, prep, pt["alpha"], pt["lengthscale"], pt["sigma2"])
        results = []
        for name in cfg["solver"]["name"]:
            pm, rep = posterior_mean(task, name, scfg)
            results.append((pm, rep))
        return results

    status = 0
    last_pm = None
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        fh.flush()
        if parallel and len(points) > 1:
            with ThreadPoolExecutor() as ex:
                futures = [ex.submit(run_point, item) for item in points]
                outcomes = []
                for f in futures:
                    try:
                        outcomes.append(f.result())
                    except (LrmogpError, ValueError, ArithmeticError) as exc:
                        outcomes.append(exc)
        else:
            outcomes = None
        for i, item in enumerate(points):
            label, pt = item
            try:
                if outcomes is not None:
                    res = outcomes[i]
                    if isinstance(res, Exception):
                        raise res
                else:
                    res = run_point(item)
            except (LrmogpError, ValueError, ArithmeticError) as exc:
                where = "base point" if label is None else f"{label[0]}={label[1]:g}"
                print(f"error: sweep point {where} failed: {exc}", file=stream)
                return 2
            for pm, rep in res:
                w.writerow(_row(cfg, pt, rep))
                fh.flush()
                if not rep.converged:
                    status = 1
                last_pm = pm
    if last_pm is not None:
        last_pm.to_csv(out / "predictions.csv")
    return status


# Condition estimate ===========================================================


@dataclass(frozen=True)
class ConditionReport:
    lambda_O: float
    mu_O: float
    lambda_I: float
    mu_I: float
    sigma2: float
    estimated: bool = True

    @property
    def ratio(self):
        # tiny negative estimates of a PSD spectrum are rounding
        low = max(self.mu_O, 0.0) * max(self.mu_I, 0.0)
        return (self.lambda_O * self.lambda_I + self.sigma2) / (low + self.sigma2)

    @property
    def bound(self):
        return 1.0 + self.lambda_O * self.lambda_I / self.sigma2

    def lines(self):
        return [
            f"lambda_O (largest eigenvalue of K_O)  = {self.lambda_O:.6e}",
            f"mu_O     (smallest eigenvalue of K_O) = {self.mu_O:.6e}",
            f"lambda_I (largest eigenvalue of K_I)  = {self.lambda_I:.6e}",
            f"mu_I     (smallest eigenvalue of K_I) = {self.mu_I:.6e}",
            f"condition (lO*lI + s2)/(mO*mI + s2)   = {self.ratio:.6e}",
            f"bound     1 + lO*lI/s2                = {self.bound:.6e}",
        ]


def _extremes(op, dense_limit=600):
    """Largest and smallest eigenvalue of an SPD operator.

    Small operators are handled densely; larger ones by Lanczos on ``K``
    and on ``K^{-1}``.
    """
    n = op.dim
    if n <= dense_limit:
        ev = np.linalg.eigvalsh(op.to_dense())
        return float(ev[-1]), float(ev[0])
    A = spla.LinearOperator((n, n), matvec=op.apply, dtype=float)
    Ainv = spla.LinearOperator((n, n), matvec=op.solve, dtype=float)
    lam = spla.eigsh(A, k=1, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    inv = spla.eigsh(Ainv, k=1, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    return float(lam), float(1.0 / inv)


def condition_estimate(KO, KI, sigma2) -> ConditionReport:
    lo, mo = _extremes(KO)
    li, mi = _extremes(KI)
    return ConditionReport(lo, mo, li, mi, float(sigma2))


def condition_report(config, stream=None) -> ConditionReport | None:
    """Print the eigenvalue estimates, the condition ratio and its upper bound."""
    stream = stream or sys.stdout
    cfg = config.raw if isinstance(config, ExperimentConfig) else config
    prep = prepare_data(cfg)
    pt = _points({**cfg, "sweep": []})[0][1]
    task = _task(cfg, prep, pt["alpha"], pt["lengthscale"], pt["sigma2"])
    a = assemble_problem(task)
    try:
        rep = condition_estimate(a.problem.KO, a.problem.KI, pt["sigma2"])
    except spla.ArpackNoConvergence as exc:
        log.warning("eigenvalue estimation did not converge: %s", exc)
        print("warning: eigenvalue estimation did not converge; no ratio available", file=stream)
        return None
    for line in rep.lines():
        print(line, file=stream)
    ok = rep.ratio <= rep.bound * (1 + 1e-12)
    print(f"ratio <= bound: {'yes' if ok else 'NO'}", file=stream)
    assert ok, "condition ratio exceeds its upper bound"
    return rep
