"""Configuration-driven replication runner, aggregation and CSV/JSON output."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import yaml

from . import __version__
from .design import DesignSchedule, bernoulli_design, constant_treatment, make_design
from .estimators import (ESTIMATORS, cmp_equilibrium, fit_cmp, polyfit, run_estimators,
                         stage_end_nodes)
from .features import build_features, compute_moments
from .network import (Graph, InterferenceMatrix, RggSpec, generate_rgg, load_edge_list,
                      sample_gaussian_interference)
from .simulate import (OutcomeParams, UpdateCoefficients, burn_in, draw_noise, run_ensemble_panel,
                       run_panel)

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"
REPORT_HEADER = ("rep", "t", "estimator", "tte_hat", "ground_truth")
SUMMARY_HEADER = ("estimator", "t", "mean", "lo95", "hi95", "ground_truth_mean")


class ConfigError(ValueError):
    pass


class ReplicationError(RuntimeError):
    def __init__(self, rep: int, cause: BaseException):
        super().__init__(f"replication {rep} failed: {type(cause).__name__}: {cause}")
        self.rep = rep


# Configuration

@dataclass(frozen=True)
class NetworkConfig:
    kind: Literal["rgg", "edge_list", "gaussian"] = "rgg"
    n: int = 1000
    avg_degree: float = 10.0
    path: str | None = None
    mu: float = 1.0
    sigma: float = 1.0


@dataclass(frozen=True)
class InitialConfig:
    mean: float = 0.0
    sd: float = 1.0
    burn_in: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    outcome: OutcomeParams = field(default_factory=OutcomeParams)
    update: UpdateCoefficients = field(default_factory=UpdateCoefficients)
    schedule: DesignSchedule = field(default_factory=lambda: DesignSchedule.rollout([0.1, 0.2, 0.4, 0.5], 50))
    design_kind: Literal["staggered", "bernoulli"] = "staggered"
    initial: InitialConfig = field(default_factory=InitialConfig)
    replications: int = 100
    master_seed: int = 0
    estimators: tuple[str, ...] = ESTIMATORS
    polyfit_abscissa: Literal["design", "realized"] = "design"
    output_dir: str | None = None
    name: str = "experiment"

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.design_kind not in ("staggered", "bernoulli"):
            raise ConfigError(f"unknown design kind {self.design_kind!r}")
        if self.design_kind == "staggered" and not self.schedule.is_monotone():
            raise ConfigError("staggered design needs non-decreasing probabilities")
        if not self.schedule.is_identifiable():
            raise ConfigError("schedule needs two distinct treatment probabilities in periods 1..T")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown or empty estimator list: {bad or self.estimators}")
        if self.network.kind == "edge_list":
            if not self.network.path or not os.path.exists(self.network.path):
                raise ConfigError(f"edge-list file not found: {self.network.path}")
        elif self.network.kind not in ("rgg", "gaussian"):
            raise ConfigError(f"unknown network kind {self.network.kind!r}")
        if self.initial.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")

    @property
    def horizon(self) -> int:
        return self.schedule.horizon

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "network": {k: v for k, v in asdict(self.network).items() if v is not None},
            "outcome": asdict(self.outcome),
            "update": asdict(self.update),
            "design": {"kind": self.design_kind, "stages": [list(s) for s in self.schedule.stages]},
            "initial": asdict(self.initial),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "estimators": list(self.estimators),
            "polyfit_abscissa": self.polyfit_abscissa,
            "output_dir": self.output_dir,
        }


def _schedule_from(d: dict) -> DesignSchedule:
    if "stages" in d:
        return DesignSchedule(tuple(tuple(s) for s in d["stages"]))
    if "pis" in d and "stage_length" in d:
        return DesignSchedule.rollout(d["pis"], int(d["stage_length"]))
    raise ConfigError("design needs either 'stages' or 'pis' + 'stage_length'")


def config_from_dict(d: dict, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    d = dict(d)
    known = {"name", "network", "outcome", "update", "design", "initial", "replications",
             "master_seed", "estimators", "polyfit_abscissa", "output_dir", "horizon"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        net = dict(d.get("network", {}))
        if net.get("path") and base_dir is not None and not os.path.isabs(net["path"]):
            net["path"] = os.path.normpath(os.path.join(base_dir, net["path"]))
        design = dict(d.get("design", {}))
        cfg = ExperimentConfig(
            network=NetworkConfig(**net),
            outcome=OutcomeParams(**d.get("outcome", {})),
            update=UpdateCoefficients(**d.get("update", {})),
            schedule=_schedule_from(design) if design else ExperimentConfig().schedule,
            design_kind=design.get("kind", "staggered"),
            initial=InitialConfig(**d.get("initial", {})),
            replications=int(d.get("replications", 100)),
            master_seed=int(d.get("master_seed", 0)),
            estimators=tuple(d.get("estimators", ESTIMATORS)),
            polyfit_abscissa=d.get("polyfit_abscissa", "design"),
            output_dir=d.get("output_dir"),
            name=d.get("name", "experiment"),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if "horizon" in d and int(d["horizon"]) != cfg.horizon:
        raise ConfigError(f"horizon {d['horizon']} disagrees with schedule end {cfg.horizon}")
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


# Seed streams

def stream(master_seed: int, rep: int, tag: str) -> np.random.Generator:
    """Independent generator per (master seed, replication, purpose)."""
    key = zlib.crc32(tag.encode())
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep, key)))


# One replication

def build_network(cfg: ExperimentConfig, rep: int, cached: Graph | None = None):
    net = cfg.network
    if net.kind == "edge_list":
        return cached if cached is not None else load_edge_list(net.path)
    rng = stream(cfg.master_seed, rep, "graph")
    if net.kind == "rgg":
        return generate_rgg(RggSpec(net.n, net.avg_degree), rng=rng)
    return sample_gaussian_interference(net.n, net.mu, net.sigma, rng=rng)


def _simulate(cfg: ExperimentConfig, net, w: np.ndarray, y0: np.ndarray,
              noise: np.ndarray) -> np.ndarray:
    if isinstance(net, InterferenceMatrix):
        return run_ensemble_panel(net, cfg.update, w, cfg.outcome.noise_sd, y0, noise=noise).y
    return run_panel(net, cfg.outcome, w, y0=y0, noise=noise).y


def initial_outcomes(cfg: ExperimentConfig, net, rep: int) -> np.ndarray:
    rng = stream(cfg.master_seed, rep, "initial")
    n = net.n
    y0 = cfg.initial.mean + cfg.initial.sd * rng.standard_normal(n)
    steps = cfg.initial.burn_in
    if steps == 0:
        return y0
    if isinstance(net, InterferenceMatrix):
        noise = draw_noise(rng, steps, n, cfg.outcome.noise_sd)
        return _simulate(cfg, net, np.zeros((steps + 1, n)), y0, noise)[-1]
    return burn_in(net, cfg.outcome, y0, steps, rng)


@dataclass(frozen=True, eq=False)
class ObservedPanel:
    network: Any
    w: np.ndarray
    y0: np.ndarray
    noise: np.ndarray
    y: np.ndarray


def observed_panel(cfg: ExperimentConfig, rep: int, graph: Graph | None = None) -> ObservedPanel:
    """Network, design and outcome panel of replication ``rep`` as the experimenter sees it."""
    net = build_network(cfg, rep, graph)
    design = make_design(cfg.design_kind, net.n, cfg.schedule, stream(cfg.master_seed, rep, "design"))
    y0 = initial_outcomes(cfg, net, rep)
    noise = draw_noise(stream(cfg.master_seed, rep, "noise"), cfg.horizon, net.n, cfg.outcome.noise_sd)
    return ObservedPanel(net, design.w, y0, noise, _simulate(cfg, net, design.w, y0, noise))


def run_one(cfg: ExperimentConfig, rep: int, graph: Graph | None = None) -> tuple[dict, np.ndarray]:
    """Estimates and ground truth for replication ``rep``."""
    obs = observed_panel(cfg, rep, graph)
    net, y0, noise = obs.network, obs.y0, obs.noise
    est = run_estimators(obs.y, obs.w, cfg.schedule, cfg.estimators,
                         polyfit_abscissa=cfg.polyfit_abscissa)
    # common random numbers: counterfactual twins reuse y0 and the noise draws
    y_all = _simulate(cfg, net, constant_treatment(1, net.n, cfg.horizon), y0, noise)
    y_none = _simulate(cfg, net, constant_treatment(0, net.n, cfg.horizon), y0, noise)
    return est, (y_all - y_none).mean(axis=1)


def _run_one_safe(args):
    cfg, rep, graph = args
    try:
        return run_one(cfg, rep, graph)
    except Exception as e:  # re-raised with replication context
        raise ReplicationError(rep, e) from e


# Reports

@dataclass(eq=False)
class ReplicationReport:
    estimators: tuple[str, ...]
    tte_hat: dict[str, np.ndarray]  # estimator -> (R, T+1)
    ground_truth: np.ndarray  # (R, T+1)
    metadata: dict = field(default_factory=dict)

    @property
    def replications(self) -> int:
        return self.ground_truth.shape[0]

    @property
    def horizon(self) -> int:
        return self.ground_truth.shape[1] - 1

    def rows(self):
        for r in range(self.replications):
            for name in self.estimators:
                for t in range(self.horizon + 1):
                    yield r, t, name, self.tte_hat[name][r, t], self.ground_truth[r, t]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(REPORT_HEADER) + "\n")
            for r, t, name, v, g in self.rows():
                fh.write(f"{r},{t},{name},{FLOAT_FMT % v},{FLOAT_FMT % g}\n")

    def equals(self, other: "ReplicationReport") -> bool:
        if self.estimators != other.estimators:
            return False
        same = lambda a, b: a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
        return same(self.ground_truth, other.ground_truth) and all(
            same(self.tte_hat[k], other.tte_hat[k]) for k in self.estimators)


def read_report_csv(path: str | os.PathLike) -> ReplicationReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != REPORT_HEADER:
            raise ValueError(f"unexpected report header {header}")
        rows = [(int(r), int(t), name, float(v), float(g)) for r, t, name, v, g in reader]
    if not rows:
        raise ValueError("empty report")
    names = tuple(dict.fromkeys(name for _, _, name, _, _ in rows))
    R = max(r for r, *_ in rows) + 1
    T = max(t for _, t, *_ in rows)
    tte = {name: np.full((R, T + 1), np.nan) for name in names}
    gt = np.full((R, T + 1), np.nan)
    seen = set()
    for r, t, name, v, g in rows:
        if (r, t, name) in seen:
            raise ValueError(f"duplicate cell rep={r} t={t} estimator={name}")
        seen.add((r, t, name))
        tte[name][r, t] = v
        gt[r, t] = g
    if len(seen) != R * (T + 1) * len(names):
        raise ValueError("report is missing cells")
    return ReplicationReport(names, tte, gt)


def run_replications(cfg: ExperimentConfig, workers: int = 1) -> ReplicationReport:
    """Run every replication; results are independent of ``workers``."""
    t0 = time.perf_counter()
    graph = load_edge_list(cfg.network.path) if cfg.network.kind == "edge_list" else None
    tasks = [(cfg, r, graph) for r in range(cfg.replications)]
    if workers <= 1:
        results = [_run_one_safe(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one_safe, tasks))
    tte = {name: np.vstack([est[name] for est, _ in results]) for name in cfg.estimators}
    gt = np.vstack([g for _, g in results])
    meta = {
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "wall_clock_seconds": time.perf_counter() - t0,
        "workers": workers,
        "version": __version__,
    }
    return ReplicationReport(tuple(cfg.estimators), tte, gt, meta)


@dataclass(eq=False)
class SummaryTable:
    estimators: tuple[str, ...]
    mean: dict[str, np.ndarray]
    lo95: dict[str, np.ndarray]
    hi95: dict[str, np.ndarray]
    ground_truth_mean: np.ndarray

    def rows(self):
        for name in self.estimators:
            for t in range(self.ground_truth_mean.size):
                yield (name, t, self.mean[name][t], self.lo95[name][t], self.hi95[name][t],
                       self.ground_truth_mean[t])

    def to_csv(self, path_or_fh) -> None:
        if isinstance(path_or_fh, (str, os.PathLike)):
            with open(path_or_fh, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh)
        fh = path_or_fh
        fh.write(",".join(SUMMARY_HEADER) + "\n")
        for name, t, m, lo, hi, g in self.rows():
            fh.write(f"{name},{t}," + ",".join(FLOAT_FMT % v for v in (m, lo, hi, g)) + "\n")


def summarize(report: ReplicationReport) -> SummaryTable:
    """Mean and 2.5/97.5 percentiles (linear interpolation) across replications.

    Replications where an estimator is undefined (NaN) are left out of that cell.
    """
    mean, lo, hi = {}, {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name in report.estimators:
            v = report.tte_hat[name]
            mean[name] = np.nanmean(v, axis=0)
            lo[name], hi[name] = np.nanpercentile(v, [2.5, 97.5], axis=0, method="linear")
        gt = np.nanmean(report.ground_truth, axis=0)
    return SummaryTable(report.estimators, mean, lo, hi, gt)


def write_outputs(report: ReplicationReport, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.csv", "summary": out / "summary.csv",
             "metadata": out / "metadata.json"}
    report.to_csv(paths["report"])
    summarize(report).to_csv(paths["summary"])
    with open(paths["metadata"], "w", encoding="utf-8") as fh:
        json.dump(report.metadata, fh, indent=2, sort_keys=True)
    return paths


# Equilibrium curve

@dataclass(eq=False)
class CurveData:
    pi: np.ndarray
    simulated: np.ndarray
    polyfit: np.ndarray
    ho_cmp: np.ndarray

    def to_csv(self, fh) -> None:
        fh.write("pi,simulated,polyfit,ho_cmp\n")
        for row in zip(self.pi, self.simulated, self.polyfit, self.ho_cmp):
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def equilibrium_curve(cfg: ExperimentConfig, pi_grid: Sequence[float], rep: int = 0) -> CurveData:
    """Terminal mean under constant-pi Bernoulli designs next to the fitted PolyFit and HO-CMP curves.

    The fitted curves come from replication ``rep`` of the configured experiment.
    """
    grid = np.asarray(pi_grid, dtype=float)
    if np.any((grid < 0) | (grid > 1)):
        raise ConfigError("grid probabilities must lie in [0, 1]")
    graph = load_edge_list(cfg.network.path) if cfg.network.kind == "edge_list" else None
    obs = observed_panel(cfg, rep, graph)
    net, y0, T = obs.network, obs.y0, cfg.horizon
    m = compute_moments(obs.y, obs.w)
    poly = polyfit(stage_end_nodes(m, cfg.schedule, cfg.polyfit_abscissa)).poly
    model = fit_cmp(build_features(m, "HO"))

    simulated = np.empty(grid.size)
    for k, p in enumerate(grid):
        rng = stream(cfg.master_seed, rep, f"curve:{k}")
        w = bernoulli_design(net.n, DesignSchedule.constant(p, T), rng=rng).w
        y = _simulate(cfg, net, w, y0, draw_noise(rng, T, net.n, cfg.outcome.noise_sd))
        simulated[k] = y[-1].mean()
    fitted_poly = np.array([poly(p) for p in grid])
    fitted_cmp = np.array([cmp_equilibrium(model, p, m.nu_hat[0], m.rho2_hat[0], T) for p in grid])
    return CurveData(grid, simulated, fitted_poly, fitted_cmp)
