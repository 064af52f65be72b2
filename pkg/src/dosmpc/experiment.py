"""Scenario configuration, closed-loop orchestration, metrics, persistence.

One experiment is: collect offline data, generate an attack schedule, run the
selected controller against the plant across a lossy, noisy measurement
channel, and log a per-step record with a recomputable summary. Everything is
seeded; identical configurations produce byte-identical CSV outputs.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dos
from .controllers import (DataDrivenController, ModelBasedController,
                          PeriodicDataDrivenController)
from .data import HankelPair, collect_offline
from .errors import ConfigError
from .lti import SystemModel, check_structure, observability_index, synthesize_gains
from .mpc import MpcConfig
from .plants import batch_reactor

__all__ = ["ExperimentConfig", "RunRecord", "prepare", "run_experiment",
           "run_closed_loop", "iss_metrics", "sweep", "compare",
           "recompute_summary", "revalidate_record"]

logger = logging.getLogger(__name__)

CONTROLLERS = ("data-driven", "data-driven-periodic", "model-based")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated description of one closed-loop scenario.

    ``model`` is either the built-in name "batch-reactor" or a path to a model
    JSON file. ``attack`` is None for an attack-free run. ``x0`` of None means
    the documented default: the normalized all-ones direction (norm 1).
    """

    model: str = "batch-reactor"
    dt: float = 0.1
    n_samples: int = 100
    horizon: int = 10
    lambda_g: float = 0.1
    lambda_h: float = 100.0
    v_bar: float = 1e-4
    r1: float = 1e-4
    r2: float = 3.0
    u_max: float = 10.0
    excitation_amplitude: Optional[float] = None
    attack: Optional[dos.AttackParams] = None
    t_sim: int = 200
    x0: Optional[tuple] = None
    controller: str = "data-driven"
    data_seed: int = 1
    noise_seed: int = 2
    attack_seed: int = 3
    output_dir: Optional[str] = None
    blow_up: float = 1e6

    def amplitude(self) -> float:
        """Offline excitation amplitude.

        Default scales with the square root of the declared noise bound,
        keeping the g-regularizer's effective strength independent of the
        data scale (the penalty weight grows like v_bar while the squared
        data magnitude grows like amplitude^2)."""
        if self.excitation_amplitude is not None:
            return float(self.excitation_amplitude)
        return max(0.005, 0.6 * float(np.sqrt(self.v_bar)))

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        obj = json.loads(text)
        attack = obj.get("attack")
        if attack is not None:
            if "ratio" in attack:
                attack = dos.params_for_ratio(attack["ratio"],
                                              nu_f=attack.get("nu_f", 4.0),
                                              kappa=attack.get("kappa", 1.0))
            else:
                attack = dos.AttackParams(**attack)
        seeds = obj.get("seeds", {})
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        kwargs = {k: v for k, v in obj.items() if k in known and k not in ("attack", "x0")}
        x0 = obj.get("x0")
        return ExperimentConfig(
            attack=attack,
            x0=tuple(x0) if x0 is not None else None,
            data_seed=seeds.get("data", obj.get("data_seed", 1)),
            noise_seed=seeds.get("noise", obj.get("noise_seed", 2)),
            attack_seed=seeds.get("attack", obj.get("attack_seed", 3)),
            **{k: v for k, v in kwargs.items()
               if k not in ("data_seed", "noise_seed", "attack_seed")},
        )

    def to_json(self) -> str:
        obj = {k: getattr(self, k) for k in self.__dataclass_fields__
               if k not in ("attack", "x0")}
        obj["x0"] = list(self.x0) if self.x0 is not None else None
        obj["attack"] = None if self.attack is None else {
            "kappa_f": self.attack.kappa_f, "nu_f": self.attack.nu_f,
            "kappa_d": self.attack.kappa_d, "nu_d": self.attack.nu_d,
        }
        return json.dumps(obj, indent=2)


@dataclass
class Prepared:
    """Resolved scenario: model, derived quantities, controller config."""

    model: SystemModel
    eta: int
    pe_order: int
    mpc_config: MpcConfig
    config: ExperimentConfig

    @property
    def x0(self) -> np.ndarray:
        if self.config.x0 is not None:
            return np.asarray(self.config.x0, dtype=float)
        n = self.model.n_x
        return np.ones(n) / np.sqrt(n)


def _load_model(config: ExperimentConfig) -> SystemModel:
    if config.model == "batch-reactor":
        return batch_reactor(config.dt)
    return SystemModel.from_json(Path(config.model).read_text())


def prepare(config: ExperimentConfig) -> Prepared:
    """Resolve the model and validate every module-level precondition,
    reporting violations by assumption number."""
    if config.controller not in CONTROLLERS:
        raise ConfigError(f"unknown controller {config.controller!r}; pick from {CONTROLLERS}")
    model = _load_model(config)
    try:
        check_structure(model)
    except Exception as exc:
        raise ConfigError(f"Assumption 1 violated: {exc}") from exc
    eta = observability_index(model)
    if config.v_bar < 0:
        raise ConfigError("Assumption 3 violated: noise bound must be nonnegative")
    if config.attack is not None:
        if config.attack.ratio >= 1.0:
            raise ConfigError(
                f"maximum-resilience condition violated: 1/nu_f + 1/nu_d = "
                f"{config.attack.ratio:.6g} >= 1")
        if config.controller == "data-driven-periodic":
            n_x = model.n_x
            if config.attack.ratio >= 1.0 - (n_x - 1) / config.attack.nu_f:
                logger.warning(
                    "periodic variant resilience condition not met: "
                    "1/nu_f + 1/nu_d = %.4g >= 1 - (n_x-1)/nu_f = %.4g",
                    config.attack.ratio, 1.0 - (n_x - 1) / config.attack.nu_f)
    if config.horizon < eta + model.n_x:
        raise ConfigError(
            f"Assumption 7 violated: horizon {config.horizon} < eta + n_x = {eta + model.n_x}")
    if config.horizon < model.n_x + 2 * eta:
        logger.warning("horizon %d below n_x + 2*eta = %d; Assumption 7 holds but the "
                       "stricter experimental bound does not", config.horizon,
                       model.n_x + 2 * eta)
    pe_order = max(config.horizon + model.n_x + eta, config.horizon + 2 * eta)
    if config.n_samples < model.n_u * pe_order:
        raise ConfigError(
            f"Assumption 6 violated: n_samples {config.n_samples} cannot be persistently "
            f"exciting of order {pe_order} (need >= {model.n_u * pe_order})")
    if config.amplitude() > config.u_max:
        raise ConfigError(
            f"excitation amplitude {config.amplitude():.4g} exceeds the input box "
            f"u_max = {config.u_max:.4g}; offline inputs must be feasible")
    mpc_config = MpcConfig(horizon=config.horizon, eta=eta, lambda_g=config.lambda_g,
                           lambda_h=config.lambda_h, v_bar=config.v_bar,
                           r1=config.r1, r2=config.r2, u_max=config.u_max)
    return Prepared(model=model, eta=eta, pe_order=pe_order,
                    mpc_config=mpc_config, config=config)


@dataclass
class RunRecord:
    """Per-step closed-loop trace plus a summary recomputable from it."""

    t: np.ndarray
    attack: np.ndarray
    u: np.ndarray
    y: np.ndarray
    zeta: np.ndarray
    y_norm: np.ndarray
    cost: np.ndarray
    qp_iterations: np.ndarray
    summary: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def save(self, directory, stem: str = "record") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        n_u = self.u.shape[1]
        n_y = self.y.shape[1]
        cols = (["t", "attack"] + [f"u_{i}" for i in range(n_u)]
                + [f"y_{i}" for i in range(n_y)] + [f"zeta_{i}" for i in range(n_y)]
                + ["y_norm", "cost", "qp_iterations"])

        def cell(v: float) -> str:
            return "" if np.isnan(v) else f"{v:.17g}"

        with open(csv_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                row = [str(int(self.t[i])), str(int(self.attack[i]))]
                row += [f"{v:.17g}" for v in self.u[i]]
                row += [f"{v:.17g}" for v in self.y[i]]
                row += [cell(v) for v in self.zeta[i]]
                row += [f"{self.y_norm[i]:.17g}", cell(self.cost[i]),
                        cell(self.qp_iterations[i])]
                fh.write(",".join(row) + "\n")
        summary = {k: (None if isinstance(v, float) and np.isnan(v) else v)
                   for k, v in self.summary.items()}
        (directory / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2))
        return csv_path

    @staticmethod
    def load(directory, stem: str = "record") -> "RunRecord":
        directory = Path(directory)
        with open(directory / f"{stem}.csv") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        names = header
        table = np.array([[np.nan if v == "" else float(v) for v in row] for row in rows])

        def pick(prefix):
            return [i for i, cname in enumerate(names)
                    if cname.startswith(prefix) and cname[len(prefix):].isdigit()]
        summary = json.loads((directory / f"{stem}_summary.json").read_text())
        summary = {k: (np.nan if v is None else v) for k, v in summary.items()}
        return RunRecord(
            t=table[:, names.index("t")].astype(int),
            attack=table[:, names.index("attack")].astype(int),
            u=table[:, pick("u_")],
            y=table[:, pick("y_")],
            zeta=table[:, pick("zeta_")],
            y_norm=table[:, names.index("y_norm")],
            cost=table[:, names.index("cost")],
            qp_iterations=table[:, names.index("qp_iterations")],
            summary=summary,
        )


def iss_metrics(record: RunRecord, v_bar: Optional[float] = None) -> dict:
    """Empirical stability metrics of one run.

    tail_norm is the max output norm over the final quarter, peak_norm over
    the whole run, decay_fit the least-squares exponential rate of the output
    norm envelope over the pre-tail segment (negative means decay).
    """
    norms = record.y_norm
    n = len(norms)
    if n == 0 or np.max(norms) < 1e-300:
        return {"tail_norm": 0.0, "peak_norm": 0.0, "decay_fit": 0.0}
    tail_start = (3 * n) // 4
    tail_norm = float(np.max(norms[tail_start:])) if tail_start < n else 0.0
    peak_norm = float(np.max(norms))
    pre = norms[:tail_start]
    if pre.size < 2:
        return {"tail_norm": tail_norm, "peak_norm": peak_norm, "decay_fit": 0.0}
    envelope = np.maximum.accumulate(pre[::-1])[::-1]
    logs = np.log(np.maximum(envelope, 1e-300))
    steps = np.arange(pre.size, dtype=float)
    slope = float(np.polyfit(steps, logs, 1)[0])
    return {"tail_norm": tail_norm, "peak_norm": peak_norm, "decay_fit": slope}


def _summarize(record: RunRecord, status: str, t_sim: int, controller: str,
               seeds: dict, blow_up: float) -> dict:
    metrics = iss_metrics(record)
    solves = ~np.isnan(record.cost)
    # A diverged run reports the censored tail (the guard value): the honest
    # worst-case ordering for cross-run comparisons with truncated tables.
    tail = blow_up if status == "diverged" else metrics["tail_norm"]
    summary = {
        "status": status,
        "controller": controller,
        "t_sim": t_sim,
        "steps_completed": len(record),
        "tail_start": (3 * len(record)) // 4,
        "tail_norm": tail,
        "peak_norm": metrics["peak_norm"],
        "decay_fit": metrics["decay_fit"],
        "attack_ratio": float(np.mean(record.attack)) if len(record) else 0.0,
        "max_success_gap": dos.max_success_gap(record.attack),
        "num_solves": int(np.sum(solves)),
        "mean_cost": float(np.mean(record.cost[solves])) if np.any(solves) else float("nan"),
        "blow_up": blow_up,
        "seeds": seeds,
    }
    return summary


def recompute_summary(record: RunRecord) -> dict:
    """Rebuild the recomputable summary fields from the per-step table."""
    seeds = record.summary.get("seeds", {})
    return _summarize(record, record.summary.get("status", "ok"),
                      record.summary.get("t_sim", len(record)),
                      record.summary.get("controller", "unknown"), seeds,
                      record.summary.get("blow_up", 1e6))


def revalidate_record(directory, stem: str = "record") -> bool:
    """True iff the persisted summary matches one recomputed from the table
    and the stored norm column matches the stored outputs."""
    record = RunRecord.load(directory, stem)
    if not np.array_equal(np.linalg.norm(record.y, axis=1), record.y_norm):
        return False
    fresh = recompute_summary(record)
    stored = {k: v for k, v in record.summary.items() if k in fresh}

    def same(a, b):
        if isinstance(a, float) and isinstance(b, float):
            return (np.isnan(a) and np.isnan(b)) or a == b
        return a == b

    return all(same(stored.get(k), fresh[k]) for k in fresh)


def run_closed_loop(model: SystemModel, controller, eta: int, t_sim: int,
                    x0, v_bar: float, noise_seed: int,
                    schedule: Optional[dos.DosSchedule] = None,
                    blow_up: float = 1e6, controller_name: str = "custom",
                    seeds: Optional[dict] = None) -> RunRecord:
    """Drive plant, channel, and controller for t_sim steps.

    Process and network noise are i.i.d. uniform on [-v_bar, v_bar] per
    coordinate, drawn up front from the noise seed (process first). The
    measurement channel delivers the packet exactly at attack-free steps; the
    model-based controller's sensor-side observer additionally receives the
    current noisy measurement every step.
    """
    rng = np.random.default_rng(noise_seed)
    w = rng.uniform(-v_bar, v_bar, size=(t_sim, model.n_x)) if v_bar > 0 \
        else np.zeros((t_sim, model.n_x))
    noise = rng.uniform(-v_bar, v_bar, size=(t_sim, model.n_y)) if v_bar > 0 \
        else np.zeros((t_sim, model.n_y))
    indicators = (schedule.indicators.astype(bool)
                  if schedule is not None else np.zeros(t_sim, dtype=bool))
    if indicators.shape[0] < t_sim:
        raise ConfigError("attack schedule shorter than the simulation horizon")

    is_baseline = isinstance(controller, ModelBasedController)
    x = np.asarray(x0, dtype=float).reshape(model.n_x)
    u_log = np.zeros((t_sim, model.n_u))
    y_log = np.zeros((t_sim, model.n_y))
    zeta_log = np.full((t_sim, model.n_y), np.nan)
    cost_log = np.full(t_sim, np.nan)
    iter_log = np.full(t_sim, np.nan)
    zeta_full = np.zeros((t_sim, model.n_y))
    status = "ok"
    steps = t_sim

    t0 = time.perf_counter()
    for t in range(t_sim):
        attack = bool(indicators[t])
        if is_baseline:
            u = controller.begin(t, attack)
            y = model.c @ x + model.d @ u
            zeta = y + noise[t]
            controller.finish(zeta, u)
        else:
            y = model.c @ x  # D @ u enters below; data-driven fixtures have D = 0
            window = None
            if not attack and t >= eta:
                window = zeta_full[t - eta:t]
            result = controller.step(t, attack, window)
            u = result.u
            y = y + model.d @ u
            zeta = y + noise[t]
            if result.solved:
                cost_log[t] = result.cost
                iter_log[t] = result.qp_iterations
        u_log[t] = u
        y_log[t] = y
        zeta_full[t] = zeta
        if not attack:
            zeta_log[t] = zeta
        x = model.a @ x + model.b @ u + w[t]
        if np.linalg.norm(y) >= blow_up:
            status = "diverged"
            steps = t + 1
            break
    wall = time.perf_counter() - t0

    sl = slice(0, steps)
    record = RunRecord(
        t=np.arange(steps), attack=indicators[sl].astype(int),
        u=u_log[sl], y=y_log[sl], zeta=zeta_log[sl],
        y_norm=np.linalg.norm(y_log[sl], axis=1),
        cost=cost_log[sl], qp_iterations=iter_log[sl],
    )
    record.summary = _summarize(record, status, t_sim, controller_name, seeds or {},
                                blow_up)
    record.summary["wall_time_s"] = wall
    return record


def _build_controller(prepared: Prepared, data: HankelPair):
    kind = prepared.config.controller
    if kind == "data-driven":
        return DataDrivenController(data, prepared.mpc_config)
    if kind == "data-driven-periodic":
        return PeriodicDataDrivenController(data, prepared.mpc_config,
                                            period=prepared.model.n_x)
    gains = synthesize_gains(prepared.model)
    return ModelBasedController(prepared.model, gains)


def run_experiment(config: ExperimentConfig) -> RunRecord:
    """Collect data, build the schedule and controller, run, persist."""
    prepared = prepare(config)
    model = prepared.model
    schedule = None
    if config.attack is not None:
        schedule = dos.generate_random(config.attack, config.t_sim, config.attack_seed)
    controller = None
    data = None
    if config.controller != "model-based":
        traj = collect_offline(model, config.n_samples, prepared.pe_order,
                               amplitude=config.amplitude(),
                               noise_bound=config.v_bar, seed=config.data_seed)
        data = HankelPair.from_trajectory(traj, config.horizon + prepared.eta)
    controller = _build_controller(prepared, data)
    seeds = {"data": config.data_seed, "noise": config.noise_seed,
             "attack": config.attack_seed}
    record = run_closed_loop(model, controller, prepared.eta, config.t_sim,
                             prepared.x0, config.v_bar, config.noise_seed,
                             schedule=schedule, blow_up=config.blow_up,
                             controller_name=config.controller, seeds=seeds)
    if config.output_dir is not None:
        record.save(config.output_dir)
        if schedule is not None:
            dos.save_schedule(schedule, Path(config.output_dir) / "schedule.txt")
        (Path(config.output_dir) / "config.json").write_text(config.to_json())
    return record


_SWEEP_AXES = ("N", "L", "ratio", "v_bar")


def _cell_config(config: ExperimentConfig, axis: str, value, offset: int) -> ExperimentConfig:
    updates = {
        "data_seed": config.data_seed + offset,
        "noise_seed": config.noise_seed + offset,
        "attack_seed": config.attack_seed + offset,
        "output_dir": None,
    }
    if axis == "N":
        updates["n_samples"] = int(value)
    elif axis == "L":
        updates["horizon"] = int(value)
    elif axis == "v_bar":
        updates["v_bar"] = float(value)
    elif axis == "ratio":
        updates["attack"] = dos.params_for_ratio(float(value))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; pick from {_SWEEP_AXES}")
    return replace(config, **updates)


def sweep(config: ExperimentConfig, axis: str, values, repetitions: int = 1,
          output_dir=None) -> list[dict]:
    """Grid of runs along one axis with per-cell derived seeds.

    Per-cell failures are recorded (status column) and the sweep continues.
    Returns one summary row per (value, repetition).
    """
    rows = []
    for i, value in enumerate(values):
        for rep in range(repetitions):
            offset = 10_000 * i + rep
            cell = _cell_config(config, axis, value, offset)
            row = {"axis": axis, "value": value, "repetition": rep}
            try:
                record = run_experiment(cell)
                row.update(status=record.summary["status"],
                           tail_norm=record.summary["tail_norm"],
                           mean_cost=record.summary["mean_cost"],
                           max_success_gap=record.summary["max_success_gap"])
            except Exception as exc:  # keep sweeping, record the failure
                logger.warning("sweep cell %s=%s rep %d failed: %s", axis, value, rep, exc)
                row.update(status=f"error: {exc}", tail_norm=float("nan"),
                           mean_cost=float("nan"), max_success_gap=-1)
            rows.append(row)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w") as fh:
            fh.write("axis,value,repetition,status,tail_norm,mean_cost,max_success_gap\n")
            for row in rows:
                tail = "" if np.isnan(row["tail_norm"]) else f"{row['tail_norm']:.17g}"
                mean = "" if isinstance(row["mean_cost"], float) and np.isnan(row["mean_cost"]) \
                    else f"{row['mean_cost']:.17g}"
                fh.write(f"{row['axis']},{row['value']},{row['repetition']},"
                         f"\"{row['status']}\",{tail},{mean},{row['max_success_gap']}\n")
    return rows


def compare(config: ExperimentConfig) -> dict:
    """Run the data-driven and model-based controllers on the identical
    schedule and noise realization; report paired summaries."""
    dd_record = run_experiment(replace(config, controller="data-driven",
                                       output_dir=None))
    mb_record = run_experiment(replace(config, controller="model-based",
                                       output_dir=None))
    delta = {
        "data_driven_tail": dd_record.summary["tail_norm"],
        "model_based_tail": mb_record.summary["tail_norm"],
        "data_driven_peak": dd_record.summary["peak_norm"],
        "model_based_peak": mb_record.summary["peak_norm"],
        "tail_difference": dd_record.summary["tail_norm"] - mb_record.summary["tail_norm"],
    }
    if config.output_dir is not None:
        out = Path(config.output_dir)
        dd_record.save(out, "data_driven")
        mb_record.save(out, "model_based")
        (out / "compare.json").write_text(json.dumps(delta, indent=2))
    return {"data_driven": dd_record, "model_based": mb_record, "delta": delta}
