"""Deterministic DoS attack model.

A schedule is a boolean indicator sequence; validity means the duration and
frequency budgets hold on every subinterval [t1, t2):

    onsets(t1, t2)   <= kappa_f + (t2 - t1) / nu_f
    attacked(t1, t2) <= kappa_d + (t2 - t1) / nu_d

Onset counting uses the convention that the step before time zero is
attack-free, so an attack at t = 0 counts as an onset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ResilienceError

__all__ = [
    "AttackParams",
    "DosSchedule",
    "ScheduleValidation",
    "params_for_ratio",
    "duration_count",
    "frequency_count",
    "validate_schedule",
    "inter_success_bound",
    "generate_random",
    "generate_worst_case",
    "max_success_gap",
    "save_schedule",
    "load_schedule",
]


@dataclass(frozen=True)
class AttackParams:
    """Frequency/duration budget: chatter bounds kappa_*, average dwell-time
    nu_f (>= 2), average duration ratio nu_d (>= 1). Non-integer chatter
    bounds are allowed."""

    kappa_f: float
    nu_f: float
    kappa_d: float
    nu_d: float

    def __post_init__(self):
        if self.kappa_f < 0 or self.kappa_d < 0:
            raise ValueError("chatter bounds must be nonnegative")
        if self.nu_f < 2:
            raise ValueError("average dwell-time nu_f must be >= 2")
        if self.nu_d < 1:
            raise ValueError("average duration ratio nu_d must be >= 1")

    @property
    def ratio(self) -> float:
        """Resilience pressure 1/nu_f + 1/nu_d; stabilizable iff < 1."""
        return 1.0 / self.nu_f + 1.0 / self.nu_d


def params_for_ratio(ratio: float, nu_f: float = 4.0, kappa: float = 1.0) -> AttackParams:
    """Parameters hitting a named resilience pressure 1/nu_f + 1/nu_d."""
    inv_nu_d = ratio - 1.0 / nu_f
    if inv_nu_d <= 0 or inv_nu_d > 1:
        raise ValueError(f"ratio {ratio} not reachable with nu_f = {nu_f}")
    return AttackParams(kappa_f=kappa, nu_f=nu_f, kappa_d=kappa, nu_d=1.0 / inv_nu_d)


@dataclass(frozen=True)
class DosSchedule:
    """Indicator sequence bundled with the parameters it certifies against."""

    indicators: np.ndarray
    params: AttackParams
    seed: Union[int, str, None] = None

    def __post_init__(self):
        ind = np.asarray(self.indicators, dtype=bool)
        ind.setflags(write=False)
        object.__setattr__(self, "indicators", ind)

    def __len__(self) -> int:
        return self.indicators.shape[0]

    @property
    def attack_fraction(self) -> float:
        return float(np.mean(self.indicators)) if len(self) else 0.0


@dataclass(frozen=True)
class ScheduleValidation:
    passed: bool
    worst_t1: int
    worst_t2: int
    worst_kind: str
    worst_excess: float


def _indicators(schedule) -> np.ndarray:
    if isinstance(schedule, DosSchedule):
        return schedule.indicators.astype(int)
    return np.asarray(schedule, dtype=int)


def _onsets(ind: np.ndarray) -> np.ndarray:
    prev = np.concatenate([[0], ind[:-1]])
    return (ind == 1) & (prev == 0)


def _check_range(t1: int, t2: int, n: int):
    if not 0 <= t1 <= t2 <= n:
        raise IndexError(f"interval [{t1}, {t2}) outside [0, {n}]")


def duration_count(schedule, t1: int, t2: int) -> int:
    """Number of attacked steps in [t1, t2)."""
    ind = _indicators(schedule)
    _check_range(t1, t2, len(ind))
    return int(np.sum(ind[t1:t2]))


def frequency_count(schedule, t1: int, t2: int) -> int:
    """Number of attack onsets (off-to-on transitions) in [t1, t2)."""
    ind = _indicators(schedule)
    _check_range(t1, t2, len(ind))
    return int(np.sum(_onsets(ind)[t1:t2]))


def validate_schedule(indicators, params: AttackParams) -> ScheduleValidation:
    """Brute-force check of both budgets over all O(T^2) intervals.

    On failure the reported interval is the one with the largest excess over
    its budget; on success worst_excess is the (nonpositive) tightest margin.
    """
    ind = _indicators(indicators)
    n = len(ind)
    pd = np.concatenate([[0], np.cumsum(ind)])
    pf = np.concatenate([[0], np.cumsum(_onsets(ind).astype(int))])
    worst = (-np.inf, 0, 0, "duration")
    for m in range(1, n + 1):
        dur = pd[m:] - pd[:-m]
        frq = pf[m:] - pf[:-m]
        exc_d = dur - (params.kappa_d + m / params.nu_d)
        exc_f = frq - (params.kappa_f + m / params.nu_f)
        for exc, kind in ((exc_d, "duration"), (exc_f, "frequency")):
            i = int(np.argmax(exc))
            if exc[i] > worst[0]:
                worst = (float(exc[i]), i, i + m, kind)
    if n == 0:
        return ScheduleValidation(True, 0, 0, "duration", -np.inf)
    excess, t1, t2, kind = worst
    return ScheduleValidation(excess <= 0.0, t1, t2, kind, excess)


def inter_success_bound(params: AttackParams) -> float:
    """Guaranteed maximum spacing between successful transmissions."""
    slack = 1.0 - 1.0 / params.nu_d - 1.0 / params.nu_f
    if slack <= 0:
        raise ResilienceError(
            f"1/nu_f + 1/nu_d = {params.ratio:.6g} >= 1: no bound exists"
        )
    return (params.kappa_d + params.kappa_f) / slack + 1.0


def _suffix_ok(ind: np.ndarray, pd: np.ndarray, pf: np.ndarray, end: int,
               params: AttackParams) -> bool:
    """Budgets on all intervals [t1, end) for t1 < end; prefixes up to end."""
    m = np.arange(end, 0, -1)
    dur = pd[end] - pd[:end]
    frq = pf[end] - pf[:end]
    if np.any(dur > params.kappa_d + m / params.nu_d):
        return False
    if np.any(frq > params.kappa_f + m / params.nu_f):
        return False
    return True


def generate_random(params: AttackParams, t_sim: int, seed: int = 0) -> DosSchedule:
    """Burst sampler constrained to the budgets.

    Bursts with geometric lengths are proposed at rate 1/nu_f and accepted
    whole only if every interval ending inside the burst still satisfies both
    budgets; tight parameters therefore degrade to sparse attacks instead of
    failing. The result always passes full validation.
    """
    rng = np.random.default_rng(seed)
    ind = np.zeros(t_sim, dtype=int)
    p_len = min(1.0, params.nu_d / params.nu_f)
    p_start = 1.0 / params.nu_f
    t = 0
    while t < t_sim:
        if rng.random() >= p_start:
            t += 1
            continue
        burst = min(int(rng.geometric(p_len)), t_sim - t)
        ind[t:t + burst] = 1
        pd = np.concatenate([[0], np.cumsum(ind)])
        pf = np.concatenate([[0], np.cumsum(_onsets(ind).astype(int))])
        if all(_suffix_ok(ind, pd, pf, e, params) for e in range(t + 1, t + burst + 1)):
            t += burst
        else:
            ind[t:t + burst] = 0
            t += 1
    schedule = DosSchedule(indicators=ind.astype(bool), params=params, seed=seed)
    assert validate_schedule(schedule.indicators, params).passed
    return schedule


def generate_worst_case(params: AttackParams, t_sim: int) -> DosSchedule:
    """Deterministic greedy schedule: attack whenever the budgets still allow.

    Maximizes prefix attack density; passes validation by construction.
    """
    ind = np.zeros(t_sim, dtype=int)
    for t in range(t_sim):
        ind[t] = 1
        pd = np.concatenate([[0], np.cumsum(ind[:t + 1])])
        pf = np.concatenate([[0], np.cumsum(_onsets(ind[:t + 1]).astype(int))])
        if not _suffix_ok(ind, pd, pf, t + 1, params):
            ind[t] = 0
    schedule = DosSchedule(indicators=ind.astype(bool), params=params, seed="adversarial")
    assert validate_schedule(schedule.indicators, params).passed
    return schedule


def max_success_gap(indicators) -> int:
    """Largest spacing between consecutive attack-free steps.

    The step before time zero and the step after the horizon count as
    notional successes, so leading and trailing attack runs contribute
    run length + 1. An all-attacked schedule reports T + 1.
    """
    ind = _indicators(indicators)
    succ = np.where(ind == 0)[0]
    n = len(ind)
    if succ.size == 0:
        return n + 1
    gaps = [int(succ[0]) + 1, n - int(succ[-1])]
    if succ.size > 1:
        gaps.append(int(np.max(np.diff(succ))))
    return max(gaps)


def save_schedule(schedule: DosSchedule, path) -> None:
    """Compact 0/1 text line plus a JSON sidecar with params and diagnostics."""
    path = Path(path)
    path.write_text("".join("1" if b else "0" for b in schedule.indicators) + "\n")
    params = schedule.params
    try:
        bound: Optional[float] = inter_success_bound(params)
    except ResilienceError:
        bound = None
    sidecar = {
        "kappa_f": params.kappa_f,
        "nu_f": params.nu_f,
        "kappa_d": params.kappa_d,
        "nu_d": params.nu_d,
        "seed": schedule.seed,
        "ratio": params.ratio,
        "attack_fraction": schedule.attack_fraction,
        "inter_success_bound": bound,
        "max_success_gap": max_success_gap(schedule.indicators),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_schedule(path) -> DosSchedule:
    path = Path(path)
    line = path.read_text().strip()
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    params = AttackParams(kappa_f=meta["kappa_f"], nu_f=meta["nu_f"],
                          kappa_d=meta["kappa_d"], nu_d=meta["nu_d"])
    ind = np.array([ch == "1" for ch in line])
    return DosSchedule(indicators=ind, params=params, seed=meta.get("seed"))
