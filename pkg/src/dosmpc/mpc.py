"""Assembly and solution of the data-driven MPC program.

At each solve the decision vector is z = (g, h, u_stack, y_stack) where
u_stack and y_stack span window indices [-eta, L-1]. The program is

    min  sum_{i=0}^{L-1} ||u_i||^2_R1 + ||y_i||^2_R2
         + lambda_g * v_bar * ||g||^2 + (lambda_h / v_bar) * ||h||^2
    s.t. [u_stack; y_stack + h] = [Hu; Hy] g          (trajectory span)
         (u_stack, y_stack)[-eta..-1] = recent applied inputs / received outputs
         (u_stack, y_stack)[L-eta..L-1] = 0           (terminal anchor)
         -u_max <= u_i <= u_max  for i in [0, L-1]

The slack h relaxes only the output rows, keeping the program feasible for
any received noisy window.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import HankelPair
from .errors import DimensionError, SolverError
from .qp import QpProblem, Settings, Solver

__all__ = ["MpcConfig", "MpcProblem", "MpcSolution", "VariableMap", "MpcAssembler",
           "assemble", "solve_mpc", "predicted_input_at"]

logger = logging.getLogger(__name__)

_V_BAR_FLOOR = 1e-9
_RIDGE = 1e-8


def _weight_matrix(value, dim: int, name: str) -> np.ndarray:
    w = np.asarray(value, dtype=float)
    if w.ndim == 0:
        w = float(w) * np.eye(dim)
    if w.shape != (dim, dim):
        raise DimensionError(f"{name} must be scalar or {dim}x{dim}, got {w.shape}")
    if np.linalg.norm(w - w.T) > 1e-12 * max(1.0, np.linalg.norm(w)):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(0.5 * (w + w.T)) <= 0):
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (w + w.T)


@dataclass(frozen=True)
class MpcConfig:
    """Tuning knobs of the predictive controller.

    ``horizon`` is the prediction length L; ``eta`` the initialization window
    length (the plant's observability index). ``r1`` / ``r2`` may be scalars
    (scaled identity) or full weight matrices. ``v_bar`` is the declared noise
    bound; a value of exactly zero is clamped to 1e-9 inside the cost scaling
    only, with a logged warning.
    """

    horizon: int
    eta: int
    lambda_g: float
    lambda_h: float
    v_bar: float
    r1: object = 1.0
    r2: object = 1.0
    u_max: float = 10.0

    def __post_init__(self):
        if self.horizon < 1 or self.eta < 1:
            raise ValueError("horizon and eta must be positive")
        if self.lambda_g <= 0 or self.lambda_h <= 0:
            raise ValueError("lambda_g and lambda_h must be positive")
        if self.v_bar < 0:
            raise ValueError("v_bar must be nonnegative")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive (the input box must contain 0)")

    @property
    def window(self) -> int:
        return self.horizon + self.eta

    def cost_noise_scale(self) -> float:
        return max(float(self.v_bar), _V_BAR_FLOOR)


@dataclass(frozen=True)
class MpcProblem:
    """One solve instance: offline Hankel data plus the fresh init windows."""

    hankel: HankelPair
    init_u: np.ndarray
    init_zeta: np.ndarray
    config: MpcConfig

    def __post_init__(self):
        cfg = self.config
        if self.hankel.depth != cfg.window:
            raise DimensionError(
                f"Hankel depth {self.hankel.depth} must equal horizon+eta = {cfg.window}"
            )
        for name, dim in (("init_u", self.hankel.n_u), ("init_zeta", self.hankel.n_y)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size != cfg.eta * dim:
                raise DimensionError(
                    f"{name} must hold {cfg.eta} samples of dimension {dim}, "
                    f"got shape {arr.shape}"
                )
            object.__setattr__(self, name, arr.reshape(cfg.eta, dim))


@dataclass(frozen=True)
class VariableMap:
    """Slices of the decision vector z = (g, h, u_stack, y_stack)."""

    g: slice
    h: slice
    u: slice
    y: slice
    n: int
    window: int
    n_u: int
    n_y: int


@dataclass
class MpcSolution:
    """Extracted optimizer. ``u_pred`` / ``y_pred`` cover offsets [0, L-1];
    ``h`` covers the full window [-eta, L-1]. ``cost`` is the program
    objective recomputed from the extracted blocks."""

    u_pred: np.ndarray
    y_pred: np.ndarray
    g: np.ndarray
    h: np.ndarray
    cost: float
    qp_iterations: int = 0
    qp_primal_residual: float = 0.0
    qp_dual_residual: float = 0.0
    z: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


class MpcAssembler:
    """Builds the QP once and re-instantiates it per step with fresh windows.

    The static arrays (P, Aeq, q, bounds) are shared across instances built by
    the same assembler, which lets the QP solver reuse its equilibration and
    factorization between consecutive solves.
    """

    def __init__(self, hankel: HankelPair, config: MpcConfig):
        if hankel.source is None or hankel.source.pe is None or not hankel.source.pe.excited:
            raise ValueError("offline data carries no persistency-of-excitation certificate")
        if config.v_bar < _V_BAR_FLOOR:
            logger.warning("v_bar=%g clamped to %g in cost scaling", config.v_bar, _V_BAR_FLOOR)
        self.hankel = hankel
        self.config = config
        w = config.window
        n_u, n_y = hankel.n_u, hankel.n_y
        n_g = hankel.hu.shape[1]
        eta = config.eta

        off_h = n_g
        off_u = off_h + w * n_y
        off_y = off_u + w * n_u
        n = off_y + w * n_y
        self.vmap = VariableMap(
            g=slice(0, n_g), h=slice(off_h, off_u), u=slice(off_u, off_y),
            y=slice(off_y, n), n=n, window=w, n_u=n_u, n_y=n_y,
        )

        vc = config.cost_noise_scale()
        r1 = _weight_matrix(config.r1, n_u, "R1")
        r2 = _weight_matrix(config.r2, n_y, "R2")
        p = np.zeros((n, n))
        p[self.vmap.g, self.vmap.g] = 2.0 * config.lambda_g * vc * np.eye(n_g)
        p[self.vmap.h, self.vmap.h] = 2.0 * (config.lambda_h / vc) * np.eye(w * n_y)
        for i in range(eta, w):
            su = slice(off_u + i * n_u, off_u + (i + 1) * n_u)
            sy = slice(off_y + i * n_y, off_y + (i + 1) * n_y)
            p[su, su] = 2.0 * r1
            p[sy, sy] = 2.0 * r2
        p += _RIDGE * np.eye(n)
        self.p = p
        self.q = np.zeros(n)

        m = w * (n_u + n_y) + 2 * eta * (n_u + n_y)
        a = np.zeros((m, n))
        r = 0
        a[r:r + w * n_u, self.vmap.g] = -hankel.hu
        a[r:r + w * n_u, self.vmap.u] = np.eye(w * n_u)
        r += w * n_u
        a[r:r + w * n_y, self.vmap.g] = -hankel.hy
        a[r:r + w * n_y, self.vmap.h] = np.eye(w * n_y)
        a[r:r + w * n_y, self.vmap.y] = np.eye(w * n_y)
        r += w * n_y
        self._init_rows = r
        a[np.arange(r, r + eta * n_u), off_u + np.arange(eta * n_u)] = 1.0
        r += eta * n_u
        a[np.arange(r, r + eta * n_y), off_y + np.arange(eta * n_y)] = 1.0
        r += eta * n_y
        a[np.arange(r, r + eta * n_u), off_u + (w - eta) * n_u + np.arange(eta * n_u)] = 1.0
        r += eta * n_u
        a[np.arange(r, r + eta * n_y), off_y + (w - eta) * n_y + np.arange(eta * n_y)] = 1.0
        self.aeq = a
        self.m = m

        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        lb[off_u + eta * n_u: off_u + w * n_u] = -config.u_max
        ub[off_u + eta * n_u: off_u + w * n_u] = config.u_max
        self.lb, self.ub = lb, ub

    def qp(self, init_u, init_zeta) -> QpProblem:
        cfg = self.config
        init_u = np.asarray(init_u, float).reshape(cfg.eta * self.vmap.n_u)
        init_zeta = np.asarray(init_zeta, float).reshape(cfg.eta * self.vmap.n_y)
        beq = np.zeros(self.m)
        r = self._init_rows
        beq[r:r + init_u.size] = init_u
        beq[r + init_u.size:r + init_u.size + init_zeta.size] = init_zeta
        return QpProblem(p=self.p, q=self.q, aeq=self.aeq, beq=beq, lb=self.lb, ub=self.ub)

    def warm_vector(self, previous: MpcSolution, init_u, init_zeta) -> np.ndarray:
        """Previous optimizer with the pinned windows replaced by current data."""
        z = previous.z.copy() if previous.z.size == self.vmap.n else np.zeros(self.vmap.n)
        eta, n_u, n_y = self.config.eta, self.vmap.n_u, self.vmap.n_y
        z[self.vmap.u][:eta * n_u] = np.asarray(init_u, float).reshape(-1)
        z[self.vmap.y][:eta * n_y] = np.asarray(init_zeta, float).reshape(-1)
        return z

    def extract(self, qp_solution, validate: bool = True) -> MpcSolution:
        cfg = self.config
        vm = self.vmap
        z = qp_solution.z
        u_stack = z[vm.u].reshape(vm.window, vm.n_u).copy()
        y_stack = z[vm.y].reshape(vm.window, vm.n_y).copy()
        u_pred = u_stack[cfg.eta:]
        y_pred = y_stack[cfg.eta:]
        if validate:
            tail_u = np.max(np.abs(u_pred[cfg.horizon - cfg.eta:]), initial=0.0)
            tail_y = np.max(np.abs(y_pred[cfg.horizon - cfg.eta:]), initial=0.0)
            if max(tail_u, tail_y) > 1e-6:
                raise SolverError(f"terminal anchor violated: {max(tail_u, tail_y):.3g}")
            if np.max(np.abs(u_pred), initial=0.0) > cfg.u_max + 1e-8:
                raise SolverError("input box violated beyond tolerance")
        # Project onto the constraints the replay logic relies on exactly.
        u_pred[cfg.horizon - cfg.eta:] = 0.0
        y_pred[cfg.horizon - cfg.eta:] = 0.0
        np.clip(u_pred, -cfg.u_max, cfg.u_max, out=u_pred)
        g = z[vm.g].copy()
        h = z[vm.h].reshape(vm.window, vm.n_y).copy()

        vc = cfg.cost_noise_scale()
        r1 = _weight_matrix(cfg.r1, vm.n_u, "R1")
        r2 = _weight_matrix(cfg.r2, vm.n_y, "R2")
        cost = float(
            np.sum(np.einsum("ij,jk,ik->i", u_pred, r1, u_pred))
            + np.sum(np.einsum("ij,jk,ik->i", y_pred, r2, y_pred))
            + cfg.lambda_g * vc * float(g @ g)
            + (cfg.lambda_h / vc) * float(np.sum(h * h))
        )
        for arr in (u_pred, y_pred, g, h):
            arr.setflags(write=False)
        return MpcSolution(
            u_pred=u_pred, y_pred=y_pred, g=g, h=h, cost=cost,
            qp_iterations=qp_solution.iterations,
            qp_primal_residual=qp_solution.primal_residual,
            qp_dual_residual=qp_solution.dual_residual,
            z=z,
        )


def assemble(problem: MpcProblem) -> tuple[QpProblem, VariableMap]:
    """One-shot assembly of an MpcProblem into a QpProblem plus index map."""
    asm = MpcAssembler(problem.hankel, problem.config)
    return asm.qp(problem.init_u, problem.init_zeta), asm.vmap


def solve_mpc(problem: MpcProblem, warm: Optional[MpcSolution] = None,
              solver: Optional[Solver] = None, assembler: Optional[MpcAssembler] = None,
              ) -> MpcSolution:
    """Solve one instance; deterministic given identical inputs and solver state.

    A non-optimal solver status is surfaced as SolverError with diagnostics.
    """
    asm = assembler or MpcAssembler(problem.hankel, problem.config)
    qp_problem = asm.qp(problem.init_u, problem.init_zeta)
    slv = solver or Solver(Settings())
    warm_z = asm.warm_vector(warm, problem.init_u, problem.init_zeta) if warm else None
    sol = slv.solve(qp_problem, warm_z=warm_z)
    if sol.status != "optimal":
        raise SolverError(
            f"QP terminated with status '{sol.status}' "
            f"(primal {sol.primal_residual:.3g}, dual {sol.dual_residual:.3g}, "
            f"{sol.iterations} iterations)"
        )
    return asm.extract(sol)


def predicted_input_at(solution: MpcSolution, offset: int) -> np.ndarray:
    """Predicted input at the given offset from the solve instant."""
    if not 0 <= offset < solution.u_pred.shape[0]:
        raise IndexError(f"offset {offset} outside [0, {solution.u_pred.shape[0] - 1}]")
    return solution.u_pred[offset]


def dump_solution(solution: MpcSolution) -> str:
    """JSON snapshot of one solve, for debugging reproduction."""
    import json

    return json.dumps({
        "cost": solution.cost,
        "u_pred": solution.u_pred.tolist(),
        "y_pred": solution.y_pred.tolist(),
        "g": solution.g.tolist(),
        "h": solution.h.tolist(),
        "qp_iterations": solution.qp_iterations,
        "qp_primal_residual": solution.qp_primal_residual,
        "qp_dual_residual": solution.qp_dual_residual,
    }, indent=2)
