"""Self-contained dense convex QP solver for equality plus box constraints.

    minimize    0.5 z'Pz + q'z
    subject to  Aeq z = beq,   lb <= z <= ub

The method is operator splitting (ADMM) on the stacked constraint
[Aeq; selected box rows], with modified Ruiz equilibration, a dense Cholesky
factorization of the step matrix, periodic penalty adaptation, and a direct
KKT polish of the converged active set. Problem sizes here stay in the low
hundreds of variables, so dense factorizations are ample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError

__all__ = ["QpProblem", "QpSolution", "Settings", "Solver", "solve", "kkt_residuals",
           "dump_problem", "load_problem"]


@dataclass(frozen=True)
class QpProblem:
    """Dense QP data. P is symmetrized on construction; bounds may be infinite."""

    p: np.ndarray
    q: np.ndarray
    aeq: np.ndarray
    beq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f"P must be square, got {p.shape}")
        if not np.array_equal(p, p.T):
            if np.linalg.norm(p - p.T) > 1e-12 * max(1.0, np.linalg.norm(p)):
                raise DimensionError("P must be symmetric to 1e-12")
            p = 0.5 * (p + p.T)
        object.__setattr__(self, "p", p)
        n = p.shape[0]
        q = np.asarray(self.q, dtype=float).reshape(-1)
        aeq = np.asarray(self.aeq, dtype=float).reshape(-1, n) if np.size(self.aeq) else np.zeros((0, n))
        beq = np.asarray(self.beq, dtype=float).reshape(-1)
        lb = np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.asarray(self.ub, dtype=float).reshape(-1)
        if q.shape != (n,) or lb.shape != (n,) or ub.shape != (n,):
            raise DimensionError("q, lb, ub must all have length n")
        if aeq.shape[0] != beq.shape[0]:
            raise DimensionError("Aeq and beq row counts differ")
        if np.any(lb > ub):
            raise DimensionError("lb must be <= ub componentwise")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "aeq", aeq)
        object.__setattr__(self, "beq", beq)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False


@dataclass
class Settings:
    """Termination uses eps_abs + eps_rel * scale plus an evaluation-floor
    term eps_machine * max_i (|A||z| + |v|)_i (and its dual analogue): the
    rounding noise of evaluating the residual itself. Without it, problems
    whose constraint rows span many decades can never terminate, since even
    the exact optimizer rounded to float64 evaluates above eps_abs."""

    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 50_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_interval: int = 25
    adapt_interval: int = 100
    scaling_iters: int = 10
    polish: bool = True


def _objective(problem: QpProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ problem.p @ z + problem.q @ z)


def _ext_matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product accumulated in extended precision.

    Constraint rows built from an unstable open-loop record span many decades;
    cancellation in float64 limits evaluable residuals to roughly 1e-7 there.
    80-bit accumulation pushes the evaluation floor below the 1e-8 tolerance.
    """
    return (a.astype(np.longdouble) @ x.astype(np.longdouble)).astype(float)


def kkt_residuals(problem: QpProblem, z, y_eq=None, mu=None):
    """(primal, dual, complementarity) infinity-norm residuals at a candidate.

    ``y_eq`` are the equality multipliers, ``mu`` the box multipliers
    (positive entries push at the upper bound, negative at the lower). A
    box multiplier on an infinite bound counts toward the complementarity
    gap at its own magnitude.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    y_eq = np.zeros(problem.aeq.shape[0]) if y_eq is None else np.asarray(y_eq, float).reshape(-1)
    mu = np.zeros(problem.n) if mu is None else np.asarray(mu, float).reshape(-1)
    eq_res = _ext_matvec(problem.aeq, z) - problem.beq if problem.aeq.shape[0] else np.zeros(0)
    box_low = np.maximum(problem.lb - z, 0.0)
    box_high = np.maximum(z - problem.ub, 0.0)
    primal = max(
        np.max(np.abs(eq_res)) if eq_res.size else 0.0,
        np.max(box_low, initial=0.0),
        np.max(box_high, initial=0.0),
    )
    stat = problem.p @ z + problem.q + mu
    if problem.aeq.shape[0]:
        stat = stat + _ext_matvec(problem.aeq.T, y_eq)
    dual = float(np.max(np.abs(stat), initial=0.0))
    mu_hi = np.maximum(mu, 0.0)
    mu_lo = np.maximum(-mu, 0.0)
    ub_gap = np.where(np.isfinite(problem.ub), np.abs(problem.ub - z), 1.0)
    lb_gap = np.where(np.isfinite(problem.lb), np.abs(z - problem.lb), 1.0)
    comp = float(max(np.max(mu_hi * ub_gap, initial=0.0),
                     np.max(mu_lo * lb_gap, initial=0.0)))
    return float(primal), dual, comp


class _Workspace:
    """Scaled data and cached factorization reused across parametric re-solves."""

    def __init__(self, problem: QpProblem, settings: Settings):
        n = problem.n
        self.box_idx = np.where(np.isfinite(problem.lb) | np.isfinite(problem.ub))[0]
        self.m_eq = problem.aeq.shape[0]
        self.m = self.m_eq + self.box_idx.size
        a = np.zeros((self.m, n))
        if self.m_eq:
            a[: self.m_eq] = problem.aeq
        a[np.arange(self.m_eq, self.m), self.box_idx] = 1.0
        self.a = a
        # Holding the source problem keeps its arrays alive, so the id-based
        # cache key below cannot collide with a recycled address.
        self.source = problem
        self.key = (id(problem.p), id(problem.aeq), id(problem.q),
                    id(problem.lb), id(problem.ub))

        # Modified Ruiz equilibration of [P A'; A 0] plus a scalar cost scaling.
        d = np.ones(n)
        e = np.ones(self.m)
        p_s, a_s, q_s = problem.p.copy(), a.copy(), problem.q.copy()
        for _ in range(settings.scaling_iters):
            cn = np.maximum(
                np.max(np.abs(p_s), axis=0, initial=0.0),
                np.max(np.abs(a_s), axis=0, initial=0.0) if self.m else 0.0,
            )
            cn[cn == 0] = 1.0
            delta_d = 1.0 / np.sqrt(cn)
            rn = np.max(np.abs(a_s), axis=1, initial=0.0) if self.m else np.zeros(0)
            rn[rn == 0] = 1.0
            delta_e = 1.0 / np.sqrt(rn)
            p_s = p_s * delta_d[:, None] * delta_d[None, :]
            q_s = q_s * delta_d
            if self.m:
                a_s = a_s * delta_e[:, None] * delta_d[None, :]
            d *= delta_d
            e *= delta_e
        col_means = np.mean(np.max(np.abs(p_s), axis=0, initial=0.0)) if n else 1.0
        c = 1.0 / max(col_means, np.max(np.abs(q_s), initial=0.0), 1e-12)
        self.d, self.e, self.c = d, e, c
        self.p_s = c * p_s
        self.a_s = a_s
        # Cached copies for residual evaluation: 80-bit accumulation for the
        # products themselves, absolute values for the evaluation-floor term.
        self.a_ld = a.astype(np.longdouble)
        self.at_ld = a.T.astype(np.longdouble).copy()
        self.abs_a = np.abs(a)
        self.abs_p = np.abs(problem.p)
        self.abs_q = np.abs(problem.q)
        self.rho_bar = settings.rho
        self.sigma = settings.sigma
        self._factor(settings.rho)
        self.x = np.zeros(n)
        self.v = np.zeros(self.m)
        self.y = np.zeros(self.m)

    def rho_vec(self, rho_bar: float) -> np.ndarray:
        # Stiffer penalty on equality rows, as is standard for splitting methods.
        rho = np.full(self.m, rho_bar)
        rho[: self.m_eq] *= 1e3
        return rho

    def _factor(self, rho_bar: float):
        self.rho_bar = rho_bar
        self.rho = self.rho_vec(rho_bar)
        m_mat = self.p_s + self.sigma * np.eye(self.p_s.shape[0])
        if self.m:
            m_mat = m_mat + (self.a_s.T * self.rho) @ self.a_s
        np.linalg.cholesky(m_mat)  # positive definiteness guard
        # The step system is solved thousands of times per problem; a cached
        # inverse turns each solve into one matmul. Inexactness at the level
        # eps * cond is harmless inside the fixed-point iteration, and the
        # polish step supplies the final accuracy.
        self.step_inv = np.linalg.inv(m_mat)

    def solve_step(self, rhs: np.ndarray) -> np.ndarray:
        return self.step_inv @ rhs


class Solver:
    """One-problem-at-a-time QP solver with workspace reuse.

    Re-solving with the same matrix objects (only beq or q values changed in
    place is not supported; pass fresh vectors) skips re-equilibration and
    re-factorization, which is what the receding-horizon loop relies on.
    """

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings()
        self._ws: Optional[_Workspace] = None

    def _workspace(self, problem: QpProblem) -> _Workspace:
        key = (id(problem.p), id(problem.aeq), id(problem.q),
               id(problem.lb), id(problem.ub))
        if self._ws is None or self._ws.key != key:
            self._ws = _Workspace(problem, self.settings)
        return self._ws

    def solve(self, problem: QpProblem, warm_z=None, warm_y=None) -> QpSolution:
        s = self.settings
        ws = self._workspace(problem)
        n = problem.n

        l_full = np.concatenate([problem.beq, problem.lb[ws.box_idx]])
        u_full = np.concatenate([problem.beq, problem.ub[ws.box_idx]])
        l_s = ws.e * l_full
        u_s = ws.e * u_full
        q_s = ws.c * (ws.d * problem.q)

        if warm_z is not None:
            ws.x = np.asarray(warm_z, float).reshape(n) / ws.d
            ws.v = ws.a_s @ ws.x
        if warm_y is not None:
            ws.y = ws.c * np.asarray(warm_y, float).reshape(ws.m) / ws.e

        # The projected iterate must live in the (current) constraint set for
        # the primal residual to be meaningful, including at iteration zero.
        x, y = ws.x, ws.y
        v = np.clip(ws.v, l_s, u_s) if ws.m else ws.v
        best = None
        stall = 0
        status = "max_iter"
        iterations = s.max_iter
        for k in range(s.max_iter + 1):
            if k % s.check_interval == 0:
                z_un = ws.d * x
                y_un = ws.e * y / ws.c
                v_un = v / ws.e if ws.m else v
                r_p, r_d, e_p, e_d = self._residuals(problem, ws, z_un, y_un, v_un)
                if best is None or max(r_p / e_p, r_d / e_d) < best[0]:
                    best = (max(r_p / e_p, r_d / e_d), z_un.copy(), y_un.copy(), v_un.copy(), r_p, r_d)
                    stall = 0
                else:
                    stall += 1
                converged = r_p <= e_p and r_d <= e_d
                if s.polish and (converged or k % s.adapt_interval == 0):
                    at_lo = v[ws.m_eq:] == l_s[ws.m_eq:]
                    at_hi = (v[ws.m_eq:] == u_s[ws.m_eq:]) & ~at_lo
                    pol = self._polish(problem, ws, z_un, y_un, at_lo, at_hi)
                    if pol is not None:
                        z_p, y_p, mu_p, rp_p, rd_p, ep_p, ed_p = pol
                        if rp_p <= ep_p and rd_p <= ed_p:
                            ws.x, ws.v, ws.y = x, v, y
                            return self._finish(problem, ws, z_p, y_p, mu_p,
                                                rp_p, rd_p, k, "optimal", True)
                if converged:
                    status = "optimal"
                    iterations = k
                    break
                if np.max(np.abs(y_un), initial=0.0) > 1e10 and stall >= 10 and r_p > 1e3 * e_p:
                    status = "infeasible"
                    iterations = k
                    break
                if k > 0 and k % s.adapt_interval == 0:
                    scale_p = max(np.max(np.abs(ws.a_s @ x), initial=0.0),
                                  np.max(np.abs(v), initial=0.0), 1e-12)
                    scale_d = max(np.max(np.abs(ws.p_s @ x + q_s), initial=0.0), 1e-12)
                    rp_s = np.max(np.abs(ws.a_s @ x - v), initial=0.0) / scale_p
                    rd_s = np.max(np.abs(ws.p_s @ x + q_s + (ws.a_s.T @ y if ws.m else 0)),
                                  initial=0.0) / scale_d
                    ratio = np.sqrt(max(rp_s, 1e-16) / max(rd_s, 1e-16))
                    new_rho = float(np.clip(ws.rho_bar * ratio, 1e-6, 1e6))
                    if ratio > 5 or ratio < 0.2:
                        ws._factor(new_rho)
            if k == s.max_iter:
                break
            rhs = ws.sigma * x - q_s
            if ws.m:
                rhs = rhs + ws.a_s.T @ (ws.rho * v - y)
            xt = ws.solve_step(rhs)
            zt = ws.a_s @ xt if ws.m else v
            x = s.alpha * xt + (1 - s.alpha) * x
            if ws.m:
                v_relaxed = s.alpha * zt + (1 - s.alpha) * v
                v_new = np.clip(v_relaxed + y / ws.rho, l_s, u_s)
                y = y + ws.rho * (v_relaxed - v_new)
                v = v_new

        ws.x, ws.v, ws.y = x, v, y
        if status == "optimal" or best is None:
            z_fin = ws.d * x
            y_fin = ws.e * y / ws.c
        else:
            _, z_fin, y_fin, _, _, _ = best
        r_p, r_d, _, _ = self._residuals(problem, ws, z_fin, y_fin, None)
        mu = np.zeros(n)
        mu[ws.box_idx] = y_fin[ws.m_eq:]
        return self._finish(problem, ws, z_fin, y_fin[: ws.m_eq], mu, r_p, r_d,
                            iterations, status, False)

    def _residuals(self, problem, ws, z, y, v_un):
        eps_m = float(np.finfo(float).eps)
        ax = (ws.a_ld @ z.astype(np.longdouble)).astype(float) if ws.m else np.zeros(0)
        if v_un is None:
            l_full = np.concatenate([problem.beq, problem.lb[ws.box_idx]])
            u_full = np.concatenate([problem.beq, problem.ub[ws.box_idx]])
            v_un = np.clip(ax, l_full, u_full)
        r_p = np.max(np.abs(ax - v_un), initial=0.0)
        pz = problem.p @ z
        stat = pz + problem.q
        aty = (ws.at_ld @ y.astype(np.longdouble)).astype(float) if ws.m else np.zeros(problem.n)
        if ws.m:
            stat = stat + aty
        r_d = np.max(np.abs(stat), initial=0.0)
        abs_z = np.abs(z)
        floor_p = eps_m * np.max(ws.abs_a @ abs_z + np.abs(v_un), initial=0.0) if ws.m else 0.0
        floor_d = eps_m * np.max(
            ws.abs_p @ abs_z + (ws.abs_a.T @ np.abs(y) if ws.m else 0.0) + ws.abs_q,
            initial=0.0)
        e_p = self.settings.eps_abs + self.settings.eps_rel * max(
            np.max(np.abs(ax), initial=0.0), np.max(np.abs(v_un), initial=0.0)) + floor_p
        e_d = self.settings.eps_abs + self.settings.eps_rel * max(
            np.max(np.abs(pz), initial=0.0),
            np.max(np.abs(aty), initial=0.0),
            np.max(ws.abs_q, initial=0.0)) + floor_d
        return float(r_p), float(r_d), float(e_p), float(e_d)

    def _solve_active(self, problem, lo_act, hi_act):
        """Refined KKT solve with the given box rows pinned at their bounds."""
        n = problem.n
        rows = []
        rhs = []
        if problem.aeq.shape[0]:
            rows.append(problem.aeq)
            rhs.append(problem.beq)
        for idx, bound in ((lo_act, problem.lb), (hi_act, problem.ub)):
            if idx.size:
                sel = np.zeros((idx.size, n))
                sel[np.arange(idx.size), idx] = 1.0
                rows.append(sel)
                rhs.append(bound[idx])
        a_act = np.vstack(rows) if rows else np.zeros((0, n))
        b_act = np.concatenate(rhs) if rhs else np.zeros(0)
        m_act = a_act.shape[0]
        delta = 1e-9
        kkt = np.zeros((n + m_act, n + m_act))
        kkt[:n, :n] = problem.p + delta * np.eye(n)
        if m_act:
            kkt[:n, n:] = a_act.T
            kkt[n:, :n] = a_act
            kkt[n:, n:] = -delta * np.eye(m_act)
        target = np.concatenate([-problem.q, b_act])
        lu_sol = np.linalg.solve(kkt, target)
        # Refine against the unregularized system with residuals accumulated
        # in extended precision: removes the delta regularization and drives
        # the true residual toward the 80-bit evaluation floor.
        kkt_true = kkt.copy()
        kkt_true[:n, :n] -= delta * np.eye(n)
        if m_act:
            kkt_true[n:, n:] += delta * np.eye(m_act)
        kkt_ext = kkt_true.astype(np.longdouble)
        target_ext = target.astype(np.longdouble)
        for _ in range(3):
            resid = (target_ext - kkt_ext @ lu_sol.astype(np.longdouble)).astype(float)
            lu_sol = lu_sol + np.linalg.solve(kkt, resid)
        z_p = lu_sol[:n]
        y_act = lu_sol[n:]
        y_eq = y_act[: problem.aeq.shape[0]]
        mu = np.zeros(n)
        k = y_eq.size
        mu[lo_act] = y_act[k:k + lo_act.size]
        k += lo_act.size
        mu[hi_act] = y_act[k:k + hi_act.size]
        return z_p, y_eq, mu

    def _polish(self, problem, ws, z, y, at_lo=None, at_hi=None):
        """Direct KKT solve on the active set suggested by the splitting
        iterate, with a few add/remove cleanup passes: wrong-sign multipliers
        leave the set, violated bounds enter it."""
        box = ws.box_idx
        if at_lo is None:
            at_lo = np.zeros(box.size, dtype=bool)
        if at_hi is None:
            at_hi = np.zeros(box.size, dtype=bool)
        lo_act = box[at_lo & np.isfinite(problem.lb[box])]
        hi_act = box[at_hi & np.isfinite(problem.ub[box])]
        for _ in range(8):
            try:
                z_p, y_eq, mu = self._solve_active(problem, lo_act, hi_act)
            except np.linalg.LinAlgError:
                return None
            drop_lo = lo_act[mu[lo_act] > 1e-9]
            drop_hi = hi_act[mu[hi_act] < -1e-9]
            viol_lo = box[(problem.lb[box] - z_p[box]) > 1e-9]
            viol_hi = box[(z_p[box] - problem.ub[box]) > 1e-9]
            add_lo = np.setdiff1d(viol_lo, lo_act, assume_unique=False)
            add_hi = np.setdiff1d(viol_hi, hi_act, assume_unique=False)
            if not (drop_lo.size or drop_hi.size or add_lo.size or add_hi.size):
                y_full = np.concatenate([y_eq, mu[box]])
                r_p, r_d, e_p, e_d = self._residuals(problem, ws, z_p, y_full, None)
                return z_p, y_eq, mu, r_p, r_d, e_p, e_d
            lo_act = np.union1d(np.setdiff1d(lo_act, drop_lo), add_lo).astype(int)
            hi_act = np.union1d(np.setdiff1d(hi_act, drop_hi), add_hi).astype(int)
        return None

    def _finish(self, problem, ws, z, y_eq, mu, r_p, r_d, iterations, status, polished):
        return QpSolution(
            z=z,
            objective=_objective(problem, z),
            primal_residual=float(r_p),
            dual_residual=float(r_d),
            iterations=int(iterations),
            status=status,
            y_eq=np.asarray(y_eq, float).reshape(-1),
            mu=mu,
            polished=polished,
        )


def solve(problem: QpProblem, settings: Optional[Settings] = None,
          warm_z=None, warm_y=None) -> QpSolution:
    """Single-shot convenience wrapper around Solver."""
    return Solver(settings).solve(problem, warm_z=warm_z, warm_y=warm_y)


def dump_problem(problem: QpProblem) -> str:
    """Serialize to JSON (row-major dense arrays; infinite bounds as null)."""
    def encode_bounds(v):
        return [None if not np.isfinite(x) else float(x) for x in v]

    return json.dumps({
        "p": problem.p.tolist(),
        "q": problem.q.tolist(),
        "aeq": problem.aeq.tolist(),
        "beq": problem.beq.tolist(),
        "lb": encode_bounds(problem.lb),
        "ub": encode_bounds(problem.ub),
    })


def load_problem(text: str) -> QpProblem:
    obj = json.loads(text)
    n = len(obj["q"])
    lb = np.array([-np.inf if v is None else v for v in obj["lb"]])
    ub = np.array([np.inf if v is None else v for v in obj["ub"]])
    aeq = np.array(obj["aeq"], dtype=float).reshape(-1, n) if obj["aeq"] else np.zeros((0, n))
    return QpProblem(p=np.array(obj["p"]), q=np.array(obj["q"]), aeq=aeq,
                     beq=np.array(obj["beq"]), lb=lb, ub=ub)
