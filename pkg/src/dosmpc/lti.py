"""Ground-truth LTI machinery: simulation, ZOH discretization, observability
index, structural (stacked-window) matrices, and gain synthesis for the
model-based baseline.

The system model here is the simulation/oracle side of the artifact. It is
never visible to the data-driven controller.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, StructureError, SynthesisError

__all__ = [
    "SystemModel",
    "StructuralMatrices",
    "GainSet",
    "check_structure",
    "discretize",
    "simulate",
    "observability_index",
    "structural_matrices",
    "synthesize_gains",
]

_RANK_RTOL = 1e-12


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time LTI plant x+ = A x + B u + w, y = C x + D u.

    ``dt`` is the sampling period in seconds, carried as metadata only.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a))
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "c", _frozen(self.c))
        object.__setattr__(self, "d", _frozen(self.d))
        n = self.a.shape[0]
        if self.a.ndim != 2 or self.a.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.a.shape}")
        if self.b.ndim != 2 or self.b.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.b.shape}")
        if self.c.ndim != 2 or self.c.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {self.c.shape}")
        if self.d.shape != (self.c.shape[0], self.b.shape[1]):
            raise DimensionError(
                f"D must be {self.c.shape[0]}x{self.b.shape[1]}, got {self.d.shape}"
            )

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    @property
    def n_y(self) -> int:
        return self.c.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_x": self.n_x,
                "n_u": self.n_u,
                "n_y": self.n_y,
                "a": self.a.tolist(),
                "b": self.b.tolist(),
                "c": self.c.tolist(),
                "d": self.d.tolist(),
                "dt": self.dt,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "SystemModel":
        """Load a model from JSON (row-major matrix arrays).

        A ``"continuous": true`` flag marks (A, B) as continuous-time; they are
        ZOH-discretized at the stored ``dt`` on load.
        """
        obj = json.loads(text)
        dt = float(obj.get("dt", 1.0))
        n_y = len(obj["c"])
        n_u = len(obj["b"][0]) if obj["b"] else 0
        d = obj.get("d")
        if d is None:
            d = np.zeros((n_y, n_u))
        model = SystemModel(obj["a"], obj["b"], obj["c"], d, dt=dt)
        if obj.get("continuous", False):
            model = discretize(model, dt)
        return model


@dataclass(frozen=True)
class StructuralMatrices:
    """Stacked-window matrices for depth-n input/output windows.

    ``theta_n`` stacks C, CA, ..., CA^(n-1). ``upsilon_i`` and ``upsilon_b``
    are strictly block-lower-triangular impulse-response stacks (noise and
    input channels). ``psi`` is the block map from (input window, initial
    state) to (input window, output window).
    """

    theta_n: np.ndarray
    upsilon_i: np.ndarray
    upsilon_b: np.ndarray
    psi: np.ndarray
    n: int


@dataclass(frozen=True)
class GainSet:
    """Verified gains for the model-based baseline controller."""

    k: np.ndarray
    l_obs: np.ndarray
    eta: int
    closed_loop_radius: float = field(default=0.0)
    deadbeat_norm: float = field(default=0.0)


def _rank(m: np.ndarray, rtol: float = _RANK_RTOL) -> tuple[int, float]:
    """Numerical rank via singular values; returns (rank, tolerance used)."""
    if m.size == 0:
        return 0, 0.0
    s = np.linalg.svd(m, compute_uv=False)
    tol = s[0] * max(m.shape) * rtol
    return int(np.sum(s > tol)), tol


def check_structure(model: SystemModel) -> dict:
    """Certify Assumption-level structure: (A,B) stabilizable, (C,A) observable.

    Returns a report dict; raises StructureError if either check fails.
    """
    n = model.n_x
    obs_rank, _ = _rank(np.vstack([model.c @ np.linalg.matrix_power(model.a, i) for i in range(n)]))
    observable = obs_rank == n
    # PBH test on every eigenvalue outside the open unit disk
    stabilizable = True
    for lam in np.linalg.eigvals(model.a):
        if abs(lam) >= 1.0 - 1e-12:
            pbh = np.hstack([model.a - lam * np.eye(n), model.b])
            r, _ = _rank(pbh)
            if r < n:
                stabilizable = False
                break
    if not observable:
        raise StructureError("(C, A) is not observable (Assumption 1)")
    if not stabilizable:
        raise StructureError("(A, B) is not stabilizable (Assumption 1)")
    return {"observable": True, "stabilizable": True, "observability_rank": obs_rank}


def _expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a truncated Taylor series.

    The series is summed until the term norm falls below 1e-18 times the
    accumulated norm, which after squaring keeps the relative error well
    under 1e-12 for the scaled norm <= 0.5 used here.
    """
    norm = np.linalg.norm(m, np.inf)
    squarings = 0
    if norm > 0.5:
        squarings = int(np.ceil(np.log2(norm / 0.5)))
    ms = m / (2.0 ** squarings)
    n = m.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ ms / k
        result = result + term
        if np.linalg.norm(term, np.inf) <= 1e-18 * np.linalg.norm(result, np.inf):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def discretize(continuous_model: SystemModel, dt: float) -> SystemModel:
    """Zero-order-hold discretization of a continuous-time (A, B).

    A_d = exp(A dt), B_d = (integral_0^dt exp(A s) ds) B, computed jointly via
    the exponential of the augmented [[A, B], [0, 0]] * dt matrix. C and D are
    copied through.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = continuous_model.n_x, continuous_model.n_u
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = continuous_model.a
    aug[:n, n:] = continuous_model.b
    e = _expm(aug * dt)
    return SystemModel(e[:n, :n], e[:n, n:], continuous_model.c, continuous_model.d, dt=dt)


def simulate(model: SystemModel, x0, inputs, process_noise=None):
    """Simulate the exact recursion x+ = A x + B u + w, y = C x + D u.

    ``inputs`` and ``process_noise`` are (T, n_u) and (T, n_x) arrays. Returns
    a Trajectory with T inputs/outputs, T+1 states (terminal state included),
    and the noise sequence. No noise is added to y; network noise is applied
    by the channel, elsewhere.
    """
    from .data import Trajectory

    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[1] != model.n_u:
        raise DimensionError(f"inputs must be (T, {model.n_u}), got {u.shape}")
    steps = u.shape[0]
    if process_noise is None:
        w = np.zeros((steps, model.n_x))
    else:
        w = np.atleast_2d(np.asarray(process_noise, dtype=float))
    if w.shape != (steps, model.n_x):
        raise DimensionError(f"process_noise must be ({steps}, {model.n_x}), got {w.shape}")
    x = np.asarray(x0, dtype=float).reshape(model.n_x)

    states = np.empty((steps + 1, model.n_x))
    outputs = np.empty((steps, model.n_y))
    states[0] = x
    for t in range(steps):
        outputs[t] = model.c @ states[t] + model.d @ u[t]
        states[t + 1] = model.a @ states[t] + model.b @ u[t] + w[t]
    return Trajectory(inputs=u, outputs=outputs, states=states, noises=w)


def observability_index(model: SystemModel) -> int:
    """Smallest i >= 1 with rank [C; CA; ...; CA^(i-1)] = n_x."""
    blocks = []
    power = np.eye(model.n_x)
    for i in range(1, model.n_x + 1):
        blocks.append(model.c @ power)
        power = model.a @ power
        r, _ = _rank(np.vstack(blocks))
        if r == model.n_x:
            return i
    raise StructureError("(C, A) is not observable within n_x block rows")


def structural_matrices(model: SystemModel, n: int) -> StructuralMatrices:
    """Assemble the depth-n stacked-window matrices by direct block placement."""
    if n < 1:
        raise ValueError(f"depth must be >= 1, got {n}")
    n_x, n_u, n_y = model.n_x, model.n_u, model.n_y
    powers = [np.eye(n_x)]
    for _ in range(n - 1):
        powers.append(model.a @ powers[-1])

    theta = np.vstack([model.c @ p for p in powers])
    ups_i = np.zeros((n * n_y, n * n_x))
    ups_b = np.zeros((n * n_y, n * n_u))
    for i in range(1, n):
        for j in range(i):
            block = model.c @ powers[i - j - 1]
            ups_i[i * n_y:(i + 1) * n_y, j * n_x:(j + 1) * n_x] = block
            ups_b[i * n_y:(i + 1) * n_y, j * n_u:(j + 1) * n_u] = block @ model.b

    psi = np.zeros((n * (n_u + n_y), n * n_u + n_x))
    psi[:n * n_u, :n * n_u] = np.eye(n * n_u)
    psi[n * n_u:, :n * n_u] = ups_b
    psi[n * n_u:, n * n_u:] = theta
    return StructuralMatrices(theta_n=theta, upsilon_i=ups_i, upsilon_b=ups_b, psi=psi, n=n)


def _riccati_gain(model: SystemModel, q_weight: float, r_weight: float) -> np.ndarray:
    """Stabilizing feedback from the discrete Riccati iteration (fixed point)."""
    a, b = model.a, model.b
    q = q_weight * np.eye(model.n_x)
    r = r_weight * np.eye(model.n_u)
    p = q.copy()
    for _ in range(10_000):
        btp = b.T @ p
        gain = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ (a - b @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        if np.linalg.norm(p_next - p) <= 1e-12 * max(1.0, np.linalg.norm(p_next)):
            p = p_next
            break
        p = p_next
    else:
        raise SynthesisError("Riccati iteration did not converge in 10000 iterations")
    btp = b.T @ p
    return -np.linalg.solve(r + btp @ b, btp @ a)


def _deadbeat_observer_gain(model: SystemModel, eta: int) -> np.ndarray:
    """Observer gain with (A - LC)^eta nilpotent to working precision.

    Works on the dual pair (A^T, C^T): assigns Jordan chains at the origin
    with chain lengths equal to the dual controllability indices (whose
    maximum is eta), built level by level from the null space of [A^T, C^T].
    Chain vectors are mixed with seeded random null-space components until the
    assembled basis is well conditioned.
    """
    fa, fb = model.a.T, model.c.T
    n = fa.shape[0]
    p = fb.shape[1]

    # Crate selection of the dual controllability indices.
    selected: list[np.ndarray] = []
    lengths = [0] * p
    alive = [True] * p
    cols = [fb[:, i] for i in range(p)]
    basis = np.zeros((n, 0))
    for _ in range(n):
        for i in range(p):
            if not alive[i]:
                continue
            cand = cols[i]
            resid = cand - basis @ (basis.T @ cand) if basis.shape[1] else cand
            if np.linalg.norm(resid) > 1e-10 * max(1.0, np.linalg.norm(cand)):
                qvec = resid / np.linalg.norm(resid)
                basis = np.hstack([basis, qvec[:, None]])
                selected.append(cand)
                lengths[i] += 1
                cols[i] = fa @ cand
            else:
                alive[i] = False
        if basis.shape[1] == n:
            break
    if sum(lengths) != n:
        raise StructureError("(C, A) is not observable; deadbeat gain undefined")
    chain_lengths = sorted((l for l in lengths if l > 0), reverse=True)
    if chain_lengths[0] != eta:
        # Numerically degenerate crate; fall back on eta from the caller.
        chain_lengths[0] = max(chain_lengths[0], eta)

    # Null space and a solver for [A^T, C^T] [t; w] = rhs.
    stacked = np.hstack([fa, fb])
    u_svd, s_svd, vt_svd = np.linalg.svd(stacked)
    if s_svd[-1] <= s_svd[0] * max(stacked.shape) * _RANK_RTOL:
        raise StructureError("[A; C] is rank deficient; observable pair expected")
    null_basis = vt_svd[n:].T  # (n + p, p)
    pinv = vt_svd[:len(s_svd)].T @ np.diag(1.0 / s_svd) @ u_svd.T

    rng = np.random.default_rng(20)
    best = None
    for attempt in range(60):
        t_cols = []
        w_cols = []
        per_chain: list[list[np.ndarray]] = []
        for ci, clen in enumerate(chain_lengths):
            coeff = np.zeros(p)
            if attempt == 0 and ci < p:
                coeff[ci] = 1.0
            else:
                coeff = rng.standard_normal(p)
            vec = null_basis @ coeff
            chain = [(vec[:n], vec[n:])]
            for _ in range(clen - 1):
                rhs = chain[-1][0]
                sol = pinv @ rhs
                if attempt > 0:
                    sol = sol + null_basis @ (0.3 * rng.standard_normal(p))
                chain.append((sol[:n], sol[n:]))
            per_chain.append(chain)
        for chain in per_chain:
            for tv, wv in chain:
                t_cols.append(tv)
                w_cols.append(wv)
        t_mat = np.column_stack(t_cols)
        w_mat = np.column_stack(w_cols)
        cond = np.linalg.cond(t_mat)
        if best is None or cond < best[0]:
            best = (cond, t_mat, w_mat)
        if cond < 1e8:
            break
    _, t_mat, w_mat = best
    feedback = np.linalg.solve(t_mat.T, w_mat.T).T  # W T^{-1}
    return -feedback.T


def synthesize_gains(model: SystemModel, q_weight: float = 1.0, r_weight: float = 1.0) -> GainSet:
    """Feedback gain via Riccati iteration and deadbeat observer gain.

    Both gains are post-verified: spectral radius of A + BK < 1 and
    ||(A - LC)^eta|| <= 1e-8. Raises SynthesisError with the achieved values
    otherwise.
    """
    check_structure(model)
    eta = observability_index(model)
    k = _riccati_gain(model, q_weight, r_weight)
    radius = max(abs(np.linalg.eigvals(model.a + model.b @ k)))
    if radius >= 1.0:
        raise SynthesisError(f"closed loop not Schur stable: spectral radius {radius:.6g}")
    l_obs = _deadbeat_observer_gain(model, eta)
    nil = np.linalg.matrix_power(model.a - l_obs @ model.c, eta)
    nil_norm = float(np.linalg.norm(nil, 2))
    if nil_norm > 1e-8:
        raise SynthesisError(f"deadbeat check failed: ||(A-LC)^{eta}|| = {nil_norm:.3g}")
    return GainSet(k=_frozen(k), l_obs=_frozen(l_obs), eta=eta,
                   closed_loop_radius=float(radius), deadbeat_norm=nil_norm)
