"""Time integration of the monodomain tissue equation.

The semi-discrete system

    chi C_m M dv/dt + A v + M I_ion(v, w, c) = M I_app
    dw/dt = R(v, w),   dc/dt = C(v, w, c)

is advanced with a first-order implicit-explicit scheme: the local gating
and concentration equations are solved implicitly per node (given v at the
old time level), the ionic current is then evaluated explicitly, and a
single symmetric positive-definite solve

    (chi C_m / dt M + A) v_{n+1} = chi C_m / dt M v_n - M I_ion + M I_app

updates the potential. The linear solve uses Jacobi-preconditioned
conjugate gradients; the system matrix and preconditioner are cached per
time-step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError, NumericFailureError
from .fem import ConductivityTensorField, StructuredGrid, assemble_mass, assemble_stiffness
from .ionic import IonicParamField, implicit_reaction_step


@dataclass
class SimState:
    """Nodal state at one time instant."""

    t: float
    v: np.ndarray
    w: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class StimulusProtocol:
    """Constant-amplitude current applied in a ball around ``center``."""

    center: tuple
    radius: float = 0.05
    amplitude: float = 350.0
    onset: float = 0.0
    duration: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidArgumentError("stimulus amplitude must be >= 0")
        if self.duration <= 0:
            raise InvalidArgumentError("stimulus duration must be positive")
        if self.radius <= 0:
            raise InvalidArgumentError("stimulus radius must be positive")

    def nodal_values(self, grid: StructuredGrid) -> np.ndarray:
        center = np.asarray(self.center, dtype=float)
        if center.shape != (grid.node_coords.shape[1],):
            raise InvalidArgumentError("stimulus center dimension does not match grid")
        dist = np.linalg.norm(grid.node_coords - center, axis=1)
        return np.where(dist <= self.radius, self.amplitude, 0.0)

    def active(self, t: float) -> bool:
        return self.onset <= t < self.onset + self.duration


def cg_solve(
    a_sys: sparse.csr_matrix,
    b: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 10000,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Terminates when ||A x - b||_2 <= tol * ||b||_2; raises on max_iter with
    the final relative residual in the message.
    """
    if not (0.0 < tol < 1.0):
        raise InvalidArgumentError("cg tolerance must lie in (0, 1)")
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b)
    inv_diag = 1.0 / a_sys.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.astype(float).copy()
    r = b - a_sys @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol * norm_b:
            return x
        ap = a_sys @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(a_sys @ x - b) / norm_b
    if res <= tol:
        return x
    raise NumericFailureError(
        f"cg failed to converge in {max_iter} iterations (relative residual {res:.3e})"
    )


@dataclass
class MonodomainProblem:
    """Assembled operators plus membrane kinetics for one tissue setup."""

    grid: StructuredGrid
    ionic: object
    params: IonicParamField
    mass: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    chi: float = 1000.0
    cm: float = 1.0
    _systems: dict = field(default_factory=dict, repr=False)

    def system_matrix(self, dt: float) -> sparse.csr_matrix:
        """(chi C_m / dt) M + A, cached per dt."""
        key = float(dt)
        if key not in self._systems:
            self._systems[key] = ((self.chi * self.cm / dt) * self.mass + self.stiffness).tocsr()
        return self._systems[key]

    def initial_state(self) -> SimState:
        v0, w0, c0 = self.ionic.resting_state(self.params.values)
        return SimState(0.0, v0, w0, c0)


def make_problem(
    grid: StructuredGrid,
    tissue_tensors: ConductivityTensorField,
    ionic,
    params: IonicParamField,
    chi: float = 1000.0,
    cm: float = 1.0,
) -> MonodomainProblem:
    mass = assemble_mass(grid)
    stiffness = assemble_stiffness(grid, tissue_tensors)
    return MonodomainProblem(grid, ionic, params, mass, stiffness, chi, cm)


def imex_step(
    state: SimState,
    problem: MonodomainProblem,
    dt: float,
    stim_values: np.ndarray | None = None,
    cg_tol: float = 1e-8,
) -> SimState:
    """Advance the state by one implicit-explicit step of size dt."""
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    w1, c1 = implicit_reaction_step(
        problem.ionic, state.v, state.w, state.c, dt, problem.params.values
    )
    i_ion = problem.ionic.current(state.v, w1, c1, problem.params.values)
    scale = problem.chi * problem.cm / dt
    rhs = scale * (problem.mass @ state.v) - problem.mass @ i_ion
    if stim_values is not None:
        rhs = rhs + problem.mass @ stim_values
    v1 = cg_solve(problem.system_matrix(dt), rhs, tol=cg_tol, x0=state.v)
    return SimState(state.t + dt, v1, w1, c1)


@dataclass
class Trajectory:
    """Saved transmembrane-potential snapshots."""

    times: np.ndarray  # (n_snapshots,)
    v: np.ndarray  # (n_snapshots, n_nodes)


def run_simulation(
    problem: MonodomainProblem,
    stimulus: StimulusProtocol | None,
    dt: float,
    t_end: float,
    save_every: int = 1,
    cg_tol: float = 1e-8,
    on_snapshot=None,
    record: bool = True,
    initial_state: SimState | None = None,
) -> Trajectory:
    """Integrate from rest (or ``initial_state``) to ``t_end``.

    Snapshots are taken at step indices 0, save_every, 2*save_every, ...;
    ``on_snapshot(t, v)`` lets observers (e.g. lead-signal accumulation)
    consume them streamingly, and ``record=False`` suppresses in-memory
    storage for long runs.
    """
    if save_every < 1:
        raise InvalidArgumentError("save_every must be >= 1")
    if dt <= 0 or t_end < 0:
        raise InvalidArgumentError("dt must be positive and t_end non-negative")
    state = problem.initial_state() if initial_state is None else initial_state
    stim_values = stimulus.nodal_values(problem.grid) if stimulus is not None else None

    n_steps = int(round(t_end / dt))
    times, snaps = [], []

    def take(st: SimState):
        if on_snapshot is not None:
            on_snapshot(st.t, st.v)
        if record:
            times.append(st.t)
            snaps.append(st.v.copy())

    take(state)
    for n in range(n_steps):
        active = stimulus is not None and stimulus.active(state.t)
        try:
            state = imex_step(
                state, problem, dt, stim_values if active else None, cg_tol=cg_tol
            )
        except NumericFailureError as exc:
            raise NumericFailureError(f"step {n + 1} (t={state.t:.6g} ms): {exc}") from exc
        if (n + 1) % save_every == 0:
            take(state)

    if record:
        return Trajectory(np.array(times), np.array(snaps))
    return Trajectory(np.array([state.t]), state.v[None, :])


def activation_times(traj: Trajectory, threshold: float) -> np.ndarray:
    """First snapshot time at which each node crosses ``threshold`` upward.

    Nodes that never activate get +inf. Resolution is the snapshot cadence.
    """
    above = traj.v >= threshold
    first = np.argmax(above, axis=0)
    never = ~above.any(axis=0)
    out = traj.times[first].astype(float)
    out[never] = np.inf
    return out


