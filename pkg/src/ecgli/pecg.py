"""Lead potentials as linear functionals of the transmembrane potential.

Under the infinite-volume-conductor approximation with bath conductivity
sigma_b, the potential recorded at an extracardiac point x is

    pECG(x, t) = -1/(4 pi sigma_b) * integral_Omega
                 D_i(y) grad v(y, t) . grad_y (1 / |x - y|) dy.

Because the integral is linear in v, each lead reduces to a fixed nodal
weight vector z with pECG(t) = z . v(t); z is assembled once per
(grid, lead) by element-wise Gauss quadrature and then reused across all
time steps and simulations. 2d tissue is embedded in 3d at z = 0 with unit
thickness, leads sitting at a configurable height above the plane.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .fem import ConductivityTensorField, StructuredGrid, reference_quadrature
from .solver import Trajectory


@dataclass(frozen=True)
class LeadSet:
    """Measurement locations (cm, in R^3) outside the tissue volume."""

    positions: np.ndarray  # (n_leads, 3)
    sigma_b: float = 1.0

    def __post_init__(self):
        if self.sigma_b <= 0:
            raise InvalidArgumentError("bath conductivity must be positive")
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidArgumentError("lead positions must have shape (n_leads, 3)")

    @property
    def n_leads(self) -> int:
        return self.positions.shape[0]


def line_leads(n: int, lx: float, ly: float, height: float = 2.0, sigma_b: float = 1.0) -> LeadSet:
    """Uniform line of leads above the long axis of a 2d rectangle."""
    x = np.linspace(0.0, lx, n)
    pos = np.column_stack([x, np.full(n, 0.5 * ly), np.full(n, height)])
    return LeadSet(pos, sigma_b)


def sphere_leads(n: int, radius: float, sigma_b: float = 1.0) -> LeadSet:
    """Deterministic Fibonacci-spiral layout of n leads on a sphere."""
    i = np.arange(n)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    zc = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - zc * zc))
    ang = 2.0 * math.pi * i / golden
    pos = radius * np.column_stack([rho * np.cos(ang), rho * np.sin(ang), zc])
    return LeadSet(pos, sigma_b)


@dataclass
class PecgSignal:
    """Lead potentials over time: values[lead, sample]."""

    values: np.ndarray  # (n_leads, n_t)
    t0: float
    dt_signal: float
    lead_ids: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InvalidArgumentError("signal values must be a 2d (leads x time) array")
        if self.values.shape[1] < 2:
            raise InvalidArgumentError("a signal needs at least two time samples")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("signal contains non-finite values")
        if not self.lead_ids:
            self.lead_ids = tuple(f"lead_{i}" for i in range(self.values.shape[0]))

    @property
    def n_leads(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt_signal * np.arange(self.n_times)


def _embed3d(points: np.ndarray) -> np.ndarray:
    if points.shape[1] == 3:
        return points
    return np.column_stack([points, np.zeros(points.shape[0])])


def _bbox_distance(point: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    d = np.maximum(np.maximum(lo - point, 0.0), point - hi)
    return float(np.linalg.norm(d))


def lead_transfer_vector(
    grid: StructuredGrid,
    intra_field: ConductivityTensorField,
    lead: np.ndarray,
    sigma_b: float = 1.0,
    quad_points: int = 2,
) -> np.ndarray:
    """Nodal weight vector z with z . v = lead potential.

    The lead must lie strictly outside the tissue bounding volume, else the
    kernel 1/|x-y| is singular on the integration domain.
    """
    lead = np.asarray(lead, dtype=float)
    if lead.shape != (3,):
        raise InvalidArgumentError("lead position must be a 3-vector")
    coords3 = _embed3d(grid.node_coords)
    if _bbox_distance(lead, coords3.min(axis=0), coords3.max(axis=0)) <= 0.0:
        raise InvalidArgumentError(
            f"lead {lead.tolist()} lies inside or on the tissue bounding volume"
        )

    wts, N, dN = reference_quadrature(grid.dim, quad_points)
    coords = grid.node_coords[grid.elem_connectivity]  # (E, nn, dim)
    jac = np.einsum("ena,gnb->egab", coords, dN)
    det = np.linalg.det(jac)
    jinv = np.linalg.inv(jac)
    grad = np.einsum("gnb,egba->egna", dN, jinv)  # (E, g, nn, dim)
    flux = np.einsum("egna,eab->egnb", grad, intra_field.tensors)  # D_i grad(phi_n)

    gauss_pts = np.einsum("gn,ena->ega", N, coords)  # (E, g, dim)
    diff = lead[: grid.dim][None, None, :] - gauss_pts
    if grid.dim == 2:
        dz = lead[2]
        r2 = np.sum(diff * diff, axis=-1) + dz * dz
    else:
        r2 = np.sum(diff * diff, axis=-1)
    kernel = diff / (r2**1.5)[..., None]  # in-plane components of grad_y 1/|x-y|

    contrib = np.einsum("g,eg,egnb,egb->egn", wts, det, flux, kernel)
    contrib = -contrib.sum(axis=1) / (4.0 * math.pi * sigma_b)

    z = np.zeros(grid.n_nodes)
    np.add.at(z, grid.elem_connectivity.ravel(), contrib.ravel())
    return z


def transfer_matrix(
    grid: StructuredGrid,
    intra_field: ConductivityTensorField,
    leads: LeadSet,
    quad_points: int = 2,
) -> np.ndarray:
    """Stack of transfer vectors, one row per lead."""
    return np.stack(
        [
            lead_transfer_vector(grid, intra_field, pos, leads.sigma_b, quad_points)
            for pos in leads.positions
        ]
    )


def compute_pecg(traj: Trajectory, leads: LeadSet, transfer: np.ndarray) -> PecgSignal:
    """Apply precomputed transfer vectors to a saved trajectory."""
    if transfer.shape != (leads.n_leads, traj.v.shape[1]):
        raise InvalidArgumentError(
            f"transfer matrix shape {transfer.shape} does not match "
            f"{leads.n_leads} leads x {traj.v.shape[1]} nodes"
        )
    if len(traj.times) < 2:
        raise InvalidArgumentError("need at least two snapshots to form a signal")
    values = transfer @ traj.v.T
    dt_sig = float(traj.times[1] - traj.times[0])
    return PecgSignal(values, float(traj.times[0]), dt_sig)


def write_csv(signal: PecgSignal, path: str | Path) -> None:
    """Interchange format: header ``t,lead_0,...``, one row per sample."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(signal.lead_ids))
        for j, t in enumerate(signal.times()):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in signal.values[:, j]])


def read_csv(path: str | Path) -> PecgSignal:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) < 3:
        raise InvalidArgumentError(f"{path}: need a header and at least two data rows")
    header = rows[0]
    if header[0] != "t":
        raise InvalidArgumentError(f"{path}: first column must be 't'")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    t = data[:, 0]
    values = data[:, 1:].T
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return PecgSignal(values, float(t[0]), dt, tuple(header[1:]))
