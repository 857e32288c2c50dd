"""Structured Q1 meshes and finite-element operators for anisotropic diffusion.

Two geometries are supported: an axis-aligned rectangle meshed with uniform
quadrilaterals, and a hollow ellipsoidal shell meshed with hexahedra through
a curvilinear (phi, theta, r) lattice,

    x = a(r) cos(theta) cos(phi)
    y = b(r) cos(theta) sin(phi)
    z = c(r) sin(theta)

with a(r), b(r), c(r) interpolating linearly between inner and outer
semi-axes. Mass and stiffness matrices use tensor-product Gauss quadrature
(2 points per axis) on the reference element with the standard isoparametric
mapping, so curved shell elements are handled identically to affine quads.
Conductivity is transversely isotropic,

    D = sigma_t I + (sigma_l - sigma_t) a_l a_l^T,

held constant per element (evaluated at the centroid), and the effective
tissue tensor combines intra- and extracellular tensors harmonically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from . import binio
from .errors import InvalidArgumentError, NumericFailureError

# Curvilinear ranges of the default shell geometry.
DEFAULT_THETA_RANGE = (-3.0 * math.pi / 8.0, math.pi / 8.0)
DEFAULT_PHI_RANGE = (-3.0 * math.pi / 2.0, math.pi / 2.0)


@dataclass(frozen=True)
class EllipsoidBounds:
    """Inner/outer semi-axes (cm) of the shell; linear interpolation in r."""

    a: tuple[float, float] = (2.2, 3.3)
    b: tuple[float, float] = (2.2, 3.3)
    c: tuple[float, float] = (5.9, 6.4)

    def semi_axes(self, r):
        r = np.asarray(r, dtype=float)
        a = self.a[0] + (self.a[1] - self.a[0]) * r
        b = self.b[0] + (self.b[1] - self.b[0]) * r
        c = self.c[0] + (self.c[1] - self.c[0]) * r
        return a, b, c


@dataclass(frozen=True)
class CurvilinearParams:
    """The (phi, theta, r) sample vectors behind a shell grid."""

    phi: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    bounds: EllipsoidBounds
    legacy_z: bool = False


@dataclass(frozen=True)
class StructuredGrid:
    """Structured Q1 mesh: node coordinates plus element connectivity.

    ``n_elems`` counts elements per axis; connectivity rows list 4 (quad)
    or 8 (hex) node ids in reference-corner order.
    """

    dim: int
    n_elems: tuple[int, ...]
    node_coords: np.ndarray
    elem_connectivity: np.ndarray
    curvilinear_params: CurvilinearParams | None = None

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elem_connectivity.shape[0]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_coords.min(axis=0), self.node_coords.max(axis=0)

    def element_centroids(self) -> np.ndarray:
        return self.node_coords[self.elem_connectivity].mean(axis=1)


def build_rect_grid(nx: int, ny: int, lx: float, ly: float) -> StructuredGrid:
    """Uniform quad mesh of the rectangle [0, lx] x [0, ly]."""
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"element counts must be >= 1, got ({nx}, {ny})")
    if lx <= 0 or ly <= 0:
        raise InvalidArgumentError(f"side lengths must be positive, got ({lx}, {ly})")
    x = np.linspace(0.0, lx, nx + 1)
    y = np.linspace(0.0, ly, ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    i = np.arange(nx)
    j = np.arange(ny)
    ii, jj = np.meshgrid(i, j, indexing="xy")
    n00 = jj * (nx + 1) + ii
    conn = np.stack(
        [n00, n00 + 1, n00 + 1 + (nx + 1), n00 + (nx + 1)], axis=-1
    ).reshape(-1, 4)
    return StructuredGrid(2, (nx, ny), coords, conn.astype(np.int32))


def ellipsoid_map(
    r,
    theta,
    phi,
    bounds: EllipsoidBounds = EllipsoidBounds(),
    legacy_z: bool = False,
) -> np.ndarray:
    """Map curvilinear (r, theta, phi) to cartesian shell coordinates.

    ``legacy_z=True`` uses z = c(r) sin(phi) instead of c(r) sin(theta);
    that variant collapses the elevation dependence and is kept only for
    comparison purposes.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(r < -1e-12) or np.any(r > 1 + 1e-12):
        raise InvalidArgumentError("radial coordinate r must lie in [0, 1]")
    a, b, c = bounds.semi_axes(np.clip(r, 0.0, 1.0))
    x = a * np.cos(theta) * np.cos(phi)
    y = b * np.cos(theta) * np.sin(phi)
    z = c * (np.sin(phi) if legacy_z else np.sin(theta))
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def build_ellipsoid_grid(
    ni: int,
    nj: int,
    nk: int,
    bounds: EllipsoidBounds = EllipsoidBounds(),
    theta_range: tuple[float, float] = DEFAULT_THETA_RANGE,
    phi_range: tuple[float, float] = DEFAULT_PHI_RANGE,
    legacy_z: bool = False,
) -> StructuredGrid:
    """Hexahedral shell mesh on the uniform (phi, theta, r) lattice.

    ``ni`` counts elements along phi, ``nj`` along theta, ``nk`` along r.
    """
    if ni < 1 or nj < 1 or nk < 1:
        raise InvalidArgumentError(f"element counts must be >= 1, got ({ni}, {nj}, {nk})")
    if theta_range[1] <= theta_range[0] or phi_range[1] <= phi_range[0]:
        raise InvalidArgumentError("angle ranges must be non-degenerate (max > min)")

    phi = np.linspace(phi_range[0], phi_range[1], ni + 1)
    theta = np.linspace(theta_range[0], theta_range[1], nj + 1)
    r = np.linspace(0.0, 1.0, nk + 1)
    # Node id layout: fastest index phi, then theta, then r.
    R, T, P = np.meshgrid(r, theta, phi, indexing="ij")
    coords = ellipsoid_map(R.ravel(), T.ravel(), P.ravel(), bounds, legacy_z)

    npx, npy = ni + 1, nj + 1

    def nid(i, j, k):
        return (k * npy + j) * npx + i

    i = np.arange(ni)
    j = np.arange(nj)
    k = np.arange(nk)
    kk, jj, ii = np.meshgrid(k, j, i, indexing="ij")
    conn = np.stack(
        [
            nid(ii, jj, kk),
            nid(ii + 1, jj, kk),
            nid(ii + 1, jj + 1, kk),
            nid(ii, jj + 1, kk),
            nid(ii, jj, kk + 1),
            nid(ii + 1, jj, kk + 1),
            nid(ii + 1, jj + 1, kk + 1),
            nid(ii, jj + 1, kk + 1),
        ],
        axis=-1,
    ).reshape(-1, 8)
    params = CurvilinearParams(phi, theta, r, bounds, legacy_z)
    return StructuredGrid(3, (ni, nj, nk), coords, conn.astype(np.int32), params)


# ---------------------------------------------------------------------------
# Conductivity tensors
# ---------------------------------------------------------------------------


def transverse_iso_tensor(sigma_l: float, sigma_t: float, fiber) -> np.ndarray:
    """sigma_t I + (sigma_l - sigma_t) a a^T for a unit fiber direction a."""
    fiber = np.asarray(fiber, dtype=float)
    if sigma_l <= 0 or sigma_t <= 0:
        raise InvalidArgumentError("conductivities must be positive")
    if abs(np.dot(fiber, fiber) - 1.0) > 1e-12:
        raise InvalidArgumentError("fiber direction must be a unit vector")
    dim = fiber.shape[0]
    return sigma_t * np.eye(dim) + (sigma_l - sigma_t) * np.outer(fiber, fiber)


def monodomain_tensor(di: np.ndarray, de: np.ndarray) -> np.ndarray:
    """Harmonic combination D_i (D_i + D_e)^{-1} D_e of two SPD tensors."""
    di = np.asarray(di, dtype=float)
    de = np.asarray(de, dtype=float)
    try:
        dm = di @ np.linalg.solve(di + de, de)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"singular tensor sum in harmonic combination: {exc}") from exc
    if not np.all(np.isfinite(dm)):
        raise NumericFailureError("non-finite harmonic tensor combination")
    return 0.5 * (dm + dm.T)


@dataclass(frozen=True)
class ConductivityTensorField:
    """One symmetric positive-definite tensor and fiber direction per element."""

    tensors: np.ndarray  # (n_elems, dim, dim)
    fibers: np.ndarray  # (n_elems, dim)

    def __post_init__(self):
        if self.tensors.ndim != 3 or self.tensors.shape[1] != self.tensors.shape[2]:
            raise InvalidArgumentError("tensor field must have shape (n_elems, dim, dim)")


def fiber_field(grid: StructuredGrid, kind: str = "default") -> np.ndarray:
    """Per-element unit fiber directions.

    2d grids default to the x axis. Shell grids default to the azimuthal
    (phi) tangent direction evaluated at the element centroid of the
    curvilinear lattice, the usual circumferential idealization.
    """
    n = grid.n_elements
    if grid.dim == 2:
        if kind in ("default", "x"):
            f = np.tile([1.0, 0.0], (n, 1))
        elif kind == "y":
            f = np.tile([0.0, 1.0], (n, 1))
        else:
            raise InvalidArgumentError(f"unknown 2d fiber kind {kind!r}")
        return f
    if kind not in ("default", "circumferential"):
        raise InvalidArgumentError(f"unknown 3d fiber kind {kind!r}")
    params = grid.curvilinear_params
    if params is None:
        raise InvalidArgumentError("3d fiber field requires curvilinear grid metadata")
    ni, nj, nk = grid.n_elems
    phic = 0.5 * (params.phi[:-1] + params.phi[1:])
    thc = 0.5 * (params.theta[:-1] + params.theta[1:])
    rc = 0.5 * (params.r[:-1] + params.r[1:])
    R, T, P = np.meshgrid(rc, thc, phic, indexing="ij")
    a, b, _ = params.bounds.semi_axes(R.ravel())
    # d/dphi of the shell map; z component vanishes for the standard map.
    tx = -a * np.cos(T.ravel()) * np.sin(P.ravel())
    ty = b * np.cos(T.ravel()) * np.cos(P.ravel())
    tz = np.zeros_like(tx)
    if params.legacy_z:
        _, _, c = params.bounds.semi_axes(R.ravel())
        tz = c * np.cos(P.ravel())
    f = np.column_stack([tx, ty, tz])
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    return f / norms


def build_tensor_field(
    grid: StructuredGrid, sigma_l: float, sigma_t: float, fibers: np.ndarray | None = None
) -> ConductivityTensorField:
    """Transversely isotropic tensor field, constant per element."""
    if fibers is None:
        fibers = fiber_field(grid)
    fibers = np.asarray(fibers, dtype=float)
    if fibers.shape != (grid.n_elements, grid.dim):
        raise InvalidArgumentError("fiber array must have shape (n_elems, dim)")
    if sigma_l <= 0 or sigma_t <= 0:
        raise InvalidArgumentError("conductivities must be positive")
    eye = np.eye(grid.dim)
    tensors = sigma_t * eye[None, :, :] + (sigma_l - sigma_t) * np.einsum(
        "ei,ej->eij", fibers, fibers
    )
    return ConductivityTensorField(tensors, fibers)


def monodomain_field(
    intra: ConductivityTensorField, extra: ConductivityTensorField
) -> ConductivityTensorField:
    """Element-wise harmonic combination of intra- and extracellular fields."""
    if intra.tensors.shape != extra.tensors.shape:
        raise InvalidArgumentError("tensor fields must match in shape")
    s = intra.tensors + extra.tensors
    try:
        dm = intra.tensors @ np.linalg.solve(s, extra.tensors)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"singular tensor sum in harmonic combination: {exc}") from exc
    dm = 0.5 * (dm + dm.transpose(0, 2, 1))
    return ConductivityTensorField(dm, intra.fibers)


# ---------------------------------------------------------------------------
# Quadrature and assembly
# ---------------------------------------------------------------------------


def _gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def reference_quadrature(dim: int, n_points: int = 2):
    """Tensor-product Gauss rule plus Q1 shape values/gradients at its nodes.

    Returns (weights (g,), N (g, nn), dN (g, nn, dim)).
    """
    pts1, wts1 = _gauss_1d(n_points)
    axes = np.meshgrid(*([pts1] * dim), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=-1)  # (g, dim)
    waxes = np.meshgrid(*([wts1] * dim), indexing="ij")
    wts = np.prod(np.stack([w.ravel() for w in waxes], axis=-1), axis=-1)

    if dim == 2:
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    else:
        corners = np.array(
            [
                [-1, -1, -1],
                [1, -1, -1],
                [1, 1, -1],
                [-1, 1, -1],
                [-1, -1, 1],
                [1, -1, 1],
                [1, 1, 1],
                [-1, 1, 1],
            ],
            dtype=float,
        )
    nn = corners.shape[0]
    g = pts.shape[0]
    N = np.ones((g, nn))
    dN = np.zeros((g, nn, dim))
    for d in range(dim):
        N *= 0.5 * (1.0 + corners[None, :, d] * pts[:, None, d])
    for d in range(dim):
        term = 0.5 * corners[None, :, d] * np.ones((g, nn))
        for e in range(dim):
            if e != d:
                term = term * 0.5 * (1.0 + corners[None, :, e] * pts[:, None, e])
        dN[:, :, d] = term
    return wts, N, dN


def _element_geometry(grid: StructuredGrid, n_quad: int = 2):
    """Jacobian data at quadrature points for every element."""
    wts, N, dN = reference_quadrature(grid.dim, n_quad)
    coords = grid.node_coords[grid.elem_connectivity]  # (E, nn, dim)
    jac = np.einsum("ena,gnb->egab", coords, dN)  # (E, g, dim, dim)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise NumericFailureError("non-positive Jacobian determinant in mesh")
    jinv = np.linalg.inv(jac)
    grad = np.einsum("gnb,egba->egna", dN, jinv)  # physical shape gradients
    return wts, N, grad, det


def _assemble(grid: StructuredGrid, elem_mats: np.ndarray) -> sparse.csr_matrix:
    conn = grid.elem_connectivity
    nn = conn.shape[1]
    rows = np.repeat(conn, nn, axis=1).ravel()
    cols = np.tile(conn, (1, nn)).ravel()
    mat = sparse.coo_matrix(
        (elem_mats.ravel(), (rows, cols)), shape=(grid.n_nodes, grid.n_nodes)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_mass(grid: StructuredGrid, lumped: bool = False, n_quad: int = 2) -> sparse.csr_matrix:
    """Consistent (default) or row-sum lumped finite element mass matrix."""
    wts, N, _, det = _element_geometry(grid, n_quad)
    me = np.einsum("g,eg,gn,gm->enm", wts, det, N, N)
    mat = _assemble(grid, me)
    if lumped:
        diag = np.asarray(mat.sum(axis=1)).ravel()
        mat = sparse.diags(diag, format="csr")
    return mat


def assemble_stiffness(grid: StructuredGrid, field: ConductivityTensorField, n_quad: int = 2) -> sparse.csr_matrix:
    """Stiffness matrix for the anisotropic diffusion operator -div(D grad).

    Natural zero-flux boundary conditions; constant vectors lie in the
    kernel, so every row sums to zero.
    """
    if field.tensors.shape[0] != grid.n_elements:
        raise InvalidArgumentError(
            f"tensor field has {field.tensors.shape[0]} entries for "
            f"{grid.n_elements} elements"
        )
    wts, _, grad, det = _element_geometry(grid, n_quad)
    flux = np.einsum("egna,eab->egnb", grad, field.tensors)
    ke = np.einsum("g,eg,egnb,egmb->enm", wts, det, flux, grad)
    ke = 0.5 * (ke + ke.transpose(0, 2, 1))
    return _assemble(grid, ke)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_grid(grid: StructuredGrid, path: str | Path) -> None:
    arrays = {
        "dim": np.array([grid.dim], dtype=np.int32),
        "n_elems": np.array(grid.n_elems, dtype=np.int32),
        "node_coords": grid.node_coords,
        "elem_connectivity": grid.elem_connectivity.astype(np.int32),
    }
    if grid.curvilinear_params is not None:
        p = grid.curvilinear_params
        arrays["curv_phi"] = p.phi
        arrays["curv_theta"] = p.theta
        arrays["curv_r"] = p.r
        arrays["curv_bounds"] = np.array(list(p.bounds.a) + list(p.bounds.b) + list(p.bounds.c))
        arrays["curv_legacy_z"] = np.array([int(p.legacy_z)], dtype=np.int32)
    binio.write_arrays(path, "grid", arrays)


def load_grid(path: str | Path) -> StructuredGrid:
    arr = binio.read_arrays(path, expect_kind="grid")
    params = None
    if "curv_phi" in arr:
        bv = arr["curv_bounds"]
        bounds = EllipsoidBounds((bv[0], bv[1]), (bv[2], bv[3]), (bv[4], bv[5]))
        params = CurvilinearParams(
            arr["curv_phi"], arr["curv_theta"], arr["curv_r"], bounds,
            bool(arr["curv_legacy_z"][0]),
        )
    return StructuredGrid(
        int(arr["dim"][0]),
        tuple(int(v) for v in arr["n_elems"]),
        arr["node_coords"],
        arr["elem_connectivity"],
        params,
    )


def save_matrix(mat: sparse.csr_matrix, path: str | Path) -> None:
    binio.write_arrays(
        path,
        "matrix",
        {
            "shape": np.array(mat.shape, dtype=np.int64),
            "indptr": mat.indptr.astype(np.int64),
            "indices": mat.indices.astype(np.int32),
            "data": mat.data.astype(np.float64),
        },
    )


def load_matrix(path: str | Path) -> sparse.csr_matrix:
    arr = binio.read_arrays(path, expect_kind="matrix")
    return sparse.csr_matrix(
        (arr["data"], arr["indices"], arr["indptr"]),
        shape=tuple(int(v) for v in arr["shape"]),
    )
