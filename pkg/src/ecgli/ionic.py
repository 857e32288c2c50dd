"""Pointwise membrane kinetics with per-node parameter fields.

The shipped model is a two-variable phenomenological description of cardiac
excitation (cubic fast inward current plus one slow recovery gate), with an
affine map between the normalized action potential u in [0, 1] and the
transmembrane potential in mV:

    v = v_rest + v_amp * u
    du/dt = ( k u (u - a)(1 - u) - u w ) / tau
    dw/dt = ( eps0 + mu1 w / (u + mu2) ) ( -w - k u (u - a - 1) ) / tau

Tissue heterogeneity (ischemic inclusions) is expressed by overriding
parameters inside a ball: reduced excitability k and an elevated resting
potential, which reproduces the slow-conduction and injury-current
signatures of ischemic tissue without a detailed ionic model.

All functions are pure per-node maps over numpy arrays; a parameter field
is simply an (n_nodes, n_params) matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .fem import StructuredGrid


class AlievPanfilovModel:
    """Two-variable excitable membrane model in physical (mV, ms) units.

    ``chi_cm`` is the product of surface-to-volume ratio and membrane
    capacitance; it scales the ionic current so that the tissue equation
    chi*C_m dv/dt = div(D grad v) - I_ion + I_app reproduces the
    normalized kinetics above.
    """

    PARAM_NAMES = (
        "excitability",  # k
        "threshold",  # a
        "recovery_rate",  # eps0
        "recovery_mu1",
        "recovery_mu2",
        "v_rest",  # mV
        "v_amp",  # mV
        "time_scale",  # ms per normalized time unit
    )

    # Loose physiological envelopes used to reject nonsensical overrides.
    PARAM_BOUNDS = {
        "excitability": (0.0, 100.0),
        "threshold": (0.0, 0.9),
        "recovery_rate": (0.0, 1.0),
        "recovery_mu1": (0.0, 10.0),
        "recovery_mu2": (1e-3, 10.0),
        "v_rest": (-120.0, 0.0),
        "v_amp": (1.0, 300.0),
        "time_scale": (1e-3, 1e3),
    }

    s_w = 1
    s_c = 0

    def __init__(
        self,
        chi_cm: float = 1000.0,
        excitability: float = 8.0,
        threshold: float = 0.15,
        recovery_rate: float = 0.002,
        recovery_mu1: float = 0.2,
        recovery_mu2: float = 0.3,
        v_rest: float = -85.0,
        v_amp: float = 100.0,
        time_scale: float = 12.9,
    ):
        self.chi_cm = float(chi_cm)
        self.baseline = np.array(
            [
                excitability,
                threshold,
                recovery_rate,
                recovery_mu1,
                recovery_mu2,
                v_rest,
                v_amp,
                time_scale,
            ],
            dtype=float,
        )

    # -- state helpers ----------------------------------------------------

    def resting_state(self, params: np.ndarray):
        """(v0, w0, c0) fixed point for a parameter matrix (n, n_params)."""
        params = np.atleast_2d(params)
        n = params.shape[0]
        v0 = params[:, 5].copy()
        return v0, np.zeros((n, self.s_w)), np.zeros((n, self.s_c))

    def _u(self, v, params):
        return (v - params[..., 5]) / params[..., 6]

    # -- right-hand sides ---------------------------------------------------

    def current(self, v, w, c, params):
        """Ionic current I_ion in the tissue equation's units."""
        params = np.atleast_2d(params)
        u = self._u(v, params)
        k, a = params[:, 0], params[:, 1]
        f = k * u * (u - a) * (1.0 - u) - u * w[:, 0]
        return -self.chi_cm * params[:, 6] / params[:, 7] * f

    def gating_rhs(self, v, w, params):
        params = np.atleast_2d(params)
        u = self._u(v, params)
        k, a = params[:, 0], params[:, 1]
        eps = params[:, 2] + params[:, 3] * w[:, 0] / (u + params[:, 4])
        r = eps * (-w[:, 0] - k * u * (u - a - 1.0)) / params[:, 7]
        return r[:, None]

    def gating_rhs_dw(self, v, w, params):
        """Diagonal derivative of ``gating_rhs`` with respect to w."""
        params = np.atleast_2d(params)
        u = self._u(v, params)
        k, a = params[:, 0], params[:, 1]
        eps = params[:, 2] + params[:, 3] * w[:, 0] / (u + params[:, 4])
        deps = params[:, 3] / (u + params[:, 4])
        g = -w[:, 0] - k * u * (u - a - 1.0)
        d = (deps * g - eps) / params[:, 7]
        return d[:, None]

    def conc_rhs(self, v, w, c, params):
        return np.zeros_like(c)

    def conc_rhs_dc(self, v, w, c, params):
        return np.zeros_like(c)

    # v bounds documented for the normalized potential u in [-0.05, 1.05].
    def potential_bounds(self, params):
        params = np.atleast_2d(params)
        lo = params[:, 5] - 0.05 * params[:, 6]
        hi = params[:, 5] + 1.05 * params[:, 6]
        return lo, hi


@dataclass(frozen=True)
class IonicParamField:
    """Per-node parameter matrix for an ionic model."""

    model: AlievPanfilovModel
    values: np.ndarray  # (n_nodes, n_params)

    def __post_init__(self):
        names = self.model.PARAM_NAMES
        if self.values.ndim != 2 or self.values.shape[1] != len(names):
            raise InvalidArgumentError(
                f"parameter field must have shape (n_nodes, {len(names)})"
            )

    def param_index(self, name: str) -> int:
        try:
            return self.model.PARAM_NAMES.index(name)
        except ValueError:
            raise InvalidArgumentError(f"unknown ionic parameter {name!r}") from None


def baseline_field(model: AlievPanfilovModel, n_nodes: int) -> IonicParamField:
    values = np.tile(model.baseline, (n_nodes, 1))
    return IonicParamField(model, values)


# Override keys accepted by apply_ischemia and how each acts on the baseline.
ISCHEMIA_OVERRIDES = {
    "excitability_scale": ("excitability", "scale"),
    "rest_shift": ("v_rest", "shift"),
}


@dataclass(frozen=True)
class IschemiaRegion:
    """Ball of altered membrane parameters: center (cm), radius (cm)."""

    center: tuple
    radius: float
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidArgumentError("ischemia radius must be positive")
        for key in self.overrides:
            if key not in ISCHEMIA_OVERRIDES:
                raise InvalidArgumentError(
                    f"unknown ischemia override {key!r}; known keys: "
                    f"{sorted(ISCHEMIA_OVERRIDES)}"
                )


def apply_ischemia(
    field_in: IonicParamField,
    region: IschemiaRegion,
    grid: StructuredGrid,
    smooth_width: float = 0.0,
) -> IonicParamField:
    """Override parameters on nodes inside the closed ball of the region.

    Overridden values are computed from the model baseline, so applying the
    same region twice is idempotent. ``smooth_width`` > 0 blends linearly
    across a shell of that width around the boundary.
    """
    center = np.asarray(region.center, dtype=float)
    if center.shape != (grid.node_coords.shape[1],):
        raise InvalidArgumentError("region center dimension does not match grid")
    lo, hi = grid.bounding_box()
    if np.any(center < lo) or np.any(center > hi):
        raise InvalidArgumentError("region center lies outside the domain bounding box")

    dist = np.linalg.norm(grid.node_coords - center, axis=1)
    if smooth_width > 0:
        blend = np.clip((region.radius + 0.5 * smooth_width - dist) / smooth_width, 0.0, 1.0)
    else:
        blend = (dist <= region.radius).astype(float)

    model = field_in.model
    values = field_in.values.copy()
    for key, amount in region.overrides.items():
        pname, mode = ISCHEMIA_OVERRIDES[key]
        idx = field_in.param_index(pname)
        base = model.baseline[idx]
        target = base * amount if mode == "scale" else base + amount
        lo_b, hi_b = model.PARAM_BOUNDS[pname]
        if not (lo_b <= target <= hi_b):
            raise InvalidArgumentError(
                f"override {key}={amount} drives {pname} to {target}, outside "
                f"[{lo_b}, {hi_b}]"
            )
        values[:, idx] = field_in.values[:, idx] * (1.0 - blend) + target * blend
    return replace(field_in, values=values)


def ionic_rhs(model, v, w, c, params):
    """(I_ion, dw/dt, dc/dt) for nodal state arrays.

    Raises on non-finite inputs; the right-hand sides themselves are pure.
    """
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w)) and np.all(np.isfinite(c))):
        raise NumericFailureError("non-finite state passed to ionic right-hand side")
    params = np.atleast_2d(params)
    i_ion = model.current(v, w, c, params)
    dw = model.gating_rhs(v, w, params)
    dc = model.conc_rhs(v, w, c, params)
    return i_ion, dw, dc


def _newton_columns(value0, rhs, drhs, dt, tol, max_iter, max_halvings, what):
    """Damped Newton for x = x0 + dt*rhs(x), one scalar equation per entry."""
    x = value0.copy()
    g = x - value0 - dt * rhs(x)
    for _ in range(max_iter):
        bad = np.abs(g) > tol
        if not bad.any():
            return x
        jac = 1.0 - dt * drhs(x)
        jac = np.where(np.abs(jac) < 1e-14, np.copysign(1e-14, jac), jac)
        step = np.where(bad, -g / jac, 0.0)
        scale = np.ones_like(step)
        for _ in range(max_halvings):
            x_try = x + scale * step
            g_try = x_try - value0 - dt * rhs(x_try)
            worse = bad & (np.abs(g_try) > np.abs(g))
            if not worse.any():
                break
            scale = np.where(worse, 0.5 * scale, scale)
        x = x + scale * step
        g = x - value0 - dt * rhs(x)
    bad = np.abs(g) > tol
    if bad.any():
        node = int(np.argmax(np.abs(g).max(axis=tuple(range(1, g.ndim)))))
        raise NumericFailureError(
            f"implicit {what} update failed to converge at node {node} "
            f"(residual {np.abs(g).max():.3e})"
        )
    return x


def implicit_reaction_step(
    model,
    v_n: np.ndarray,
    w_n: np.ndarray,
    c_n: np.ndarray,
    dt: float,
    params: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50,
    max_halvings: int = 5,
):
    """Backward-Euler update of the gating and concentration variables.

    Solves w = w_n + dt*R(v_n, w) and then c = c_n + dt*C(v_n, w, c)
    per node with a damped Newton iteration (step halved on residual
    increase). Gating components are treated independently, which is exact
    for diagonal gating Jacobians.
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    params = np.atleast_2d(params)
    w1 = _newton_columns(
        w_n,
        lambda w: model.gating_rhs(v_n, w, params),
        lambda w: model.gating_rhs_dw(v_n, w, params),
        dt,
        tol,
        max_iter,
        max_halvings,
        "gating",
    )
    if c_n.shape[1] == 0:
        return w1, c_n.copy()
    c1 = _newton_columns(
        c_n,
        lambda c: model.conc_rhs(v_n, w1, c, params),
        lambda c: model.conc_rhs_dc(v_n, w1, c, params),
        dt,
        tol,
        max_iter,
        max_halvings,
        "concentration",
    )
    return w1, c1
