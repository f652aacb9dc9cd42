"""Manifold scenarios: charts, metrics, boundary frames, and collar utilities.

A scenario is a single global chart with a smooth metric field and a boundary
given as the zero level set of a signed function (positive inside). All
built-in metrics are conformal, ``g = exp(2*lam) * I``, which gives the
integrator a cheap closed-form path; the general tensor interface is kept so
non-conformal metrics plug in unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateBoundary,
    InvalidCollar,
    NoCollar,
    NonSPDMetric,
    OutOfChart,
)

TWO_PI = 2.0 * math.pi

# Exterior overshoot allowed when evaluating metric quantities near psi = 0.
BOUNDARY_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class ManifoldScenario:
    """A 2-D Riemannian manifold with boundary in one global chart.

    ``metric`` maps chart points (shape (..., 2)) to SPD matrices
    (..., 2, 2); ``metric_derivs`` returns the coordinate derivatives with
    index order [..., k, i, j] = d_k g_ij.  ``boundary_fn`` is the signed
    level function (positive inside), ``boundary_param`` maps u in
    [0, boundary_period) onto the boundary curve.  ``conformal``, when set,
    is a (lam, grad_lam) pair with g = exp(2 lam) I; the integrator uses it
    as a fast path.
    """

    name: str
    params: dict
    metric: Callable
    metric_derivs: Callable | None
    boundary_fn: Callable
    boundary_grad: Callable
    boundary_param: Callable
    boundary_tangent: Callable
    boundary_period: float
    boundary_inv: Callable
    chart_bound: np.ndarray
    conformal: tuple[Callable, Callable] | None = None
    dim: int = 2

    def __repr__(self):  # params keep the repr reproducible in reports
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"ManifoldScenario({self.name}({inner}))"


@dataclass(frozen=True)
class BoundaryVector:
    """An inward-pointing unit vector at a boundary point.

    ``u`` is the boundary parameter, ``theta`` the angle from the inward
    normal (radians, |theta| <= pi/2), ``base_point`` and ``direction`` the
    cached chart data.  ``id`` indexes the vector within its fan.
    """

    id: int
    u: float
    theta: float
    base_point: np.ndarray
    direction: np.ndarray

    def __repr__(self):
        return f"BoundaryVector(id={self.id}, u={self.u:.6f}, theta={self.theta:.6f})"


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------


def _conformal_fields(lam, grad_lam):
    """Build (metric, metric_derivs) callables from a conformal exponent."""

    def metric(x):
        x = np.asarray(x, dtype=float)
        f = np.exp(2.0 * lam(x))
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = f
        g[..., 1, 1] = f
        return g

    def metric_derivs(x):
        x = np.asarray(x, dtype=float)
        f = np.exp(2.0 * lam(x))
        a = grad_lam(x)
        dg = np.zeros(x.shape[:-1] + (2, 2, 2))
        for k in range(2):
            dg[..., k, 0, 0] = 2.0 * a[..., k] * f
            dg[..., k, 1, 1] = 2.0 * a[..., k] * f
        return dg

    return metric, metric_derivs


def _circle_boundary(radius):
    def param(u):
        u = np.asarray(u, dtype=float)
        return radius * np.stack([np.cos(u), np.sin(u)], axis=-1)

    def tangent(u):
        u = np.asarray(u, dtype=float)
        return radius * np.stack([-np.sin(u), np.cos(u)], axis=-1)

    def inv(x):
        x = np.asarray(x, dtype=float)
        return np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)

    return param, tangent, inv


def _disk_level(radius):
    r2 = radius * radius

    def psi(x):
        x = np.asarray(x, dtype=float)
        return r2 - np.sum(x * x, axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return -2.0 * x

    return psi, grad


def _flat_disk(params):
    lam = lambda x: np.zeros(np.asarray(x).shape[:-1])
    grad_lam = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    metric, derivs = _conformal_fields(lam, grad_lam)
    psi, grad = _disk_level(1.0)
    param, tangent, inv = _circle_boundary(1.0)
    return ManifoldScenario(
        name="flat_disk",
        params={},
        metric=metric,
        metric_derivs=derivs,
        boundary_fn=psi,
        boundary_grad=grad,
        boundary_param=param,
        boundary_tangent=tangent,
        boundary_period=TWO_PI,
        boundary_inv=inv,
        chart_bound=np.array([[-1.5, 1.5], [-1.5, 1.5]]),
        conformal=(lam, grad_lam),
    )


def _sphere_cap(params):
    R = float(params.get("R", 1.0))
    if R <= 0:
        raise ValueError("sphere_cap requires R > 0")

    def lam(x):
        x = np.asarray(x, dtype=float)
        return math.log(2.0) - np.log1p(np.sum(x * x, axis=-1))

    def grad_lam(x):
        x = np.asarray(x, dtype=float)
        return -2.0 * x / (1.0 + np.sum(x * x, axis=-1))[..., None]

    metric, derivs = _conformal_fields(lam, grad_lam)
    psi, grad = _disk_level(R)
    param, tangent, inv = _circle_boundary(R)
    m = 1.5 * R
    return ManifoldScenario(
        name="sphere_cap",
        params={"R": R},
        metric=metric,
        metric_derivs=derivs,
        boundary_fn=psi,
        boundary_grad=grad,
        boundary_param=param,
        boundary_tangent=tangent,
        boundary_period=TWO_PI,
        boundary_inv=inv,
        chart_bound=np.array([[-m, m], [-m, m]]),
        conformal=(lam, grad_lam),
    )


def _perturbed_disk(params):
    amp = float(params.get("amp", 0.1))
    width = float(params.get("width", 0.32))

    def lam(x):
        x = np.asarray(x, dtype=float)
        return amp * np.exp(-np.sum(x * x, axis=-1) / width)

    def grad_lam(x):
        x = np.asarray(x, dtype=float)
        return lam(x)[..., None] * (-2.0 / width) * x

    metric, derivs = _conformal_fields(lam, grad_lam)
    psi, grad = _disk_level(1.0)
    param, tangent, inv = _circle_boundary(1.0)
    return ManifoldScenario(
        name="perturbed_disk",
        params={"amp": amp, "width": width},
        metric=metric,
        metric_derivs=derivs,
        boundary_fn=psi,
        boundary_grad=grad,
        boundary_param=param,
        boundary_tangent=tangent,
        boundary_period=TWO_PI,
        boundary_inv=inv,
        chart_bound=np.array([[-1.5, 1.5], [-1.5, 1.5]]),
        conformal=(lam, grad_lam),
    )


def _perturbed_cap(params):
    """Round-sphere chart times (1 + tilt*x0): breaks the antipodal symmetry."""
    R = float(params.get("R", 2.5))
    tilt = float(params.get("tilt", 0.05))
    if tilt * R >= 1.0:
        raise ValueError("perturbed_cap requires tilt * R < 1 for positivity")

    def lam(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return math.log(2.0) - np.log1p(r2) + 0.5 * np.log1p(tilt * x[..., 0])

    def grad_lam(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        a = -2.0 * x / (1.0 + r2)[..., None]
        a[..., 0] += 0.5 * tilt / (1.0 + tilt * x[..., 0])
        return a

    metric, derivs = _conformal_fields(lam, grad_lam)
    psi, grad = _disk_level(R)
    param, tangent, inv = _circle_boundary(R)
    m = 1.5 * R
    return ManifoldScenario(
        name="perturbed_cap",
        params={"R": R, "tilt": tilt},
        metric=metric,
        metric_derivs=derivs,
        boundary_fn=psi,
        boundary_grad=grad,
        boundary_param=param,
        boundary_tangent=tangent,
        boundary_period=TWO_PI,
        boundary_inv=inv,
        chart_bound=np.array([[-m, m], [-m, m]]),
        conformal=(lam, grad_lam),
    )


def _flat_annulus(params):
    r_in = float(params.get("r_in", 0.5))
    if not 0.0 < r_in < 1.0:
        raise ValueError("flat_annulus requires 0 < r_in < 1")
    ri2 = r_in * r_in

    lam = lambda x: np.zeros(np.asarray(x).shape[:-1])
    grad_lam = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    metric, derivs = _conformal_fields(lam, grad_lam)

    def psi(x):
        x = np.asarray(x, dtype=float)
        q = np.sum(x * x, axis=-1)
        return (1.0 - q) * (q - ri2)

    def grad(x):
        x = np.asarray(x, dtype=float)
        q = np.sum(x * x, axis=-1)
        return ((1.0 + ri2) - 2.0 * q)[..., None] * 2.0 * x

    # u in [0, 2pi) is the outer circle, [2pi, 4pi) the inner one.
    def param(u):
        u = np.asarray(u, dtype=float)
        inner = u >= TWO_PI
        ang = np.where(inner, u - TWO_PI, u)
        rad = np.where(inner, r_in, 1.0)
        return rad[..., None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    def tangent(u):
        u = np.asarray(u, dtype=float)
        inner = u >= TWO_PI
        ang = np.where(inner, u - TWO_PI, u)
        rad = np.where(inner, r_in, 1.0)
        return rad[..., None] * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)

    def inv(x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1))
        ang = np.mod(np.arctan2(x[..., 1], x[..., 0]), TWO_PI)
        inner = np.abs(r - r_in) < np.abs(r - 1.0)
        return np.where(inner, ang + TWO_PI, ang)

    return ManifoldScenario(
        name="flat_annulus",
        params={"r_in": r_in},
        metric=metric,
        metric_derivs=derivs,
        boundary_fn=psi,
        boundary_grad=grad,
        boundary_param=param,
        boundary_tangent=tangent,
        boundary_period=2.0 * TWO_PI,
        boundary_inv=inv,
        chart_bound=np.array([[-1.5, 1.5], [-1.5, 1.5]]),
        conformal=(lam, grad_lam),
    )


SCENARIOS = {
    "flat_disk": _flat_disk,
    "sphere_cap": _sphere_cap,
    "perturbed_disk": _perturbed_disk,
    "perturbed_cap": _perturbed_cap,
    "flat_annulus": _flat_annulus,
}


def make_scenario(name: str, **params) -> ManifoldScenario:
    """Instantiate a built-in scenario by name with numeric parameters."""
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}"
        ) from None
    return factory(params)


# ---------------------------------------------------------------------------
# metric quantities
# ---------------------------------------------------------------------------


def in_chart(scenario: ManifoldScenario, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    b = scenario.chart_bound
    return np.all((x >= b[:, 0]) & (x <= b[:, 1]), axis=-1)


def christoffel(scenario: ManifoldScenario, x, fd_step: float = 1e-5):
    """Christoffel symbols Gamma[..., k, i, j] at chart points x (..., 2).

    Uses the scenario's closed-form metric derivatives when present and
    central differences of the metric otherwise.
    """
    x = np.asarray(x, dtype=float)
    g = scenario.metric(x)
    if scenario.metric_derivs is not None:
        dg = scenario.metric_derivs(x)
    else:
        dg = np.zeros(x.shape[:-1] + (2, 2, 2))
        for k in range(2):
            step = np.zeros(2)
            step[k] = fd_step
            dg[..., k, :, :] = (scenario.metric(x + step) - scenario.metric(x - step)) / (
                2.0 * fd_step
            )
    ginv = np.linalg.inv(g)
    # Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    bracket = (
        np.einsum("...ijl->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - np.einsum("...lij->...lij", dg)
    )
    return 0.5 * np.einsum("...kl,...lij->...kij", ginv, bracket)


def metric_pack(scenario: ManifoldScenario, x):
    """Metric tensor and Christoffel symbols at a single chart point.

    Returns (g, gamma) with g of shape (2, 2) and gamma[k, i, j] the symbol
    with upper index k.  Raises OutOfChart outside the chart bounds and
    NonSPDMetric when the metric fails the positive-definiteness check.
    """
    x = np.asarray(x, dtype=float)
    if not in_chart(scenario, x):
        raise OutOfChart(f"{x.tolist()} outside chart bounds of {scenario.name}")
    g = scenario.metric(x)
    if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-12):
        raise NonSPDMetric(f"metric not symmetric at {x.tolist()}")
    eig = np.linalg.eigvalsh(g)
    if np.min(eig) <= 0.0:
        raise NonSPDMetric(f"metric has min eigenvalue {np.min(eig)} at {x.tolist()}")
    return g, christoffel(scenario, x)


def metric_norm(scenario: ManifoldScenario, x, v):
    """g-norm of tangent vectors v (..., 2) at points x (..., 2)."""
    if scenario.conformal is not None:
        lam, _ = scenario.conformal
        return np.exp(lam(x)) * np.sqrt(np.sum(np.asarray(v) ** 2, axis=-1))
    g = scenario.metric(x)
    return np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))


def geodesic_rhs(scenario: ManifoldScenario, x, v):
    """Right-hand side (dx, dv) of the geodesic equation in phase space."""
    if scenario.conformal is not None:
        _, grad_lam = scenario.conformal
        a = grad_lam(x)
        av = np.sum(a * v, axis=-1, keepdims=True)
        vv = np.sum(v * v, axis=-1, keepdims=True)
        return v, -2.0 * av * v + vv * a
    gamma = christoffel(scenario, x)
    dv = -np.einsum("...kij,...i,...j->...k", gamma, v, v)
    return v, dv


def _rk4_step(scenario, x, v, h):
    k1x, k1v = geodesic_rhs(scenario, x, v)
    k2x, k2v = geodesic_rhs(scenario, x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = geodesic_rhs(scenario, x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = geodesic_rhs(scenario, x + h * k3x, v + h * k3v)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    vn = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return xn, vn


def flow_ray(scenario: ManifoldScenario, x0, v0, length: float, h: float = 1e-3):
    """Flow unit-speed geodesics for a fixed arc length without exit checks.

    x0, v0 may be single points or batches; v0 must be g-unit.  Returns the
    endpoint(s).  Used by the collar utilities where the caller controls the
    travelled length.
    """
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    n_full = int(length / h)
    for _ in range(n_full):
        x, v = _rk4_step(scenario, x, v, h)
        nrm = metric_norm(scenario, x, v)
        v = v / nrm[..., None]
    rem = length - n_full * h
    if rem > 1e-15:
        x, v = _rk4_step(scenario, x, v, rem)
        nrm = metric_norm(scenario, x, v)
        v = v / nrm[..., None]
    return x, v


# ---------------------------------------------------------------------------
# boundary frames
# ---------------------------------------------------------------------------


def boundary_frame(scenario: ManifoldScenario, u):
    """Boundary point with its g-orthonormal frame (nu, T) at parameter u.

    nu is the g-unit inward normal, T the g-unit tangent along increasing u.
    Accepts scalars or arrays of parameters.
    """
    u = np.asarray(u, dtype=float)
    x = scenario.boundary_param(u)
    grad = scenario.boundary_grad(x)
    gnorm = np.sqrt(np.sum(grad * grad, axis=-1))
    if np.any(gnorm < 1e-9):
        raise DegenerateBoundary(f"vanishing boundary gradient at u={u}")
    g = scenario.metric(x)
    ginv = np.linalg.inv(g)
    nu = np.einsum("...ij,...j->...i", ginv, grad)
    nu = nu / metric_norm(scenario, x, nu)[..., None]
    T = scenario.boundary_tangent(u)
    T = T / metric_norm(scenario, x, T)[..., None]
    return x, nu, T


def boundary_geometry(scenario: ManifoldScenario, u: float):
    """Boundary point and g-unit inward normal at parameter u."""
    if not 0.0 <= u < scenario.boundary_period:
        raise ValueError(f"u={u} outside [0, {scenario.boundary_period})")
    x, nu, _ = boundary_frame(scenario, u)
    return x, nu


def boundary_vector(scenario: ManifoldScenario, u: float, theta: float, vid: int = -1):
    """Construct the inward boundary vector at (u, theta)."""
    if abs(theta) > 0.5 * math.pi + 1e-12:
        raise ValueError(f"theta={theta} outside [-pi/2, pi/2]")
    x, nu, T = boundary_frame(scenario, u)
    direction = math.cos(theta) * nu + math.sin(theta) * T
    return BoundaryVector(
        id=vid, u=float(u), theta=float(theta), base_point=x, direction=direction
    )


def exit_angles(scenario: ManifoldScenario, x_exit, w_exit):
    """Boundary coordinates (u_out, theta_out) of an outgoing vector.

    theta_out is measured from the outward normal, so the reversed (inward)
    vector has fan coordinates (u_out, -theta_out).
    """
    u = float(scenario.boundary_inv(x_exit))
    _, nu, T = boundary_frame(scenario, u)
    g = scenario.metric(np.asarray(x_exit, dtype=float))
    wn = float(np.einsum("i,ij,j->", w_exit, g, nu))
    wt = float(np.einsum("i,ij,j->", w_exit, g, T))
    return u, math.atan2(wt, -wn)


# ---------------------------------------------------------------------------
# collar radius and interior push
# ---------------------------------------------------------------------------


def _normal_ray_polylines(scenario, n_u, n_samples, coarse_step=0.02, length_cap=50.0):
    """Trace inward normal rays and resample each at n_samples arc values.

    Returns (t_grid, points) where points has shape (n_u, n_samples, 2) and
    t_grid the shared arc-length grid [0, r_max].  r_max is the shortest
    exit length among the rays (the normal map cannot be injective past an
    exit), determined by a coarse pass.
    """
    us = np.arange(n_u) * (scenario.boundary_period / n_u)
    x, nu, _ = boundary_frame(scenario, us)

    # coarse pass: first boundary hit per ray
    exits = np.full(n_u, length_cap)
    xc, vc = x.copy(), nu.copy()
    alive = np.ones(n_u, dtype=bool)
    t = 0.0
    while t < length_cap and alive.any():
        xc_new, vc_new = _rk4_step(scenario, xc, vc, coarse_step)
        nrm = metric_norm(scenario, xc_new, vc_new)
        vc_new = vc_new / nrm[..., None]
        t += coarse_step
        crossed = alive & (scenario.boundary_fn(xc_new) < 0.0) & (t > coarse_step)
        exits[crossed] = t - coarse_step
        alive &= ~crossed
        xc, vc = xc_new, vc_new
    r_max = float(np.min(exits))
    if r_max <= coarse_step:
        raise NoCollar(f"normal rays of {scenario.name} exit immediately")

    dt = r_max / n_samples
    pts = np.empty((n_u, n_samples + 1, 2))
    pts[:, 0] = x
    xs, vs = x.copy(), nu.copy()
    for j in range(n_samples):
        xs, vs = _rk4_step(scenario, xs, vs, dt)
        nrm = metric_norm(scenario, xs, vs)
        vs = vs / nrm[..., None]
        pts[:, j + 1] = xs
    t_grid = np.arange(n_samples + 1) * dt
    return t_grid, pts


def collar_radius_estimate(
    scenario: ManifoldScenario, n_u: int = 64, n_t: int = 64
) -> float:
    """Conservative estimate of the collar radius from sampled normal rays.

    Normal geodesics are traced from n_u boundary points and sampled on a
    shared arc grid (4*n_t points); the returned radius is the largest grid
    value below every detected injectivity failure and every local
    orientation flip of the sampled normal map.  Raises NoCollar when even
    the first grid radius fails.
    """
    if n_u < 16 or n_t < 16:
        raise ValueError("collar_radius_estimate requires n_u, n_t >= 16")
    n_fine = 4 * n_t
    t_grid, pts = _normal_ray_polylines(scenario, n_u, n_fine)
    dt = t_grid[1] - t_grid[0]
    n_u_, n_s, _ = pts.shape

    # chart-space step of each sample along its own ray
    step_len = np.linalg.norm(np.diff(pts, axis=1), axis=-1)
    spacing = np.empty((n_u_, n_s))
    spacing[:, :-1] = step_len
    spacing[:, -1] = step_len[:, -1]

    flat = pts.reshape(-1, 2)
    ray_of = np.repeat(np.arange(n_u_), n_s)
    idx_of = np.tile(np.arange(n_s), n_u_)
    thresh = 0.75 * spacing.reshape(-1)

    tree = cKDTree(flat)
    pairs = tree.query_pairs(0.75 * float(np.max(spacing)), output_type="ndarray")
    fail_r = np.inf
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        same_ray = ray_of[a] == ray_of[b]
        adjacent = same_ray & (np.abs(idx_of[a] - idx_of[b]) <= 1)
        dist = np.linalg.norm(flat[a] - flat[b], axis=-1)
        close = dist < np.minimum(thresh[a], thresh[b])
        offend = close & ~adjacent
        if offend.any():
            r_pair = np.maximum(idx_of[a[offend]], idx_of[b[offend]]) * dt
            fail_r = float(np.min(r_pair))

    # orientation: determinant of (d_u K, d_t K) must keep one sign per run
    du = np.roll(pts, -1, axis=0) - pts
    dtv = np.empty_like(pts)
    dtv[:, :-1] = np.diff(pts, axis=1)
    dtv[:, -1] = dtv[:, -2]
    det = du[..., 0] * dtv[..., 1] - du[..., 1] * dtv[..., 0]
    sign0 = np.sign(det[:, 0])
    flipped = det * sign0[:, None] <= 0.0
    if flipped.any():
        first_flip = np.argmax(flipped, axis=1).astype(float)
        first_flip[~flipped.any(axis=1)] = np.inf
        fail_r = min(fail_r, float(np.min(first_flip)) * dt)

    if not np.isfinite(fail_r):
        r_est = float(t_grid[-1]) - dt
    else:
        r_est = fail_r - dt
    if r_est <= dt:
        raise NoCollar(
            f"{scenario.name}: no sampled collar radius passed (first failure at "
            f"{fail_r:.6g})"
        )
    return r_est


@lru_cache(maxsize=None)
def _cached_collar(scenario: ManifoldScenario) -> float:
    return collar_radius_estimate(scenario, 64, 64)


def collar_cutoff(t, r_c: float):
    """C^2 cutoff: 1 on [0, r_c/3], 0 on [2 r_c/3, inf), quintic in between."""
    t = np.asarray(t, dtype=float)
    s = np.clip(3.0 * t / r_c - 1.0, 0.0, 1.0)
    smooth = s * s * s * (s * (6.0 * s - 15.0) + 10.0)
    return 1.0 - smooth


def _push_profile(s0: float, t: float, r_c: float, step: float = 1e-3) -> float:
    """Integrate f' = collar_cutoff(f), f(0) = s0, up to time t (RK4)."""
    f = float(s0)
    n_full = int(t / step)
    rem = t - n_full * step
    for h in [step] * n_full + ([rem] if rem > 1e-15 else []):
        k1 = collar_cutoff(f, r_c)
        k2 = collar_cutoff(f + 0.5 * h * k1, r_c)
        k3 = collar_cutoff(f + 0.5 * h * k2, r_c)
        k4 = collar_cutoff(f + h * k3, r_c)
        f += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return f


def _ray_polyline(scenario, u, depth, n_steps):
    """Points along the inward normal ray from boundary parameter u."""
    xb, nu, _ = boundary_frame(scenario, np.atleast_1d(u))
    pts = np.empty((len(np.atleast_1d(u)), n_steps + 1, 2))
    pts[:, 0] = xb
    xs, vs = xb.copy(), nu.copy()
    h = depth / n_steps
    for k in range(n_steps):
        xs, vs = _rk4_step(scenario, xs, vs, h)
        vs = vs / metric_norm(scenario, xs, vs)[..., None]
        pts[:, k + 1] = xs
    return pts


def _polyline_project(pts, t_step, x):
    """Min distance from x to a polyline and the arc parameter achieving it."""
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    frac = np.clip(np.sum((x - a) * ab, axis=-1) / np.maximum(denom, 1e-300), 0.0, 1.0)
    proj = a + frac[:, None] * ab
    d2 = np.sum((proj - x) ** 2, axis=-1)
    k = int(np.argmin(d2))
    return math.sqrt(float(d2[k])), (k + float(frac[k])) * t_step


def _normal_foot(scenario, x, r_c, n_u=256, n_steps=96):
    """Locate x in boundary normal coordinates within the collar band.

    Returns (u, depth) or None when x is farther than 2*r_c/3 from the
    boundary along every sampled normal ray.
    """
    x = np.asarray(x, dtype=float)
    if abs(float(scenario.boundary_fn(x))) <= 1e-9:
        return float(scenario.boundary_inv(x)), 0.0

    band = 2.0 * r_c / 3.0
    us = np.arange(n_u) * (scenario.boundary_period / n_u)
    pts = _ray_polyline(scenario, us, band, n_steps)
    t_step = band / n_steps

    d2 = np.sum((pts - x) ** 2, axis=-1)
    i = int(np.unravel_index(int(np.argmin(d2)), d2.shape)[0])
    du = scenario.boundary_period / n_u

    def ray_dist(u):
        poly = _ray_polyline(scenario, np.mod(u, scenario.boundary_period), band, n_steps)[0]
        return _polyline_project(poly, t_step, x)

    # golden-section refine over u around the best sampled ray
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = (i - 1) * du, (i + 1) * du
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, tc = ray_dist(c)
    fd, td = ray_dist(d)
    for _ in range(40):
        if fc < fd:
            b, d, fd, td = d, c, fc, tc
            c = b - phi * (b - a)
            fc, tc = ray_dist(c)
        else:
            a, c, fc, tc = c, d, fd, td
            d = a + phi * (b - a)
            fd, td = ray_dist(d)
    if fc < fd:
        u_best, dist, depth = c, fc, tc
    else:
        u_best, dist, depth = d, fd, td
    if depth >= band - 1e-9 or dist > 1e-5:
        return None
    return float(np.mod(u_best, scenario.boundary_period)), float(depth)


def interior_push(
    scenario: ManifoldScenario, x, t: float, r_c: float
) -> np.ndarray:
    """Flow a point along the boundary-normal cutoff field for time t.

    Points outside the collar band (deeper than 2*r_c/3) are fixed; points
    inside move inward along their normal geodesic by f(t) - f(0) where
    f' = collar_cutoff(f).  The travelled g-length is at most t.
    """
    if r_c <= 0:
        raise InvalidCollar("collar radius must be positive")
    est = _cached_collar(scenario)
    if r_c > est + 1e-9:
        raise InvalidCollar(
            f"r_c={r_c} exceeds estimated collar radius {est:.6g} of {scenario.name}"
        )
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return x.copy()
    foot = _normal_foot(scenario, x, r_c)
    if foot is None:
        return x.copy()
    u, s0 = foot
    f_t = _push_profile(s0, t, r_c)
    xb, nu, _ = boundary_frame(scenario, u)
    if f_t <= 1e-15:
        return xb
    x_new, _ = flow_ray(scenario, xb, nu, f_t, h=min(1e-3, f_t))
    return x_new
