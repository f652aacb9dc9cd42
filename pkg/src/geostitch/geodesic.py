"""Unit-speed geodesic tracing from boundary fans, with exit detection.

Traces are integrated in batches with fixed-step RK4 on (x, v) phase space;
the tangent is renormalized to g-unit length after every step, so the curve
parameter is arc length.  Boundary exits are located by bisecting the
crossing step on the signed level function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationBlowup, StepTooLarge
from .manifold import (
    BoundaryVector,
    ManifoldScenario,
    _rk4_step,
    boundary_frame,
    boundary_vector,
    exit_angles,
    in_chart,
    metric_norm,
)

TRAPPED = math.inf

# cos(theta) below this counts as tangent: the geodesic exits immediately
TANGENT_COS = 1e-12


@dataclass
class GeodesicTrace:
    """A discretized unit-speed geodesic fired from a boundary vector.

    ``t`` holds arc-length parameters (uniform step, final partial step at
    the exit), ``x`` and ``v`` the chart positions and g-unit tangents.
    ``tau`` is the exit length or inf when the trace hits the length cap.
    """

    source: BoundaryVector
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    tau: float
    exit_vector: np.ndarray | None
    step: float
    max_drift: float = 0.0

    @property
    def id(self) -> int:
        return self.source.id

    @property
    def trapped(self) -> bool:
        return math.isinf(self.tau)

    def point_at(self, s):
        """Chart point at parameter s by cubic Hermite interpolation."""
        return hermite_eval(self.t, self.x, self.v, np.asarray(s, dtype=float))


@dataclass
class LensEntry:
    tau: float
    u_out: float | None
    theta_out: float | None

    @property
    def trapped(self) -> bool:
        return math.isinf(self.tau)


@dataclass
class LensData:
    """Exit times and exit directions keyed by fan vector id."""

    entries: dict


def hermite_eval(t_grid, x_grid, v_grid, s):
    """Cubic Hermite interpolation of a sampled curve at parameters s."""
    s = np.asarray(s, dtype=float)
    j = np.clip(np.searchsorted(t_grid, s, side="right") - 1, 0, len(t_grid) - 2)
    t0, t1 = t_grid[j], t_grid[j + 1]
    dt = np.maximum(t1 - t0, 1e-300)
    w = np.clip((s - t0) / dt, 0.0, 1.0)
    w2 = w * w
    w3 = w2 * w
    h00 = 2 * w3 - 3 * w2 + 1
    h10 = w3 - 2 * w2 + w
    h01 = -2 * w3 + 3 * w2
    h11 = w3 - w2
    return (
        h00[..., None] * x_grid[j]
        + (h10 * dt)[..., None] * v_grid[j]
        + h01[..., None] * x_grid[j + 1]
        + (h11 * dt)[..., None] * v_grid[j + 1]
    )


def _bisect_exit(scenario, x0, v0, h, iters=45):
    """Refine boundary crossings within one step, vectorized over rows.

    x0, v0 are the pre-step states with psi >= 0 whose full step lands at
    psi < 0.  Returns (frac, x_exit, v_exit) with frac in (0, 1].
    """
    lo = np.zeros(len(x0))
    hi = np.ones(len(x0))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        xm, _ = _rk4_step(scenario, x0, v0, (mid * h)[:, None])
        inside = scenario.boundary_fn(xm) >= 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    frac = 0.5 * (lo + hi)
    xe, ve = _rk4_step(scenario, x0, v0, (frac * h)[:, None])
    ve = ve / metric_norm(scenario, xe, ve)[..., None]
    return frac, xe, ve


def shoot_fan(
    scenario: ManifoldScenario,
    vectors: list,
    h: float = 1e-3,
    L_max: float = 20.0,
    drift_tol: float = 1e-6,
    batch: int = 2048,
) -> list:
    """Trace every boundary vector; returns one GeodesicTrace per vector."""
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"step h={h} outside (0, 1e-2]")
    if L_max <= 0:
        raise ValueError("L_max must be positive")
    traces = []
    for start in range(0, len(vectors), batch):
        traces.extend(
            _shoot_batch(scenario, vectors[start : start + batch], h, L_max, drift_tol)
        )
    return traces


def _shoot_batch(scenario, vectors, h, L_max, drift_tol):
    K = len(vectors)
    X = np.array([v.base_point for v in vectors], dtype=float)
    V = np.array([v.direction for v in vectors], dtype=float)

    tangent = np.array([math.cos(v.theta) for v in vectors]) <= TANGENT_COS
    n_steps_max = int(round(L_max / h))

    tau = np.full(K, TRAPPED)
    exit_x = np.zeros((K, 2))
    exit_v = np.zeros((K, 2))
    has_exit = np.zeros(K, dtype=bool)
    max_drift = np.zeros(K)

    tau[tangent] = 0.0
    exit_x[tangent] = X[tangent]
    exit_v[tangent] = V[tangent]
    has_exit[tangent] = True

    alive_idx = np.flatnonzero(~tangent)
    Xa, Va = X[alive_idx], V[alive_idx]

    rows_idx = [alive_idx.copy()]
    rows_t = [np.zeros(len(alive_idx))]
    rows_x = [Xa.copy()]
    rows_v = [Va.copy()]

    step = 0
    while len(alive_idx) and step < n_steps_max:
        X1, V1 = _rk4_step(scenario, Xa, Va, h)
        nrm = metric_norm(scenario, X1, V1)
        drift = np.abs(nrm - 1.0)
        if np.max(drift, initial=0.0) > drift_tol:
            bad = alive_idx[int(np.argmax(drift))]
            raise StepTooLarge(
                f"trace {vectors[bad].id}: per-step drift {np.max(drift):.3e} "
                f"exceeds {drift_tol:.1e} at t={step * h:.4f}"
            )
        np.maximum.at(max_drift, alive_idx, drift)
        V1 = V1 / nrm[..., None]

        oob = ~in_chart(scenario, X1)
        if oob.any():
            bad = alive_idx[int(np.argmax(oob))]
            raise IntegrationBlowup(
                f"trace {vectors[bad].id} left chart bounds at t={(step + 1) * h:.4f}"
            )

        psi = scenario.boundary_fn(X1)
        crossed = psi < 0.0
        step += 1
        if crossed.any():
            frac, xe, ve = _bisect_exit(scenario, Xa[crossed], Va[crossed], h)
            ids = alive_idx[crossed]
            tau[ids] = (step - 1) * h + frac * h
            exit_x[ids] = xe
            exit_v[ids] = ve
            has_exit[ids] = True
            keep = ~crossed
            alive_idx = alive_idx[keep]
            X1, V1 = X1[keep], V1[keep]
        if len(alive_idx):
            rows_idx.append(alive_idx.copy())
            rows_t.append(np.full(len(alive_idx), step * h))
            rows_x.append(X1.copy())
            rows_v.append(V1.copy())
        Xa, Va = X1, V1

    all_idx = np.concatenate(rows_idx)
    all_t = np.concatenate(rows_t)
    all_x = np.concatenate(rows_x)
    all_v = np.concatenate(rows_v)
    order = np.lexsort((all_t, all_idx))
    all_idx, all_t = all_idx[order], all_t[order]
    all_x, all_v = all_x[order], all_v[order]
    bounds = np.searchsorted(all_idx, np.arange(K + 1))

    traces = []
    for k, vec in enumerate(vectors):
        lo, hi = bounds[k], bounds[k + 1]
        t_k = all_t[lo:hi]
        x_k = all_x[lo:hi]
        v_k = all_v[lo:hi]
        if has_exit[k]:
            if len(t_k) and tau[k] - t_k[-1] > 1e-12:
                t_k = np.append(t_k, tau[k])
                x_k = np.vstack([x_k, exit_x[k]])
                v_k = np.vstack([v_k, exit_v[k]])
            elif not len(t_k):  # tangent vector: single zero-length sample
                t_k = np.array([0.0])
                x_k = exit_x[k][None, :]
                v_k = exit_v[k][None, :]
            traces.append(
                GeodesicTrace(
                    source=vec,
                    t=t_k,
                    x=x_k,
                    v=v_k,
                    tau=float(tau[k]),
                    exit_vector=exit_v[k].copy(),
                    step=h,
                    max_drift=float(max_drift[k]),
                )
            )
        else:
            traces.append(
                GeodesicTrace(
                    source=vec,
                    t=t_k,
                    x=x_k,
                    v=v_k,
                    tau=TRAPPED,
                    exit_vector=None,
                    step=h,
                    max_drift=float(max_drift[k]),
                )
            )
    return traces


def shoot(
    scenario: ManifoldScenario,
    v: BoundaryVector,
    h: float = 1e-3,
    L_max: float = 20.0,
) -> GeodesicTrace:
    """Trace a single boundary vector until it exits or reaches L_max."""
    return shoot_fan(scenario, [v], h=h, L_max=L_max)[0]


def fan_grid(scenario, n_u, n_theta, theta_guard=0.05, rng=None, jitter=0.0):
    """Equispaced (u, theta) grid over the inward cone, optionally jittered."""
    du = scenario.boundary_period / n_u
    width = math.pi - 2.0 * theta_guard
    dthe = width / n_theta
    us, thetas = [], []
    for i in range(n_u):
        for j in range(n_theta):
            u = i * du
            theta = -0.5 * width + (j + 0.5) * dthe
            if rng is not None and jitter > 0.0:
                u = (u + jitter * du * (rng.random() - 0.5)) % scenario.boundary_period
                theta += jitter * dthe * (rng.random() - 0.5)
                theta = float(np.clip(theta, -0.5 * width, 0.5 * width))
            us.append(u)
            thetas.append(theta)
    return us, thetas


def sample_fan(
    scenario: ManifoldScenario,
    n_u: int,
    n_theta: int,
    augment_exits: bool = False,
    h: float = 1e-3,
    L_max: float = 20.0,
    theta_guard: float = 0.05,
    rng=None,
    jitter: float = 0.0,
    dedup_tol: float = 1e-9,
) -> list:
    """Sample the boundary fan standing in for the inward unit sphere bundle.

    n_u equispaced boundary parameters by n_theta angles inside the guarded
    cone.  With ``augment_exits`` every traced geodesic's reversed exit
    vector is appended (so each exit direction is represented in the fan),
    deduplicated against existing members at ``dedup_tol`` in (u, theta).
    """
    if n_u < 8 or n_theta < 4:
        if not (n_u >= 1 and n_theta >= 1):
            raise ValueError("fan requires n_u >= 1, n_theta >= 1")
    us, thetas = fan_grid(scenario, n_u, n_theta, theta_guard, rng, jitter)
    fan = [
        boundary_vector(scenario, u, theta, vid=i)
        for i, (u, theta) in enumerate(zip(us, thetas))
    ]
    if not augment_exits:
        return fan

    traces = shoot_fan(scenario, fan, h=h, L_max=L_max)
    coords = np.array([[v.u, v.theta] for v in fan])
    period = scenario.boundary_period
    for tr in traces:
        if tr.trapped:
            continue
        u_out, theta_out = exit_angles(scenario, tr.x[-1], tr.exit_vector)
        theta_rev = -theta_out
        if abs(theta_rev) >= 0.5 * math.pi - 1e-9:
            continue
        d_u = np.abs(coords[:, 0] - u_out)
        d_u = np.minimum(d_u, period - d_u)
        d_t = np.abs(coords[:, 1] - theta_rev)
        if np.min(np.maximum(d_u, d_t)) <= dedup_tol:
            continue
        vec = boundary_vector(scenario, u_out % period, theta_rev, vid=len(fan))
        fan.append(vec)
        coords = np.vstack([coords, [vec.u, vec.theta]])
    return fan


def lens_forward(scenario: ManifoldScenario, traces: list) -> LensData:
    """Ground-truth lens data (exit time, exit direction) read off traces."""
    entries = {}
    for tr in traces:
        if tr.trapped:
            entries[tr.id] = LensEntry(tau=TRAPPED, u_out=None, theta_out=None)
        else:
            u_out, theta_out = exit_angles(scenario, tr.x[-1], tr.exit_vector)
            entries[tr.id] = LensEntry(tau=tr.tau, u_out=u_out, theta_out=theta_out)
    return LensData(entries=entries)
