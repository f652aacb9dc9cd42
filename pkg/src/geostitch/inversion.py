"""Blind reconstruction from delayed collision data.

Everything here consumes only the delayed-collision table plus the boundary
fan coordinates (which are boundary data an experimenter controls).  Traces
and chart positions are never read; positional cross-checks live in the
validation harness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collision import BoundaryRelation, DelayedCollisionSet
from .errors import AmbiguousScattering, EmptyRelation
from .geodesic import TRAPPED, LensData, LensEntry

DEFAULT_K_INTERVAL = 50


@dataclass
class StitchingData:
    """Indexed geodesic intervals plus their meeting correspondences."""

    indices: np.ndarray
    intervals: dict
    corr: BoundaryRelation

    def interval_end(self, alpha: int) -> float:
        return self.intervals[int(alpha)]


def _pair_groups(D: DelayedCollisionSet):
    """Start offsets of each (v, w) run in the sorted collision table."""
    n = len(D.v)
    if n == 0:
        return np.empty(0, np.int64), np.empty((0, 2), np.int64)
    new = np.ones(n, dtype=bool)
    new[1:] = (D.v[1:] != D.v[:-1]) | (D.w[1:] != D.w[:-1])
    starts = np.flatnonzero(new)
    pairs = np.column_stack([D.v[starts], D.w[starts]])
    return starts, pairs


def _longest_dense_run(values, max_gap):
    """Length of the longest run of sorted values with gaps <= max_gap."""
    if len(values) == 0:
        return 0
    values = np.sort(values)
    breaks = np.flatnonzero(np.diff(values) > max_gap)
    bounds = np.concatenate([[0], breaks + 1, [len(values)]])
    return int(np.max(np.diff(bounds)))


def lens_from_collisions(
    D: DelayedCollisionSet,
    fan: list,
    h: float = 1e-3,
    eps_int: float = 1e-4,
    K_interval: int = DEFAULT_K_INTERVAL,
    ambiguity_tol: float = 1e-3,
) -> LensData:
    """Recover exit times and exit directions from collision data alone.

    A fan member z is the reversed exit of v exactly when their collision
    parameters form a continuum; discretely, a run of at least K_interval
    s-values with consecutive gaps <= 2h.  The exit time is then the delay
    of the zero-time collision (v, z, 0, tau).  Vectors whose collisions
    all happen at time zero exit immediately; vectors with no exit
    candidate are reported trapped.
    """
    coords = {vec.id: (vec.u, vec.theta) for vec in fan}
    starts, pairs = _pair_groups(D)
    ends = np.append(starts[1:], len(D.v))
    # collision s-values per ordered pair, both orders gathered per vector
    by_vector: dict = {}
    for k in range(len(starts)):
        v, w = int(pairs[k, 0]), int(pairs[k, 1])
        lo, hi = starts[k], ends[k]
        by_vector.setdefault(v, {}).setdefault(w, []).append(("fwd", lo, hi))
        by_vector.setdefault(w, {}).setdefault(v, []).append(("rev", lo, hi))

    entries = {}
    for vec in fan:
        vid = vec.id
        partners = by_vector.get(vid)
        if partners is None:
            entries[vid] = LensEntry(tau=TRAPPED, u_out=None, theta_out=None)
            continue

        own_s = [
            D.s[lo:hi]
            for side in partners.values()
            for kind, lo, hi in side
            if kind == "fwd"
        ]
        own_s = np.concatenate(own_s) if own_s else np.empty(0)
        if len(own_s) and np.all(own_s <= eps_int):
            entries[vid] = LensEntry(tau=0.0, u_out=vec.u, theta_out=vec.theta)
            continue

        candidates = []
        for z, sides in partners.items():
            if z not in coords:
                continue
            s_union = []
            for kind, lo, hi in sides:
                s_union.append(D.s[lo:hi])
            s_union = np.concatenate(s_union)
            if len(s_union) < K_interval:
                continue
            run = _longest_dense_run(s_union, 2.0 * h)
            if run >= K_interval:
                candidates.append((run, z))
        if not candidates:
            entries[vid] = LensEntry(tau=TRAPPED, u_out=None, theta_out=None)
            continue

        candidates.sort(key=lambda rz: (-rz[0], rz[1]))
        sigma = [(coords[z][0], -coords[z][1]) for _, z in candidates]
        distinct = [candidates[0][1]]
        u0, t0 = sigma[0]
        for (u, t), (_, z) in zip(sigma[1:], candidates[1:]):
            if max(abs(u - u0), abs(t - t0)) > ambiguity_tol:
                distinct.append(z)
        if len(distinct) > 1:
            raise AmbiguousScattering(vid, distinct)

        z_best = candidates[0][1]
        tau = None
        for kind, lo, hi in partners[z_best]:
            if kind != "fwd":
                continue
            sl = D.s[lo:hi]
            at_zero = sl <= eps_int
            if at_zero.any():
                tau = float(np.min(D.D[lo:hi][at_zero] + sl[at_zero]))
        if tau is None:
            entries[vid] = LensEntry(tau=TRAPPED, u_out=None, theta_out=None)
        else:
            u_z, th_z = coords[z_best]
            entries[vid] = LensEntry(tau=tau, u_out=u_z, theta_out=-th_z)
    return LensData(entries=entries)


def _dedup_relation(v, w, s, t, tol):
    order = np.lexsort((t, s, w, v))
    v, w, s, t = v[order], w[order], s[order], t[order]
    keep = np.ones(len(v), dtype=bool)
    if len(v) > 1:
        same = (v[1:] == v[:-1]) & (w[1:] == w[:-1])
        keep[1:] = ~(
            same & (np.abs(s[1:] - s[:-1]) <= tol) & (np.abs(t[1:] - t[:-1]) <= tol)
        )
    return v[keep], w[keep], s[keep], t[keep]


def recover_boundary_relation(
    D: DelayedCollisionSet,
    iterate: bool = True,
    eps_D: float | None = None,
    eps_int: float = 1e-4,
    max_iter: int = 5,
):
    """Recover the stitching boundary relation from collision data.

    Stage 1 transcribes every first collision (v, w, s, D) into the meeting
    (v, w, s, s + D) and its mirror.  Stage 2 closes over shared witnesses:
    two meetings seen on the same trace z at the same parameter r identify
    a meeting of the two partners.  With ``iterate`` the closure is rerun
    until no new rows appear (point equality is transitive).

    Returns (relation, n_closure_passes).
    """
    if eps_D is None:
        eps_D = D.eps_D
    v = np.concatenate([D.v, D.w])
    w = np.concatenate([D.w, D.v])
    s = np.concatenate([D.s, D.s + D.D])
    t = np.concatenate([D.s + D.D, D.s])
    keep = ~((v == w) & (np.abs(s - t) <= eps_int))
    v, w, s, t = _dedup_relation(v[keep], w[keep], s[keep], t[keep], eps_int)

    passes = 0
    while True:
        n_before = len(v)
        ev, ew, es, et = _closure_pass(v, w, s, t, eps_D, eps_int)
        passes += 1
        if len(ev):
            v = np.concatenate([v, ev])
            w = np.concatenate([w, ew])
            s = np.concatenate([s, es])
            t = np.concatenate([t, et])
            v, w, s, t = _dedup_relation(v, w, s, t, eps_int)
        if not iterate or len(v) == n_before or passes >= max_iter:
            break
    return BoundaryRelation(v=v, w=w, s=s, t=t), passes


def _closure_pass(v, w, s, t, eps_D, eps_int):
    """Emit (x, y, q_x, q_y) for rows (z, x, r, q_x), (z, y, r', q_y), r ~ r'."""
    order = np.lexsort((s, v))
    zv, xw, zr, xq = v[order], w[order], s[order], t[order]
    new = np.ones(len(zv), dtype=bool)
    if len(zv) > 1:
        new[1:] = (zv[1:] != zv[:-1]) | (np.diff(zr) > eps_D)
    cluster = np.cumsum(new) - 1
    # all ordered pairs within each cluster
    counts = np.bincount(cluster)
    big = counts[cluster] > 1
    if not big.any():
        return (
            np.empty(0, v.dtype),
            np.empty(0, w.dtype),
            np.empty(0, float),
            np.empty(0, float),
        )
    idx = np.flatnonzero(big)
    sub_cluster = cluster[idx]
    ii, jj = _pairs_in_clusters(sub_cluster)
    a, b = idx[ii], idx[jj]
    ev = np.concatenate([xw[a], xw[b]])
    ew = np.concatenate([xw[b], xw[a]])
    es = np.concatenate([xq[a], xq[b]])
    et = np.concatenate([xq[b], xq[a]])
    keep = ~((ev == ew) & (np.abs(es - et) <= eps_int))
    return ev[keep], ew[keep], es[keep], et[keep]


def _pairs_in_clusters(sorted_cluster_ids):
    from .collision import _pairs_within_groups

    return _pairs_within_groups(sorted_cluster_ids)


def assemble_stitching(B: BoundaryRelation, lens: LensData) -> StitchingData:
    """Package a boundary relation plus lens data as stitching data.

    Interval ends are the larger of the recovered exit time and the largest
    witnessed parameter (a finite sample of meetings needs the exit time to
    complete the interval).
    """
    if len(B.v) == 0:
        raise EmptyRelation("boundary relation has no entries")
    indices = np.unique(np.concatenate([B.v, B.w]))
    max_param = {}
    for vid in indices:
        lo = np.searchsorted(B.v, vid, side="left")
        hi = np.searchsorted(B.v, vid, side="right")
        max_param[int(vid)] = float(B.s[lo:hi].max()) if hi > lo else 0.0
    intervals = {}
    for vid in indices:
        vid = int(vid)
        tau = 0.0
        entry = lens.entries.get(vid)
        if entry is not None and not math.isinf(entry.tau):
            tau = entry.tau
        intervals[vid] = max(tau, max_param[vid])
    return StitchingData(indices=indices, intervals=intervals, corr=B)
