"""Pairwise geodesic intersections and the forward collision data sets.

The broad phase hashes coarse polyline segments of every trace into a
uniform grid; candidate segment pairs are tested for (near-)crossing and
seeds are polished by a vectorized 2-D Newton iteration on cubic Hermite
interpolants of the fine samples.  Same-geodesic pairs (reversed
continuations) are detected as near-parallel, near-coincident segments and
reported as a dense run of projection records, one per fine sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_EPS_INT = 1e-4
DEFAULT_EPS_D = 1e-4

# |sin| of the crossing angle below which a refined record is flagged
TANGENTIAL_SIN = 1e-2


@dataclass
class IntersectionRecord:
    a: int
    b: int
    s: float
    t: float
    point: np.ndarray
    tangential: bool


@dataclass
class IntersectionSet:
    """Columnar refined intersections; rows normalized to a <= b."""

    a: np.ndarray
    b: np.ndarray
    s: np.ndarray
    t: np.ndarray
    point: np.ndarray
    tangential: np.ndarray

    def __len__(self):
        return len(self.a)

    def records(self):
        return [
            IntersectionRecord(
                int(self.a[i]),
                int(self.b[i]),
                float(self.s[i]),
                float(self.t[i]),
                self.point[i],
                bool(self.tangential[i]),
            )
            for i in range(len(self.a))
        ]


@dataclass
class DelayedCollisionSet:
    """First-collision entries (v, w, s, D): fire w, wait D, fire v.

    Rows are sorted by (v, w, s, D).  Per ordered pair, delays within
    ``eps_D`` of each other form one bin and only the smallest collision
    time s survives; that is what hides later equal-gap intersections.
    """

    v: np.ndarray
    w: np.ndarray
    s: np.ndarray
    D: np.ndarray
    eps_D: float = DEFAULT_EPS_D

    def __len__(self):
        return len(self.v)

    def pair_rows(self, v: int, w: int):
        """Index range of the ordered pair (v, w)."""
        lo = np.searchsorted(self.v, v, side="left")
        hi = np.searchsorted(self.v, v, side="right")
        lo += np.searchsorted(self.w[lo:hi], w, side="left")
        hi = lo + np.searchsorted(self.w[lo:hi], w, side="right")
        return lo, hi


@dataclass
class BoundaryRelation:
    """All tuples (v, w, s, t) with the traces meeting: gamma_v(s)=gamma_w(t).

    Symmetric by construction; reflexive diagonal entries are implied and
    not stored.  Rows sorted by (v, w, s, t).
    """

    v: np.ndarray
    w: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.v)

    def pair_rows(self, v: int, w: int):
        lo = np.searchsorted(self.v, v, side="left")
        hi = np.searchsorted(self.v, v, side="right")
        lo += np.searchsorted(self.w[lo:hi], w, side="left")
        hi = lo + np.searchsorted(self.w[lo:hi], w, side="right")
        return lo, hi


# ---------------------------------------------------------------------------
# broad phase
# ---------------------------------------------------------------------------


def _pairs_within_groups(sorted_keys):
    """All index pairs (i, j), i<j, sharing a key in a sorted key array."""
    n = len(sorted_keys)
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = sorted_keys[1:] != sorted_keys[:-1]
    group_start = np.maximum.accumulate(np.where(new_group, np.arange(n), 0))
    group_end_of = np.empty(n, np.int64)
    starts = np.flatnonzero(new_group)
    ends = np.append(starts[1:], n)
    group_end_of[starts[0] :] = np.repeat(ends, ends - starts)
    reps = group_end_of - np.arange(n) - 1
    total = int(reps.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    i_idx = np.repeat(np.arange(n), reps)
    cum = np.concatenate([[0], np.cumsum(reps)[:-1]])
    j_idx = np.arange(total) - np.repeat(cum, reps) + i_idx + 1
    return i_idx, j_idx


def _coarse_segments(traces, stride):
    """Coarse chords of every trace plus bookkeeping arrays."""
    p0, p1, s0, s1, tid = [], [], [], [], []
    seg_pos = []  # coarse segment ordinal within its trace
    for tr in traces:
        n = len(tr.t)
        if n < 2:
            continue
        idx = np.arange(0, n - 1, stride)
        nxt = np.minimum(idx + stride, n - 1)
        p0.append(tr.x[idx])
        p1.append(tr.x[nxt])
        s0.append(tr.t[idx])
        s1.append(tr.t[nxt])
        tid.append(np.full(len(idx), tr.id, np.int64))
        seg_pos.append(np.arange(len(idx), dtype=np.int64))
    return (
        np.concatenate(p0),
        np.concatenate(p1),
        np.concatenate(s0),
        np.concatenate(s1),
        np.concatenate(tid),
        np.concatenate(seg_pos),
    )


def _candidate_pairs(p0, p1, tid, seg_pos, include_self, margin):
    """Segment pairs sharing a hash cell, excluding along-trace neighbors.

    Boxes are dilated by ``margin`` so segments within that distance (or
    sitting exactly on a cell edge) are guaranteed to share a cell.
    """
    chord = np.linalg.norm(p1 - p0, axis=-1)
    cell = 1.05 * max(float(chord.max()), 1e-9) + 2.0 * margin
    lo = np.floor((np.minimum(p0, p1) - margin) / cell).astype(np.int64)
    hi = np.floor((np.maximum(p0, p1) + margin) / cell).astype(np.int64)
    span = hi - lo  # each component 0 or 1 given the cell size

    keys_list, segs_list = [], []
    n = len(p0)
    base = np.arange(n, dtype=np.int64)
    for dx in (0, 1):
        for dy in (0, 1):
            mask = (span[:, 0] >= dx) & (span[:, 1] >= dy)
            cx = lo[mask, 0] + dx
            cy = lo[mask, 1] + dy
            keys_list.append((cx + 2**31) * (2**32) + (cy + 2**31))
            segs_list.append(base[mask])
    keys = np.concatenate(keys_list)
    segs = np.concatenate(segs_list)
    order = np.argsort(keys, kind="stable")
    keys, segs = keys[order], segs[order]
    ii, jj = _pairs_within_groups(keys)
    a, b = segs[ii], segs[jj]

    swap = a > b
    a2 = np.where(swap, b, a)
    b2 = np.where(swap, a, b)
    packed = a2 * np.int64(n) + b2
    packed = np.unique(packed)
    a = (packed // n).astype(np.int64)
    b = (packed % n).astype(np.int64)

    same = tid[a] == tid[b]
    near = np.abs(seg_pos[a] - seg_pos[b]) <= 2
    if include_self:
        keep = ~(same & near)
    else:
        keep = ~same
    return a[keep], b[keep]


# ---------------------------------------------------------------------------
# narrow phase + refinement
# ---------------------------------------------------------------------------


class _TraceTable:
    """Concatenated fine samples of all traces for vectorized interpolation."""

    def __init__(self, traces):
        ids = [tr.id for tr in traces]
        if ids != list(range(len(traces))):
            raise ValueError("traces must be listed in id order, ids 0..K-1")
        self.h = traces[0].step if traces else 0.0
        self.offset = np.zeros(len(traces) + 1, np.int64)
        for i, tr in enumerate(traces):
            self.offset[i + 1] = self.offset[i] + len(tr.t)
        self.t = np.concatenate([tr.t for tr in traces])
        self.x = np.concatenate([tr.x for tr in traces])
        self.v = np.concatenate([tr.v for tr in traces])
        self.n = np.array([len(tr.t) for tr in traces], np.int64)
        self.tau = np.array(
            [tr.t[-1] if tr.trapped else tr.tau for tr in traces], float
        )

    def locate(self, trace, s):
        """Global index of the sample interval containing parameter s."""
        j = np.minimum((s / self.h).astype(np.int64), self.n[trace] - 2)
        j = np.maximum(j, 0)
        return self.offset[trace] + j

    def eval(self, trace, s):
        """Hermite position and velocity at parameters s on given traces."""
        j = self.locate(trace, s)
        t0, t1 = self.t[j], self.t[j + 1]
        dt = np.maximum(t1 - t0, 1e-300)
        w = np.clip((s - t0) / dt, 0.0, 1.0)
        x0, x1 = self.x[j], self.x[j + 1]
        v0, v1 = self.v[j], self.v[j + 1]
        w2, w3 = w * w, w * w * w
        h00 = 2 * w3 - 3 * w2 + 1
        h10 = w3 - 2 * w2 + w
        h01 = -2 * w3 + 3 * w2
        h11 = w3 - w2
        pos = (
            h00[:, None] * x0
            + (h10 * dt)[:, None] * v0
            + h01[:, None] * x1
            + (h11 * dt)[:, None] * v1
        )
        d00 = (6 * w2 - 6 * w) / dt
        d10 = 3 * w2 - 4 * w + 1
        d01 = (6 * w - 6 * w2) / dt
        d11 = 3 * w2 - 2 * w
        vel = (
            d00[:, None] * x0
            + d10[:, None] * v0
            + d01[:, None] * x1
            + d11[:, None] * v1
        )
        return pos, vel


def _cross(u, v):
    return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]


def _newton_refine(table, ta, tb, s, t, eps_int, iters=10):
    """Polish crossing seeds (s on ta, t on tb) to chart residual <= eps/10."""
    tau_a = table.tau[ta]
    tau_b = table.tau[tb]
    for _ in range(iters):
        pa, va = table.eval(ta, s)
        pb, vb = table.eval(tb, t)
        F = pa - pb
        det = -va[:, 0] * vb[:, 1] + va[:, 1] * vb[:, 0]
        det = np.where(np.abs(det) < 1e-14, np.inf, det)
        ds = (vb[:, 0] * F[:, 1] - vb[:, 1] * F[:, 0]) / det
        dt = (va[:, 0] * F[:, 1] - va[:, 1] * F[:, 0]) / det
        s = np.clip(s - ds, 0.0, tau_a)
        t = np.clip(t - dt, 0.0, tau_b)
    pa, va = table.eval(ta, s)
    pb, vb = table.eval(tb, t)
    resid = np.linalg.norm(pa - pb, axis=-1)
    ok = resid <= eps_int / 10.0
    sin_angle = np.abs(_cross(va, vb)) / np.maximum(
        np.linalg.norm(va, axis=-1) * np.linalg.norm(vb, axis=-1), 1e-300
    )
    point = 0.5 * (pa + pb)
    return s, t, point, ok, sin_angle < TANGENTIAL_SIN


def _overlap_records(table, pair_a, pair_b, sa0, sa1, tb_init0, tb_init1, eps_int):
    """Dense projection records for near-coincident (same-geodesic) windows.

    For every fine sample of trace a inside [sa0, sa1], project onto trace b
    starting from the window's linear parameter estimate and polish with a
    few Gauss-Newton steps.
    """
    h = table.h
    k0 = np.ceil(sa0 / h - 1e-9).astype(np.int64)
    k1 = np.floor(sa1 / h + 1e-9).astype(np.int64)
    k0 = np.maximum(k0, 0)
    k1 = np.minimum(k1, table.n[pair_a] - 1)
    counts = np.maximum(k1 - k0 + 1, 0)
    total = int(counts.sum())
    if total == 0:
        return None
    win = np.repeat(np.arange(len(pair_a)), counts)
    cum = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ks = np.arange(total) - np.repeat(cum, counts) + k0[win]

    ta = pair_a[win]
    tb = pair_b[win]
    s = ks * h
    s = np.minimum(s, table.tau[ta])
    span = np.maximum(sa1[win] - sa0[win], 1e-300)
    frac = np.clip((s - sa0[win]) / span, 0.0, 1.0)
    t = tb_init0[win] + frac * (tb_init1[win] - tb_init0[win])

    # one sample may fall in two adjacent windows
    key_s = np.round(s / (0.5 * h)).astype(np.int64)
    packed = np.stack([ta, tb, key_s])
    _, uniq = np.unique(packed, axis=1, return_index=True)
    uniq = np.sort(uniq)
    s, t, ta, tb = s[uniq], t[uniq], ta[uniq], tb[uniq]

    tau_b = table.tau[tb]
    pa_pos, _ = table.eval(ta, s)
    for _ in range(6):
        pb, vb = table.eval(tb, t)
        num = np.sum((pb - pa_pos) * vb, axis=-1)
        den = np.maximum(np.sum(vb * vb, axis=-1), 1e-300)
        t = np.clip(t - num / den, 0.0, tau_b)
    pb, _ = table.eval(tb, t)
    resid = np.linalg.norm(pa_pos - pb, axis=-1)
    ok = resid <= eps_int
    return ta[ok], tb[ok], s[ok], t[ok], 0.5 * (pa_pos[ok] + pb[ok])


def intersect_all(
    traces: list,
    eps_int: float = DEFAULT_EPS_INT,
    seg_stride: int = 8,
    include_self: bool = True,
    chunk: int = 4_000_000,
) -> IntersectionSet:
    """All refined pairwise intersections of the given traces.

    Broad phase on coarse chords (``seg_stride`` fine steps each) through a
    uniform hash grid, then Newton refinement on the fine Hermite
    interpolants.  Near-parallel near-coincident windows are routed to the
    dense-run projection path and flagged tangential.
    """
    live = [tr for tr in traces if len(tr.t) >= 2]
    if len(live) < 1:
        return _empty_set()
    table = _TraceTable(traces)
    p0, p1, s0, s1, tid, seg_pos = _coarse_segments(traces, seg_stride)
    ca, cb = _candidate_pairs(
        p0, p1, tid, seg_pos, include_self, margin=max(eps_int, 1e-9)
    )

    rec_a, rec_b, rec_s, rec_t = [], [], [], []
    rec_p, rec_tan = [], []
    ov_a, ov_b, ov_sa0, ov_sa1, ov_t0, ov_t1 = [], [], [], [], [], []

    for lo in range(0, len(ca), chunk):
        a = ca[lo : lo + chunk]
        b = cb[lo : lo + chunk]
        A0, A1 = p0[a], p1[a]
        B0, B1 = p0[b], p1[b]
        r = A1 - A0
        q = B1 - B0
        d = B0 - A0
        denom = _cross(r, q)
        r_len = np.linalg.norm(r, axis=-1)
        q_len = np.linalg.norm(q, axis=-1)
        parallel = np.abs(denom) <= 1e-9 * np.maximum(r_len * q_len, 1e-300)

        with np.errstate(divide="ignore", invalid="ignore"):
            tt = _cross(d, q) / denom
            uu = _cross(d, r) / denom
        margin = 0.25
        crossing = (
            ~parallel
            & (tt >= -margin)
            & (tt <= 1.0 + margin)
            & (uu >= -margin)
            & (uu <= 1.0 + margin)
        )
        if crossing.any():
            ai, bi = a[crossing], b[crossing]
            s_seed = s0[ai] + np.clip(tt[crossing], 0.0, 1.0) * (s1[ai] - s0[ai])
            t_seed = s0[bi] + np.clip(uu[crossing], 0.0, 1.0) * (s1[bi] - s0[bi])
            s_r, t_r, pnt, ok, tang = _newton_refine(
                table, tid[ai], tid[bi], s_seed, t_seed, eps_int
            )
            rec_a.append(tid[ai][ok])
            rec_b.append(tid[bi][ok])
            rec_s.append(s_r[ok])
            rec_t.append(t_r[ok])
            rec_p.append(pnt[ok])
            rec_tan.append(tang[ok])

        # near-coincident parallel windows: distance of B's endpoints to A
        if parallel.any():
            ai, bi = a[parallel], b[parallel]
            rp = r[parallel]
            rl = np.maximum(r_len[parallel], 1e-300)
            dist0 = np.abs(_cross(d[parallel], rp)) / rl
            d1 = B1[parallel] - A0[parallel]
            dist1 = np.abs(_cross(d1, rp)) / rl
            f0 = np.sum(d[parallel] * rp, axis=-1) / (rl * rl)
            f1 = np.sum(d1 * rp, axis=-1) / (rl * rl)
            overlapping = (
                (np.maximum(dist0, dist1) <= eps_int)
                & (np.maximum(f0, f1) >= -0.05)
                & (np.minimum(f0, f1) <= 1.05)
            )
            if overlapping.any():
                ai, bi = ai[overlapping], bi[overlapping]
                g0 = np.clip(f0[overlapping], 0.0, 1.0)
                g1 = np.clip(f1[overlapping], 0.0, 1.0)
                # window on a covered by b, with b's params at the ends
                ov_a.append(tid[ai])
                ov_b.append(tid[bi])
                ov_sa0.append(s0[ai] + np.minimum(g0, g1) * (s1[ai] - s0[ai]))
                ov_sa1.append(s0[ai] + np.maximum(g0, g1) * (s1[ai] - s0[ai]))
                t_at_g0 = s0[bi]
                t_at_g1 = s1[bi]
                swap = g1 < g0
                ov_t0.append(np.where(swap, t_at_g1, t_at_g0))
                ov_t1.append(np.where(swap, t_at_g0, t_at_g1))

    if ov_a:
        out = _overlap_records(
            table,
            np.concatenate(ov_a),
            np.concatenate(ov_b),
            np.concatenate(ov_sa0),
            np.concatenate(ov_sa1),
            np.concatenate(ov_t0),
            np.concatenate(ov_t1),
            eps_int,
        )
        if out is not None:
            oa, ob, os_, ot, op = out
            rec_a.append(oa)
            rec_b.append(ob)
            rec_s.append(os_)
            rec_t.append(ot)
            rec_p.append(op)
            rec_tan.append(np.ones(len(oa), dtype=bool))

    if not rec_a:
        return _empty_set()
    A = np.concatenate(rec_a)
    B = np.concatenate(rec_b)
    S = np.concatenate(rec_s)
    T = np.concatenate(rec_t)
    P = np.concatenate(rec_p)
    G = np.concatenate(rec_tan)

    swap = A > B
    A2 = np.where(swap, B, A)
    B2 = np.where(swap, A, B)
    S2 = np.where(swap, T, S)
    T2 = np.where(swap, S, T)
    A, B, S, T = A2, B2, S2, T2

    self_rows = A == B
    if self_rows.any():
        s_lo = np.where(self_rows, np.minimum(S, T), S)
        t_hi = np.where(self_rows, np.maximum(S, T), T)
        S, T = s_lo, t_hi
        diag = self_rows & (T - S <= 10 * table.h)
        A, B, S, T, P, G = A[~diag], B[~diag], S[~diag], T[~diag], P[~diag], G[~diag]

    return _dedup(A, B, S, T, P, G, eps_int)


def _empty_set():
    return IntersectionSet(
        a=np.empty(0, np.int64),
        b=np.empty(0, np.int64),
        s=np.empty(0),
        t=np.empty(0),
        point=np.empty((0, 2)),
        tangential=np.empty(0, dtype=bool),
    )


def _dedup(A, B, S, T, P, G, eps_int):
    """Merge records of one pair within eps_int in both parameters."""
    order = np.lexsort((T, S, B, A))
    A, B, S, T, P, G = A[order], B[order], S[order], T[order], P[order], G[order]
    new = np.ones(len(A), dtype=bool)
    if len(A) > 1:
        same_pair = (A[1:] == A[:-1]) & (B[1:] == B[:-1])
        close = (
            same_pair
            & (np.abs(S[1:] - S[:-1]) <= eps_int)
            & (np.abs(T[1:] - T[:-1]) <= eps_int)
        )
        new[1:] = ~close
    cluster = np.cumsum(new) - 1
    n_cl = cluster[-1] + 1 if len(cluster) else 0
    counts = np.bincount(cluster, minlength=n_cl)
    S_m = np.bincount(cluster, weights=S, minlength=n_cl) / counts
    T_m = np.bincount(cluster, weights=T, minlength=n_cl) / counts
    Px = np.bincount(cluster, weights=P[:, 0], minlength=n_cl) / counts
    Py = np.bincount(cluster, weights=P[:, 1], minlength=n_cl) / counts
    firsts = np.flatnonzero(new)
    tang = np.logical_and.reduceat(G, firsts) if len(G) else G
    return IntersectionSet(
        a=A[firsts],
        b=B[firsts],
        s=S_m,
        t=T_m,
        point=np.column_stack([Px, Py]),
        tangential=tang,
    )


def intersect_traces(
    a, b, eps_int: float = DEFAULT_EPS_INT, seg_stride: int = 8
) -> list:
    """Refined intersections of two traces (self-intersections when a is b)."""
    if a is b or a.id == b.id:
        result = _relabel_and_intersect([a], eps_int, seg_stride, include_self=True)
        remap = {0: a.id}
    else:
        result = _relabel_and_intersect([a, b], eps_int, seg_stride, include_self=False)
        remap = {0: a.id, 1: b.id}
    recs = result.records()
    for r in recs:
        r.a = remap[r.a]
        r.b = remap[r.b]
    return recs


def _relabel_and_intersect(traces, eps_int, seg_stride, include_self):
    import copy

    tmp = []
    for i, tr in enumerate(traces):
        c = copy.copy(tr)
        c.source = type(tr.source)(
            id=i,
            u=tr.source.u,
            theta=tr.source.theta,
            base_point=tr.source.base_point,
            direction=tr.source.direction,
        )
        tmp.append(c)
    return intersect_all(tmp, eps_int, seg_stride, include_self=include_self)


# ---------------------------------------------------------------------------
# data sets
# ---------------------------------------------------------------------------


def build_collision_data(
    intersections: IntersectionSet, eps_D: float = DEFAULT_EPS_D
) -> DelayedCollisionSet:
    """Synthesize first-collision data from refined intersections.

    Each crossing (s on v, t on w) with t >= s yields a candidate
    (v, w, s, t - s); candidates of one ordered pair whose delays agree
    within eps_D form a bin, and only the smallest s survives.
    """
    A, B, S, T = intersections.a, intersections.b, intersections.s, intersections.t
    fwd = T >= S
    bwd = S >= T
    v = np.concatenate([A[fwd], B[bwd]])
    w = np.concatenate([B[fwd], A[bwd]])
    s = np.concatenate([S[fwd], T[bwd]])
    D = np.concatenate([(T - S)[fwd], (S - T)[bwd]])

    order = np.lexsort((s, D, w, v))
    v, w, s, D = v[order], w[order], s[order], D[order]
    new_bin = np.ones(len(v), dtype=bool)
    if len(v) > 1:
        same = (v[1:] == v[:-1]) & (w[1:] == w[:-1])
        new_bin[1:] = ~(same & (np.abs(D[1:] - D[:-1]) <= eps_D))
    bin_id = np.cumsum(new_bin) - 1
    order2 = np.lexsort((s, bin_id))
    first = np.ones(len(v), dtype=bool)
    first[1:] = bin_id[order2][1:] != bin_id[order2][:-1]
    keep = np.sort(order2[first])
    v, w, s, D = v[keep], w[keep], s[keep], D[keep]

    order3 = np.lexsort((D, s, w, v))
    return DelayedCollisionSet(
        v=v[order3], w=w[order3], s=s[order3], D=D[order3], eps_D=eps_D
    )


def build_boundary_relation_forward(intersections: IntersectionSet) -> BoundaryRelation:
    """Ground-truth stitching boundary relation: both orders of each record."""
    A, B, S, T = intersections.a, intersections.b, intersections.s, intersections.t
    v = np.concatenate([A, B])
    w = np.concatenate([B, A])
    s = np.concatenate([S, T])
    t = np.concatenate([T, S])
    order = np.lexsort((t, s, w, v))
    return BoundaryRelation(v=v[order], w=w[order], s=s[order], t=t[order])


def _witnessed_mask(B: BoundaryRelation, D: DelayedCollisionSet, tol: float):
    """For every relation row, is it realized as a first collision."""
    out = np.zeros(len(B.v), dtype=bool)
    half = B.t >= B.s - tol
    out[half] = _match_side(B.v[half], B.w[half], B.s[half], B.t[half] - B.s[half], D, tol)
    other = B.s >= B.t - tol
    out[other] |= _match_side(
        B.w[other], B.v[other], B.t[other], B.s[other] - B.t[other], D, tol
    )
    return out


def _match_side(qv, qw, qs, qD, D: DelayedCollisionSet, tol):
    """Does (qv, qw, qs, qD) appear in D within tol on s and D."""
    if len(D.v) == 0 or len(qv) == 0:
        return np.zeros(len(qv), dtype=bool)
    n_ids = int(max(D.v.max(), D.w.max(), qv.max(), qw.max())) + 1
    # pack (pair, quantized s) into one sortable int64 key; quantum well
    # below tol so the window is conservative, exact checks follow
    quant = tol / 64.0
    s_cap = float(max(D.s.max(), qs.max())) + 4 * tol
    n_q = int(s_cap / quant) + 4
    pair_d = D.v.astype(np.int64) * n_ids + D.w
    key_d = pair_d * n_q + np.minimum((D.s / quant).astype(np.int64), n_q - 1)
    pair_q = qv.astype(np.int64) * n_ids + qw
    lo = np.searchsorted(
        key_d, pair_q * n_q + np.maximum(((qs - tol) / quant).astype(np.int64) - 1, 0)
    )
    hi = np.searchsorted(
        key_d,
        pair_q * n_q
        + np.minimum(((qs + tol) / quant).astype(np.int64) + 2, n_q - 1),
        side="right",
    )
    matched = np.zeros(len(qv), dtype=bool)
    width = hi - lo
    for off in range(int(width.max(initial=0))):
        idx = lo + off
        valid = idx < hi
        ix = idx[valid]
        hit = np.zeros(len(qv), dtype=bool)
        hit[valid] = (np.abs(D.s[ix] - qs[valid]) <= tol) & (
            np.abs(D.D[ix] - qD[valid]) <= tol
        )
        matched |= hit
    return matched


def is_generically_delayed(
    v: int,
    w: int,
    B: BoundaryRelation,
    D: DelayedCollisionSet,
    tol: float = DEFAULT_EPS_D,
):
    """Check whether every meeting of the ordered pair is a first collision.

    Returns (flag, hidden) where hidden lists the (s, t) meetings that no
    delayed-collision entry witnesses.
    """
    lo, hi = B.pair_rows(v, w)
    if hi == lo:
        return True, []
    sub = BoundaryRelation(
        v=B.v[lo:hi], w=B.w[lo:hi], s=B.s[lo:hi], t=B.t[lo:hi]
    )
    mask = _witnessed_mask(sub, D, tol)
    hidden = [(float(s), float(t)) for s, t in zip(sub.s[~mask], sub.t[~mask])]
    return not hidden, hidden


@dataclass
class ConfirmationReport:
    n_entries: int
    n_confirmed: int
    fraction: float
    n_hidden: int
    n_bad_pairs: int
    unconfirmed: list

    def to_dict(self):
        return {
            "n_entries": self.n_entries,
            "n_confirmed": self.n_confirmed,
            "fraction": self.fraction,
            "n_hidden": self.n_hidden,
            "n_bad_pairs": self.n_bad_pairs,
            "unconfirmed": self.unconfirmed[:100],
        }


def confirms_intersections_report(
    traces: list,
    B: BoundaryRelation,
    D: DelayedCollisionSet,
    intersections: IntersectionSet,
    eps_int: float = DEFAULT_EPS_INT,
    tol: float = DEFAULT_EPS_D,
    max_listed: int = 100,
) -> ConfirmationReport:
    """Empirical check of the confirming-geodesic hypothesis.

    An entry (v, w, s, t) is confirmed when some fan trace z passes within
    eps_int of the meeting point (transversally) and both (v, z) and (w, z)
    are generically delayed pairs.
    """
    from scipy.spatial import cKDTree

    witnessed = _witnessed_mask(B, D, tol)
    bad_rows = ~witnessed
    bad_pairs = set()
    for v, w in zip(B.v[bad_rows], B.w[bad_rows]):
        bad_pairs.add((int(v), int(w)))
        bad_pairs.add((int(w), int(v)))

    # marks: every (trace, point) incidence from the refined intersections
    keep = ~intersections.tangential
    mark_trace = np.concatenate([intersections.a[keep], intersections.b[keep]])
    mark_pts = np.concatenate([intersections.point[keep], intersections.point[keep]])
    if len(mark_pts) == 0:
        return ConfirmationReport(len(B.v), 0, 0.0, int(bad_rows.sum()), len(bad_pairs) // 2, [])
    tree = cKDTree(mark_pts)

    table = _TraceTable(traces)
    pts, _ = table.eval(B.v, B.s)
    neighbor_lists = tree.query_ball_point(pts, eps_int, workers=-1)

    confirmed = np.zeros(len(B.v), dtype=bool)
    unconfirmed = []
    for i in range(len(B.v)):
        v_i, w_i = int(B.v[i]), int(B.w[i])
        ok = False
        for m in neighbor_lists[i]:
            z = int(mark_trace[m])
            if (v_i, z) in bad_pairs or (w_i, z) in bad_pairs:
                continue
            ok = True
            break
        confirmed[i] = ok
        if not ok and len(unconfirmed) < max_listed:
            unconfirmed.append((v_i, w_i, float(B.s[i]), float(B.t[i])))
    n_conf = int(confirmed.sum())
    return ConfirmationReport(
        n_entries=len(B.v),
        n_confirmed=n_conf,
        fraction=n_conf / max(len(B.v), 1),
        n_hidden=int(bad_rows.sum()),
        n_bad_pairs=len(bad_pairs) // 2,
        unconfirmed=unconfirmed,
    )
