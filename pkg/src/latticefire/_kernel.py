"""Event engine shared by single runs and coupled pairs.

State lives in a ``Core`` namedtuple of numpy arrays.  Compiled helpers take
the arrays as separate arguments rather than the tuple, because numba
reference-counts every tuple member on each call.

Each particle owns two queue slots: slot ``2p`` holds its next jump time and
slot ``2p + 1`` its next recovery mark (scheduled only while infected, since
marks on healthy particles are no-ops).  Ties break by
``(time, particle, kind)``, i.e. by slot number.

Walk draws of a particle: draw ``2k`` is the holding time before jump ``k``
and draw ``2k + 1`` its direction.  Mark draw ``k`` is the ``k``-th gap
between marks.  ``walk_path`` replays exactly these draws.

Functions that cannot finish (grid too small, buffer full) return a status
before touching the state so the caller can grow storage and resume.
"""
from __future__ import annotations

import math
from collections import namedtuple

import numba as nb
import numpy as np

from .rng import draw_uniform

Core = namedtuple("Core", [
    "ip", "fp", "sc", "si", "pos", "pi", "pf", "sid", "grid",
    "qh", "ql", "qk", "geo", "ivl", "log_t", "log_i",
])

# ip: integer parameters
IP_D, IP_VARIANT, IP_REGIME, IP_PERIODIC, IP_CHECK, IP_STOP_EXTINCT, IP_LOG, IP_ORIGIN, IP_N, IP_QSHIFT = range(10)
# fp: float parameters
FP_LAM = 0
# sc: float scalars
SC_TIME, SC_EXTINCT_AT, SC_VIOLATION_T = range(3)
# si: integer scalars
SI_NINF, SI_CONTAM, SI_ORIGIN_ON, SI_NIVL, SI_NEVENTS, SI_NLOG, SI_VIOLATION, SI_PENDING, SI_QCUR, SI_QN = range(10)
# pi columns (per particle)
P_SITE, P_JK, P_MK, P_NXT, P_PRV, P_INF = range(6)
# pf columns
F_TJ, F_TM = 0, 1
# sid columns
S_WALK, S_MARK = 0, 1
# grid columns (per stored site)
G_COUNT, G_ICOUNT, G_HEAD, G_SHELL = range(4)
# geo rows
GEO_LO, GEO_SHAPE, GEO_STRIDE = range(3)

VARIANT_CONTACT, VARIANT_JUMP = 0, 1
REGIME_NONE, REGIME_RATE, REGIME_INSTANT = 0, 1, 2

OK, MAX_EVENTS, OUT_OF_GRID, IVL_FULL, LOG_FULL, VIOLATION, EXTINCT, CORRUPT = range(8)

V_PURITY, V_LONE_INFECTED, V_COUNT, V_CONSERVATION, V_DOMINANCE, V_CONTAINMENT = range(1, 7)


# -- calendar queue ----------------------------------------------------------------
# Slot s with finite key k lives in bucket int(k * 2**IP_QSHIFT) of a ring of
# power-of-two size; each bucket is a doubly linked list (ql[s, 0] next,
# ql[s, 1] prev, ql[s, 0] == -2 when not queued).  SI_QCUR is the bucket of
# the current time, so extraction scans a bucket or two.  Order is exactly
# (key, slot), as with a heap.

@nb.njit(cache=True, _nrt=False, inline="always")
def _bucket(ip, key):
    return int(key * float(1 << ip[IP_QSHIFT]))


@nb.njit(cache=True, _nrt=False, inline="always")
def _qinsert(ip, si, qh, ql, qk, slot, key):
    qk[slot] = key
    if not key < np.inf:
        ql[slot, 0] = -2
        return
    b = _bucket(ip, key)
    if b < si[SI_QCUR]:
        si[SI_QCUR] = b
    r = b & (qh.shape[0] - 1)
    h = qh[r]
    ql[slot, 0] = h
    ql[slot, 1] = -1
    if h >= 0:
        ql[h, 1] = slot
    qh[r] = slot
    si[SI_QN] += 1


@nb.njit(cache=True, _nrt=False, inline="always")
def _qremove(ip, si, qh, ql, qk, slot):
    nx = ql[slot, 0]
    if nx == -2:
        return
    pv = ql[slot, 1]
    if pv >= 0:
        ql[pv, 0] = nx
    else:
        qh[_bucket(ip, qk[slot]) & (qh.shape[0] - 1)] = nx
    if nx >= 0:
        ql[nx, 1] = pv
    ql[slot, 0] = -2
    si[SI_QN] -= 1


@nb.njit(cache=True, _nrt=False, inline="always")
def qupdate(ip, si, qh, ql, qk, slot, key):
    _qremove(ip, si, qh, ql, qk, slot)
    _qinsert(ip, si, qh, ql, qk, slot, key)


@nb.njit(cache=True, _nrt=False)
def qbuild(ip, si, qh, ql, qk, keys):
    """Fill the queue from ``keys`` indexed by slot."""
    qh[:] = -1
    si[SI_QN] = 0
    si[SI_QCUR] = 0
    for s in range(keys.shape[0]):
        ql[s, 0] = -2
    for s in range(keys.shape[0]):
        _qinsert(ip, si, qh, ql, qk, s, keys[s])
    if si[SI_QN] > 0:
        si[SI_QCUR] = _bucket(ip, qk[qmin(ip, si, qh, ql, qk)])


@nb.njit(cache=True, _nrt=False, inline="always")
def qmin(ip, si, qh, ql, qk):
    """Slot with the smallest (key, slot), or -1 when nothing is scheduled."""
    if si[SI_QN] == 0:
        return -1
    mask = qh.shape[0] - 1
    cb = si[SI_QCUR]
    for _ in range(qh.shape[0]):
        best = -1
        bk = np.inf
        s = qh[cb & mask]
        while s >= 0:
            k = qk[s]
            if _bucket(ip, k) == cb and (k < bk or (k == bk and s < best)):
                best = s
                bk = k
            s = ql[s, 0]
        if best >= 0:
            si[SI_QCUR] = cb
            return best
        cb += 1
    # nothing within one lap of the ring: direct search
    best = -1
    bk = np.inf
    for s in range(qk.shape[0]):
        if ql[s, 0] != -2 and qk[s] < bk:
            best = s
            bk = qk[s]
    si[SI_QCUR] = _bucket(ip, bk)
    return best


@nb.njit(cache=True, _nrt=False)
def peek(ip, si, qh, ql, qk):
    s = qmin(ip, si, qh, ql, qk)
    return np.inf if s < 0 else qk[s]


# -- occupation grid --------------------------------------------------------------

@nb.njit(cache=True, _nrt=False)
def grid_index(geo, coords):
    idx = 0
    for a in range(geo.shape[1]):
        r = coords[a] - geo[GEO_LO, a]
        if r < 0 or r >= geo[GEO_SHAPE, a]:
            return -1
        idx += r * geo[GEO_STRIDE, a]
    return idx


@nb.njit(cache=True, _nrt=False, inline="always")
def link(grid, pi, p, s):
    h = grid[s, G_HEAD]
    pi[p, P_NXT] = h
    pi[p, P_PRV] = -1
    if h >= 0:
        pi[h, P_PRV] = p
    grid[s, G_HEAD] = p
    grid[s, G_COUNT] += 1
    if pi[p, P_INF]:
        grid[s, G_ICOUNT] += 1


@nb.njit(cache=True, _nrt=False, inline="always")
def unlink(grid, pi, p, s):
    a = pi[p, P_PRV]
    b = pi[p, P_NXT]
    if a >= 0:
        pi[a, P_NXT] = b
    else:
        grid[s, G_HEAD] = b
    if b >= 0:
        pi[b, P_PRV] = a
    grid[s, G_COUNT] -= 1
    if pi[p, P_INF]:
        grid[s, G_ICOUNT] -= 1


# -- infection and recovery --------------------------------------------------------

@nb.njit(cache=True, _nrt=False, inline="always")
def _next_mark(fp, pi, pf, sid, p):
    pi[p, P_MK] += 1
    pf[p, F_TM] += -math.log(draw_uniform(sid[p, S_MARK], pi[p, P_MK])) / fp[FP_LAM]


@nb.njit(cache=True, _nrt=False)
def infect(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p, t):
    if pi[p, P_INF]:
        return
    pi[p, P_INF] = 1
    grid[pi[p, P_SITE], G_ICOUNT] += 1
    si[SI_NINF] += 1
    if ip[IP_REGIME] == REGIME_RATE:
        while pf[p, F_TM] <= t:
            _next_mark(fp, pi, pf, sid, p)
        qupdate(ip, si, qh, ql, qk, 2 * p + 1, pf[p, F_TM])


@nb.njit(cache=True, _nrt=False)
def heal(ip, si, pi, grid, qh, ql, qk, p):
    if not pi[p, P_INF]:
        return
    pi[p, P_INF] = 0
    grid[pi[p, P_SITE], G_ICOUNT] -= 1
    si[SI_NINF] -= 1
    if ip[IP_REGIME] == REGIME_RATE:
        qupdate(ip, si, qh, ql, qk, 2 * p + 1, np.inf)


@nb.njit(cache=True, _nrt=False)
def resolve_alone(ip, si, pi, grid, qh, ql, qk, s):
    """Instantaneous recovery: a lone infected particle heals."""
    if grid[s, G_COUNT] == 1 and grid[s, G_ICOUNT] == 1:
        heal(ip, si, pi, grid, qh, ql, qk, grid[s, G_HEAD])


@nb.njit(cache=True, _nrt=False, inline="always")
def relocate(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p, s_to, t):
    """Move ``p`` to stored site ``s_to`` and apply the infection and instantaneous rules."""
    s_from = pi[p, P_SITE]
    unlink(grid, pi, p, s_from)
    pi[p, P_SITE] = s_to
    link(grid, pi, p, s_to)
    if pi[p, P_INF]:
        if grid[s_to, G_ICOUNT] < grid[s_to, G_COUNT]:
            q = grid[s_to, G_HEAD]
            while q >= 0:
                infect(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, q, t)
                q = pi[q, P_NXT]
    elif grid[s_to, G_ICOUNT] > 0:
        infect(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p, t)
    if ip[IP_REGIME] == REGIME_INSTANT:
        resolve_alone(ip, si, pi, grid, qh, ql, qk, s_from)
        resolve_alone(ip, si, pi, grid, qh, ql, qk, s_to)
    if grid[s_to, G_ICOUNT] > 0 and grid[s_to, G_SHELL]:
        si[SI_CONTAM] = 1


@nb.njit(cache=True, _nrt=False)
def move(ip, fp, si, pos, pi, pf, sid, grid, qh, ql, qk, geo, p, coords, t):
    """Place ``p`` on ``coords``; OUT_OF_GRID, without side effects, if that site is not stored."""
    s_to = grid_index(geo, coords)
    if s_to < 0:
        si[SI_PENDING] = p
        return OUT_OF_GRID
    relocate(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p, s_to, t)
    for a in range(pos.shape[1]):
        pos[p, a] = coords[a]
    return OK


@nb.njit(cache=True, _nrt=False)
def apply_mark(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p):
    """Recovery mark of ``p``; a no-op on healthy particles."""
    if not pi[p, P_INF]:
        return
    if ip[IP_VARIANT] == VARIANT_JUMP or grid[pi[p, P_SITE], G_COUNT] == 1:
        heal(ip, si, pi, grid, qh, ql, qk, p)
    else:
        _next_mark(fp, pi, pf, sid, p)
        qupdate(ip, si, qh, ql, qk, 2 * p + 1, pf[p, F_TM])


# -- invariants ------------------------------------------------------------------

@nb.njit(cache=True, _nrt=False)
def site_ok(ip, grid, s):
    k = grid[s, G_COUNT]
    i = grid[s, G_ICOUNT]
    if i < 0 or i > k:
        return V_COUNT
    if ip[IP_VARIANT] == VARIANT_CONTACT and i != 0 and i != k:
        return V_PURITY
    if ip[IP_REGIME] == REGIME_INSTANT and k == 1 and i == 1:
        return V_LONE_INFECTED
    return 0


@nb.njit(cache=True, _nrt=False)
def check_all(ip, grid):
    total = 0
    for s in range(grid.shape[0]):
        v = site_ok(ip, grid, s)
        if v:
            return v
        total += grid[s, G_COUNT]
    if total != ip[IP_N]:
        return V_CONSERVATION
    return 0


@nb.njit(cache=True, _nrt=False, inline="always")
def update_origin(ip, si, grid, ivl, t):
    on = 1 if grid[ip[IP_ORIGIN], G_ICOUNT] > 0 else 0
    if on != si[SI_ORIGIN_ON]:
        k = si[SI_NIVL]
        if on == 1:
            ivl[k, 0] = t
            ivl[k, 1] = np.nan
        else:
            ivl[k, 1] = t
            si[SI_NIVL] = k + 1
        si[SI_ORIGIN_ON] = on


@nb.njit(cache=True, _nrt=False, inline="always")
def note_extinction(ip, sc, si, t):
    if si[SI_NINF] == 0 and np.isnan(sc[SC_EXTINCT_AT]):
        sc[SC_EXTINCT_AT] = t
        return ip[IP_STOP_EXTINCT] == 1
    return False


# -- event loop --------------------------------------------------------------------

@nb.njit(cache=True, _nrt=False, inline="always")
def step(ip, fp, sc, si, pos, pi, pf, sid, grid, qh, ql, qk, geo, ivl, log_t, log_i, slot):
    """Process the event of ``slot``, which must be the earliest pending one."""
    if si[SI_NIVL] + 1 >= ivl.shape[0]:
        return IVL_FULL
    if ip[IP_LOG] == 1 and si[SI_NLOG] >= log_t.shape[0]:
        return LOG_FULL
    t = qk[slot]
    if t < sc[SC_TIME] or not t < np.inf:
        return CORRUPT
    p = slot >> 1
    jump = (slot & 1) == 0
    s_from = pi[p, P_SITE]
    direction = -1
    if jump:
        direction = int(draw_uniform(sid[p, S_WALK], 2 * pi[p, P_JK] + 1) * 2 * pos.shape[1])
        axis = direction >> 1
        old = pos[p, axis]
        new = old + 1 if (direction & 1) == 0 else old - 1
        lo = geo[GEO_LO, axis]
        side = geo[GEO_SHAPE, axis]
        if ip[IP_PERIODIC] == 1:
            new = lo + (new - lo) % side
        elif new < lo or new >= lo + side:
            si[SI_PENDING] = p
            return OUT_OF_GRID
        relocate(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p,
                 s_from + (new - old) * geo[GEO_STRIDE, axis], t)
        pos[p, axis] = new
        pi[p, P_JK] += 1
        pf[p, F_TJ] += -math.log(draw_uniform(sid[p, S_WALK], 2 * pi[p, P_JK]))
        qupdate(ip, si, qh, ql, qk, 2 * p, pf[p, F_TJ])
    else:
        apply_mark(ip, fp, si, pi, pf, sid, grid, qh, ql, qk, p)
    sc[SC_TIME] = t
    si[SI_NEVENTS] += 1
    if ip[IP_LOG] == 1:
        k = si[SI_NLOG]
        log_t[k] = t
        log_i[k, 0] = p
        log_i[k, 1] = 0 if jump else 1
        log_i[k, 2] = direction
        log_i[k, 3] = pi[p, P_INF]
        log_i[k, 4] = si[SI_NINF]
        si[SI_NLOG] = k + 1
    update_origin(ip, si, grid, ivl, t)
    mode = ip[IP_CHECK]
    v = 0
    if mode == 1:
        v = site_ok(ip, grid, s_from)
        if v == 0:
            v = site_ok(ip, grid, pi[p, P_SITE])
    elif mode == 2:
        v = check_all(ip, grid)
    if v:
        si[SI_VIOLATION] = v
        sc[SC_VIOLATION_T] = t
        return VIOLATION
    if note_extinction(ip, sc, si, t):
        return EXTINCT
    return OK


@nb.njit(cache=True, _nrt=False)
def advance(ip, fp, sc, si, pos, pi, pf, sid, grid, qh, ql, qk, geo, ivl, log_t, log_i,
            t_end, max_events):
    """Process events with time <= t_end, at most ``max_events`` (-1: no cap)."""
    done = 0
    while True:
        if ip[IP_STOP_EXTINCT] == 1 and si[SI_NINF] == 0:
            return EXTINCT
        if max_events >= 0 and done >= max_events:
            return MAX_EVENTS
        slot = qmin(ip, si, qh, ql, qk)
        t = np.inf if slot < 0 else qk[slot]
        if t > t_end:
            if t_end > sc[SC_TIME]:
                sc[SC_TIME] = t_end
            return OK
        st = step(ip, fp, sc, si, pos, pi, pf, sid, grid, qh, ql, qk, geo, ivl, log_t, log_i, slot)
        if st != OK:
            return st
        done += 1


# -- coupled pairs ---------------------------------------------------------------

@nb.njit(cache=True, _nrt=False)
def pair_violation(pos_a, pi_a, grid_a, pos_b, pi_b, grid_b, geo_b, index_map, check_counts):
    """Check state ``a`` against state ``b`` particle by particle.

    ``index_map[p]`` is the index in ``b`` of particle ``p`` of ``a``.
    Shared particles must sit on the same site, infection in ``a`` must imply
    infection in ``b`` and, with ``check_counts``, every site's occupation in
    ``a`` must not exceed that in ``b``.
    """
    d = pos_a.shape[1]
    for p in range(pos_a.shape[0]):
        q = index_map[p]
        for a in range(d):
            if pos_a[p, a] != pos_b[q, a]:
                return V_DOMINANCE
        if pi_a[p, P_INF] and not pi_b[q, P_INF]:
            return V_CONTAINMENT
        if check_counts:
            if grid_a[pi_a[p, P_SITE], G_COUNT] > grid_b[pi_b[q, P_SITE], G_COUNT]:
                return V_DOMINANCE
    return 0


@nb.njit(cache=True, _nrt=False)
def coupled_advance(ip_a, fp_a, sc_a, si_a, pos_a, pi_a, pf_a, sid_a, grid_a, qh_a, ql_a, qk_a,
                    geo_a, ivl_a, log_t_a, log_i_a,
                    ip_b, fp_b, sc_b, si_b, pos_b, pi_b, pf_b, sid_b, grid_b, qh_b, ql_b, qk_b,
                    geo_b, ivl_b, log_t_b, log_i_b,
                    index_map, check_counts, t_end, stats):
    """Advance two states through their merged event stream.

    The pair is checked once all events sharing a timestamp have been
    processed in both.  Returns ``(status, which)``; ``which`` names the
    state (0 or 1) needing attention for a resumable status.  ``stats[0]``
    counts the checks performed.
    """
    while True:
        sa = qmin(ip_a, si_a, qh_a, ql_a, qk_a)
        sb = qmin(ip_b, si_b, qh_b, ql_b, qk_b)
        ta = np.inf if sa < 0 else qk_a[sa]
        tb = np.inf if sb < 0 else qk_b[sb]
        t = min(ta, tb)
        if t > t_end:
            if t_end > sc_a[SC_TIME]:
                sc_a[SC_TIME] = t_end
            if t_end > sc_b[SC_TIME]:
                sc_b[SC_TIME] = t_end
            return OK, -1
        if ta == t:
            st = step(ip_a, fp_a, sc_a, si_a, pos_a, pi_a, pf_a, sid_a, grid_a, qh_a, ql_a, qk_a,
                      geo_a, ivl_a, log_t_a, log_i_a, sa)
            if st != OK:
                return st, 0
        if tb == t:
            st = step(ip_b, fp_b, sc_b, si_b, pos_b, pi_b, pf_b, sid_b, grid_b, qh_b, ql_b, qk_b,
                      geo_b, ivl_b, log_t_b, log_i_b, sb)
            if st != OK:
                return st, 1
        if peek(ip_a, si_a, qh_a, ql_a, qk_a) > t and peek(ip_b, si_b, qh_b, ql_b, qk_b) > t:
            stats[0] += 1
            v = pair_violation(pos_a, pi_a, grid_a, pos_b, pi_b, grid_b, geo_b, index_map, check_counts)
            if v:
                si_a[SI_VIOLATION] = v
                sc_a[SC_VIOLATION_T] = t
                return VIOLATION, 0


# -- path replay -----------------------------------------------------------------

@nb.njit(cache=True, inline="always")
def _shift(cur, direction, periodic, lo, side):
    axis = direction // 2
    if direction % 2 == 0:
        cur[axis] += 1
    else:
        cur[axis] -= 1
    if periodic:
        cur[axis] = lo + (cur[axis] - lo) % side


@nb.njit(cache=True)
def walk_path(wsid, start, t0, t1, periodic, lo, side):
    """Replay the walk of one particle (started at time 0) over ``[t0, t1]``.

    Returns ``(times, sites)``; the first row is the position at ``t0``.
    """
    d = start.shape[0]
    cur = start.copy()
    k = 0
    t = -math.log(draw_uniform(wsid, 0))
    while t <= t0:
        _shift(cur, int(draw_uniform(wsid, 2 * k + 1) * 2 * d), periodic, lo, side)
        k += 1
        t += -math.log(draw_uniform(wsid, 2 * k))
    cap = 16
    times = np.empty(cap, np.float64)
    sites = np.empty((cap, d), np.int64)
    times[0] = t0
    sites[0] = cur
    m = 1
    while t <= t1:
        _shift(cur, int(draw_uniform(wsid, 2 * k + 1) * 2 * d), periodic, lo, side)
        if m == cap:
            cap *= 2
            nt = np.empty(cap, np.float64)
            ns = np.empty((cap, d), np.int64)
            nt[:m] = times[:m]
            ns[:m] = sites[:m]
            times = nt
            sites = ns
        times[m] = t
        sites[m] = cur
        m += 1
        k += 1
        t += -math.log(draw_uniform(wsid, 2 * k))
    return times[:m].copy(), sites[:m].copy()


@nb.njit(cache=True)
def positions_at(wsids, starts, t, periodic, lo, side):
    """Positions at time ``t`` of walkers started at time 0 from ``starts``."""
    n, d = starts.shape
    out = starts.copy()
    for p in range(n):
        wsid = wsids[p]
        k = 0
        s = -math.log(draw_uniform(wsid, 0))
        while s <= t:
            _shift(out[p], int(draw_uniform(wsid, 2 * k + 1) * 2 * d), periodic, lo, side)
            k += 1
            s += -math.log(draw_uniform(wsid, 2 * k))
    return out


@nb.njit(cache=True)
def mark_times(msid, lam, t0, t1):
    """Recovery marks of one particle inside ``[t0, t1]``."""
    out = np.empty(8, np.float64)
    m = 0
    k = 0
    t = -math.log(draw_uniform(msid, 0)) / lam
    while t <= t1:
        if t >= t0:
            if m == out.shape[0]:
                nw = np.empty(2 * m, np.float64)
                nw[:m] = out[:m]
                out = nw
            out[m] = t
            m += 1
        k += 1
        t += -math.log(draw_uniform(msid, k)) / lam
    return out[:m].copy()
