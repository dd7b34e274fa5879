# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: hot loops of scenario sampling, storage dispatch and
boosted-tree inference.

This file is an operation-for-operation mirror of ``pure.py`` (the
semantics of record). Both backends must produce bit-identical output;
do not "optimise" a loop here in a way that reorders float arithmetic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log1p
from libc.stdint cimport int32_t, uint64_t
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef double _INV53 = 1.0 / 9007199254740992.0
cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15UL


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9UL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBUL
    return z ^ (z >> 31)


cdef inline double _next_double(uint64_t *state) nogil:
    state[0] = state[0] + _GOLDEN
    cdef uint64_t z = _mix64(state[0])
    return <double>(z >> 11) * _INV53


def thermal_trace(seed, caps, p_fail, p_repair, avail, n_hours):
    """Two-state Markov availability trace; see pure.thermal_trace."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] caps_a = np.ascontiguousarray(caps, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pf_a = np.ascontiguousarray(p_fail, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pr_a = np.ascontiguousarray(p_repair, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] av_a = np.ascontiguousarray(avail, dtype=np.float64)
    cdef int nh = int(n_hours)
    cdef int n_units = caps_a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.zeros(nh, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] delta_a = np.zeros(nh + 1, dtype=np.float64)
    cdef double[:] gv = g
    cdef double[:] deltav = delta_a
    cdef double[:] capv = caps_a
    cdef double[:] pfv = pf_a
    cdef double[:] prv = pr_a
    cdef double[:] avv = av_a
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef int i, t, end
    cdef double cap, lf, lr, lp, ratio, acc
    cdef bint up
    with nogil:
        for i in range(n_units):
            cap = capv[i]
            lf = log1p(-pfv[i]) if pfv[i] > 0.0 else 0.0
            lr = log1p(-prv[i]) if prv[i] > 0.0 else 0.0
            up = _next_double(&state) < avv[i]
            t = 0
            while t < nh:
                lp = lf if up else lr
                if lp == 0.0:
                    end = nh
                else:
                    ratio = log1p(-_next_double(&state)) / lp
                    if ratio >= <double>(nh - t):
                        end = nh
                    else:
                        end = t + 1 + <int>ratio
                if up:
                    deltav[t] += cap
                    deltav[end] -= cap
                up = not up
                t = end
        acc = 0.0
        for t in range(nh):
            acc += deltav[t]
            gv[t] = acc
    return g


def greedy_dispatch(m, power, energy, soc0, order):
    """Greedy sequential dispatch; see pure.greedy_dispatch."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_a = np.ascontiguousarray(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_a = np.ascontiguousarray(power, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_a = np.ascontiguousarray(energy, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] soc_a = np.array(soc0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ord_a = np.ascontiguousarray(order, dtype=np.int32)
    cdef int n_hours = m_a.shape[0]
    cdef int n_units = p_a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.zeros(n_hours, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c = np.zeros(n_hours, dtype=np.float64)
    cdef double[:] mv = m_a
    cdef double[:] pv = p_a
    cdef double[:] ev = e_a
    cdef double[:] socv = soc_a
    cdef int32_t[:] ordv = ord_a
    cdef double[:] sv = s
    cdef double[:] cv = c
    cdef int t, k, j
    cdef double mt, st, remaining, ch, room, d, ct
    with nogil:
        for t in range(n_hours):
            mt = mv[t]
            st = 0.0
            if mt > 0.0:
                remaining = mt
                for k in range(n_units):
                    if remaining <= 0.0:
                        break
                    j = ordv[k]
                    ch = pv[j]
                    room = ev[j] - socv[j]
                    if room < ch:
                        ch = room
                    if remaining < ch:
                        ch = remaining
                    if ch > 0.0:
                        socv[j] += ch
                        if socv[j] > ev[j]:
                            socv[j] = ev[j]
                        st += ch
                        remaining -= ch
            elif mt < 0.0:
                remaining = -mt
                for k in range(n_units):
                    if remaining <= 0.0:
                        break
                    j = ordv[k]
                    d = pv[j]
                    if socv[j] < d:
                        d = socv[j]
                    if remaining < d:
                        d = remaining
                    if d > 0.0:
                        socv[j] -= d
                        if socv[j] < 0.0:
                            socv[j] = 0.0
                        st -= d
                        remaining -= d
            sv[t] = st
            ct = -mt + st
            cv[t] = ct if ct > 0.0 else 0.0
    return (s, c, soc_a)


cdef inline void _sort_desc(double *a, int n) nogil:
    cdef int i, k
    cdef double key
    for i in range(1, n):
        key = a[i]
        k = i - 1
        while k >= 0 and a[k] < key:
            a[k + 1] = a[k]
            k -= 1
        a[k + 1] = key


cdef void _waterfill_discharge(double *soc, double *power, double need, int n,
                               double *avail, double *bps, double *out) nogil:
    cdef int j, k
    cdef double a, total, th_prev, s_prev, th, s_here, d, frac, th_star
    total = 0.0
    for j in range(n):
        a = power[j]
        if soc[j] < a:
            a = soc[j]
        avail[j] = a
        total += a
    if total <= need:
        for j in range(n):
            out[j] = avail[j]
        return
    for j in range(n):
        bps[2 * j] = soc[j] / power[j]
        bps[2 * j + 1] = (soc[j] - avail[j]) / power[j]
    _sort_desc(bps, 2 * n)
    th_prev = bps[0]
    s_prev = 0.0
    for k in range(1, 2 * n):
        th = bps[k]
        if th == th_prev:
            continue
        s_here = 0.0
        for j in range(n):
            d = soc[j] - th * power[j]
            if d < 0.0:
                d = 0.0
            if d > avail[j]:
                d = avail[j]
            s_here += d
        if s_here >= need:
            frac = (need - s_prev) / (s_here - s_prev)
            th_star = th_prev + (th - th_prev) * frac
            for j in range(n):
                d = soc[j] - th_star * power[j]
                if d < 0.0:
                    d = 0.0
                if d > avail[j]:
                    d = avail[j]
                out[j] = d
            return
        th_prev = th
        s_prev = s_here
    for j in range(n):
        out[j] = avail[j]


cdef void _waterfill_charge(double *soc, double *power, double *energy,
                            double surplus, int n, double *room,
                            double *avail, double *bps, double *out) nogil:
    # mirror of the discharge rule: equalise times-to-full, filling from
    # the largest headroom-per-power first (see pure._waterfill_charge)
    cdef int j
    cdef double r
    for j in range(n):
        r = energy[j] - soc[j]
        if r < 0.0:
            r = 0.0
        room[j] = r
    _waterfill_discharge(room, power, surplus, n, avail, bps, out)


def exact_dispatch(m, power, energy, soc0):
    """Time-to-go water-filling dispatch; see pure.exact_dispatch."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_a = np.ascontiguousarray(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_a = np.ascontiguousarray(power, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_a = np.ascontiguousarray(energy, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] soc_a = np.array(soc0, dtype=np.float64, copy=True)
    cdef int n_hours = m_a.shape[0]
    cdef int n = p_a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.zeros(n_hours, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c = np.zeros(n_hours, dtype=np.float64)
    cdef double[:] mv = m_a
    cdef double[:] pv = p_a
    cdef double[:] ev = e_a
    cdef double[:] socv = soc_a
    cdef double[:] sv = s
    cdef double[:] cv = c
    cdef double *work = <double *> malloc(5 * n * sizeof(double))
    if work == NULL:
        raise MemoryError()
    cdef double *buf = work            # avail scratch
    cdef double *room = work + n       # headroom scratch (charge mirror)
    cdef double *act = work + 2 * n    # per-unit action
    cdef double *bps = work + 3 * n    # 2n breakpoints
    cdef int t, j
    cdef double mt, st, ct, dj, cj
    with nogil:
        for t in range(n_hours):
            mt = mv[t]
            st = 0.0
            if mt < 0.0:
                _waterfill_discharge(&socv[0], &pv[0], -mt, n, buf, bps, act)
                for j in range(n):
                    dj = act[j]
                    if dj > 0.0:
                        socv[j] -= dj
                        if socv[j] < 0.0:
                            socv[j] = 0.0
                        st -= dj
            elif mt > 0.0:
                _waterfill_charge(&socv[0], &pv[0], &ev[0], mt, n, room,
                                  buf, bps, act)
                for j in range(n):
                    cj = act[j]
                    if cj > 0.0:
                        socv[j] += cj
                        if socv[j] > ev[j]:
                            socv[j] = ev[j]
                        st += cj
            sv[t] = st
            ct = -mt + st
            cv[t] = ct if ct > 0.0 else 0.0
    free(work)
    return (s, c, soc_a)


def gbt_predict_values(frames, feature, threshold, left, right, value,
                       offsets, baseline):
    """Float-threshold tree inference; see pure.gbt_predict_values."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x_a = np.ascontiguousarray(frames, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] f_a = np.ascontiguousarray(feature, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] th_a = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] l_a = np.ascontiguousarray(left, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] r_a = np.ascontiguousarray(right, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_a = np.ascontiguousarray(value, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] o_a = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef int n_samples = x_a.shape[0]
    cdef int n_trees = o_a.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n_samples, dtype=np.float64)
    cdef double[:, :] xv = x_a
    cdef int32_t[:] fv = f_a
    cdef double[:] thv = th_a
    cdef int32_t[:] lv = l_a
    cdef int32_t[:] rv = r_a
    cdef double[:] vv = v_a
    cdef int32_t[:] ov = o_a
    cdef double[:] outv = out
    cdef double base = float(baseline)
    cdef int i, k, node, f
    cdef double acc
    with nogil:
        for i in range(n_samples):
            acc = base
            for k in range(n_trees):
                node = ov[k]
                f = fv[node]
                while f >= 0:
                    if xv[i, f] <= thv[node]:
                        node = lv[node]
                    else:
                        node = rv[node]
                    f = fv[node]
                acc += vv[node]
            outv[i] = acc
    return out


def gbt_predict(binned, feature, threshold, left, right, value, offsets, baseline):
    """Flattened boosted-tree ensemble inference; see pure.gbt_predict."""
    cdef cnp.ndarray[cnp.int32_t, ndim=2] b_a = np.ascontiguousarray(binned, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] f_a = np.ascontiguousarray(feature, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] th_a = np.ascontiguousarray(threshold, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] l_a = np.ascontiguousarray(left, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] r_a = np.ascontiguousarray(right, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_a = np.ascontiguousarray(value, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] o_a = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef int n_samples = b_a.shape[0]
    cdef int n_trees = o_a.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n_samples, dtype=np.float64)
    cdef int32_t[:, :] bv = b_a
    cdef int32_t[:] fv = f_a
    cdef int32_t[:] thv = th_a
    cdef int32_t[:] lv = l_a
    cdef int32_t[:] rv = r_a
    cdef double[:] vv = v_a
    cdef int32_t[:] ov = o_a
    cdef double[:] outv = out
    cdef double base = float(baseline)
    cdef int i, k, node, f
    cdef double acc
    with nogil:
        for i in range(n_samples):
            acc = base
            for k in range(n_trees):
                node = ov[k]
                f = fv[node]
                while f >= 0:
                    if bv[i, f] <= thv[node]:
                        node = lv[node]
                    else:
                        node = rv[node]
                    f = fv[node]
                acc += vv[node]
            outv[i] = acc
    return out
