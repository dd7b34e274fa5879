"""Pure-Python kernels: reference implementations of the hot loops.

These are the semantics of record. The compiled extension in ``_core.pyx``
mirrors every loop operation-for-operation so that both backends produce
bit-identical outputs; ``tests/test_kernels.py`` enforces this. Keep the
two files in sync when changing anything here.

All randomness is consumed from a splitmix64 stream seeded by the caller,
so results are independent of the backend, the platform and the number of
worker processes.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def _mix64(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts):
    """Mix integer parts (master seed, stream id, counter, ...) into a
    64-bit kernel seed. Pure function; collision-resistant enough for
    Monte Carlo stream separation."""
    z = 0x6A09E667F3BCC909
    for p in parts:
        z = _mix64((z + _GOLDEN * ((int(p) + 1) & _MASK64)) & _MASK64)
    return z


class SplitMix64:
    """Counter-based uniform generator shared by both kernel backends."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def next_double(self):
        return (self.next_u64() >> 11) * _INV53

    def next_below(self, n):
        # rejection-free modulo is fine here: n is tiny vs 2**64
        return self.next_u64() % n


def thermal_trace(seed, caps, p_fail, p_repair, avail, n_hours):
    """Sample one available-capacity trace for a thermal fleet.

    Each unit runs an independent two-state (up/down) Markov chain with
    per-hour fail/repair probabilities, initialised from its stationary
    distribution. Sojourn times are geometric, sampled by inversion, so a
    unit consumes one draw for its initial state plus one per transition.

    Returns an array of n_hours MW values (sum of available capacities).
    """
    caps = [float(x) for x in caps]
    p_fail = [float(x) for x in p_fail]
    p_repair = [float(x) for x in p_repair]
    avail = [float(x) for x in avail]
    n_units = len(caps)
    # capacity steps at sojourn boundaries, then one running-sum pass
    delta = [0.0] * (n_hours + 1)
    rng = SplitMix64(seed)
    for i in range(n_units):
        cap = caps[i]
        # log(1 - p) of the leave-state probability; 0.0 marks "never leaves"
        lf = math.log1p(-p_fail[i]) if p_fail[i] > 0.0 else 0.0
        lr = math.log1p(-p_repair[i]) if p_repair[i] > 0.0 else 0.0
        up = rng.next_double() < avail[i]
        t = 0
        while t < n_hours:
            lp = lf if up else lr
            if lp == 0.0:
                end = n_hours
            else:
                ratio = math.log1p(-rng.next_double()) / lp
                if ratio >= n_hours - t:
                    end = n_hours
                else:
                    end = t + 1 + int(ratio)
            if up:
                delta[t] += cap
                delta[end] -= cap
            up = not up
            t = end
    g = [0.0] * n_hours
    acc = 0.0
    for t in range(n_hours):
        acc += delta[t]
        g[t] = acc
    return np.asarray(g, dtype=np.float64)


def greedy_dispatch(m, power, energy, soc0, order):
    """Greedy sequential storage dispatch over a margin trace.

    Units are visited in the fixed ``order`` (descending time-to-go).
    Surplus hours charge each unit up to min(power, headroom, remaining
    surplus); shortfall hours discharge up to min(power, soc, remaining
    shortfall). Sign convention: s > 0 is charging (added load).

    Returns (s, c, soc_end).
    """
    m = [float(x) for x in m]
    power = [float(x) for x in power]
    energy = [float(x) for x in energy]
    soc = [float(x) for x in soc0]
    order = [int(j) for j in order]
    n_hours = len(m)
    s = [0.0] * n_hours
    c = [0.0] * n_hours
    for t in range(n_hours):
        mt = m[t]
        st = 0.0
        if mt > 0.0:
            remaining = mt
            for j in order:
                if remaining <= 0.0:
                    break
                ch = power[j]
                room = energy[j] - soc[j]
                if room < ch:
                    ch = room
                if remaining < ch:
                    ch = remaining
                if ch > 0.0:
                    soc[j] += ch
                    if soc[j] > energy[j]:
                        soc[j] = energy[j]
                    st += ch
                    remaining -= ch
        elif mt < 0.0:
            remaining = -mt
            for j in order:
                if remaining <= 0.0:
                    break
                d = power[j]
                if soc[j] < d:
                    d = soc[j]
                if remaining < d:
                    d = remaining
                if d > 0.0:
                    soc[j] -= d
                    if soc[j] < 0.0:
                        soc[j] = 0.0
                    st -= d
                    remaining -= d
        s[t] = st
        ct = -mt + st
        c[t] = ct if ct > 0.0 else 0.0
    return (np.asarray(s), np.asarray(c), np.asarray(soc))


def _waterfill_discharge(soc, power, need, n):
    """Split a total discharge across units so post-dispatch times-to-go
    equalise (draw from the largest soc/power first). Returns per-unit
    discharges; their sum is min(need, sum of per-unit feasible)."""
    avail = [0.0] * n
    total = 0.0
    for j in range(n):
        a = power[j]
        if soc[j] < a:
            a = soc[j]
        avail[j] = a
        total += a
    if total <= need:
        return avail
    bps = []
    for j in range(n):
        bps.append(soc[j] / power[j])
        bps.append((soc[j] - avail[j]) / power[j])
    bps.sort(reverse=True)
    th_prev = bps[0]
    s_prev = 0.0
    for k in range(1, len(bps)):
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
            out = [0.0] * n
            for j in range(n):
                d = soc[j] - th_star * power[j]
                if d < 0.0:
                    d = 0.0
                if d > avail[j]:
                    d = avail[j]
                out[j] = d
            return out
        th_prev = th
        s_prev = s_here
    return avail


def _waterfill_charge(soc, power, energy, surplus, n):
    """Split a total charge across units so post-charge times-to-full
    (room/power) equalise, filling from the largest headroom-per-power
    first: the exact mirror of the discharge rule. Mirroring keeps every
    unit's absorption power available for as long as possible, which is
    what attains the anticipative optimum on day-shaped margin traces."""
    room = [0.0] * n
    for j in range(n):
        r = energy[j] - soc[j]
        if r < 0.0:
            r = 0.0
        room[j] = r
    return _waterfill_discharge(room, power, surplus, n)


def exact_dispatch(m, power, energy, soc0):
    """Causal time-to-go water-filling dispatch (curtailment-minimising).

    Shortfall hours discharge min(shortfall, fleet feasible) split so
    post-dispatch times-to-go (soc/power) equalise, drawing from the
    largest first; surplus hours charge mirror-image, equalising
    times-to-full. Returns (s, c, soc_end).
    """
    m = [float(x) for x in m]
    power = [float(x) for x in power]
    energy = [float(x) for x in energy]
    soc = [float(x) for x in soc0]
    n = len(power)
    n_hours = len(m)
    s = [0.0] * n_hours
    c = [0.0] * n_hours
    for t in range(n_hours):
        mt = m[t]
        st = 0.0
        if mt < 0.0:
            d = _waterfill_discharge(soc, power, -mt, n)
            for j in range(n):
                dj = d[j]
                if dj > 0.0:
                    soc[j] -= dj
                    if soc[j] < 0.0:
                        soc[j] = 0.0
                    st -= dj
        elif mt > 0.0:
            ch = _waterfill_charge(soc, power, energy, mt, n)
            for j in range(n):
                cj = ch[j]
                if cj > 0.0:
                    soc[j] += cj
                    if soc[j] > energy[j]:
                        soc[j] = energy[j]
                    st += cj
        s[t] = st
        ct = -mt + st
        c[t] = ct if ct > 0.0 else 0.0
    return (np.asarray(s), np.asarray(c), np.asarray(soc))


def gbt_predict(binned, feature, threshold, left, right, value, offsets, baseline):
    """Evaluate a flattened boosted-tree ensemble on pre-binned features.

    Nodes with feature < 0 are leaves; internal nodes route bin indices
    <= threshold to ``left``. Leaf values are already scaled by the
    learning rate, so the prediction is baseline + sum of leaf values.
    """
    n_samples = binned.shape[0]
    n_trees = len(offsets) - 1
    rows = binned.tolist()
    feature = feature.tolist()
    threshold = threshold.tolist()
    left = left.tolist()
    right = right.tolist()
    value = value.tolist()
    offsets = offsets.tolist()
    out = [0.0] * n_samples
    for i in range(n_samples):
        row = rows[i]
        acc = baseline
        for k in range(n_trees):
            node = offsets[k]
            f = feature[node]
            while f >= 0:
                if row[f] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                f = feature[node]
            acc += value[node]
        out[i] = acc
    return np.asarray(out)


def gbt_predict_values(frames, feature, threshold, left, right, value,
                       offsets, baseline):
    """Like gbt_predict but routes on raw feature values against float
    thresholds (the bin edge of each split), skipping the binning pass.
    bin(x) <= b is equivalent to x <= edges[b]."""
    n_samples = frames.shape[0]
    n_trees = len(offsets) - 1
    rows = frames.tolist()
    feature = feature.tolist()
    threshold = threshold.tolist()
    left = left.tolist()
    right = right.tolist()
    value = value.tolist()
    offsets = offsets.tolist()
    out = [0.0] * n_samples
    for i in range(n_samples):
        row = rows[i]
        acc = baseline
        for k in range(n_trees):
            node = offsets[k]
            f = feature[node]
            while f >= 0:
                if row[f] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                f = feature[node]
            acc += value[node]
        out[i] = acc
    return np.asarray(out)
