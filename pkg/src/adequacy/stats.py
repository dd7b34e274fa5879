"""Outcome vectors and per-level-pair streaming statistics.

Every model evaluation yields one outcome vector (loss-of-load hours and
energy not served). Level-pair statistics are accumulated with Welford
single-pass updates so the engine never stores raw samples, and two
accumulators can be merged exactly (parallel workers each own one).
"""

import math
from dataclasses import dataclass

import numpy as np

#: metric order used by every array of shape (2,) in this package
METRICS = ("LOLE", "EENS")
N_METRICS = 2

HOURS_PER_YEAR = 8760


@dataclass(frozen=True)
class OutcomeVector:
    """Annual (or daily) performance of one sampled trace."""

    lol_hours: float
    ens_energy: float

    def as_array(self):
        return np.array([self.lol_hours, self.ens_energy], dtype=np.float64)

    @staticmethod
    def from_array(a):
        return OutcomeVector(float(a[0]), float(a[1]))

    @staticmethod
    def zero():
        return OutcomeVector(0.0, 0.0)


class LevelStats:
    """Running moments of one level pair (y = x_hi - x_lo, per metric).

    Tracks mean/second moment of y, of both pair members, their
    co-moment (for correlations), and sample costs. ``update`` is a
    single-pass Welford step; ``merge`` combines two accumulators as if
    their streams had been concatenated.
    """

    __slots__ = ("n", "mean_y", "m2_y", "mean_hi", "m2_hi", "mean_lo",
                 "m2_lo", "co_moment", "mean_cost", "smoothed_cost",
                 "cost_alpha")

    def __init__(self, cost_alpha=0.1):
        self.n = 0
        self.mean_y = np.zeros(N_METRICS)
        self.m2_y = np.zeros(N_METRICS)
        self.mean_hi = np.zeros(N_METRICS)
        self.m2_hi = np.zeros(N_METRICS)
        self.mean_lo = np.zeros(N_METRICS)
        self.m2_lo = np.zeros(N_METRICS)
        self.co_moment = np.zeros(N_METRICS)
        self.mean_cost = 0.0
        self.smoothed_cost = 0.0
        self.cost_alpha = cost_alpha

    def update(self, y, x_hi, x_lo, cost):
        """Fold one coupled sample into the moments.

        y, x_hi, x_lo are metric arrays of shape (2,); cost is seconds.
        """
        self.n += 1
        n = self.n

        d = y - self.mean_y
        self.mean_y += d / n
        self.m2_y += d * (y - self.mean_y)

        d_hi = x_hi - self.mean_hi
        self.mean_hi += d_hi / n
        self.m2_hi += d_hi * (x_hi - self.mean_hi)

        d_lo = x_lo - self.mean_lo
        self.mean_lo += d_lo / n
        self.m2_lo += d_lo * (x_lo - self.mean_lo)

        # online co-moment: uses pre-update hi delta and post-update lo mean
        self.co_moment += d_hi * (x_lo - self.mean_lo)

        self.mean_cost += (cost - self.mean_cost) / n
        if n == 1:
            self.smoothed_cost = cost
        else:
            a = self.cost_alpha
            self.smoothed_cost += a * (cost - self.smoothed_cost)

    def update_sample(self, sample):
        """Fold a LevelPairSample (see mlmc module) into the moments."""
        self.update(sample.y, sample.x_hi.as_array(),
                    sample.x_lo.as_array(), sample.cost)

    def merge(self, other):
        """Return a new accumulator equal to the concatenated stream."""
        out = LevelStats(cost_alpha=self.cost_alpha)
        na, nb = self.n, other.n
        n = na + nb
        out.n = n
        if n == 0:
            return out
        if na == 0 or nb == 0:
            src = other if na == 0 else self
            for name in ("mean_y", "m2_y", "mean_hi", "m2_hi", "mean_lo",
                         "m2_lo", "co_moment"):
                setattr(out, name, getattr(src, name).copy())
            out.mean_cost = src.mean_cost
            out.smoothed_cost = src.smoothed_cost
            return out
        w = na * nb / n
        for mean_name, m2_name in (("mean_y", "m2_y"), ("mean_hi", "m2_hi"),
                                   ("mean_lo", "m2_lo")):
            ma = getattr(self, mean_name)
            mb = getattr(other, mean_name)
            d = mb - ma
            setattr(out, mean_name, ma + d * (nb / n))
            setattr(out, m2_name,
                    getattr(self, m2_name) + getattr(other, m2_name) + d * d * w)
        d_hi = other.mean_hi - self.mean_hi
        d_lo = other.mean_lo - self.mean_lo
        out.co_moment = self.co_moment + other.co_moment + d_hi * d_lo * w
        out.mean_cost = (na * self.mean_cost + nb * other.mean_cost) / n
        out.smoothed_cost = (na * self.smoothed_cost + nb * other.smoothed_cost) / n
        return out

    def variance_y(self):
        """Sample variance of y per metric (n-1 denominator); zeros if n < 2."""
        if self.n < 2:
            return np.zeros(N_METRICS)
        return np.maximum(self.m2_y / (self.n - 1), 0.0)

    def sigma_y(self):
        return np.sqrt(self.variance_y())

    def correlation(self):
        """Pearson correlation between pair members per metric.

        NaN where either member variance is zero (e.g. the bottom level,
        whose lower member is identically zero).
        """
        out = np.full(N_METRICS, np.nan)
        if self.n < 2:
            return out
        for k in range(N_METRICS):
            denom = self.m2_hi[k] * self.m2_lo[k]
            if denom > 0.0:
                r = self.co_moment[k] / math.sqrt(denom)
                out[k] = min(1.0, max(-1.0, r))
        return out

    def std_error_sq(self):
        """Contribution of this pair to the estimator variance, per metric."""
        if self.n < 2:
            return np.zeros(N_METRICS)
        return self.m2_y / ((self.n - 1) * self.n)
