"""Synthetic annual net-generation-margin scenarios.

A scenario combines a demand trace and a wind trace (drawn uniformly from
finite pre-built libraries) with a freshly sampled conventional-generation
availability trace: m = g + w - d, hourly over 8760 hours. The libraries
are parametric stand-ins with the same structure as historical data
(finite trace sets), which keeps the analytic bottom-level computation in
the dispatch module exact.

Scenario sampling is a pure function of (config, master seed, stream,
counter); the heavy lifting runs in the kernel backend.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import SplitMix64, derive_seed

HOURS_PER_YEAR = 8760
DAYS_PER_YEAR = 365
HOURS_PER_DAY = 24

# dedicated stream ids, far away from the engine's per-level streams
STREAM_MINING = 1 << 20
STREAM_HOLDOUT = (1 << 20) + 1
STREAM_REFERENCE = (1 << 20) + 2


@dataclass(frozen=True)
class GeneratingUnit:
    """Thermal unit with per-hour fail/repair transition probabilities."""

    capacity: float
    fail_rate: float
    repair_rate: float

    @property
    def availability(self):
        return self.repair_rate / (self.fail_rate + self.repair_rate)

    def validate(self):
        if self.capacity <= 0:
            raise ValueError("unit capacity must be positive")
        if not (0.0 <= self.fail_rate <= 1.0):
            raise ValueError("fail rate must be a per-hour probability in [0, 1]")
        if not (0.0 < self.repair_rate <= 1.0):
            raise ValueError("repair rate must be a per-hour probability in (0, 1]")


@dataclass(frozen=True)
class DemandParams:
    n_traces: int = 20
    peak_mw: float = 5000.0
    seasonal_amplitude: float = 0.12
    weekend_factor: float = 0.95
    noise_sigma: float = 0.03
    #: hour-of-day shape, normalised to peak 1 (winter-evening-peaking)
    base_profile: tuple = (
        0.66, 0.62, 0.60, 0.59, 0.60, 0.64, 0.72, 0.82, 0.90, 0.93, 0.94,
        0.95, 0.94, 0.92, 0.91, 0.92, 0.95, 1.00, 0.99, 0.96, 0.90, 0.82,
        0.74, 0.69)


@dataclass(frozen=True)
class WindParams:
    n_traces: int = 20
    capacity_mw: float = 1200.0
    ar_rho: float = 0.985
    shape_gain: float = 1.5
    mean_capacity_factor: float = 0.33


def build_demand_library(params, seed):
    """Build annual demand traces: daily shape x seasonal swing x weekend
    dip x lognormal noise, scaled so the library peak hits peak_mw."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xD0)))
    hours = np.arange(HOURS_PER_YEAR)
    day = hours // HOURS_PER_DAY
    hod = hours % HOURS_PER_DAY
    dow = day % 7
    base = np.asarray(params.base_profile, dtype=np.float64)[hod]
    seasonal = 1.0 + params.seasonal_amplitude * np.cos(
        2.0 * np.pi * (day - 10) / 365.0)
    weekly = np.where(dow >= 5, params.weekend_factor, 1.0)
    shape = base * seasonal * weekly
    sig = params.noise_sigma
    traces = np.empty((params.n_traces, HOURS_PER_YEAR))
    for r in range(params.n_traces):
        noise = np.exp(sig * rng.standard_normal(HOURS_PER_YEAR) - 0.5 * sig * sig)
        traces[r] = shape * noise
    traces *= params.peak_mw / traces.max()
    return traces


def build_wind_library(params, seed):
    """Build annual wind power traces from a logistic-squashed AR(1)
    capacity factor, rescaled to the target mean capacity factor."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x71)))
    rho = params.ar_rho
    gain = params.shape_gain
    target = params.mean_capacity_factor
    a = math.log(target / (1.0 - target))
    traces = np.empty((params.n_traces, HOURS_PER_YEAR))
    innov = math.sqrt(1.0 - rho * rho)
    for r in range(params.n_traces):
        z = rng.standard_normal(HOURS_PER_YEAR)
        x = np.empty(HOURS_PER_YEAR)
        x[0] = z[0]
        for t in range(1, HOURS_PER_YEAR):
            x[t] = rho * x[t - 1] + innov * z[t]
        traces[r] = 1.0 / (1.0 + np.exp(-(a + gain * x)))
    # two fixed rescale-and-clip passes to land on the target mean CF
    for _ in range(2):
        mean_cf = traces.mean()
        traces = np.clip(traces * (target / mean_cf), 0.0, 1.0)
    return traces * params.capacity_mw


@dataclass
class Scenario:
    """One sampled year: hourly net generation margin (MW, signed)."""

    m: np.ndarray
    fingerprint: int
    g: np.ndarray = None
    w: np.ndarray = None
    d: np.ndarray = None

    def day_margins(self):
        return self.m.reshape(DAYS_PER_YEAR, HOURS_PER_DAY)


def sample_generation_trace(fleet, seed, n_hours=HOURS_PER_YEAR):
    """Sample one available-capacity trace for a thermal fleet (two-state
    Markov chains started from their stationary distributions)."""
    caps = np.array([u.capacity for u in fleet])
    pf = np.array([u.fail_rate for u in fleet])
    pr = np.array([u.repair_rate for u in fleet])
    av = np.array([u.availability for u in fleet])
    return kernels.thermal_trace(int(seed), caps, pf, pr, av, n_hours)


class ScenarioSource:
    """Counter-seeded scenario sampler shared by all level models.

    Stateless apart from the pre-built libraries; safe for concurrent use
    by workers holding disjoint (stream, counter) ranges.
    """

    #: advisory seconds per sampled scenario (for sample-budget planning)
    nominal_cost_hint = 5e-4

    def __init__(self, fleet, demand_library, wind_library, master_seed,
                 keep_components=False):
        if len(fleet) == 0:
            raise ValueError("thermal fleet must be nonempty")
        if len(demand_library) == 0 or len(wind_library) == 0:
            raise ValueError("demand and wind libraries must be nonempty")
        for u in fleet:
            u.validate()
        self.fleet = tuple(fleet)
        self.demand = np.ascontiguousarray(demand_library, dtype=np.float64)
        self.wind = np.ascontiguousarray(wind_library, dtype=np.float64)
        self.master_seed = int(master_seed)
        self.keep_components = keep_components
        self._caps = np.array([u.capacity for u in self.fleet])
        self._pf = np.array([u.fail_rate for u in self.fleet])
        self._pr = np.array([u.repair_rate for u in self.fleet])
        self._av = np.array([u.availability for u in self.fleet])

    def sample(self, stream, counter):
        return self.sample_seed(derive_seed(self.master_seed, stream, counter))

    def sample_seed(self, seed64):
        """Scenario as a pure function of one 64-bit seed."""
        rng = SplitMix64(seed64)
        di = rng.next_below(len(self.demand))
        wi = rng.next_below(len(self.wind))
        gseed = rng.next_u64()
        g = kernels.thermal_trace(gseed, self._caps, self._pf, self._pr,
                                  self._av, HOURS_PER_YEAR)
        d = self.demand[di]
        w = self.wind[wi]
        if self.keep_components:
            m = (g + w) - d
            return Scenario(m=m, fingerprint=seed64, g=g, w=w, d=d)
        m = g
        m += w
        m -= d
        return Scenario(m=m, fingerprint=seed64)


def sample_low_margin_days(count, source, stream=STREAM_MINING,
                           start_counter=0, probe_days=1_000_000):
    """Mine whole midnight-aligned days whose margin dips below zero.

    Rejection-samples days from fresh scenarios until ``count`` frames
    are collected. Returns (frames, provenance): frames is (count, 24)
    raw margins; provenance rows are (scenario fingerprint, day index).

    Raises if the acceptance rate over the probe window falls below 1e-6
    (the system is too reliable for day mining).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    frames = np.empty((count, HOURS_PER_DAY))
    provenance = []
    got = 0
    scanned = 0
    counter = start_counter
    while got < count:
        scenario = source.sample(stream, counter)
        days = scenario.day_margins()
        hit = np.flatnonzero(days.min(axis=1) < 0.0)
        for idx in hit:
            frames[got] = days[idx]
            provenance.append((scenario.fingerprint, int(idx)))
            got += 1
            if got == count:
                break
        scanned += DAYS_PER_YEAR
        counter += 1
        if scanned >= probe_days and got / scanned < 1e-6:
            raise RuntimeError(
                "system too reliable for day mining "
                f"({got} hits in {scanned} days)")
    return frames, provenance


def day_acceptance_rate(source, n_scenarios=50, stream=STREAM_MINING,
                        start_counter=0):
    """Fraction of days with a negative-margin hour, over fresh scenarios."""
    hits = 0
    for i in range(n_scenarios):
        days = source.sample(stream, start_counter + i).day_margins()
        hits += int((days.min(axis=1) < 0.0).sum())
    return hits / (n_scenarios * DAYS_PER_YEAR)


def library_to_csv(path, traces):
    """Write a trace library as CSV: one column per trace, 8760 rows,
    header row of trace ids. Floats round-trip exactly."""
    traces = np.asarray(traces)
    header = ",".join(f"trace{i:04d}" for i in range(traces.shape[0]))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t in range(traces.shape[1]):
            fh.write(",".join(repr(float(x)) for x in traces[:, t]) + "\n")


def library_from_csv(path):
    """Read a trace library written by library_to_csv; returns
    (traces of shape (n, 8760), trace ids)."""
    with open(path) as fh:
        ids = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] != HOURS_PER_YEAR:
        raise ValueError(
            f"{path}: expected {HOURS_PER_YEAR} rows, found {data.shape[0]}")
    return np.ascontiguousarray(data.T), ids
