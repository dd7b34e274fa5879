"""Generic multilevel Monte Carlo engine.

A run takes a stack of level models sharing one scenario space, samples
coupled level pairs (both models of a pair see the identical scenario),
estimates each pair's contribution and variance, and splits the budget
across pairs with the variance-optimal allocation. The bottom level can
be replaced by an analytically computed contribution with zero variance.

Per-sample randomness is counter-based: scenario i of level pair l is a
pure function of (source seed, stream l, counter i), so the estimate is
reproducible regardless of how samples are distributed over workers.

This module does no file I/O; estimates are emitted as plain records.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .stats import METRICS, N_METRICS, LevelStats, OutcomeVector


class LevelModel:
    """Contract for one model of the stack.

    ``evaluate`` must be a deterministic function of the scenario (all
    randomness lives in the scenario) and instances must be treated as
    immutable once constructed: the engine shares them across workers.
    """

    name = "level"
    #: advisory per-evaluation cost (seconds); used for deterministic
    #: sample-budget allocation
    nominal_cost_hint = 1e-3

    def evaluate(self, scenario):
        raise NotImplementedError


class LevelEvaluationError(RuntimeError):
    """Model evaluation failure, tagged with the level-pair index."""

    def __init__(self, level_index, model_name, cause):
        super().__init__(
            f"evaluation failed on level pair {level_index} "
            f"(model {model_name!r}): {cause!r}")
        self.level_index = level_index
        self.cause = cause


class MlmcRunError(RuntimeError):
    """Sampling aborted mid-run; carries per-level partial statistics."""

    def __init__(self, message, partial_stats):
        super().__init__(message)
        self.partial_stats = partial_stats


@dataclass
class LevelPairSample:
    """One coupled evaluation: y = x_hi - x_lo per metric."""

    y: np.ndarray
    x_hi: OutcomeVector
    x_lo: OutcomeVector
    cost: float
    fingerprint: int = 0


def sample_level_pair(hi, lo, scenario, level_index=0):
    """Evaluate a level pair on one scenario.

    ``lo`` is None only on the bottom level, where the lower member is
    identically zero. The reported cost is the wall time of the model
    evaluations (scenario generation is accounted for by the caller).
    """
    t0 = time.perf_counter()
    try:
        x_hi = hi.evaluate(scenario)
    except Exception as exc:
        raise LevelEvaluationError(level_index, getattr(hi, "name", "?"), exc) from exc
    if lo is None:
        x_lo = OutcomeVector.zero()
    else:
        try:
            x_lo = lo.evaluate(scenario)
        except Exception as exc:
            raise LevelEvaluationError(level_index, getattr(lo, "name", "?"), exc) from exc
    cost = time.perf_counter() - t0
    y = x_hi.as_array() - x_lo.as_array()
    return LevelPairSample(y=y, x_hi=x_hi, x_lo=x_lo, cost=cost,
                           fingerprint=getattr(scenario, "fingerprint", 0))


def round_half_up(x):
    return int(math.floor(x + 0.5))


def optimal_allocation(sigmas, taus, budget, min_samples=2):
    """Variance-optimal sample counts for a given budget.

    n_l is proportional to sigma_l / sqrt(tau_l), scaled so the expected
    total cost matches the budget, rounded half up and floored at
    ``min_samples`` (levels with zero sigma also get the minimum so
    their variance stays estimable).
    """
    sigmas = [float(s) for s in sigmas]
    taus = [float(t) for t in taus]
    if len(sigmas) != len(taus) or not sigmas:
        raise ValueError("sigmas and taus must be equal-length, non-empty")
    if any(s < 0 for s in sigmas):
        raise ValueError("sigmas must be nonnegative")
    if any(t <= 0 for t in taus):
        raise ValueError("taus must be positive")
    if budget <= 0:
        raise ValueError("nonpositive budget")
    if all(s == 0.0 for s in sigmas):
        raise ValueError("degenerate stack: all level variances are zero")
    denom = sum(s * math.sqrt(t) for s, t in zip(sigmas, taus))
    out = []
    for s, t in zip(sigmas, taus):
        if s == 0.0:
            out.append(min_samples)
        else:
            n = round_half_up(budget * (s / math.sqrt(t)) / denom)
            out.append(max(min_samples, n))
    return out


def speed_measure(q_hat, total_time, variance_of_estimator):
    """Budget-normalised estimator speed q^2 / (t * var).

    Ratios of speeds give asymptotic speedups. Zero variance returns the
    +inf sentinel (callers flag it).
    """
    if total_time <= 0:
        raise ValueError("total_time must be positive")
    if variance_of_estimator < 0:
        raise ValueError("variance must be nonnegative")
    if variance_of_estimator == 0.0:
        return math.inf
    return q_hat * q_hat / (total_time * variance_of_estimator)


@dataclass
class MetricEstimate:
    q_hat: float
    std_error: float
    speed: float
    speed_degenerate: bool
    r_hat: list
    sigma_y: list
    rho: list


@dataclass
class MlmcEstimate:
    """Assembled estimator output; see to_record() for the wire layout."""

    metrics: dict
    level_names: list
    n_per_level: list
    tau_per_level: list
    total_time: float
    analytic_bottom: bool
    exploratory_only: bool
    target_metric: str
    budget: float
    budget_mode: str

    def to_record(self):
        """Plain-JSON estimate record (consumed by the CLI harness)."""
        def clean(x):
            x = float(x)
            return None if math.isnan(x) else x
        rec = {
            "level_names": list(self.level_names),
            "n_per_level": [int(n) for n in self.n_per_level],
            "tau_per_level": [float(t) for t in self.tau_per_level],
            "total_time": float(self.total_time),
            "analytic_bottom": bool(self.analytic_bottom),
            "exploratory_only": bool(self.exploratory_only),
            "target_metric": self.target_metric,
            "budget": float(self.budget),
            "budget_mode": self.budget_mode,
            "metrics": {},
        }
        for name, m in self.metrics.items():
            rec["metrics"][name] = {
                "q_hat": float(m.q_hat),
                "std_error": float(m.std_error),
                "speed": (None if math.isinf(m.speed) else float(m.speed)),
                "speed_degenerate": bool(m.speed_degenerate),
                "r_hat": [float(r) for r in m.r_hat],
                "sigma_y": [float(s) for s in m.sigma_y],
                "rho": [clean(r) for r in m.rho],
            }
        return rec


# worker-side context for parallel sampling (set by the pool initializer)
_WORKER_CTX = {}


def _init_worker(stack, source):
    _WORKER_CTX["stack"] = stack
    _WORKER_CTX["source"] = source


def _evaluate_batch(task):
    """Evaluate ``count`` coupled samples of one level pair.

    Returns per-sample arrays ordered by counter so the coordinator can
    fold them into the statistics in a canonical order.
    """
    pair_idx, stream, start, count = task
    stack = _WORKER_CTX["stack"]
    source = _WORKER_CTX["source"]
    hi = stack[pair_idx]
    lo = stack[pair_idx - 1] if pair_idx > 0 else None
    ys = np.empty((count, N_METRICS))
    his = np.empty((count, N_METRICS))
    los = np.empty((count, N_METRICS))
    costs = np.empty(count)
    for i in range(count):
        t0 = time.perf_counter()
        scenario = source.sample(stream, start + i)
        s = sample_level_pair(hi, lo, scenario, level_index=pair_idx)
        costs[i] = time.perf_counter() - t0
        ys[i] = s.y
        his[i] = s.x_hi.as_array()
        los[i] = s.x_lo.as_array()
    return pair_idx, start, ys, his, los, costs


class _Sampler:
    """Runs batches serially or on a process pool; folds results into
    per-pair statistics in counter order either way."""

    def __init__(self, stack, source, workers):
        self.stack = stack
        self.source = source
        self.workers = max(1, int(workers))
        self.pool = None
        if self.workers > 1:
            self.pool = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=_init_worker, initargs=(stack, source))
        _init_worker(stack, source)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def run(self, requests, stats):
        """requests: list of (pair_idx, stream, start_counter, count)."""
        tasks = []
        for pair_idx, stream, start, count in requests:
            if count <= 0:
                continue
            chunk = count
            if self.workers > 1:
                chunk = max(1, -(-count // (self.workers * 4)))
            off = 0
            while off < count:
                step = min(chunk, count - off)
                tasks.append((pair_idx, stream, start + off, step))
                off += step
        if self.pool is not None:
            results = list(self.pool.map(_evaluate_batch, tasks))
        else:
            results = [_evaluate_batch(t) for t in tasks]
        results.sort(key=lambda r: (r[0], r[1]))
        for pair_idx, _start, ys, his, los, costs in results:
            st = stats[pair_idx]
            for i in range(len(costs)):
                st.update(ys[i], his[i], los[i], costs[i])


def run_mlmc(stack, scenario_source, budget, exploratory_n=500,
             target_metric="EENS", analytic_bottom=None,
             analytic_bottom_cost=0.0, budget_mode="seconds",
             reuse_exploration=True, min_level_samples=2,
             fixed_allocation=None, workers=1, stream_offset=0,
             cost_alpha=0.1):
    """Two-phase MLMC estimation over a bottom-to-top model stack.

    Phase 1 draws ``exploratory_n`` coupled samples per level pair to
    estimate sigma and tau; phase 2 spreads the remaining budget with
    the optimal allocation targeted at ``target_metric``. Exploration
    samples are kept in the final statistics unless
    ``reuse_exploration`` is false.

    budget_mode "seconds" plans against wall-clock costs (exponentially
    smoothed); budget_mode "samples" plans against the models' nominal
    cost hints, expressed in top-level-evaluation equivalents, which
    makes the allocation (and hence the estimate) deterministic.

    ``analytic_bottom`` replaces the bottom level's contribution by an
    exact outcome vector with zero variance and no sampling budget.
    ``fixed_allocation`` (counts per pair) skips both phases and samples
    exactly the given counts.
    """
    L = len(stack)
    if L == 0:
        raise ValueError("stack must be nonempty")
    if target_metric not in METRICS:
        raise ValueError(f"unknown target metric {target_metric!r}")
    if budget_mode not in ("seconds", "samples"):
        raise ValueError(f"unknown budget mode {budget_mode!r}")
    if analytic_bottom is not None and L < 2:
        raise ValueError("analytic bottom requires at least two levels")
    if fixed_allocation is None and exploratory_n < 2:
        raise ValueError("exploratory_n must be at least 2")
    if budget <= 0:
        raise ValueError("nonpositive budget")

    target_idx = METRICS.index(target_metric)
    first_pair = 1 if analytic_bottom is not None else 0
    pair_indices = list(range(first_pair, L))

    source_hint = getattr(scenario_source, "nominal_cost_hint", 0.0)

    def pair_hint(l):
        h = source_hint + getattr(stack[l], "nominal_cost_hint", 1e-3)
        if l > 0:
            h += getattr(stack[l - 1], "nominal_cost_hint", 1e-3)
        return h

    top_hint = pair_hint(L - 1)
    rel_tau = {l: pair_hint(l) / top_hint for l in pair_indices}

    stats = {l: LevelStats(cost_alpha=cost_alpha) for l in pair_indices}
    sampler = _Sampler(stack, scenario_source, workers)
    t_start = time.perf_counter()
    exploratory_only = False

    def abort(msg, cause):
        sampler.close()
        raise MlmcRunError(
            msg + "; partial statistics attached", stats) from cause

    try:
        if fixed_allocation is not None:
            if len(fixed_allocation) != L:
                raise ValueError("fixed_allocation must have one entry per level")
            counts = {l: int(fixed_allocation[l]) for l in pair_indices}
            try:
                sampler.run([(l, stream_offset + l, 0, counts[l])
                             for l in pair_indices], stats)
            except LevelEvaluationError as exc:
                abort(f"model failure during fixed-allocation sampling: {exc}", exc)
        else:
            try:
                sampler.run([(l, stream_offset + l, 0, exploratory_n)
                             for l in pair_indices], stats)
            except LevelEvaluationError as exc:
                abort(f"model failure during exploration: {exc}", exc)

            if budget_mode == "seconds":
                spent = time.perf_counter() - t_start + analytic_bottom_cost
                taus = [max(stats[l].smoothed_cost, 1e-12) for l in pair_indices]
            else:
                spent = sum(exploratory_n * rel_tau[l] for l in pair_indices)
                taus = [rel_tau[l] for l in pair_indices]
            remaining = budget - spent

            sigmas = [stats[l].sigma_y()[target_idx] for l in pair_indices]
            if remaining <= 0:
                exploratory_only = True
            elif all(s == 0.0 for s in sigmas):
                # deterministic stack: nothing to gain from more samples
                pass
            else:
                extra = optimal_allocation(sigmas, taus, remaining,
                                           min_samples=min_level_samples)
                if not reuse_exploration:
                    stats = {l: LevelStats(cost_alpha=cost_alpha)
                             for l in pair_indices}
                try:
                    sampler.run(
                        [(l, stream_offset + l, exploratory_n, extra[k])
                         for k, l in enumerate(pair_indices)], stats)
                except LevelEvaluationError as exc:
                    abort(f"model failure during main sampling: {exc}", exc)
    finally:
        sampler.close()

    total_time = time.perf_counter() - t_start + analytic_bottom_cost

    level_names = [getattr(m, "name", f"level{i}") for i, m in enumerate(stack)]
    n_per_level = []
    tau_per_level = []
    for l in range(L):
        if l < first_pair:
            n_per_level.append(0)
            tau_per_level.append(analytic_bottom_cost)
        else:
            n_per_level.append(stats[l].n)
            tau_per_level.append(stats[l].mean_cost)

    metrics = {}
    for k, name in enumerate(METRICS):
        r_hat = []
        sigma_y = []
        rho = []
        se2 = 0.0
        for l in range(L):
            if l < first_pair:
                r_hat.append(analytic_bottom.as_array()[k])
                sigma_y.append(0.0)
                rho.append(float("nan"))
            else:
                st = stats[l]
                r_hat.append(float(st.mean_y[k]))
                sigma_y.append(float(st.sigma_y()[k]))
                rho.append(float(st.correlation()[k]))
                se2 += float(st.std_error_sq()[k])
        q_hat = sum(r_hat)
        degenerate = se2 == 0.0
        speed = speed_measure(q_hat, total_time, se2)
        metrics[name] = MetricEstimate(
            q_hat=q_hat, std_error=math.sqrt(se2), speed=speed,
            speed_degenerate=degenerate, r_hat=r_hat, sigma_y=sigma_y,
            rho=rho)

    return MlmcEstimate(
        metrics=metrics, level_names=level_names, n_per_level=n_per_level,
        tau_per_level=tau_per_level, total_time=total_time,
        analytic_bottom=analytic_bottom is not None,
        exploratory_only=exploratory_only, target_metric=target_metric,
        budget=float(budget), budget_mode=budget_mode)
