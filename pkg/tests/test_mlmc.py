import math

import numpy as np
import pytest

from adequacy.kernels import SplitMix64, derive_seed
from adequacy.mlmc import (LevelEvaluationError, LevelModel, MlmcRunError,
                           optimal_allocation, round_half_up, run_mlmc,
                           sample_level_pair, speed_measure)
from adequacy.stats import METRICS, OutcomeVector


class FakeScenario:
    def __init__(self, u, fingerprint):
        self.u = u
        self.fingerprint = fingerprint


class FakeSource:
    """Deterministic scenario source: scalar u in [0, 1) per sample."""

    nominal_cost_hint = 1e-6

    def __init__(self, seed=0):
        self.seed = seed

    def sample(self, stream, counter):
        s = derive_seed(self.seed, stream, counter)
        return FakeScenario(SplitMix64(s).next_double(), s)


class FnModel(LevelModel):
    def __init__(self, fn, name="fn", cost_hint=1e-6):
        self.fn = fn
        self.name = name
        self.nominal_cost_hint = cost_hint

    def evaluate(self, scenario):
        lol, ens = self.fn(scenario.u)
        return OutcomeVector(lol, ens)


def const_model(lol, ens, name="const"):
    return FnModel(lambda u: (lol, ens), name=name)


class FailingModel(LevelModel):
    name = "boom"
    nominal_cost_hint = 1e-6

    def __init__(self, fail_above=0.95):
        self.fail_above = fail_above

    def evaluate(self, scenario):
        if scenario.u > self.fail_above:
            raise RuntimeError("synthetic failure")
        return OutcomeVector(1.0, 1.0)


# -- sample_level_pair -------------------------------------------------------

def test_pair_identity_models():
    m = const_model(2.0, 5.0)
    s = sample_level_pair(m, m, FakeScenario(0.3, 7))
    assert np.array_equal(s.y, [0.0, 0.0])
    assert s.fingerprint == 7


def test_pair_bottom_level():
    s = sample_level_pair(const_model(2.0, 5.0), None, FakeScenario(0.1, 1))
    assert np.array_equal(s.y, [2.0, 5.0])
    assert s.x_lo == OutcomeVector.zero()


def test_pair_componentwise_difference():
    s = sample_level_pair(const_model(3.0, 10.0), const_model(2.0, 7.0),
                          FakeScenario(0.5, 2))
    assert np.array_equal(s.y, [1.0, 3.0])
    assert s.cost >= 0.0


def test_pair_failure_carries_level_index():
    bad = FnModel(lambda u: 1 / 0, name="div")
    with pytest.raises(LevelEvaluationError) as exc:
        sample_level_pair(bad, None, FakeScenario(0.2, 3), level_index=4)
    assert exc.value.level_index == 4
    with pytest.raises(LevelEvaluationError):
        sample_level_pair(const_model(1, 1), bad, FakeScenario(0.2, 3))


# -- optimal_allocation ------------------------------------------------------

def test_allocation_single_level():
    assert optimal_allocation([1.0], [4.0], 100.0) == [25]


def test_allocation_hand_example():
    # denominator 2*1 + 1*2 = 4; n1 = 100*2/4 = 50, n2 = 100*0.5/4 = 12.5 -> 13
    assert optimal_allocation([2.0, 1.0], [1.0, 4.0], 100.0) == [50, 13]


def test_allocation_symmetry():
    assert optimal_allocation([1.0, 1.0], [1.0, 1.0], 10.0) == [5, 5]


def test_allocation_zero_sigma_gets_minimum():
    assert optimal_allocation([0.0, 1.0], [1.0, 1.0], 100.0) == [2, 100]
    assert optimal_allocation([0.0, 1.0], [1.0, 1.0], 100.0,
                              min_samples=5) == [5, 100]


def test_allocation_errors():
    with pytest.raises(ValueError, match="degenerate"):
        optimal_allocation([0.0, 0.0], [1.0, 1.0], 10.0)
    with pytest.raises(ValueError, match="budget"):
        optimal_allocation([1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        optimal_allocation([1.0], [1.0, 2.0], 10.0)
    with pytest.raises(ValueError):
        optimal_allocation([1.0], [0.0], 10.0)


def test_round_half_up():
    assert round_half_up(12.5) == 13
    assert round_half_up(12.49) == 12
    assert round_half_up(0.5) == 1


# -- speed_measure -----------------------------------------------------------

def test_speed_trivials():
    assert speed_measure(2.0, 4.0, 1.0) == 1.0
    assert speed_measure(1.0, 1.0, 0.01) == pytest.approx(100.0)
    assert speed_measure(1.0, 2.0, 0.5) == 0.5 * speed_measure(1.0, 1.0, 0.5)


def test_speed_zero_variance_sentinel():
    assert math.isinf(speed_measure(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        speed_measure(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        speed_measure(1.0, 1.0, -1.0)


# -- run_mlmc ----------------------------------------------------------------

def linear_model(a, b, name):
    # lol = a*u, ens = b*u: mean over u~U(0,1) is (a/2, b/2)
    return FnModel(lambda u: (a * u, b * u), name=name)


def test_duplicate_model_stack():
    m = linear_model(2.0, 10.0, "m")
    est = run_mlmc([m, m], FakeSource(), budget=200, exploratory_n=20,
                   budget_mode="samples")
    for metric in METRICS:
        me = est.metrics[metric]
        assert me.r_hat[1] == 0.0
        assert me.sigma_y[1] == 0.0
        assert me.q_hat == pytest.approx(me.r_hat[0])
    assert est.n_per_level[0] >= 20


def test_constant_model_is_exact():
    est = run_mlmc([const_model(1.0, 100.0)], FakeSource(), budget=100,
                   exploratory_n=10, budget_mode="samples")
    assert est.metrics["LOLE"].q_hat == 1.0
    assert est.metrics["EENS"].q_hat == 100.0
    assert est.metrics["EENS"].std_error == 0.0
    assert est.metrics["EENS"].speed_degenerate


def test_telescopic_identity_exact():
    lo = linear_model(1.0, 5.0, "lo")
    hi = FnModel(lambda u: (u + 0.1 * u * u, 5 * u + u * u), "hi")
    est = run_mlmc([lo, hi], FakeSource(3), budget=300, exploratory_n=25,
                   budget_mode="samples")
    for metric in METRICS:
        me = est.metrics[metric]
        assert me.q_hat == sum(me.r_hat)


def test_estimate_record_roundtrip_types():
    import json
    est = run_mlmc([linear_model(1, 5, "m")], FakeSource(), budget=50,
                   exploratory_n=10, budget_mode="samples")
    rec = est.to_record()
    assert json.loads(json.dumps(rec, allow_nan=False)) == json.loads(
        json.dumps(rec, allow_nan=False))
    assert rec["metrics"]["EENS"]["rho"][0] is None  # bottom pair undefined


def test_analytic_bottom():
    lo = linear_model(1.0, 5.0, "lo")
    hi = FnModel(lambda u: (u * 1.1, 5.5 * u), "hi")
    exact = OutcomeVector(0.5, 2.5)  # true mean of the bottom model
    est = run_mlmc([lo, hi], FakeSource(1), budget=100, exploratory_n=15,
                   budget_mode="samples", analytic_bottom=exact,
                   analytic_bottom_cost=0.25)
    assert est.analytic_bottom
    assert est.n_per_level[0] == 0
    assert est.metrics["LOLE"].r_hat[0] == 0.5
    assert est.metrics["EENS"].r_hat[0] == 2.5
    assert est.metrics["EENS"].sigma_y[0] == 0.0
    assert est.tau_per_level[0] == 0.25
    # std error comes only from the sampled top pair
    assert est.metrics["EENS"].std_error > 0

    with pytest.raises(ValueError):
        run_mlmc([lo], FakeSource(), budget=10, analytic_bottom=exact)


def test_fixed_allocation_counts():
    lo = linear_model(1.0, 5.0, "lo")
    hi = linear_model(1.1, 5.5, "hi")
    est = run_mlmc([lo, hi], FakeSource(), budget=1.0,
                   fixed_allocation=[7, 11])
    assert est.n_per_level == [7, 11]


def test_reuse_exploration_flag():
    m = linear_model(1.0, 5.0, "m")
    est_reuse = run_mlmc([m], FakeSource(5), budget=100, exploratory_n=30,
                         budget_mode="samples", reuse_exploration=True)
    est_fresh = run_mlmc([m], FakeSource(5), budget=100, exploratory_n=30,
                         budget_mode="samples", reuse_exploration=False)
    assert est_reuse.n_per_level[0] > est_fresh.n_per_level[0]
    assert est_fresh.n_per_level[0] >= 2


def test_exploratory_only_flag():
    m = linear_model(1.0, 5.0, "m")
    est = run_mlmc([m], FakeSource(), budget=1e-9, exploratory_n=10,
                   budget_mode="seconds")
    assert est.exploratory_only
    assert est.n_per_level[0] == 10


def test_model_failure_aborts_with_partial_stats():
    stack = [FailingModel(fail_above=0.5)]
    with pytest.raises(MlmcRunError) as exc:
        run_mlmc(stack, FakeSource(9), budget=500, exploratory_n=100,
                 budget_mode="samples")
    assert isinstance(exc.value.partial_stats, dict)
    assert exc.value.__cause__ is not None


def test_determinism_same_seed_and_across_workers():
    lo = linear_model(1.0, 5.0, "lo")
    hi = FnModel(lambda u: (u * 1.2, 5 * u + 0.3 * u * u), "hi")
    kw = dict(budget=200, exploratory_n=20, budget_mode="samples")
    a = run_mlmc([lo, hi], FakeSource(11), **kw)
    b = run_mlmc([lo, hi], FakeSource(11), **kw)
    c = run_mlmc([lo, hi], FakeSource(11), workers=2, **kw)
    for metric in METRICS:
        assert a.metrics[metric].q_hat == b.metrics[metric].q_hat
        assert a.metrics[metric].std_error == b.metrics[metric].std_error
        assert a.metrics[metric].q_hat == c.metrics[metric].q_hat
        assert a.metrics[metric].std_error == c.metrics[metric].std_error
    assert a.n_per_level == b.n_per_level == c.n_per_level


def test_coupling_same_scenario_object():
    seen = []

    class Spy(LevelModel):
        name = "spy"
        nominal_cost_hint = 1e-6

        def evaluate(self, scenario):
            seen.append(scenario.fingerprint)
            return OutcomeVector(scenario.u, scenario.u)

    # analytic bottom leaves exactly one sampled pair: evaluations arrive
    # as (hi, lo) couples that must share the scenario fingerprint
    run_mlmc([Spy(), Spy()], FakeSource(2), budget=20, exploratory_n=5,
             budget_mode="samples", analytic_bottom=OutcomeVector(0.5, 0.5))
    assert seen and len(seen) % 2 == 0
    for i in range(0, len(seen), 2):
        assert seen[i] == seen[i + 1]


def test_validation_errors():
    m = const_model(1, 1)
    with pytest.raises(ValueError):
        run_mlmc([], FakeSource(), budget=10)
    with pytest.raises(ValueError):
        run_mlmc([m], FakeSource(), budget=10, target_metric="XXX")
    with pytest.raises(ValueError):
        run_mlmc([m], FakeSource(), budget=-1)
    with pytest.raises(ValueError):
        run_mlmc([m], FakeSource(), budget=10, exploratory_n=1)
    with pytest.raises(ValueError):
        run_mlmc([m], FakeSource(), budget=10, budget_mode="minutes")


def test_variance_drops_as_pair_correlation_rises():
    # direct check of the level-pair variance identity:
    # var(Y) = var(hi) + var(lo) - 2 cov(hi, lo), decreasing in correlation
    from adequacy.stats import LevelStats
    rng = np.random.default_rng(21)
    base = rng.normal(size=4000)
    noise = rng.normal(size=4000)
    sigmas = []
    for rho in (0.2, 0.6, 0.95):
        hi = base
        lo = rho * base + math.sqrt(1 - rho * rho) * noise
        st = LevelStats()
        for h, l in zip(hi, lo):
            y = np.array([h - l, h - l])
            st.update(y, np.array([h, h]), np.array([l, l]), 0.0)
        measured_rho = st.correlation()[0]
        expected_var = (st.m2_hi[0] / (st.n - 1) + st.m2_lo[0] / (st.n - 1)
                        - 2 * measured_rho
                        * math.sqrt(st.m2_hi[0] * st.m2_lo[0]) / (st.n - 1))
        assert st.variance_y()[0] == pytest.approx(expected_var, rel=1e-9)
        sigmas.append(st.sigma_y()[0])
    assert sigmas[0] > sigmas[1] > sigmas[2]


def test_telescoping_repeated_runs_match_direct_mc():
    # E[Q_hat] over repeated runs converges to the top model's direct-MC
    # mean; 100 small runs against a large independent MC oracle, 3-sigma
    lo = linear_model(1.0, 5.0, "lo")
    hi = FnModel(lambda u: (u + 0.3 * u * u, 5 * u + u * u), "hi")
    qs = []
    for r in range(100):
        est = run_mlmc([lo, hi], FakeSource(77), budget=60, exploratory_n=6,
                       budget_mode="samples", reuse_exploration=False,
                       stream_offset=r * 64)
        qs.append([est.metrics[m].q_hat for m in METRICS])
    qs = np.asarray(qs)
    # direct MC oracle on the top model with a large sample count
    src = FakeSource(555)
    top = np.array([[*(lambda o: (o.lol_hours, o.ens_energy))(
        hi.evaluate(src.sample(0, i)))] for i in range(200_000)])
    for k in range(2):
        mean = qs[:, k].mean()
        se = math.hypot(qs[:, k].std(ddof=1) / 10.0,
                        top[:, k].std(ddof=1) / math.sqrt(len(top)))
        assert abs(mean - top[:, k].mean()) < 3.0 * se
