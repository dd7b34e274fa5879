"""Learned daily-frame surrogate level models.

The feature space is the 24 hourly margins of a midnight-aligned day,
clipped from above at +1 MW (large positive margins carry no curtailment
information) and normalised with statistics frozen at training time.
A histogram gradient-boosted tree ensemble regresses daily loss-of-load
hours; daily energy not served comes either from an RBF ridge regressor
trained on curtailed days only, or from running the greedy dispatch on
the flagged days (the hybrid variant). Annual outputs are sums of daily
predictions, which makes the surrogates cheap level models with high
correlation to the reference dispatch.

Training is one-off: models are immutable after fitting and safe to
share across sampling workers. Adaptive in-run refinement (updating the
learners with samples generated at the top level during estimation) is
a possible extension; it would need mutable model state and retraining
hooks inside the sampling loop, and is deliberately not implemented.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels
from .dispatch import exact_dispatch, greedy_dispatch, risk_metrics
from .mlmc import LevelModel
from .scenarios import (DAYS_PER_YEAR, HOURS_PER_DAY, STREAM_MINING,
                        sample_low_margin_days)
from .stats import OutcomeVector

#: margins above this carry no information for curtailment learning
CLIP_MAX_MW = 1.0

SERIALIZATION_VERSION = 1


def clip_margins(day_margins):
    return np.minimum(day_margins, CLIP_MAX_MW)


def extract_day_frames(scenario):
    """Split a scenario into 365 midnight-aligned clipped day frames."""
    m = np.asarray(getattr(scenario, "m", scenario), dtype=np.float64)
    return clip_margins(m.reshape(DAYS_PER_YEAR, HOURS_PER_DAY))


class Normalizer:
    """Per-feature affine normalisation, frozen at training time."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @staticmethod
    def fit(frames):
        mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        return Normalizer(mean, np.maximum(std, 1e-9))

    def transform(self, frames):
        return (frames - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d):
        return Normalizer(np.array(d["mean"]), np.array(d["std"]))


@dataclass
class TrainingSet:
    """Labelled low-margin days.

    frames are clipped (pre-normalisation) margins; labels come from the
    exact dispatch run on the isolated day with a full fleet. Days whose
    curtailment never exceeds the loss-of-load threshold get both labels
    zeroed so that ens > 0 implies lol > 0.
    """

    frames: np.ndarray
    lol_labels: np.ndarray
    ens_labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    def curtailed(self):
        """Subset with positive energy not served."""
        mask = self.ens_labels > 0.0
        return TrainingSet(self.frames[mask], self.lol_labels[mask],
                           self.ens_labels[mask], dict(self.provenance))


def label_day(raw_day_margins, fleet):
    """Exact-dispatch labels (lol hours, ens MWh) for one raw day,
    storage starting full."""
    res = exact_dispatch(np.asarray(raw_day_margins, dtype=np.float64), fleet)
    ov = risk_metrics(res.c)
    if ov.lol_hours == 0.0:
        return 0.0, 0.0
    return ov.lol_hours, ov.ens_energy


def build_training_set(n_days, source, fleet, stream=STREAM_MINING,
                       start_counter=0, provenance=None):
    """Mine low-margin days and label them with the exact dispatch."""
    raw, prov_rows = sample_low_margin_days(
        n_days, source, stream=stream, start_counter=start_counter)
    lol = np.empty(n_days)
    ens = np.empty(n_days)
    for i in range(n_days):
        lol[i], ens[i] = label_day(raw[i], fleet)
    meta = dict(provenance or {})
    meta.update({"n_days": int(n_days), "stream": int(stream),
                 "start_counter": int(start_counter)})
    return TrainingSet(frames=clip_margins(raw), lol_labels=lol,
                       ens_labels=ens, provenance=meta)


# ---------------------------------------------------------------------------
# histogram gradient-boosted regression trees


@dataclass(frozen=True)
class GbtParams:
    n_iterations: int = 100
    learning_rate: float = 0.1
    max_bins: int = 255
    max_leaves: int = 31
    min_samples_leaf: int = 20

    def validate(self):
        if not (2 <= self.max_bins <= 255):
            raise ValueError("max_bins must be in [2, 255]")
        if self.n_iterations < 1:
            raise ValueError("need at least one boosting iteration")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning rate must be in (0, 1]")


def _bin_edges(column, max_bins):
    u = np.unique(column)
    if len(u) <= 1:
        return np.empty(0)
    if len(u) <= max_bins:
        return (u[:-1] + u[1:]) / 2.0
    qs = np.quantile(column, np.arange(1, max_bins) / max_bins)
    return np.unique(qs)


def bin_features(frames, edges_per_feature):
    """Map features to bin indices with the training-time edges. Values
    outside the training range fall into the first/last bin."""
    n, f = frames.shape
    out = np.zeros((n, f), dtype=np.int32)
    for j in range(f):
        edges = edges_per_feature[j]
        if len(edges):
            out[:, j] = np.searchsorted(edges, frames[:, j], side="left")
    return out


class _Node:
    __slots__ = ("indices", "value", "gain", "split_feature", "split_bin",
                 "left", "right")

    def __init__(self, indices, value):
        self.indices = indices
        self.value = value
        self.gain = 0.0
        self.split_feature = -1
        self.split_bin = -1
        self.left = None
        self.right = None


def _best_split(binned, residual, indices, n_bins, min_leaf):
    """Best (gain, feature, bin) over all histogram split points."""
    best_gain = 0.0
    best = (-1, -1)
    r = residual[indices]
    total_sum = float(r.sum())
    total_cnt = len(indices)
    if total_cnt < 2 * min_leaf:
        return best_gain, best[0], best[1]
    parent_score = total_sum * total_sum / total_cnt
    for f in range(binned.shape[1]):
        b = binned[indices, f]
        cnt = np.bincount(b, minlength=n_bins[f])
        sums = np.bincount(b, weights=r, minlength=n_bins[f])
        lcnt = np.cumsum(cnt)[:-1]
        lsum = np.cumsum(sums)[:-1]
        rcnt = total_cnt - lcnt
        rsum = total_sum - lsum
        ok = (lcnt >= min_leaf) & (rcnt >= min_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(
                ok, lsum * lsum / lcnt + rsum * rsum / rcnt - parent_score,
                -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain = float(gain[k])
            best = (f, k)
    return best_gain, best[0], best[1]


class GbtModel:
    """Flattened boosted-tree ensemble over binned features.

    prediction = baseline + sum of leaf values (leaf values are stored
    pre-scaled by the learning rate). Inference runs in the kernel
    backend.
    """

    def __init__(self, bin_edges, baseline, feature, threshold, left, right,
                 value, offsets, params, train_rmse_path):
        self.bin_edges = [np.asarray(e, dtype=np.float64) for e in bin_edges]
        self.baseline = float(baseline)
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.int32)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int32)
        self.params = params
        self.train_rmse_path = list(train_rmse_path)
        self._build_flat_edges()

    def _build_flat_edges(self):
        # map every feature onto one global sorted edge array so a single
        # searchsorted call bins a whole frame batch
        lo, hi, off, cum = [], [], [], [0]
        running = 0.0
        for e in self.bin_edges:
            if len(e):
                l, h = e[0] - 1.0, e[-1] + 1.0
            else:
                l = h = 0.0
            lo.append(l)
            hi.append(h)
            off.append(running - l)
            running += (h - l) + 1.0
            cum.append(cum[-1] + len(e))
        self._lo = np.array(lo)
        self._hi = np.array(hi)
        self._off = np.array(off)
        self._cum = np.array(cum[:-1], dtype=np.int32)
        self._flat_edges = np.concatenate(
            [e + o for e, o in zip(self.bin_edges, off)]
            or [np.empty(0)])
        # float split thresholds: bin(x) <= b is exactly x <= edges[b],
        # so inference can skip the binning pass
        thr = np.zeros(len(self.feature))
        for i in range(len(self.feature)):
            f = self.feature[i]
            if f >= 0:
                thr[i] = self.bin_edges[f][self.threshold[i]]
        self._thr_values = thr

    @property
    def n_trees(self):
        return len(self.offsets) - 1

    def bin(self, frames):
        """Equivalent to bin_features(frames, self.bin_edges); clipping a
        value to just beyond its outermost edges cannot change its bin."""
        shifted = np.clip(frames, self._lo, self._hi) + self._off
        idx = np.searchsorted(self._flat_edges, shifted.ravel(), side="left")
        return (idx.reshape(frames.shape).astype(np.int32) - self._cum)

    def predict_binned(self, binned):
        return kernels.gbt_predict(binned, self.feature, self.threshold,
                                   self.left, self.right, self.value,
                                   self.offsets, self.baseline)

    def predict(self, frames):
        frames = np.ascontiguousarray(frames, dtype=np.float64)
        return kernels.gbt_predict_values(
            frames, self.feature, self._thr_values, self.left, self.right,
            self.value, self.offsets, self.baseline)

    def to_dict(self):
        return {
            "bin_edges": [e.tolist() for e in self.bin_edges],
            "baseline": self.baseline,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "offsets": self.offsets.tolist(),
            "params": {
                "n_iterations": self.params.n_iterations,
                "learning_rate": self.params.learning_rate,
                "max_bins": self.params.max_bins,
                "max_leaves": self.params.max_leaves,
                "min_samples_leaf": self.params.min_samples_leaf,
            },
            "train_rmse_path": self.train_rmse_path,
        }

    @staticmethod
    def from_dict(d):
        return GbtModel(
            bin_edges=[np.array(e) for e in d["bin_edges"]],
            baseline=d["baseline"], feature=d["feature"],
            threshold=d["threshold"], left=d["left"], right=d["right"],
            value=d["value"], offsets=d["offsets"],
            params=GbtParams(**d["params"]),
            train_rmse_path=d["train_rmse_path"])


def train_gbt(frames, labels, params=GbtParams()):
    """Least-squares boosting on histogram-binned features.

    baseline = label mean; each iteration fits a leaf-wise regression
    tree (greedy variance-reduction splits, up to max_leaves) to the
    residuals and adds it scaled by the learning rate. The training RMSE
    is non-increasing per iteration by construction.
    """
    params.validate()
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(frames) < 2:
        raise ValueError("need at least 2 training samples")
    edges = [_bin_edges(frames[:, j], params.max_bins)
             for j in range(frames.shape[1])]
    binned = bin_features(frames, edges)
    n_bins = [len(e) + 1 for e in edges]

    baseline = float(labels.mean())
    pred = np.full(len(labels), baseline)
    if all(nb == 1 for nb in n_bins) and np.ptp(labels) > 0:
        warnings.warn("all features are constant; model is baseline-only")

    feature, threshold, left, right, value = [], [], [], [], []
    offsets = [0]
    rmse_path = []
    all_idx = np.arange(len(labels))
    lr = params.learning_rate

    def emit(node):
        my = len(feature)
        feature.append(-1)
        threshold.append(-1)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if node.left is not None:
            feature[my] = node.split_feature
            threshold[my] = node.split_bin
            left[my] = emit(node.left)
            right[my] = emit(node.right)
        else:
            value[my] = lr * node.value
        return my

    for _ in range(params.n_iterations):
        residual = labels - pred
        root = _Node(all_idx, float(residual.mean()))
        root.gain, root.split_feature, root.split_bin = _best_split(
            binned, residual, root.indices, n_bins, params.min_samples_leaf)
        leaves = [root]
        while len(leaves) < params.max_leaves:
            best = None
            for leaf in leaves:
                if leaf.gain > 0.0 and (best is None or leaf.gain > best.gain):
                    best = leaf
            if best is None:
                break
            f, b = best.split_feature, best.split_bin
            go_left = binned[best.indices, f] <= b
            li = best.indices[go_left]
            ri = best.indices[~go_left]
            best.left = _Node(li, float(residual[li].mean()))
            best.right = _Node(ri, float(residual[ri].mean()))
            for child in (best.left, best.right):
                child.gain, child.split_feature, child.split_bin = _best_split(
                    binned, residual, child.indices, n_bins,
                    params.min_samples_leaf)
            leaves.remove(best)
            leaves.extend([best.left, best.right])

        emit(root)
        offsets.append(len(feature))
        for leaf in leaves:
            pred[leaf.indices] += lr * leaf.value
        rmse_path.append(float(np.sqrt(np.mean((labels - pred) ** 2))))

    return GbtModel(bin_edges=edges, baseline=baseline, feature=feature,
                    threshold=threshold, left=left, right=right, value=value,
                    offsets=offsets, params=params, train_rmse_path=rmse_path)


# ---------------------------------------------------------------------------
# ENS regressor (RBF ridge; epsilon-insensitive SVR stand-in)


@dataclass(frozen=True)
class EnsRegressorParams:
    # wide kernel: daily ENS is a nearly-global smooth function of the
    # margin profile, and curtailed-day training sets are small
    gamma: float = 1.0 / (20.0 * HOURS_PER_DAY)
    alpha: float = 1e-3


class EnsRegressor:
    """RBF-kernel ridge regression on normalised day frames.

    Centred on the label mean, so predictions decay to the mean ENS of
    curtailed training days far outside the training hull (always
    finite). Trained on curtailed days only.
    """

    def __init__(self, x_train, coef, intercept, params):
        self.x_train = np.asarray(x_train, dtype=np.float64)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = float(intercept)
        self.params = params

    def predict(self, frames):
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        d2 = ((frames[:, None, :] - self.x_train[None, :, :]) ** 2).sum(axis=2)
        k = np.exp(-self.params.gamma * d2)
        return self.intercept + k @ self.coef

    def to_dict(self):
        return {
            "x_train": self.x_train.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "params": {"gamma": self.params.gamma, "alpha": self.params.alpha},
        }

    @staticmethod
    def from_dict(d):
        return EnsRegressor(np.array(d["x_train"]), np.array(d["coef"]),
                            d["intercept"], EnsRegressorParams(**d["params"]))


def train_ens_regressor(frames, ens_labels, params=EnsRegressorParams()):
    """Fit the RBF ridge regressor on curtailed days."""
    frames = np.asarray(frames, dtype=np.float64)
    y = np.asarray(ens_labels, dtype=np.float64)
    if len(frames) < 2:
        raise ValueError(
            "ENS regressor untrainable: need at least 2 curtailed days")
    d2 = ((frames[:, None, :] - frames[None, :, :]) ** 2).sum(axis=2)
    k = np.exp(-params.gamma * d2)
    intercept = float(y.mean())
    rhs = y - intercept
    mat = k + params.alpha * np.eye(len(y))
    coef = linalg.cho_solve(linalg.cho_factor(mat), rhs)
    return EnsRegressor(frames, coef, intercept, params)


def evaluate_rmse(predict, frames, labels):
    """Root mean square error of a prediction function on a labelled set."""
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("empty test set")
    pred = np.asarray(predict(frames), dtype=np.float64)
    return float(np.sqrt(np.mean((pred - labels) ** 2)))


# ---------------------------------------------------------------------------
# composed annual level models


class SurrogateModel(LevelModel):
    """Annual surrogate: daily loss-of-load regression plus a gated ENS
    part (regressor or greedy-dispatch fallback), summed over days.

    Days with predicted loss-of-load at or below the threshold theta
    contribute exactly zero ENS.
    """

    nominal_cost_hint = 4.0e-4

    def __init__(self, gbt, normalizer, theta=0.5, ens_regressor=None,
                 greedy_fleet=None, name=None):
        if (ens_regressor is None) == (greedy_fleet is None):
            raise ValueError(
                "provide exactly one of ens_regressor / greedy_fleet")
        self.gbt = gbt
        self.normalizer = normalizer
        self.theta = float(theta)
        self.ens_regressor = ens_regressor
        self.greedy_fleet = greedy_fleet
        self.name = name or ("HGB+Gre" if greedy_fleet is not None
                             else "HGB+SVR")

    def daily_predictions(self, scenario):
        """Per-day (lol, ens) predictions; annual outputs are their sums."""
        m = np.asarray(getattr(scenario, "m", scenario), dtype=np.float64)
        raw_days = m.reshape(-1, HOURS_PER_DAY)
        frames = self.normalizer.transform(clip_margins(raw_days))
        lol = np.clip(self.gbt.predict(frames), 0.0, float(HOURS_PER_DAY))
        ens = np.zeros(len(raw_days))
        flagged = np.flatnonzero(lol > self.theta)
        if len(flagged):
            if self.greedy_fleet is not None:
                for i in flagged:
                    res = greedy_dispatch(raw_days[i], self.greedy_fleet)
                    ens[i] = risk_metrics(res.c).ens_energy
            else:
                ens[flagged] = np.maximum(
                    0.0, self.ens_regressor.predict(frames[flagged]))
        return lol, ens

    def evaluate(self, scenario):
        lol, ens = self.daily_predictions(scenario)
        return OutcomeVector(float(lol.sum()), float(ens.sum()))

    def to_dict(self):
        d = {
            "version": SERIALIZATION_VERSION,
            "name": self.name,
            "theta": self.theta,
            "gbt": self.gbt.to_dict(),
            "normalizer": self.normalizer.to_dict(),
        }
        if self.ens_regressor is not None:
            d["ens_regressor"] = self.ens_regressor.to_dict()
        return d


def surrogate_from_dict(d, greedy_fleet=None):
    """Rebuild a surrogate level model from its serialised form. The
    hybrid variant needs the storage fleet supplied by the caller."""
    if d.get("version") != SERIALIZATION_VERSION:
        raise ValueError(f"unsupported surrogate version {d.get('version')!r}")
    gbt = GbtModel.from_dict(d["gbt"])
    norm = Normalizer.from_dict(d["normalizer"])
    if "ens_regressor" in d:
        ens = EnsRegressor.from_dict(d["ens_regressor"])
        return SurrogateModel(gbt, norm, theta=d["theta"], ens_regressor=ens,
                              name=d["name"])
    if greedy_fleet is None:
        raise ValueError("hybrid surrogate needs the storage fleet")
    return SurrogateModel(gbt, norm, theta=d["theta"],
                          greedy_fleet=greedy_fleet, name=d["name"])


def rmse_study(train_set, test_set, sizes, n_repeats, seed,
               gbt_params=GbtParams(), ens_params=EnsRegressorParams()):
    """Repeated-subsample accuracy study.

    For each train size, draws ``n_repeats`` random subsamples of the
    training pool, fits both learners on normalised features, and
    records RMSE on the fixed test pool. Returns per-size mean and
    standard error for the loss-of-load and ENS learners.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x57)))
    results = {}
    for size in sizes:
        lol_rmses = []
        ens_rmses = []
        for _ in range(n_repeats):
            pick = rng.choice(len(train_set), size=size, replace=False)
            frames = train_set.frames[pick]
            lols = train_set.lol_labels[pick]
            enss = train_set.ens_labels[pick]
            norm = Normalizer.fit(frames)
            nf = norm.transform(frames)
            gbt = train_gbt(nf, lols, gbt_params)
            test_nf = norm.transform(test_set.frames)
            lol_rmses.append(evaluate_rmse(gbt.predict, test_nf,
                                           test_set.lol_labels))
            cur = enss > 0.0
            if cur.sum() >= 2:
                ens_model = train_ens_regressor(nf[cur], enss[cur], ens_params)
                test_cur = test_set.ens_labels > 0.0
                ens_rmses.append(evaluate_rmse(
                    lambda x: np.maximum(0.0, ens_model.predict(x)),
                    test_nf[test_cur], test_set.ens_labels[test_cur]))
        def mean_se(v):
            v = np.asarray(v)
            if len(v) == 0:
                return (math.nan, math.nan)
            se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            return (float(v.mean()), se)
        results[size] = {"lol": mean_se(lol_rmses), "ens": mean_se(ens_rmses)}
    return results
