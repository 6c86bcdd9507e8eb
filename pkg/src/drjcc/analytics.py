"""Load-profile features, k-means clustering and archetype labelling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

NIGHT_HOURS = (22, 23, 0, 1, 2, 3, 4, 5)
BUSINESS_HOURS = tuple(range(8, 18))
FEATURES = ("ncr", "bhr", "lf", "cv", "peak_hour", "papr", "dtc")


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    """Indicators of an average 24-hour consumption profile.

    ``bhr`` is the business-hours energy share divided by the uniform share
    10/24, so a flat profile scores 1.
    """

    ncr: float
    bhr: float
    lf: float
    cv: float
    peak_hour: int
    papr: float
    dtc: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURES], dtype=float)


def extract_features(profile) -> FeatureVector:
    x = np.asarray(profile, dtype=float)
    if x.shape != (24,):
        raise AnalyticsError(f"profile must have 24 hourly values, got shape {x.shape}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise AnalyticsError("profile values must be finite and nonnegative")
    total = x.sum()
    if total == 0:
        raise AnalyticsError("all-zero profile has no peak")
    peak = x.max()
    mean = total / 24
    if mean == 0:
        raise AnalyticsError("profile too small to normalize (mean underflows)")
    return FeatureVector(
        ncr=float(x[list(NIGHT_HOURS)].sum() / total),
        bhr=float(x[list(BUSINESS_HOURS)].sum() / total / (10 / 24)),
        lf=float(mean / peak),
        cv=float(x.var()),
        peak_hour=int(np.argmax(x)),
        papr=float(peak / mean),
        dtc=float(total),
    )


# ------------------------------------------------------------------ archetypes

ARCHETYPES = {
    "Residential": dict(dtc=6.99, papr=3.32, ncr=0.49, bhr=1.06, lf=0.31, peak_hour=18),
    "Commercial": dict(dtc=16.61, papr=2.43, ncr=0.25, bhr=1.73, lf=0.42, peak_hour=11),
    "Industrial": dict(dtc=28.24, papr=1.76, ncr=0.53, bhr=1.36, lf=0.57, peak_hour=17),
    "Public": dict(dtc=7.52, papr=2.51, ncr=0.32, bhr=1.37, lf=0.40, peak_hour=18),
}
LABEL_FEATURES = ("papr", "ncr", "bhr", "lf", "dtc", "peak_hour")


def _archetype_spread() -> dict:
    return {
        f: max(a[f] for a in ARCHETYPES.values()) - min(a[f] for a in ARCHETYPES.values())
        for f in LABEL_FEATURES
    }


def archetype_distance(values: dict, name: str) -> float:
    """Distance to an archetype over the features present in ``values``.

    Each feature difference is divided by the spread of that feature across
    the archetype table; peak hours are compared on the 24-hour circle.
    """
    row, spread = ARCHETYPES[name], _archetype_spread()
    total = 0.0
    for f in LABEL_FEATURES:
        if f not in values:
            continue
        diff = abs(values[f] - row[f])
        if f == "peak_hour":
            diff = min(diff, 24 - diff)
        total += (diff / spread[f]) ** 2
    return float(np.sqrt(total))


def nearest_archetype(values: dict) -> str:
    return min(ARCHETYPES, key=lambda name: archetype_distance(values, name))


# ------------------------------------------------------------------ k-means

@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d) in normalized space
    assignment: dict  # id -> cluster index
    wcss: float
    normalization: tuple  # (mins, maxs) per feature
    labels: dict = field(default_factory=dict)
    restart_wcss: list = field(default_factory=list)
    history: list = field(default_factory=list)  # per restart, wcss after every Lloyd step

    @property
    def ids(self) -> list:
        return list(self.assignment)

    def members(self, cluster: int) -> list:
        return [pid for pid, c in self.assignment.items() if c == cluster]

    def label_of(self, pid) -> str:
        return self.labels.get(self.assignment[pid], str(self.assignment[pid]))


def _as_matrix(features) -> np.ndarray:
    rows = [f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float) for f in features]
    if not rows:
        raise AnalyticsError("empty feature list")
    return np.vstack(rows)


def normalize(X: np.ndarray, mins=None, maxs=None):
    """Per-column min-max scaling to [0, 1]; constant columns map to 0."""
    mins = X.min(axis=0) if mins is None else mins
    maxs = X.max(axis=0) if maxs is None else maxs
    span = np.where(maxs > mins, maxs - mins, 1.0)
    return (X - mins) / span, (mins, maxs)


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plus_plus(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = _sq_dist(X, np.array(centers)).min(axis=1)
        if d2.sum() == 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / d2.sum())])
    return np.array(centers)


def _lloyd(X, C, max_iter):
    """Lloyd iterations; returns (centroids, labels, wcss, wcss history)."""
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dist(X, C)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(len(C)):
            pts = X[labels == j]
            if len(pts):
                C[j] = pts.mean(axis=0)
        history.append(float(((X - C[labels]) ** 2).sum()))
    wcss = float(((X - C[labels]) ** 2).sum())
    for a, b in zip(history, history[1:]):
        if b > a * (1 + 1e-12) + 1e-15:
            raise AssertionError(f"Lloyd wcss increased from {a} to {b}")
    return C, labels, wcss, history


def kmeans(features, k: int, restarts: int = 10, seed: int = 0, ids=None, max_iter: int = 300) -> ClusterModel:
    """Best of ``restarts`` k-means++ seeded Lloyd runs on min-max normalized features."""
    X0 = _as_matrix(features)
    if not 1 <= k <= len(X0):
        raise AnalyticsError(f"k must lie in 1..{len(X0)}, got {k}")
    if restarts < 1:
        raise AnalyticsError("restarts must be at least 1")
    ids = [str(i) for i in range(len(X0))] if ids is None else list(ids)
    X, norm = normalize(X0)
    rng = np.random.default_rng(seed)
    runs = []
    for r in range(restarts):
        C, labels, wcss, hist = _lloyd(X, _plus_plus(X, k, rng), max_iter)
        runs.append((wcss, r, C, labels, hist))
    wcss, _, C, labels, _ = min(runs, key=lambda run: (run[0], run[1]))
    return ClusterModel(
        k=k,
        centroids=C,
        assignment={pid: int(c) for pid, c in zip(ids, labels)},
        wcss=wcss,
        normalization=norm,
        restart_wcss=[run[0] for run in runs],
        history=[run[4] for run in runs],
    )


def recompute_wcss(model: ClusterModel, features) -> float:
    X, _ = normalize(_as_matrix(features), *model.normalization)
    labels = np.array([model.assignment[pid] for pid in model.ids])
    return float(((X - model.centroids[labels]) ** 2).sum())


@dataclass
class ElbowResult:
    k: int
    ks: list
    wcss: list
    low_confidence: bool

    def curve(self) -> list:
        return list(zip(self.ks, self.wcss))


def elbow_select_k(features, k_range, restarts: int = 10, seed: int = 0) -> ElbowResult:
    """Pick k at the largest discrete second difference of the wcss curve.

    The result is flagged low-confidence when that second difference is
    below 5% of the first wcss value. Near-ties resolve to the smallest k.
    """
    ks = list(k_range)
    n = len(_as_matrix(features))
    if len(ks) < 3:
        raise AnalyticsError("elbow selection needs at least three values of k")
    if ks != list(range(ks[0], ks[-1] + 1)) or ks[0] < 1 or ks[-1] > n:
        raise AnalyticsError(f"k range must be consecutive within 1..{n}")
    w = [kmeans(features, k, restarts, seed).wcss for k in ks]
    second = np.array([w[i - 1] - 2 * w[i] + w[i + 1] for i in range(1, len(ks) - 1)])
    # ties (up to roundoff) go to the smallest k
    best = int(np.flatnonzero(second >= second.max() - 1e-9 * abs(w[0]))[0])
    return ElbowResult(ks[best + 1], ks, w, bool(second[best] < 0.05 * w[0]))


def cluster_means(model: ClusterModel, features) -> dict:
    """Raw-scale mean feature values per cluster, keyed by feature name."""
    X = _as_matrix(features)
    out = {}
    for c in range(model.k):
        rows = [i for i, pid in enumerate(model.ids) if model.assignment[pid] == c]
        mean = X[rows].mean(axis=0)
        out[c] = dict(zip(FEATURES, mean))
    return out


def label_clusters(model: ClusterModel, features) -> ClusterModel:
    """Match clusters to archetypes by minimum total distance (one label per cluster)."""
    if model.k > len(ARCHETYPES):
        raise AnalyticsError(f"cannot label {model.k} clusters with {len(ARCHETYPES)} archetypes")
    means = cluster_means(model, features)
    names = list(ARCHETYPES)
    cost = np.array([[archetype_distance(means[c], a) for a in names] for c in range(model.k)])
    rows, cols = linear_sum_assignment(cost)
    return replace(model, labels={int(r): names[c] for r, c in zip(rows, cols)})


def assign_cluster_radius(sweep: dict) -> dict:
    """Per cluster, the radius with the lowest cost; ties go to the larger radius.

    ``sweep`` maps cluster -> {rho: out-of-sample cost}.
    """
    if not sweep:
        raise AnalyticsError("empty sweep")
    chosen = {}
    for cluster, costs in sweep.items():
        if len(costs) < 2:
            raise AnalyticsError(f"cluster {cluster!r}: need at least two radii")
        best = min(costs.values())
        chosen[cluster] = max(rho for rho, c in costs.items() if c <= best)
    return chosen
