"""Random survival forests with log-rank splitting.

Each tree is grown on a bootstrap draw of the training samples. At every
node a fresh random subset of ``mtry`` features is examined, and the split
maximizing the two-sample log-rank statistic between the children wins,
subject to both children keeping at least ``min_leaf_deaths`` events. Leaves
hold the Nelson-Aalen cumulative hazard of their in-bag samples, evaluated
on the grid of distinct training event times, so the ensemble hazard is the
plain mean of leaf hazards.

The heavy loops are compiled with numba. Every tree draws from its own
random stream derived from ``(seed, tree_index)``, so results do not depend
on how many threads grow the trees.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .concordance import c_index
from .survival import CumulativeHazard, logrank_terms

FORMAT_VERSION = 1
TIE_RTOL = 1e-12


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_leaf_deaths: int = 3
    mtry: int | None = None  # floor(sqrt(m)) when None
    max_split_candidates: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be at least 1")
        if self.min_leaf_deaths < 1:
            raise ForestError("min_leaf_deaths must be at least 1")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError("mtry must be at least 1")
        if self.max_split_candidates < 1:
            raise ForestError("max_split_candidates must be at least 1")

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else max(1, math.isqrt(n_features))
        if mtry > n_features:
            raise ForestError(f"mtry={mtry} exceeds the {n_features} available features")
        return mtry


@dataclass(eq=False)
class SurvivalTree:
    """Flat node arrays. ``leaf[i] >= 0`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    leaf_chf: np.ndarray  # (n_leaves, len(time_grid))
    leaf_deaths: np.ndarray
    inbag_counts: np.ndarray  # draws per training sample
    risk_weights: np.ndarray | None = None
    leaf_risk: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.risk_weights is None:
            self.risk_weights = np.ones(self.leaf_chf.shape[1])
        self.leaf_risk = self.leaf_chf @ self.risk_weights

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_chf)

    @property
    def oob_mask(self) -> np.ndarray:
        return self.inbag_counts == 0

    @property
    def in_bag_ids(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.inbag_counts)), self.inbag_counts)

    @property
    def oob_ids(self) -> np.ndarray:
        return np.flatnonzero(self.inbag_counts == 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        nodes = _route(X, self.feature, self.threshold, self.left, self.right)
        return self.leaf[nodes]


@dataclass(eq=False)
class SurvivalForest:
    trees: list[SurvivalTree]
    params: ForestParams
    time_grid: np.ndarray
    feature_dim: int
    mtry: int
    risk_weights: np.ndarray


@dataclass(frozen=True)
class ImportanceReport:
    mean_importance: np.ndarray
    std_importance: np.ndarray
    baseline_error: float
    feature_names: tuple[str, ...] = ()

    def ranking(self) -> list[int]:
        """Feature indices, most important first (ties by index)."""
        return sorted(range(len(self.mean_importance)), key=lambda j: (-self.mean_importance[j], j))

    def to_csv(self) -> str:
        names = self.feature_names or tuple(f"x{j}" for j in range(len(self.mean_importance)))
        lines = ["feature,name,mean_importance,std_importance"]
        for j, (m, s) in enumerate(zip(self.mean_importance, self.std_importance)):
            lines.append(f"{j},{names[j]},{m:.6f},{s:.6f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True, nogil=True)
def _split_search(X, at_risk_end, events, idx, feats, min_deaths, max_cand, n_times):
    """Best (feature, threshold, statistic) over ``feats`` for the samples ``idx``.

    ``at_risk_end[s]`` is the number of grid times a sample is at risk for;
    an event sample died at grid index ``at_risk_end[s] - 1``.
    Returns feature -1 when no admissible split exists.
    """
    n = idx.shape[0]
    # compress the grid to the event times present in this node
    has_event = np.zeros(n_times, dtype=np.bool_)
    total_deaths = 0
    for k in range(n):
        s = idx[k]
        if events[s] == 1:
            has_event[at_risk_end[s] - 1] = True
            total_deaths += 1
    local_before = np.zeros(n_times + 1, dtype=np.int64)
    for g in range(n_times):
        local_before[g + 1] = local_before[g] + (1 if has_event[g] else 0)
    n_local = local_before[n_times]

    best_feat = -1
    best_thr = 0.0
    best_stat = -1.0
    if n_local == 0 or total_deaths < 2 * min_deaths:
        return best_feat, best_thr, best_stat

    lp = np.empty(n, dtype=np.int64)
    le = np.empty(n, dtype=np.int64)
    hist_all = np.zeros(n_local + 1)
    d_tot = np.zeros(n_local)
    for k in range(n):
        s = idx[k]
        lp[k] = local_before[at_risk_end[s]]
        hist_all[lp[k]] += 1.0
        if events[s] == 1:
            le[k] = local_before[at_risk_end[s] - 1]
            d_tot[le[k]] += 1.0
        else:
            le[k] = -1
    n_tot = np.zeros(n_local)
    running = 0.0
    for j in range(n_local - 1, -1, -1):
        running += hist_all[j + 1]
        n_tot[j] = running

    vals = np.empty(n)
    cuts = np.empty(max_cand, dtype=np.int64)
    hist_left = np.zeros(n_local + 1)
    d_left = np.zeros(n_local)
    n_left = np.zeros(n_local)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for k in range(n):
            vals[k] = X[idx[k], f]
        order = np.argsort(vals, kind="mergesort")
        sv = vals[order]
        if sv[0] == sv[n - 1]:
            continue

        n_bounds = 0
        for k in range(1, n):
            if sv[k] != sv[k - 1]:
                n_bounds += 1
        n_cuts = 0
        if n_bounds <= max_cand:
            for k in range(1, n):
                if sv[k] != sv[k - 1]:
                    cuts[n_cuts] = k
                    n_cuts += 1
        else:
            # quantile-spaced: cut just above the value at each sample quantile
            last = 0
            for i in range(1, max_cand + 1):
                q = (i * n) // (max_cand + 1)
                c = q + 1
                while c < n and sv[c] == sv[q]:
                    c += 1
                if c < n and c > last:
                    cuts[n_cuts] = c
                    n_cuts += 1
                    last = c

        hist_left[:] = 0.0
        d_left[:] = 0.0
        deaths_left = 0
        ptr = 0
        for ci in range(n_cuts):
            c = cuts[ci]
            while ptr < c:
                k = order[ptr]
                hist_left[lp[k]] += 1.0
                if le[k] >= 0:
                    d_left[le[k]] += 1.0
                    deaths_left += 1
                ptr += 1
            if deaths_left < min_deaths or total_deaths - deaths_left < min_deaths:
                continue
            running = 0.0
            for j in range(n_local - 1, -1, -1):
                running += hist_left[j + 1]
                n_left[j] = running
            o, e, v = logrank_terms(n_tot, d_tot, n_left, d_left)
            stat = (o - e) * (o - e) / v if v > 0.0 else 0.0
            # a gain below rounding noise counts as a tie and keeps the earlier split
            if stat > best_stat + TIE_RTOL * (1.0 + abs(best_stat)):
                best_stat = stat
                best_feat = f
                best_thr = 0.5 * (sv[c - 1] + sv[c])
    return best_feat, best_thr, best_stat


@numba.njit(cache=True, nogil=True)
def _grow(X, at_risk_end, events, inbag, keys, mtry, min_deaths, max_cand, n_times):
    n = inbag.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf = np.full(cap, -1, dtype=np.int64)
    leaf_start = np.empty(cap, dtype=np.int64)
    leaf_end = np.empty(cap, dtype=np.int64)
    order = inbag.copy()
    buf = np.empty(n, dtype=np.int64)

    stack = np.empty((cap, 3), dtype=np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, n
    depth = 1
    n_nodes = 1
    n_leaves = 0
    while depth > 0:
        depth -= 1
        node, start, end = stack[depth, 0], stack[depth, 1], stack[depth, 2]
        seg = order[start:end]
        deaths = 0
        for k in range(seg.shape[0]):
            deaths += events[seg[k]]
        split_feat = -1
        split_thr = 0.0
        if deaths >= 2 * min_deaths:
            feats = np.sort(np.argsort(keys[node])[:mtry])
            split_feat, split_thr, _ = _split_search(
                X, at_risk_end, events, seg, feats, min_deaths, max_cand, n_times
            )
        if split_feat < 0:
            leaf[node] = n_leaves
            leaf_start[n_leaves] = start
            leaf_end[n_leaves] = end
            n_leaves += 1
            continue
        # stable partition of the segment: left child keeps x <= threshold
        n_l = 0
        n_r = 0
        for k in range(seg.shape[0]):
            if X[seg[k], split_feat] <= split_thr:
                order[start + n_l] = seg[k]
                n_l += 1
            else:
                buf[n_r] = seg[k]
                n_r += 1
        for k in range(n_r):
            order[start + n_l + k] = buf[k]
        feature[node] = split_feat
        threshold[node] = split_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[depth, 0], stack[depth, 1], stack[depth, 2] = n_nodes + 1, start + n_l, end
        depth += 1
        stack[depth, 0], stack[depth, 1], stack[depth, 2] = n_nodes, start, start + n_l
        depth += 1
        n_nodes += 2

    chf = np.zeros((n_leaves, n_times))
    leaf_deaths = np.zeros(n_leaves, dtype=np.int64)
    d = np.zeros(n_times)
    hist = np.zeros(n_times + 1)
    for lf in range(n_leaves):
        d[:] = 0.0
        hist[:] = 0.0
        for k in range(leaf_start[lf], leaf_end[lf]):
            s = order[k]
            hist[at_risk_end[s]] += 1.0
            if events[s] == 1:
                d[at_risk_end[s] - 1] += 1.0
                leaf_deaths[lf] += 1
        running = 0.0
        cum = 0.0
        for j in range(n_times - 1, -1, -1):
            running += hist[j + 1]
            hist[j + 1] = running  # reuse as at-risk count at grid index j
        for j in range(n_times):
            if d[j] > 0.0:
                cum += d[j] / hist[j + 1]
            chf[lf, j] = cum
    return (
        feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
        leaf[:n_nodes], chf, leaf_deaths,
    )


@numba.njit(cache=True, nogil=True)
def _route(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


# ---------------------------------------------------------------- helpers


def _prepare(X, events, durations):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ForestError("features must be a 2-D array")
    events = np.ascontiguousarray(events, dtype=np.int64).ravel()
    durations = np.asarray(durations).ravel()
    if not (len(X) == len(events) == len(durations)):
        raise ForestError("features, events and durations differ in length")
    if not np.all((events == 0) | (events == 1)):
        raise ForestError("events must be 0 or 1")
    return X, events, durations


def event_time_grid(events, durations) -> np.ndarray:
    """Sorted distinct durations of samples that had the event."""
    return np.unique(np.asarray(durations)[np.asarray(events) == 1])


def _at_risk_end(durations, grid) -> np.ndarray:
    return np.searchsorted(grid, durations, side="right").astype(np.int64)


def mortality_weights(durations, grid) -> np.ndarray:
    """Training samples observed at each grid time (censored ones at the last
    grid time not after their duration).

    Summing a hazard against these weights gives the expected number of
    deaths had every training sample shared one feature vector, the usual
    forest mortality score.
    """
    end = _at_risk_end(np.asarray(durations), grid)
    return np.bincount(end[end > 0] - 1, minlength=len(grid)).astype(np.float64)


def bootstrap_sample(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` draws with replacement, plus the ids that were never drawn."""
    if n < 1:
        raise ForestError("cannot bootstrap an empty sample")
    in_bag = rng.integers(0, n, size=n)
    drawn = np.zeros(n, dtype=bool)
    drawn[in_bag] = True
    return np.sort(in_bag), np.flatnonzero(~drawn)


def best_split(
    X, events, durations, node_idx, candidate_features, params: ForestParams
) -> tuple[int, float, float] | None:
    """Highest log-rank split of the samples ``node_idx`` over the candidates.

    Thresholds are midpoints between adjacent distinct values (thinned to
    sample quantiles past ``params.max_split_candidates``); samples with
    ``x <= threshold`` go left. Ties resolve to the lowest feature index,
    then the lowest threshold. ``None`` when no split leaves both children
    with ``params.min_leaf_deaths`` events.
    """
    X, events, durations = _prepare(X, events, durations)
    node_idx = np.asarray(node_idx, dtype=np.int64)
    if len(node_idx) == 0:
        raise ForestError("node has no samples")
    grid = event_time_grid(events[node_idx], durations[node_idx])
    feats = np.sort(np.asarray(candidate_features, dtype=np.int64))
    feat, thr, stat = _split_search(
        X, _at_risk_end(durations, grid), events, node_idx, feats,
        params.min_leaf_deaths, params.max_split_candidates, len(grid),
    )
    if feat < 0:
        return None
    return int(feat), float(thr), float(stat)


def grow_tree(
    X,
    events,
    durations,
    in_bag,
    params: ForestParams,
    rng: np.random.Generator,
    time_grid: np.ndarray | None = None,
    risk_weights: np.ndarray | None = None,
) -> SurvivalTree:
    """Grow one tree on the (possibly repeated) sample ids ``in_bag``.

    Nodes with fewer than ``2 * min_leaf_deaths`` events become leaves.
    """
    X, events, durations = _prepare(X, events, durations)
    in_bag = np.sort(np.asarray(in_bag, dtype=np.int64))
    deaths = int(events[in_bag].sum())
    if deaths < params.min_leaf_deaths:
        raise ForestError(
            f"in-bag sample has {deaths} events; at least min_leaf_deaths="
            f"{params.min_leaf_deaths} are required"
        )
    grid = event_time_grid(events, durations) if time_grid is None else time_grid
    if risk_weights is None:
        risk_weights = mortality_weights(durations, grid)
    mtry = params.resolve_mtry(X.shape[1])
    keys = rng.random((2 * len(in_bag) + 1, X.shape[1]))
    feature, threshold, left, right, leaf, chf, leaf_deaths = _grow(
        X, _at_risk_end(durations, grid), events, in_bag, keys, mtry,
        params.min_leaf_deaths, params.max_split_candidates, len(grid),
    )
    return SurvivalTree(
        feature, threshold, left, right, leaf, chf, leaf_deaths,
        np.bincount(in_bag, minlength=len(X)), risk_weights,
    )


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]))


def fit_forest(X, events, durations, params: ForestParams = ForestParams(), threads: int = 1) -> SurvivalForest:
    X, events, durations = _prepare(X, events, durations)
    n_events = int(events.sum())
    if n_events < 2 * params.min_leaf_deaths:
        raise ForestError(
            f"{n_events} events in the data; at least 2 * min_leaf_deaths = "
            f"{2 * params.min_leaf_deaths} are required"
        )
    mtry = params.resolve_mtry(X.shape[1])
    grid = event_time_grid(events, durations)
    weights = mortality_weights(durations, grid)

    def build(index: int) -> SurvivalTree:
        rng = _tree_rng(params.seed, index)
        for _ in range(1000):
            in_bag, _ = bootstrap_sample(len(X), rng)
            # a draw can miss nearly every event in tiny data; redraw from the same stream
            if events[in_bag].sum() >= params.min_leaf_deaths:
                return grow_tree(X, events, durations, in_bag, params, rng, grid, weights)
        raise ForestError("could not draw a bootstrap sample with enough events")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    else:
        trees = [build(i) for i in range(params.n_trees)]
    return SurvivalForest(trees, params, grid, X.shape[1], mtry, weights)


def _check_features(forest: SurvivalForest, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[-1] != forest.feature_dim:
        raise ForestError(
            f"expected {forest.feature_dim} features, got {X.shape[-1]}"
        )
    return X


def predict_chf(forest: SurvivalForest, features) -> CumulativeHazard:
    """Ensemble cumulative hazard for one feature vector."""
    x = _check_features(forest, np.atleast_1d(features))
    if x.ndim != 1:
        raise ForestError("predict_chf takes a single feature vector")
    chf = predict_chf_batch(forest, x[None, :])[0]
    return CumulativeHazard(forest.time_grid.copy(), chf)


def predict_chf_batch(forest: SurvivalForest, X) -> np.ndarray:
    X = _check_features(forest, X)
    total = np.zeros((len(X), len(forest.time_grid)))
    for tree in forest.trees:
        total += tree.leaf_chf[tree.apply(X)]
    return total / len(forest.trees)


def predict_risk(forest: SurvivalForest, features):
    """Mortality: the ensemble hazard summed over the time grid, each grid
    time weighted by the training samples observed there.

    Returns a float for one vector and an array for a 2-D input.
    """
    X = _check_features(forest, features)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    total = np.zeros(len(X))
    for tree in forest.trees:
        total += tree.leaf_risk[tree.apply(X)]
    risk = total / len(forest.trees)
    return float(risk[0]) if single else risk


def oob_risk(forest: SurvivalForest, X) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample risk averaged over the trees that did not see the sample.

    Returns ``(risk, n_oob_trees)``; risk is NaN where no tree is OOB.
    """
    X = _check_features(forest, X)
    if len(X) != len(forest.trees[0].inbag_counts):
        raise ForestError("OOB quantities need the training samples the forest was fit on")
    total = np.zeros(len(X))
    count = np.zeros(len(X), dtype=np.int64)
    for tree in forest.trees:
        mask = tree.oob_mask
        if not mask.any():
            continue
        total[mask] += tree.leaf_risk[tree.apply(X[mask])]
        count[mask] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        risk = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return risk, count


def oob_error(forest: SurvivalForest, X, events, durations) -> float:
    """``1 - C`` over the OOB risks; samples never out of bag are left out."""
    risk, count = oob_risk(forest, X)
    keep = count > 0
    if not keep.any():
        raise ForestError("no sample is out of bag for any tree; grow more trees")
    events = np.asarray(events)[keep]
    durations = np.asarray(durations)[keep]
    return 1.0 - c_index(risk[keep], events, durations).c_index


def permutation_importance(
    forest: SurvivalForest,
    X,
    events,
    durations,
    n_repeats: int = 10,
    rng: np.random.Generator | int | None = None,
    feature_names: tuple[str, ...] = (),
) -> ImportanceReport:
    """Increase in OOB error when one feature column is shuffled."""
    if n_repeats < 1:
        raise ForestError("n_repeats must be at least 1")
    rng = np.random.default_rng(rng)
    X = _check_features(forest, X)
    baseline = oob_error(forest, X, events, durations)
    scores = np.empty((forest.feature_dim, n_repeats))
    for j in range(forest.feature_dim):
        column = X[:, j]
        for r in range(n_repeats):
            shuffled = X.copy()
            shuffled[:, j] = column[rng.permutation(len(column))]
            scores[j, r] = oob_error(forest, shuffled, events, durations) - baseline
    return ImportanceReport(
        scores.mean(axis=1), scores.std(axis=1), baseline, tuple(feature_names)
    )


# ---------------------------------------------------------------- persistence


def save_forest(forest: SurvivalForest, path) -> None:
    """Write a forest to a ``.npz`` archive (format version 1)."""
    arrays: dict[str, np.ndarray] = {
        "time_grid": forest.time_grid,
        "risk_weights": forest.risk_weights,
    }
    for i, tree in enumerate(forest.trees):
        for name in ("feature", "threshold", "left", "right", "leaf", "leaf_chf",
                     "leaf_deaths", "inbag_counts"):
            arrays[f"t{i}_{name}"] = getattr(tree, name)
    header = {
        "format_version": FORMAT_VERSION,
        "params": asdict(forest.params),
        "feature_dim": forest.feature_dim,
        "mtry": forest.mtry,
        "n_trees": len(forest.trees),
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_forest(path) -> SurvivalForest:
    with np.load(path) as data:
        header = json.loads(data["header"].tobytes().decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ForestError(f"unsupported forest format {header.get('format_version')!r}")
        trees = []
        for i in range(header["n_trees"]):
            parts = [data[f"t{i}_{name}"] for name in (
                "feature", "threshold", "left", "right", "leaf", "leaf_chf",
                "leaf_deaths", "inbag_counts")]
            trees.append(SurvivalTree(*parts, data["risk_weights"]))
        grid = data["time_grid"]
        weights = data["risk_weights"]
    return SurvivalForest(
        trees, ForestParams(**header["params"]), grid, header["feature_dim"], header["mtry"],
        weights,
    )
