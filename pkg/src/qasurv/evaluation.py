"""Repeated, stratified k-fold cross-validation of survival forests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import SampleSet
from .concordance import CIndexResult, ConcordanceError, c_index
from .rsf import ForestParams, fit_forest, predict_risk

__all__ = [
    "CIndexResult",
    "CVReport",
    "c_index",
    "cross_validate",
    "kfold_split",
]

logger = logging.getLogger(__name__)

CV_HEADER = "dataset,theta,attributes,k,runs,seed,mean_c,std_c,skipped_folds"


class CrossValidationError(ValueError):
    pass


@dataclass
class CVReport:
    dataset_label: str
    theta: int | None
    attribute_selection: str
    k: int
    runs: int
    seed: int
    per_fold_scores: list[float] = field(default_factory=list)
    skipped: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def mean_c(self) -> float:
        return float(np.mean(self.per_fold_scores)) if self.per_fold_scores else float("nan")

    @property
    def std_c(self) -> float:
        return float(np.std(self.per_fold_scores)) if self.per_fold_scores else float("nan")

    def csv_row(self) -> str:
        theta = "" if self.theta is None else str(self.theta)
        return (
            f"{self.dataset_label},{theta},{self.attribute_selection},{self.k},"
            f"{self.runs},{self.seed},{self.mean_c:.6f},{self.std_c:.6f},{len(self.skipped)}"
        )

    def folds_csv(self) -> str:
        lines = ["run,fold,c_index"]
        scores = iter(self.per_fold_scores)
        skipped = {(r, f): reason for r, f, reason in self.skipped}
        for run in range(self.runs):
            for fold in range(self.k):
                if (run, fold) in skipped:
                    lines.append(f"{run},{fold},skipped: {skipped[run, fold]}")
                else:
                    lines.append(f"{run},{fold},{next(scores):.6f}")
        return "\n".join(lines) + "\n"


def kfold_split(n: int, k: int, rng: np.random.Generator, events) -> list[np.ndarray]:
    """Shuffle and deal indices into ``k`` folds, events first.

    Dealing the shuffled events round-robin, then the censored samples
    continuing the same rotation, keeps fold sizes and per-fold event
    counts each within one of each other.
    """
    events = np.asarray(events)
    if k < 2:
        raise CrossValidationError("k must be at least 2")
    if n < k:
        raise CrossValidationError(f"cannot split {n} samples into {k} folds")
    if len(events) != n:
        raise CrossValidationError("events must have one flag per sample")
    if int(events.sum()) < k:
        raise CrossValidationError(f"{int(events.sum())} events is fewer than k={k} folds")
    hit = rng.permutation(np.flatnonzero(events == 1))
    miss = rng.permutation(np.flatnonzero(events != 1))
    dealt = np.concatenate([hit, miss])
    return [np.sort(dealt[f::k]) for f in range(k)]


def cross_validate(
    samples: SampleSet,
    params: ForestParams = ForestParams(),
    k: int = 5,
    runs: int = 30,
    seed: int = 0,
    dataset_label: str = "",
    threads: int = 1,
) -> CVReport:
    """Held-out C-index of forests over ``runs`` reshuffled k-fold splits."""
    report = CVReport(
        dataset_label=dataset_label,
        theta=samples.theta,
        attribute_selection=samples.selection.value if samples.selection else "",
        k=k,
        runs=runs,
        seed=seed,
    )
    X, events, durations = samples.features, samples.events, samples.durations
    for run, run_seq in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        split_seq, forest_seq = run_seq.spawn(2)
        folds = kfold_split(len(samples), k, np.random.default_rng(split_seq), events)
        forest_seeds = forest_seq.generate_state(k, dtype=np.uint64)
        for f, test in enumerate(folds):
            train = np.setdiff1d(np.arange(len(samples)), test, assume_unique=True)
            fold_params = replace(params, seed=int(forest_seeds[f]))
            try:
                forest = fit_forest(X[train], events[train], durations[train], fold_params, threads)
                risk = predict_risk(forest, X[test])
                score = c_index(risk, events[test], durations[test]).c_index
            except ConcordanceError as exc:
                report.skipped.append((run, f, str(exc)))
                logger.warning("run %d fold %d skipped: %s", run, f, exc)
                continue
            report.per_fold_scores.append(score)
    return report
