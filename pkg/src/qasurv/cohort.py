"""From community records to survival samples.

A user is described by eleven attributes, in this fixed order:

====  ========================================  =========
name  meaning                                   group
====  ========================================  =========
a1    downvotes cast                            behaviour
a2    upvotes cast                              behaviour
a3    questions posted                          behaviour
a4    answers posted                            behaviour
a5    comments written                          behaviour
a6    mean views of the user's questions        content
a7    mean comments on the user's questions     content
a8    mean score of the user's questions        content
a9    mean score of the user's answers          content
a10   mean comments on the user's answers       content
a11   mean score of the user's comments         content
====  ========================================  =========

Means over an empty set are 0.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import defaultdict
from dataclasses import astuple, dataclass
from datetime import datetime
from typing import Iterator, Sequence

import numpy as np

from .ingest import CommunityDataset, PostType, UserRecord

DAYS_PER_MONTH = 30.44

ATTRIBUTE_NAMES = tuple(f"a{i}" for i in range(1, 12))
ATTRIBUTE_LABELS = (
    "downvotes cast",
    "upvotes cast",
    "questions",
    "answers",
    "comments",
    "avg question views",
    "avg question comments",
    "avg question score",
    "avg answer score",
    "avg answer comments",
    "avg comment score",
)


class AttributeSelection(str, enum.Enum):
    BEHAVIOURAL = "behavioural"
    CONTENT = "content"
    BOTH = "both"

    @property
    def indices(self) -> tuple[int, ...]:
        if self is AttributeSelection.BEHAVIOURAL:
            return tuple(range(0, 5))
        if self is AttributeSelection.CONTENT:
            return tuple(range(5, 11))
        return tuple(range(11))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(ATTRIBUTE_NAMES[i] for i in self.indices)


class Population(str, enum.Enum):
    ALL = "all"
    CONTRIBUTORS = "contributors"


class Criterion(str, enum.Enum):
    """Contribution type used to split users in two groups."""

    Q = "Q"  # posted a question
    A = "A"  # posted an answer
    C = "C"  # wrote a comment
    U = "U"  # cast an upvote
    D = "D"  # cast a downvote

    @property
    def field(self) -> str:
        return {
            "Q": "a3_questions",
            "A": "a4_answers",
            "C": "a5_comments",
            "U": "a2_upvotes",
            "D": "a1_downvotes",
        }[self.value]


@dataclass(frozen=True, slots=True)
class UserRepresentationVector:
    user_id: int
    a1_downvotes: int
    a2_upvotes: int
    a3_questions: int
    a4_answers: int
    a5_comments: int
    a6_avg_question_views: float
    a7_avg_question_comments: float
    a8_avg_question_score: float
    a9_avg_answer_score: float
    a10_avg_answer_comments: float
    a11_avg_comment_upvotes: float

    def values(self) -> tuple[float, ...]:
        return astuple(self)[1:]

    @property
    def is_contributor(self) -> bool:
        return any(v > 0 for v in self.values()[:5])


@dataclass(frozen=True, slots=True)
class SurvivalSample:
    user_id: int
    features: tuple[float, ...]
    event: int
    duration_months: int


@dataclass(frozen=True)
class CohortSplit:
    criterion: Criterion
    in_set: frozenset[int]
    out_set: frozenset[int]


class CohortError(ValueError):
    pass


def months_between(earlier: datetime, later: datetime) -> int:
    """Whole 30.44-day periods from ``earlier`` to ``later``."""
    if later < earlier:
        raise CohortError(f"timestamps out of order: {later} precedes {earlier}")
    days = (later - earlier).total_seconds() / 86400.0
    return math.floor(days / DAYS_PER_MONTH)


def label_disengagement(
    user: UserRecord, observation_end: datetime, theta: int
) -> tuple[int, int]:
    """Return ``(event, duration)`` for one user.

    The user counts as disengaged (event 1) when more than ``theta`` months
    separate their last access from the end of observation. The duration is
    the span from account creation to last access, for every user.
    """
    if theta <= 0:
        raise CohortError("theta must be positive")
    if user.last_access_date > observation_end:
        raise CohortError(
            f"user {user.user_id}: last access {user.last_access_date} after "
            f"observation end {observation_end}"
        )
    idle = months_between(user.last_access_date, observation_end)
    event = 0 if idle <= theta else 1
    return event, months_between(user.creation_date, user.last_access_date)


class _Accumulator:
    __slots__ = ("n", "total")

    def __init__(self) -> None:
        self.n = 0
        self.total = 0.0

    def add(self, value: float) -> None:
        self.n += 1
        self.total += value

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0


def build_urvs(dataset: CommunityDataset) -> dict[int, UserRepresentationVector]:
    """Compute the attribute vector of every user in one pass over the records."""
    comments_per_post: dict[int, int] = defaultdict(int)
    comment_scores: dict[int, _Accumulator] = defaultdict(_Accumulator)
    for c in dataset.comments:
        comments_per_post[c.post_id] += 1
        if c.owner_user_id is not None:
            comment_scores[c.owner_user_id].add(c.score)

    q_views: dict[int, _Accumulator] = defaultdict(_Accumulator)
    q_comments: dict[int, _Accumulator] = defaultdict(_Accumulator)
    q_score: dict[int, _Accumulator] = defaultdict(_Accumulator)
    a_score: dict[int, _Accumulator] = defaultdict(_Accumulator)
    a_comments: dict[int, _Accumulator] = defaultdict(_Accumulator)
    for p in dataset.posts:
        owner = p.owner_user_id
        if owner is None:
            continue
        n_comments = comments_per_post.get(p.post_id, 0)
        if p.post_type is PostType.QUESTION:
            q_views[owner].add(p.view_count)
            q_comments[owner].add(n_comments)
            q_score[owner].add(p.score)
        else:
            a_score[owner].add(p.score)
            a_comments[owner].add(n_comments)

    empty = _Accumulator()
    urvs = {}
    for u in dataset.users:
        uid = u.user_id
        urvs[uid] = UserRepresentationVector(
            user_id=uid,
            a1_downvotes=u.downvotes_cast,
            a2_upvotes=u.upvotes_cast,
            a3_questions=q_score.get(uid, empty).n,
            a4_answers=a_score.get(uid, empty).n,
            a5_comments=comment_scores.get(uid, empty).n,
            a6_avg_question_views=q_views.get(uid, empty).mean,
            a7_avg_question_comments=q_comments.get(uid, empty).mean,
            a8_avg_question_score=q_score.get(uid, empty).mean,
            a9_avg_answer_score=a_score.get(uid, empty).mean,
            a10_avg_answer_comments=a_comments.get(uid, empty).mean,
            a11_avg_comment_upvotes=comment_scores.get(uid, empty).mean,
        )
    return urvs


def _urvs(dataset: CommunityDataset) -> dict[int, UserRepresentationVector]:
    # memoized on the dataset instance; the dataset is never mutated after load
    cached = dataset.__dict__.get("_urvs")
    if cached is None:
        cached = build_urvs(dataset)
        dataset.__dict__["_urvs"] = cached
    return cached


def build_urv(user_id: int, dataset: CommunityDataset) -> UserRepresentationVector:
    try:
        return _urvs(dataset)[user_id]
    except KeyError:
        raise CohortError(f"unknown user id {user_id}") from None


def dichotomize(dataset: CommunityDataset, criterion: Criterion | str) -> CohortSplit:
    """Split users by whether they made at least one contribution of a kind."""
    criterion = Criterion(criterion)
    urvs = _urvs(dataset)
    inside = frozenset(uid for uid, v in urvs.items() if getattr(v, criterion.field) > 0)
    return CohortSplit(criterion, inside, frozenset(urvs) - inside)


def contributors(dataset: CommunityDataset) -> frozenset[int]:
    """Users with any contribution of the five kinds."""
    return frozenset(uid for uid, v in _urvs(dataset).items() if v.is_contributor)


class SampleSet(Sequence[SurvivalSample]):
    """Column-oriented survival samples, ordered by user id.

    Indexing and iteration yield :class:`SurvivalSample` rows; the array
    attributes are what the estimators consume.
    """

    def __init__(
        self,
        user_ids: np.ndarray,
        features: np.ndarray,
        events: np.ndarray,
        durations: np.ndarray,
        feature_names: Sequence[str],
        theta: int | None = None,
        selection: AttributeSelection | None = None,
    ):
        self.user_ids = np.asarray(user_ids, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.events = np.asarray(events, dtype=np.int64)
        self.durations = np.asarray(durations, dtype=np.int64)
        self.feature_names = tuple(feature_names)
        self.theta = theta
        self.selection = selection
        n = len(self.user_ids)
        if self.features.shape != (n, len(self.feature_names)):
            raise CohortError(
                f"feature matrix shape {self.features.shape} does not match "
                f"{n} samples x {len(self.feature_names)} names"
            )
        if len(self.events) != n or len(self.durations) != n:
            raise CohortError("events and durations must have one entry per sample")

    def __len__(self) -> int:
        return len(self.user_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        return SurvivalSample(
            int(self.user_ids[i]),
            tuple(float(x) for x in self.features[i]),
            int(self.events[i]),
            int(self.durations[i]),
        )

    def __iter__(self) -> Iterator[SurvivalSample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(
            self.user_ids[idx],
            self.features[idx],
            self.events[idx],
            self.durations[idx],
            self.feature_names,
            self.theta,
            self.selection,
        )

    def to_csv(self) -> str:
        """``user_id,event,duration,<feature columns>``; floats in ``repr`` form."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["user_id", "event", "duration", *self.feature_names])
        for uid, ev, dur, row in zip(self.user_ids, self.events, self.durations, self.features):
            writer.writerow([int(uid), int(ev), int(dur), *(_fmt(x) for x in row)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def build_samples(
    dataset: CommunityDataset,
    theta: int,
    selection: AttributeSelection | str = AttributeSelection.BOTH,
    population: Population | str = Population.ALL,
) -> SampleSet:
    selection = AttributeSelection(selection)
    population = Population(population)
    if theta <= 0:
        raise CohortError("theta must be positive")
    urvs = _urvs(dataset)
    ids = sorted(urvs)
    if population is Population.CONTRIBUTORS:
        ids = [uid for uid in ids if urvs[uid].is_contributor]
    if not ids:
        raise CohortError(f"population {population.value!r} is empty")

    cols = selection.indices
    users = dataset.users_by_id
    features = np.empty((len(ids), len(cols)))
    events = np.empty(len(ids), dtype=np.int64)
    durations = np.empty(len(ids), dtype=np.int64)
    for row, uid in enumerate(ids):
        values = urvs[uid].values()
        features[row] = [values[c] for c in cols]
        events[row], durations[row] = label_disengagement(
            users[uid], dataset.observation_end, theta
        )
    return SampleSet(
        np.array(ids), features, events, durations, selection.names, theta, selection
    )
