"""Harrell's concordance index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConcordanceError(ValueError):
    pass


@dataclass(frozen=True)
class CIndexResult:
    c_index: float
    concordant: int
    discordant: int
    tied_risk: int
    comparable_pairs: int


def c_index(risks, events, durations, block: int = 512) -> CIndexResult:
    """Concordance between predicted risks and observed durations.

    A pair (i, j) is comparable when sample i had the event and
    ``duration_i < duration_j``. It is concordant when i carries the higher
    risk; equal risks earn half credit. Pairs tied on duration never count.
    """
    risks = np.asarray(risks, dtype=np.float64).ravel()
    events = np.asarray(events).ravel()
    durations = np.asarray(durations).ravel()
    if not (len(risks) == len(events) == len(durations)):
        raise ConcordanceError("risks, events and durations differ in length")
    if len(risks) < 2:
        raise ConcordanceError("at least two samples are required")

    concordant = discordant = tied = 0
    rows = np.flatnonzero(events == 1)
    for start in range(0, len(rows), block):
        i = rows[start:start + block]
        comparable = durations[i, None] < durations[None, :]
        r_i, r_j = risks[i, None], risks[None, :]
        concordant += int(np.count_nonzero(comparable & (r_i > r_j)))
        discordant += int(np.count_nonzero(comparable & (r_i < r_j)))
        tied += int(np.count_nonzero(comparable & (r_i == r_j)))
    total = concordant + discordant + tied
    if total == 0:
        raise ConcordanceError("no comparable pairs")
    return CIndexResult((concordant + 0.5 * tied) / total, concordant, discordant, tied, total)
