"""Self-consistency aggregation of repeated teacher answers.

Answers are grouped into 0.1 m/s^2 bins (bin k covers [0.1k - 0.05,
0.1k + 0.05)) and the most populated bin wins; the label is the median of
that bin's members and the vote count its size. Ties go to the bin closest
to the overall median, then to the smaller bin magnitude; a symmetric
deadlock falls back to the bin containing the overall median even when that
bin is not modal.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

BIN_WIDTH = 0.1


class NoValidVotesError(ValueError):
    pass


def vote_bin(a: float, width: float = BIN_WIDTH) -> int:
    """Half-up rounding of a/width, so bin edges sit at odd multiples of 0.05."""
    return int(math.floor(a / width + 0.5))


def majority_vote(accels, width: float = BIN_WIDTH) -> tuple[float, int]:
    """Returns (label, vote_count) for a non-empty list of accelerations."""
    accels = [float(a) for a in accels]
    if not accels:
        raise NoValidVotesError("majority vote needs at least one valid answer")

    bins: dict[int, list[float]] = defaultdict(list)
    for a in accels:
        bins[vote_bin(a, width)].append(a)

    top = max(len(v) for v in bins.values())
    winners = [b for b, v in bins.items() if len(v) == top]
    if len(winners) == 1:
        chosen = winners[0]
    else:
        med = float(np.median(accels))
        ranked = sorted(
            winners, key=lambda b: (abs(b * width - med), abs(b * width), b)
        )
        k0 = (abs(ranked[0] * width - med), abs(ranked[0] * width))
        k1 = (abs(ranked[1] * width - med), abs(ranked[1] * width))
        if k0 != k1:
            chosen = ranked[0]
        else:
            # symmetric deadlock: defer to wherever the median itself lands
            med_bin = vote_bin(med, width)
            chosen = med_bin if med_bin in bins else ranked[0]

    members = bins[chosen]
    return float(np.median(members)), len(members)
