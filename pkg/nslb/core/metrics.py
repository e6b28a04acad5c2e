# =============================================================================
# NSLB - METRICS
# =============================================================================

"""
Regret and segment metrics computed from run traces.
"""

from typing import Sequence

import numpy as np

from .exceptions import UsageError
from .types import RunTrace


def argmax_tiebreak(values) -> int:
    """Index of the maximum; ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise UsageError(code="EMPTY_ARGMAX")
    if not np.all(np.isfinite(values)):
        raise UsageError(f"{values!r}", code="NON_FINITE")
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(values))


def cumulative_regret(trace: RunTrace) -> np.ndarray:
    """Prefix sums of the per-round pseudo-regret gaps."""
    if len(trace) == 0:
        raise UsageError(code="EMPTY_TRACE")
    return np.cumsum(trace.instant_regret())


def cumulative_reward(trace: RunTrace) -> np.ndarray:
    return np.cumsum(trace.chosen_means())


def segment_count(states: Sequence[int]) -> int:
    """Number of stationary segments: one plus the number of adjacent changes."""
    states = np.asarray(states, dtype=int)
    if states.size == 0:
        raise UsageError("state sequence is empty", code="EMPTY_TRACE")
    return 1 + int(np.count_nonzero(states[1:] != states[:-1]))
