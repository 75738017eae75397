"""Temporal signal machinery over (T, k) logit series.

A per-class 1-D median filter provides the low-pass target, argmax
decision changes quantify flicker, and a sliding-window scorer selects
the high-flicker regions that form the adaptation batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvenWindow, WindowTooLarge


@dataclass(frozen=True)
class Region:
    start: int
    end: int  # exclusive
    change_count: int


def median_filter(y: np.ndarray, window: int) -> np.ndarray:
    """Centered per-column running median with edge-inclusive reflect padding."""
    y = np.asarray(y)
    if y.ndim == 1:
        return median_filter(y[:, None], window)[:, 0]
    t = y.shape[0]
    if window % 2 == 0:
        raise EvenWindow(f"window must be odd, got {window}")
    if not (1 <= window <= 2 * t - 1):
        raise WindowTooLarge(f"window {window} outside [1, {2 * t - 1}] for T={t}")
    if window == 1:
        return y.copy()
    half = window // 2
    padded = np.pad(y, ((half, half), (0, 0)), mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    return np.median(windows, axis=-1).astype(y.dtype)


def decisions(y: np.ndarray) -> np.ndarray:
    """Argmax class per frame; ties go to the lowest class index."""
    return np.argmax(np.asarray(y), axis=1)


def count_decision_changes(y: np.ndarray) -> int:
    d = decisions(y)
    return int(np.count_nonzero(d[1:] != d[:-1]))


def normalized_changes(y: np.ndarray) -> float:
    """Decision changes per frame transition; 0.0 for a single frame."""
    t = np.asarray(y).shape[0]
    if t <= 1:
        return 0.0
    return count_decision_changes(y) / (t - 1)


def _window_scores(y: np.ndarray, window: int) -> np.ndarray:
    """Change count inside [s, s+window) for every start s, stride 1."""
    d = decisions(y)
    flips = (d[1:] != d[:-1]).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(flips)))
    starts = np.arange(len(d) - window + 1)
    # transitions inside the window are flips[s .. s+window-2]
    return csum[starts + window - 1] - csum[starts]


def select_regions(
    y: np.ndarray,
    window: int,
    num_regions: int,
    rng: np.random.Generator | None = None,
    sample: bool = False,
) -> list[Region]:
    """Pick disjoint high-flicker windows.

    Greedy by default: highest change count first, earlier start on
    ties, overlapping candidates skipped. With ``sample`` True the
    windows are drawn proportionally to their change counts instead
    (uniformly when every count is zero), which is what gives repeated
    adaptation runs their spread.
    """
    y = np.asarray(y)
    t = y.shape[0]
    if window < 2:
        raise ValueError(f"region window must be >= 2, got {window}")
    if num_regions < 1:
        raise ValueError(f"num_regions must be >= 1, got {num_regions}")
    if t <= window:
        return [Region(0, t, count_decision_changes(y))]
    scores = _window_scores(y, window)
    if sample and rng is None:
        raise ValueError("sampling selection needs an rng")

    chosen: list[Region] = []
    alive = np.ones(len(scores), dtype=bool)
    while len(chosen) < num_regions and alive.any():
        candidates = np.flatnonzero(alive)
        if sample:
            weights = scores[candidates].astype(np.float64)
            total = weights.sum()
            p = weights / total if total > 0 else None
            start = int(rng.choice(candidates, p=p))
        else:
            best = candidates[np.argmax(scores[candidates])]  # argmax: earliest of the tied
            start = int(best)
        chosen.append(Region(start, start + window, int(scores[start])))
        lo = max(0, start - window + 1)
        alive[lo : start + window] = False
    chosen.sort(key=lambda r: r.start)
    return chosen
