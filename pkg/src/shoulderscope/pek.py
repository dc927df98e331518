"""Randomized-keyboard countermeasures that break position-based recovery.

Two session modes are provided: `shuffled` permutes the key labels once per
unlock with a draw-and-remove scheme (pick a uniform index into the
remaining label pool, assign, repeat), and `brownian` lets every key rect
wander with an independent Gaussian step per axis, reflecting at the
keyboard region boundary and refusing moves that would overlap another key.
Both are fully deterministic given their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layout import KeyboardLayout, KeyRect


@dataclass(frozen=True)
class PekSession:
    """Bookkeeping for a randomized-keyboard session."""

    base: KeyboardLayout
    rng_seed: int
    mode: str  # "shuffled" | "brownian"
    sigma: float = 2.0
    step: int = 0

    def __post_init__(self):
        if self.mode not in ("shuffled", "brownian"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def shuffle_layout(base: KeyboardLayout, seed: int) -> KeyboardLayout:
    """Uniformly permute the key labels over the fixed key positions.

    Implemented as draw-and-remove from the label pool (equivalent to a
    Fisher-Yates shuffle): for each key position in layout order, draw a
    uniform index into the remaining labels and remove it from the pool.
    """
    rng = np.random.default_rng(seed)
    pool = [k.label for k in base.keys]
    keys = []
    for k in base.keys:
        i = int(rng.integers(0, len(pool)))
        keys.append(replace(k, label=pool.pop(i)))
    return replace(base, keys=tuple(keys))


def _reflect(v: float, lo: float, hi: float) -> float:
    """Fold v into [lo, hi] by mirror reflection at both ends."""
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    t = (v - lo) % period
    return lo + (period - t if t > hi - lo else t)


def _overlaps(a: KeyRect, b: KeyRect) -> bool:
    return a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h


def brownian_step(
    current: KeyboardLayout,
    sigma: float,
    seed: int,
    step_index: int,
    region: tuple[float, float, float, float] | None = None,
) -> KeyboardLayout:
    """One Brownian move of every key.

    Each key center receives an independent N(0, sigma^2) offset per axis,
    drawn from a stream keyed by (seed, step_index, key_index).  Centers
    reflect at the keyboard region boundary (default: the bounding box of
    the current key rects) so keys stay inside; a move that would overlap
    another key is rejected and that key stays put for the step.  Keys are
    processed in layout order, each checked against the current positions
    of the rest.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if region is None:
        x0 = min(k.x for k in current.keys)
        y0 = min(k.y for k in current.keys)
        x1 = max(k.x + k.w for k in current.keys)
        y1 = max(k.y + k.h for k in current.keys)
        region = (x0, y0, x1 - x0, y1 - y0)
    rx, ry, rw, rh = region

    keys = list(current.keys)
    for i, k in enumerate(keys):
        rng = np.random.default_rng([seed, step_index, i])
        dx, dy = rng.normal(0.0, sigma, size=2)
        cx, cy = k.center()
        nx = _reflect(cx + dx, rx + k.w / 2.0, rx + rw - k.w / 2.0)
        ny = _reflect(cy + dy, ry + k.h / 2.0, ry + rh - k.h / 2.0)
        moved = replace(k, x=nx - k.w / 2.0, y=ny - k.h / 2.0)
        if any(_overlaps(moved, other) for j, other in enumerate(keys) if j != i):
            continue
        keys[i] = moved
    return replace(current, keys=tuple(keys))


def simulate_session(
    base: KeyboardLayout, mode: str, seed: int, steps: int, sigma: float = 2.0
) -> list[KeyboardLayout]:
    """Produce the per-step layouts of a randomized-keyboard session.

    shuffled mode fixes one permutation for the whole session; brownian mode
    chains brownian_step so each entry is the layout after one more move.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    session = PekSession(base=base, rng_seed=seed, mode=mode, sigma=sigma)
    if session.mode == "shuffled":
        shuffled = shuffle_layout(base, seed)
        return [shuffled] * steps
    # Pin the region to the base bounding box so it cannot drift with the keys.
    x0 = min(k.x for k in base.keys)
    y0 = min(k.y for k in base.keys)
    x1 = max(k.x + k.w for k in base.keys)
    y1 = max(k.y + k.h for k in base.keys)
    region = (x0, y0, x1 - x0, y1 - y0)
    out = []
    current = base
    for i in range(steps):
        current = brownian_step(current, sigma, seed, i, region=region)
        out.append(current)
    return out


def shuffle_position_counts(base: KeyboardLayout, seed: int, trials: int) -> np.ndarray:
    """Contingency table counts[position][label] over repeated shuffles.

    Each trial uses an independent seed derived from (seed, trial) so the
    table tests the uniformity of the permutation scheme.
    """
    labels = {label: j for j, label in enumerate(base.labels)}
    k = len(labels)
    counts = np.zeros((k, k), dtype=np.int64)
    for t in range(trials):
        shuffled = shuffle_layout(base, np.random.default_rng([seed, t]).integers(2**32))
        for pos, key in enumerate(shuffled.keys):
            counts[pos, labels[key.label]] += 1
    return counts


def chi_squared_statistic(counts: np.ndarray) -> tuple[float, int]:
    """Pearson chi-squared statistic and degrees of freedom for the table.

    Rows and columns both sum to the trial count by construction, so the
    test has (k-1)^2 degrees of freedom.
    """
    counts = np.asarray(counts, dtype=float)
    k = counts.shape[0]
    expected = counts.sum() / (k * k)
    stat = float(((counts - expected) ** 2 / expected).sum())
    return stat, (k - 1) * (k - 1)
