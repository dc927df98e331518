"""Find the frames in which the fingertip rests on the screen.

Each feature track is reduced to a per-transition signed velocity: the
displacement between consecutive frames projected onto the "toward the
screen" direction.  Quantizing those velocities to {+, 0, -} makes a tap a
maximal run of the shape  + ... (0*) ... -  : the finger approaches, may
rest, then withdraws.  The touching frame of such an episode is the frame
entered by its last zero-velocity transition, or the frame at the +/-
boundary when the finger never measurably rests.  Tracks vote; a frame is
reported when at least a configurable majority of the contributing tracks
agree on it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from collections import Counter

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import NoValidTracks, SingularMatrix
from .geom import Homography, apply


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Signed velocities per transition and track, with validity flags.

    values[t, i] is the velocity of track i between frames t and t+1;
    valid[t, i] is True only when the track is valid at both endpoints.
    """

    values: np.ndarray  # (n_frames - 1, n_tracks)
    valid: np.ndarray  # same shape, bool


@dataclass(frozen=True)
class TouchReport:
    """Reported touching frames plus the per-frame vote counts."""

    touching_frames: tuple[int, ...]
    votes: dict[int, int]

    def to_json(self) -> str:
        return json.dumps(
            {
                "touching_frames": list(self.touching_frames),
                "votes": {str(k): v for k, v in sorted(self.votes.items())},
            },
            indent=2,
        )


def signed_velocities(tracks, toward) -> VelocityField:
    """Project per-frame displacements onto the unit toward-direction."""
    toward = np.asarray(toward, dtype=float).reshape(2)
    if abs(np.linalg.norm(toward) - 1.0) > 1e-9:
        raise ValueError("toward must be a unit vector")
    tracks = list(tracks)
    if not tracks:
        raise NoValidTracks("no tracks at all")
    t = tracks[0].positions.shape[0]
    n = len(tracks)
    values = np.zeros((t - 1, n))
    valid = np.zeros((t - 1, n), dtype=bool)
    for i, tr in enumerate(tracks):
        if tr.positions.shape[0] != t:
            raise ValueError("tracks must cover the same number of frames")
        disp = tr.positions[1:] - tr.positions[:-1]
        values[:, i] = disp @ toward
        valid[:, i] = tr.valid[1:] & tr.valid[:-1]
    if not valid.any():
        raise NoValidTracks("no track has a valid transition")
    values.setflags(write=False)
    valid.setflags(write=False)
    return VelocityField(values=values, valid=valid)


def _track_touch_frames(quant: np.ndarray, ok: np.ndarray) -> list[int]:
    """Touching frames of one track from its quantized velocity sequence.

    quant holds -1/0/+1 per transition; invalid transitions break runs.
    A transition at index t connects frames t and t+1, so the frame entered
    by the first negative transition of an episode is index t itself: the
    finger is still at rest at frame t and has moved by t+1.
    """
    frames: list[int] = []
    n = len(quant)
    i = 0
    while i < n:
        if not ok[i] or quant[i] != 1:
            i += 1
            continue
        # run of +
        j = i
        while j < n and ok[j] and quant[j] == 1:
            j += 1
        k = j
        while k < n and ok[k] and quant[k] == 0:
            k += 1
        if k < n and ok[k] and quant[k] == -1:
            frames.append(k)  # frame entered by the first negative transition
            while k < n and ok[k] and quant[k] == -1:
                k += 1
        i = max(k, i + 1)
    return frames


def detect_touching_frames(
    field: VelocityField,
    majority: float = 2.0 / 3.0,
    zero_eps: float = 0.15,
    expected_taps: int | None = None,
    min_votes: int = 1,
) -> TouchReport:
    """Vote touching frames across tracks.

    Velocities within zero_eps of zero quantize to 0.  A frame is reported
    when at least `majority` of the tracks still valid around that frame
    assign it or one of its immediate neighbours, and at least `min_votes`
    tracks back it in absolute terms; a run of consecutive reported frames
    is one touch and keeps its most-voted frame.  When expected_taps is
    given and more frames pass the vote, only the most-voted ones are kept.
    """
    if not (0.5 <= majority <= 1.0):
        raise ValueError("majority must lie in [0.5, 1]")
    if zero_eps < 0:
        raise ValueError("zero_eps must be >= 0")
    if min_votes < 1:
        raise ValueError("min_votes must be >= 1")

    values, ok = field.values, field.valid
    contributing = np.nonzero(ok.any(axis=0))[0]
    if len(contributing) == 0:
        raise NoValidTracks("velocity field has no valid transitions")

    votes: Counter[int] = Counter()
    drops: dict[int, list[float]] = {}
    for i in contributing:
        v = values[:, i]
        quant = np.zeros(len(v), dtype=int)
        quant[v > zero_eps] = 1
        quant[v < -zero_eps] = -1
        for f in _track_touch_frames(quant, ok[:, i]):
            votes[f] += 1
            drops.setdefault(f, []).append(abs(float(v[f])))

    # Quantization jitter can split one touch's votes across neighbouring
    # frames, so each frame also counts its immediate neighbours' votes;
    # the collapse step below already treats adjacent frames as one touch.
    # Denominator: tracks with a valid transition around frame f.
    valid_counts = ok.sum(axis=1)
    pooled = {f: votes.get(f - 1, 0) + votes[f] + votes.get(f + 1, 0) for f in votes}
    passed = sorted(
        f
        for f in votes
        if pooled[f] >= majority * valid_counts[min(f, len(valid_counts) - 1)] - 1e-9
        and pooled[f] >= min_votes
    )

    # Adjacent winners describe the same touch.  Tracks on slow parts of
    # the hand see the retreat a frame late and with a shallow drop, so
    # within a run only decisive voters count: those whose drop reaches
    # half the sharpest credible drop in the run (second-largest, so one
    # tracking glitch cannot raise the bar).  Ties go to the later frame.
    collapsed: list[int] = []

    def _flush(run: list[int]) -> None:
        pool = sorted((d for g in run for d in drops.get(g, [])), reverse=True)
        floor = 0.5 * (pool[1] if len(pool) > 1 else pool[0])
        qual = {g: sum(d >= floor for d in drops.get(g, [])) for g in run}
        collapsed.append(max(run, key=lambda g: (qual[g], g)))

    run: list[int] = []
    for f in passed + [None]:
        if f is not None and (not run or f == run[-1] + 1):
            run.append(f)
            continue
        if run:
            _flush(run)
        run = [f] if f is not None else []

    if expected_taps is not None and len(collapsed) > expected_taps:
        by_votes = sorted(collapsed, key=lambda f: (-pooled.get(f, 0), f))
        collapsed = sorted(by_votes[:expected_taps])

    return TouchReport(touching_frames=tuple(collapsed), votes=dict(votes))


def mask_stalled_tracks(
    field: VelocityField,
    min_speed: float = 1.2,
    halfwin: int = 5,
    min_count: int = 3,
) -> VelocityField:
    """Invalidate transitions of tracks that are not moving locally.

    A feature that slid off the finger onto the static background keeps a
    "valid" tracker status but carries no tap information; it only dilutes
    the vote denominator.  A transition stays valid only when the track
    reaches at least min_speed on at least min_count transitions within
    halfwin of it.  Demanding several fast transitions (not just one)
    rejects near-static features that get dragged once as the finger
    sweeps past them.
    """
    if min_speed < 0:
        raise ValueError("min_speed must be >= 0")
    if halfwin < 0:
        raise ValueError("halfwin must be >= 0")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    speed = np.where(field.valid, np.abs(field.values), 0.0)
    fast = (speed >= min_speed).astype(float)
    window = 2 * halfwin + 1
    counts = uniform_filter1d(fast, size=window, axis=0, mode="constant", cval=0.0)
    counts *= window
    valid = field.valid & (counts >= min_count - 0.5)
    valid.setflags(write=False)
    return VelocityField(values=field.values, valid=valid)


def auto_toward_direction(h: Homography, ref_point=(0.0, 0.0)) -> np.ndarray:
    """Image direction of increasing reference y, evaluated at ref_point.

    This is the direction a fingertip moves in the frame while travelling
    "into" the keyboard, assuming the usual front-edge-at-bottom layout
    orientation.
    """
    hinv = h.inverse()
    x0, y0 = apply(hinv, ref_point[0], ref_point[1])
    x1, y1 = apply(hinv, ref_point[0], ref_point[1] + 1.0)
    d = np.array([x1 - x0, y1 - y0])
    n = np.linalg.norm(d)
    if n <= 1e-12:
        raise SingularMatrix("reference y direction collapses in the frame")
    return d / n
