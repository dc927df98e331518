"""Sparse optical flow: image pyramids and pyramidal Lucas-Kanade tracking.

Tracking refines a per-point displacement coarse-to-fine.  At each pyramid
level the structure tensor G is built from window gradients of the previous
frame, and the displacement is iterated via d <- d + G^-1 b, where b
accumulates the windowed image difference.  A point is marked invalid when
its window has (numerically) no two-dimensional structure or when it leaves
the image; validity never comes back once lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptySequence, TooManyLevels
from .imgproc import GrayImage, bilinear_sample, gaussian_kernel, shi_tomasi_features

_MIN_LEVEL_DIM = 8


@dataclass(frozen=True, eq=False)
class Pyramid:
    """Image pyramid; level 0 is full resolution, each level halves it."""

    levels: tuple[np.ndarray, ...]

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class TrackConfig:
    """Knobs for track_sequence; defaults follow the library conventions."""

    window: int = 15
    levels: int = 3
    max_iter: int = 20
    eps: float = 0.03
    seed_count: int = 6
    quality: float = 0.05
    min_dist: float = 5.0


@dataclass(frozen=True, eq=False)
class FeatureTrack:
    """One tracked point: per-frame positions and a sticky validity flag."""

    track_id: int
    positions: np.ndarray  # (n_frames, 2) float
    valid: np.ndarray  # (n_frames,) bool, never False -> True


def build_pyramid(img: GrayImage, levels: int = 3) -> Pyramid:
    """Gaussian (sigma=1) pre-filter + 2x decimation per level.

    Dimensions follow ceil(previous / 2); raising `levels` so that the top
    level would fall below 8 px in either dimension raises TooManyLevels.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(img.width, img.height) / 2 ** (levels - 1) < _MIN_LEVEL_DIM:
        raise TooManyLevels(
            f"{img.width}x{img.height} supports fewer than {levels} levels"
        )
    k = gaussian_kernel(1.0).astype(np.float32)
    planes = [img.pixels.astype(np.float32)]
    for _ in range(levels - 1):
        prev = planes[-1]
        smooth = ndimage.convolve1d(prev, k, axis=0, mode="nearest")
        smooth = ndimage.convolve1d(smooth, k, axis=1, mode="nearest")
        planes.append(np.ascontiguousarray(smooth[::2, ::2]))
    return Pyramid(levels=tuple(planes))


def _solve2(gxx, gxy, gyy, bx, by):
    det = gxx * gyy - gxy * gxy
    return ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det)


def lk_step(
    prev: Pyramid,
    nxt: Pyramid,
    points,
    window: int = 15,
    max_iter: int = 20,
    eps: float = 0.03,
) -> list[tuple[tuple[float, float], bool]]:
    """Track points from the previous pyramid to the next one.

    Returns one ((x, y), valid) pair per input point; invalid points keep
    their input position.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if prev.n_levels != nxt.n_levels:
        raise ValueError("pyramids must have the same number of levels")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r = window // 2
    oy, ox = np.mgrid[-r : r + 1, -r : r + 1]
    ox = ox.ravel().astype(np.float64)
    oy = oy.ravel().astype(np.float64)
    min_eig_floor = 1e-4 * window * window
    h0, w0 = prev.levels[0].shape

    results: list[tuple[tuple[float, float], bool]] = []
    for px, py in pts:
        d = np.zeros(2)
        ok = True
        for lv in range(prev.n_levels - 1, -1, -1):
            scale = 1.0 / (1 << lv)
            plane_prev = prev.levels[lv]
            plane_next = nxt.levels[lv]
            cx = px * scale + ox
            cy = py * scale + oy
            i0 = bilinear_sample(plane_prev, cx, cy)
            ix = 0.5 * (
                bilinear_sample(plane_prev, cx + 1.0, cy)
                - bilinear_sample(plane_prev, cx - 1.0, cy)
            )
            iy = 0.5 * (
                bilinear_sample(plane_prev, cx, cy + 1.0)
                - bilinear_sample(plane_prev, cx, cy - 1.0)
            )
            gxx = float(np.dot(ix, ix))
            gxy = float(np.dot(ix, iy))
            gyy = float(np.dot(iy, iy))
            half_tr = 0.5 * (gxx + gyy)
            root = np.sqrt(max(0.25 * (gxx - gyy) ** 2 + gxy * gxy, 0.0))
            if half_tr - root < min_eig_floor:
                ok = False
                break
            for _ in range(max_iter):
                j = bilinear_sample(plane_next, cx + d[0], cy + d[1])
                diff = i0 - j
                bx = float(np.dot(diff, ix))
                by = float(np.dot(diff, iy))
                sx, sy = _solve2(gxx, gxy, gyy, bx, by)
                d[0] += sx
                d[1] += sy
                if sx * sx + sy * sy < eps * eps:
                    break
            if lv > 0:
                d *= 2.0
        if ok:
            fx, fy = px + d[0], py + d[1]
            if not (0.0 <= fx <= w0 - 1 and 0.0 <= fy <= h0 - 1):
                ok = False
        if ok:
            results.append(((float(fx), float(fy)), True))
        else:
            results.append(((float(px), float(py)), False))
    return results


def track_sequence(frames, seeds=None, cfg: TrackConfig | None = None) -> list[FeatureTrack]:
    """Chain lk_step over consecutive frames.

    `seeds` defaults to the strongest Shi-Tomasi features of the first
    frame.  A track that loses validity keeps its last position for the
    remaining frames but stays invalid.
    """
    cfg = cfg or TrackConfig()
    frames = list(frames)
    if len(frames) < 2:
        raise EmptySequence(f"got {len(frames)} frame(s), need at least 2")
    if seeds is None:
        seeds = shi_tomasi_features(
            frames[0], max_n=cfg.seed_count, quality=cfg.quality, min_dist=cfg.min_dist
        )
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    if seeds.shape[0] == 0:
        raise ValueError("need at least one seed point")

    n = seeds.shape[0]
    t = len(frames)
    positions = np.zeros((t, n, 2))
    valid = np.zeros((t, n), dtype=bool)
    positions[0] = seeds
    valid[0] = True

    prev_pyr = build_pyramid(frames[0], cfg.levels)
    for fi in range(1, t):
        next_pyr = build_pyramid(frames[fi], cfg.levels)
        live = np.nonzero(valid[fi - 1])[0]
        positions[fi] = positions[fi - 1]
        if len(live):
            stepped = lk_step(
                prev_pyr,
                next_pyr,
                positions[fi - 1, live],
                window=cfg.window,
                max_iter=cfg.max_iter,
                eps=cfg.eps,
            )
            for k, ((x, y), ok) in zip(live, stepped):
                positions[fi, k] = (x, y)
                valid[fi, k] = ok
        prev_pyr = next_pyr

    tracks = []
    for k in range(n):
        p = positions[:, k].copy()
        v = valid[:, k].copy()
        p.setflags(write=False)
        v.setflags(write=False)
        tracks.append(FeatureTrack(track_id=k, positions=p, valid=v))
    return tracks
