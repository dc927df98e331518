"""Recover which keys were touched, given frames and the keyboard layout.

Around each touching frame the fingertip neighborhood is cut out, its
intensities are clustered, and the darkest cluster is taken as the contact
shadow.  Because the glossy screen mirrors the fingertip, the lower half of
that dark region is the reflection; only the upper half is real, and mapping
those pixels through the frame-to-reference homography drops them onto (or
immediately in front of) the touched key.  A plurality vote over the mapped
pixels picks the key; the runner-up suggestion is the key immediately
behind it, where contact points spill when the viewing angle is shallow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_dilation, label

from .errors import (
    BadFactor,
    EmptyCluster,
    EmptyInput,
    NoKeyHit,
    OutOfBounds,
    PipelineAbort,
    ShoulderScopeError,
)
from .flow import FeatureTrack, TrackConfig, track_sequence
from .geom import Homography, apply_many
from .imgproc import GrayImage, shi_tomasi_features
from .layout import KeyboardLayout, KeyRect, key_at, screen_corners
from .screenfind import ScreenFindConfig, detect_screen_quad, frame_to_reference
from .tapdetect import (
    VelocityField,
    auto_toward_direction,
    detect_touching_frames,
    mask_stalled_tracks,
    signed_velocities,
)


def upscale(img: GrayImage, factor: int) -> GrayImage:
    """Bilinear upscaling by an integer factor.

    Output pixel grids are aligned corner-to-corner, so a 2x upscale of a
    two-pixel ramp stays a linear ramp.  factor 1 returns an equal image.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise BadFactor(f"factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return GrayImage.from_array(img.pixels)
    w2, h2 = img.width * factor, img.height * factor
    xs = np.linspace(0.0, img.width - 1.0, w2) if w2 > 1 else np.zeros(1)
    ys = np.linspace(0.0, img.height - 1.0, h2) if h2 > 1 else np.zeros(1)
    plane = img.plane()

    x0 = np.floor(xs).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    fx = xs - x0
    rows = plane[:, x0] * (1.0 - fx) + plane[:, x1] * fx

    y0 = np.floor(ys).astype(np.intp)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fy = (ys - y0)[:, None]
    out = rows[y0, :] * (1.0 - fy) + rows[y1, :] * fy
    return GrayImage.from_array(out)


def upscale_coords(pts, width: int, height: int, factor: int) -> np.ndarray:
    """Map original-image coordinates into the upscaled grid of upscale()."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    sx = (width * factor - 1) / (width - 1) if width > 1 else 1.0
    sy = (height * factor - 1) / (height - 1) if height > 1 else 1.0
    return pts * np.array([sx, sy])


@dataclass(frozen=True)
class FingerRoi:
    """Axis-aligned fingertip region, fully inside its frame."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.w * self.h < 25:
            raise OutOfBounds(f"ROI {self.w}x{self.h} is too small")


def locate_finger_roi(
    frame: GrayImage,
    tip_estimate,
    above: int = 20,
    below: int = 20,
    half_width: int = 20,
) -> FingerRoi:
    """Rectangle centered horizontally on the tip, spanning `above` px above
    and `below` px below it, clipped to the frame."""
    tx, ty = float(tip_estimate[0]), float(tip_estimate[1])
    if not (0 <= tx < frame.width and 0 <= ty < frame.height):
        raise OutOfBounds(f"tip ({tx:.1f}, {ty:.1f}) outside {frame.width}x{frame.height}")
    cx, cy = int(round(tx)), int(round(ty))
    x0 = max(0, cx - half_width)
    x1 = min(frame.width, cx + half_width + 1)
    y0 = max(0, cy - above)
    y1 = min(frame.height, cy + below + 1)
    return FingerRoi(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def _refine_tip(frame: GrayImage, tip, above: int, below: int, half_width: int):
    """Recenter a coarse tip estimate onto the contact shadow.

    Track geometry puts the estimate somewhere on the lower finger, give or
    take the mirrored image; the darkest pixels of a doubled search strip
    (contact shadow plus its reflection) straddle the true contact row, so
    their centroid is a far better ROI center than any single track.
    """
    search = locate_finger_roi(frame, tip, 3 * above, 2 * below, half_width)
    sub = frame.pixels[
        search.y : search.y + search.h, search.x : search.x + search.w
    ].astype(float)
    if sub.size == 0:
        return tip
    cut = np.quantile(sub, 0.08)
    ys, xs = np.nonzero(sub <= cut)
    if len(xs) == 0:
        return tip
    return (search.x + float(xs.mean()), search.y + float(ys.mean()))


def roi_pixels(frame: GrayImage, roi: FingerRoi) -> list[tuple[tuple[int, int], int]]:
    """Enumerate ((x, y), intensity) over an ROI in row-major order."""
    sub = frame.pixels[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w]
    ys, xs = np.mgrid[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w]
    return [
        ((int(x), int(y)), int(v))
        for x, y, v in zip(xs.ravel(), ys.ravel(), sub.ravel())
    ]


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """1-D k-means outcome: ascending centers and per-pixel assignments."""

    k: int
    centers: np.ndarray  # (k,) ascending
    assignment: np.ndarray  # (n,) indices into centers
    positions: np.ndarray  # (n, 2) pixel coordinates, input order
    inertia_history: tuple[float, ...]

    @property
    def darkest(self) -> int:
        return 0  # centers are sorted ascending


def kmeans_intensity(pixels, k: int = 5, max_iter: int = 50, seed: int = 0) -> ClusterResult:
    """Lloyd's algorithm on scalar intensities.

    Initial centers are the (i + 0.5)/k quantiles nudged by a seeded RNG so
    duplicate quantiles still separate; clusters that lose all members are
    dropped (k shrinks).  Iteration stops at an assignment fixpoint or after
    max_iter sweeps, and centers come back sorted ascending so index 0 is
    always the darkest cluster.
    """
    pixels = list(pixels)
    if not pixels:
        raise EmptyInput("no pixels to cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = np.array([p for p, _ in pixels], dtype=float).reshape(-1, 2)
    vals = np.array([v for _, v in pixels], dtype=float)

    rng = np.random.default_rng(seed)
    q = (np.arange(k) + 0.5) / k
    centers = np.quantile(vals, q) + rng.normal(0.0, 1e-3, size=k)

    assign = np.abs(vals[:, None] - centers[None, :]).argmin(axis=1)
    history: list[float] = []
    for _ in range(max_iter):
        used = np.unique(assign)
        if len(used) < len(centers):
            remap = -np.ones(len(centers), dtype=int)
            remap[used] = np.arange(len(used))
            assign = remap[assign]
            centers = centers[used]
        centers = np.array([vals[assign == j].mean() for j in range(len(centers))])
        new_assign = np.abs(vals[:, None] - centers[None, :]).argmin(axis=1)
        history.append(float(np.sum((vals - centers[new_assign]) ** 2)))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    order = np.argsort(centers, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    centers = centers[order]
    assign = rank[assign]
    for a in (centers, assign, pos):
        a.setflags(write=False)
    return ClusterResult(
        k=len(centers),
        centers=centers,
        assignment=assign,
        positions=pos,
        inertia_history=tuple(history),
    )


def select_touch_pixels(c: ClusterResult, roi: FingerRoi) -> list[tuple[float, float]]:
    """Pixels of the darkest cluster's upper half.

    The darkest cluster spans the real contact shadow plus its mirrored
    reflection below; the upper half (smaller y) is the physical side.  A
    single-row cluster is returned whole.
    """
    sel = c.assignment == c.darkest
    if not sel.any():
        raise EmptyCluster("darkest cluster has no pixels")
    pts = c.positions[sel]
    ys = pts[:, 1]
    lo, hi = float(ys.min()), float(ys.max())
    cut = lo + (hi - lo) / 2.0
    upper = pts[ys < cut] if hi > lo else pts[ys == lo]
    return [(float(x), float(y)) for x, y in upper]


@dataclass(frozen=True, eq=False)
class KeyGuess:
    """Primary key vote with an optional second candidate."""

    primary: str
    secondary: str | None
    mapped_points: np.ndarray  # (n, 2) reference coordinates
    confidence: float

    def __post_init__(self):
        if self.secondary is not None and self.secondary == self.primary:
            raise ValueError("secondary must differ from primary")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")


def _key_behind(layout: KeyboardLayout, primary: KeyRect) -> str | None:
    """Nearest key whose rect lies beyond primary along +y and overlaps in x."""
    best: KeyRect | None = None
    for k in layout.keys:
        if k.label == primary.label:
            continue
        if k.x < primary.x + primary.w and primary.x < k.x + k.w and k.y >= primary.y + primary.h:
            if best is None or k.y < best.y:
                best = k
    return best.label if best is not None else None


def vote_key(points, layout: KeyboardLayout) -> KeyGuess:
    """Plurality vote of mapped touch points over the key rectangles.

    Points outside every key are ignored for the vote but still count in
    the confidence denominator.  Ties go to the key nearer the keyboard
    front (smaller y).  The secondary candidate is the key directly behind
    the winner, or the runner-up of the vote when no key is behind.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise EmptyInput("no points to vote with")
    counts: dict[str, int] = {}
    for x, y in pts:
        label = key_at(layout, float(x), float(y))
        if label is not None:
            counts[label] = counts.get(label, 0) + 1
    if not counts:
        raise NoKeyHit("every mapped point missed the keys")

    def rank(label: str):
        return (-counts[label], layout.key(label).y, label)

    ordered = sorted(counts, key=rank)
    primary = ordered[0]
    secondary = _key_behind(layout, layout.key(primary))
    if secondary is None and len(ordered) > 1:
        secondary = ordered[1]
    return KeyGuess(
        primary=primary,
        secondary=secondary,
        mapped_points=pts,
        confidence=counts[primary] / pts.shape[0],
    )


# ---------------------------------------------------------------------------
# end-to-end recognition

@dataclass(frozen=True)
class RecognizeConfig:
    """Pipeline settings; the defaults suit the synthetic scene generator."""

    upscale_factor: int = 4
    screen: ScreenFindConfig = field(default_factory=ScreenFindConfig)
    # More, weaker seeds than the tracker's own defaults: fingertip texture
    # corners are faint next to screen-edge junctions, and surplus seeds
    # keep the vote healthy when some tracks die.  Two pyramid levels keep
    # the border margin small; per-frame finger motion fits level 1.
    track: TrackConfig = field(
        default_factory=lambda: TrackConfig(
            window=21, levels=2, seed_count=16, quality=0.002, min_dist=8.0
        )
    )
    majority: float = 2.0 / 3.0
    # Rest threshold for upscaled, noisy velocities; detect_touching_frames
    # itself defaults to 0.15 px/frame for raw fields.
    zero_eps: float = 1.0
    # During inter-key transit the stall gate leaves only a couple of
    # finger-edge tracks valid, and two agreeing wobbles would clear any
    # fractional majority; demand a real quorum.
    min_votes: int = 3
    expected_taps: int | None = None
    roi_above: int = 20
    roi_below: int = 20
    roi_half_width: int = 20
    kmeans_k: int = 5
    kmeans_max_iter: int = 50
    seed: int = 0
    hand_box: tuple[float, float, float, float] | None = None  # original px
    toward: tuple[float, float] | None = None
    tip_offset: tuple[float, float] = (0.0, 0.0)
    per_frame_homography: bool = False


@dataclass(frozen=True, eq=False)
class RecognitionResult:
    code: tuple[str, ...]
    alternates: tuple[str | None, ...]
    confidence: tuple[float, ...]
    touching_frames: tuple[int, ...]
    homography: Homography
    quad_corners: np.ndarray
    mapped_points: tuple[np.ndarray, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "code": list(self.code),
                "alternates": list(self.alternates),
                "confidence": [round(c, 6) for c in self.confidence],
                "touching_frames": list(self.touching_frames),
            },
            indent=2,
        )


def _background_estimate(frames: list[GrayImage]) -> np.ndarray:
    """Per-pixel modal intensity over (a subsample of) the video.

    The empty scene shows through each pixel as one tight intensity value,
    while a finger pausing or passing there spreads over many values, so
    the most-populated intensity bin recovers the background even when the
    finger covers a pixel for half the video (which a plain median would
    not survive).  Bins are 16 levels wide, scored with their neighbours
    so noise straddling a bin edge cannot split the vote.
    """
    step = max(1, len(frames) // 32)
    stack = np.stack([f.pixels for f in frames[::step]])
    bins = (stack >> 4).astype(np.int8)
    counts = np.zeros((16,) + stack.shape[1:], np.int16)
    for b in range(16):
        counts[b] = (bins == b).sum(axis=0)
    scores = counts.astype(np.int32)
    scores[:-1] += counts[1:]
    scores[1:] += counts[:-1]
    best = scores.argmax(axis=0)
    return best.astype(float) * 16.0 + 8.0


def _foreground_blob(frame: GrayImage, bg: np.ndarray, thresh: float = 25.0):
    """Largest connected region of |frame - background|, or None.

    Long rests near one key drag borderline pixels over the threshold;
    keeping only the single biggest blob isolates the finger itself.
    """
    mask = np.abs(frame.plane() - bg) > thresh
    if not mask.any():
        return None
    labels, count = label(mask)
    if count > 1:
        largest = int(np.argmax(np.bincount(labels.ravel())[1:])) + 1
        mask = labels == largest
    return binary_dilation(mask, iterations=2)


def _mask_box(mask: np.ndarray, pad: int = 4):
    ys, xs = np.nonzero(mask)
    x0 = max(0, xs.min() - pad)
    y0 = max(0, ys.min() - pad)
    x1 = min(mask.shape[1], xs.max() + pad + 1)
    y1 = min(mask.shape[0], ys.max() + pad + 1)
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def _on_mask(pts, mask: np.ndarray, reach: int = 2):
    """Keep candidates that touch the mask within reach pixels; silhouette
    corners straddle the outline, so exact membership is too strict."""
    kept = []
    h, w = mask.shape
    for x, y in pts:
        xi, yi = int(round(x)), int(round(y))
        window = mask[
            max(yi - reach, 0) : min(yi + reach + 1, h),
            max(xi - reach, 0) : min(xi + reach + 1, w),
        ]
        if window.any():
            kept.append((x, y))
    return kept


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = np.clip(float(np.dot(p - a, ab)) / max(float(np.dot(ab, ab)), 1e-12), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _away_from_quad(pts, quad_corners, margin: float = 6.0):
    """Drop candidates near the screen outline; junctions of the moving
    silhouette with that static edge track the edge, not the finger."""
    c = np.asarray(quad_corners, dtype=float)
    segs = [(c[i], c[(i + 1) % 4]) for i in range(4)]
    kept = []
    for x, y in pts:
        p = np.array([x, y], dtype=float)
        if min(_segment_distance(p, a, b) for a, b in segs) >= margin:
            kept.append((x, y))
    return kept


def _seed_features(
    frame: GrayImage, box, cfg: TrackConfig, quad_corners=None, mask=None, prefer=None
):
    def candidates(img: GrayImage, offset=(0, 0)):
        feats = shi_tomasi_features(img, cfg.seed_count * 4, cfg.quality, cfg.min_dist)
        return [(x + offset[0], y + offset[1]) for x, y in feats]

    if box is None:
        pool = candidates(frame)
    else:
        x0, y0, w, h = box
        x0 = int(max(0, np.floor(x0)))
        y0 = int(max(0, np.floor(y0)))
        x1 = int(min(frame.width, np.ceil(x0 + w)))
        y1 = int(min(frame.height, np.ceil(y0 + h)))
        sub = frame.pixels[y0:y1, x0:x1]
        if sub.size == 0 or min(sub.shape) < 3:
            pool = candidates(frame)
        else:
            pool = candidates(GrayImage.from_array(sub), (x0, y0)) or candidates(frame)

    if mask is not None:
        pool = _on_mask(pool, mask) or pool
    # window-margin clamping near borders freezes tracks; keep clear of the
    # border by a full coarsest-level window
    m = (cfg.window // 2 + 1) * (1 << (cfg.levels - 1))
    inside = [
        (x, y)
        for x, y in pool
        if m <= x < frame.width - m and m <= y < frame.height - m
    ]
    pool = inside or pool
    if quad_corners is not None:
        pool = _away_from_quad(pool, quad_corners) or pool
    if prefer is not None and len(pool) > cfg.seed_count:
        # Mild fingertip bias: fill half the budget with the features
        # nearest the tip (they survive excursions to back-row keys where
        # most of the finger leaves the frame), the rest by corner quality
        # so the seeds do not bunch up on the tip and fail together.
        d = np.asarray(prefer, dtype=float).reshape(2)
        by_proj = sorted(pool, key=lambda p: -(p[0] * d[0] + p[1] * d[1]))
        head = by_proj[: cfg.seed_count // 2]
        rest = [p for p in pool if p not in head]
        pool = head + rest
    return pool[: cfg.seed_count]


def _prefix_pad(track: FeatureTrack, start: int, track_id: int) -> FeatureTrack:
    """Extend a track born at frame `start` backwards with invalid frames."""
    pos = np.vstack([np.tile(track.positions[0], (start, 1)), track.positions])
    val = np.concatenate([np.zeros(start, dtype=bool), track.valid])
    return FeatureTrack(track_id=track_id, positions=pos, valid=val)


def recognize_sequence(
    frames, layout: KeyboardLayout, cfg: RecognizeConfig | None = None
) -> RecognitionResult:
    """Run the whole attack on a frame sequence.

    Stages: upscale, screen-quad detection, homography estimation, feature
    tracking, touching-frame detection, and per-tap key recognition.  Any
    stage failure raises PipelineAbort naming the stage.
    """
    cfg = cfg or RecognizeConfig()
    frames = list(frames)
    if len(frames) < 2:
        raise PipelineAbort("load", f"got {len(frames)} frame(s)")
    width, height = frames[0].width, frames[0].height

    try:
        big = [upscale(f, cfg.upscale_factor) for f in frames]
    except ShoulderScopeError as exc:
        raise PipelineAbort("upscale", str(exc)) from exc

    # The screen is static, so any early frame can supply the quad; noise
    # occasionally breaks line detection on one particular frame.
    quad = None
    screen_exc: ShoulderScopeError | None = None
    for cand in big[: min(5, len(big))]:
        try:
            quad = detect_screen_quad(cand, cfg.screen)
            break
        except ShoulderScopeError as exc:
            screen_exc = exc
    if quad is None:
        raise PipelineAbort("screen", str(screen_exc)) from screen_exc

    try:
        h_est = frame_to_reference(quad, screen_corners(layout))
        if cfg.toward is not None:
            toward = np.asarray(cfg.toward, dtype=float)
            toward = toward / np.linalg.norm(toward)
        else:
            center = (layout.ref_width / 2.0, layout.ref_height / 2.0)
            toward = auto_toward_direction(h_est, center)
    except ShoulderScopeError as exc:
        raise PipelineAbort("homography", str(exc)) from exc

    try:
        box = cfg.hand_box
        if box is not None:
            (bx, by), (bw, bh) = (
                upscale_coords([box[:2]], width, height, cfg.upscale_factor)[0],
                upscale_coords(
                    [(box[0] + box[2], box[1] + box[3])], width, height, cfg.upscale_factor
                )[0],
            )
            box = (bx, by, bw - bx, bh - by)
            bg = _background_estimate(big)
            mask = None
        else:
            bg = _background_estimate(big)
            mask = _foreground_blob(big[0], bg)
            box = _mask_box(mask) if mask is not None else None
        seeds = _seed_features(big[0], box, cfg.track, quad.corners, mask, toward)
        tracks = track_sequence(big, seeds, cfg.track)
        # Tracks attrit as the finger crosses key outlines, so a single
        # frame-0 seeding starves the last taps of voters; plant fresh
        # features a few times along the video, skipping spots that a
        # surviving track already occupies.
        for s in sorted({len(big) // 4, len(big) // 2, (3 * len(big)) // 4}):
            if s < 1 or s > len(big) - 2:
                continue
            m_s = _foreground_blob(big[s], bg)
            if m_s is None:
                continue
            extra = _seed_features(
                big[s], _mask_box(m_s), cfg.track, quad.corners, m_s, toward
            )
            occupied = np.array(
                [t.positions[s] for t in tracks if t.valid[s]], dtype=float
            ).reshape(-1, 2)
            fresh = [
                p
                for p in extra
                if occupied.size == 0
                or np.hypot(occupied[:, 0] - p[0], occupied[:, 1] - p[1]).min()
                >= cfg.track.min_dist
            ]
            if not fresh:
                continue
            for t_new in track_sequence(big[s:], fresh, cfg.track):
                tracks.append(_prefix_pad(t_new, s, len(tracks)))
    except ShoulderScopeError as exc:
        raise PipelineAbort("track", str(exc)) from exc

    try:
        gated = mask_stalled_tracks(signed_velocities(tracks, toward))
        # Around a touch the whole hand moves, so many tracks clear the
        # stall gate at once; in transit between keys only a few
        # finger-edge wobblers do.  Transitions where fewer than a quarter
        # of the peak mover count clear the gate cannot host votes.
        moving = gated.valid.sum(axis=1)
        eligible = moving >= 0.25 * moving.max()
        field_ = VelocityField(
            values=gated.values, valid=gated.valid & eligible[:, None]
        )
        report = detect_touching_frames(
            field_, cfg.majority, cfg.zero_eps, None, cfg.min_votes
        )
        # The ungated tally sees every track's episodes, so frames the
        # strict vote filtered away still carry their true support; the
        # survivor trim below ranks by it.
        full = detect_touching_frames(gated, 0.5, cfg.zero_eps, None, 1)
        candidates = list(report.touching_frames)
        if cfg.expected_taps is not None and len(candidates) < cfg.expected_taps:
            # Fewer candidates than the caller expects: a real tap fell
            # short of the strict vote, so fall back on the wide-open
            # tally and keep genuinely new frames.  A weak true tap and a
            # transit wobble look the same here; the key-recognition stage
            # tells them apart, as wobble frames catch the finger in the
            # air over no key.
            for f in full.touching_frames:
                if all(abs(f - g) > 2 for g in candidates):
                    candidates.append(f)
            candidates.sort()
    except ShoulderScopeError as exc:
        raise PipelineAbort("tapdetect", str(exc)) from exc

    def attempt(f_idx: int) -> KeyGuess:
        if cfg.per_frame_homography:
            quad_f = detect_screen_quad(big[f_idx], cfg.screen)
            h_frame = frame_to_reference(quad_f, screen_corners(layout))
        else:
            h_frame = h_est
        # Coarse tip: centroid of the frame's darkest pixels.  The
        # contact shadow and its mirrored image are darker than any
        # part of the empty scene, and they straddle the contact row,
        # so this lands on target no matter how the tracks fared.
        plane = big[f_idx].plane()
        dark = plane <= plane.min() + 25.0
        ys_d, xs_d = np.nonzero(dark)
        tip = (float(xs_d.mean()), float(ys_d.mean()))
        tip = (tip[0] + cfg.tip_offset[0], tip[1] + cfg.tip_offset[1])
        tip = _refine_tip(
            big[f_idx], tip, cfg.roi_above, cfg.roi_below, cfg.roi_half_width
        )
        roi = locate_finger_roi(
            big[f_idx], tip, cfg.roi_above, cfg.roi_below, cfg.roi_half_width
        )
        clusters = kmeans_intensity(
            roi_pixels(big[f_idx], roi),
            k=cfg.kmeans_k,
            max_iter=cfg.kmeans_max_iter,
            seed=cfg.seed,
        )
        touch_px = select_touch_pixels(clusters, roi)
        mapped = apply_many(h_frame, touch_px)
        return vote_key(mapped, layout)

    # Run recognition on every candidate frame and let failures drop out:
    # spurious mid-swing candidates map into the gaps between keys, so a
    # NoKeyHit there is the candidate disqualifying itself, not a pipeline
    # fault.  Excess survivors are trimmed afterwards by vote support.
    survivors: list[tuple[int, KeyGuess]] = []
    dropped: list[int] = []
    last_failure: tuple[int, ShoulderScopeError] | None = None
    for f_idx in candidates:
        try:
            guess = attempt(f_idx)
        except ShoulderScopeError as exc:
            dropped.append(f_idx)
            last_failure = (f_idx, exc)
            continue
        survivors.append((f_idx, guess))

    # A dropped candidate may simply sit one frame off the true contact,
    # where the shadow has not formed yet or is already gone.  When slots
    # remain to fill, slide such candidates onto their neighbours.
    if cfg.expected_taps is not None and len(survivors) < cfg.expected_taps:
        for f_idx in dropped:
            if len(survivors) >= cfg.expected_taps:
                break
            for off in (-1, -2, 1):
                g = f_idx + off
                if not (0 <= g < len(big)):
                    continue
                if any(abs(g - sf) <= 2 for sf, _ in survivors):
                    continue
                try:
                    guess = attempt(g)
                except ShoulderScopeError:
                    continue
                survivors.append((g, guess))
                survivors.sort(key=lambda fg: fg[0])
                break

    if not survivors and last_failure is not None:
        f_bad, exc = last_failure
        raise PipelineAbort("keyrec", f"frame {f_bad}: {exc}") from exc
    if cfg.expected_taps is not None and len(survivors) > cfg.expected_taps:
        pooled = {
            f: full.votes.get(f - 1, 0)
            + full.votes.get(f, 0)
            + full.votes.get(f + 1, 0)
            for f, _ in survivors
        }
        ranked = sorted(survivors, key=lambda fg: (-pooled[fg[0]], fg[0]))
        survivors = sorted(ranked[: cfg.expected_taps], key=lambda fg: fg[0])

    code = [g.primary for _, g in survivors]
    alternates = [g.secondary for _, g in survivors]
    confidence = [g.confidence for _, g in survivors]
    mapped_all = [g.mapped_points for _, g in survivors]
    return RecognitionResult(
        code=tuple(code),
        alternates=tuple(alternates),
        confidence=tuple(confidence),
        touching_frames=tuple(f for f, _ in survivors),
        homography=h_est,
        quad_corners=quad.corners,
        mapped_points=tuple(mapped_all),
    )
