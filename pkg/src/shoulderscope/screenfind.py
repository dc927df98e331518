"""Locate the screen quad in a frame and estimate the rectifying homography.

The screen shows up as the strongest straight intensity edges in the scene:
Canny edges are pooled into a Hough accumulator, the returned lines are
split into a near-horizontal and a near-vertical family, the two
strongest-voted lines of each family are intersected pairwise, and the four
intersections (ordered top-left, top-right, bottom-right, bottom-left) form
the screen quad.  A four-point direct linear transform with Hartley
normalization then maps frame pixels onto the flat reference image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollinearPoints,
    DegenerateQuad,
    InsufficientLines,
    RankDeficient,
    SingularMatrix,
)
from .geom import Homography, apply_many
from .imgproc import (
    EdgeMap,
    GrayImage,
    PolarLine,
    canny,
    gaussian_blur,
    hough_lines,
    line_intersection,
    sobel_gradients,
)

_COLLINEAR_REL = 1e-6


def _triangle_area(a, b, c) -> float:
    return 0.5 * abs(
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    )


def _has_collinear_triple(pts: np.ndarray) -> bool:
    span = np.hypot(*(pts.max(axis=0) - pts.min(axis=0)))
    if span == 0.0:
        return True
    limit = _COLLINEAR_REL * span * span
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if _triangle_area(pts[i], pts[j], pts[k]) < limit:
                    return True
    return False


@dataclass(frozen=True, eq=False)
class ScreenQuad:
    """Four screen corners ordered TL, TR, BR, BL, strictly convex."""

    corners: np.ndarray  # (4, 2) float

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float).reshape(4, 2)
        cross = []
        for i in range(4):
            a, b, d = c[i], c[(i + 1) % 4], c[(i + 2) % 4]
            cross.append((b[0] - a[0]) * (d[1] - b[1]) - (b[1] - a[1]) * (d[0] - b[0]))
        cross = np.asarray(cross)
        if np.any(cross == 0.0) or not (np.all(cross > 0) or np.all(cross < 0)):
            raise DegenerateQuad("corners are not strictly convex")
        if _has_collinear_triple(c):
            raise DegenerateQuad("three corners are nearly collinear")
        if self.area() <= 0.0:
            raise DegenerateQuad("quad has no area")
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    def area(self) -> float:
        c = np.asarray(self.corners, dtype=float).reshape(4, 2)
        x, y = c[:, 0], c[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True, eq=False)
class PointPairSet:
    """Source/destination correspondences for homography estimation."""

    src: np.ndarray  # (n, 2)
    dst: np.ndarray  # (n, 2)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=float).reshape(-1, 2)
        dst = np.asarray(self.dst, dtype=float).reshape(-1, 2)
        if src.shape != dst.shape or src.shape[0] < 4:
            raise ValueError("need at least four source/destination pairs")
        if _has_collinear_triple(src) or _has_collinear_triple(dst):
            raise CollinearPoints("three correspondences are nearly collinear")
        src.setflags(write=False)
        dst.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)


def _hartley_normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin, mean radius to sqrt(2)."""
    c = pts.mean(axis=0)
    mean_dist = float(np.mean(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])))
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def dlt_homography(pairs: PointPairSet) -> Homography:
    """Direct linear transform with Hartley normalization.

    Builds the 2n x 9 system from normalized correspondences, takes the
    right singular vector of the least singular value, and denormalizes.
    Raises RankDeficient when the two smallest singular values coincide to
    1e-9 relative (the solution would not be unique).
    """
    t_src = _hartley_normalizer(pairs.src)
    t_dst = _hartley_normalizer(pairs.dst)
    ones = np.ones((pairs.src.shape[0], 1))
    src_n = np.hstack([pairs.src, ones]) @ t_src.T
    dst_n = np.hstack([pairs.dst, ones]) @ t_dst.T

    n = src_n.shape[0]
    a = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = src_n[i, 0], src_n[i, 1]
        u, v = dst_n[i, 0], dst_n[i, 1]
        a[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]

    _, s, vt = np.linalg.svd(a)
    sv = np.zeros(9)
    sv[: len(s)] = s  # pad: with 4 pairs the 9th singular value is exactly 0
    if sv[-2] - sv[-1] <= 1e-9 * sv[0]:
        raise RankDeficient("smallest two singular values coincide")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    try:
        return Homography(h)
    except SingularMatrix as exc:
        raise RankDeficient(str(exc)) from exc


def frame_to_reference(quad, ref_corners) -> Homography:
    """Homography taking frame pixels to reference pixels.

    `quad` may be a ScreenQuad or any sequence of four (x, y) corners in the
    same order as `ref_corners` (conventionally TL, TR, BR, BL).
    """
    corners = quad.corners if isinstance(quad, ScreenQuad) else quad
    pairs = PointPairSet(src=np.asarray(corners, dtype=float).reshape(4, 2),
                         dst=np.asarray(ref_corners, dtype=float).reshape(4, 2))
    return dlt_homography(pairs)


@dataclass(frozen=True)
class ScreenFindConfig:
    """Detection knobs.

    Canny thresholds here are fractions of the maximum gradient magnitude
    (the percentile default of canny() is too permissive on mostly-flat
    synthetic frames).  vote_frac scales the Hough threshold with the image
    size; min_side is the minimum rho separation between the two lines of a
    family, defaulting to 10% of the smaller image dimension.
    """

    sigma: float = 1.4
    low_frac: float = 0.15
    high_frac: float = 0.35
    rho_res: float = 1.0
    theta_res: float = math.pi / 180.0
    vote_frac: float = 0.25
    family_angle: float = math.pi / 6.0
    min_side: float | None = None
    min_area_frac: float = 0.05
    manual_corners: tuple | None = None


def _canonical_rho(line: PolarLine) -> float:
    # fold theta ~ pi back onto theta ~ 0 so near-vertical lines compare
    if line.theta > math.pi / 2:
        return -line.rho
    return line.rho


def _pick_two(lines: list[PolarLine], min_side: float) -> tuple[PolarLine, PolarLine]:
    first = lines[0]
    for cand in lines[1:]:
        if abs(_canonical_rho(cand) - _canonical_rho(first)) > min_side:
            return first, cand
    raise InsufficientLines("no second line beyond the separation limit")


def _order_corners(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    ordered = pts[np.argsort(ang)]
    start = int(np.argmin(ordered.sum(axis=1)))
    return np.roll(ordered, -start, axis=0)


def detect_screen_quad(img: GrayImage, cfg: ScreenFindConfig | None = None) -> ScreenQuad:
    """Find the screen's four corners from its boundary edges.

    Raises InsufficientLines when either line family has fewer than two
    usable lines and DegenerateQuad when the intersections do not make a
    convex quad of reasonable area.
    """
    cfg = cfg or ScreenFindConfig()
    if cfg.manual_corners is not None:
        return ScreenQuad(np.asarray(cfg.manual_corners, dtype=float).reshape(4, 2))

    gx, gy = sobel_gradients(gaussian_blur(img, cfg.sigma))
    gmax = float(np.hypot(gx, gy).max())
    if gmax <= 0.0:
        raise InsufficientLines("image has no gradients")
    edges = canny(img, cfg.sigma, low=cfg.low_frac * gmax, high=cfg.high_frac * gmax)

    threshold = max(10, int(round(cfg.vote_frac * min(img.width, img.height))))
    lines = hough_lines(edges, cfg.rho_res, cfg.theta_res, threshold)

    fa = cfg.family_angle
    horiz = [l for l in lines if abs(l.theta - math.pi / 2) < fa]
    vert = [l for l in lines if l.theta < fa or l.theta > math.pi - fa]
    if len(horiz) < 2 or len(vert) < 2:
        raise InsufficientLines(
            f"{len(horiz)} near-horizontal / {len(vert)} near-vertical line(s)"
        )
    min_side = cfg.min_side if cfg.min_side is not None else 0.1 * min(img.width, img.height)
    h1, h2 = _pick_two(horiz, min_side)
    v1, v2 = _pick_two(vert, min_side)

    pts = np.array([line_intersection(h, v) for h in (h1, h2) for v in (v1, v2)])
    quad = ScreenQuad(_order_corners(pts))
    if quad.area() < cfg.min_area_frac * img.width * img.height:
        raise DegenerateQuad(
            f"quad area {quad.area():.0f} px^2 is below "
            f"{cfg.min_area_frac:.0%} of the image"
        )
    return quad


# ---------------------------------------------------------------------------
# JSON forms

def quad_to_json(quad: ScreenQuad) -> str:
    return json.dumps({"corners": np.asarray(quad.corners).tolist()}, indent=2)


def quad_from_json(text: str) -> ScreenQuad:
    doc = json.loads(text)
    return ScreenQuad(np.asarray(doc["corners"], dtype=float).reshape(4, 2))


def homography_to_json(h: Homography, maps: str = "frame_to_reference") -> str:
    return json.dumps({"maps": maps, "matrix": h.m.ravel().tolist()}, indent=2)


def homography_from_json(text: str, expect_maps: str | None = None) -> Homography:
    doc = json.loads(text)
    if expect_maps is not None and doc.get("maps") != expect_maps:
        raise ValueError(f"homography maps {doc.get('maps')!r}, wanted {expect_maps!r}")
    return Homography(np.asarray(doc["matrix"], dtype=float).reshape(3, 3))
