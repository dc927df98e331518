"""Synthetic tap videos with exact ground truth.

A scene is a dark flat screen (carrying the keyboard reference raster)
surrounded by a light bezel, viewed through a known reference-to-frame
homography.  The tapping finger is a 2-D capsule aligned with the local
"toward the screen" image direction, shaded as three stacked intensity
bands (bright top, gray middle, dark tip).  While the finger rests on the
screen the glossy surface mirrors the tip, which the renderer draws as two
more bands below the contact row.  Everything the recognition pipeline
estimates (touching frames, contact points, screen corners, the homography)
is emitted as exact ground truth, making the generator the oracle for the
test suite.

Coordinates: pixel centers sit at integer coordinates in both the frame and
the reference raster, so the screen occupies the reference area extent
[-0.5, ref_width - 0.5] x [-0.5, ref_height - 0.5].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContactOutsideKeys, QuadOutOfFrame, UnknownPreset
from .geom import (
    CameraExtrinsics,
    CameraIntrinsics,
    Homography,
    PlaneFrame,
    apply,
    apply_many,
    plane_to_image_homography,
)
from .imgproc import GrayImage, bilinear_sample
from .layout import KeyboardLayout, builtin_layout, key_at, screen_corners
from .screenfind import PointPairSet, dlt_homography


@dataclass(frozen=True)
class Tap:
    """One scripted tap: frames of approach, rest, and withdrawal."""

    label: str
    approach: int = 4
    dwell: int = 2
    retreat: int = 4

    def __post_init__(self):
        if self.approach < 1 or self.dwell < 1 or self.retreat < 1:
            raise ValueError("approach, dwell and retreat must each be >= 1")


@dataclass(frozen=True)
class TapScript:
    """Sequence of taps plus the nominal frame rate."""

    taps: tuple[Tap, ...]
    fps: float = 30.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "taps", tuple(self.taps))

    @staticmethod
    def from_code(code: str, approach: int = 4, dwell: int = 2, retreat: int = 4) -> "TapScript":
        return TapScript(
            taps=tuple(Tap(c, approach, dwell, retreat) for c in code)
        )


@dataclass(frozen=True, eq=False)
class SceneConfig:
    """Scene parameters.

    Exactly one of `homography` (reference px -> frame px) or `camera`
    (intrinsics, extrinsics, plane frame) must be given.  Band levels are
    listed top-to-bottom along the finger: bright, gray, dark tip, then the
    two mirrored reflection bands below the contact row.
    """

    layout: KeyboardLayout
    image_size: tuple[int, int]  # (width, height)
    homography: Homography | None = None
    camera: tuple[CameraIntrinsics, CameraExtrinsics, PlaneFrame] | None = None
    finger_width_mm: float = 13.0
    finger_length_mm: float = 28.0
    dark_mm: float = 3.0
    gray_mm: float = 4.0
    lift_mm: float = 6.0
    noise_sigma: float = 0.0
    band_levels: tuple[float, float, float, float, float] = (230.0, 180.0, 60.0, 70.0, 200.0)
    bezel_level: float = 240.0
    screen_level: float = 110.0
    key_level: float = 140.0
    supersample: int = 2
    # Skin speckle: zero-mean blocky pattern rigid in finger-local mm
    # coordinates, so feature trackers have corners that move with the
    # finger.  Small enough that band k-means centers stay near band_levels.
    texture_amp: float = 5.0
    texture_block_mm: float = 0.5

    def __post_init__(self):
        if (self.homography is None) == (self.camera is None):
            raise ValueError("give exactly one of homography or camera")
        b = self.band_levels
        if not (b[0] > b[1] > b[2]):
            raise ValueError("finger band levels must decrease from top to tip")
        if not (b[3] < b[4]):
            raise ValueError("mirrored dark band must stay darker than the rest")
        if self.finger_width_mm <= 0 or self.finger_length_mm <= self.finger_width_mm / 2:
            raise ValueError("finger must be longer than its tip radius")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")

    def true_homography(self) -> Homography:
        if self.homography is not None:
            return self.homography
        intr, extr, plane = self.camera
        return plane_to_image_homography(intr, extr, plane)


@dataclass(frozen=True)
class TapGroundTruth:
    frame: int
    contact_frame_px: tuple[float, float]
    contact_ref_px: tuple[float, float]
    label: str


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Everything the pipeline is supposed to estimate, known exactly."""

    taps: tuple[TapGroundTruth, ...]
    corners: np.ndarray  # (4, 2) frame px, TL TR BR BL
    homography: Homography  # reference px -> frame px
    hand_box: tuple[float, float, float, float] | None
    frame_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "taps": [
                    {
                        "frame": t.frame,
                        "contact_frame_px": list(t.contact_frame_px),
                        "contact_ref_px": list(t.contact_ref_px),
                        "label": t.label,
                    }
                    for t in self.taps
                ],
                "corners": np.asarray(self.corners).tolist(),
                "homography": self.homography.m.ravel().tolist(),
                "maps": "reference_to_frame",
                "hand_box": list(self.hand_box) if self.hand_box else None,
                "frame_count": self.frame_count,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "GroundTruth":
        doc = json.loads(text)
        return GroundTruth(
            taps=tuple(
                TapGroundTruth(
                    frame=t["frame"],
                    contact_frame_px=tuple(t["contact_frame_px"]),
                    contact_ref_px=tuple(t["contact_ref_px"]),
                    label=t["label"],
                )
                for t in doc["taps"]
            ),
            corners=np.asarray(doc["corners"], dtype=float).reshape(4, 2),
            homography=Homography(np.asarray(doc["homography"], dtype=float).reshape(3, 3)),
            hand_box=tuple(doc["hand_box"]) if doc.get("hand_box") else None,
            frame_count=doc["frame_count"],
        )


def reference_raster(
    layout: KeyboardLayout, screen_level: float = 110.0, key_level: float = 140.0
) -> GrayImage:
    """Flat view of the screen: key rectangles on the wallpaper."""
    plane = np.full((layout.ref_height, layout.ref_width), screen_level, dtype=float)
    for k in layout.keys:
        x0, y0 = int(math.ceil(k.x)), int(math.ceil(k.y))
        x1, y1 = int(math.floor(k.x + k.w)), int(math.floor(k.y + k.h))
        plane[y0:y1, x0:x1] = key_level
    return GrayImage.from_array(plane)


def _subpixel_offsets(ss: int) -> np.ndarray:
    return (np.arange(ss) + 0.5) / ss - 0.5


def _map_through(m: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Project coordinate planes through a 3x3 matrix, tolerating w ~ 0."""
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    bad = np.abs(w) <= 1e-12
    w = np.where(bad, 1.0, w)
    u = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / w
    v = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / w
    return u, v, ~bad


def render_scene(cfg: SceneConfig) -> GrayImage:
    """Bezel-filled frame with the reference raster warped into the quad.

    Raises QuadOutOfFrame when any mapped screen corner falls outside the
    image.  The quad silhouette is antialiased by supersampling the inside
    test; content is sampled bilinearly at each pixel center so an identity
    homography reproduces the reference raster exactly.
    """
    w, h = cfg.image_size
    hom = cfg.true_homography()
    corners = apply_many(hom, screen_corners(cfg.layout))
    if (
        corners[:, 0].min() < 0
        or corners[:, 1].min() < 0
        or corners[:, 0].max() > w - 1
        or corners[:, 1].max() > h - 1
    ):
        raise QuadOutOfFrame(f"screen corners {corners.round(1).tolist()} exceed {w}x{h}")

    ref = reference_raster(cfg.layout, cfg.screen_level, cfg.key_level).plane()
    rw, rh = cfg.layout.ref_width, cfg.layout.ref_height
    hinv = np.linalg.inv(hom.m)
    ys, xs = np.mgrid[0:h, 0:w].astype(float)

    inside_count = np.zeros((h, w))
    offs = _subpixel_offsets(cfg.supersample)
    for oy in offs:
        for ox in offs:
            u, v, ok = _map_through(hinv, xs + ox, ys + oy)
            inside = ok & (u >= -0.5) & (u <= rw - 0.5) & (v >= -0.5) & (v <= rh - 0.5)
            inside_count += inside
    alpha = inside_count / (cfg.supersample**2)

    uc, vc, okc = _map_through(hinv, xs, ys)
    content = bilinear_sample(ref, uc, vc)
    plane = cfg.bezel_level * (1.0 - alpha) + content * alpha
    return GrayImage.from_array(plane)


@dataclass(frozen=True)
class _FingerFrame:
    """Local image geometry of the capsule at a contact anchor."""

    contact: np.ndarray  # frame px of the anchor on the screen plane
    toward: np.ndarray  # unit image direction of increasing reference y
    px_per_mm_axis: float  # frame px per mm along the finger axis
    px_per_mm_side: float  # frame px per mm across the finger


def _finger_frame(cfg: SceneConfig, hom: Homography, anchor_ref) -> _FingerFrame:
    ax, ay = float(anchor_ref[0]), float(anchor_ref[1])
    c = np.array(apply(hom, ax, ay))
    along = np.array(apply(hom, ax, ay + 1.0)) - c
    across = np.array(apply(hom, ax + 1.0, ay)) - c
    s_t = float(np.linalg.norm(along))
    s_p = float(np.linalg.norm(across))
    ppm = cfg.layout.px_per_mm
    return _FingerFrame(
        contact=c,
        toward=along / s_t,
        px_per_mm_axis=s_t * ppm,
        px_per_mm_side=s_p * ppm,
    )


def _draw_finger(
    plane: np.ndarray,
    cfg: SceneConfig,
    geo: _FingerFrame,
    offset_mm: float,
    with_reflection: bool,
) -> None:
    """Composite the banded capsule (and dwell reflection) onto the plane."""
    h, w = plane.shape
    v = geo.toward
    axis = -v  # away from the screen
    tip = geo.contact + v * 0.0 - v * offset_mm * geo.px_per_mm_axis
    radius = 0.5 * cfg.finger_width_mm * geo.px_per_mm_side
    length = cfg.finger_length_mm * geo.px_per_mm_axis
    dark_px = cfg.dark_mm * geo.px_per_mm_axis
    gray_px = cfg.gray_mm * geo.px_per_mm_axis
    reflect_px = dark_px + gray_px

    seg0 = tip + axis * radius
    seg1 = tip + axis * length
    pts = [seg0 - radius - 2, seg0 + radius + 2, seg1 - radius - 2, seg1 + radius + 2]
    if with_reflection:
        c = geo.contact
        pts += [c + v * reflect_px - radius - 2, c + v * reflect_px + radius + 2]
    pts = np.array(pts)
    x0 = int(max(0, math.floor(pts[:, 0].min())))
    y0 = int(max(0, math.floor(pts[:, 1].min())))
    x1 = int(min(w, math.ceil(pts[:, 0].max()) + 1))
    y1 = int(min(h, math.ceil(pts[:, 1].max()) + 1))
    if x0 >= x1 or y0 >= y1:
        return

    ys, xs = np.mgrid[y0:y1, x0:x1].astype(float)
    b = cfg.band_levels
    seg_len = max(length - radius, 1e-9)
    perp = np.array([-axis[1], axis[0]])
    acc_val = np.zeros_like(xs)
    acc_cnt = np.zeros_like(xs)
    offs = _subpixel_offsets(cfg.supersample)

    def texture(d_tip, d_side):
        if cfg.texture_amp <= 0:
            return 0.0
        bi = np.floor(d_tip / (cfg.texture_block_mm * geo.px_per_mm_axis)).astype(np.int64)
        bj = np.floor(d_side / (cfg.texture_block_mm * geo.px_per_mm_side)).astype(np.int64)
        h = (bi * 73856093) ^ (bj * 19349663)
        return ((h & 255) / 255.0 - 0.5) * 2.0 * cfg.texture_amp

    def capsule_hit(px, py):
        rx = px - seg0[0]
        ry = py - seg0[1]
        t = np.clip(rx * axis[0] + ry * axis[1], 0.0, seg_len)
        dx = rx - t * axis[0]
        dy = ry - t * axis[1]
        inside = dx * dx + dy * dy <= radius * radius
        d_tip = np.maximum((px - tip[0]) * axis[0] + (py - tip[1]) * axis[1], 0.0)
        d_side = (px - tip[0]) * perp[0] + (py - tip[1]) * perp[1]
        val = np.where(d_tip < dark_px, b[2], np.where(d_tip < dark_px + gray_px, b[1], b[0]))
        return inside, val + texture(d_tip, d_side)

    for oy in offs:
        for ox in offs:
            px = xs + ox
            py = ys + oy
            inside, val = capsule_hit(px, py)
            if with_reflection:
                depth = (px - geo.contact[0]) * v[0] + (py - geo.contact[1]) * v[1]
                mx = px - 2.0 * depth * v[0]
                my = py - 2.0 * depth * v[1]
                m_in, _ = capsule_hit(mx, my)
                m_tip = np.maximum(
                    (mx - tip[0]) * axis[0] + (my - tip[1]) * axis[1], 0.0
                )
                m_val = np.where(m_tip < dark_px, b[3], b[4])
                m_in = m_in & (depth > 0) & (depth <= reflect_px)
                val = np.where(inside, val, m_val)
                inside = inside | m_in
            acc_val += np.where(inside, val, 0.0)
            acc_cnt += inside

    n = cfg.supersample**2
    alpha = acc_cnt / n
    region = plane[y0:y1, x0:x1]
    plane[y0:y1, x0:x1] = region * (1.0 - alpha) + acc_val / n


def render_finger(
    frame: GrayImage, contact_ref_point, phase: str, cfg: SceneConfig, t: float = 1.0
) -> GrayImage:
    """Draw the fingertip over a rendered frame.

    phase is "approach", "dwell" or "retreat"; t in [0, 1] is the phase
    fraction (an approach at t=0.5 floats at half the lift height, a retreat
    at t=1 is fully lifted).  The mirrored reflection bands are drawn only
    during dwell, directly below the contact row.  The contact point must
    lie inside a key rectangle.
    """
    cx, cy = float(contact_ref_point[0]), float(contact_ref_point[1])
    if key_at(cfg.layout, cx, cy) is None:
        raise ContactOutsideKeys(f"({cx:.1f}, {cy:.1f}) hits no key")
    if phase not in ("approach", "dwell", "retreat"):
        raise ValueError(f"unknown phase {phase!r}")
    if not (0.0 <= t <= 1.0):
        raise ValueError("phase fraction t must lie in [0, 1]")
    if phase == "approach":
        offset = (1.0 - t) * cfg.lift_mm
    elif phase == "retreat":
        offset = t * cfg.lift_mm
    else:
        offset = 0.0
    hom = cfg.true_homography()
    geo = _finger_frame(cfg, hom, (cx, cy))
    plane = frame.plane()
    _draw_finger(plane, cfg, geo, offset, with_reflection=(phase == "dwell"))
    return GrayImage.from_array(plane)


def _capsule_bbox(cfg: SceneConfig, geo: _FingerFrame, offset_mm: float):
    v = geo.toward
    tip = geo.contact - v * offset_mm * geo.px_per_mm_axis
    radius = 0.5 * cfg.finger_width_mm * geo.px_per_mm_side
    length = cfg.finger_length_mm * geo.px_per_mm_axis
    ends = np.array([tip, tip - v * length])
    x0 = ends[:, 0].min() - radius - 2
    y0 = ends[:, 1].min() - radius - 2
    x1 = ends[:, 0].max() + radius + 2
    y1 = ends[:, 1].max() + radius + 2
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def synth_tap_video(
    layout: KeyboardLayout, cfg: SceneConfig, script: TapScript, seed: int = 0
) -> tuple[list[GrayImage], GroundTruth]:
    """Render a tap video and its exact ground truth.

    Each tap approaches its key's center: transit frames travel sideways
    from the previous key at lift height (one frame per 20 reference px,
    at least approach // 2), the `approach` descent frames drop straight
    down in equal steps, dwell frames rest on the key (with the reflection
    drawn), and retreat lifts straight back up.  The pacing keeps
    inter-frame image motion within pyramidal-tracking range.  Gaussian
    pixel noise (cfg.noise_sigma) is applied from a generator seeded with
    `seed`, so output is bit-exact reproducible.
    """
    if cfg.layout is not layout and cfg.layout != layout:
        cfg = replace(cfg, layout=layout)
    hom = cfg.true_homography()
    base = render_scene(cfg).plane()
    rng = np.random.default_rng(seed)

    contacts = []
    for tap in script.taps:
        try:
            contacts.append(np.array(layout.key(tap.label).center()))
        except KeyError:
            raise ContactOutsideKeys(f"layout has no key {tap.label!r}") from None

    # (anchor_ref, offset_mm, is_dwell) per frame; no taps -> a static scene
    schedule: list[tuple[np.ndarray, float, bool] | None] = []
    gt_taps: list[TapGroundTruth] = []
    if script.taps:
        schedule.append((contacts[0], cfg.lift_mm, False))  # lead-in hover
        prev = contacts[0]
        for ti, tap in enumerate(script.taps):
            target = contacts[ti]
            transit = 0
            if ti > 0:
                dist = float(np.linalg.norm(target - prev))
                transit = max(tap.approach // 2, int(math.ceil(dist / 20.0)))
            descent = tap.approach
            for i in range(1, transit + 1):
                anchor = prev + (target - prev) * (i / transit)
                schedule.append((anchor, cfg.lift_mm, False))
            for i in range(1, descent + 1):
                schedule.append((target, cfg.lift_mm * (1.0 - i / (descent + 1)), False))
            for _ in range(tap.dwell):
                schedule.append((target, 0.0, True))
            cx, cy = apply(hom, target[0], target[1])
            gt_taps.append(
                TapGroundTruth(
                    frame=len(schedule) - 1,
                    contact_frame_px=(cx, cy),
                    contact_ref_px=(float(target[0]), float(target[1])),
                    label=tap.label,
                )
            )
            for i in range(1, tap.retreat + 1):
                schedule.append((target, cfg.lift_mm * (i / tap.retreat), False))
            prev = target
    else:
        schedule = [None] * 8

    frames: list[GrayImage] = []
    for entry in schedule:
        plane = base.copy()
        if entry is not None:
            anchor, offset, is_dwell = entry
            geo = _finger_frame(cfg, hom, anchor)
            _draw_finger(plane, cfg, geo, offset, with_reflection=is_dwell)
        if cfg.noise_sigma > 0:
            plane = plane + rng.normal(0.0, cfg.noise_sigma, plane.shape)
        frames.append(GrayImage.from_array(plane))

    hand_box = None
    if script.taps:
        geo0 = _finger_frame(cfg, hom, contacts[0])
        hand_box = _capsule_bbox(cfg, geo0, cfg.lift_mm)

    truth = GroundTruth(
        taps=tuple(gt_taps),
        corners=apply_many(hom, screen_corners(layout)),
        homography=hom,
        hand_box=hand_box,
        frame_count=len(frames),
    )
    return frames, truth


# ---------------------------------------------------------------------------
# pose presets

# Webcam sensor geometry with a moderate optical zoom: meter-range captures
# need the zoom for the keypad to subtend more than a handful of pixels.
_ZOOM_CAM = CameraIntrinsics(f=16.0, sx=0.00398, sy=0.00398, ox=0.0, oy=0.0)


def _camera_pose(
    layout: KeyboardLayout,
    distance_mm: float,
    height_mm: float,
    yaw_deg: float = 0.0,
    margin: int = 8,
) -> tuple[Homography, tuple[int, int]]:
    """Homography + frame size for a camera facing the device.

    The device plane is tilted so its "away" direction recedes at the
    elevation angle implied by the camera height, and the mapped quad is
    cropped to a frame with the given bezel margin (no rescaling, so the
    physical pixel footprint of the keys is preserved).
    """
    s = layout.mm_per_px
    elev = math.atan2(height_mm, distance_mm)
    yaw = math.radians(yaw_deg)
    axis_a = s * np.array([math.cos(yaw), 0.0, math.sin(yaw)])
    axis_b = s * np.array([0.0, math.sin(elev), math.cos(elev)])
    dist = math.hypot(distance_mm, height_mm)
    center = np.array([0.0, 0.0, dist])
    origin = center - axis_a * layout.ref_width / 2.0 - axis_b * layout.ref_height / 2.0
    plane = PlaneFrame(origin=origin, axis_a=axis_a, axis_b=axis_b)
    extr = CameraExtrinsics(r=np.eye(3), t=np.zeros(3))
    cam_h = plane_to_image_homography(_ZOOM_CAM, extr, plane)

    quad = apply_many(cam_h, screen_corners(layout))
    x0, y0 = quad[:, 0].min(), quad[:, 1].min()
    shift = np.array(
        [[1.0, 0.0, margin - x0], [0.0, 1.0, margin - y0], [0.0, 0.0, 1.0]]
    )
    hom = Homography(shift @ cam_h.m)
    width = int(math.ceil(quad[:, 0].max() - x0)) + 2 * margin
    height = int(math.ceil(quad[:, 1].max() - y0)) + 2 * margin
    return hom, (width, height)


def scene_preset(name: str, layout: KeyboardLayout | None = None, **overrides) -> SceneConfig:
    """Named scene setups.

    "canonical" is a mild direct-homography perspective used as the default
    operating point.  "front", "left-front" and "right-front" model a
    camera ~2.2 m away at 0.5 m height; "d2000" through "d5000" model the
    same camera straight ahead at 1 m height and 2-5 m distance, so image
    detail genuinely shrinks with distance.
    """
    layout = layout or builtin_layout("ipad")
    if name == "canonical":
        size = (112, 92)
        quad = np.array([[16.0, 12.0], [94.0, 15.0], [91.0, 78.0], [14.0, 75.0]])
        hom = dlt_homography(PointPairSet(src=screen_corners(layout), dst=quad))
        params = dict(layout=layout, image_size=size, homography=hom, noise_sigma=2.0)
    elif name in ("front", "left-front", "right-front"):
        yaw = {"front": 0.0, "left-front": -18.0, "right-front": 18.0}[name]
        hom, size = _camera_pose(layout, distance_mm=2200.0, height_mm=500.0, yaw_deg=yaw)
        params = dict(layout=layout, image_size=size, homography=hom, noise_sigma=2.0)
    elif name.startswith("d") and name[1:].isdigit():
        d = float(name[1:])
        hom, size = _camera_pose(layout, distance_mm=d, height_mm=1000.0)
        params = dict(layout=layout, image_size=size, homography=hom, noise_sigma=2.0)
    else:
        raise UnknownPreset(f"unknown scene preset {name!r}")
    params.update(overrides)
    return SceneConfig(**params)
