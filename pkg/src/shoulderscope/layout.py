"""Keyboard layouts in reference-image coordinates, plus size prediction.

A layout lives on the flat "reference" image of the screen: an axis-aligned
set of labeled key rectangles inside a ref_width x ref_height raster.  The
convention throughout the package is that larger reference y means farther
from the camera, so the key "behind" another sits at larger y.

Key rectangles are half-open: a point belongs to the key with
x in [kx, kx+w) and y in [ky, ky+h).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadInput, UnknownPreset


@dataclass(frozen=True)
class KeyRect:
    label: str
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"key {self.label!r} has non-positive size")

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True)
class KeyboardLayout:
    """Labeled key rectangles on the reference raster.

    mm_per_px converts reference pixels to physical millimetres; the
    built-in layouts are generated at 10 px per mm, i.e. mm_per_px = 0.1.
    orientation names the side of the reference image holding the keyboard's
    front edge (the row nearest the user); "bottom" is the default and means
    increasing y points away from the camera.
    """

    keys: tuple[KeyRect, ...]
    ref_width: int
    ref_height: int
    mm_per_px: float = 0.1
    orientation: str = "bottom"

    def __post_init__(self):
        if self.ref_width < 1 or self.ref_height < 1:
            raise ValueError("reference raster must be at least 1x1")
        if self.mm_per_px <= 0:
            raise ValueError("mm_per_px must be positive")
        if self.orientation not in ("bottom", "top"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        labels = [k.label for k in self.keys]
        if len(set(labels)) != len(labels):
            raise ValueError("key labels must be unique")
        for k in self.keys:
            if k.x < 0 or k.y < 0 or k.x + k.w > self.ref_width or k.y + k.h > self.ref_height:
                raise ValueError(f"key {k.label!r} exceeds the reference bounds")
        ks = self.keys
        for i in range(len(ks)):
            for j in range(i + 1, len(ks)):
                a, b = ks[i], ks[j]
                if a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h:
                    raise ValueError(f"keys {a.label!r} and {b.label!r} overlap")
        object.__setattr__(self, "keys", tuple(self.keys))

    @property
    def px_per_mm(self) -> float:
        return 1.0 / self.mm_per_px

    def key(self, label: str) -> KeyRect:
        for k in self.keys:
            if k.label == label:
                return k
        raise KeyError(label)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(k.label for k in self.keys)


def key_at(layout: KeyboardLayout, x: float, y: float) -> str | None:
    """Label of the key whose half-open rectangle contains (x, y), or None."""
    for k in layout.keys:
        if k.x <= x < k.x + k.w and k.y <= y < k.y + k.h:
            return k.label
    return None


def screen_corners(layout: KeyboardLayout) -> np.ndarray:
    """Corners of the reference raster's area extent, ordered TL, TR, BR, BL.

    The raster covers [-0.5, ref_width - 0.5] x [-0.5, ref_height - 0.5] in
    continuous coordinates (pixel centers sit at integers), and these are the
    four points a frame-to-reference homography should pin to the detected
    screen quad.
    """
    w, h = layout.ref_width, layout.ref_height
    return np.array(
        [
            [-0.5, -0.5],
            [w - 0.5, -0.5],
            [w - 0.5, h - 0.5],
            [-0.5, h - 0.5],
        ]
    )


def predicted_key_image_size(
    f: float, h: float, d: float, w: float, pixel_pitch: float
) -> tuple[float, float]:
    """Predicted on-sensor size of a key of depth w seen from afar.

    For a camera of focal length f (mm) at height h (mm) and horizontal
    distance d (mm) from a key of depth w (mm) lying flat, the projected
    size on the sensor is f*h / (d * (1 + d/w)) mm; dividing by the pixel
    pitch (mm/px) converts to pixels.  Returns (sensor_mm, pixels).
    """
    for name, v in (("f", f), ("h", h), ("d", d), ("w", w), ("pixel_pitch", pixel_pitch)):
        if v <= 0:
            raise BadInput(f"{name} must be positive, got {v}")
    sensor_mm = f * h / (d * (1.0 + d / w))
    return (sensor_mm, sensor_mm / pixel_pitch)


@dataclass(frozen=True)
class DevicePreset:
    """Per-device digit key size (portrait digit pad)."""

    name: str
    key_height_mm: float
    key_length_mm: float


DEVICE_PRESETS = {
    "ipad": DevicePreset("ipad", key_height_mm=9.0, key_length_mm=17.0),
    "iphone5": DevicePreset("iphone5", key_height_mm=8.0, key_length_mm=16.0),
    "nexus7": DevicePreset("nexus7", key_height_mm=10.0, key_length_mm=16.0),
}

_DIGIT_ROWS = (("1", "2", "3"), ("4", "5", "6"), ("7", "8", "9"), (None, "0", None))
_QWERTY_ROW = ("q", "w", "e", "r", "t", "y", "u", "i", "o", "p")


def builtin_layout(
    preset: str | DevicePreset, style: str = "digit-pad", px_per_mm: float = 10.0
) -> KeyboardLayout:
    """Deterministic layout for a named device.

    digit-pad arranges 1-9 in a 3x4 grid with 0 centered on the bottom row;
    qwerty-row is a single ten-key row.  Key sizes come from the device
    preset scaled by px_per_mm.
    """
    if isinstance(preset, str):
        try:
            preset = DEVICE_PRESETS[preset]
        except KeyError:
            raise UnknownPreset(
                f"{preset!r}; known: {sorted(DEVICE_PRESETS)}"
            ) from None
    if px_per_mm <= 0:
        raise BadInput("px_per_mm must be positive")

    kw = round(preset.key_length_mm * px_per_mm)
    kh = round(preset.key_height_mm * px_per_mm)
    gap = round(0.35 * kh)
    margin = round(0.45 * kh)

    keys: list[KeyRect] = []
    if style == "digit-pad":
        n_cols, n_rows = 3, len(_DIGIT_ROWS)
        for r, row in enumerate(_DIGIT_ROWS):
            for c, label in enumerate(row):
                if label is None:
                    continue
                keys.append(
                    KeyRect(
                        label=label,
                        x=margin + c * (kw + gap),
                        y=margin + r * (kh + gap),
                        w=kw,
                        h=kh,
                    )
                )
        ref_w = 2 * margin + n_cols * kw + (n_cols - 1) * gap
        ref_h = 2 * margin + n_rows * kh + (n_rows - 1) * gap
    elif style == "qwerty-row":
        n = len(_QWERTY_ROW)
        for c, label in enumerate(_QWERTY_ROW):
            keys.append(KeyRect(label=label, x=margin + c * (kw + gap), y=margin, w=kw, h=kh))
        ref_w = 2 * margin + n * kw + (n - 1) * gap
        ref_h = 2 * margin + kh
    else:
        raise UnknownPreset(f"unknown style {style!r}")

    return KeyboardLayout(
        keys=tuple(keys),
        ref_width=int(ref_w),
        ref_height=int(ref_h),
        mm_per_px=1.0 / px_per_mm,
        orientation="bottom",
    )


def layout_to_json(layout: KeyboardLayout) -> str:
    doc = {
        "ref_width": layout.ref_width,
        "ref_height": layout.ref_height,
        "mm_per_px": layout.mm_per_px,
        "orientation": layout.orientation,
        "keys": [
            {"label": k.label, "x": k.x, "y": k.y, "w": k.w, "h": k.h}
            for k in layout.keys
        ],
    }
    return json.dumps(doc, indent=2)


def layout_from_json(text: str) -> KeyboardLayout:
    try:
        doc = json.loads(text)
        keys = tuple(
            KeyRect(label=k["label"], x=k["x"], y=k["y"], w=k["w"], h=k["h"])
            for k in doc["keys"]
        )
        return KeyboardLayout(
            keys=keys,
            ref_width=doc["ref_width"],
            ref_height=doc["ref_height"],
            mm_per_px=doc["mm_per_px"],
            orientation=doc.get("orientation", "bottom"),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise BadInput(f"malformed layout JSON: {exc}") from exc
