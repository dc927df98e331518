"""8-bit grayscale rasters, binary PGM I/O, and classical image operators.

The raster operators (Gaussian smoothing, Sobel gradients, Canny edges,
Hough line voting, min-eigenvalue corner scoring) are implemented directly
on numpy arrays; borders are always handled by clamping to the edge pixel.
Operators that produce intermediate planes return float64 arrays of the
same shape as the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    BadSigma,
    BadThresholds,
    MalformedHeader,
    ParallelLines,
    TooSmall,
    TruncatedData,
)

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 8-bit grayscale image, row-major, origin top-left."""

    pixels: np.ndarray

    def __post_init__(self):
        a = self.pixels
        if a.ndim != 2 or a.dtype != np.uint8:
            raise ValueError("GrayImage wants a 2-D uint8 array")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @staticmethod
    def from_array(a) -> "GrayImage":
        a = np.asarray(a)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        if a.dtype != np.uint8:
            a = np.clip(np.rint(a.astype(float)), 0, 255).astype(np.uint8)
        else:
            a = a.copy()
        a.setflags(write=False)
        return GrayImage(a)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def plane(self) -> np.ndarray:
        """Writable float64 copy of the pixel data."""
        return self.pixels.astype(np.float64)


# ---------------------------------------------------------------------------
# binary PGM (P5, maxval 255)

def save_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedHeader("unexpected end of header")
    return data[start:pos], pos


def load_pgm(data: bytes) -> GrayImage:
    """Parse binary PGM bytes; only P5 with maxval 255 is accepted."""
    if data[:2] != b"P5":
        raise MalformedHeader(f"magic {data[:2]!r} is not P5")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise MalformedHeader(f"non-numeric header field {tok!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedHeader(f"maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace byte terminates the header
    raster = data[pos : pos + width * height]
    if len(raster) < width * height:
        raise TruncatedData(
            f"raster holds {len(raster)} of {width * height} bytes"
        )
    a = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage.from_array(a)


def load_pgm_file(path) -> GrayImage:
    return load_pgm(Path(path).read_bytes())


def save_pgm_file(img: GrayImage, path) -> None:
    Path(path).write_bytes(save_pgm(img))


def load_frame_dir(path) -> list[GrayImage]:
    """Load every .pgm file in a directory, ordered lexicographically."""
    files = sorted(Path(path).glob("*.pgm"))
    return [load_pgm_file(f) for f in files]


def save_frame_dir(frames, path, start: int = 1) -> list[Path]:
    """Write frames as zero-padded frame_000001.pgm, frame_000002.pgm, ..."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for i, frame in enumerate(frames, start=start):
        p = d / f"frame_{i:06d}.pgm"
        save_pgm_file(frame, p)
        out.append(p)
    return out


# ---------------------------------------------------------------------------
# smoothing and gradients

def _as_plane(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.plane()
    return np.asarray(img, dtype=np.float64)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise BadSigma(f"sigma = {sigma}")
    r = math.ceil(3.0 * sigma)
    xs = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with clamp-to-edge borders."""
    plane = _as_plane(img)
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(plane, k, axis=0, mode="nearest")
    return ndimage.convolve1d(out, k, axis=1, mode="nearest")


def sobel_gradients(img) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivative planes (gx, gy); positive gx points right."""
    plane = _as_plane(img)
    if plane.shape[0] < 3 or plane.shape[1] < 3:
        raise TooSmall(f"need at least 3x3, got {plane.shape[1]}x{plane.shape[0]}")
    gx = ndimage.correlate(plane, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(plane, _SOBEL_Y, mode="nearest")
    return gx, gy


def bilinear_sample(plane: np.ndarray, xs, ys) -> np.ndarray:
    """Sample a float plane at fractional coordinates, clamped to the edge."""
    h, w = plane.shape
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


# ---------------------------------------------------------------------------
# Canny edges

@dataclass(frozen=True, eq=False)
class EdgeMap:
    """Boolean edge mask plus the gradient magnitude/direction planes."""

    mask: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


def _nonmax_suppress(mag: np.ndarray, ang: np.ndarray) -> np.ndarray:
    """Keep pixels that are >= both neighbors along the gradient direction.

    Directions are quantized into four bins (horizontal, both diagonals,
    vertical); the comparison uses edge-clamped neighbors.
    """
    h, w = mag.shape
    pad = np.pad(mag, 1, mode="edge")

    def shifted(dy, dx):
        return pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    # gradient angle folded into [0, pi); bin 0 is a mostly-horizontal gradient
    folded = np.mod(ang, np.pi)
    bins = np.floor((folded + np.pi / 8) / (np.pi / 4)).astype(int) % 4

    neighbors = {
        0: (shifted(0, -1), shifted(0, 1)),
        1: (shifted(-1, -1), shifted(1, 1)),
        2: (shifted(-1, 0), shifted(1, 0)),
        3: (shifted(-1, 1), shifted(1, -1)),
    }
    keep = np.zeros_like(mag, dtype=bool)
    for b, (n1, n2) in neighbors.items():
        sel = bins == b
        keep |= sel & (mag >= n1) & (mag >= n2)
    return keep & (mag > 0)


def canny(img, sigma: float = 1.4, low: float | None = None, high: float | None = None) -> EdgeMap:
    """Canny edge detection.

    Smooth with a Gaussian, take Sobel gradients, thin with 4-bin non-maximum
    suppression, then keep weak pixels 8-connected to strong ones.  When the
    thresholds are omitted they default to 0.4 and 0.8 times the 90th
    percentile of the gradient magnitude.
    """
    smooth = gaussian_blur(img, sigma)
    gx, gy = sobel_gradients(smooth)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)

    if low is None and high is None:
        p90 = float(np.percentile(mag, 90.0))
        low = 0.4 * p90
        high = 0.8 * p90
    if low is None or high is None or not (0.0 < low < high):
        raise BadThresholds(f"need 0 < low < high, got low={low}, high={high}")

    thin = np.where(_nonmax_suppress(mag, ang), mag, 0.0)
    strong = thin >= high
    weak = thin >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    mask = keep[labels]
    mask.setflags(write=False)
    for a in (mag, ang):
        a.setflags(write=False)
    return EdgeMap(mask=mask, magnitude=mag, direction=ang)


# ---------------------------------------------------------------------------
# Hough line voting

@dataclass(frozen=True)
class PolarLine:
    """A line in normal form: rho = x cos(theta) + y sin(theta), theta in [0, pi)."""

    rho: float
    theta: float


def hough_lines(
    edges: EdgeMap,
    rho_res: float = 1.0,
    theta_res: float = np.pi / 180.0,
    threshold: int = 1,
) -> list[PolarLine]:
    """Accumulate edge pixels into (rho, theta) space and return the peaks.

    Peaks must exceed the vote threshold and be local maxima within a 3x3
    accumulator neighborhood; they are returned ordered by descending votes.
    """
    if rho_res <= 0 or theta_res <= 0:
        raise ValueError("resolutions must be positive")
    if threshold < 1:
        raise ValueError("vote threshold must be >= 1")
    h, w = edges.mask.shape
    ys, xs = np.nonzero(edges.mask)
    n_theta = max(1, int(round(np.pi / theta_res)))
    thetas = np.arange(n_theta) * theta_res
    rho_max = math.hypot(w, h)
    half = int(math.ceil(rho_max / rho_res))
    n_rho = 2 * half + 1

    acc = np.zeros((n_rho, n_theta), dtype=np.int64)
    if len(xs):
        cos = np.cos(thetas)
        sin = np.sin(thetas)
        for k in range(n_theta):
            rho = xs * cos[k] + ys * sin[k]
            idx = np.rint(rho / rho_res).astype(np.intp) + half
            acc[:, k] += np.bincount(idx, minlength=n_rho)

    local_max = ndimage.maximum_filter(acc, size=3, mode="constant") == acc
    cand = local_max & (acc >= threshold)
    ri, ti = np.nonzero(cand)
    votes = acc[ri, ti]
    order = np.lexsort((ti, ri, -votes))

    # plateaus make adjacent equal cells both "local maxima"; greedily keep
    # the first of any 3x3 cluster in vote order
    taken: list[tuple[int, int]] = []
    lines: list[PolarLine] = []
    for i in order:
        r, t = int(ri[i]), int(ti[i])
        if any(abs(r - r0) <= 1 and abs(t - t0) <= 1 for r0, t0 in taken):
            continue
        taken.append((r, t))
        lines.append(PolarLine(rho=(r - half) * rho_res, theta=t * theta_res))
    return lines


def line_intersection(a: PolarLine, b: PolarLine) -> tuple[float, float]:
    """Intersect two polar lines; raises ParallelLines when nearly parallel."""
    det = math.sin(b.theta - a.theta)
    if abs(det) <= 1e-9:
        raise ParallelLines(f"|sin(dtheta)| = {abs(det):.3g}")
    m = np.array(
        [
            [math.cos(a.theta), math.sin(a.theta)],
            [math.cos(b.theta), math.sin(b.theta)],
        ]
    )
    x, y = np.linalg.solve(m, np.array([a.rho, b.rho]))
    return (float(x), float(y))


# ---------------------------------------------------------------------------
# min-eigenvalue corners

def corner_response(img) -> np.ndarray:
    """Min eigenvalue of the 3x3-window structure tensor of Sobel gradients."""
    gx, gy = sobel_gradients(img)
    ones = np.ones((3, 3))
    sxx = ndimage.correlate(gx * gx, ones, mode="nearest")
    sxy = ndimage.correlate(gx * gy, ones, mode="nearest")
    syy = ndimage.correlate(gy * gy, ones, mode="nearest")
    half_tr = 0.5 * (sxx + syy)
    root = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy * sxy, 0.0))
    return np.maximum(half_tr - root, 0.0)


def shi_tomasi_features(
    img, max_n: int = 6, quality: float = 0.05, min_dist: float = 5.0
) -> list[tuple[float, float]]:
    """Strongest corner points, greedily spaced at least min_dist apart."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not (0.0 < quality <= 1.0):
        raise ValueError("quality must be in (0, 1]")
    lam = corner_response(img)
    gmax = float(lam.max())
    if gmax <= 0.0:
        return []
    local_max = ndimage.maximum_filter(lam, size=3, mode="constant") == lam
    cand = local_max & (lam >= quality * gmax) & (lam > 0)
    ys, xs = np.nonzero(cand)
    if len(xs) == 0:
        return []
    order = np.lexsort((xs, ys, -lam[ys, xs]))
    picked: list[tuple[float, float]] = []
    min_d2 = min_dist * min_dist
    for i in order:
        x, y = float(xs[i]), float(ys[i])
        if any((x - px) ** 2 + (y - py) ** 2 < min_d2 for px, py in picked):
            continue
        picked.append((x, y))
        if len(picked) >= max_n:
            break
    return picked
