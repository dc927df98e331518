"""Homogeneous geometry: pinhole projection and plane-to-image homographies.

Conventions used throughout the package:

* image coordinates are in pixels, origin at the top-left corner, y grows
  downward;
* physical lengths (focal length, pixel pitch, world positions) are in mm;
* a 3x3 matrix acts on column vectors, so a homography ``H`` maps
  ``(x, y, 1)^T`` to a homogeneous image point.

The pinhole model is split the classical way: intrinsics ``K*C`` with
``C = diag(f, f, 1)``, and extrinsics ``[R | -R T]`` where ``T`` is the
camera center expressed in world coordinates.  A plane gets a 4x3 frame
matrix ``U`` whose columns are two in-plane axes and the plane origin, with
bottom row ``(0, 0, 1)``; composing the three yields the 3x3 plane-to-image
homography.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    PointAtInfinity,
    SingularMatrix,
)

_W_EPS = 1e-12
_ORTHO_EPS = 1e-9


def _as_vec(v, n: int) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(n)
    return a


@dataclass(frozen=True)
class HPoint2:
    """Homogeneous 2-D point; ``w == 0`` encodes a direction at infinity."""

    x: float
    y: float
    w: float = 1.0

    def __post_init__(self):
        if self.x == 0.0 and self.y == 0.0 and self.w == 0.0:
            raise ValueError("homogeneous 2-D point needs a nonzero component")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w], dtype=float)


@dataclass(frozen=True)
class HPoint3:
    """Homogeneous 3-D point in world coordinates (mm)."""

    x: float
    y: float
    z: float
    w: float = 1.0

    def __post_init__(self):
        if self.x == 0.0 and self.y == 0.0 and self.z == 0.0 and self.w == 0.0:
            raise ValueError("homogeneous 3-D point needs a nonzero component")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=float)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal length f (mm), pixel pitch sx/sy (mm/px),
    principal point (ox, oy) in px."""

    f: float
    sx: float
    sy: float
    ox: float
    oy: float

    def __post_init__(self):
        if self.f <= 0 or self.sx <= 0 or self.sy <= 0:
            raise ValueError("focal length and pixel pitches must be positive")


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """World pose of the camera: rotation R and camera center T (world mm).

    A world point Q maps to camera coordinates R (Q - T).
    """

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = _as_vec(self.t, 3)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err >= _ORTHO_EPS:
            raise ValueError(f"rotation is not orthonormal (|R'R - I| = {err:.3g})")
        if abs(np.linalg.det(r) - 1.0) >= _ORTHO_EPS:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)


@dataclass(frozen=True, eq=False)
class PlaneFrame:
    """A plane parameterized by two axes and an origin, all in world mm."""

    origin: np.ndarray
    axis_a: np.ndarray
    axis_b: np.ndarray

    def __post_init__(self):
        o = _as_vec(self.origin, 3)
        a = _as_vec(self.axis_a, 3)
        b = _as_vec(self.axis_b, 3)
        if np.linalg.norm(np.cross(a, b)) == 0.0:
            raise ValueError("plane axes must be linearly independent")
        for v in (o, a, b):
            v.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "axis_a", a)
        object.__setattr__(self, "axis_b", b)


class Homography:
    """Invertible 3x3 projective map, defined up to scale."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise SingularMatrix("homography matrix is singular")
        m.setflags(write=False)
        self.m = m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def normalized(self) -> np.ndarray:
        """Matrix scaled to unit Frobenius norm with a canonical sign.

        The sign is fixed by making the largest-magnitude entry positive,
        which lets two homographies be compared entrywise even though each
        is only defined up to a nonzero scale.
        """
        m = self.m / np.linalg.norm(self.m)
        flat = np.abs(m).argmax()
        if m.flat[flat] < 0:
            m = -m
        return m

    def almost_equal(self, other: "Homography", tol: float = 1e-9) -> bool:
        return bool(np.abs(self.normalized() - other.normalized()).max() <= tol)

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"


def dehomogenize(p: HPoint2) -> tuple[float, float]:
    """Return the Cartesian (x, y) of a homogeneous point.

    Raises PointAtInfinity when |w| <= 1e-12.
    """
    if abs(p.w) <= _W_EPS:
        raise PointAtInfinity(f"w = {p.w!r}")
    return (p.x / p.w, p.y / p.w)


def intrinsic_matrix(c: CameraIntrinsics) -> np.ndarray:
    """Combined K*C matrix: [[f/sx, 0, ox], [0, f/sy, oy], [0, 0, 1]]."""
    return np.array(
        [
            [c.f / c.sx, 0.0, c.ox],
            [0.0, c.f / c.sy, c.oy],
            [0.0, 0.0, 1.0],
        ]
    )


def extrinsic_matrix(e: CameraExtrinsics) -> np.ndarray:
    """The 3x4 matrix [R | -R T]."""
    return np.hstack([e.r, (-e.r @ e.t).reshape(3, 1)])


def project_point(intr: CameraIntrinsics, extr: CameraExtrinsics, q: HPoint3) -> HPoint2:
    """Project a world point through the pinhole camera.

    The point is normalized first (w != 0 required), transformed into
    camera coordinates, rejected if its depth is not strictly positive,
    then pushed through the intrinsic matrix.
    """
    if abs(q.w) <= _W_EPS:
        raise PointAtInfinity("cannot project a point at infinity")
    world = np.array([q.x, q.y, q.z]) / q.w
    cam = extr.r @ (world - extr.t)
    if cam[2] <= 0.0:
        raise BehindCamera(f"camera depth {cam[2]:.6g} <= 0")
    img = intrinsic_matrix(intr) @ cam
    return HPoint2(img[0], img[1], img[2])


def plane_matrix(pf: PlaneFrame) -> np.ndarray:
    """The 4x3 frame matrix with axis columns, origin column, bottom row (0,0,1)."""
    u = np.zeros((4, 3))
    u[:3, 0] = pf.axis_a
    u[:3, 1] = pf.axis_b
    u[:3, 2] = pf.origin
    u[3, 2] = 1.0
    return u


def plane_to_world(pf: PlaneFrame, p: HPoint2) -> HPoint3:
    """Lift plane coordinates (x', y', w) to a homogeneous world point."""
    q = plane_matrix(pf) @ p.to_array()
    return HPoint3(q[0], q[1], q[2], q[3])


def plane_to_image_homography(
    intr: CameraIntrinsics, extr: CameraExtrinsics, pf: PlaneFrame
) -> Homography:
    """Compose intrinsics, extrinsics and the plane frame into one 3x3 map.

    Raises DegenerateConfiguration when the product is singular, e.g. when
    the plane passes through the camera center.
    """
    m = intrinsic_matrix(intr) @ extrinsic_matrix(extr) @ plane_matrix(pf)
    if abs(np.linalg.det(m)) <= 1e-12:
        raise DegenerateConfiguration("plane maps to a degenerate image conic")
    return Homography(m)


def compose_between_views(h1: Homography, h2: Homography) -> Homography:
    """Homography taking view-2 pixels to view-1 pixels: H1 * H2^-1."""
    try:
        return Homography(h1.m @ np.linalg.inv(h2.m))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by type
        raise SingularMatrix(str(exc)) from exc


def apply(h: Homography, x: float, y: float) -> tuple[float, float]:
    """Map a single pixel through the homography and dehomogenize."""
    v = h.m @ np.array([x, y, 1.0])
    return dehomogenize(HPoint2(v[0], v[1], v[2]))


def apply_many(h: Homography, pts) -> np.ndarray:
    """Vectorized apply() over an (n, 2) array of points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    ones = np.ones((pts.shape[0], 1))
    v = np.hstack([pts, ones]) @ h.m.T
    w = v[:, 2]
    if np.any(np.abs(w) <= _W_EPS):
        raise PointAtInfinity("some points map to the line at infinity")
    return v[:, :2] / w[:, None]
