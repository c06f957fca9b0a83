"""Geometric features from registered depth: HVA channels, Sobel gradients,
hair direction classes."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from tofhair.errors import InvalidArgumentError, UnfillableRegionError
from tofhair.noisemap import Region, RegionMask, VarianceMap
from tofhair.tofsim import DepthFrame

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals) or self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError(f"degenerate intrinsics {vals}")

    @classmethod
    def centered(cls, width: int, height: int, focal: float = 500.0) -> "Intrinsics":
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0)

    def backproject(self, u, v, z):
        return (u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z


@dataclass(frozen=True)
class CameraModel:
    """Depth and RGB pinhole cameras, the depth->RGB rigid transform, the
    stereo pair used for disparity, and the gravity direction (camera frame)."""

    rgb: Intrinsics
    depth: Intrinsics
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    baseline: float = 0.05
    focal: float = 500.0
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0, 0.0]))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float)
        grav = np.asarray(self.gravity, dtype=float)
        if rot.shape != (3, 3) or np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise InvalidArgumentError("rotation must be a 3x3 orthonormal matrix")
        if trans.shape != (3,):
            raise InvalidArgumentError("translation must be a 3-vector")
        if grav.shape != (3,) or abs(np.linalg.norm(grav) - 1.0) > 1e-9:
            raise InvalidArgumentError("gravity must be a unit 3-vector")
        if not (self.baseline > 0 and self.focal > 0):
            raise InvalidArgumentError("baseline and focal must be > 0")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "gravity", grav)

    @classmethod
    def synthetic(cls, width: int, height: int, focal: float = 500.0, **kwargs) -> "CameraModel":
        intr = Intrinsics.centered(width, height, focal)
        kwargs.setdefault("focal", focal)
        return cls(rgb=intr, depth=intr, **kwargs)


@dataclass
class HvaChannels:
    h: np.ndarray
    v: np.ndarray
    a: np.ndarray

    @property
    def shape(self):
        return self.h.shape

    def stack(self) -> np.ndarray:
        return np.stack([self.h, self.v, self.a], axis=-1)


@dataclass
class GradientPair:
    gx: np.ndarray
    gy: np.ndarray


class DirectionClass(IntEnum):
    HORIZONTAL = 0
    LONGITUDINAL = 1
    LEFTWARD = 2
    RIGHTWARD = 3


def register_depth_to_rgb(depth: DepthFrame, cam: CameraModel, target_size: tuple[int, int]) -> DepthFrame:
    """Forward-project every valid depth pixel into the RGB grid.

    ``target_size`` is ``(height, width)``. Collisions keep the nearest point;
    target pixels nobody lands on are holes.
    """
    th, tw = target_size
    if th <= 0 or tw <= 0:
        raise InvalidArgumentError("target_size must be positive")
    v, u = np.nonzero(depth.valid)
    z = depth.depth[v, u]
    pts = np.stack(cam.depth.backproject(u.astype(float), v.astype(float), z))
    pts = cam.rotation @ pts + cam.translation[:, None]
    x, y, zr = pts
    front = zr > 0
    x, y, zr = x[front], y[front], zr[front]
    uu = np.rint(cam.rgb.fx * x / zr + cam.rgb.cx).astype(np.int64)
    vv = np.rint(cam.rgb.fy * y / zr + cam.rgb.cy).astype(np.int64)
    inside = (uu >= 0) & (uu < tw) & (vv >= 0) & (vv < th)
    flat = np.full(th * tw, np.inf)
    np.minimum.at(flat, vv[inside] * tw + uu[inside], zr[inside])
    out = flat.reshape(th, tw)
    valid = np.isfinite(out)
    return DepthFrame(np.where(valid, out, 0.0), valid)


def fill_holes(depth: DepthFrame, mask: RegionMask, sigma: float = 1.5) -> DepthFrame:
    """Fill holes inside labeled (non-background) regions.

    Holes are visited in increasing distance to the nearest valid pixel of the
    same label, ties in row-major order. Each takes the Gaussian-weighted mean
    of valid same-label pixels inside the smallest square window (radius 1, 2,
    ...) that contains any; filled pixels count as valid for later holes.
    Background holes stay invalid.
    """
    if mask.shape != depth.shape:
        raise InvalidArgumentError("mask and depth differ in shape")
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be > 0")
    labels = mask.labels
    values = depth.depth.copy()
    valid = depth.valid.copy()
    h, w = depth.shape

    empty = []
    order = []
    for lab in np.unique(labels):
        if lab == Region.BACKGROUND:
            continue
        region = labels == lab
        holes = region & ~valid
        if not holes.any():
            continue
        seeds = region & valid
        if not seeds.any():
            empty.append(int(lab))
            continue
        dist = ndimage.distance_transform_edt(~seeds)
        ys, xs = np.nonzero(holes)
        order.extend(zip(dist[ys, xs], ys * w + xs))
    if empty:
        raise UnfillableRegionError(empty)

    heapq.heapify(order)
    max_radius = max(h, w)
    while order:
        _, idx = heapq.heappop(order)
        y, x = divmod(int(idx), w)
        lab = labels[y, x]
        for r in range(1, max_radius + 1):
            y0, y1 = max(0, y - r), min(h, y + r + 1)
            x0, x1 = max(0, x - r), min(w, x + r + 1)
            use = valid[y0:y1, x0:x1] & (labels[y0:y1, x0:x1] == lab)
            if use.any():
                yy, xx = np.mgrid[y0:y1, x0:x1]
                wts = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2.0 * sigma * sigma))[use]
                vals = values[y0:y1, x0:x1][use]
                # offset from a sample keeps constant neighborhoods exact
                values[y, x] = float(vals[0] + np.dot(wts, vals - vals[0]) / wts.sum())
                valid[y, x] = True
                break
    return DepthFrame(np.where(valid, values, 0.0), valid)


def horizontal_disparity(depth: DepthFrame, cam: CameraModel) -> np.ndarray:
    """baseline * focal / depth in pixels; NaN at holes and zero depth."""
    ok = depth.valid & (depth.depth > 0)
    out = np.full(depth.shape, np.nan)
    out[ok] = cam.baseline * cam.focal / depth.depth[ok]
    return out


def _point_cloud(depth: DepthFrame, intr: Intrinsics) -> np.ndarray:
    v, u = np.mgrid[0 : depth.height, 0 : depth.width].astype(float)
    return np.stack(intr.backproject(u, v, depth.depth), axis=-1)


def surface_normals(depth: DepthFrame, intr: Intrinsics) -> np.ndarray:
    """Unit normals facing the camera from central-difference tangents; NaN
    where a 4-neighbor is missing."""
    pts = _point_cloud(depth, intr)
    h, w = depth.shape
    normals = np.full((h, w, 3), np.nan)
    if h < 3 or w < 3:
        return normals
    ok = depth.valid & (depth.depth > 0)
    inner = ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1]
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    inner &= norm[..., 0] > 0
    n = n / np.where(norm > 0, norm, 1.0)
    # flip toward the camera at the origin
    facing = np.einsum("ijk,ijk->ij", n, pts[1:-1, 1:-1])
    n = np.where((facing > 0)[..., None], -n, n)
    normals[1:-1, 1:-1] = np.where(inner[..., None], n, np.nan)
    return normals


def normal_gravity_angle(depth: DepthFrame, cam: CameraModel) -> np.ndarray:
    """Angle in [0, pi] between camera-facing surface normals and the gravity
    vector. Uses the RGB intrinsics since the depth is expected registered."""
    n = surface_normals(depth, cam.rgb)
    cos = np.clip(n @ cam.gravity, -1.0, 1.0)
    return np.arccos(cos)


def build_hva(depth: DepthFrame, cam: CameraModel, vmap: VarianceMap) -> HvaChannels:
    if vmap.shape != depth.shape:
        raise InvalidArgumentError(f"variance map {vmap.shape} does not match depth {depth.shape}")
    v = np.where(vmap.valid, vmap.values, np.nan)
    return HvaChannels(horizontal_disparity(depth, cam), v, normal_gravity_angle(depth, cam))


def to_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] >= 3:
        return img[..., 0] * LUMA_WEIGHTS[0] + img[..., 1] * LUMA_WEIGHTS[1] + img[..., 2] * LUMA_WEIGHTS[2]
    raise InvalidArgumentError(f"unsupported image shape {img.shape}")


def sobel_gradients(image: np.ndarray) -> GradientPair:
    gray = to_gray(image)
    if gray.size == 0:
        raise InvalidArgumentError("empty image")
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return GradientPair(gx, gy)


def quantize_direction(angle: float) -> DirectionClass:
    """Map an in-image strand orientation in degrees to one of four classes.

    The longitudinal band [80, 110] wins over the rightward band where they
    overlap.
    """
    if not (0.0 <= angle < 180.0):
        raise InvalidArgumentError(f"angle must lie in [0, 180), got {angle}")
    if angle < 22.5 or angle >= 157.5:
        return DirectionClass.HORIZONTAL
    if 80.0 <= angle <= 110.0:
        return DirectionClass.LONGITUDINAL
    if angle < 80.0:
        return DirectionClass.LEFTWARD
    return DirectionClass.RIGHTWARD


def direction_map(grad: GradientPair, region: np.ndarray, min_magnitude: float = 1e-6) -> np.ndarray:
    """Per-pixel direction class of the strand orientation (perpendicular to
    the intensity gradient) inside ``region``; 255 elsewhere or where the
    gradient vanishes. Angles are measured counter-clockwise with image y up."""
    mag = np.hypot(grad.gx, grad.gy)
    # image rows grow downward, so negate gy for a y-up angle
    strand = (np.degrees(np.arctan2(-grad.gy, grad.gx)) + 90.0) % 180.0
    # tiny negative angles wrap to exactly 180.0 in floating point
    strand[strand >= 180.0] = 0.0
    out = np.full(grad.gx.shape, 255, dtype=np.uint8)
    sel = region & (mag > min_magnitude)
    out[sel] = [int(quantize_direction(a)) for a in strand[sel]]
    return out
