"""Synthetic heads, unaries and CRF test corpora.

The real capture dataset is not available, so everything downstream of the
simulator runs on analytic heads: a smooth face and neck in front of a smooth
background plane, framed by a rough hair shell split into top, back and side
parts with a per-part strand orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tofhair.crf import MERGED_LABELS, SIX_CLASS_LABELS, FeatureField, Instance, UnaryField
from tofhair.errors import InvalidArgumentError
from tofhair.geomfeat import CameraModel, DirectionClass, Intrinsics, build_hva
from tofhair.noisemap import Region, multiscale_variance
from tofhair.tofsim import ROUGH, SMOOTH, SceneSpec, ToFConfig, noise_std_for_depth, simulate_frame

# strand orientation per hair part, degrees counter-clockwise from image x
PART_STRAND_ANGLE = {
    Region.HAIR_TOP: 10.0,
    Region.HAIR_BACK: 95.0,
    Region.HAIR_LEFT: 50.0,
    Region.HAIR_RIGHT: 130.0,
}
PART_DIRECTION = {
    Region.HAIR_TOP: DirectionClass.HORIZONTAL,
    Region.HAIR_BACK: DirectionClass.LONGITUDINAL,
    Region.HAIR_LEFT: DirectionClass.LEFTWARD,
    Region.HAIR_RIGHT: DirectionClass.RIGHTWARD,
}

SKIN = np.array([205.0, 160.0, 135.0])
HAIR = np.array([48.0, 40.0, 34.0])
BACKDROP = np.array([52.0, 46.0, 40.0])
HAIR_THICKNESS = 0.01


@dataclass
class HeadConfig:
    view: str = "front"
    head_extent: float = 0.2
    face_distance: float = 1.0
    background_distance: float = 1.6
    scatter_std: float = 0.5e-9
    path_forks: int = 4
    noise_depth_std: float = 1e-3
    stripe_period: float = 0.12


@dataclass
class HeadScene:
    labels: np.ndarray  # Region ids
    distance: np.ndarray
    rgb: np.ndarray  # uint8 (H, W, 3)
    direction: np.ndarray  # DirectionClass ids, 255 outside hair

    def scene_spec(self, cfg: ToFConfig, head: HeadConfig, seed: int) -> SceneSpec:
        hair = np.isin(self.labels, [int(r) for r in PART_STRAND_ANGLE])
        return SceneSpec(
            distance=self.distance,
            material=np.where(hair, ROUGH, SMOOTH),
            scatter_std=np.where(hair, head.scatter_std, 0.0),
            path_forks=np.where(hair, head.path_forks, 1),
            noise_std=noise_std_for_depth(cfg, head.noise_depth_std),
            seed=seed,
        )


def _normalized_grid(height: int, width: int, intr: Intrinsics, extent: float):
    v, u = np.mgrid[0:height, 0:width].astype(float)
    return (u - intr.cx) / intr.fx / extent, (v - intr.cy) / intr.fy / extent


def render_head(height: int, width: int, intr: Intrinsics, head: HeadConfig = HeadConfig()) -> HeadScene:
    """Sample the analytic head on a camera grid.

    Coordinates are ray slopes divided by ``head_extent``, so two cameras with
    the same center but different resolutions see the same head.
    """
    u, v = _normalized_grid(height, width, intr, head.head_extent)
    shell = (u / 0.62) ** 2 + ((v - 0.05) / 0.8) ** 2
    face_e = (u / 0.42) ** 2 + ((v - 0.25) / 0.55) ** 2
    neck = (np.abs(u) < 0.25) & (v > 0.55)

    in_shell = (shell <= 1.0) & (v < 0.55)
    face = (face_e <= 1.0) | neck
    labels = np.full((height, width), int(Region.BACKGROUND), dtype=np.uint8)
    if head.view == "back":
        hair = in_shell | (face_e <= 1.0)
        labels[neck] = Region.FACE
    else:
        hair = in_shell & ~face
        labels[face] = Region.FACE
    part = np.where(
        v < -0.35,
        int(Region.HAIR_TOP),
        np.where(u < -0.3, int(Region.HAIR_LEFT), np.where(u > 0.3, int(Region.HAIR_RIGHT), int(Region.HAIR_BACK))),
    )
    labels[hair] = part[hair]

    # skin lies on one head ellipsoid, hair is a thin layer on top of it
    bulge = np.sqrt(np.clip(1.0 - shell, 0.0, None))
    fd = head.face_distance
    skin = fd + 0.03 - 0.09 * bulge
    throat = fd + 0.04 - 0.02 * np.sqrt(np.clip(1.0 - (u / 0.25) ** 2, 0.0, None))
    distance = np.full((height, width), head.background_distance)
    distance = np.where(face, np.where(neck & ~in_shell, throat, skin), distance)
    distance = np.where(hair, skin - HAIR_THICKNESS, distance)

    rgb = np.empty((height, width, 3))
    rgb[:] = BACKDROP
    shade = 0.85 + 0.15 * np.sqrt(np.clip(1.0 - face_e, 0.0, None))
    rgb[face] = SKIN * shade[face][:, None]
    direction = np.full((height, width), 255, dtype=np.uint8)
    for region, angle in PART_STRAND_ANGLE.items():
        sel = labels == region
        if not sel.any():
            continue
        t = np.radians(angle)
        # stripes run along the strand: phase varies across it (y up)
        across = -u * np.sin(t) - v * np.cos(t)
        stripe = np.cos(2 * np.pi * across / head.stripe_period)
        rgb[sel] = HAIR + 14.0 * stripe[sel][:, None]
        direction[sel] = PART_DIRECTION[region]
    return HeadScene(labels, distance, np.clip(np.rint(rgb), 0, 255).astype(np.uint8), direction)


def synthetic_unary(
    truth: np.ndarray,
    num_labels: int,
    rng: np.random.Generator,
    strength: float = 1.5,
    noise: float = 0.5,
    flip_rate: float = 0.05,
):
    """Class probabilities (L, H, W) that mostly favor ``truth``.

    Logits are ``strength`` on the true label plus Gaussian noise; then a
    ``flip_rate`` fraction of pixels get a random wrong label swapped into the
    argmax position. Returns ``(probs, flipped_mask)``.
    """
    h, w = truth.shape
    logits = rng.normal(0.0, noise, size=(num_labels, h, w))
    rows, cols = np.mgrid[0:h, 0:w]
    logits[truth, rows, cols] += strength
    probs = np.exp(logits - logits.max(axis=0))
    probs /= probs.sum(axis=0)

    n_flip = int(round(flip_rate * h * w))
    flat = rng.choice(h * w, size=n_flip, replace=False)
    flipped = np.zeros(h * w, dtype=bool)
    flipped[flat] = True
    flipped = flipped.reshape(h, w)
    for idx in np.sort(flat):
        y, x = divmod(int(idx), w)
        other = (truth[y, x] + 1 + rng.integers(num_labels - 1)) % num_labels
        top = int(np.argmax(probs[:, y, x]))
        probs[[top, other], y, x] = probs[[other, top], y, x]
    return probs, flipped


def merge_truth(labels: np.ndarray) -> np.ndarray:
    """Six-class region ids to (background, face, hair) indices."""
    out = np.zeros(labels.shape, dtype=np.int64)
    out[labels == Region.FACE] = 1
    out[labels >= Region.HAIR_TOP] = 2
    return out


@dataclass
class FlipInstance:
    instance: Instance
    flipped: np.ndarray


def two_region_instance(seed: int, size: int = 16, flip_rate: float = 0.05) -> FlipInstance:
    """Two half-planes of clearly different color split by a random line
    through the middle third, with a fraction of pixels whose unary argmax is
    flipped to the wrong label."""
    rng = np.random.default_rng([seed, 1601])
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    offset = rng.uniform(-size / 6.0, size / 6.0)
    c = (size - 1) / 2.0
    side = (xx - c) * np.cos(angle) + (yy - c) * np.sin(angle) - offset
    truth = (side > 0).astype(np.int64)
    rgb = np.where(truth[..., None] == 1, HAIR, SKIN) + rng.normal(0.0, 3.0, (size, size, 3))
    p = np.where(truth == 1, 0.8, 0.2)
    probs = np.stack([1.0 - p, p])
    n_flip = int(round(flip_rate * size * size))
    flat = rng.choice(size * size, size=n_flip, replace=False)
    flipped = np.zeros(size * size, dtype=bool)
    flipped[flat] = True
    flipped = flipped.reshape(size, size)
    probs[:, flipped] = probs[::-1][:, flipped]
    unary = UnaryField.from_probabilities(("background", "hair"), probs)
    return FlipInstance(Instance(unary, FeatureField.from_image(rgb), truth), flipped)


def camouflage_instance(
    seed: int,
    size: int = 32,
    cfg: ToFConfig | None = None,
    leak: int = 2,
    extra: str = "hva",
):
    """Hair colored exactly like the backdrop (the hard case for color-only
    refinement). The unary leaks hair into a ``leak``-pixel band of backdrop
    around the hair. Returns ``(instance_with_extra, instance_without_extra)``
    sharing unary and ground truth.
    """
    from scipy import ndimage

    cfg = cfg or ToFConfig()
    rng = np.random.default_rng([seed, 2718])
    intr = Intrinsics.centered(size, size, focal=size / 0.46)
    head = HeadConfig(head_extent=0.2)
    scene = render_head(size, size, intr, head)
    rgb = scene.rgb.astype(float)
    hair = scene.labels >= Region.HAIR_TOP
    rgb[hair] = BACKDROP
    rgb += rng.normal(0.0, 2.0, rgb.shape)

    truth = merge_truth(scene.labels)
    probs, _ = synthetic_unary(truth, 3, rng, strength=1.5, noise=0.4, flip_rate=0.0)
    band = ndimage.binary_dilation(hair, iterations=leak) & (truth == 0)
    probs[:, band] = np.array([0.3, 0.05, 0.65])[:, None]
    unary = UnaryField.from_probabilities(MERGED_LABELS, probs)

    _, depth = simulate_frame(scene.scene_spec(cfg, head, seed=seed), cfg)
    cam = CameraModel(rgb=intr, depth=intr, focal=intr.fx)
    channels = extra_channels(depth, cam, extra)
    with_extra = Instance(unary, FeatureField.from_image(rgb, channels), truth)
    without = Instance(unary, FeatureField.from_image(rgb), truth)
    return with_extra, without


EXTRA_FEATURES = ("tof", "disparity", "variance", "normal", "hva")


def extra_channels(depth, cam: CameraModel, kind: str) -> np.ndarray | None:
    """Extra CRF feature planes (H, W, C) for one of the five feature choices."""
    if kind in (None, "none"):
        return None
    if kind not in EXTRA_FEATURES:
        raise InvalidArgumentError(f"unknown extra feature {kind!r}")
    if kind == "tof":
        return np.where(depth.valid, depth.depth, np.nan)[..., None]
    hva = build_hva(depth, cam, multiscale_variance(depth))
    if kind == "disparity":
        return hva.h[..., None]
    if kind == "variance":
        return hva.v[..., None]
    if kind == "normal":
        return hva.a[..., None]
    return hva.stack()


__all__ = [
    "HeadConfig",
    "HeadScene",
    "render_head",
    "synthetic_unary",
    "merge_truth",
    "two_region_instance",
    "camouflage_instance",
    "extra_channels",
    "SIX_CLASS_LABELS",
]
