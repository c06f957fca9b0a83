"""Fully connected CRF with an extra-feature appearance kernel.

Pairwise potential between every pair of pixels (Potts compatibility):

    k(f_i, f_j) = w1 * exp(-|p_i-p_j|^2 / 2ta^2 - |I_i-I_j|^2 / 2tb^2 - |C_i-C_j|^2 / 2tg^2)
                + w2 * exp(-|p_i-p_j|^2 / 2td^2)

where p is pixel position, I the RGB intensity and C an optional extra
feature vector (ToF depth, disparity, variance, normal angle or all of HVA).
Inference is synchronous mean field with exact O(N^2) message passing, plus
a windowed approximation that drops pairs farther apart than a few spatial
bandwidths.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from tofhair.errors import InvalidArgumentError, SizeCapError
from tofhair.metrics import iou

PROB_FLOOR = 1e-12
DEFAULT_ITERATIONS = 10
ENERGY_SIZE_CAP = 64 * 64
EXACT_MAX_PIXELS = 128 * 128
BLOCK = 1024

SIX_CLASS_LABELS = ("background", "face", "hair_top", "hair_back", "hair_left", "hair_right")
MERGED_LABELS = ("background", "face", "hair")
HAIR_PARTS = ("hair_top", "hair_back", "hair_left", "hair_right")


@dataclass(frozen=True)
class CrfParams:
    w1: float = 1.0
    w2: float = 1.0
    theta_alpha: float = 25.0
    theta_beta: float = 25.0
    theta_gamma: float = 35.0
    theta_delta: float = 45.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise InvalidArgumentError("kernel weights must be >= 0")
        for name in ("theta_alpha", "theta_beta", "theta_gamma", "theta_delta"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be > 0")

    def as_dict(self) -> dict:
        return asdict(self)


# Bandwidths reported with the experiments; the refinement section instead
# fixes w2 and theta_delta to 1.0. Both are shipped, neither is preferred.
PRESET_EXPERIMENTS = CrfParams(theta_alpha=25.0, theta_beta=25.0, theta_gamma=35.0, theta_delta=45.0)
PRESET_UNIT_SMOOTHNESS = CrfParams(w2=1.0, theta_delta=1.0)
PRESETS = {"experiments": PRESET_EXPERIMENTS, "unit-smoothness": PRESET_UNIT_SMOOTHNESS}


@dataclass
class UnaryField:
    """Per-label unary potentials -ln P, shape (L, H, W)."""

    labels: tuple
    values: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != len(self.labels):
            raise InvalidArgumentError("unary values must have shape (len(labels), H, W)")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("non-finite unary potential")

    @classmethod
    def from_probabilities(cls, labels: Sequence[str], probs, tol: float = 1e-6) -> "UnaryField":
        p = np.asarray(probs, dtype=float)
        if p.ndim != 3 or p.shape[0] != len(labels):
            raise InvalidArgumentError("probabilities must have shape (len(labels), H, W)")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidArgumentError("probabilities must be finite and >= 0")
        if np.max(np.abs(p.sum(axis=0) - 1.0)) > tol:
            raise InvalidArgumentError("per-pixel probabilities must sum to 1")
        return cls(tuple(labels), -np.log(np.maximum(p, PROB_FLOOR)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def probabilities(self) -> np.ndarray:
        """Softmax of the negated potentials (renormalizes away the floor)."""
        return _softmax(-self.values)

    def argmax(self) -> np.ndarray:
        return map_labeling(self.probabilities())


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


class PixelFeature(NamedTuple):
    position: np.ndarray
    intensity: np.ndarray
    extra: np.ndarray


@dataclass
class FeatureField:
    """Flattened per-pixel features in row-major pixel order."""

    height: int
    width: int
    positions: np.ndarray
    intensity: np.ndarray
    extra: np.ndarray

    def __post_init__(self):
        n = self.height * self.width
        self.positions = np.asarray(self.positions, dtype=float).reshape(n, 2)
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(n, -1)
        self.extra = np.asarray(self.extra, dtype=float).reshape(n, -1)
        for arr in (self.positions, self.intensity, self.extra):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError("features must be finite")

    @classmethod
    def from_image(cls, rgb: np.ndarray, extra: np.ndarray | None = None, normalize: bool = True) -> "FeatureField":
        """Build features from an (H, W, 3) image and optional (H, W[, C]) extra
        channels. Extra channels are z-scored per image when ``normalize``;
        NaNs (holes) are set to the channel mean afterwards."""
        rgb = np.asarray(rgb, dtype=float)
        if rgb.ndim == 2:
            rgb = rgb[..., None]
        h, w = rgb.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w].astype(float)
        pos = np.stack([xx, yy], axis=-1)
        if extra is None:
            ex = np.zeros((h, w, 0))
        else:
            ex = np.asarray(extra, dtype=float)
            if ex.ndim == 2:
                ex = ex[..., None]
            if ex.shape[:2] != (h, w):
                raise InvalidArgumentError("extra features do not match the image grid")
            ex = _standardize(ex) if normalize else np.where(np.isfinite(ex), ex, 0.0)
        return cls(h, w, pos, rgb, ex)

    @property
    def size(self) -> int:
        return self.height * self.width

    def pixel(self, i: int) -> PixelFeature:
        return PixelFeature(self.positions[i], self.intensity[i], self.extra[i])


def _standardize(ex: np.ndarray) -> np.ndarray:
    out = np.empty_like(ex)
    for c in range(ex.shape[-1]):
        ch = ex[..., c]
        ok = np.isfinite(ch)
        if not ok.any():
            out[..., c] = 0.0
            continue
        mu = ch[ok].mean()
        sd = ch[ok].std()
        z = (ch - mu) / sd if sd > 0 else ch - mu
        out[..., c] = np.where(ok, z, 0.0)
    return out


def pairwise_kernel(fi: PixelFeature, fj: PixelFeature, params: CrfParams) -> float:
    dp = float(np.sum((np.asarray(fi.position) - np.asarray(fj.position)) ** 2))
    di = float(np.sum((np.asarray(fi.intensity) - np.asarray(fj.intensity)) ** 2))
    dc = float(np.sum((np.asarray(fi.extra) - np.asarray(fj.extra)) ** 2))
    appearance = math.exp(
        -dp / (2 * params.theta_alpha**2) - di / (2 * params.theta_beta**2) - dc / (2 * params.theta_gamma**2)
    )
    smoothness = math.exp(-dp / (2 * params.theta_delta**2))
    return params.w1 * appearance + params.w2 * smoothness


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kernel_block(feats: FeatureField, params: CrfParams, rows: slice, cols: slice = slice(None)) -> np.ndarray:
    """k(f_i, f_j) for i in ``rows`` and j in ``cols`` (self pairs included)."""
    dp = _sqdist(feats.positions[rows], feats.positions[cols])
    k = np.zeros(dp.shape)
    if params.w1 > 0:
        di = _sqdist(feats.intensity[rows], feats.intensity[cols])
        dc = _sqdist(feats.extra[rows], feats.extra[cols])
        k += params.w1 * np.exp(
            -dp / (2 * params.theta_alpha**2) - di / (2 * params.theta_beta**2) - dc / (2 * params.theta_gamma**2)
        )
    if params.w2 > 0:
        k += params.w2 * np.exp(-dp / (2 * params.theta_delta**2))
    return k


def _check_shapes(unary: UnaryField, feats: FeatureField):
    if unary.shape != (feats.height, feats.width):
        raise InvalidArgumentError(f"unary grid {unary.shape} does not match features {(feats.height, feats.width)}")


def gibbs_energy(
    labeling: np.ndarray,
    unary: UnaryField,
    feats: FeatureField,
    params: CrfParams,
    size_cap: int = ENERGY_SIZE_CAP,
) -> float:
    """Exact energy sum_i U_i(x_i) + sum_{i<j} [x_i != x_j] k(f_i, f_j)."""
    _check_shapes(unary, feats)
    x = np.asarray(labeling).ravel()
    n = feats.size
    if x.size != n:
        raise InvalidArgumentError("labeling does not match the grid")
    if n > size_cap:
        raise SizeCapError(f"{n} pixels exceeds the exact-energy cap of {size_cap}")
    if np.any((x < 0) | (x >= unary.num_labels)):
        raise InvalidArgumentError("labeling holds an unknown label index")
    u = unary.values.reshape(unary.num_labels, n)
    energy = float(u[x, np.arange(n)].sum())
    pair = 0.0
    for start in range(0, n, BLOCK):
        rows = slice(start, min(n, start + BLOCK))
        k = kernel_block(feats, params, rows)
        differ = x[rows, None] != x[None, :]
        # count each unordered pair once: j > i
        idx_i = np.arange(rows.start, rows.stop)[:, None]
        upper = np.arange(n)[None, :] > idx_i
        pair += float(np.sum(k[differ & upper]))
    return energy + pair


def _exact_messages(feats: FeatureField, params: CrfParams):
    n = feats.size
    blocks = []
    for start in range(0, n, BLOCK):
        rows = slice(start, min(n, start + BLOCK))
        k = kernel_block(feats, params, rows)
        k[np.arange(rows.stop - rows.start), np.arange(rows.start, rows.stop)] = 0.0
        blocks.append(k)
    kmat = np.vstack(blocks) if blocks else np.zeros((0, 0))

    def apply(q):  # q: (L, N)
        return (kmat @ q.T).T

    return apply


def _window_offsets(params: CrfParams, truncate: float):
    radius = 0
    if params.w1 > 0:
        radius = max(radius, math.ceil(truncate * params.theta_alpha))
    if params.w2 > 0:
        radius = max(radius, math.ceil(truncate * params.theta_delta))
    return [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if (dy, dx) != (0, 0) and dy * dy + dx * dx <= radius * radius
    ]


def _windowed_messages(feats: FeatureField, params: CrfParams, truncate: float):
    h, w = feats.height, feats.width
    inten = feats.intensity.reshape(h, w, -1)
    extra = feats.extra.reshape(h, w, -1)
    terms = []
    for dy, dx in _window_offsets(params, truncate):
        if abs(dy) >= h or abs(dx) >= w:
            continue
        # destination rows/cols and the matching source rows/cols
        ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
        xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
        dp = float(dy * dy + dx * dx)
        k = np.zeros((yd.stop - yd.start, xd.stop - xd.start))
        if params.w1 > 0:
            di = np.sum((inten[yd, xd] - inten[ys, xs]) ** 2, axis=-1)
            dc = np.sum((extra[yd, xd] - extra[ys, xs]) ** 2, axis=-1)
            k += params.w1 * np.exp(
                -dp / (2 * params.theta_alpha**2) - di / (2 * params.theta_beta**2) - dc / (2 * params.theta_gamma**2)
            )
        if params.w2 > 0:
            k += params.w2 * math.exp(-dp / (2 * params.theta_delta**2))
        terms.append((ys, xs, yd, xd, k))

    def apply(q):
        qi = q.reshape(q.shape[0], h, w)
        out = np.zeros_like(qi)
        for ys, xs, yd, xd, k in terms:
            out[:, yd, xd] += k * qi[:, ys, xs]
        return out.reshape(q.shape)

    return apply


def mean_field_infer(
    unary: UnaryField,
    feats: FeatureField,
    params: CrfParams,
    iterations: int = DEFAULT_ITERATIONS,
    method: str = "exact",
    truncate: float = 6.0,
    callback=None,
) -> np.ndarray:
    """Approximate marginals Q of shape (L, H, W) by synchronous mean field.

    ``method="exact"`` sums messages over all pixel pairs. ``method="window"``
    only sums pairs within ``truncate`` times the largest active spatial
    bandwidth, trading a bounded error for O(N * r^2) cost. ``method="auto"``
    picks exact up to 64x64 pixels.
    """
    _check_shapes(unary, feats)
    if iterations < 1:
        raise InvalidArgumentError("iterations must be >= 1")
    if not np.all(np.isfinite(unary.values)):
        raise InvalidArgumentError("non-finite unary potential")
    num_labels = unary.num_labels
    n = feats.size
    u = unary.values.reshape(num_labels, n)
    q = _softmax(-u)
    if params.w1 == 0 and params.w2 == 0:
        if callback is not None:
            for it in range(iterations):
                callback(it, q.reshape(unary.values.shape))
        return q.reshape(unary.values.shape)

    if method == "auto":
        method = "exact" if n <= ENERGY_SIZE_CAP else "window"
    if method == "exact":
        if n > EXACT_MAX_PIXELS:
            raise SizeCapError(f"{n} pixels is too many for exact message passing; use method='window'")
        messages = _exact_messages(feats, params)
    elif method == "window":
        messages = _windowed_messages(feats, params, truncate)
    else:
        raise InvalidArgumentError(f"unknown inference method {method!r}")

    for it in range(iterations):
        msg = messages(q)
        # Potts: penalty for label l is the kernel mass on every other label
        pairwise = msg.sum(axis=0, keepdims=True) - msg
        q = _softmax(-u - pairwise)
        if callback is not None:
            callback(it, q.reshape(unary.values.shape))
    return q.reshape(unary.values.shape)


def map_labeling(q: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the label axis; ties go to the lowest index."""
    return np.argmax(np.asarray(q), axis=0).astype(np.int64)


def merge_hair_labels(six_class: UnaryField) -> UnaryField:
    """Collapse the four hair parts into one ``hair`` label in probability space."""
    if tuple(six_class.labels) != SIX_CLASS_LABELS:
        raise InvalidArgumentError(f"expected labels {SIX_CLASS_LABELS}, got {six_class.labels}")
    p = np.exp(-six_class.values)
    idx = {name: i for i, name in enumerate(six_class.labels)}
    hair = sum(p[idx[name]] for name in HAIR_PARTS)
    merged = np.stack([p[idx["background"]], p[idx["face"]], hair])
    merged /= merged.sum(axis=0, keepdims=True)
    return UnaryField.from_probabilities(MERGED_LABELS, merged)


@dataclass
class Instance:
    unary: UnaryField
    features: FeatureField
    truth: np.ndarray


@dataclass
class GridResult:
    best: CrfParams
    best_score: float
    table: list  # [(CrfParams, score)] in grid enumeration order


SEARCHED = ("w1", "theta_alpha", "theta_beta", "theta_gamma")


def refine(
    instance: Instance, params: CrfParams, iterations: int = DEFAULT_ITERATIONS, method: str = "exact"
) -> np.ndarray:
    q = mean_field_infer(instance.unary, instance.features, params, iterations, method=method)
    return map_labeling(q)


def hair_score(pred: np.ndarray, instance: Instance, hair_label: str = "hair") -> float:
    labels = instance.unary.labels
    if hair_label not in labels:
        raise InvalidArgumentError(f"label {hair_label!r} not in {labels}")
    return iou(pred, instance.truth, labels.index(hair_label))


def grid_search_params(
    instances: Sequence[Instance],
    grid: dict,
    base: CrfParams = CrfParams(),
    iterations: int = DEFAULT_ITERATIONS,
    method: str = "exact",
    jobs: int = 1,
    hair_label: str = "hair",
) -> GridResult:
    """Exhaustive search scoring each combination by mean hair IoU.

    ``grid`` maps parameter names to value lists; w1, theta_alpha, theta_beta
    and theta_gamma are the searched ones, but w2 and theta_delta may be
    listed too. Unlisted parameters come from ``base``. The first combination
    in enumeration order wins ties.
    """
    if not instances:
        raise InvalidArgumentError("no instances to search on")
    if not grid:
        raise InvalidArgumentError("empty grid")
    names = list(grid)
    for name in names:
        if name not in CrfParams.__dataclass_fields__:
            raise InvalidArgumentError(f"unknown parameter {name!r}")
        if len(grid[name]) == 0:
            raise InvalidArgumentError(f"grid dimension {name!r} is empty")
    combos = [replace(base, **dict(zip(names, vals))) for vals in itertools.product(*(grid[n] for n in names))]

    def score(params):
        return float(np.mean([hair_score(refine(inst, params, iterations, method), inst, hair_label) for inst in instances]))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(score, combos))
    else:
        scores = [score(p) for p in combos]
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return GridResult(combos[best], scores[best], list(zip(combos, scores)))
