"""Depth-noise statistics: windowed variance maps, region histograms, fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

import numpy as np
from scipy import ndimage

from tofhair.errors import EmptyRegionError, InvalidArgumentError
from tofhair.tofsim import DepthFrame

MULTISCALE_WINDOWS = (5, 7, 9, 11)
DEFAULT_BINS = 64


class Region(IntEnum):
    BACKGROUND = 0
    FACE = 1
    HAIR_TOP = 2
    HAIR_BACK = 3
    HAIR_LEFT = 4
    HAIR_RIGHT = 5


HAIR_REGIONS = (Region.HAIR_TOP, Region.HAIR_BACK, Region.HAIR_LEFT, Region.HAIR_RIGHT)
REGION_NAMES = {r: r.name.lower() for r in Region}


@dataclass
class RegionMask:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise InvalidArgumentError("region mask must be 2-D")
        if not np.all(np.isin(self.labels, [int(r) for r in Region])):
            raise InvalidArgumentError("region mask holds labels outside 0..5")
        self.labels = self.labels.astype(np.uint8)

    @property
    def shape(self):
        return self.labels.shape

    def select(self, regions: Iterable[int]) -> np.ndarray:
        return np.isin(self.labels, [int(r) for r in regions])


@dataclass
class VarianceMap:
    values: np.ndarray
    valid: np.ndarray
    window_size: int
    gaussian_sigma: float

    @property
    def shape(self):
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class HistogramCurve:
    bin_edges: np.ndarray
    counts: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != len(self.bin_edges) - 1:
            raise InvalidArgumentError("need len(counts) == len(bin_edges) - 1")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise InvalidArgumentError("bin edges must increase")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        return self.counts / self.counts.sum()


@dataclass
class GaussianFit:
    mean: float
    std: float
    residual: float


def default_sigma(window_size: int) -> float:
    return window_size / 4.0


def gaussian_window(window_size: int, sigma: float) -> np.ndarray:
    r = window_size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))


def variance_map(
    depth: DepthFrame,
    window_size: int = 7,
    sigma: float | None = None,
    weighted_mean: bool = True,
) -> VarianceMap:
    """Gaussian-windowed local depth variance.

    At pixel j with window A (clipped at the image border, holes skipped):
    weights are renormalized to sum to one over the valid pixels of A, the
    mean is the weighted mean (plain mean if ``weighted_mean`` is False), and

        v_j = sum_i w_ij (d_i - mean_j)^2 / N(A)

    with N(A) the number of valid pixels in A. Pixels with no valid pixel in
    their window are invalid and hold 0.
    """
    if window_size < 3 or window_size % 2 == 0:
        raise InvalidArgumentError(f"window_size must be odd and >= 3, got {window_size}")
    if sigma is None:
        sigma = default_sigma(window_size)
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be > 0")
    if not depth.valid.any():
        raise EmptyRegionError("depth frame has no valid pixel")

    kernel = gaussian_window(window_size, sigma)
    r = window_size // 2
    h, w = depth.shape
    d = np.pad(np.where(depth.valid, depth.depth, 0.0), r)
    m = np.pad(depth.valid.astype(float), r)
    offsets = [(dy, dx) for dy in range(window_size) for dx in range(window_size)]

    def shifted(a, dy, dx):
        return a[dy : dy + h, dx : dx + w]

    wsum = np.zeros((h, w))
    count = np.zeros((h, w))
    wd = np.zeros((h, w))
    dsum = np.zeros((h, w))
    for dy, dx in offsets:
        mv = shifted(m, dy, dx)
        wsum += kernel[dy, dx] * mv
        count += mv
        wd += kernel[dy, dx] * mv * shifted(d, dy, dx)
        dsum += mv * shifted(d, dy, dx)
    valid = count > 0
    safe_wsum = np.where(valid, wsum, 1.0)
    if weighted_mean:
        mean = wd / safe_wsum
    else:
        mean = dsum / np.where(valid, count, 1.0)

    acc = np.zeros((h, w))
    for dy, dx in offsets:
        dev = shifted(d, dy, dx) - mean
        acc += kernel[dy, dx] * shifted(m, dy, dx) * dev * dev
    values = np.where(valid, acc / safe_wsum / np.where(valid, count, 1.0), 0.0)
    # the weighted mean of equal values can round off by an ulp; pin flat windows to 0
    hi = ndimage.maximum_filter(np.where(depth.valid, depth.depth, -np.inf), size=window_size, mode="constant", cval=-np.inf)
    lo = ndimage.minimum_filter(np.where(depth.valid, depth.depth, np.inf), size=window_size, mode="constant", cval=np.inf)
    values[valid & (hi == lo)] = 0.0
    return VarianceMap(values, valid, window_size, float(sigma))


def multiscale_variance(depth: DepthFrame, sigma: float | None = None) -> VarianceMap:
    """Pixel-wise mean of :func:`variance_map` over 5x5, 7x7, 9x9 and 11x11.

    ``sigma=None`` uses each window's default sigma.
    """
    if depth.height < MULTISCALE_WINDOWS[-1] or depth.width < MULTISCALE_WINDOWS[-1]:
        raise InvalidArgumentError("frame must be at least 11x11 for multiscale variance")
    maps = [variance_map(depth, k, sigma) for k in MULTISCALE_WINDOWS]
    values = sum(vm.values for vm in maps) / len(maps)
    valid = np.logical_and.reduce([vm.valid for vm in maps])
    return VarianceMap(
        np.where(valid, values, 0.0),
        valid,
        window_size=MULTISCALE_WINDOWS[-1],
        gaussian_sigma=float(sigma) if sigma is not None else float("nan"),
    )


def restricted_variance(depth: DepthFrame, mask: RegionMask, groups, sigma: float | None = None) -> VarianceMap:
    """Multiscale variance where each pixel's windows only see pixels of its
    own region group, so a surface's statistics are not mixed with those of
    its neighbours. Pixels outside every group are invalid."""
    if mask.shape != depth.shape:
        raise InvalidArgumentError("mask and depth differ in shape")
    values = np.zeros(depth.shape)
    valid = np.zeros(depth.shape, dtype=bool)
    claimed = np.zeros(depth.shape, dtype=bool)
    for group in groups:
        sel = mask.select(group)
        if np.any(sel & claimed):
            raise InvalidArgumentError("region groups overlap")
        claimed |= sel
        vm = multiscale_variance(DepthFrame(depth.depth, depth.valid & sel), sigma)
        keep = sel & vm.valid
        values[keep] = vm.values[keep]
        valid |= keep
    return VarianceMap(
        values,
        valid,
        window_size=MULTISCALE_WINDOWS[-1],
        gaussian_sigma=float(sigma) if sigma is not None else float("nan"),
    )


def _region_values(vmap: VarianceMap, mask: RegionMask, region) -> np.ndarray:
    if mask.shape != vmap.shape:
        raise InvalidArgumentError("mask and variance map differ in shape")
    sel = mask.select(region) & vmap.valid
    if not sel.any():
        raise EmptyRegionError(f"no valid pixels in region {sorted(int(r) for r in region)}")
    return vmap.values[sel]


def shared_bin_edges(vmap: VarianceMap, mask: RegionMask, regions, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Common edges spanning [0, max] over the union of the given region sets."""
    top = max(float(_region_values(vmap, mask, reg).max()) for reg in regions)
    if top <= 0.0:
        top = 1.0
    return np.linspace(0.0, top, bins + 1)


def region_histogram(
    vmap: VarianceMap,
    mask: RegionMask,
    region,
    bins: int = DEFAULT_BINS,
    value_range: tuple[float, float] | None = None,
    bin_edges: np.ndarray | None = None,
    label: str | None = None,
) -> HistogramCurve:
    if isinstance(region, (int, np.integer)):
        region = (region,)
    region = tuple(region)
    if bin_edges is None and bins < 2:
        raise InvalidArgumentError("bins must be >= 2")
    values = _region_values(vmap, mask, region)
    if bin_edges is None:
        if value_range is None:
            hi = float(values.max())
            value_range = (0.0, hi if hi > 0 else 1.0)
        bin_edges = np.linspace(value_range[0], value_range[1], bins + 1)
    counts, edges = np.histogram(values, bins=np.asarray(bin_edges, dtype=float))
    if label is None:
        label = "+".join(REGION_NAMES.get(Region(int(r)), str(r)) for r in region)
    return HistogramCurve(edges, counts, label)


def fit_gaussian(samples, bins: int = 32) -> GaussianFit:
    """Maximum-likelihood normal fit; residual is the sum of squared errors of
    the fitted density against the samples' density histogram."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise InvalidArgumentError("need at least 2 samples")
    mean = float(x.mean())
    std = float(np.sqrt(np.mean((x - mean) ** 2)))
    if std == 0.0:
        return GaussianFit(mean, 0.0, 0.0)
    density, edges = np.histogram(x, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    pdf = np.exp(-0.5 * ((centers - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
    return GaussianFit(mean, std, float(np.sum((density - pdf) ** 2)))


def separability(a: HistogramCurve, b: HistogramCurve) -> float:
    """Bhattacharyya distance between two histograms on identical bins.

    Returns ``math.inf`` when the histograms share no occupied bin.
    """
    if a.bin_edges.shape != b.bin_edges.shape or not np.array_equal(a.bin_edges, b.bin_edges):
        raise InvalidArgumentError("histograms use different bins")
    if a.total == 0 or b.total == 0:
        raise EmptyRegionError("empty histogram")
    if np.array_equal(a.counts * b.total, b.counts * a.total):
        return 0.0  # same shape; the sum below may miss 1 by an ulp
    bc = float(np.sum(np.sqrt(a.normalized() * b.normalized())))
    if bc <= 0.0:
        return math.inf
    return max(0.0, -math.log(min(bc, 1.0)))
