"""Continuous-wave ToF correlation pixel model.

A pixel integrates the returned irradiance against a zero-mean reference
waveform over one modulation period. Smooth surfaces return light along a
single path; hair scatters it over many paths of different lengths, which is
captured by a temporal point spread function (travel time -> weight).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tofhair.errors import (
    ConfigError,
    DegenerateSignalError,
    InvalidArgumentError,
)

LIGHT_SPEED = 2.99792458e8
MIN_QUADRATURE_STEPS = 64
GAUSSIAN_PSF_NODES = 33
GAUSSIAN_PSF_SPAN = 4.0

SMOOTH = 0
ROUGH = 1

# Reference delays of the four samples, in modulation phase. The correlation
# integral evaluates to cos(w*tau - phi), so sample k is taken at phi = -k*pi/2
# to make atan2(a4 - a2, a1 - a3) return +w*tau.
FOUR_PHASE_DELAYS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


@dataclass(frozen=True)
class ToFConfig:
    modulation_frequency: float = 20e6
    modulated_amplitude: float = 1.0
    dark_current: float = 0.0
    light_speed: float = LIGHT_SPEED
    quadrature_steps: int = 256
    waveform: str = "sine"
    exposure_periods: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.modulation_frequency) and self.modulation_frequency > 0):
            raise ConfigError("modulation_frequency must be positive")
        if self.modulated_amplitude < 0:
            raise ConfigError("modulated_amplitude must be >= 0")
        if self.quadrature_steps < MIN_QUADRATURE_STEPS:
            raise ConfigError(
                f"quadrature_steps must be >= {MIN_QUADRATURE_STEPS}, got {self.quadrature_steps}"
            )
        if self.waveform not in ("sine", "square"):
            raise ConfigError(f"unknown waveform {self.waveform!r}")
        if self.light_speed <= 0 or self.exposure_periods <= 0:
            raise ConfigError("light_speed and exposure_periods must be positive")

    @classmethod
    def from_period(cls, modulation_period: float, **kwargs) -> "ToFConfig":
        if not modulation_period > 0:
            raise ConfigError("modulation_period must be positive")
        return cls(modulation_frequency=1.0 / modulation_period, **kwargs)

    @property
    def modulation_period(self) -> float:
        return 1.0 / self.modulation_frequency

    @property
    def angular_frequency(self) -> float:
        return 2.0 * math.pi * self.modulation_frequency

    @property
    def unambiguous_range(self) -> float:
        return self.light_speed * self.modulation_period / 2.0


@dataclass(frozen=True)
class TemporalPSF:
    """Light returned per travel time.

    ``kind == "discrete"`` uses ``times``/``weights`` directly. ``kind ==
    "gaussian"`` describes a Gaussian bump (``mean``, ``std``, ``total``) that
    is discretized on demand by :meth:`nodes`.
    """

    times: tuple = ()
    weights: tuple = ()
    kind: str = "discrete"
    mean: float = 0.0
    std: float = 0.0
    total: float = 1.0

    def __post_init__(self):
        if self.kind == "discrete":
            if len(self.times) != len(self.weights):
                raise InvalidArgumentError("times and weights differ in length")
            if len(self.times) == 0:
                raise InvalidArgumentError("empty temporal PSF")
            t = np.asarray(self.times, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
                raise InvalidArgumentError("non-finite PSF sample")
            if np.any(t < 0) or np.any(w < 0):
                raise InvalidArgumentError("PSF travel times and weights must be >= 0")
            if not np.any(w > 0):
                raise InvalidArgumentError("PSF needs at least one positive weight")
        elif self.kind == "gaussian":
            if not (self.mean >= 0 and self.std >= 0 and self.total > 0):
                raise InvalidArgumentError("gaussian PSF needs mean >= 0, std >= 0, total > 0")
        else:
            raise InvalidArgumentError(f"unknown PSF kind {self.kind!r}")

    @classmethod
    def discrete(cls, times: Sequence[float], weights: Sequence[float]) -> "TemporalPSF":
        return cls(times=tuple(float(t) for t in times), weights=tuple(float(w) for w in weights))

    @classmethod
    def gaussian(cls, mean: float, std: float, total: float = 1.0) -> "TemporalPSF":
        return cls(kind="gaussian", mean=float(mean), std=float(std), total=float(total))

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "discrete":
            return np.asarray(self.times, dtype=float), np.asarray(self.weights, dtype=float)
        if self.std == 0.0:
            return np.array([self.mean]), np.array([self.total])
        x = np.linspace(-GAUSSIAN_PSF_SPAN, GAUSSIAN_PSF_SPAN, GAUSSIAN_PSF_NODES)
        times = self.mean + self.std * x
        density = np.exp(-0.5 * x * x)
        keep = times >= 0
        times, density = times[keep], density[keep]
        return times, self.total * density / density.sum()

    def __add__(self, other: "TemporalPSF") -> "TemporalPSF":
        t1, w1 = self.nodes()
        t2, w2 = other.nodes()
        return TemporalPSF.discrete(np.concatenate([t1, t2]), np.concatenate([w1, w2]))


@dataclass
class FourPhaseFrame:
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(a) for a in (self.a1, self.a2, self.a3, self.a4)}
        if len(shapes) != 1:
            raise InvalidArgumentError("four-phase planes differ in shape")

    def stack(self) -> np.ndarray:
        return np.stack([self.a1, self.a2, self.a3, self.a4])


@dataclass
class DepthFrame:
    depth: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.ndim != 2:
            raise InvalidArgumentError("depth must be a 2-D grid")
        if self.valid is None:
            self.valid = np.isfinite(self.depth) & (self.depth > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.depth.shape:
            raise InvalidArgumentError("valid mask shape differs from depth shape")
        if np.any(self.depth[self.valid] < 0):
            raise InvalidArgumentError("negative depth at a valid pixel")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class SceneSpec:
    """Per-pixel ground truth for :func:`simulate_frame`.

    ``noise_std`` is the standard deviation of additive Gaussian noise on each
    correlation sample, in correlation units (see :func:`noise_std_for_depth`).
    """

    distance: np.ndarray
    material: np.ndarray = SMOOTH
    scatter_std: np.ndarray = None
    path_forks: np.ndarray = None
    attenuation: np.ndarray = None
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=float)
        shape = self.distance.shape
        if self.distance.ndim != 2:
            raise InvalidArgumentError("distance must be a 2-D grid")
        if not np.all(self.distance > 0):
            raise InvalidArgumentError("scene distances must be > 0")
        self.material = np.broadcast_to(np.asarray(self.material, dtype=np.int8), shape).copy()
        if not np.all(np.isin(self.material, (SMOOTH, ROUGH))):
            raise InvalidArgumentError("material must be SMOOTH (0) or ROUGH (1)")
        self.scatter_std = _plane(self.scatter_std, shape, 0.0)
        if np.any(self.scatter_std < 0):
            raise InvalidArgumentError("scatter_std must be >= 0")
        self.path_forks = _plane(self.path_forks, shape, 1).astype(np.int64)
        if np.any(self.path_forks < 1):
            raise InvalidArgumentError("path_forks must be >= 1")
        self.attenuation = _plane(self.attenuation, shape, 1.0)
        if np.any(self.attenuation < 0):
            raise InvalidArgumentError("attenuation must be >= 0")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.distance.shape


def _plane(value, shape, default) -> np.ndarray:
    if value is None:
        value = default
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def _waveform(cfg: ToFConfig, phase: np.ndarray) -> np.ndarray:
    if cfg.waveform == "sine":
        return np.cos(phase)
    return np.where(np.cos(phase) >= 0.0, 1.0, -1.0)


def _correlation_kernel(cfg: ToFConfig, travel_times, phase_offsets) -> np.ndarray:
    """Integral over one period of g(t + tau) * f(t + phi/w).

    Result has shape ``travel_times.shape + phase_offsets.shape``. Midpoint rule,
    exact for trig polynomials of degree < quadrature_steps.
    """
    period = cfg.modulation_period
    omega = cfg.angular_frequency
    n = cfg.quadrature_steps
    t = (np.arange(n) + 0.5) * (period / n)
    tau = np.asarray(travel_times, dtype=float)
    phi = np.asarray(phase_offsets, dtype=float)
    g = _waveform(cfg, omega * (t + tau[..., None]))
    g = g.reshape(tau.shape + (1,) * phi.ndim + (n,))
    f = _waveform(cfg, omega * t + phi[..., None])
    return (g * f).sum(axis=-1) * (period / n) * cfg.exposure_periods


def _dark_current_term(cfg: ToFConfig, phase_offsets) -> np.ndarray:
    if cfg.dark_current == 0.0:
        return np.zeros(np.shape(phase_offsets))
    n = cfg.quadrature_steps
    period = cfg.modulation_period
    t = (np.arange(n) + 0.5) * (period / n)
    phi = np.asarray(phase_offsets, dtype=float)[..., None]
    f = _waveform(cfg, cfg.angular_frequency * t + phi)
    return cfg.dark_current * f.sum(axis=-1) * (period / n) * cfg.exposure_periods


def _check_finite(**values):
    for name, v in values.items():
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError(f"{name} must be finite")


def correlate_single_path(
    cfg: ToFConfig, attenuation: float, travel_time: float, phase_offset: float
) -> float:
    """Correlation sample of a pixel seeing one light path.

    For sinusoidal waveforms this equals
    ``attenuation * E_m * (T/2) * cos(w*travel_time - phase_offset)``;
    the dark-current contribution integrates to zero against the reference.
    """
    _check_finite(attenuation=attenuation, travel_time=travel_time, phase_offset=phase_offset)
    if travel_time < 0:
        raise InvalidArgumentError("travel_time must be >= 0")
    signal = attenuation * cfg.modulated_amplitude * _correlation_kernel(cfg, travel_time, phase_offset)
    return float(signal + _dark_current_term(cfg, phase_offset))


def correlate_multipath(cfg: ToFConfig, psf: TemporalPSF, phase_offset: float) -> float:
    if psf is None:
        raise InvalidArgumentError("empty PSF")
    _check_finite(phase_offset=phase_offset)
    times, weights = psf.nodes()
    kernel = _correlation_kernel(cfg, times, phase_offset)
    signal = cfg.modulated_amplitude * float(np.dot(weights, kernel))
    return signal + float(_dark_current_term(cfg, phase_offset))


def decode_four_samples(a1, a2, a3, a4):
    """Phase in [0, 2*pi) and amplitude from four samples a quarter period apart.

    Works elementwise on arrays. Raises :class:`DegenerateSignalError` if any
    element has zero amplitude.
    """
    num = np.asarray(a4, dtype=float) - np.asarray(a2, dtype=float)
    den = np.asarray(a1, dtype=float) - np.asarray(a3, dtype=float)
    if np.any((num == 0) & (den == 0)):
        raise DegenerateSignalError("zero-amplitude correlation samples")
    phase = np.mod(np.arctan2(num, den), 2.0 * math.pi)
    # mod can round a tiny negative angle up to exactly 2*pi
    phase = np.where(phase >= 2.0 * math.pi, 0.0, phase)
    amplitude = np.hypot(num, den) / 2.0
    if phase.ndim == 0:
        return float(phase), float(amplitude)
    return phase, amplitude


def phase_to_depth(phase, cfg: ToFConfig):
    phase_arr = np.asarray(phase, dtype=float)
    if np.any(phase_arr < 0) or not np.all(np.isfinite(phase_arr)):
        raise InvalidArgumentError("phase must be finite and >= 0")
    depth = cfg.light_speed * cfg.modulation_period * phase_arr / (4.0 * math.pi)
    return float(depth) if depth.ndim == 0 else depth


def noise_std_for_depth(cfg: ToFConfig, depth_std: float, attenuation: float = 1.0) -> float:
    """Per-sample correlation noise giving roughly ``depth_std`` meters of
    depth noise on a single sinusoidal path (small-noise linearization)."""
    amplitude = attenuation * cfg.modulated_amplitude * cfg.modulation_period / 2.0 * cfg.exposure_periods
    phase_std = depth_std * 4.0 * math.pi / (cfg.light_speed * cfg.modulation_period)
    return phase_std * math.sqrt(2.0) * amplitude


def _pixel_rng(seed: int, row: int, col: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, row, col])))


def _draw_row(scene: SceneSpec, cfg: ToFConfig, row: int, max_forks: int):
    """Per-pixel random draws for one image row.

    Every pixel consumes the same number of draws regardless of material so the
    stream layout is fixed by (seed, row, col) alone.
    """
    width = scene.shape[1]
    noise = np.empty((width, 4))
    extra = np.empty((width, max_forks))
    weight = np.empty((width, max_forks))
    for col in range(width):
        rng = _pixel_rng(scene.seed, row, col)
        noise[col] = rng.standard_normal(4)
        extra[col] = np.abs(rng.standard_normal(max_forks))
        weight[col] = rng.uniform(0.2, 1.0, max_forks)
    return noise, extra, weight


def _simulate_row(scene: SceneSpec, cfg: ToFConfig, row: int, max_forks: int) -> np.ndarray:
    noise, extra, weight = _draw_row(scene, cfg, row, max_forks)
    dist = scene.distance[row]
    base = 2.0 * dist / cfg.light_speed
    rough = scene.material[row] == ROUGH
    forks = np.where(rough, scene.path_forks[row], 1)

    k = np.arange(max_forks)[None, :]
    active = k < forks[:, None]
    weight = np.where(active, weight, 0.0)
    weight /= weight.sum(axis=1, keepdims=True)
    weight[~rough] = 0.0
    weight[~rough, 0] = 1.0
    spread = np.where(rough, scene.scatter_std[row], 0.0)
    times = base[:, None] + spread[:, None] * extra * active
    weight = weight * scene.attenuation[row][:, None]

    delays = -np.asarray(FOUR_PHASE_DELAYS)
    kernel = _correlation_kernel(cfg, times, delays)  # (width, forks, 4)
    samples = cfg.modulated_amplitude * np.einsum("wk,wkp->wp", weight, kernel)
    samples += _dark_current_term(cfg, delays)[None, :]
    samples += scene.noise_std * noise
    return samples


def simulate_frame(scene: SceneSpec, cfg: ToFConfig, jobs: int = 1) -> tuple[FourPhaseFrame, DepthFrame]:
    """Render four correlation images of ``scene`` and decode them to depth.

    Smooth pixels return one path at the round-trip time of their distance.
    Rough pixels split the return over ``path_forks`` paths, each lengthened by
    a half-normal delay of scale ``scatter_std`` seconds and weighted randomly.
    Pixels with zero amplitude become holes. Output does not depend on ``jobs``.
    """
    height, width = scene.shape
    max_forks = int(scene.path_forks.max())
    rows = range(height)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(lambda r: _simulate_row(scene, cfg, r, max_forks), rows))
    else:
        samples = [_simulate_row(scene, cfg, r, max_forks) for r in rows]
    samples = np.stack(samples)  # (h, w, 4)
    frame = FourPhaseFrame(*(samples[..., p] for p in range(4)))
    return frame, depth_from_frame(frame, cfg)


def depth_from_frame(frame: FourPhaseFrame, cfg: ToFConfig) -> DepthFrame:
    """Decode a four-phase frame; zero-amplitude pixels become holes."""
    num = frame.a4 - frame.a2
    den = frame.a1 - frame.a3
    valid = (num != 0) | (den != 0)
    phase, _ = decode_four_samples(
        np.where(valid, frame.a1, 1.0), np.where(valid, frame.a2, 0.0),
        np.where(valid, frame.a3, 0.0), np.where(valid, frame.a4, 0.0),
    )
    return DepthFrame(np.where(valid, phase_to_depth(phase, cfg), 0.0), valid)
