"""Deterministic image corruptions: Gaussian noise and blur, fog, sunflare, snow.

All arithmetic is done in float64, rounded half away from zero and clamped to
[0, 255] once at the end, so outputs are byte-stable across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .core import CorruptionError, CorruptionSpec, Intensity, Kind, Raster, parse_level
from .rng import Rng

NOISE_SIGMA_PER_DEGREE = 10.0
BLUR_SIGMA_PER_DEGREE = 1.0


@dataclass(frozen=True)
class SnowParams:
    fraction: float  # share of pixels whitened

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("snow fraction must lie in [0, 1]")


@dataclass(frozen=True)
class FogParams:
    alpha: float  # blend weight toward white
    sigma: float  # blur sigma in pixels

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("fog alpha must lie in [0, 1]")
        if not self.sigma >= 0.0:
            raise ValueError("fog sigma must be >= 0")


@dataclass(frozen=True)
class SunflareParams:
    radius: float  # disc radius as a fraction of the image diagonal
    gain: float  # additive brightness at the disc centre
    halo_count: int
    # Fractional (x, y) image position; drawn from the top third when None.
    center: Optional[Tuple[float, float]] = None
    halo_alpha: float = 0.15

    def __post_init__(self):
        if not 0.0 <= self.radius <= 1.0:
            raise ValueError("sunflare radius must lie in [0, 1]")
        if self.gain < 0:
            raise ValueError("sunflare gain must be >= 0")
        if self.halo_count < 0:
            raise ValueError("halo count must be >= 0")
        if not 0.0 <= self.halo_alpha <= 1.0:
            raise ValueError("halo alpha must lie in [0, 1]")
        if self.center is not None and not all(0.0 <= c <= 1.0 for c in self.center):
            raise ValueError("sunflare center must be fractional coordinates in [0, 1]")


@dataclass(frozen=True)
class WeatherParams:
    """Per-intensity parameter tables for the three weather corruptions."""

    snow: Dict[Intensity, SnowParams] = field(
        default_factory=lambda: {
            Intensity.LOW: SnowParams(0.03),
            Intensity.MEDIUM: SnowParams(0.08),
            Intensity.HIGH: SnowParams(0.15),
        }
    )
    fog: Dict[Intensity, FogParams] = field(
        default_factory=lambda: {
            Intensity.LOW: FogParams(0.10, 1.0),
            Intensity.MEDIUM: FogParams(0.25, 2.5),
            Intensity.HIGH: FogParams(0.40, 5.0),
        }
    )
    sunflare: Dict[Intensity, SunflareParams] = field(
        default_factory=lambda: {
            Intensity.LOW: SunflareParams(0.05, 120.0, 4),
            Intensity.MEDIUM: SunflareParams(0.10, 180.0, 6),
            Intensity.HIGH: SunflareParams(0.18, 255.0, 8),
        }
    )

    def strict_fog(self) -> "WeatherParams":
        """Copy with fog reduced to pure blur (no white blending)."""
        return replace(self, fog={i: FogParams(0.0, p.sigma) for i, p in self.fog.items()})


DEFAULT_WEATHER = WeatherParams()


def _to_raster(values: np.ndarray) -> Raster:
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return Raster(np.clip(rounded, 0, 255).astype(np.uint8))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with radius ``ceil(3 * sigma)``."""
    if sigma <= 0:
        return np.ones(1)
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * values.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(values, pad, mode="edge")
    n = values.shape[axis]
    out = np.zeros_like(values, dtype=np.float64)
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def blur_values(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a float ``(H, W, C)`` array, clamp-to-edge borders."""
    if sigma <= 0:
        return values.astype(np.float64, copy=True)
    kernel = gaussian_kernel(sigma)
    return _convolve_axis(_convolve_axis(values.astype(np.float64), kernel, 1), kernel, 0)


def gaussian_noise(img: Raster, degree: int, rng: Rng) -> Raster:
    """Add independent N(0, (10 * degree)^2) noise to every channel value."""
    degree = parse_level(Kind.GAUSSIAN_NOISE, degree)
    if degree == 0:
        return Raster(img.pixels)
    sigma = NOISE_SIGMA_PER_DEGREE * degree
    noise = rng.normal(img.pixels.size).reshape(img.pixels.shape) * sigma
    return _to_raster(img.pixels.astype(np.float64) + noise)


def gaussian_blur(img: Raster, degree: int, rng: Optional[Rng] = None) -> Raster:
    """Blur with sigma equal to ``degree`` pixels. ``rng`` is accepted for a uniform signature."""
    degree = parse_level(Kind.GAUSSIAN_BLUR, degree)
    if degree == 0:
        return Raster(img.pixels)
    return _to_raster(blur_values(img.pixels, BLUR_SIGMA_PER_DEGREE * degree))


def _resolve(table: dict, level, cls, kind: Kind):
    if isinstance(level, cls):
        return level
    return table[parse_level(kind, level)]


def snow_count(fraction: float, n_pixels: int) -> int:
    """``floor(fraction * n_pixels)`` with ``fraction`` read as its decimal literal."""
    return int(Decimal(repr(float(fraction))) * n_pixels)


def snow(img: Raster, intensity: Union[Intensity, str, SnowParams], rng: Rng,
         params: WeatherParams = DEFAULT_WEATHER) -> Raster:
    """Whiten ``floor(p * W * H)`` distinct pixels chosen by a partial Fisher-Yates shuffle."""
    p = _resolve(params.snow, intensity, SnowParams, Kind.SNOW)
    n = img.width * img.height
    k = snow_count(p.fraction, n)
    out = np.array(img.pixels)
    if k == 0:
        return Raster(out)
    order = list(range(n))
    draws = rng.uniform(k)
    for j in range(k):
        span = n - j
        r = j + min(int(draws[j] * span), span - 1)
        order[j], order[r] = order[r], order[j]
    flat = out.reshape(n, 3)
    flat[np.asarray(order[:k], dtype=np.intp)] = 255
    return Raster(out)


def fog(img: Raster, intensity: Union[Intensity, str, FogParams], rng: Optional[Rng] = None,
        params: WeatherParams = DEFAULT_WEATHER) -> Raster:
    """Blend toward white by alpha, then blur every pixel with the same sigma."""
    p = _resolve(params.fog, intensity, FogParams, Kind.FOG)
    if p.alpha == 0 and p.sigma == 0:
        return Raster(img.pixels)
    values = img.pixels.astype(np.float64)
    if p.alpha:
        values = (1.0 - p.alpha) * values + p.alpha * 255.0
    return _to_raster(blur_values(values, p.sigma))


def flare_light(width: int, height: int, p: SunflareParams, rng: Rng) -> np.ndarray:
    """Additive light field (H, W) for a flare disc plus halos toward the image centre."""
    if p.center is None:
        cx = rng.uniform() * width
        cy = rng.uniform() * height / 3.0
    else:
        cx, cy = p.center[0] * width, p.center[1] * height
    light = np.zeros((height, width))
    if p.gain == 0:
        return light
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    radius = max(p.radius * math.hypot(width, height), 1e-9)
    d = np.hypot(xs - cx, ys - cy)
    light += p.gain * np.clip(1.0 - d / radius, 0.0, 1.0) ** 2

    mx, my = width / 2.0, height / 2.0
    for k in range(p.halo_count):
        t = (k + 1) / p.halo_count
        hx, hy = cx + t * (mx - cx), cy + t * (my - cy)
        hr = radius * 0.6 * (1.0 - k / (p.halo_count + 1))
        dh = np.hypot(xs - hx, ys - hy) / hr
        light += p.gain * p.halo_alpha * np.clip(1.0 - dh * dh, 0.0, 1.0)
    return light


def sunflare(img: Raster, intensity: Union[Intensity, str, SunflareParams], rng: Rng,
             params: WeatherParams = DEFAULT_WEATHER) -> Raster:
    """Add a bright disc with radial falloff plus translucent halos, clamped at 255."""
    p = _resolve(params.sunflare, intensity, SunflareParams, Kind.SUNFLARE)
    if p.gain == 0:
        return Raster(img.pixels)
    light = flare_light(img.width, img.height, p, rng)
    return _to_raster(img.pixels.astype(np.float64) + light[:, :, None])


def apply(img: Raster, spec: CorruptionSpec, params: WeatherParams = DEFAULT_WEATHER) -> Raster:
    """Run the corruption named by ``spec`` with an Rng seeded from ``spec.seed``."""
    if not isinstance(spec, CorruptionSpec):
        raise CorruptionError(f"expected a CorruptionSpec, got {type(spec).__name__}")
    rng = Rng(spec.seed)
    if spec.kind is Kind.GAUSSIAN_NOISE:
        return gaussian_noise(img, spec.level, rng)
    if spec.kind is Kind.GAUSSIAN_BLUR:
        return gaussian_blur(img, spec.level, rng)
    if spec.kind is Kind.SNOW:
        return snow(img, spec.level, rng, params)
    if spec.kind is Kind.FOG:
        return fog(img, spec.level, rng, params)
    return sunflare(img, spec.level, rng, params)
