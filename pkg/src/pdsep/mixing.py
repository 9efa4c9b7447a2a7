"""Instantaneous and convolutive mixing of N sources, plus built-in source banks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy import signal


class MixKind(IntEnum):
    INSTANTANEOUS = 0
    CONVOLUTIVE = 1

    @classmethod
    def parse(cls, value) -> "MixKind":
        if isinstance(value, MixKind):
            return value
        aliases = {"inst": cls.INSTANTANEOUS, "instantaneous": cls.INSTANTANEOUS,
                   "conv": cls.CONVOLUTIVE, "convolutive": cls.CONVOLUTIVE}
        if isinstance(value, str) and value.lower() in aliases:
            return aliases[value.lower()]
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"unknown mixing kind {value!r}; expected inst or conv") from None

    @property
    def short(self) -> str:
        return "inst" if self is MixKind.INSTANTANEOUS else "conv"


@dataclass
class MixingSpec:
    """Provenance of one mixture.

    ``coeffs`` has shape (N,) for instantaneous mixing and (N, K) or
    (N, K, K) for convolutive mixing. ``scale`` is the peak-normalisation
    factor that was applied after mixing.
    """

    kind: MixKind
    coeffs: np.ndarray
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        self.kind = MixKind.parse(self.kind)
        self.coeffs = np.asarray(self.coeffs)
        if self.kind is MixKind.INSTANTANEOUS and self.coeffs.ndim != 1:
            raise ValueError(f"instantaneous weights must be 1-D, got shape {self.coeffs.shape}")
        if self.kind is MixKind.CONVOLUTIVE and self.coeffs.ndim not in (2, 3):
            raise ValueError(f"convolutive kernels must be (N, K) or (N, K, K), got {self.coeffs.shape}")
        if self.coeffs.shape[0] < 1 or (self.coeffs.ndim > 1 and self.coeffs.shape[1] < 1):
            raise ValueError("mixing spec needs at least one source and a nonempty kernel")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("mixing coefficients must be finite")
        if not np.any(self.coeffs):
            raise ValueError("mixing coefficients are all zero")

    @property
    def n_sources(self) -> int:
        return self.coeffs.shape[0]

    @property
    def kernel_shape(self) -> tuple:
        return self.coeffs.shape[1:]


def _check_sources(sources: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(sources) < 1:
        raise ValueError("need at least one source")
    arrays = [np.asarray(s) for s in sources]
    for s in arrays[1:]:
        if s.shape != arrays[0].shape:
            raise ValueError(f"source shapes {arrays[0].shape} and {s.shape} differ")
    return arrays


def peak_normalize(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale so that max|x| == 1; returns the scaled array and the factor."""
    peak = float(np.max(np.abs(x)))
    if peak == 0:
        return x, 1.0
    return x / peak, 1.0 / peak


def weighted_sum(sources: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """x = sum_i a_i * s_i, without normalisation."""
    arrays = _check_sources(sources)
    weights = np.asarray(weights)
    if weights.shape != (len(arrays),):
        raise ValueError(f"expected {len(arrays)} weights, got shape {weights.shape}")
    if not np.any(weights):
        raise ValueError("all mixing weights are zero")
    out = np.zeros_like(arrays[0], dtype=np.result_type(arrays[0], weights))
    for a, s in zip(weights, arrays):
        out = out + a * s
    return out


def convolve_source(kernel: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Causal linear convolution truncated to the source length.

    1-D: y[t] = sum_v a[t - v] s[v]. 2-D images (H, W) or (H, W, C): centred
    same-size zero-padded convolution, applied per channel.
    """
    kernel = np.asarray(kernel)
    source = np.asarray(source)
    if kernel.size == 0:
        raise ValueError("empty convolution kernel")
    if kernel.ndim == 1:
        if source.ndim != 1:
            raise ValueError(f"1-D kernel needs a 1-D source, got shape {source.shape}")
        return np.convolve(source, kernel)[: source.shape[0]]
    if kernel.ndim != 2 or source.ndim not in (2, 3):
        raise ValueError(f"kernel {kernel.shape} does not fit source {source.shape}")
    if source.ndim == 2:
        return signal.convolve2d(source, kernel, mode="same")
    return np.stack([signal.convolve2d(source[..., c], kernel, mode="same") for c in range(source.shape[2])], axis=-1)


def convolutive_sum(sources: Sequence[np.ndarray], kernels: Sequence[np.ndarray]) -> np.ndarray:
    arrays = _check_sources(sources)
    kernels = [np.asarray(k) for k in kernels]
    if len(kernels) != len(arrays):
        raise ValueError(f"expected {len(arrays)} kernels, got {len(kernels)}")
    for k in kernels[1:]:
        if k.shape != kernels[0].shape:
            raise ValueError(f"kernel shapes {kernels[0].shape} and {k.shape} differ")
    if kernels[0].size == 0:
        raise ValueError("empty convolution kernel")
    if not any(np.any(k) for k in kernels):
        raise ValueError("all mixing kernels are zero")
    out = convolve_source(kernels[0], arrays[0])
    for k, s in zip(kernels[1:], arrays[1:]):
        out = out + convolve_source(k, s)
    return out


def mix_instantaneous(sources, weights) -> tuple[np.ndarray, float]:
    """Peak-normalised weighted sum; returns (mixture, scale factor)."""
    return peak_normalize(weighted_sum(sources, weights))


def mix_convolutive(sources, kernels) -> tuple[np.ndarray, float]:
    return peak_normalize(convolutive_sum(sources, kernels))


def mix(sources, spec: MixingSpec) -> tuple[np.ndarray, float]:
    if spec.n_sources != len(sources):
        raise ValueError(f"spec has {spec.n_sources} sources, got {len(sources)} arrays")
    if spec.kind is MixKind.INSTANTANEOUS:
        return mix_instantaneous(sources, spec.coeffs)
    return mix_convolutive(sources, list(spec.coeffs))


def random_spec(kind, n: int, k: int = 8, seed: int = 0, rank: int = 1) -> MixingSpec:
    """Draw weights (or kernel taps) i.i.d. standard normal from ``seed``."""
    kind = MixKind.parse(kind)
    if n < 2:
        raise ValueError(f"need at least 2 sources, got {n}")
    if kind is MixKind.CONVOLUTIVE and k < 1:
        raise ValueError(f"kernel length must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    while True:
        if kind is MixKind.INSTANTANEOUS:
            coeffs = rng.standard_normal(n)
        else:
            coeffs = rng.standard_normal((n,) + (k,) * rank)
        if np.any(coeffs):
            return MixingSpec(kind, coeffs, seed=seed)


# -- built-in source banks ----------------------------------------------------

BANK_1D = ("sinusoid", "sawtooth", "square", "noise")
BANK_2D = ("gradient", "checker", "rings", "stripes")


def source_1d(name: str, length: int = 256) -> np.ndarray:
    """Closed-form test signals with peak amplitude 1 (noise: peak-normalised)."""
    t = np.arange(length) / length
    if name == "sinusoid":
        return np.sin(2 * np.pi * 4 * t)
    if name == "sawtooth":
        return signal.sawtooth(2 * np.pi * 3 * t)
    if name == "square":
        return np.where(np.sin(2 * np.pi * 2 * t + np.pi / 8) >= 0, 1.0, -1.0)
    if name == "noise":
        rng = np.random.default_rng(20240517)
        spectrum = np.fft.rfft(rng.standard_normal(length))
        spectrum[max(2, length // 16):] = 0
        x = np.fft.irfft(spectrum, n=length)
        x = x - x.mean()
        return x / np.max(np.abs(x))
    raise ValueError(f"unknown 1-D source {name!r}")


def source_2d(name: str, size: int = 32) -> np.ndarray:
    """Synthetic (size, size, 1) images in [-1, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    if name == "gradient":
        img = 2 * (xx + yy) / 2 - 1
    elif name == "checker":
        cell = max(1, size // 8)
        img = np.where(((np.arange(size)[:, None] // cell) + (np.arange(size)[None, :] // cell)) % 2 == 0, 1.0, -1.0)
    elif name == "rings":
        r = np.hypot(xx - 0.5, yy - 0.5)
        img = np.cos(2 * np.pi * 3 * r)
    elif name == "stripes":
        img = np.sin(2 * np.pi * 5 * yy)
    else:
        raise ValueError(f"unknown 2-D source {name!r}")
    return img[..., None]


def source_bank(rank: int = 1, size: int | None = None) -> list[np.ndarray]:
    """Built-in sources; ``size`` defaults to T=256 for signals and 32 for images."""
    if rank == 1:
        return [source_1d(name, size or 256) for name in BANK_1D]
    if rank == 2:
        return [source_2d(name, size or 32) for name in BANK_2D]
    raise ValueError(f"rank must be 1 or 2, got {rank}")
