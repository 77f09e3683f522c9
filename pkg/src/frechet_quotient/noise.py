"""Seeded noise samplers for the generative model X = t0 + eps.

Randomness is organised in counter-based substreams: draw ``k`` of chunk
``c`` depends only on ``(seed, lane, c, k)``. A Monte Carlo run over ``n``
samples always uses the same chunk layout for a given chunk size, so the
result does not depend on how many workers evaluate the chunks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

DEFAULT_CHUNK = 1 << 16

# Substream lanes; lane 0 carries the observations themselves.
LANE_OBS = 0
LANE_RESTART = 1
LANE_BOOT = 2
LANE_DIRECTIONS = 3
LANE_EXACT = 4


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class IsotropicGaussian:
    scale: float
    dim: int

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise NoiseError(f"Gaussian scale must be positive, got {self.scale}")
        _check_dim(self.dim)


@dataclass(frozen=True)
class UniformBall:
    radius: float
    dim: int

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise NoiseError(f"ball radius must be positive, got {self.radius}")
        _check_dim(self.dim)


@dataclass(frozen=True, eq=False)
class FiniteMixture:
    """Discrete noise: ``points[i]`` with probability ``probs[i]``; must be centred."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) != len(pts) or len(p) == 0:
            raise NoiseError("mixture needs one probability per point")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise NoiseError("mixture probabilities must be non-negative and sum to 1")
        if not np.all(np.isfinite(pts)):
            raise NoiseError("mixture points must be finite")
        if np.linalg.norm(p @ pts) > 1e-12 * max(1.0, np.abs(pts).max()):
            raise NoiseError("mixture noise must have zero mean")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


NoiseSpec = IsotropicGaussian | UniformBall | FiniteMixture


def _check_dim(dim):
    if int(dim) != dim or dim < 1:
        raise NoiseError(f"dimension must be a positive integer, got {dim}")


def point_mass(dim: int) -> FiniteMixture:
    """The degenerate noise eps = 0."""
    return FiniteMixture(np.zeros((1, dim)), np.ones(1))


@dataclass(frozen=True)
class SampleStream:
    """Address of a reproducible block of random draws."""

    seed: int
    chunk_index: int = 0
    lane: int = LANE_OBS

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) % 2**64, spawn_key=(int(self.lane), int(self.chunk_index)))
        return np.random.Generator(np.random.Philox(ss))

    def chunk(self, c: int) -> "SampleStream":
        return replace(self, chunk_index=int(c))

    def with_lane(self, lane: int) -> "SampleStream":
        return replace(self, lane=int(lane), chunk_index=0)


def sample_noise(noise: NoiseSpec, stream: SampleStream, count: int) -> np.ndarray:
    """``count`` draws of the noise from one substream, as a (count, dim) array."""
    if count < 1:
        raise NoiseError(f"count must be >= 1, got {count}")
    rng = stream.generator()
    if isinstance(noise, IsotropicGaussian):
        return noise.scale * rng.standard_normal((count, noise.dim))
    if isinstance(noise, UniformBall):
        z = rng.standard_normal((count, noise.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = noise.radius * rng.random(count) ** (1.0 / noise.dim)
        return z * r[:, None]
    if isinstance(noise, FiniteMixture):
        k = rng.choice(len(noise.probs), size=count, p=noise.probs)
        return noise.points[k]
    raise NoiseError(f"unknown noise specification {noise!r}")


def second_moment(noise: NoiseSpec) -> float:
    """E|eps|^2 in closed form."""
    if isinstance(noise, IsotropicGaussian):
        return noise.dim * noise.scale**2
    if isinstance(noise, UniformBall):
        return noise.radius**2 * noise.dim / (noise.dim + 2.0)
    if isinstance(noise, FiniteMixture):
        return float(noise.probs @ (noise.points**2).sum(axis=1))
    raise NoiseError(f"unknown noise specification {noise!r}")


def expected_norm(noise: NoiseSpec) -> float:
    """E|eps| in closed form."""
    if isinstance(noise, IsotropicGaussian):
        return noise.scale * chi_mean(noise.dim)
    if isinstance(noise, UniformBall):
        return noise.radius * noise.dim / (noise.dim + 1.0)
    if isinstance(noise, FiniteMixture):
        return float(noise.probs @ np.linalg.norm(noise.points, axis=1))
    raise NoiseError(f"unknown noise specification {noise!r}")


def chi_mean(k: int) -> float:
    """Mean of the chi distribution with k degrees of freedom."""
    return math.sqrt(2.0) * math.exp(gammaln((k + 1) / 2.0) - gammaln(k / 2.0))


def scaled(noise: NoiseSpec, factor: float) -> NoiseSpec:
    """The noise ``factor * eps``."""
    if isinstance(noise, IsotropicGaussian):
        return IsotropicGaussian(noise.scale * factor, noise.dim)
    if isinstance(noise, UniformBall):
        return UniformBall(noise.radius * factor, noise.dim)
    if isinstance(noise, FiniteMixture):
        return FiniteMixture(noise.points * factor, noise.probs)
    raise NoiseError(f"unknown noise specification {noise!r}")


def normalize_to_unit_energy(noise: NoiseSpec) -> tuple[NoiseSpec, float]:
    """Split the noise as ``sigma * eps`` with E|eps|^2 = 1; returns ``(eps spec, sigma)``."""
    energy = second_moment(noise)
    if energy <= 0.0:
        raise NoiseError("noise has zero energy and cannot be normalised")
    sigma = math.sqrt(energy)
    if sigma == 1.0:
        return noise, 1.0
    return scaled(noise, 1.0 / sigma), sigma


# --------------------------------------------------------------------------
# chunked evaluation


def chunk_layout(n: int, chunk_size: int = DEFAULT_CHUNK) -> list[int]:
    if n < 1:
        raise NoiseError(f"sample count must be >= 1, got {n}")
    if chunk_size < 1:
        raise NoiseError(f"chunk size must be >= 1, got {chunk_size}")
    full, rest = divmod(int(n), int(chunk_size))
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(fn, noise: NoiseSpec, stream: SampleStream, n: int,
               chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> list:
    """Apply ``fn(eps_chunk)`` to every chunk of ``n`` noise draws, in chunk order."""
    sizes = chunk_layout(n, chunk_size)

    def job(c):
        return fn(sample_noise(noise, stream.chunk(c), sizes[c]))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(job, range(len(sizes))))
    return [job(c) for c in range(len(sizes))]


def draw_noise(noise: NoiseSpec, stream: SampleStream, n: int,
               chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """All ``n`` draws of the chunked stream stacked into one array."""
    return np.concatenate(map_chunks(lambda e: e, noise, stream, n, chunk_size, workers))
