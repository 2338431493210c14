"""Shared numeric primitives: particle ensembles, box domains, kernels, seeded sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Ensemble",
    "BoxDomain",
    "KernelConfig",
    "GaussianSpec",
    "InitialSpec",
    "make_rng",
    "kernel_eval",
    "sample_gaussian",
    "sample_uniform",
    "sample_initial",
]


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator for an explicit seed (or SeedSequence).

    All randomness in the package flows through this so that runs are a pure
    function of their seeds. Cross-language bit equality is not a goal.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Deterministic child seed for (master, key) without consuming the master stream."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))


@dataclass(frozen=True)
class Ensemble:
    """M particles in R^d at a common time; the sample representation of a density."""

    states: np.ndarray  # (M, d)
    time: float = 0.0

    def __post_init__(self):
        states = np.array(self.states, dtype=float, copy=True)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError(f"states must have shape (M, d) with M, d >= 1, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("ensemble states contain non-finite coordinates")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "time", float(self.time))

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box; unbounded coordinates admit no reflection."""

    lower: np.ndarray
    upper: np.ndarray
    bounded: np.ndarray  # bool per coordinate

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d vectors of equal length")
        bounded = np.atleast_1d(np.asarray(self.bounded, dtype=bool))
        if bounded.shape != lower.shape:
            raise ValueError("bounded mask must match the coordinate count")
        if np.any(bounded & ~(lower < upper)):
            raise ValueError("lower < upper required on every bounded coordinate")
        for arr in (lower, upper, bounded):
            arr.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "bounded", bounded)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "BoxDomain":
        return cls(np.full(d, lo), np.full(d, hi), np.ones(d, dtype=bool))

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    @property
    def all_bounded(self) -> bool:
        return bool(np.all(self.bounded))

    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, points: np.ndarray) -> bool:
        """True when every point lies in the closed box on the bounded coordinates."""
        pts = np.atleast_2d(points)
        b = self.bounded
        return bool(np.all(pts[:, b] >= self.lower[b]) and np.all(pts[:, b] <= self.upper[b]))


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian smoothing kernel with bandwidth delta; integrates to 1 over R^d."""

    bandwidth: float

    def __post_init__(self):
        bw = float(self.bandwidth)
        if not np.isfinite(bw) or bw <= 0:
            raise ValueError(f"bandwidth must be a positive finite scalar, got {bw}")
        object.__setattr__(self, "bandwidth", bw)


@dataclass(frozen=True)
class GaussianSpec:
    """Isotropic Gaussian with covariance cov_scale * I."""

    mean: np.ndarray
    cov_scale: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ValueError("mean must be a finite vector")
        c = float(self.cov_scale)
        if not np.isfinite(c) or c <= 0:
            raise ValueError(f"cov_scale must be positive, got {c}")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_scale", c)

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def kernel_eval(cfg: KernelConfig, r) -> float:
    """Gaussian kernel value (2 pi delta^2)^(-d/2) exp(-|r|^2 / (2 delta^2))."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if not np.all(np.isfinite(r)):
        raise ValueError("kernel argument contains non-finite values")
    d = r.shape[-1] if r.ndim else 1
    delta2 = cfg.bandwidth**2
    norm = (2.0 * np.pi * delta2) ** (-d / 2.0)
    return float(norm * np.exp(-float(np.dot(r, r)) / (2.0 * delta2)))


def sample_gaussian(spec: GaussianSpec, m: int, seed) -> Ensemble:
    """M i.i.d. draws from N(mean, cov_scale * I); deterministic per seed."""
    if m < 1:
        raise ValueError("sample count must be >= 1")
    rng = make_rng(seed)
    states = spec.mean + np.sqrt(spec.cov_scale) * rng.standard_normal((int(m), spec.d))
    return Ensemble(states=states, time=0.0)


def sample_uniform(box: BoxDomain, m: int, seed) -> Ensemble:
    """M i.i.d. uniform draws inside the box; all coordinates must be bounded."""
    if m < 1:
        raise ValueError("sample count must be >= 1")
    if not box.all_bounded:
        raise ValueError("uniform sampling requires every coordinate to be bounded")
    rng = make_rng(seed)
    states = rng.uniform(box.lower, box.upper, size=(int(m), box.d))
    return Ensemble(states=states, time=0.0)


@dataclass(frozen=True)
class InitialSpec:
    """Sampler spec for the reverse-process initial density (uniform box or Gaussian)."""

    kind: str  # "uniform" | "gaussian"
    box: BoxDomain | None = None
    gaussian: GaussianSpec | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            if self.box is None:
                raise ValueError("uniform initial density needs a box domain")
        elif self.kind == "gaussian":
            if self.gaussian is None:
                raise ValueError("gaussian initial density needs a GaussianSpec")
        else:
            raise ValueError(f"unknown initial density kind {self.kind!r}")


def sample_initial(spec: InitialSpec, m: int, seed) -> Ensemble:
    if spec.kind == "uniform":
        return sample_uniform(spec.box, m, seed)
    return sample_gaussian(spec.gaussian, m, seed)
