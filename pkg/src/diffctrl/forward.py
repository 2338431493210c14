"""Forward noising process: Euler-Maruyama with mirror reflection at box faces.

Each particle follows x <- reflect(x + V(x) dt + sigma sqrt(dt) xi) with i.i.d.
standard-normal xi per coordinate. Reflection realizes the zero-flux boundary
condition; the uniform density is exactly stationary under it when V = 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BoxDomain, Ensemble, make_rng

__all__ = [
    "DriftSpec",
    "ForwardTrace",
    "default_times",
    "reflect",
    "simulate_forward",
    "save_trace",
    "load_trace",
]

TIME_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class DriftSpec:
    """Confining drift V: zero, or linear V(x) = -k x with k > 0."""

    kind: str = "zero"
    k: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "linear"):
            raise ValueError(f"drift kind must be 'zero' or 'linear', got {self.kind!r}")
        if self.kind == "linear":
            if self.k is None or not np.isfinite(self.k) or self.k <= 0:
                raise ValueError("linear drift requires k > 0")
            object.__setattr__(self, "k", float(self.k))
        elif self.k is not None:
            raise ValueError("zero drift takes no rate parameter")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(x)
        return -self.k * x

    def to_dict(self) -> dict:
        return {"kind": self.kind} if self.kind == "zero" else {"kind": "linear", "k": self.k}


@dataclass(frozen=True)
class ForwardTrace:
    """Ensemble snapshots of the noising run at the measurement instants."""

    times: np.ndarray
    snapshots: list
    config: dict

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        if len(self.snapshots) != times.shape[0]:
            raise ValueError("one snapshot per measurement instant required")
        shapes = {(s.m, s.d) for s in self.snapshots}
        if len(shapes) != 1:
            raise ValueError("snapshots must share particle count and dimension")
        for t, s in zip(times, self.snapshots):
            if abs(s.time - t) > TIME_MATCH_TOL:
                raise ValueError("snapshot timestamps must equal the measurement instants")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def snapshot_at(self, t: float) -> Ensemble:
        k = np.flatnonzero(np.abs(self.times - t) <= TIME_MATCH_TOL)
        if k.size != 1:
            raise KeyError(f"no snapshot at t={t}; instants are {self.times.tolist()}")
        return self.snapshots[int(k[0])]


def default_times(horizon: float, n: int) -> np.ndarray:
    """N uniform measurement instants including both endpoints 0 and T.

    The set is invariant under t -> T - t, which the reverse-process cost
    pairing relies on, and instant 0 carries the target samples.
    """
    if n < 2:
        raise ValueError("need at least two measurement instants")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return np.linspace(0.0, float(horizon), int(n))


def reflect(x: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Iterated mirror folding into the box on every bounded coordinate.

    Interior points are returned bit-identically, so the map is idempotent.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("reflect requires finite input")
    out = x.copy()
    pts = np.atleast_2d(out)
    for k in range(domain.d):
        if not domain.bounded[k]:
            continue
        lo, hi = domain.lower[k], domain.upper[k]
        col = pts[:, k]
        outside = (col < lo) | (col > hi)
        if not np.any(outside):
            continue
        span = 2.0 * (hi - lo)
        y = np.mod(col[outside] - lo, span)
        pts[outside, k] = lo + np.minimum(y, span - y)
    return out


def _step_indices(times: np.ndarray, dt: float) -> np.ndarray:
    ratios = times / dt
    idx = np.rint(ratios).astype(int)
    if np.any(np.abs(ratios - idx) > 1e-12 * np.maximum(1.0, np.abs(ratios))):
        raise ValueError("every measurement instant must be an integer multiple of dt")
    return idx


def simulate_forward(
    init: Ensemble,
    drift: DriftSpec,
    sigma: float,
    domain: BoxDomain | None,
    dt: float,
    times: np.ndarray,
    seed,
) -> ForwardTrace:
    """Run the noising SDE for all particles and record the measurement snapshots."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if sigma < 0 or not np.isfinite(sigma):
        raise ValueError("sigma must be a finite non-negative scalar")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be ascending and non-negative")
    idx = _step_indices(times, dt)
    n_steps = int(idx[-1])
    if domain is not None:
        if domain.d != init.d:
            raise ValueError("domain dimension does not match the ensemble")
        if np.any(domain.bounded) and not domain.contains(init.states):
            raise ValueError("initial ensemble must lie inside the bounded domain")

    rng = make_rng(seed)
    x = init.states.copy()
    noise_scale = sigma * np.sqrt(dt)
    wanted = {int(s): i for i, s in enumerate(idx)}
    snapshots: list = [None] * len(times)
    if 0 in wanted:
        snapshots[wanted[0]] = Ensemble(states=x, time=0.0)

    for s in range(n_steps):
        xi = rng.standard_normal(x.shape)
        x = x + drift(x) * dt + noise_scale * xi
        if domain is not None:
            x = reflect(x, domain)
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise RuntimeError(
                f"particle {bad} escaped to a non-finite state at step {s + 1} "
                f"(t={(s + 1) * dt:.6g}); reduce dt or sigma, or bound the domain"
            )
        if s + 1 in wanted:
            snapshots[wanted[s + 1]] = Ensemble(states=x, time=times[wanted[s + 1]])

    config = {
        "sigma": float(sigma),
        "dt": float(dt),
        "seed": int(seed) if np.isscalar(seed) else None,
        "drift": drift.to_dict(),
        "domain": None
        if domain is None
        else {
            "lower": domain.lower.tolist(),
            "upper": domain.upper.tolist(),
            "bounded": domain.bounded.tolist(),
        },
        "m": init.m,
        "d": init.d,
        "times": times.tolist(),
    }
    return ForwardTrace(times=times, snapshots=snapshots, config=config)


# ---------------------------------------------------------------------------
# persistence: one CSV per snapshot plus a JSON manifest


def _snapshot_name(i: int) -> str:
    return f"snapshot_{i:04d}.csv"


def save_trace(trace: ForwardTrace, out_dir) -> Path:
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    d = trace.snapshots[0].d
    header = [f"x{j + 1}" for j in range(d)]
    for i, snap in enumerate(trace.snapshots):
        path = out / "snapshots" / _snapshot_name(i)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in snap.states:
                w.writerow([repr(float(v)) for v in row])
    manifest = dict(trace.config)
    manifest["snapshot_files"] = [f"snapshots/{_snapshot_name(i)}" for i in range(len(trace.snapshots))]
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return out / "manifest.json"


def load_trace(out_dir) -> ForwardTrace:
    out = Path(out_dir)
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    times = np.asarray(manifest["times"], dtype=float)
    snapshots = []
    for t, rel in zip(times, manifest["snapshot_files"]):
        data = np.loadtxt(out / rel, delimiter=",", skiprows=1, ndmin=2)
        snapshots.append(Ensemble(states=data, time=t))
    config = {k: v for k, v in manifest.items() if k != "snapshot_files"}
    return ForwardTrace(times=times, snapshots=snapshots, config=config)
