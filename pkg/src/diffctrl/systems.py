"""Driftless control-affine systems with analytic Jacobians, Lie brackets, rank tests.

A system is dx/dt = sum_i g_i(x) u_i. The built-ins cover the fully actuated
integrator, a five-dimensional chained system and the unicycle. Vector-field
callables are batched: g maps (d,) -> (d, m) and (M, d) -> (M, d, m); jac_g maps
(d,) -> (m, d, d) and (M, d) -> (M, m, d, d) with jac[..., i, :, :] = dg_i/dx.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ControlAffineSystem",
    "SmoothField",
    "drift_eval",
    "lie_bracket",
    "bracket_field",
    "chow_rashevsky_rank",
    "single_integrator",
    "chained_5d",
    "unicycle",
    "get_system",
    "register_system",
]

RANK_RTOL = 1e-8  # singular values below RANK_RTOL * sigma_max count as zero


@dataclass(frozen=True)
class ControlAffineSystem:
    name: str
    d: int
    m: int
    g: Callable[[np.ndarray], np.ndarray]
    jac_g: Callable[[np.ndarray], np.ndarray]

    def g_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.g(x[None, :] if single else x)
        return out[0] if single else out

    def jac_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.jac_g(x[None, :] if single else x)
        return out[0] if single else out

    def field(self, i: int) -> "SmoothField":
        """Column g_i as a standalone field with its analytic Jacobian."""
        if not 0 <= i < self.m:
            raise ValueError(f"field index {i} out of range for m={self.m}")
        return SmoothField(
            value=lambda x, i=i: self.g_batch(x)[..., i],
            jac=lambda x, i=i: self.jac_batch(x)[..., i, :, :],
        )


@dataclass(frozen=True)
class SmoothField:
    """Vector field x -> R^d with a Jacobian callable (d x d, rows = components)."""

    value: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]


def drift_eval(sys: ControlAffineSystem, x, u) -> np.ndarray:
    """sum_i g_i(x) u_i; linear in u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != sys.d:
        raise ValueError(f"state dimension {x.shape[-1]} != system d={sys.d}")
    if u.shape[-1] != sys.m:
        raise ValueError(f"input dimension {u.shape[-1]} != system m={sys.m}")
    G = sys.g_batch(x)
    return G @ u if x.ndim == 1 else np.einsum("ndm,nm->nd", G, np.atleast_2d(u))


def lie_bracket(field_a: SmoothField, field_b: SmoothField, x) -> np.ndarray:
    """[A, B](x) = J_B(x) A(x) - J_A(x) B(x)."""
    x = np.asarray(x, dtype=float)
    a, b = field_a.value(x), field_b.value(x)
    if a.shape != b.shape:
        raise ValueError("fields have mismatched dimensions")
    return field_b.jac(x) @ a - field_a.jac(x) @ b


def _fd_jacobian(value: Callable, x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian, step 1e-5 * (1 + |x|)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    step = 1e-5 * (1.0 + np.linalg.norm(x))
    J = np.empty((value(x).shape[0], d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        J[:, k] = (value(x + e) - value(x - e)) / (2.0 * step)
    return J


def bracket_field(field_a: SmoothField, field_b: SmoothField) -> SmoothField:
    """Bracket as a new field; its Jacobian comes from finite differences.

    Only the rank computation consumes nested brackets, so FD accuracy suffices.
    """
    value = lambda x: lie_bracket(field_a, field_b, x)
    return SmoothField(value=value, jac=lambda x: _fd_jacobian(value, x))


def chow_rashevsky_rank(sys: ControlAffineSystem, x, depth: int) -> int:
    """Numerical rank of the span of iterated brackets up to the given depth.

    Level 0 holds the system fields; level i brackets the base fields against
    level i-1, so the union collects every bracket of word length <= depth + 1.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    x = np.asarray(x, dtype=float)
    base = [sys.field(i) for i in range(sys.m)]
    collected = list(base)
    frontier = base
    for _ in range(int(depth)):
        frontier = [bracket_field(g, h) for g in base for h in frontier]
        collected.extend(frontier)
    mat = np.stack([f.value(x) for f in collected])
    svals = np.linalg.svd(mat, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > RANK_RTOL * svals[0]))


# ---------------------------------------------------------------------------
# built-in systems


def single_integrator(d: int) -> ControlAffineSystem:
    """Fully actuated system: g = identity columns, m = d."""
    if d < 1:
        raise ValueError("dimension must be >= 1")

    def g(x):
        n = x.shape[0]
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()

    def jac(x):
        return np.zeros((x.shape[0], d, d, d))

    return ControlAffineSystem(name=f"single_integrator_{d}", d=d, m=d, g=g, jac_g=jac)


def chained_5d() -> ControlAffineSystem:
    """dx1=u1, dx2=u2, dx3=x2 u1, dx4=x3 u1, dx5=x4 u1."""

    def g(x):
        n = x.shape[0]
        G = np.zeros((n, 5, 2))
        G[:, 0, 0] = 1.0
        G[:, 1, 1] = 1.0
        G[:, 2, 0] = x[:, 1]
        G[:, 3, 0] = x[:, 2]
        G[:, 4, 0] = x[:, 3]
        return G

    def jac(x):
        n = x.shape[0]
        J = np.zeros((n, 2, 5, 5))
        J[:, 0, 2, 1] = 1.0
        J[:, 0, 3, 2] = 1.0
        J[:, 0, 4, 3] = 1.0
        return J

    return ControlAffineSystem(name="chained_5d", d=5, m=2, g=g, jac_g=jac)


def unicycle() -> ControlAffineSystem:
    """dx = u1 cos(theta), dy = u1 sin(theta), dtheta = u2."""

    def g(x):
        n = x.shape[0]
        G = np.zeros((n, 3, 2))
        G[:, 0, 0] = np.cos(x[:, 2])
        G[:, 1, 0] = np.sin(x[:, 2])
        G[:, 2, 1] = 1.0
        return G

    def jac(x):
        n = x.shape[0]
        J = np.zeros((n, 2, 3, 3))
        J[:, 0, 0, 2] = -np.sin(x[:, 2])
        J[:, 0, 1, 2] = np.cos(x[:, 2])
        return J

    return ControlAffineSystem(name="unicycle", d=3, m=2, g=g, jac_g=jac)


_REGISTRY: dict[str, Callable[[], ControlAffineSystem]] = {
    "chained_5d": chained_5d,
    "unicycle": unicycle,
}

_INTEGRATOR_RE = re.compile(r"^single_integrator_(\d+)$")


def register_system(name: str, factory: Callable[[], ControlAffineSystem]) -> None:
    """Make a user-defined system selectable by name in run configurations."""
    if name in _REGISTRY or _INTEGRATOR_RE.match(name):
        raise ValueError(f"system name {name!r} already taken")
    _REGISTRY[name] = factory


def get_system(name: str) -> ControlAffineSystem:
    m = _INTEGRATOR_RE.match(name)
    if m:
        return single_integrator(int(m.group(1)))
    if name not in _REGISTRY:
        known = sorted(_REGISTRY) + ["single_integrator_<d>"]
        raise KeyError(f"unknown system {name!r}; known: {', '.join(known)}")
    return _REGISTRY[name]()


def jacobian_self_test(sys: ControlAffineSystem, points: np.ndarray, rtol: float = 1e-6) -> float:
    """Worst relative deviation between analytic and central-FD Jacobians.

    Raises when the deviation exceeds rtol; returns the measured worst case.
    """
    worst = 0.0
    for x in np.atleast_2d(points):
        J = sys.jac_batch(x)
        scale = max(1.0, np.abs(J).max())
        for i in range(sys.m):
            Jfd = _fd_jacobian(lambda y, i=i: sys.g_batch(y)[..., i], x)
            worst = max(worst, float(np.abs(J[i] - Jfd).max() / scale))
    if worst > rtol:
        raise AssertionError(f"analytic Jacobian deviates from finite differences: {worst:.3e}")
    return worst
