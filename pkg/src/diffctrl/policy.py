"""Feedback policy as a feedforward net, with hand-rolled VJPs and Adam.

The network maps the concatenation (t/T, x) through tanh hidden layers to an
m-dimensional linear output. Reverse-mode derivatives w.r.t. both inputs and
parameters are explicit so the rollout adjoint in `reverse` stays an exact
discrete gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import make_rng

__all__ = [
    "MlpPolicy",
    "AdamState",
    "param_count",
    "init_policy",
    "constant_policy",
    "policy_eval",
    "policy_eval_batch",
    "policy_vjp",
    "policy_vjp_batch",
    "adam_step",
    "save_policy",
    "load_policy",
]


def param_count(layer_sizes) -> int:
    sizes = list(layer_sizes)
    return int(sum((nin + 1) * nout for nin, nout in zip(sizes[:-1], sizes[1:])))


@dataclass(frozen=True)
class MlpPolicy:
    """Flat-parameter MLP; layer_sizes[0] = d + 1 (time slot), layer_sizes[-1] = m."""

    layer_sizes: tuple
    params: np.ndarray
    horizon: float
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs at least input and output entries, all >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")
        params = np.array(self.params, dtype=float, copy=True)
        if params.shape != (param_count(sizes),):
            raise ValueError(
                f"parameter count {params.size} != expected {param_count(sizes)} for {sizes}"
            )
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("policy horizon must be positive")
        params.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def d(self) -> int:
        return self.layer_sizes[0] - 1

    @property
    def m(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params: np.ndarray) -> "MlpPolicy":
        return replace(self, params=params)


def _layers(p: MlpPolicy):
    """Yield (W, b) views into the flat parameter vector, W shaped (nout, nin)."""
    sizes = p.layer_sizes
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        W = p.params[off : off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = p.params[off : off + nout]
        off += nout
        yield W, b


def init_policy(layer_sizes, horizon: float, seed) -> MlpPolicy:
    """Glorot-uniform weights, zero biases, seeded."""
    sizes = tuple(int(s) for s in layer_sizes)
    rng = make_rng(seed)
    chunks = []
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (nin + nout))
        chunks.append(rng.uniform(-limit, limit, size=nin * nout))
        chunks.append(np.zeros(nout))
    return MlpPolicy(layer_sizes=sizes, params=np.concatenate(chunks), horizon=horizon)


def constant_policy(d: int, u: np.ndarray, horizon: float) -> MlpPolicy:
    """Single affine layer with zero weights and bias u: outputs u everywhere."""
    u = np.asarray(u, dtype=float)
    sizes = (d + 1, u.shape[0])
    params = np.concatenate([np.zeros((d + 1) * u.shape[0]), u])
    return MlpPolicy(layer_sizes=sizes, params=params, horizon=horizon)


def _input_batch(p: MlpPolicy, t: float, X: np.ndarray) -> np.ndarray:
    tcol = np.full((X.shape[0], 1), float(t) / p.horizon)
    return np.concatenate([tcol, X], axis=1)


def _forward(p: MlpPolicy, A0: np.ndarray):
    """Forward pass keeping per-layer inputs and hidden activations for the VJP."""
    inputs = [A0]
    layers = list(_layers(p))
    A = A0
    for li, (W, b) in enumerate(layers):
        Z = A @ W.T + b
        A = Z if li == len(layers) - 1 else np.tanh(Z)
        inputs.append(A)
    return inputs


def policy_eval_batch(p: MlpPolicy, t: float, X: np.ndarray) -> np.ndarray:
    """Controls for a batch of states at a common time, shape (M, m)."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != p.d:
        raise ValueError(f"state dimension {X.shape[1]} != policy d={p.d}")
    return _forward(p, _input_batch(p, t, X))[-1]


def policy_eval(p: MlpPolicy, t: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("policy_eval expects a single state vector")
    return policy_eval_batch(p, t, x[None, :])[0]


def policy_vjp_batch(p: MlpPolicy, t: float, X: np.ndarray, ubar: np.ndarray):
    """Vector-Jacobian products for a batch of cotangents.

    Returns (grad_x, grad_theta): grad_x[i] = ubar[i]^T du/dx at X[i] (the time
    input column is dropped); grad_theta sums the per-sample parameter
    gradients, matching a cost that sums over the batch.
    """
    X = np.asarray(X, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    if ubar.shape != (X.shape[0], p.m):
        raise ValueError(f"cotangent shape {ubar.shape} != {(X.shape[0], p.m)}")
    acts = _forward(p, _input_batch(p, t, X))
    layers = list(_layers(p))
    grad_theta = np.empty_like(p.params)
    off = p.params.size
    delta = ubar
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        A_prev = acts[li]
        nout, nin = W.shape
        off -= nout
        grad_theta[off : off + nout] = delta.sum(axis=0)
        off -= nin * nout
        grad_theta[off : off + nin * nout] = (delta.T @ A_prev).ravel()
        delta = delta @ W
        if li > 0:
            delta = delta * (1.0 - acts[li] ** 2)
    return delta[:, 1:], grad_theta


def policy_vjp(p: MlpPolicy, t: float, x: np.ndarray, ubar: np.ndarray):
    x = np.asarray(x, dtype=float)
    gx, gtheta = policy_vjp_batch(p, t, x[None, :], np.asarray(ubar, dtype=float)[None, :])
    return gx[0], gtheta


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; pure function of its inputs."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError("theta, grad and moment arrays must share one shape")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient; the optimization step is rejected")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, step=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_theta, new_state


# ---------------------------------------------------------------------------
# checkpoints: JSON, lossless float round trip


def save_policy(p: MlpPolicy, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "layer_sizes": list(p.layer_sizes),
        "activation": p.activation,
        "params": [float(v) for v in p.params],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)  # repr round-trips 64-bit floats exactly
    return path


def load_policy(path, horizon: float) -> MlpPolicy:
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("layer_sizes", "activation", "params"):
        if key not in payload:
            raise ValueError(f"checkpoint is missing the {key!r} field")
    return MlpPolicy(
        layer_sizes=tuple(payload["layer_sizes"]),
        params=np.asarray(payload["params"], dtype=float),
        horizon=horizon,
        activation=payload["activation"],
    )
