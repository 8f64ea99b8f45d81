"""Local linear time-varying identification around a nominal trajectory.

For every timestep t the nominal pair (x_t, u_t) is perturbed independently,
pushed through one simulator step, and the deviations are regressed:

    [A_t  B_t]' = (dX' dX)^{-1} dX' dx_next,   dX = [dx_t  du_t]

with no intercept.  The regressor Gram matrices are retained so their
conditioning can be inspected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .dynamics import DivergenceError, Trajectory


class RankError(np.linalg.LinAlgError):
    def __init__(self, t: int, message: str = ""):
        self.t = t
        super().__init__(message or f"rank-deficient regressor at timestep {t}")


@dataclass
class LtvModel:
    A: np.ndarray  # (T, n_x, n_x)
    B: np.ndarray  # (T, n_x, n_u)
    nominal: Trajectory | None = None
    meta: dict = field(default_factory=dict)
    grams: np.ndarray | None = None  # (T, n_x+n_u, n_x+n_u), unnormalized dX'dX
    residual_mean: np.ndarray | None = None  # (T, n_x)

    @property
    def horizon(self):
        return len(self.A)

    def predict(self, t: int, dx, du):
        return predict(self, t, dx, du)

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "nominal_sha256": trajectory_hash(self.nominal) if self.nominal is not None else None,
            "meta": self.meta,
        }


def trajectory_hash(traj: Trajectory) -> str:
    payload = json.dumps(traj.to_dict(), separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def _draw(gen, shape, scale, distribution):
    if distribution == "gaussian":
        return gen.normal(0.0, scale, size=shape)
    if distribution == "uniform":
        # matched second moment: half-width sqrt(3) * std
        half = np.sqrt(3.0) * scale
        return gen.uniform(-half, half, size=shape)
    raise ValueError(f"unknown perturbation distribution {distribution!r}")


def identify(system, nominal: Trajectory, n_rollouts: int | None = None, state_scale: float = 1e-4,
             control_scale: float | None = None, seed: int | tuple = 0, *, method: str = "lls",
             distribution: str = "gaussian") -> LtvModel:
    """Estimate (A_t, B_t) along ``nominal`` from perturbed one-step rollouts.

    ``method="lls"`` draws random perturbations; ``method="lls-cd"`` uses the
    deterministic +/- scale perturbation of each coordinate, which makes the
    regression a central difference.  ``control_scale`` defaults to
    ``1e-4 * system.u_max``.
    """
    n_x, n_u = system.n_x, system.n_u
    n = n_x + n_u
    if control_scale is None:
        control_scale = 1e-4 * system.u_max
    if not (state_scale > 0 and control_scale > 0):
        raise ValueError("perturbation scales must be positive")
    T = nominal.horizon
    X = nominal.states
    U = nominal.controls
    scales = np.concatenate([np.full(n_x, state_scale), np.full(n_u, control_scale)])

    if method == "lls-cd":
        D = np.concatenate([np.diag(scales), -np.diag(scales)])
        deltas = np.broadcast_to(D, (T, 2 * n, n)).copy()
        n_rollouts = 2 * n
    elif method == "lls":
        if n_rollouts is None:
            n_rollouts = 4 * n
        if n_rollouts < n:
            raise RankError(0, f"n_rollouts={n_rollouts} < n_x + n_u = {n}; regression is underdetermined")
        key = seed if isinstance(seed, tuple) else (seed,)
        gen = _rng.stream(*key, _rng.STREAM_LTV)
        deltas = np.empty((T, n_rollouts, n))
        deltas[..., :n_x] = _draw(gen, (T, n_rollouts, n_x), state_scale, distribution)
        deltas[..., n_x:] = _draw(gen, (T, n_rollouts, n_u), control_scale, distribution)
    else:
        raise ValueError(f"unknown identification method {method!r}")

    xs = X[:T, None, :] + deltas[..., :n_x]
    us = U[:, None, :] + deltas[..., n_x:]
    nxt = system.step_batch(xs.reshape(-1, n_x), us.reshape(-1, n_u)).reshape(T, n_rollouts, n_x)
    bad = ~np.all(np.isfinite(nxt), axis=(1, 2))
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)) + 1)
    dnext = nxt - X[1:, None, :]

    A = np.empty((T, n_x, n_x))
    B = np.empty((T, n_x, n_u))
    grams = np.empty((T, n, n))
    resid_mean = np.empty((T, n_x))
    for t in range(T):
        dX = deltas[t]
        G = dX.T @ dX
        if np.linalg.matrix_rank(dX) < n:
            raise RankError(t)
        coef = np.linalg.solve(G, dX.T @ dnext[t])  # (n, n_x) = [A_t B_t]'
        A[t] = coef[:n_x].T
        B[t] = coef[n_x:].T
        grams[t] = G
        resid_mean[t] = (dnext[t] - dX @ coef).mean(axis=0)
    meta = {"n_rollouts": int(n_rollouts), "state_scale": state_scale, "control_scale": control_scale,
            "seed": list(seed) if isinstance(seed, tuple) else seed, "method": method, "distribution": distribution}
    return LtvModel(A, B, nominal, meta, grams, resid_mean)


def predict(model: LtvModel, t: int, dx, du):
    if not 0 <= t < model.horizon:
        raise IndexError(f"timestep {t} outside [0, {model.horizon})")
    return model.A[t] @ np.asarray(dx, dtype=float) + model.B[t] @ np.asarray(du, dtype=float)


def gram_conditioning(model: LtvModel, t: int) -> float:
    """Condition number of the regressor Gram dX'dX at timestep ``t``."""
    if model.grams is None:
        raise ValueError("model was built without retained fit internals")
    if not 0 <= t < model.horizon:
        raise IndexError(f"timestep {t} outside [0, {model.horizon})")
    from .regress import condition_number

    return condition_number(model.grams[t])


def rollout_deviation(model: LtvModel, dx0, du_seq) -> np.ndarray:
    """Propagate a deviation through the LTV chain; returns (T+1, n_x)."""
    du_seq = np.asarray(du_seq, dtype=float).reshape(model.horizon, -1)
    out = np.empty((model.horizon + 1, model.A.shape[1]))
    out[0] = dx0
    for t in range(model.horizon):
        out[t + 1] = predict(model, t, out[t], du_seq[t])
    return out
