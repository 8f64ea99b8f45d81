"""Linear-in-parameters surrogate of the discrete map x_{t+1} = f(x_t, u_t).

Features are evaluated on the concatenated (state, control) vector and each
next-state coordinate is regressed through the normal equations.  With a
positive threshold the fit is sequentially thresholded: small coefficients are
zeroed and the survivors re-solved until the support stops changing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import regress
from .basis import BasisSet, design_matrix, evaluate_batch, gradient_batch, parse_spec
from .dynamics import DivergenceError, Trajectory

MAX_SWEEPS = 10


class EmptySupportError(regress.RankZeroError):
    pass


@dataclass
class SindyModel:
    basis: BasisSet
    coef: np.ndarray  # (n_features, n_x)
    n_x: int
    n_u: int
    meta: dict = field(default_factory=dict)
    name = "sindy"

    def predict_batch(self, X, U) -> np.ndarray:
        Z = np.hstack([np.atleast_2d(X), np.atleast_2d(U)])
        Psi = evaluate_batch(self.basis, Z)
        if not np.all(np.isfinite(Psi)):
            raise ValueError("non-finite feature values")
        return Psi @ self.coef

    def step(self, x, u) -> np.ndarray:
        return predict(self, x, u)

    def step_batch(self, X, U) -> np.ndarray:
        return self.predict_batch(X, U)

    def linearize(self, X, U):
        """Analytic Jacobians along rows of X, U: A (T, n_x, n_x), B (T, n_x, n_u)."""
        Z = np.hstack([np.atleast_2d(X), np.atleast_2d(U)])
        dpsi = gradient_batch(self.basis, Z)  # (T, n_feat, n_x + n_u)
        J = np.einsum("fo,tfi->toi", self.coef, dpsi)
        return J[:, :, :self.n_x], J[:, :, self.n_x:]

    def to_dict(self):
        return {"basis": self.basis.spec, "input_dim": self.basis.input_dim, "n_x": self.n_x, "n_u": self.n_u,
                "coef": self.coef.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        basis = parse_spec(d["basis"], d["input_dim"])
        return cls(basis, np.array(d["coef"], dtype=float), d["n_x"], d["n_u"], d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def fit(train, basis: BasisSet, threshold: float = 0.0, svd_cutoff: float = 1e-12,
        method: str = "exact") -> SindyModel:
    n_x, n_u = train.n_x, train.n_u
    if len(train) == 0:
        raise ValueError("empty training set")
    if basis.input_dim != n_x + n_u:
        raise ValueError(f"basis input_dim {basis.input_dim} != n_x + n_u = {n_x + n_u}")
    D = design_matrix(basis, train.inputs)
    G = regress.gram(D, method)
    F = regress.forcing(D, train.next_states, method)
    sol = regress.solve_normal(G, F, svd_cutoff)
    coef = np.asarray(sol.values, dtype=float).reshape(basis.n_features, n_x)
    supports = []
    if threshold > 0:
        for j in range(n_x):
            support = np.ones(basis.n_features, dtype=bool)
            c = coef[:, j].copy()
            sizes = [int(support.sum())]
            for _ in range(MAX_SWEEPS):
                new = support & (np.abs(c) >= threshold)
                if not new.any():
                    raise EmptySupportError(f"threshold {threshold} removes every feature of coordinate {j}")
                c = np.zeros(basis.n_features)
                idx = np.flatnonzero(new)
                sub = regress.solve_normal(G.matrix[np.ix_(idx, idx)], F.vector[idx, j], svd_cutoff)
                c[idx] = sub.values
                if np.array_equal(new, support):
                    break
                support = new
                sizes.append(int(support.sum()))
            coef[:, j] = c
            supports.append(sizes)
    resid = train.next_states - D.values @ coef
    meta = {"threshold": threshold, "svd_cutoff": svd_cutoff, "R": len(train), "cond": sol.cond,
            "residual_rms": float(np.sqrt(np.mean(resid**2))),
            "residual_max": float(np.max(np.abs(resid))),
            "seed": train.meta.get("seed"), "perturbation_level": train.meta.get("perturbation_level"),
            "support_sizes": supports}
    return SindyModel(basis, coef, n_x, n_u, meta)


def predict(model: SindyModel, state, control) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    if x.shape != (model.n_x,) or u.shape != (model.n_u,):
        raise ValueError("state/control dimensions do not match the model")
    return model.predict_batch(x[None], u[None])[0]


def rollout_predict(model, x0, controls) -> Trajectory:
    """Open-loop multi-step prediction; works for any model with ``step``."""
    controls = np.asarray(controls, dtype=float).reshape(-1, model.n_u)
    states = np.empty((len(controls) + 1, model.n_x))
    states[0] = x0
    with np.errstate(all="ignore"):
        for t, u in enumerate(controls):
            try:
                nxt = model.step(states[t], u)
            except ValueError as err:
                raise DivergenceError(t + 1, str(err)) from err
            if not np.all(np.isfinite(nxt)):
                raise DivergenceError(t + 1)
            states[t + 1] = nxt
    return Trajectory(states, controls)
