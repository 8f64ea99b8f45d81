"""Iterative LQR with line search and Levenberg-style regularization.

Sign convention: the backward pass returns feedforward ``k_t = -Quu^{-1} Qu``
and feedback ``K_t = -Quu^{-1} Qux``; the forward pass applies

    u_t = u_prev_t + alpha * k_t + K_t (x_t - x_prev_t).

The dynamics Jacobians come from one of three sources, chosen by
``IlqrOptions.model``: ``"ltv"`` re-identifies a local LTV model from
perturbed simulator rollouts around every new nominal, ``"fd"`` uses central
differences of the simulator, and ``"surrogate"`` linearizes a frozen learned
model (which is then also used for the rollouts).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import ltv as _ltv
from .dynamics import DivergenceError, Trajectory, hessian_fd, linearize_fd, rollout, wrap_angle

log = logging.getLogger(__name__)


class IlqrError(RuntimeError):
    pass


@dataclass
class CostSpec:
    """Quadratic tracking cost around ``target``.

    running:  0.5 d' Q d + 0.5 u' R u,   terminal: 0.5 d_T' Q_T d_T,
    where d = x - target with the ``wrap`` coordinates wrapped to [-pi, pi).
    """

    Q: np.ndarray
    R: np.ndarray
    Q_T: np.ndarray
    target: np.ndarray
    horizon: int
    wrap: tuple[int, ...] = ()

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Q_T = np.atleast_2d(np.asarray(self.Q_T, dtype=float))
        self.target = np.asarray(self.target, dtype=float)
        self.wrap = tuple(int(i) for i in self.wrap)
        if not np.allclose(self.R, self.R.T):
            raise ValueError("R must be symmetric")
        if np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise ValueError("R must be positive definite")
        for name in ("Q", "R", "Q_T", "target"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    def diff(self, x):
        d = np.asarray(x, dtype=float) - self.target
        if self.wrap:
            d = d.copy()
            d[..., list(self.wrap)] = wrap_angle(d[..., list(self.wrap)])
        return d

    def running(self, x, u) -> float:
        d = self.diff(x)
        u = np.asarray(u, dtype=float)
        return 0.5 * d @ self.Q @ d + 0.5 * u @ self.R @ u

    def terminal(self, x) -> float:
        d = self.diff(x)
        return 0.5 * d @ self.Q_T @ d

    def to_dict(self):
        return {"Q": self.Q.tolist(), "R": self.R.tolist(), "Q_T": self.Q_T.tolist(),
                "target": self.target.tolist(), "horizon": self.horizon, "wrap": list(self.wrap)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["Q"], d["R"], d["Q_T"], d["target"], int(d["horizon"]), tuple(d.get("wrap", ())))


def evaluate_cost(cost: CostSpec, traj: Trajectory) -> float:
    if traj.horizon != cost.horizon:
        raise ValueError(f"trajectory horizon {traj.horizon} != cost horizon {cost.horizon}")
    with np.errstate(over="ignore", invalid="ignore"):
        total = sum(cost.running(x, u) for x, u in zip(traj.states[:-1], traj.controls))
        return float(total + cost.terminal(traj.states[-1]))


@dataclass
class IlqrOptions:
    eps: float = 1e-6  # relative cost-change threshold
    alpha_init: float = 1.0
    alpha_decay: float = 0.5
    alpha_min: float = 1e-3
    mu_init: float = 0.0
    mu_first: float = 1e-6
    mu_factor: float = 10.0
    mu_max: float = 1e10
    max_iter: int = 200
    gain_tol: float = 1e-2
    model: str = "ltv"  # "ltv" | "fd" | "surrogate"
    ltv_rollouts: int | None = None
    ltv_state_scale: float = 1e-4
    ltv_control_scale: float | None = None
    ltv_method: str = "lls"
    seed: int = 0
    saturate: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.alpha_decay < 1:
            raise ValueError("alpha_decay must lie in (0, 1)")
        if self.model not in ("ltv", "fd", "surrogate"):
            raise ValueError(f"unknown model source {self.model!r}")

    def alphas(self):
        a = self.alpha_init
        while a >= self.alpha_min:
            yield a
            a *= self.alpha_decay

    def raise_mu(self, mu):
        return max(self.mu_first, mu * self.mu_factor)

    def lower_mu(self, mu):
        mu = mu / self.mu_factor
        return 0.0 if mu < self.mu_first else mu


@dataclass
class Gains:
    k: np.ndarray  # (T, n_u)
    K: np.ndarray  # (T, n_u, n_x)
    v: np.ndarray  # (T+1, n_x) value gradient
    V: np.ndarray  # (T+1, n_x, n_x) value Hessian


@dataclass
class IlqrTask:
    system: object  # true simulator
    x0: np.ndarray
    cost: CostSpec
    u_init: np.ndarray
    surrogate: object | None = None


@dataclass
class IlqrSolution:
    trajectory: Trajectory
    gains: Gains
    cost_history: list
    log: list = field(default_factory=list)  # dicts: iter, cost, alpha, mu, accepted
    converged: bool = False
    iterations: int = 0
    status: str = ""
    saturated_steps: int = 0

    @property
    def controls(self):
        return self.trajectory.controls

    def to_dict(self):
        return {
            "trajectory": self.trajectory.to_dict(),
            "k": self.gains.k.tolist(),
            "K": self.gains.K.tolist(),
            "cost_history": list(self.cost_history),
            "converged": self.converged,
            "iterations": self.iterations,
            "status": self.status,
            "saturated_steps": self.saturated_steps,
        }


def backward_pass(ltv, cost: CostSpec, nominal: Trajectory, mu: float = 0.0, hessians=None):
    """One regularized backward sweep.

    ``ltv`` is anything with ``A`` (T, n_x, n_x) and ``B`` (T, n_x, n_u).
    ``hessians`` optionally holds per-timestep (h_xx, h_ux, h_uu) tensors for a
    second-order (DDP) sweep.  Returns ``(gains, ok)``; on failure gains is None.
    """
    A, B = np.asarray(ltv.A), np.asarray(ltv.B)
    T, n_x, n_u = B.shape
    X, U = nominal.states, nominal.controls
    if len(U) != T:
        raise ValueError("LTV model and nominal horizons differ")
    k = np.zeros((T, n_u))
    K = np.zeros((T, n_u, n_x))
    v = np.zeros((T + 1, n_x))
    V = np.zeros((T + 1, n_x, n_x))
    v[T] = cost.Q_T @ cost.diff(X[T])
    V[T] = cost.Q_T
    reg = mu * np.eye(n_x)
    for t in range(T - 1, -1, -1):
        At, Bt = A[t], B[t]
        Jx, Jxx = v[t + 1], V[t + 1]
        Qx = cost.Q @ cost.diff(X[t]) + At.T @ Jx
        Qu = cost.R @ U[t] + Bt.T @ Jx
        Qxx = cost.Q + At.T @ Jxx @ At
        Qux = Bt.T @ (Jxx + reg) @ At
        Quu = cost.R + Bt.T @ (Jxx + reg) @ Bt
        if hessians is not None:
            hxx, hux, huu = hessians[t]
            Qxx = Qxx + np.tensordot(Jx, hxx, axes=1)
            Qux = Qux + np.tensordot(Jx, hux, axes=1)
            Quu = Quu + np.tensordot(Jx, huu, axes=1)
        Quu = 0.5 * (Quu + Quu.T)
        try:
            L = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            return None, False
        if not np.all(np.isfinite(L)):
            return None, False
        kt = -_chol_solve(L, Qu)
        Kt = -_chol_solve(L, Qux)
        k[t], K[t] = kt, Kt
        v[t] = Qx + Kt.T @ Quu @ kt + Kt.T @ Qu + Qux.T @ kt
        Vt = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
        V[t] = 0.5 * (Vt + Vt.T)
    return Gains(k, K, v, V), True


def _chol_solve(L, b):
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def _step_fn(model, saturate_at=None):
    if saturate_at is None:
        return model.step
    return lambda x, u: model.step(x, np.clip(u, -saturate_at, saturate_at))


def forward_pass(model, nominal: Trajectory, gains: Gains, alpha: float, cost: CostSpec | None = None,
                 ref_cost: float | None = None, saturate_at: float | None = None):
    """Closed-loop rollout of the update law around ``nominal``.

    Returns ``(trajectory, new_cost, accepted)``.  With ``cost`` and ``ref_cost``
    given, the step is accepted iff the new cost is strictly lower; a divergent
    rollout is always rejected and the previous nominal returned.
    """
    X_prev, U_prev = nominal.states, nominal.controls
    T = len(U_prev)
    X = np.empty_like(X_prev)
    U = np.empty_like(U_prev)
    X[0] = X_prev[0]
    step = model.step
    try:
        with np.errstate(all="ignore"):
            for t in range(T):
                u = U_prev[t] + alpha * gains.k[t] + gains.K[t] @ (X[t] - X_prev[t])
                if saturate_at is not None:
                    u = np.clip(u, -saturate_at, saturate_at)
                U[t] = u
                nxt = step(X[t], u)
                if not np.all(np.isfinite(nxt)):
                    raise DivergenceError(t + 1)
                X[t + 1] = nxt
    except (DivergenceError, ValueError, FloatingPointError):
        return nominal, ref_cost, False
    traj = Trajectory(X, U)
    if cost is None:
        return traj, None, True
    new_cost = evaluate_cost(cost, traj)
    if not np.isfinite(new_cost):
        return nominal, ref_cost, False
    accepted = ref_cost is None or new_cost < ref_cost
    return (traj, new_cost, True) if accepted else (nominal, ref_cost, False)


def _linearizer(task: IlqrTask, opts: IlqrOptions) -> Callable:
    if opts.model == "ltv":
        def lin(nominal, iteration):
            return _ltv.identify(task.system, nominal, opts.ltv_rollouts, opts.ltv_state_scale,
                                 opts.ltv_control_scale, seed=(opts.seed, iteration), method=opts.ltv_method)
        return lin
    if opts.model == "fd":
        def lin(nominal, iteration):
            pairs = [linearize_fd(task.system, x, u) for x, u in zip(nominal.states[:-1], nominal.controls)]
            return _ltv.LtvModel(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]), nominal)
        return lin
    if task.surrogate is None:
        raise ValueError("surrogate mode needs task.surrogate")

    def lin(nominal, iteration):
        A, B = task.surrogate.linearize(nominal.states[:-1], nominal.controls)
        return _ltv.LtvModel(A, B, nominal)
    return lin


def _max_gain(gains: Gains) -> float:
    return float(np.max(np.linalg.norm(gains.k, axis=1))) if len(gains.k) else 0.0


def solve(task: IlqrTask, opts: IlqrOptions | None = None) -> IlqrSolution:
    """Run ILQR until the relative cost improvement drops below ``opts.eps``.

    The loop also stops, converged, as soon as a backward pass yields feedforward
    gains below ``opts.gain_tol``.  A stop on the cost criterion counts as
    converged only when the gains at the returned nominal are below the same
    tolerance.
    """
    opts = opts or IlqrOptions()
    if opts.model == "surrogate" and task.surrogate is None:
        raise ValueError("surrogate mode needs task.surrogate")
    cost = task.cost
    model = task.surrogate if opts.model == "surrogate" else task.system
    sat = task.system.u_max if opts.saturate else None
    u_init = np.asarray(task.u_init, dtype=float).reshape(cost.horizon, -1)
    if sat is not None:
        u_init = np.clip(u_init, -sat, sat)
    try:
        nominal = rollout(model, task.x0, u_init)
    except DivergenceError as err:
        raise IlqrError(f"initial rollout diverged at t={err.t}") from err
    J = evaluate_cost(cost, nominal)
    history = [J]
    log_rows = [{"iter": 0, "cost": J, "alpha": 0.0, "mu": opts.mu_init, "accepted": True}]
    lin = _linearizer(task, opts)
    mu = opts.mu_init
    converged = False
    status = "max_iter"
    accepted_iters = 0
    lin_iter = 0
    ltv = lin(nominal, lin_iter)
    gains = None
    for it in range(1, opts.max_iter + 1):
        gains, ok = backward_pass(ltv, cost, nominal, mu)
        if not ok:
            mu = opts.raise_mu(mu)
            log_rows.append({"iter": it, "cost": J, "alpha": 0.0, "mu": mu, "accepted": False})
            if mu > opts.mu_max:
                status = "regularization_limit"
                break
            continue
        if _max_gain(gains) < opts.gain_tol:
            converged, status = True, "gains"
            break
        accepted = False
        for alpha in opts.alphas():
            traj, J_new, accepted = forward_pass(model, nominal, gains, alpha, cost, J, sat)
            if accepted:
                break
        log_rows.append({"iter": it, "cost": J_new if accepted else J, "alpha": alpha if accepted else 0.0,
                         "mu": mu, "accepted": accepted})
        if not accepted:
            mu = opts.raise_mu(mu)
            if mu > opts.mu_max:
                status = "line_search_exhausted"
                break
            continue
        rel = (J - J_new) / max(abs(J), 1e-300)
        nominal, J = traj, J_new
        history.append(J)
        accepted_iters += 1
        mu = opts.lower_mu(mu)
        lin_iter += 1
        ltv = lin(nominal, lin_iter)
        if rel < opts.eps:
            status = "cost"
            break
    # gains for the returned nominal, smallest regularization that works
    final, mu_f = None, 0.0
    while final is None and mu_f <= opts.mu_max:
        final, ok = backward_pass(ltv, cost, nominal, mu_f)
        mu_f = opts.raise_mu(mu_f)
    if final is None:
        final = gains if gains is not None else Gains(np.zeros((cost.horizon, task.system.n_u)),
                                                      np.zeros((cost.horizon, task.system.n_u, task.system.n_x)),
                                                      np.zeros((cost.horizon + 1, task.system.n_x)),
                                                      np.zeros((cost.horizon + 1, task.system.n_x, task.system.n_x)))
    if status in ("cost", "line_search_exhausted"):
        converged = _max_gain(final) < opts.gain_tol
    n_sat = int(np.sum(np.abs(nominal.controls) > task.system.u_max)) if sat is None else \
        int(np.sum(np.abs(nominal.controls) >= task.system.u_max))
    if n_sat:
        log.info("controls at or beyond u_max on %d timesteps", n_sat)
    return IlqrSolution(nominal, final, history, log_rows, converged, accepted_iters, status, n_sat)


def ddp_feedback(system, nominal: Trajectory, cost: CostSpec, mu: float = 0.0, eps: float = 1e-4):
    """Second-order backward pass around a converged nominal; returns K (T, n_u, n_x).

    Closed-loop execution is ``u_t = u_bar_t + K_t (x_t - x_bar_t)``.
    """
    T = nominal.horizon
    A, B, hess = [], [], []
    for x, u in zip(nominal.states[:-1], nominal.controls):
        a, b = linearize_fd(system, x, u)
        A.append(a)
        B.append(b)
        hess.append(hessian_fd(system, x, u, eps))
    lin = _ltv.LtvModel(np.array(A), np.array(B), nominal)
    gains, ok = backward_pass(lin, cost, nominal, mu, hessians=hess)
    if not ok:
        raise IlqrError("Quu not positive definite in DDP feedback pass")
    assert len(gains.K) == T
    return gains.K


def closed_loop_rollout(system, nominal: Trajectory, K, x0):
    """Execute the nominal controls with linear state feedback from ``x0``."""
    X = np.empty_like(nominal.states)
    U = np.empty_like(nominal.controls)
    X[0] = x0
    for t in range(nominal.horizon):
        U[t] = nominal.controls[t] + K[t] @ (X[t] - nominal.states[t])
        X[t + 1] = system.step(X[t], U[t])
    return Trajectory(X, U)


def options_from_dict(d: dict) -> IlqrOptions:
    unknown = set(d) - set(IlqrOptions.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown ILQR options {sorted(unknown)}")
    return IlqrOptions(**d)


def options_to_dict(opts: IlqrOptions) -> dict:
    return asdict(opts)
