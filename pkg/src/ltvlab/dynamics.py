"""Discrete-time black-box simulators.

Every system exposes the same surface: ``n_x``, ``n_u``, ``u_max``, ``dt``,
``angle_indices`` and ``step(x, u)``.  Angles follow the convention
theta = 0 upright, theta = pi hanging, and are never wrapped inside ``step``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, t: int, message: str = ""):
        self.t = t
        super().__init__(message or f"non-finite state at timestep {t}")


def _rk4(f, x, u, dt):
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler(f, x, u, dt):
    return x + dt * f(x, u)


INTEGRATORS = {"rk4": _rk4, "euler": _euler}


class System:
    """Base class for all simulators.  Subclasses define ``deriv`` or ``step``."""

    name = "system"
    n_x: int
    n_u: int
    angle_indices: tuple[int, ...] = ()

    def _check(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n_x,):
            raise DimensionError(f"{self.name}: state must have shape ({self.n_x},), got {x.shape}")
        if u.shape != (self.n_u,):
            raise DimensionError(f"{self.name}: control must have shape ({self.n_u},), got {u.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise ValueError(f"{self.name}: non-finite state or control")
        return x, u

    substeps: int = 1

    def _integrate(self, x, u):
        f = INTEGRATORS[self.integrator]
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            x = f(self.deriv, x, u, h)
        return x

    def step(self, x, u) -> np.ndarray:
        x, u = self._check(x, u)
        return self._integrate(x, u)

    def step_batch(self, X, U) -> np.ndarray:
        """Vectorized ``step`` over leading axes; bit-identical to the scalar path."""
        return self._integrate(np.asarray(X, dtype=float), np.asarray(U, dtype=float))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Pendulum(System):
    """Torque-driven pendulum, state [theta, omega]."""

    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.1
    dt: float = 0.05
    u_max: float = 10.0
    integrator: str = "rk4"
    substeps: int = 2  # integrator steps per dt

    name = "pendulum"
    n_x = 2
    n_u = 1
    angle_indices = (0,)

    def __post_init__(self):
        _validate(self)

    def deriv(self, x, u):
        theta, omega = x[..., 0], x[..., 1]
        inertia = self.mass * self.length**2
        alpha = (self.gravity / self.length) * np.sin(theta) + (u[..., 0] - self.damping * omega) / inertia
        return np.stack([omega, alpha], axis=-1)

    def energy(self, x) -> float:
        """Mechanical energy with the pivot as the potential reference."""
        theta, omega = x[..., 0], x[..., 1]
        return 0.5 * self.mass * self.length**2 * omega**2 + self.mass * self.gravity * self.length * np.cos(theta)

    def to_dict(self):
        return {"system": self.name, "mass": self.mass, "length": self.length, "gravity": self.gravity,
                "damping": self.damping, "dt": self.dt, "u_max": self.u_max, "integrator": self.integrator,
                "substeps": self.substeps}


@dataclass(frozen=True)
class CartPole(System):
    """Cart with a point-mass pole at distance ``length``, state [p, theta, p_dot, omega]."""

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    length: float = 0.5
    gravity: float = 9.81
    damping: float = 0.0
    dt: float = 0.05
    u_max: float = 20.0
    integrator: str = "rk4"
    substeps: int = 2

    name = "cartpole"
    n_x = 4
    n_u = 1
    angle_indices = (1,)

    def __post_init__(self):
        _validate(self)

    @property
    def mass(self):
        return self.cart_mass + self.pole_mass

    def deriv(self, x, u):
        theta, p_dot, omega = x[..., 1], x[..., 2], x[..., 3]
        mc, mp, l, g = self.cart_mass, self.pole_mass, self.length, self.gravity
        s, c = np.sin(theta), np.cos(theta)
        # (mc + mp) p_dd + mp l c th_dd = u + mp l s w^2
        # mp l c p_dd + mp l^2 th_dd = mp g l s - b w
        a11, a12 = mc + mp, mp * l * c
        a21, a22 = mp * l * c, mp * l * l
        r1 = u[..., 0] + mp * l * s * omega**2
        r2 = mp * g * l * s - self.damping * omega
        det = a11 * a22 - a12 * a21
        p_dd = (r1 * a22 - a12 * r2) / det
        th_dd = (a11 * r2 - a21 * r1) / det
        return np.stack([p_dot, omega, p_dd, th_dd], axis=-1)

    def energy(self, x) -> float:
        theta, p_dot, omega = x[..., 1], x[..., 2], x[..., 3]
        mc, mp, l = self.cart_mass, self.pole_mass, self.length
        vx = p_dot + l * np.cos(theta) * omega
        vy = -l * np.sin(theta) * omega
        kinetic = 0.5 * mc * p_dot**2 + 0.5 * mp * (vx**2 + vy**2)
        return kinetic + mp * self.gravity * l * np.cos(theta)

    def to_dict(self):
        return {"system": self.name, "cart_mass": self.cart_mass, "pole_mass": self.pole_mass,
                "length": self.length, "gravity": self.gravity, "damping": self.damping, "dt": self.dt,
                "u_max": self.u_max, "integrator": self.integrator, "substeps": self.substeps}


@dataclass(frozen=True, eq=False)
class LinearSystem(System):
    """Exact discrete map x' = M x + N u, used as a test bed."""

    M: np.ndarray = field(default_factory=lambda: np.eye(1))
    N: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))
    u_max: float = 1.0
    dt: float = 1.0

    name = "linear"
    angle_indices = ()

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        N = np.atleast_2d(np.asarray(self.N, dtype=float))
        if M.shape[0] != M.shape[1] or N.shape[0] != M.shape[0]:
            raise DimensionError(f"incompatible M {M.shape} and N {N.shape}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)

    @property
    def n_x(self):
        return self.M.shape[0]

    @property
    def n_u(self):
        return self.N.shape[1]

    def step(self, x, u):
        x, u = self._check(x, u)
        return self.step_batch(x, u)

    def step_batch(self, X, U):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        # elementwise products + last-axis sums keep scalar and batched results identical
        return (self.M * X[..., None, :]).sum(-1) + (self.N * U[..., None, :]).sum(-1)

    def to_dict(self):
        return {"system": self.name, "M": self.M.tolist(), "N": self.N.tolist(), "u_max": self.u_max, "dt": self.dt}


def _validate(sys):
    if sys.dt <= 0:
        raise ValueError("dt must be positive")
    if sys.u_max <= 0:
        raise ValueError("u_max must be positive")
    if sys.integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {sys.integrator!r}; choose from {sorted(INTEGRATORS)}")
    if int(sys.substeps) != sys.substeps or sys.substeps < 1:
        raise ValueError("substeps must be a positive integer")
    for name in ("mass", "length", "cart_mass", "pole_mass"):
        if hasattr(sys, name) and getattr(sys, name) <= 0:
            raise ValueError(f"{name} must be positive")


SYSTEMS = {"pendulum": Pendulum, "cartpole": CartPole}


def make_system(spec: dict) -> System:
    """Build a system from a config dictionary ``{"system": tag, **params}``."""
    spec = dict(spec)
    tag = spec.pop("system")
    if tag == "linear":
        return LinearSystem(**spec)
    if tag not in SYSTEMS:
        raise ValueError(f"unknown system {tag!r}")
    return SYSTEMS[tag](**spec)


@dataclass
class Trajectory:
    """States of shape (T+1, n_x) and controls of shape (T, n_u)."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float)
        if self.controls.ndim == 1:
            self.controls = self.controls.reshape(-1, 1)
        if len(self.states) != len(self.controls) + 1:
            raise DimensionError("trajectory needs len(states) == len(controls) + 1")

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def to_dict(self):
        return {"states": self.states.tolist(), "controls": self.controls.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["states"], dtype=float), np.array(d["controls"], dtype=float))


def step(system: System, state, control) -> np.ndarray:
    return system.step(state, control)


def rollout(system, x0, controls: Sequence) -> Trajectory:
    """Open-loop simulation; ``system`` may be anything with ``step``.

    Raises DivergenceError carrying the index of the first non-finite state.
    """
    controls = np.asarray(controls, dtype=float)
    n_u = system.n_u
    controls = controls.reshape(-1, n_u)
    states = np.empty((len(controls) + 1, system.n_x))
    states[0] = np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for t, u in enumerate(controls):
            nxt = system.step(states[t], u)
            if not np.all(np.isfinite(nxt)):
                raise DivergenceError(t + 1)
            states[t + 1] = nxt
    return Trajectory(states, controls)


def linearize_fd(system, state, control, eps: float = 1e-6):
    """Central-difference Jacobians (A, B) of ``system.step`` at (state, control)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    n_x, n_u = len(x), len(u)
    A = np.empty((n_x, n_x))
    B = np.empty((n_x, n_u))
    for j in range(n_x):
        h = eps * max(1.0, abs(x[j]))
        if h < np.finfo(float).tiny or x[j] + h == x[j]:
            raise ArithmeticError(f"eps={eps} underflows at state coordinate {j}")
        dx = np.zeros(n_x)
        dx[j] = h
        A[:, j] = (system.step(x + dx, u) - system.step(x - dx, u)) / (2 * h)
    for j in range(n_u):
        h = eps * max(1.0, abs(u[j]))
        if h < np.finfo(float).tiny or u[j] + h == u[j]:
            raise ArithmeticError(f"eps={eps} underflows at control coordinate {j}")
        du = np.zeros(n_u)
        du[j] = h
        B[:, j] = (system.step(x, u + du) - system.step(x, u - du)) / (2 * h)
    return A, B


def hessian_fd(system, state, control, eps: float = 1e-4):
    """Second derivatives of ``step`` by central differences of the FD Jacobians.

    Returns (h_xx, h_ux, h_uu) with shapes (n_x, n_x, n_x), (n_x, n_u, n_x) and
    (n_x, n_u, n_u); the leading axis indexes the output coordinate.
    """
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    n_x, n_u = len(x), len(u)
    jac_eps = eps * 1e-1
    h_xx = np.empty((n_x, n_x, n_x))
    h_ux = np.empty((n_x, n_u, n_x))
    h_uu = np.empty((n_x, n_u, n_u))
    for j in range(n_x):
        dx = np.zeros(n_x)
        dx[j] = eps
        Ap, Bp = linearize_fd(system, x + dx, u, jac_eps)
        Am, Bm = linearize_fd(system, x - dx, u, jac_eps)
        h_xx[:, :, j] = (Ap - Am) / (2 * eps)
        h_ux[:, :, j] = (Bp - Bm) / (2 * eps)
    for j in range(n_u):
        du = np.zeros(n_u)
        du[j] = eps
        _, Bp = linearize_fd(system, x, u + du, jac_eps)
        _, Bm = linearize_fd(system, x, u - du, jac_eps)
        h_uu[:, :, j] = (Bp - Bm) / (2 * eps)
    return h_xx, h_ux, h_uu


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi
