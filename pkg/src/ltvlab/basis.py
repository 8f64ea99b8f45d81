"""Basis-function libraries and design matrices.

Families
--------
monomial   x^a products, total degree <= order
hermite    probabilists' Hermite He_k(x) / sqrt(k!), orthonormal under N(0, 1)
legendre   classical P_k(x) (unnormalized), orthogonal on [-1, 1]
poly_trig  monomials plus sin/cos of each configured angle coordinate

Multivariate features are products of univariate polynomials over multi-indices
of total degree <= order, in graded lexicographic order (degree first, then
exponents of earlier coordinates first).  Feature 0 is always the constant 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("monomial", "hermite", "legendre", "poly_trig")


def multi_indices(dim: int, order: int) -> np.ndarray:
    rows = []
    for deg in range(order + 1):
        level = [a for a in itertools.product(range(deg + 1), repeat=dim) if sum(a) == deg]
        level.sort(reverse=True)
        rows.extend(level)
    return np.array(rows, dtype=int).reshape(-1, dim)


def feature_count(family: str, order: int, input_dim: int, n_angles: int = 0) -> int:
    n = math.comb(input_dim + order, order)
    return n + 2 * n_angles if family == "poly_trig" else n


@dataclass(frozen=True, eq=False)
class BasisSet:
    family: str
    order: int
    input_dim: int
    angles: tuple[int, ...] = ()
    exponents: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported basis family {self.family!r}; choose from {FAMILIES}")
        if self.order < 0 or self.input_dim < 1:
            raise ValueError("need order >= 0 and input_dim >= 1")
        if any(not 0 <= a < self.input_dim for a in self.angles):
            raise ValueError(f"angle indices {self.angles} out of range for dim {self.input_dim}")
        if self.angles and self.family != "poly_trig":
            raise ValueError("angle coordinates only apply to the poly_trig family")
        object.__setattr__(self, "angles", tuple(int(a) for a in self.angles))
        object.__setattr__(self, "exponents", multi_indices(self.input_dim, self.order))

    @property
    def n_features(self) -> int:
        return len(self.exponents) + 2 * len(self.angles)

    @property
    def spec(self) -> str:
        return format_spec(self)

    def names(self, variables=None) -> list[str]:
        variables = variables or [f"z{i}" for i in range(self.input_dim)]
        sym = {"monomial": "", "poly_trig": "", "hermite": "He", "legendre": "P"}[self.family]
        out = []
        for a in self.exponents:
            parts = []
            for v, k in zip(variables, a):
                if k == 0:
                    continue
                if sym:
                    parts.append(f"{sym}{k}({v})")
                else:
                    parts.append(v if k == 1 else f"{v}^{k}")
            out.append("*".join(parts) or "1")
        for i in self.angles:
            out += [f"sin({variables[i]})", f"cos({variables[i]})"]
        return out

    def __eq__(self, other):
        return isinstance(other, BasisSet) and self.spec == other.spec and self.input_dim == other.input_dim

    def __hash__(self):
        return hash((self.spec, self.input_dim))


def make_basis(family: str, order: int, input_dim: int, angles=()) -> BasisSet:
    return BasisSet(family, int(order), int(input_dim), tuple(angles))


def _univariate(family: str, x: np.ndarray, order: int) -> np.ndarray:
    """Values p_0..p_order at x; returns shape x.shape + (order+1,)."""
    out = np.empty(x.shape + (order + 1,))
    out[..., 0] = 1.0
    if order == 0:
        return out
    out[..., 1] = x
    if family in ("monomial", "poly_trig"):
        for k in range(2, order + 1):
            out[..., k] = out[..., k - 1] * x
    elif family == "hermite":
        for k in range(1, order):
            out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
        out /= np.sqrt([math.factorial(k) for k in range(order + 1)])
    elif family == "legendre":
        for k in range(1, order):
            out[..., k + 1] = ((2 * k + 1) * x * out[..., k] - k * out[..., k - 1]) / (k + 1)
    return out


def _univariate_deriv(family: str, x: np.ndarray, order: int) -> np.ndarray:
    vals = _univariate(family, x, order)
    d = np.zeros_like(vals)
    if family in ("monomial", "poly_trig"):
        for k in range(1, order + 1):
            d[..., k] = k * vals[..., k - 1]
    elif family == "hermite":
        # He_k' = k He_{k-1}; normalized: sqrt(k) * psi_{k-1}
        for k in range(1, order + 1):
            d[..., k] = np.sqrt(k) * vals[..., k - 1]
    elif family == "legendre":
        # P'_{k+1} = P'_{k-1} + (2k+1) P_k
        if order >= 1:
            d[..., 1] = 1.0
        for k in range(1, order):
            d[..., k + 1] = d[..., k - 1] + (2 * k + 1) * vals[..., k]
    return vals, d


def evaluate_batch(basis: BasisSet, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != basis.input_dim:
        raise ValueError(f"inputs must have shape (R, {basis.input_dim}), got {X.shape}")
    uni = _univariate(basis.family, X, basis.order)  # (R, d, order+1)
    R = len(X)
    out = np.empty((R, basis.n_features))
    n_poly = len(basis.exponents)
    cols = np.arange(basis.input_dim)
    for i, a in enumerate(basis.exponents):
        out[:, i] = np.prod(uni[:, cols, a], axis=1)
    for j, idx in enumerate(basis.angles):
        out[:, n_poly + 2 * j] = np.sin(X[:, idx])
        out[:, n_poly + 2 * j + 1] = np.cos(X[:, idx])
    return out


def evaluate(basis: BasisSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.input_dim,):
        raise ValueError(f"input must have shape ({basis.input_dim},), got {x.shape}")
    return evaluate_batch(basis, x[None])[0]


def gradient_batch(basis: BasisSet, X) -> np.ndarray:
    """d psi_i / d z_j for every row; shape (R, n_features, input_dim)."""
    X = np.asarray(X, dtype=float)
    vals, ders = _univariate_deriv(basis.family, X, basis.order)
    R, d = X.shape
    cols = np.arange(d)
    out = np.zeros((R, basis.n_features, d))
    for i, a in enumerate(basis.exponents):
        picked = vals[:, cols, a]  # (R, d)
        dpicked = ders[:, cols, a]
        for j in range(d):
            if a[j] == 0:
                continue
            prod = dpicked[:, j].copy()
            for m in range(d):
                if m != j:
                    prod *= picked[:, m]
            out[:, i, j] = prod
    n_poly = len(basis.exponents)
    for k, idx in enumerate(basis.angles):
        out[:, n_poly + 2 * k, idx] = np.cos(X[:, idx])
        out[:, n_poly + 2 * k + 1, idx] = -np.sin(X[:, idx])
    return out


@dataclass
class DesignMatrix:
    values: np.ndarray  # (R, n)
    basis: BasisSet
    source: str = ""

    @property
    def n_samples(self):
        return self.values.shape[0]


def design_matrix(basis: BasisSet, inputs, source: str = "") -> DesignMatrix:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1 and basis.input_dim == 1:
        inputs = inputs[:, None]
    if len(inputs) == 0:
        raise ValueError("design matrix needs at least one input")
    values = evaluate_batch(basis, inputs)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature values")
    return DesignMatrix(values, basis, source)


def parse_spec(text: str, input_dim: int) -> BasisSet:
    """Parse ``family:order[:angles=i,j]``."""
    parts = text.strip().split(":")
    if len(parts) < 2:
        raise ValueError(f"basis spec {text!r} must look like family:order[:angles=i,j]")
    family, order = parts[0], int(parts[1])
    angles: tuple[int, ...] = ()
    for extra in parts[2:]:
        key, _, val = extra.partition("=")
        if key != "angles":
            raise ValueError(f"unknown basis option {key!r}")
        angles = tuple(int(v) for v in val.split(",") if v != "")
    return make_basis(family, order, input_dim, angles)


def format_spec(basis: BasisSet) -> str:
    s = f"{basis.family}:{basis.order}"
    if basis.angles:
        s += ":angles=" + ",".join(str(a) for a in basis.angles)
    return s
