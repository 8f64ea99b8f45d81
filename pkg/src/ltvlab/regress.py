"""Normal-equation machinery: empirical Gram, forcing vector, SVD solve.

R is always the sample count here.  Sums over samples are computed on
value-sorted columns with a compensated pairwise reduction, so the result
depends only on the multiset of samples and not on their order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import DesignMatrix

_BLOCK_ELEMS = 4_000_000


class RankZeroError(np.linalg.LinAlgError):
    pass


def compensated_colsum(P: np.ndarray) -> np.ndarray:
    """Order-independent column sums of a 2-D array.

    Columns are sorted, then reduced pairwise with TwoSum error terms carried
    alongside.  The result is a function of each column's multiset.
    """
    s = np.sort(P, axis=0)
    m = s.shape[1]
    err = np.zeros(m)
    while len(s) > 1:
        if len(s) % 2:
            s = np.vstack([s, np.zeros((1, m))])
        a, b = s[0::2], s[1::2]
        t = a + b
        bp = t - a
        err += ((a - (t - bp)) + (b - bp)).sum(axis=0)
        s = t
    if len(s) == 0:
        return err
    return s[0] + err


def _pair_sums(A: np.ndarray, B: np.ndarray, pairs) -> np.ndarray:
    R = A.shape[0]
    out = np.empty(len(pairs))
    block = max(1, _BLOCK_ELEMS // max(R, 1))
    for start in range(0, len(pairs), block):
        chunk = pairs[start:start + block]
        P = np.stack([A[:, i] * B[:, j] for i, j in chunk], axis=1)
        out[start:start + len(chunk)] = compensated_colsum(P)
    return out


@dataclass
class GramMatrix:
    matrix: np.ndarray
    n_samples: int

    @property
    def n(self):
        return self.matrix.shape[0]


@dataclass
class ForcingVector:
    vector: np.ndarray  # (n,) or (n, n_out)
    n_samples: int


@dataclass
class Coefficients:
    values: np.ndarray
    cond: float
    sigma: np.ndarray
    n_truncated: int
    residual_rms: float | None = None
    diagnostics: dict = field(default_factory=dict)


def _values(design):
    return design.values if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)


def gram(design, method: str = "exact") -> GramMatrix:
    """(1/R) Psi' Psi.  ``method="fast"`` uses a BLAS product instead."""
    Psi = _values(design)
    R, n = Psi.shape
    if R < 1:
        raise ValueError("Gram matrix needs at least one sample")
    if method == "fast":
        G = Psi.T @ Psi / R
        G = 0.5 * (G + G.T)
    elif method == "exact":
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        sums = _pair_sums(Psi, Psi, pairs) / R
        G = np.empty((n, n))
        for (i, j), s in zip(pairs, sums):
            G[i, j] = G[j, i] = s
    else:
        raise ValueError(f"unknown summation method {method!r}")
    return GramMatrix(G, R)


def forcing(design, targets, method: str = "exact") -> ForcingVector:
    """(1/R) Psi' f for one target vector or several target columns."""
    Psi = _values(design)
    Y = np.asarray(targets, dtype=float)
    if Y.shape[0] != Psi.shape[0]:
        raise ValueError(f"{Y.shape[0]} targets for {Psi.shape[0]} samples")
    single = Y.ndim == 1
    Y2 = Y[:, None] if single else Y
    R = len(Y2)
    if method == "fast":
        F = Psi.T @ Y2 / R
    else:
        pairs = [(i, j) for i in range(Psi.shape[1]) for j in range(Y2.shape[1])]
        F = (_pair_sums(Psi, Y2, pairs) / R).reshape(Psi.shape[1], Y2.shape[1])
    return ForcingVector(F[:, 0] if single else F, R)


def solve_normal(G, F, svd_cutoff: float = 1e-12) -> Coefficients:
    """Minimum-norm solution of G c = F by truncated SVD.

    Singular values below ``svd_cutoff * sigma_max`` are discarded.
    """
    if svd_cutoff < 0:
        raise ValueError("svd_cutoff must be non-negative")
    Gm = G.matrix if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    Fv = F.vector if isinstance(F, ForcingVector) else np.asarray(F, dtype=float)
    if Gm.shape[0] != Gm.shape[1] or Gm.shape[0] != Fv.shape[0]:
        raise ValueError(f"shape mismatch: G {Gm.shape}, F {Fv.shape}")
    U, s, Vt = np.linalg.svd(Gm)
    if s.size == 0 or s[0] == 0:
        raise RankZeroError("Gram matrix is zero")
    keep = s > svd_cutoff * s[0] if svd_cutoff > 0 else s > 0
    if not keep.any():
        raise RankZeroError("all singular values truncated")
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    # column by column, so a joint solve matches the per-coordinate ones bit for bit
    if Fv.ndim == 2:
        C = np.stack([Vt.T @ (inv * (U.T @ np.ascontiguousarray(Fv[:, j]))) for j in range(Fv.shape[1])], axis=1)
    else:
        C = Vt.T @ (inv * (U.T @ Fv))
    cond = float(s[0] / s[keep][-1])
    diag = {"n": int(Gm.shape[0]), "cond": cond, "sigma_max": float(s[0]), "sigma_min": float(s[-1]),
            "n_truncated": int((~keep).sum())}
    return Coefficients(C, cond, s, int((~keep).sum()), None, diag)


def fit_least_squares(design, targets, svd_cutoff: float = 1e-12, method: str = "exact") -> Coefficients:
    """Gram, forcing and solve in one go, with the residual RMS filled in."""
    G = gram(design, method)
    F = forcing(design, targets, method)
    coef = solve_normal(G, F, svd_cutoff)
    Psi = _values(design)
    resid = np.asarray(targets, dtype=float) - Psi @ coef.values
    coef.residual_rms = float(np.sqrt(np.mean(resid**2)))
    coef.diagnostics.update(R=int(G.n_samples), residual_rms=coef.residual_rms)
    return coef


def condition_number(G) -> float:
    """sigma_max / sigma_min; +inf when sigma_min is zero to working precision."""
    Gm = G.matrix if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    s = np.linalg.svd(Gm, compute_uv=False)
    if s[0] == 0:
        return math.inf
    if s[-1] <= s[0] * Gm.shape[0] * np.finfo(float).eps:
        return math.inf
    return float(s[0] / s[-1])


def singular_values(G) -> np.ndarray:
    Gm = G.matrix if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    return np.linalg.svd(Gm, compute_uv=False)


def tail_bound(epsilon: float, sigma_g: float, R: int) -> float:
    """sigma_g / sqrt(2 pi R) * exp(-epsilon^2 R / sigma_g^2), evaluated as written.

    This is a density-style expression, not a normalized CDF tail; it is kept
    verbatim rather than corrected.
    """
    if not (epsilon > 0 and sigma_g > 0 and R >= 1):
        raise ValueError("need epsilon > 0, sigma_g > 0, R >= 1")
    if math.isinf(epsilon):
        return 0.0
    return sigma_g / math.sqrt(2 * math.pi * R) * math.exp(-(epsilon**2) * R / sigma_g**2)


def diagnostics_record(G: GramMatrix, coef: Coefficients | None = None) -> dict:
    s = singular_values(G)
    rec = {"R": int(G.n_samples), "n": int(G.n), "cond": condition_number(G),
           "sigma_min": float(s[-1]), "sigma_max": float(s[0]), "residual_rms": None}
    if coef is not None:
        rec["residual_rms"] = coef.residual_rms
    return rec
