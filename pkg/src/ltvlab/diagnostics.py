"""Moment formulas, sample-complexity closed forms and seed-variance studies.

Closed forms are evaluated exactly (integers / fractions) and converted to
float only at the end.  The Gaussian moment used throughout is
E[x^{2k}] = (2k-1)!! sigma^{2k}.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import rng as _rng
from .dynamics import DivergenceError
from .regress import condition_number
from .sampling import SamplingSpec, generate_dataset, split


def double_factorial(n: int) -> int:
    if n < -1:
        raise ValueError("double factorial defined for n >= -1")
    out = 1
    for k in range(n, 0, -2):
        out *= k
    return out


def _to_float(value, what: str) -> float:
    try:
        out = float(value)
    except OverflowError:
        raise OverflowError(f"{what} overflows float (about 10^{_log10(value):.1f})") from None
    if math.isinf(out):
        raise OverflowError(f"{what} overflows float (about 10^{_log10(value):.1f})")
    return out


def _log10(value) -> float:
    v = Fraction(value)
    if v == 0:
        return -math.inf
    return math.log10(abs(v.numerator)) - math.log10(v.denominator)


def gaussian_moment_exact(order: int, sigma=1) -> Fraction:
    if order < 0:
        raise ValueError("moment order must be >= 0")
    if order % 2:
        return Fraction(0)
    return double_factorial(order - 1) * Fraction(sigma) ** order


def gaussian_moment(order: int, sigma: float = 1.0) -> float:
    """E[x^order] for x ~ N(0, sigma^2)."""
    return _to_float(gaussian_moment_exact(order, sigma), f"E[x^{order}]")


def uniform_moment_exact(order: int, low=-1, high=1) -> Fraction:
    if order < 0:
        raise ValueError("moment order must be >= 0")
    a, b = Fraction(low), Fraction(high)
    if not b > a:
        raise ValueError("need low < high")
    return (b ** (order + 1) - a ** (order + 1)) / ((order + 1) * (b - a))


def uniform_moment(order: int, low: float = -1.0, high: float = 1.0) -> float:
    return _to_float(uniform_moment_exact(order, low, high), f"E[x^{order}]")


@dataclass(frozen=True)
class MomentSpec:
    distribution: str = "gaussian"  # or "uniform"
    order: int = 2
    n_samples: int = 10**6
    seed: int = 0
    sigma: float = 1.0
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.order < 0 or self.n_samples < 1:
            raise ValueError("need order >= 0 and n_samples >= 1")
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    def exact(self) -> float:
        if self.distribution == "gaussian":
            return gaussian_moment(self.order, self.sigma)
        return uniform_moment(self.order, self.low, self.high)


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    standard_error: float


def moment_mc(spec: MomentSpec, chunk: int = 1_000_000) -> MomentEstimate:
    """Sample mean of x^order with the CLT standard error s / sqrt(n)."""
    if spec.order == 0:
        return MomentEstimate(1.0, 0.0)
    gen = _rng.stream(spec.seed, _rng.STREAM_MOMENTS)
    n = spec.n_samples
    total = 0.0
    total_sq = 0.0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        if spec.distribution == "gaussian":
            x = gen.normal(0.0, spec.sigma, m)
        else:
            x = gen.uniform(spec.low, spec.high, m)
        v = x ** spec.order
        total += math.fsum(v)
        total_sq += math.fsum(v * v)
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return MomentEstimate(mean, math.sqrt(var / n))


SAMPLE_COMPLEXITY_FAMILIES = ("monomial", "hermite", "legendre")


def sample_complexity_exact(family: str, N: int, sigma=1) -> Fraction:
    """The closed forms inside O(.), evaluated as written.

    monomial  ((4N-1)!! - ((2N-1)!!)^2) sigma^{4N}   (variance of x^{2N})
    hermite   ((4N-1)!! - ((2N-1)!!)^2) / (N!)^2 sigma^{2N}
    legendre  (2N)!^2 4N^2 / ((N!)^4 (2N+1)^2 (4N+1)) sigma^{2N}
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    s = Fraction(sigma)
    core = double_factorial(4 * N - 1) - double_factorial(2 * N - 1) ** 2
    if family == "monomial":
        return core * s ** (4 * N)
    if family == "hermite":
        return Fraction(core, math.factorial(N) ** 2) * s ** (2 * N)
    if family == "legendre":
        num = math.factorial(2 * N) ** 2 * 4 * N * N
        den = math.factorial(N) ** 4 * (2 * N + 1) ** 2 * (4 * N + 1)
        return Fraction(num, den) * s ** (2 * N)
    raise ValueError(f"no closed form for family {family!r}")


def sample_complexity(family: str, N: int, sigma: float = 1.0) -> float:
    return _to_float(sample_complexity_exact(family, N, sigma), f"{family} sample complexity")


def _poly_coefficients(family: str, N: int) -> list[list[Fraction]]:
    """Row k holds the power-series coefficients of the k-th (unnormalized) polynomial."""
    rows = [[Fraction(0)] * (N + 1) for _ in range(N + 1)]
    if family == "monomial":
        for k in range(N + 1):
            rows[k][k] = Fraction(1)
        return rows
    rows[0][0] = Fraction(1)
    if N >= 1:
        rows[1][1] = Fraction(1)
    for k in range(1, N):
        for j in range(N + 1):
            shifted = rows[k][j - 1] if j else Fraction(0)
            if family == "hermite":  # He_{k+1} = x He_k - k He_{k-1}
                rows[k + 1][j] = shifted - k * rows[k - 1][j]
            else:  # (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
                rows[k + 1][j] = ((2 * k + 1) * shifted - k * rows[k - 1][j]) / (k + 1)
    return rows


def analytic_gram_exact(family: str, N: int, distribution: str = "gaussian", sigma=1, low=-1, high=1):
    """Exact moment Gram E[psi_k psi_l] of the 1-D basis of order N (unnormalized Hermite)."""
    pairs = {("monomial", "gaussian"), ("monomial", "uniform"), ("hermite", "gaussian"), ("legendre", "uniform")}
    if (family, distribution) not in pairs:
        raise ValueError(f"unsupported family/distribution pair ({family}, {distribution})")
    if N < 0:
        raise ValueError("order must be >= 0")
    if distribution == "gaussian":
        mom = [gaussian_moment_exact(k, sigma) for k in range(2 * N + 1)]
    else:
        mom = [uniform_moment_exact(k, low, high) for k in range(2 * N + 1)]
    C = _poly_coefficients(family, N)
    G = [[Fraction(0)] * (N + 1) for _ in range(N + 1)]
    for k in range(N + 1):
        for m in range(k, N + 1):
            s = sum(C[k][i] * C[m][j] * mom[i + j] for i in range(N + 1) for j in range(N + 1)
                    if C[k][i] and C[m][j])
            G[k][m] = G[m][k] = s
    return G


def analytic_gram(family: str, N: int, distribution: str = "gaussian", sigma: float = 1.0,
                  low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Moment Gram matching the normalization used by the basis module.

    Hermite features are He_k / sqrt(k!), so under N(0, 1) the result is the
    identity exactly.
    """
    G = analytic_gram_exact(family, N, distribution, sigma, low, high)
    out = np.array([[_to_float(v, "Gram entry") for v in row] for row in G])
    if family == "hermite":
        for k in range(N + 1):
            for m in range(N + 1):
                num = G[k][m]
                if num == 0:
                    out[k, m] = 0.0
                elif k == m and num == math.factorial(k):
                    out[k, m] = 1.0
                else:
                    out[k, m] = float(num) / math.sqrt(math.factorial(k) * math.factorial(m))
    return out


def analytic_condition(family: str, N: int, distribution: str = "gaussian", **kw) -> float:
    return condition_number(analytic_gram(family, N, distribution, **kw))


# ---------------------------------------------------------------- variance studies

def model_parameters(model) -> np.ndarray:
    if hasattr(model, "coef"):
        return np.asarray(model.coef, dtype=float).ravel()
    if hasattr(model, "theta"):
        return np.asarray(model.theta, dtype=float)
    raise TypeError(f"cannot extract parameters from {type(model).__name__}")


def pairwise_trajectory_distance(predictions) -> np.ndarray:
    """D[i, j] = max_t ||x_i(t) - x_j(t)|| over a stack (n, T+1, n_x)."""
    P = np.asarray(predictions, dtype=float)
    n = len(P)
    D = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        D[i, j] = D[j, i] = float(np.max(np.linalg.norm(P[i] - P[j], axis=1)))
    return D


def cosine_similarity(vectors) -> np.ndarray:
    V = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(V, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    U = V / norms[:, None]
    return U @ U.T


@dataclass
class VarianceStudyReport:
    family: str
    perturbation_level: float
    seeds: list
    coef_mean: np.ndarray
    coef_std: np.ndarray  # sample std (ddof=1) across successful seeds
    predictions: np.ndarray  # (n_ok, T+1, n_x) open-loop predictions for the nominal controls
    prediction_seeds: list
    failures: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.seeds) < 2:
            raise ValueError("a variance study needs at least 2 seeds")

    @property
    def median_std(self) -> float:
        return float(np.median(self.coef_std))

    @property
    def max_pairwise_distance(self) -> float:
        if len(self.predictions) < 2:
            return math.nan
        return float(pairwise_trajectory_distance(self.predictions).max())

    def summary(self) -> dict:
        return {"family": self.family, "perturbation_level": self.perturbation_level, "seeds": list(self.seeds),
                "n_predictions": len(self.predictions),
                "median_std": self.median_std, "max_std": float(np.max(self.coef_std)),
                "max_pairwise_distance": self.max_pairwise_distance,
                "failures": {str(k): v for k, v in self.failures.items()}}


def seed_variance_study(fit, system, nominal, sampling: SamplingSpec, seeds, family: str = "sindy",
                        predict=None) -> VarianceStudyReport:
    """Refit on freshly sampled data for every seed and measure the dispersion.

    ``fit(train, test, seed)`` returns a model; only the data seed varies, so
    any model-initialization seed must be fixed inside ``fit``.  ``predict(model,
    x0, controls)`` produces the open-loop prediction for the nominal controls.
    A failing seed is recorded in ``failures`` and the study continues.
    """
    from .sindy import rollout_predict

    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("a variance study needs at least 2 seeds")
    predict = predict or rollout_predict
    params, preds, pred_seeds, failures, extra = [], [], [], {}, {"models": {}}
    for s in seeds:
        try:
            data = generate_dataset(system, nominal, replace(sampling, seed=s))
            train, test = split(data, sampling.split_ratio, seed=s)
            model = fit(train, test, s)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError) as err:
            failures[s] = f"{type(err).__name__}: {err}"
            continue
        params.append(model_parameters(model))
        extra["models"][s] = model
        try:
            preds.append(predict(model, nominal.states[0], nominal.controls).states)
            pred_seeds.append(s)
        except (DivergenceError, ValueError) as err:
            failures[s] = f"prediction {type(err).__name__}: {err}"
    if len(params) < 2:
        raise RuntimeError(f"fewer than 2 seeds succeeded: {failures}")
    P = np.array(params)
    n_x = nominal.states.shape[1]
    preds_arr = np.array(preds) if preds else np.empty((0, nominal.horizon + 1, n_x))
    return VarianceStudyReport(family, sampling.perturbation_level, seeds, P.mean(axis=0), P.std(axis=0, ddof=1),
                               preds_arr, pred_seeds, failures, extra)
