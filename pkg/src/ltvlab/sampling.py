"""Training data from perturbed rollouts of a nominal control sequence.

Perturbing the nominal controls implicitly defines the sampling distribution
over the state space.  Each trajectory draws its noise from its own stream
``(seed, STREAM_DATASET, index)``, so any subset of trajectories can be
regenerated on its own and serial / batched generation agree bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .dynamics import DivergenceError, Trajectory

CSV_SCHEMA = "# ltvlab-csv version=1 kind=dataset"


class TrajectoryDivergence(DivergenceError):
    def __init__(self, trajectory: int, t: int):
        self.trajectory = trajectory
        super().__init__(t, f"trajectory {trajectory} diverged at timestep {t}")


@dataclass
class SamplingSpec:
    perturbation_level: float = 0.1  # fraction of u_max
    n_trajectories: int = 2000
    seed: int = 0
    split_ratio: float = 0.9
    distribution: str = "uniform"  # or "gaussian" (std = level * u_max)

    def __post_init__(self):
        if self.perturbation_level < 0:
            raise ValueError("perturbation_level must be >= 0")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown perturbation distribution {self.distribution!r}")


@dataclass
class Dataset:
    states: np.ndarray  # (N, n_x)
    controls: np.ndarray  # (N, n_u)
    next_states: np.ndarray  # (N, n_x)
    traj: np.ndarray  # (N,) trajectory id
    t: np.ndarray  # (N,) timestep
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    @property
    def n_x(self):
        return self.states.shape[1]

    @property
    def n_u(self):
        return self.controls.shape[1]

    @property
    def inputs(self):
        """Concatenated (state, control) rows."""
        return np.hstack([self.states, self.controls])

    @property
    def trajectory_ids(self):
        return np.unique(self.traj)

    def subset(self, traj_ids) -> "Dataset":
        mask = np.isin(self.traj, np.asarray(traj_ids))
        meta = dict(self.meta, n_trajectories=int(len(np.unique(self.traj[mask]))))
        return Dataset(self.states[mask], self.controls[mask], self.next_states[mask],
                       self.traj[mask], self.t[mask], meta)


def perturb_controls(nominal, level: float, u_max: float, gen: np.random.Generator,
                     distribution: str = "uniform") -> np.ndarray:
    """nominal + delta, delta i.i.d. per component, saturated to [-u_max, u_max].

    ``uniform`` draws delta on [-level*u_max, level*u_max]; ``gaussian`` uses
    standard deviation level*u_max.  Level 0 returns the nominal untouched.
    """
    if level < 0:
        raise ValueError("perturbation level must be >= 0")
    nominal = np.asarray(nominal, dtype=float)
    if level == 0:
        return nominal.copy()
    width = level * u_max
    if distribution == "uniform":
        delta = gen.uniform(-width, width, size=nominal.shape)
    elif distribution == "gaussian":
        delta = gen.normal(0.0, width, size=nominal.shape)
    else:
        raise ValueError(f"unknown perturbation distribution {distribution!r}")
    return np.clip(nominal + delta, -u_max, u_max)


def generate_dataset(system, nominal: Trajectory, spec: SamplingSpec) -> Dataset:
    T = nominal.horizon
    n_x, n_u = system.n_x, system.n_u
    if nominal.states.shape[1] != n_x or nominal.controls.shape[1] != n_u:
        raise ValueError("nominal trajectory does not match the system dimensions")
    n = spec.n_trajectories
    U = np.empty((n, T, n_u))
    for i in range(n):
        gen = _rng.stream(spec.seed, _rng.STREAM_DATASET, i)
        U[i] = perturb_controls(nominal.controls, spec.perturbation_level, system.u_max, gen, spec.distribution)
    X = np.empty((n, T + 1, n_x))
    X[:, 0] = nominal.states[0]
    with np.errstate(all="ignore"):
        for t in range(T):
            X[:, t + 1] = system.step_batch(X[:, t], U[:, t])
            bad = ~np.all(np.isfinite(X[:, t + 1]), axis=1)
            if bad.any():
                raise TrajectoryDivergence(int(np.argmax(bad)), t + 1)
    meta = {"seed": spec.seed, "perturbation_level": spec.perturbation_level, "n_trajectories": n,
            "horizon": T, "system": system.name, "distribution": spec.distribution}
    return Dataset(
        states=X[:, :-1].reshape(-1, n_x),
        controls=U.reshape(-1, n_u),
        next_states=X[:, 1:].reshape(-1, n_x),
        traj=np.repeat(np.arange(n), T),
        t=np.tile(np.arange(T), n),
        meta=meta,
    )


def split(dataset: Dataset, ratio: float, gen: np.random.Generator | None = None, seed: int | None = None):
    """Random partition by trajectory into (train, test)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    ids = dataset.trajectory_ids
    if len(ids) == 0:
        raise ValueError("cannot split an empty dataset")
    if gen is None:
        gen = _rng.stream(dataset.meta.get("seed", 0) if seed is None else seed, _rng.STREAM_SPLIT)
    perm = gen.permutation(ids)
    n_train = int(round(ratio * len(ids)))
    if len(ids) >= 2:
        n_train = min(max(n_train, 1), len(ids) - 1)
    train_ids = np.sort(perm[:n_train])
    test_ids = np.sort(perm[n_train:])
    return dataset.subset(train_ids), dataset.subset(test_ids)


def trajectory_set(dataset: Dataset) -> np.ndarray:
    """States of each trajectory, shape (n_traj, T+1, n_x)."""
    out = []
    for i in dataset.trajectory_ids:
        m = dataset.traj == i
        out.append(np.vstack([dataset.states[m], dataset.next_states[m][-1:]]))
    return np.array(out)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(dataset: Dataset, path) -> list[Path]:
    """Write ``path`` plus a ``.json`` sidecar holding the metadata."""
    path = Path(path)
    n_x, n_u = dataset.n_x, dataset.n_u
    header = ["traj", "t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)] + \
        [f"xn{i}" for i in range(n_x)]
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(dataset)):
            w.writerow([int(dataset.traj[k]), int(dataset.t[k])] +
                       [_fmt(v) for v in dataset.states[k]] + [_fmt(v) for v in dataset.controls[k]] +
                       [_fmt(v) for v in dataset.next_states[k]])
    side = path.with_suffix(".json")
    side.write_text(json.dumps(dataset.meta, indent=2, sort_keys=True) + "\n")
    return [path, side]


def read_csv(path) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    n_x = sum(1 for h in header if h.startswith("x") and not h.startswith("xn"))
    n_u = sum(1 for h in header if h.startswith("u"))
    arr = np.array([[float(v) for v in r] for r in body]).reshape(-1, len(header))
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return Dataset(arr[:, 2:2 + n_x], arr[:, 2 + n_x:2 + n_x + n_u], arr[:, 2 + n_x + n_u:],
                   arr[:, 0].astype(int), arr[:, 1].astype(int), meta)


def spec_to_dict(spec: SamplingSpec) -> dict:
    return asdict(spec)
