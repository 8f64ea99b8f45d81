"""Small fully-connected surrogate trained by plain gradient descent.

Parameter layout: for each layer in order, the weight matrix W (out x in)
flattened row-major, followed by its bias (out,).  Hidden layers use the
configured activation; the output layer is affine.  An optional fixed affine
normalization of inputs and outputs (set once from the training data) wraps
the network:

    h(z, theta) = out_scale * net((z - in_shift) / in_scale; theta) + out_shift
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .regress import condition_number

ACTIVATIONS = ("tanh", "identity")


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


def param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@dataclass
class MlpModel:
    widths: list
    theta: np.ndarray
    activation: str = "tanh"
    in_shift: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    out_shift: np.ndarray | None = None
    out_scale: np.ndarray | None = None
    n_u: int = 0
    name = "mlp"

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (param_count(self.widths),):
            raise ValueError("parameter vector does not match the architecture")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n_in, n_out = self.widths[0], self.widths[-1]
        if self.in_shift is None:
            self.in_shift, self.in_scale = np.zeros(n_in), np.ones(n_in)
        if self.out_shift is None:
            self.out_shift, self.out_scale = np.zeros(n_out), np.ones(n_out)
        for name in ("in_shift", "in_scale", "out_shift", "out_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_x(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return len(self.theta)

    def layers(self, theta=None):
        """Views (W, b) into ``theta``."""
        theta = self.theta if theta is None else theta
        out, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            W = theta[pos:pos + a * b].reshape(b, a)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out

    def layer_slices(self):
        out, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            out.append((slice(pos, pos + a * b), slice(pos + a * b, pos + a * b + b)))
            pos += a * b + b
        return out

    def copy(self, theta=None):
        return MlpModel(self.widths, self.theta.copy() if theta is None else theta, self.activation,
                        self.in_shift.copy(), self.in_scale.copy(), self.out_shift.copy(), self.out_scale.copy(),
                        self.n_u)

    # surrogate interface
    def step(self, x, u):
        return forward(self, x, u)

    def step_batch(self, X, U):
        return predict_batch(self, np.hstack([np.atleast_2d(X), np.atleast_2d(U)]))

    def linearize(self, X, U):
        Z = np.hstack([np.atleast_2d(X), np.atleast_2d(U)])
        J = input_jacobian(self, Z)
        n_x = self.n_x
        return J[:, :, :n_x], J[:, :, n_x:]

    def to_dict(self):
        return {"widths": self.widths, "activation": self.activation, "theta": self.theta.tolist(),
                "in_shift": self.in_shift.tolist(), "in_scale": self.in_scale.tolist(),
                "out_shift": self.out_shift.tolist(), "out_scale": self.out_scale.tolist(), "n_u": self.n_u}

    @classmethod
    def from_dict(cls, d):
        return cls(d["widths"], np.array(d["theta"]), d.get("activation", "tanh"), d.get("in_shift"),
                   d.get("in_scale"), d.get("out_shift"), d.get("out_scale"), d.get("n_u", 0))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def init(widths, seed: int, scale: float = 1.0, activation: str = "tanh", n_u: int | None = None) -> MlpModel:
    """Uniform(-scale/sqrt(fan_in), scale/sqrt(fan_in)) weights and biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    gen = _rng.stream(seed, _rng.STREAM_MLP_INIT)
    parts = []
    for a, b in zip(widths[:-1], widths[1:]):
        bound = scale / np.sqrt(a)
        parts.append(gen.uniform(-bound, bound, size=a * b))
        parts.append(gen.uniform(-bound, bound, size=b))
    if n_u is None:
        n_u = 0
    return MlpModel(widths, np.concatenate(parts), activation, n_u=n_u)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else z


def _act_deriv(name, a):
    """Derivative expressed through the activation output."""
    return 1.0 - a * a if name == "tanh" else np.ones_like(a)


def _forward_cache(model: MlpModel, Z, theta=None):
    a = (np.asarray(Z, dtype=float) - model.in_shift) / model.in_scale
    acts = [a]
    layers = model.layers(theta)
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        a = z if i == len(layers) - 1 else _act(model.activation, z)
        acts.append(a)
    return acts


def predict_batch(model: MlpModel, Z, theta=None) -> np.ndarray:
    acts = _forward_cache(model, Z, theta)
    return acts[-1] * model.out_scale + model.out_shift


def forward(model: MlpModel, state, control=None) -> np.ndarray:
    z = np.asarray(state, dtype=float)
    if control is not None:
        z = np.concatenate([z, np.asarray(control, dtype=float)])
    if z.shape != (model.widths[0],):
        raise ValueError(f"input must have length {model.widths[0]}, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite network input")
    return predict_batch(model, z[None])[0]


def _data(dataset):
    if isinstance(dataset, tuple):
        Z, Y = dataset
        return np.asarray(Z, dtype=float), np.asarray(Y, dtype=float)
    return dataset.inputs, dataset.next_states


def loss(model: MlpModel, dataset, theta=None) -> float:
    Z, Y = _data(dataset)
    r = Y - predict_batch(model, Z, theta)
    return float(np.sum(r * r) / len(Z))


def _backward(model, acts, g_out, theta=None):
    """Accumulate parameter gradients given dLoss/d(network output) ``g_out``."""
    grad = np.empty(model.n_params)
    layers = model.layers(theta)
    slices = model.layer_slices()
    delta = g_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        sw, sb = slices[i]
        grad[sw] = (delta.T @ acts[i]).ravel()
        grad[sb] = delta.sum(axis=0)
        if i:
            delta = (delta @ W) * _act_deriv(model.activation, acts[i])
    return grad


def loss_and_grad(model: MlpModel, dataset, theta=None):
    """J = (1/R) sum_i ||y_i - h(z_i)||^2 and its exact gradient."""
    Z, Y = _data(dataset)
    if len(Z) == 0:
        raise ValueError("empty dataset")
    acts = _forward_cache(model, Z, theta)
    H = acts[-1] * model.out_scale + model.out_shift
    r = Y - H
    R = len(Z)
    J = float(np.sum(r * r) / R)
    g_out = -(2.0 / R) * r * model.out_scale
    return J, _backward(model, acts, g_out, theta)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    final_test_loss: float | None = None
    final_train_loss: float | None = None
    epochs: int = 0
    lr: float = 0.0
    schedule: str = "constant"
    batch_size: int | None = None
    seed: int = 0

    def write_csv(self, path, schema_line="# ltvlab-csv version=1 kind=mlp_train_report"):
        with open(path, "w", newline="") as fh:
            fh.write(schema_line + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "test_loss"])
            for e, (a, b) in enumerate(zip(self.train_loss, self.test_loss)):
                w.writerow([e, repr(float(a)), repr(float(b))])


def fit_normalization(model: MlpModel, train) -> MlpModel:
    Z, Y = _data(train)
    m = model.copy()
    m.in_shift, m.in_scale = Z.mean(axis=0), np.where(Z.std(axis=0) > 0, Z.std(axis=0), 1.0)
    m.out_shift, m.out_scale = Y.mean(axis=0), np.where(Y.std(axis=0) > 0, Y.std(axis=0), 1.0)
    return m


@np.errstate(over="ignore", invalid="ignore")  # divergence is detected and raised below
def train(model: MlpModel, train_set, test_set=None, lr: float = 1e-2, epochs: int = 1000,
          batch_size: int | None = None, seed: int = 0, normalize: bool = False, snapshot_epochs=(),
          snapshot_fn=None):
    """Gradient descent on the mean squared residual.

    Full-batch by default; ``batch_size`` switches to shuffled mini-batches drawn
    from stream ``(seed, STREAM_MLP_BATCH, epoch)``.  ``snapshot_fn(epoch, model)``
    is called before the update of each epoch listed in ``snapshot_epochs`` (and
    after the last update for ``epoch == epochs``).
    """
    if not lr > 0 or epochs < 1:
        raise ValueError("need lr > 0 and epochs >= 1")
    model = fit_normalization(model, train_set) if normalize else model.copy()
    Z, Y = _data(train_set)
    test = _data(test_set) if test_set is not None else None
    report = TrainReport(lr=lr, epochs=epochs, batch_size=batch_size, seed=seed)
    snaps = set(snapshot_epochs)
    theta = model.theta
    for epoch in range(epochs):
        if epoch in snaps and snapshot_fn is not None:
            snapshot_fn(epoch, model.copy(theta.copy()))
        if batch_size is None or batch_size >= len(Z):
            J, g = loss_and_grad(model, (Z, Y), theta)
            theta = theta - lr * g
        else:
            J = loss(model, (Z, Y), theta)
            perm = _rng.stream(seed, _rng.STREAM_MLP_BATCH, epoch).permutation(len(Z))
            for start in range(0, len(Z), batch_size):
                idx = perm[start:start + batch_size]
                _, g = loss_and_grad(model, (Z[idx], Y[idx]), theta)
                theta = theta - lr * g
        if not np.isfinite(J) or not np.all(np.isfinite(theta)):
            raise TrainingDivergence(epoch)
        report.train_loss.append(J)
        report.test_loss.append(loss(model, test, theta) if test is not None else float("nan"))
    model = model.copy(theta)
    if epochs in snaps and snapshot_fn is not None:
        snapshot_fn(epochs, model.copy())
    report.final_train_loss = loss(model, (Z, Y))
    report.final_test_loss = loss(model, test) if test is not None else None
    return model, report


def param_jacobian(model: MlpModel, inputs, subset=None, block: int = 2048) -> np.ndarray:
    """dh_j(z_i)/dtheta_k for all samples i and outputs j; shape (R, n_out, n_sub)."""
    Z = np.atleast_2d(np.asarray(inputs, dtype=float))
    if len(Z) == 0:
        raise ValueError("need at least one input")
    cols = np.arange(model.n_params) if subset is None else np.asarray(subset)
    n_out = model.widths[-1]
    out = np.empty((len(Z), n_out, len(cols)))
    layers = model.layers()
    slices = model.layer_slices()
    for start in range(0, len(Z), block):
        acts = _forward_cache(model, Z[start:start + block])
        r = len(acts[0])
        for j in range(n_out):
            full = np.empty((r, model.n_params))
            delta = np.zeros((r, n_out))
            delta[:, j] = model.out_scale[j]
            for i in range(len(layers) - 1, -1, -1):
                W, _ = layers[i]
                sw, sb = slices[i]
                full[:, sw] = (delta[:, :, None] * acts[i][:, None, :]).reshape(r, -1)
                full[:, sb] = delta
                if i:
                    delta = (delta @ W) * _act_deriv(model.activation, acts[i])
            out[start:start + r, j] = full[:, cols]
    return out


def input_jacobian(model: MlpModel, Z) -> np.ndarray:
    """dh/dz at each row of Z; shape (R, n_out, n_in)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    acts = _forward_cache(model, Z)
    layers = model.layers()
    n_out = model.widths[-1]
    out = np.empty((len(Z), n_out, model.widths[0]))
    for j in range(n_out):
        delta = np.zeros((len(Z), n_out))
        delta[:, j] = model.out_scale[j]
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            delta = delta @ W
            if i:
                delta = delta * _act_deriv(model.activation, acts[i])
        out[:, j] = delta / model.in_scale
    return out


def last_layer_indices(model: MlpModel) -> np.ndarray:
    sw, sb = model.layer_slices()[-1]
    return np.arange(sw.start, sb.stop)


@dataclass
class GaussNewtonDiag:
    gram: np.ndarray  # (1/R) H'H on the subset
    forcing: np.ndarray  # (1/R) H' Delta on the subset
    subset: np.ndarray
    cond: float
    epoch: int | None = None
    n_samples: int = 0

    def singular_values(self):
        return np.linalg.svd(self.gram, compute_uv=False)


def gauss_newton_diag(model: MlpModel, dataset, subset=None, epoch: int | None = None,
                      block: int = 2048) -> GaussNewtonDiag:
    """Assemble the linearized least-squares system behind one Gauss-Newton step.

    Rows of H run over (sample, output) pairs; both sums are divided by the
    number of samples R, so ``forcing == -0.5 * grad`` on the subset.
    """
    subset = last_layer_indices(model) if subset is None else np.asarray(subset)
    if len(subset) > 512:
        raise ValueError("parameter subset limited to 512 coordinates")
    Z, Y = _data(dataset)
    G = np.zeros((len(subset), len(subset)))
    F = np.zeros(len(subset))
    for start in range(0, len(Z), block):
        z, y = Z[start:start + block], Y[start:start + block]
        H = param_jacobian(model, z, subset, block).reshape(-1, len(subset))
        delta = (y - predict_batch(model, z)).reshape(-1)
        G += H.T @ H
        F += H.T @ delta
    R = len(Z)
    G = G / R
    G = 0.5 * (G + G.T)
    return GaussNewtonDiag(G, F / R, subset, condition_number(G), epoch, R)


# Tuned once on the double-integrator benchmark below, then frozen.
LINEAR_BENCHMARK = {
    "M": [[1.0, 0.1], [0.0, 1.0]], "N": [[0.0], [0.1]], "u_max": 1.0, "dt": 0.1,
    "x0": [1.0, 0.0], "horizon": 30, "level": 0.5, "n_trajectories": 100, "split_ratio": 0.9,
    "widths": [3, 16, 2], "lr": 1e-2, "epochs": 300, "batch_size": 16,
}


def linear_benchmark(seed: int = 0, **overrides):
    """Train on the frozen linear benchmark; returns (model, report, test one-step RMS)."""
    from .dynamics import LinearSystem, rollout
    from .sampling import SamplingSpec, generate_dataset, split

    c = dict(LINEAR_BENCHMARK, **overrides)
    sys = LinearSystem(M=c["M"], N=c["N"], u_max=c["u_max"], dt=c["dt"])
    nominal = rollout(sys, c["x0"], 0.5 * np.sin(0.3 * np.arange(c["horizon"])))
    data = generate_dataset(sys, nominal, SamplingSpec(c["level"], c["n_trajectories"], seed))
    tr, te = split(data, c["split_ratio"])
    model = init(c["widths"], seed, n_u=sys.n_u)
    model, report = train(model, tr, te, lr=c["lr"], epochs=c["epochs"], batch_size=c["batch_size"], seed=seed)
    rms = float(np.sqrt(np.mean((te.next_states - predict_batch(model, te.inputs)) ** 2)))
    return model, report, rms
