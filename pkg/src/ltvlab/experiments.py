"""Experiment suite: swing-up, surrogate comparison, conditioning, variance, control.

Each ``run_*`` function takes a validated config and an output directory and
returns a :class:`RunManifest`.  All files go through one :class:`Writer`, which
checksums them into the manifest.  CSVs carry a schema header line, LF line
endings and ``repr`` floats, so identical configs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, basis, diagnostics, ilqr, ltv, mlp, regress, sindy
from . import rng as _rng
from .config import config_hash, cost_from_config
from .dynamics import DivergenceError, Trajectory, make_system, rollout
from .sampling import SamplingSpec, generate_dataset, split

log = logging.getLogger(__name__)

CSV_VERSION = 1


class ExperimentFailure(RuntimeError):
    pass


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    version: str = __version__
    files: list = field(default_factory=list)  # {"path", "sha256", "bytes"}
    timings: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {"experiment": self.experiment, "config_hash": self.config_hash, "version": self.version,
                "status": "ok" if self.ok else "failed", "files": self.files, "timings": self.timings,
                "failures": self.failures, "notes": self.notes}

    @classmethod
    def from_dict(cls, d):
        return cls(d["experiment"], d["config_hash"], d.get("version", ""), d.get("files", []),
                   d.get("timings", {}), d.get("failures", []), d.get("notes", {}))

    def checksums(self) -> dict:
        return {f["path"]: f["sha256"] for f in self.files}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Writer:
    """Single writer for one experiment; every file it writes lands in the manifest."""

    def __init__(self, out_dir, manifest: RunManifest):
        self.root = Path(out_dir)
        self.manifest = manifest

    def _put(self, rel: str, data: bytes) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.manifest.files = [f for f in self.manifest.files if f["path"] != rel]
        self.manifest.files.append({"path": rel, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return path

    def csv(self, rel: str, kind: str, header, rows) -> Path:
        buf = io.StringIO(newline="")
        buf.write(f"# ltvlab-csv version={CSV_VERSION} kind={kind}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        return self._put(rel, buf.getvalue().encode())

    def json(self, rel: str, obj) -> Path:
        return self._put(rel, (json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n").encode())

    def finish(self, name: str = "manifest.json") -> Path:
        path = self.root / self.manifest.experiment / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest.to_dict(), indent=1, sort_keys=True) + "\n")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def verify_manifest(manifest: RunManifest, out_dir) -> list[str]:
    """Paths whose bytes no longer match the recorded checksum."""
    bad = []
    for f in manifest.files:
        p = Path(out_dir) / f["path"]
        if not p.exists() or hashlib.sha256(p.read_bytes()).hexdigest() != f["sha256"]:
            bad.append(f["path"])
    return bad


def load_manifest(path) -> RunManifest:
    return RunManifest.from_dict(json.loads(Path(path).read_text()))


def _level_tag(level: float) -> str:
    return f"{level:g}"


# ---------------------------------------------------------------- shared setup

@dataclass
class Setup:
    name: str
    system: object
    cost: ilqr.CostSpec
    x0: np.ndarray
    init_scale: float
    sindy_basis: str


def setup(cfg: dict, name: str) -> Setup:
    sc = cfg["systems"][name]
    system = make_system(sc["system"])
    return Setup(name, system, cost_from_config(sc["task"], system), np.asarray(sc["task"]["x0"], dtype=float),
                 float(sc.get("init_scale", 0.0)), sc["sindy_basis"])


def initial_controls(s: Setup, seed: int) -> np.ndarray:
    """Uniform on [-scale*u_max, scale*u_max] from stream (seed, INIT_CONTROLS); zeros at scale 0."""
    T, n_u = s.cost.horizon, s.system.n_u
    if s.init_scale == 0:
        return np.zeros((T, n_u))
    width = s.init_scale * s.system.u_max
    return _rng.stream(seed, _rng.STREAM_INIT_CONTROLS).uniform(-width, width, (T, n_u))


def ilqr_options(cfg: dict, **kw) -> ilqr.IlqrOptions:
    d = dict(cfg["ilqr"])
    d.update(kw)
    return ilqr.options_from_dict(d)


def solve_task(cfg, s: Setup, init_seed: int, surrogate=None) -> ilqr.IlqrSolution:
    opts = ilqr_options(cfg, seed=init_seed, **({"model": "surrogate"} if surrogate is not None else {}))
    task = ilqr.IlqrTask(s.system, s.x0, s.cost, initial_controls(s, init_seed), surrogate)
    return ilqr.solve(task, opts)


def _nominal_key(cfg, name):
    return config_hash({"system": cfg["systems"][name], "ilqr": cfg["ilqr"], "seed": cfg["seed"]})


def nominal_for(cfg, s: Setup, out_dir) -> Trajectory:
    """Stored swing-up nominal when it matches the config, otherwise a fresh solve."""
    path = Path(out_dir) / "swingup" / f"{s.name}_solution.json"
    if path.exists():
        d = json.loads(path.read_text())
        if d.get("nominal_key") == _nominal_key(cfg, s.name) and d.get("converged"):
            return Trajectory.from_dict(d["trajectory"])
    sol = solve_task(cfg, s, cfg["seed"])
    if not sol.converged:
        raise ExperimentFailure(f"{s.name}: nominal solve did not converge ({sol.status})")
    return sol.trajectory


def sampling_spec(cfg, level: float, seed: int, n_trajectories: int | None = None) -> SamplingSpec:
    sp = cfg["sampling"]
    return SamplingSpec(level, n_trajectories or sp["n_trajectories"], seed, sp["split_ratio"], sp["distribution"])


def fit_sindy(cfg, s: Setup, train, basis_spec: str | None = None, cutoff: float | None = None):
    b = basis.parse_spec(basis_spec or s.sindy_basis, s.system.n_x + s.system.n_u)
    c = cfg["sindy"]
    return sindy.fit(train, b, c["threshold"], c["svd_cutoff"] if cutoff is None else cutoff, c["summation"])


def mlp_widths(cfg, s: Setup) -> list:
    return [s.system.n_x + s.system.n_u] + [int(h) for h in cfg["mlp"]["hidden"]] + [s.system.n_x]


def fit_mlp(cfg, s: Setup, train, test, seed: int = 0, snapshot_epochs=(), snapshot_fn=None):
    m = cfg["mlp"]
    model = mlp.init(mlp_widths(cfg, s), m["init_seed"], activation=m["activation"], n_u=s.system.n_u)
    return mlp.train(model, train, test, lr=m["lr"], epochs=m["epochs"], batch_size=m["batch_size"], seed=seed,
                     normalize=m["normalize"], snapshot_epochs=snapshot_epochs, snapshot_fn=snapshot_fn)


def _max_error(pred, true) -> float:
    return float(np.max(np.linalg.norm(np.asarray(pred) - np.asarray(true), axis=1)))


def _timed(manifest: RunManifest, key: str, t0: float):
    manifest.timings[key] = round(time.perf_counter() - t0, 3)


def _traj_rows(prefix, traj: Trajectory):
    T = traj.horizon
    for t in range(T + 1):
        u = traj.controls[t] if t < T else np.full(traj.controls.shape[1], math.nan)
        yield list(prefix) + [t] + list(traj.states[t]) + list(u)


def _traj_header(n_x, n_u):
    return ["t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)]


# ---------------------------------------------------------------- swing-up

def run_swingup(cfg: dict, out_dir) -> RunManifest:
    man = RunManifest("swingup", config_hash(cfg))
    w = Writer(out_dir, man)
    for name in cfg["swingup"]["systems"]:
        t0 = time.perf_counter()
        s = setup(cfg, name)
        sol = solve_task(cfg, s, cfg["seed"])
        d = sol.to_dict()
        d.update(system=s.system.to_dict(), cost=s.cost.to_dict(), x0=s.x0.tolist(),
                 nominal_key=_nominal_key(cfg, name),
                 options=ilqr.options_to_dict(ilqr_options(cfg, seed=cfg["seed"])))
        xT = sol.trajectory.states[-1]
        d["terminal_error"] = s.cost.diff(xT).tolist()
        try:
            d["ddp_K"] = ilqr.ddp_feedback(s.system, sol.trajectory, s.cost).tolist()
        except ilqr.IlqrError as err:
            d["ddp_K"] = None
            man.notes[f"{name}_ddp"] = str(err)
        w.json(f"swingup/{name}_solution.json", d)
        w.csv(f"swingup/{name}_cost.csv", "ilqr_cost_log", ["iter", "cost", "alpha", "mu", "accepted"],
              [[r["iter"], r["cost"], r["alpha"], r["mu"], r["accepted"]] for r in sol.log])
        w.csv(f"swingup/{name}_trajectory.csv", "trajectory", _traj_header(s.system.n_x, s.system.n_u),
              _traj_rows([], sol.trajectory))
        man.notes[name] = {"converged": sol.converged, "status": sol.status, "iterations": sol.iterations,
                           "final_cost": sol.cost_history[-1], "terminal_state": xT.tolist()}
        if not sol.converged:
            man.failures.append(f"{name}: ILQR did not converge ({sol.status})")
        _timed(man, name, t0)
    w.finish()
    return man


# ---------------------------------------------------------------- surrogate comparison

def run_surrogate_bench(cfg: dict, out_dir, n_test_rollouts: int = 20) -> RunManifest:
    """Open-loop predictions of SINDy, MLP and LTV models against the true system.

    ``nominal_error`` uses the nominal controls; ``test_error`` averages over
    held-out perturbed control sequences of the same level.
    """
    man = RunManifest("surrogate_bench", config_hash(cfg))
    w = Writer(out_dir, man)
    sb = cfg["surrogate_bench"]
    s = setup(cfg, sb["system"])
    nominal = nominal_for(cfg, s, out_dir)
    n_x, n_u = s.system.n_x, s.system.n_u
    x0 = nominal.states[0]
    summary_raw = {}
    # SINDy is fitted without truncation and, when configured, with the comparison cutoff too
    sindy_modes = [("sindy", cfg["sindy"]["svd_cutoff"])]
    if cfg["sindy"].get("compare_cutoff") is not None:
        sindy_modes.append(("sindy_cut", cfg["sindy"]["compare_cutoff"]))
    for level in sb["levels"]:
        t0 = time.perf_counter()
        rows = [[None, "true"] + r for r in _traj_rows([], nominal)]
        for seed in sb["seeds"]:
            try:
                data = generate_dataset(s.system, nominal, sampling_spec(cfg, level, seed))
                train, test = split(data, cfg["sampling"]["split_ratio"], seed=seed)
            except (ValueError, DivergenceError) as err:
                man.failures.append(f"level {level} seed {seed}: data {err}")
                continue
            test_ids = test.trajectory_ids[:n_test_rollouts]
            models = {}
            for name, cut in sindy_modes:
                try:
                    models[name] = fit_sindy(cfg, s, train, cutoff=cut)
                except (ValueError, np.linalg.LinAlgError) as err:
                    man.failures.append(f"level {level} seed {seed}: {name} {err}")
            try:
                n_mlp = cfg["mlp"]["n_trajectories"]
                models["mlp"] = fit_mlp(cfg, s, train.subset(train.trajectory_ids[:n_mlp]), None, seed)[0]
            except (ValueError, RuntimeError) as err:
                man.failures.append(f"level {level} seed {seed}: mlp {err}")
            try:
                lt = ltv.identify(s.system, nominal, seed=(seed, _rng.STREAM_LTV),
                                  state_scale=ilqr_options(cfg).ltv_state_scale,
                                  control_scale=ilqr_options(cfg).ltv_control_scale)
                models["ltv"] = lt
            except (ValueError, np.linalg.LinAlgError) as err:
                man.failures.append(f"level {level} seed {seed}: ltv {err}")
            for name, model in models.items():
                try:
                    pred = _predict(model, nominal, x0, nominal.controls)
                    nom_err = _max_error(pred.states, nominal.states)
                    errs = []
                    for i in test_ids:
                        m = test.traj == i
                        true_states = np.vstack([test.states[m], test.next_states[m][-1:]])
                        errs.append(_max_error(_predict(model, nominal, x0, test.controls[m]).states, true_states))
                    test_err = float(np.mean(errs))
                except (DivergenceError, ValueError) as err:
                    # a diverging open-loop prediction is a measurement, not a run failure
                    man.notes.setdefault("diverged", []).append(f"level {level} seed {seed} {name}: {err}")
                    nom_err, test_err, pred = math.inf, math.inf, None
                summary_raw.setdefault((level, name), []).append((seed, nom_err, test_err))
                if pred is not None:
                    rows.extend([seed, name] + r for r in _traj_rows([], pred))
        w.csv(f"surrogate_bench/comparison_level_{_level_tag(level)}.csv", "open_loop_predictions",
              ["seed", "model"] + _traj_header(n_x, n_u), rows)
        _timed(man, f"level_{_level_tag(level)}", t0)
    per_seed, summary = [], []
    for (level, name), vals in summary_raw.items():
        for seed, a, b in vals:
            per_seed.append([level, name, seed, a, b])
        summary.append([level, name, len(vals), float(np.median([v[1] for v in vals])),
                        float(np.median([v[2] for v in vals]))])
    w.csv("surrogate_bench/comparison_errors.csv", "prediction_errors",
          ["level", "model", "seed", "nominal_error", "test_error"], per_seed)
    w.csv("surrogate_bench/comparison_summary.csv", "prediction_error_summary",
          ["level", "model", "n_seeds", "median_nominal_error", "median_test_error"], summary)
    w.finish()
    return man


def _predict(model, nominal: Trajectory, x0, controls) -> Trajectory:
    controls = np.asarray(controls, dtype=float).reshape(nominal.controls.shape)
    if isinstance(model, ltv.LtvModel):
        dev = ltv.rollout_deviation(model, np.asarray(x0) - nominal.states[0], controls - nominal.controls)
        return Trajectory(nominal.states + dev, controls)
    return sindy.rollout_predict(model, x0, controls)


# ---------------------------------------------------------------- conditioning

def run_conditioning_study(cfg: dict, out_dir) -> RunManifest:
    man = RunManifest("conditioning", config_hash(cfg))
    w = Writer(out_dir, man)
    cc = cfg["conditioning"]
    s = setup(cfg, cc["system"])
    nominal = nominal_for(cfg, s, out_dir)

    t0 = time.perf_counter()
    data = generate_dataset(s.system, nominal, sampling_spec(cfg, cc["level"], cfg["seed"]))
    train, _ = split(data, cfg["sampling"]["split_ratio"], seed=cfg["seed"])
    spectra, summary = [], []
    for spec in cc["bases"]:
        b = basis.parse_spec(spec, s.system.n_x + s.system.n_u)
        G = regress.gram(basis.design_matrix(b, train.inputs), cfg["sindy"]["summation"])
        sv = regress.singular_values(G)
        spectra.extend([spec, i, v] for i, v in enumerate(sv))
        cut = cfg["sindy"].get("compare_cutoff") or 0.0
        summary.append([spec, b.n_features, G.n_samples, regress.condition_number(G), sv[0] / sv[-1], sv[0], sv[-1],
                        int(np.sum(sv <= cut * sv[0]))])
    w.csv("conditioning/conditioning_sindy.csv", "singular_values", ["basis", "index", "sigma"], spectra)
    w.csv("conditioning/conditioning_sindy_summary.csv", "conditioning_summary",
          ["basis", "n_features", "R", "cond", "cond_raw", "sigma_max", "sigma_min", "n_below_cutoff"], summary)
    _timed(man, "sindy", t0)

    t0 = time.perf_counter()
    spectra, summary = [], []
    for level in cc["mlp_levels"]:
        d = generate_dataset(s.system, nominal, sampling_spec(cfg, level, cfg["seed"], cfg["mlp"]["n_trajectories"]))
        tr, te = split(d, cfg["sampling"]["split_ratio"], seed=cfg["seed"])
        snaps = {}

        def grab(epoch, model, tr=tr, snaps=snaps):
            snaps[epoch] = (mlp.gauss_newton_diag(model, tr, epoch=epoch), mlp.loss(model, tr))

        try:
            fit_mlp(cfg, s, tr, te, cfg["seed"], [e for e in cc["mlp_epochs"] if e <= cfg["mlp"]["epochs"]], grab)
        except mlp.TrainingDivergence as err:
            man.failures.append(f"mlp level {level}: {err}")
        for epoch in sorted(snaps):
            gn, loss = snaps[epoch]
            sv = gn.singular_values()
            spectra.extend([level, epoch, i, v] for i, v in enumerate(sv))
            summary.append([level, epoch, len(gn.subset), gn.cond, sv[0], sv[-1], loss])
    w.csv("conditioning/conditioning_mlp.csv", "singular_values", ["level", "epoch", "index", "sigma"], spectra)
    w.csv("conditioning/conditioning_mlp_summary.csv", "conditioning_summary",
          ["level", "epoch", "n_params", "cond", "sigma_max", "sigma_min", "train_loss"], summary)
    _timed(man, "mlp", t0)

    t0 = time.perf_counter()
    rows = synthetic_conditioning(cc["synthetic_orders"], cc["synthetic_samples"], cfg["seed"])
    w.csv("conditioning/conditioning_synthetic.csv", "conditioning_oracle",
          ["order", "cond_empirical", "cond_analytic", "ratio"], rows)
    _timed(man, "synthetic", t0)
    w.finish()
    return man


def synthetic_conditioning(orders, n_samples: int, seed: int = 0, method: str = "exact"):
    """Empirical monomial Gram conditioning under N(0, 1) next to the moment oracle."""
    x = _rng.stream(seed, _rng.STREAM_MOMENTS, 1).standard_normal(int(n_samples))[:, None]
    rows = []
    for order in orders:
        b = basis.make_basis("monomial", order, 1)
        emp = regress.condition_number(regress.gram(basis.design_matrix(b, x), method))
        ana = diagnostics.analytic_condition("monomial", order)
        rows.append([order, emp, ana, emp / ana])
    return rows


# ---------------------------------------------------------------- seed variance

def run_variance_study(cfg: dict, out_dir) -> RunManifest:
    man = RunManifest("variance", config_hash(cfg))
    w = Writer(out_dir, man)
    vc = cfg["variance"]
    s = setup(cfg, vc["system"])
    nominal = nominal_for(cfg, s, out_dir)
    n_x, n_u = s.system.n_x, s.system.n_u
    summary, coef_rows = [], []

    for level in vc["sindy_levels"]:
        t0 = time.perf_counter()
        rep = diagnostics.seed_variance_study(lambda tr, te, seed: fit_sindy(cfg, s, tr), s.system, nominal,
                                              sampling_spec(cfg, level, 0), vc["sindy_seeds"], "sindy")
        _variance_outputs(w, man, rep, "sindy", level, nominal, n_x, n_u, summary, coef_rows)
        _timed(man, f"sindy_{_level_tag(level)}", t0)

    cos_rows = []
    for level in vc["mlp_levels"]:
        t0 = time.perf_counter()
        forcing = {}

        def fit(tr, te, seed, forcing=forcing):
            def grab(epoch, model):
                forcing[seed] = mlp.gauss_newton_diag(model, tr, epoch=epoch).forcing
            return fit_mlp(cfg, s, tr, te, seed, [vc["mlp_epoch"]], grab)[0]

        rep = diagnostics.seed_variance_study(fit, s.system, nominal,
                                              sampling_spec(cfg, level, 0, cfg["mlp"]["n_trajectories"]),
                                              vc["mlp_seeds"], "mlp")
        _variance_outputs(w, man, rep, "mlp", level, nominal, n_x, n_u, summary, coef_rows)
        seeds = sorted(forcing)
        C = diagnostics.cosine_similarity([forcing[k] for k in seeds]) if seeds else np.zeros((0, 0))
        for i in range(len(seeds)):
            for j in range(i + 1, len(seeds)):
                cos_rows.append([level, vc["mlp_epoch"], seeds[i], seeds[j], C[i, j]])
        _timed(man, f"mlp_{_level_tag(level)}", t0)

    w.csv("variance/convergence_summary.csv", "variance_summary",
          ["model", "level", "n_seeds", "n_failures", "median_std", "max_std", "max_pairwise_distance"], summary)
    w.csv("variance/convergence_coefficients.csv", "coefficient_dispersion",
          ["model", "level", "index", "mean", "std"], coef_rows)
    w.csv("variance/forcing_mlp_cosine.csv", "forcing_cosine", ["level", "epoch", "seed_a", "seed_b", "cosine"],
          cos_rows)
    w.finish()
    return man


def _variance_outputs(w, man, rep, family, level, nominal, n_x, n_u, summary, coef_rows):
    tag = _level_tag(level)
    rows = [[None, "true"] + r for r in _traj_rows([], nominal)]
    for seed, P in zip(rep.prediction_seeds, rep.predictions):
        rows.extend([seed, family] + r for r in _traj_rows([], Trajectory(P, nominal.controls)))
    w.csv(f"variance/convergence_{family}_level_{tag}.csv", "open_loop_predictions",
          ["seed", "model"] + _traj_header(n_x, n_u), rows)
    summary.append([family, level, len(rep.seeds), len(rep.failures), rep.median_std, float(np.max(rep.coef_std)),
                    rep.max_pairwise_distance])
    if family == "sindy":
        coef_rows.extend([family, level, i, m, sd] for i, (m, sd) in enumerate(zip(rep.coef_mean, rep.coef_std)))
    for seed, msg in rep.failures.items():
        man.notes.setdefault("seed_failures", []).append(f"{family} level {level} seed {seed}: {msg}")


# ---------------------------------------------------------------- control benchmark

def run_control_bench(cfg: dict, out_dir) -> RunManifest:
    man = RunManifest("control_bench", config_hash(cfg))
    w = Writer(out_dir, man)
    cb = cfg["control_bench"]
    s = setup(cfg, cb["system"])
    n_x, n_u = s.system.n_x, s.system.n_u
    cost_rows, curve_rows, traj_rows = [], [], []

    t0 = time.perf_counter()
    ltv_sols = {}
    for seed in cb["init_seeds"]:
        sol = solve_task(cfg, s, seed)
        ltv_sols[seed] = sol
        cost_rows.append(["ltv", seed, sol.converged, sol.status, sol.iterations, sol.cost_history[-1],
                          sol.cost_history[-1]] + list(sol.trajectory.states[-1]))
        curve_rows.extend(["ltv", seed, r["iter"], r["cost"]] for r in sol.log if r["accepted"])
        traj_rows.extend(["ltv", seed] + r for r in _traj_rows([], sol.trajectory))
        if not sol.converged:
            man.failures.append(f"ltv init seed {seed}: not converged ({sol.status})")
    _timed(man, "ltv", t0)
    ref_seed = cb["init_seeds"][0]
    ref = ltv_sols[ref_seed]
    terminal = np.array([s.cost.diff(sol.trajectory.states[-1]) for sol in ltv_sols.values()])
    man.notes["ltv_terminal_spread"] = float(np.max(np.ptp(terminal, axis=0)))
    man.notes["ltv_reference_cost"] = ref.cost_history[-1]

    data = generate_dataset(s.system, ref.trajectory, sampling_spec(cfg, cb["level"], cb["data_seed"]))
    train, test = split(data, cfg["sampling"]["split_ratio"], seed=cb["data_seed"])
    n_mlp = cfg["mlp"]["n_trajectories"]
    builders = {
        "sindy": lambda: fit_sindy(cfg, s, train),
        "mlp": lambda: fit_mlp(cfg, s, train.subset(train.trajectory_ids[:n_mlp]),
                               test.subset(test.trajectory_ids[:max(1, n_mlp // 9)]), cb["data_seed"])[0],
    }
    for name, build in builders.items():
        t0 = time.perf_counter()
        try:
            model = build()
            sol = solve_task(cfg, s, ref_seed, surrogate=model)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as err:
            man.failures.append(f"{name}: {type(err).__name__}: {err}")
            continue
        try:
            true = rollout(s.system, s.x0, sol.trajectory.controls)
            true_cost = ilqr.evaluate_cost(s.cost, true)
        except DivergenceError:
            true, true_cost = None, math.inf
        xT = true.states[-1] if true is not None else np.full(n_x, math.nan)
        cost_rows.append([name, ref_seed, sol.converged, sol.status, sol.iterations, sol.cost_history[-1],
                          true_cost] + list(xT))
        curve_rows.extend([name, ref_seed, r["iter"], r["cost"]] for r in sol.log if r["accepted"])
        if true is not None:
            traj_rows.extend([name, ref_seed] + r for r in _traj_rows([], true))
        man.notes[f"{name}_cost_ratio"] = true_cost / ref.cost_history[-1]
        _timed(man, name, t0)

    # sanity run: SINDy fitted at sanity_level around the optimum, warm-started at the LTV controls
    lvl = cb["sanity_level"]
    t0 = time.perf_counter()
    try:
        d0 = generate_dataset(s.system, ref.trajectory, sampling_spec(cfg, lvl, cb["data_seed"]))
        tr0, _ = split(d0, cfg["sampling"]["split_ratio"], seed=cb["data_seed"])
        model = fit_sindy(cfg, s, tr0, cutoff=cfg["sindy"]["compare_cutoff"])
        task = ilqr.IlqrTask(s.system, s.x0, s.cost, ref.trajectory.controls, model)
        sol = ilqr.solve(task, ilqr_options(cfg, seed=ref_seed, model="surrogate"))
        true = rollout(s.system, s.x0, sol.trajectory.controls)
        true_cost = ilqr.evaluate_cost(s.cost, true)
        cost_rows.append(["sindy_warm", ref_seed, sol.converged, sol.status, sol.iterations, sol.cost_history[-1],
                          true_cost] + list(true.states[-1]))
        ltv_costs = [sol_.cost_history[-1] for sol_ in ltv_sols.values()]
        man.notes["sanity_level"] = lvl
        man.notes["sanity_gap"] = true_cost - ref.cost_history[-1]
        man.notes["sanity_tolerance"] = 10 * float(np.ptp(ltv_costs))
        man.notes["sanity_iterations"] = sol.iterations
    except (ValueError, RuntimeError, np.linalg.LinAlgError, DivergenceError) as err:
        man.notes["sanity_error"] = f"{type(err).__name__}: {err}"
    _timed(man, "sanity", t0)

    w.csv("control_bench/control_costs.csv", "control_costs",
          ["mode", "init_seed", "converged", "status", "iterations", "model_cost", "true_cost"] +
          [f"xT{i}" for i in range(n_x)], cost_rows)
    w.csv("control_bench/control_curves.csv", "cost_curves", ["mode", "init_seed", "iter", "cost"], curve_rows)
    w.csv("control_bench/control_trajectories.csv", "trajectories",
          ["mode", "init_seed"] + _traj_header(n_x, n_u), traj_rows)
    w.finish()
    return man


EXPERIMENTS = {
    "swingup": run_swingup,
    "surrogate-bench": run_surrogate_bench,
    "conditioning": run_conditioning_study,
    "variance": run_variance_study,
    "control-bench": run_control_bench,
}
