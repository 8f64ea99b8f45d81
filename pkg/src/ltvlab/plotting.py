"""Static SVG figures rendered from the experiment CSVs."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)

RC = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.0,
    "svg.hashsalt": "ltvlab",
    "svg.fonttype": "none",
}


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _f(v) -> float:
    return float(v) if v not in ("", None) else math.nan


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _groups(rows, *keys):
    out = defaultdict(list)
    for r in rows:
        out[tuple(r[k] for k in keys)].append(r)
    return out


def plot_swingup(traj_csv, out_dir, name: str) -> list[Path]:
    rows = read_table(traj_csv)
    t = [int(r["t"]) for r in rows]
    angle = "x1" if "x3" in rows[0] else "x0"  # cartpole pole angle is x1
    rate = "x3" if "x3" in rows[0] else "x1"
    th = [_f(r[angle]) for r in rows]
    om = [_f(r[rate]) for r in rows]
    paths = []
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(t, [math.degrees(v) for v in th], marker=".")
        ax.set_xlabel("time step")
        ax.set_ylabel("angle (deg)")
        ax.set_title(f"{name}: angle")
        paths.append(_save(fig, Path(out_dir) / f"{name}_angle.svg"))
        fig, ax = plt.subplots()
        ax.plot(th, om, marker=".")
        ax.set_xlabel("angle (rad)")
        ax.set_ylabel("angular rate (rad/s)")
        ax.set_title(f"{name}: phase plane")
        paths.append(_save(fig, Path(out_dir) / f"{name}_phase.svg"))
    return paths


def plot_cost_curve(cost_csv, out_dir, name: str) -> Path:
    rows = [r for r in read_table(cost_csv) if r["accepted"] == "true"]
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.semilogy([int(r["iter"]) for r in rows], [_f(r["cost"]) for r in rows], marker=".")
        ax.set_xlabel("iteration")
        ax.set_ylabel("cost")
        ax.set_title(f"{name}: ILQR cost")
        return _save(fig, Path(out_dir) / f"{name}_cost.svg")


def plot_overlay(pred_csv, out_dir, stem: str, coord: str = "x0") -> Path:
    """Open-loop predictions of every (seed, model) pair against the true trajectory."""
    rows = read_table(pred_csv)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        styles = {"sindy": "C0", "mlp": "C1", "ltv": "C2"}
        seen = set()
        for (seed, model), g in sorted(_groups(rows, "seed", "model").items()):
            t = [int(r["t"]) for r in g]
            y = [_f(r[coord]) for r in g]
            if model == "true":
                ax.plot(t, y, color="k", linewidth=2.0, label="true")
                continue
            ax.plot(t, y, color=styles.get(model, "C3"), alpha=0.6,
                    label=model if model not in seen else None)
            seen.add(model)
        ax.set_xlabel("time step")
        ax.set_ylabel(coord)
        ax.legend(frameon=False)
        ax.set_title(stem.replace("_", " "))
        return _save(fig, Path(out_dir) / f"{stem}.svg")


def plot_spectra(sv_csv, out_dir, stem: str, keys=("basis",)) -> Path:
    rows = read_table(sv_csv)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for key, g in sorted(_groups(rows, *keys).items()):
            ax.semilogy([int(r["index"]) for r in g], [max(_f(r["sigma"]), 1e-300) for r in g], marker=".",
                        label=" ".join(f"{k}={v}" for k, v in zip(keys, key)))
        ax.set_xlabel("index")
        ax.set_ylabel("singular value")
        ax.legend(frameon=False, fontsize=7)
        ax.set_title(stem.replace("_", " "))
        return _save(fig, Path(out_dir) / f"{stem}.svg")


def plot_synthetic(csv_path, out_dir) -> Path:
    rows = read_table(csv_path)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        o = [int(r["order"]) for r in rows]
        ax.semilogy(o, [_f(r["cond_empirical"]) for r in rows], marker="o", label="empirical")
        ax.semilogy(o, [_f(r["cond_analytic"]) for r in rows], marker="x", linestyle="--", label="moment oracle")
        ax.set_xlabel("monomial order")
        ax.set_ylabel("condition number")
        ax.legend(frameon=False)
        return _save(fig, Path(out_dir) / "conditioning_synthetic.svg")


def plot_control(curves_csv, traj_csv, out_dir) -> list[Path]:
    curves = read_table(curves_csv)
    trajs = read_table(traj_csv)
    paths = []
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for (mode, seed), g in sorted(_groups(curves, "mode", "init_seed").items()):
            ax.semilogy([int(r["iter"]) for r in g], [_f(r["cost"]) for r in g], label=f"{mode} ({seed})")
        ax.set_xlabel("iteration")
        ax.set_ylabel("model cost")
        ax.legend(frameon=False, fontsize=7)
        paths.append(_save(fig, Path(out_dir) / "control_curves.svg"))
        fig, ax = plt.subplots()
        for (mode, seed), g in sorted(_groups(trajs, "mode", "init_seed").items()):
            ax.plot([int(r["t"]) for r in g], [_f(r["x1"]) for r in g], label=f"{mode} ({seed})")
        ax.set_xlabel("time step")
        ax.set_ylabel("pole angle (rad), true system")
        ax.legend(frameon=False, fontsize=7)
        paths.append(_save(fig, Path(out_dir) / "control_trajectories.svg"))
    return paths


def emit_plots(manifests, out_dir) -> tuple[list[Path], list[str]]:
    """Render every figure whose source CSV is listed in ``manifests``.

    Returns (written files, missing or failed artifacts).  Missing sources are
    skipped so partial emission is possible.
    """
    out_dir = Path(out_dir)
    plot_dir = out_dir / "plots"
    listed = {f["path"] for m in manifests for f in m.files}
    written, missing = [], []

    def have(rel):
        if rel in listed and (out_dir / rel).exists():
            return out_dir / rel
        return None

    def attempt(fn, *args, needs=()):
        for n in needs:
            if have(n) is None:
                missing.append(n)
                return
        try:
            res = fn(*args)
        except (OSError, KeyError, ValueError, IndexError) as err:
            missing.append(f"{needs[0] if needs else fn.__name__}: {err}")
            return
        written.extend(res if isinstance(res, list) else [res])

    for rel in sorted(listed):
        p = out_dir / rel
        name = p.stem
        if rel.startswith("swingup/") and name.endswith("_trajectory"):
            sysname = name[: -len("_trajectory")]
            attempt(plot_swingup, p, plot_dir, sysname, needs=(rel,))
        elif rel.startswith("swingup/") and name.endswith("_cost"):
            attempt(plot_cost_curve, p, plot_dir, name[: -len("_cost")], needs=(rel,))
        elif rel.startswith(("surrogate_bench/comparison_level_", "variance/convergence_")) and "_level_" in name:
            attempt(plot_overlay, p, plot_dir, name, needs=(rel,))
        elif rel == "conditioning/conditioning_sindy.csv":
            attempt(plot_spectra, p, plot_dir, "conditioning_sindy", ("basis",), needs=(rel,))
        elif rel == "conditioning/conditioning_mlp.csv":
            attempt(plot_spectra, p, plot_dir, "conditioning_mlp", ("level", "epoch"), needs=(rel,))
        elif rel == "conditioning/conditioning_synthetic.csv":
            attempt(plot_synthetic, p, plot_dir, needs=(rel,))
        elif rel == "control_bench/control_curves.csv":
            t = "control_bench/control_trajectories.csv"
            attempt(plot_control, p, out_dir / t, plot_dir, needs=(rel, t))
    if not listed:
        log.warning("no artifacts listed; nothing to plot")
    return written, missing
