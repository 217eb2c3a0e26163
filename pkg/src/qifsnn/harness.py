"""Gradient-check suites, run evaluation and comparison tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .engine import NetworkSpec, run_trial
from .grad import grad_check
from .lif import load_lif_checkpoint
from .models import load_checkpoint, read_checkpoint_blob
from .qif import NeuronParams
from .train.data import make_datasets
from .train.loop import evaluate, read_predictions
from .train.metrics import compute_metrics

METRIC_COLUMNS = (("mae", "MAE"), ("rmse", "RMSE"), ("rel_l2", "Rel. L2 (%)"), ("r2", "R2"))


# ---------------------------------------------------------------------------
# gradient checks over random networks

def random_case(rng: np.random.Generator, max_layers: int = 3, max_width: int = 8,
                max_spikes: int = 4, T: float = 2.0):
    """
    A small random network and input spike train. Neuron periods alternate between
    shorter and longer than the trial, so outputs mix ordinary and pseudo spikes.
    """
    n_layers = int(rng.integers(1, max_layers + 1))
    n_in = int(rng.integers(1, 3))
    hidden = [int(rng.integers(1, max_width + 1)) for _ in range(n_layers - 1)]
    n_out = 2 * int(rng.integers(1, max_width // 2 + 1))
    sizes = [n_in, *hidden, n_out]
    period = float(rng.choice([0.8, 1.5, 3.0]))
    params = NeuronParams.for_period(period)
    ws = [rng.uniform(-3, 3, (sizes[l + 1], sizes[l])) / math.sqrt(sizes[l])
          for l in range(len(sizes) - 1)]
    phi0 = rng.uniform(0, 0.99 * params.phi_theta, sum(sizes[1:]))
    net = NetworkSpec(sizes, ws, params, T, phi0)
    n_spk = int(rng.integers(1, max_spikes + 1))
    chans = rng.integers(0, n_in, n_spk)
    times = rng.uniform(0.05, T - 0.05, n_spk)
    inputs = [np.sort(times[chans == c]) for c in range(n_in)]
    return net, inputs


@dataclass
class GradCheckSuite:
    n_nets: int
    max_rel_err: float
    worst: tuple | None
    n_checked: int
    n_excluded: int
    worst_per_layer: list[tuple[float, tuple | None]]
    n_pseudo_outputs: int
    n_ordinary_outputs: int
    tol: float

    @property
    def excluded_fraction(self) -> float:
        total = self.n_checked + self.n_excluded
        return self.n_excluded / total if total else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol and self.excluded_fraction < 0.05

    def lines(self) -> list[str]:
        out = [
            f"nets={self.n_nets} checked={self.n_checked} excluded_event_order={self.n_excluded} "
            f"({100 * self.excluded_fraction:.2f}%)",
            f"outputs: ordinary={self.n_ordinary_outputs} pseudo={self.n_pseudo_outputs}",
            f"max_rel_err={self.max_rel_err:.3e} (tol {self.tol:g}) at {self.worst}",
        ]
        for l, (err, loc) in enumerate(self.worst_per_layer):
            out.append(f"  weight layer {l}: worst rel_err={err:.3e} at {loc}")
        out.append("PASS" if self.passed else "FAIL")
        return out


def gradcheck_suite(n_nets: int = 100, seed: int = 0, tol: float = 1e-5, step: float = 1e-5,
                    max_layers: int = 3, max_width: int = 8, max_spikes: int = 4,
                    T: float = 2.0) -> GradCheckSuite:
    rng = np.random.default_rng(seed)
    worst_layer = [(0.0, None)] * max_layers
    max_err, where = 0.0, None
    n_checked = n_excluded = n_pseudo = n_ord = 0
    for k in range(n_nets):
        net, inputs = random_case(rng, max_layers, max_width, max_spikes, T)
        seed_dec = rng.normal(size=net.n_out)
        rep = grad_check(net, inputs, step=step, tol=tol, seed_decoded=seed_dec)
        res = run_trial(net, inputs)
        n_pseudo += int(res.tape.output_is_pseudo.sum())
        n_ord += int((~res.tape.output_is_pseudo).sum())
        n_checked += rep.n_checked
        n_excluded += rep.n_excluded
        if rep.max_rel_err > max_err:
            max_err, where = rep.max_rel_err, (k,) + tuple(rep.location or ())
        for l, (err, loc) in enumerate(rep.worst_per_layer):
            if err > worst_layer[l][0]:
                worst_layer[l] = (err, (k,) + tuple(loc))
    return GradCheckSuite(n_nets, max_err, where, n_checked, n_excluded, worst_layer, n_pseudo,
                          n_ord, tol)


# ---------------------------------------------------------------------------
# run directories

def load_run_model(run_dir):
    path = Path(run_dir) / "checkpoint.bin"
    if not path.exists():
        raise FileNotFoundError(f"{path}: checkpoint not found")
    header, _ = read_checkpoint_blob(path)
    if header.get("kind") == "lif":
        return load_lif_checkpoint(path)[0]
    return load_checkpoint(path)[0]


def evaluate_run(run_dir) -> tuple[dict, dict]:
    """Recompute test metrics from the checkpoint; returns ``(fresh, stored)``."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path}: config not found")
    cfg: ExperimentConfig = load_config(cfg_path)
    model = load_run_model(run_dir)
    _, test = make_datasets(cfg.task, cfg.train)
    _, metrics, extra = evaluate(model, cfg.task, test)
    stored_path = run_dir / "metrics.json"
    stored = json.loads(stored_path.read_text()) if stored_path.exists() else {}
    return {**metrics.to_dict(), **extra}, stored


def metrics_from_predictions(run_dir) -> dict:
    header, rows = read_predictions(Path(run_dir) / "predictions.csv")
    pcols = [i for i, h in enumerate(header) if h.startswith("pred")]
    rcols = [i for i, h in enumerate(header) if h.startswith("ref")]
    return compute_metrics(rows[:, pcols], rows[:, rcols]).to_dict()


def variant_label(metrics: dict) -> str:
    model = metrics.get("model", "?")
    if model == "lif_direct":
        return f"LIF-{metrics.get('n_steps', '?')} (direct)"
    if model == "qif":
        return "QIF"
    return str(model)


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "N/A"
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def report_rows(run_dirs) -> list[dict]:
    rows = []
    for d in run_dirs:
        p = Path(d) / "metrics.json"
        m = json.loads(p.read_text()) if p.exists() else {}
        row = {"run": str(d), "task": m.get("task", "N/A"), "variant": variant_label(m)}
        for key, _ in METRIC_COLUMNS:
            row[key] = m.get(key)
        rows.append(row)
    return rows


def report_markdown(rows: list[dict]) -> str:
    head = ["Task", "Model"] + [h for _, h in METRIC_COLUMNS]
    out = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r["task"], r["variant"]] + [_cell(r[k]) for k, _ in METRIC_COLUMNS]
        out.append("| " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def report_csv(rows: list[dict]) -> str:
    head = ["task", "model", "run"] + [k for k, _ in METRIC_COLUMNS]
    out = [",".join(head)]
    for r in rows:
        vals = [r["task"], r["variant"], r["run"]]
        vals += ["N/A" if r[k] is None else f"{r[k]:.17g}" for k, _ in METRIC_COLUMNS]
        out.append(",".join(vals))
    return "\n".join(out) + "\n"
