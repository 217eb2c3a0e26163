"""Training loops: batches of forward trials, tape backward passes and Adam updates."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..codec import DecodeSpec, EncodingSpec, TargetAffine
from ..grad import backward_decoded
from ..lif import (LifModel, LifParams, init_lif_model, lif_backward, lif_forward, lif_predict,
                   save_lif_checkpoint)
from ..models import (DeepOnetModel, MlpModel, PinnProblem, init_network, mlp_backward,
                      mlp_forward, pinn_residual_beltrami, pinn_residual_burgers,
                      pinn_residual_poisson1d, save_checkpoint)
from ..qif import NeuronParams
from .config import TrainConfig
from .data import Dataset, make_datasets
from .metrics import Metrics, compute_metrics
from .optim import AdamState, adam_step, scheduled_lr

log = logging.getLogger(__name__)

PINN_BOUNDS = {
    "pinn_poisson": [(0.0, 1.0)],
    "pinn_burgers": [(-1.0, 1.0), (0.0, 1.0)],
    "pinn_beltrami": [(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)],
}
PINN_KIND = {"pinn_poisson": "poisson1d", "pinn_burgers": "burgers", "pinn_beltrami": "beltrami"}


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass
class TrainResult:
    model: object
    history: list[tuple[int, float, float]]
    metrics: Metrics
    test_inputs: np.ndarray
    pred: np.ndarray
    ref: np.ndarray
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# model construction

def _fit_affine(y: np.ndarray, T: float, frac: float) -> TargetAffine:
    lo, hi = y.min(axis=0), y.max(axis=0)
    if y.shape[1] == 1:
        return TargetAffine.fit(float(lo[0]), float(hi[0]), T, frac)
    span = np.where(hi > lo, hi - lo, 1.0)
    scale = 2 * frac * T / span
    return TargetAffine(scale, -frac * T - scale * lo)


def _range_affine(rng_out, n_out: int, T: float, frac: float) -> TargetAffine:
    lo, hi = rng_out
    aff = TargetAffine.fit(lo, hi, T, frac)
    if n_out == 1:
        return aff
    return TargetAffine(np.full(n_out, aff.scale), np.full(n_out, aff.offset))


def _encodings(cfg: TrainConfig, bounds) -> list[EncodingSpec]:
    return [EncodingSpec(cfg.encoding, float(lo), float(hi), cfg.transmission_time, cfg.grf_m,
                         cfg.grf_beta) for lo, hi in bounds]


def _mlp(cfg: TrainConfig, bounds, hidden, n_out, affine, rng) -> MlpModel:
    encs = _encodings(cfg, bounds)
    n_in = sum(e.n_channels for e in encs)
    params = NeuronParams(cfg.tau_m, cfg.I_0, cfg.eps_guard)
    net = init_network([n_in, *hidden, 2 * n_out], params, cfg.trial_T, rng, cfg.w_scale,
                       cfg.initial_phase)
    return MlpModel(net, encs, DecodeSpec.consecutive(n_out), affine)


def input_bounds(task: str, train: Dataset) -> list[tuple[float, float]]:
    if task in PINN_BOUNDS:
        return PINN_BOUNDS[task]
    if task == "deeponet_poisson":
        lo, hi = float(train.inputs.min()), float(train.inputs.max())
        pad = 0.1 * (hi - lo)
        return [(lo - pad, hi + pad)] * train.inputs.shape[1]
    return [(float(lo), float(hi)) for lo, hi in zip(train.inputs.min(axis=0), train.inputs.max(axis=0))]


def build_model(cfg: TrainConfig, train: Dataset, rng: np.random.Generator):
    task = cfg.task
    bounds = input_bounds(task, train)
    T = cfg.trial_T
    if task == "deeponet_poisson":
        branch = _mlp(cfg, bounds, cfg.hidden, cfg.latent, TargetAffine(), rng)
        # the trunk's affine carries the output normalization: u = sum_i B_i (z_i / s)
        s = cfg.target_frac * T / float(np.max(np.abs(train.targets)))
        trunk = _mlp(cfg, [(-1.0, 1.0)], cfg.trunk_hidden, cfg.latent, TargetAffine(s, 0.0), rng)
        return DeepOnetModel(branch, trunk)
    if task in PINN_BOUNDS:
        n_out = {"pinn_poisson": 1, "pinn_burgers": 1, "pinn_beltrami": 3}[task]
        affine = _range_affine(cfg.output_range, n_out, T, cfg.target_frac)
        return _mlp(cfg, bounds, cfg.hidden, n_out, affine, rng)
    affine = _fit_affine(train.targets, T, cfg.target_frac)
    return _mlp(cfg, bounds, cfg.hidden, train.targets.shape[1], affine, rng)


def build_lif_model(cfg: TrainConfig, lif: LifParams, train: Dataset, rng) -> LifModel:
    bounds = input_bounds(cfg.task, train)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    sizes = [len(bounds), *cfg.hidden, train.targets.shape[1]]
    affine = _fit_affine(train.targets, 1.0, 0.5)
    return init_lif_model(sizes, lif, rng, lo, hi, cfg.lif_w_scale, cfg.lif_bias_range, affine)


def pinn_problem(cfg: TrainConfig) -> PinnProblem:
    bounds = PINN_BOUNDS[cfg.task]
    extent = min(hi - lo for lo, hi in bounds)
    return PinnProblem(PINN_KIND[cfg.task], bounds, cfg.fd_step_rel * extent)


# ---------------------------------------------------------------------------
# parameters and gradient plumbing

def _qif_mlps(model) -> list[MlpModel]:
    return [model.branch, model.trunk] if isinstance(model, DeepOnetModel) else [model]


def model_parameters(model, cfg: TrainConfig) -> list[np.ndarray]:
    if isinstance(model, LifModel):
        return model.parameters()
    out = []
    for m in _qif_mlps(model):
        out += m.net.weights
        if cfg.train_initial_phase:
            out.append(m.net.initial_phase)
    return out


def _grad_list(g, cfg: TrainConfig) -> list[np.ndarray]:
    return g.d_weights + ([g.d_initial_phase] if cfg.train_initial_phase else [])


def _accumulate(total, part):
    if total is None:
        return [np.array(p, dtype=float) for p in part]
    for t, p in zip(total, part):
        t += p
    return total


def _check_finite(value, what: str, where: str):
    if not np.all(np.isfinite(value)):
        raise TrainingDiverged(f"non-finite {what} at {where}")


class _Pool:
    """Ordered map over batch items; a thread pool when ``threads > 1``."""

    def __init__(self, threads: int):
        self._ex = ThreadPoolExecutor(threads) if threads > 1 else None

    def map(self, fn, items):
        if self._ex is None:
            return [fn(i) for i in items]
        return list(self._ex.map(fn, items))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()


# ---------------------------------------------------------------------------
# objectives: each returns (mean loss over the batch, gradient list)

def _regression_objective(model: MlpModel, data: Dataset, cfg, pool):
    tz_all = model.target_affine.forward(data.targets)

    def one(i, nb):
        _, trial = mlp_forward(model, data.inputs[i])
        r = trial.decoded - tz_all[i]
        loss = float(np.mean(r ** 2))
        _check_finite(loss, "loss", f"sample {i} (input {data.inputs[i].tolist()})")
        g = backward_decoded(trial.tape, 2 * r / (r.size * nb))
        return loss, _grad_list(g, cfg)

    def objective(idx):
        res = pool.map(lambda i: one(i, len(idx)), idx)
        grads = None
        for _, g in res:
            grads = _accumulate(grads, g)
        return float(np.mean([l for l, _ in res])), grads

    return objective


def _deeponet_objective(model: DeepOnetModel, data: Dataset, cfg, pool):
    query = data.aux["query"]
    s = model.trunk.target_affine.scale

    def objective(idx):
        tr_out = pool.map(lambda y: mlp_forward(model.trunk, y)[1], query)
        br_out = pool.map(lambda i: mlp_forward(model.branch, data.inputs[i])[1], idx)
        Z = np.array([t.decoded for t in tr_out])  # (n_q, p)
        B = np.array([t.decoded for t in br_out])  # (nb, p)
        R = B @ Z.T - s * data.targets[idx]
        loss = float(np.mean(R ** 2))
        _check_finite(loss, "loss", f"functions {list(idx)}")
        G = 2 * R / R.size
        gB = G @ Z
        gZ = G.T @ B
        parts_b = pool.map(lambda k: _grad_list(backward_decoded(br_out[k].tape, gB[k]), cfg),
                           range(len(idx)))
        parts_t = pool.map(lambda q: _grad_list(backward_decoded(tr_out[q].tape, gZ[q]), cfg),
                           range(len(query)))
        gb = gt = None
        for p in parts_b:
            gb = _accumulate(gb, p)
        for p in parts_t:
            gt = _accumulate(gt, p)
        return loss, gb + gt

    return objective


def _pinn_poisson_objective(model: MlpModel, data: Dataset, cfg, pool):
    prob = pinn_problem(cfg)

    def one(i, nb):
        x = float(data.inputs[i, 0])
        res, g = pinn_residual_poisson1d(model, prob, x, with_grad=True)
        _check_finite(res, "residual", f"collocation point x={x!r}")
        return res ** 2, [2 * res / nb * a for a in _grad_list(g, cfg)]

    def objective(idx):
        out = pool.map(lambda i: one(i, len(idx)), idx)
        grads = None
        for _, g in out:
            grads = _accumulate(grads, g)
        return float(np.mean([l for l, _ in out])), grads

    return objective


def _data_term(model: MlpModel, pts, vals, comps, weight, cfg, pool):
    """Penalty ``weight * mean (y[comps] - vals)^2`` and its gradient."""

    def one(k):
        y, trial = mlp_forward(model, pts[k])
        r = np.zeros(model.n_outputs)
        r[comps] = y[comps] - vals[k]
        return float(np.sum(r ** 2)), mlp_backward(model, trial, 2 * weight * r / (len(pts) * len(comps)))

    out = pool.map(one, range(len(pts)))
    grads = None
    for _, g in out:
        grads = _accumulate(grads, _grad_list(g, cfg))
    return weight * sum(l for l, _ in out) / (len(pts) * len(comps)), grads


def _pinn_pde_objective(model: MlpModel, data: Dataset, cfg, pool, rng):
    prob = pinn_problem(cfg)
    burgers = cfg.task == "pinn_burgers"
    comps = [0] if burgers else [0, 1]
    aux = data.aux

    def one(i, nb):
        pt = data.inputs[i]
        if burgers:
            res, seeds, trials = pinn_residual_burgers(model, prob, pt, with_grad=True)
            _check_finite(res, "residual", f"collocation point {pt.tolist()}")
            parts = [mlp_backward(model, tr, [2 * res * sd / nb]) for sd, tr in zip(seeds, trials)]
            loss = res ** 2
        else:
            res, jac, trials = pinn_residual_beltrami(model, prob, pt, with_grad=True)
            _check_finite(res, "residual", f"collocation point {pt.tolist()}")
            w = 2 * res / (nb * res.size)
            parts = [mlp_backward(model, tr, np.tensordot(w, jac[:, k, :], axes=1))
                     for k, tr in enumerate(trials)]
            loss = float(np.mean(res ** 2))
        grads = None
        for g in parts:
            grads = _accumulate(grads, _grad_list(g, cfg))
        return loss, grads

    def objective(idx):
        out = pool.map(lambda i: one(i, len(idx)), idx)
        grads = None
        for _, g in out:
            grads = _accumulate(grads, g)
        loss = float(np.mean([l for l, _ in out]))
        nb = len(idx)
        for key in ("ic", "bc"):
            pts, vals = aux[f"{key}_points"], aux[f"{key}_values"]
            pick = rng.choice(len(pts), size=min(nb, len(pts)), replace=False)
            l_d, g_d = _data_term(model, pts[pick], vals[pick], comps, cfg.data_weight, cfg, pool)
            loss += l_d
            grads = _accumulate(grads, g_d)
        return loss, grads

    return objective


def _lif_objective(model: LifModel, data: Dataset, cfg):
    tz_all = model.target_affine.forward(data.targets)
    x_all = model.normalize(data.inputs)

    def objective(idx):
        tr = lif_forward(model.weights, model.biases, x_all[idx], model.params)
        R = tr.readout - tz_all[idx]
        loss = float(np.mean(R ** 2))
        _check_finite(loss, "loss", f"samples {list(idx)}")
        d_w, d_b = lif_backward(model.weights, tr, 2 * R / R.size, model.params)
        return loss, [*d_w, *d_b]

    return objective


# ---------------------------------------------------------------------------
# prediction

def predict(model, task: str, test: Dataset, pool: _Pool | None = None) -> np.ndarray:
    """Physical-unit predictions shaped like ``test.targets``."""
    pool = pool or _Pool(1)
    if isinstance(model, LifModel):
        return lif_predict(model, test.inputs)
    if isinstance(model, DeepOnetModel):
        Tq = np.array(pool.map(lambda y: mlp_forward(model.trunk, y)[0], test.aux["query"]))
        Bf = np.array(pool.map(lambda g: mlp_forward(model.branch, g)[0], test.inputs))
        return Bf @ Tq.T
    ys = np.array(pool.map(lambda x: mlp_forward(model, x)[0], test.inputs))
    if task == "pinn_poisson":
        x = test.inputs[:, :1]
        return x * (1 - x) * ys
    if task == "pinn_beltrami":
        return ys[:, :2]
    return ys


def prediction_table(task: str, test: Dataset, pred: np.ndarray):
    """Rows of (inputs..., pred..., ref...) plus the header."""
    if task == "deeponet_poisson":
        q = test.aux["query"][:, 0]
        n_f, n_q = pred.shape
        inputs = np.column_stack([np.repeat(np.arange(n_f), n_q), np.tile(q, n_f)])
        return ["sample", "y", "pred", "ref"], np.column_stack([inputs, pred.ravel(), test.targets.ravel()])
    d = test.inputs.shape[1]
    names = {1: ["x"], 2: ["x", "t"] if task == "pinn_burgers" else ["x", "y"], 3: ["x", "y", "t"]}[d]
    q = pred.shape[1]
    outs = ["u", "v", "p"][:q] if q > 1 else [""]
    pcols = [f"pred_{o}" if o else "pred" for o in outs]
    rcols = [f"ref_{o}" if o else "ref" for o in outs]
    return names + pcols + rcols, np.column_stack([test.inputs, pred, test.targets])


def evaluate(model, task: str, test: Dataset, pool: _Pool | None = None):
    pred = predict(model, task, test, pool)
    metrics = compute_metrics(pred, test.targets)
    extra = {}
    if task == "pinn_beltrami":
        for k, name in enumerate(("u", "v")):
            extra[f"rel_l2_{name}"] = compute_metrics(pred[:, k], test.targets[:, k]).rel_l2
    return pred, metrics, extra


# ---------------------------------------------------------------------------
# the loop

def train_task(task: str, cfg: TrainConfig, model_kind: str = "qif", lif: LifParams | None = None,
               out_dir=None, progress=None) -> TrainResult:
    """
    Full training run: data, initialization, mini-batch Adam with step decay, test metrics.

    ``model_kind`` is ``qif`` or ``lif_direct``. When ``out_dir`` is given the checkpoint,
    loss history, predictions and metrics are written there. ``progress(epoch, loss)`` is
    called after every epoch.
    """
    if task != cfg.task:
        raise ValueError(f"config is for task {cfg.task!r}, not {task!r}")
    if model_kind == "lif_direct" and (task.startswith("pinn_") or task == "deeponet_poisson"):
        raise ValueError(f"{task} is not available for the LIF baseline")
    train, test = make_datasets(task, cfg)
    init_seq, shuffle_seq, aux_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    aux_rng = np.random.default_rng(aux_seq)

    pool = _Pool(1 if cfg.deterministic else cfg.threads)
    if model_kind == "lif_direct":
        model = build_lif_model(cfg, lif or LifParams(), train, init_rng)
        objective = _lif_objective(model, train, cfg)
    elif model_kind == "qif":
        model = build_model(cfg, train, init_rng)
        if task == "deeponet_poisson":
            objective = _deeponet_objective(model, train, cfg, pool)
        elif task == "pinn_poisson":
            objective = _pinn_poisson_objective(model, train, cfg, pool)
        elif task in ("pinn_burgers", "pinn_beltrami"):
            objective = _pinn_pde_objective(model, train, cfg, pool, aux_rng)
        else:
            objective = _regression_objective(model, train, cfg, pool)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")

    params = model_parameters(model, cfg)
    phases = [m.net for m in _qif_mlps(model)] if (model_kind == "qif" and cfg.train_initial_phase) else []
    state = AdamState()
    history = []
    n = len(train)
    t0 = time.perf_counter()
    try:
        for ep in range(cfg.epochs):
            lr = scheduled_lr(cfg.learning_rate, ep, cfg.epochs, cfg.lr_milestones, cfg.lr_decay)
            perm = shuffle_rng.permutation(n)
            total = 0.0
            for b in range(0, n, cfg.batch_size):
                idx = perm[b:b + cfg.batch_size]
                loss, grads = objective(idx)
                for g in grads:
                    _check_finite(g, "gradient", f"epoch {ep}, batch starting at {b}")
                adam_step(params, grads, state, cfg, lr)
                for net in phases:
                    np.clip(net.initial_phase, 0.0, net.params.phi_theta * (1 - 1e-9),
                            out=net.initial_phase)
                total += loss * len(idx)
            history.append((ep, total / n, time.perf_counter() - t0))
            if progress is not None:
                progress(ep, total / n)
            if cfg.eval_every and (ep + 1) % cfg.eval_every == 0:
                _, m, _ = evaluate(model, task, test, pool)
                log.info("epoch %d loss %.4e test rel_l2 %.3f%%", ep, total / n, m.rel_l2)
        pred, metrics, extra = evaluate(model, task, test, pool)
    finally:
        pool.close()
    result = TrainResult(model, history, metrics, test.inputs, pred, test.targets, extra)
    if out_dir is not None:
        write_artifacts(result, task, out_dir, test, meta={"task": task, "model": model_kind,
                                                           "seed": cfg.seed})
    return result


def write_artifacts(result: TrainResult, task: str, out_dir, test: Dataset, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result.model, LifModel):
        save_lif_checkpoint(out / "checkpoint.bin", result.model, meta)
    else:
        save_checkpoint(out / "checkpoint.bin", result.model, meta)
    with open(out / "loss_history.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss", "wallclock"])
        for ep, loss, wall in result.history:
            w.writerow([ep, f"{loss:.17g}", f"{wall:.6f}"])
    write_predictions(out / "predictions.csv", *prediction_table(task, test, result.pred))
    metrics = {**meta, **result.metrics.to_dict(), **result.extra,
               "epochs": len(result.history),
               "wallclock": result.history[-1][2] if result.history else 0.0}
    if isinstance(result.model, LifModel):
        metrics["n_steps"] = result.model.params.n_steps
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))


def write_predictions(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r])


def read_predictions(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        rows = np.array([[float(v) for v in r] for r in rd])
    return header, rows
