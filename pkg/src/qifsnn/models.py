"""
Task-level compositions of the spiking engine: MLP regressor, DeepONet and PINN residuals.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import DecodeSpec, EncodingSpec, TargetAffine, encode
from .engine import NetworkSpec, TrialResult, run_trial
from .grad import GradientSet, backward_decoded, input_sensitivity
from .qif import NeuronParams

__all__ = [
    "MlpModel",
    "DeepOnetModel",
    "PinnProblem",
    "init_network",
    "mlp_forward",
    "mlp_backward",
    "deeponet_forward",
    "exact_first_derivative",
    "pinn_residual_poisson1d",
    "pinn_residual_burgers",
    "pinn_residual_beltrami",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "write_checkpoint_blob",
    "read_checkpoint_blob",
]


def init_network(layer_sizes, params: NeuronParams, T: float, rng: np.random.Generator,
                 w_scale: float = 0.5, initial_phase: float = 0.0) -> NetworkSpec:
    """Uniform init in ``[-w_scale/sqrt(fan_in), w_scale/sqrt(fan_in)]``."""
    ws = []
    for l in range(len(layer_sizes) - 1):
        width = w_scale / np.sqrt(layer_sizes[l])
        ws.append(rng.uniform(-width, width, (layer_sizes[l + 1], layer_sizes[l])))
    n = sum(layer_sizes[1:])
    return NetworkSpec(list(layer_sizes), ws, params, T, np.full(n, float(initial_phase)))


@dataclass
class MlpModel:
    net: NetworkSpec
    encodings: list[EncodingSpec]
    decode: DecodeSpec
    target_affine: TargetAffine = field(default_factory=TargetAffine)

    def __post_init__(self):
        n_in = sum(e.n_channels for e in self.encodings)
        if n_in != self.net.layer_sizes[0]:
            raise ValueError(f"encodings produce {n_in} channels, network expects {self.net.layer_sizes[0]}")
        if len(self.decode.pairs) * 2 != self.net.layer_sizes[-1]:
            raise ValueError("output layer must hold two neurons per decoded value")
        self.net.decode_pairs = [tuple(p) for p in self.decode.pairs]

    @property
    def n_inputs(self) -> int:
        return len(self.encodings)

    @property
    def n_outputs(self) -> int:
        return len(self.decode.pairs)


def mlp_forward(model: MlpModel, x) -> tuple[np.ndarray, TrialResult]:
    """Encode, simulate, decode and map back to physical units."""
    spikes, _ = encode(x, model.encodings)
    trial = run_trial(model.net, spikes)
    y = model.target_affine.inverse(trial.decoded)
    return np.asarray(y, dtype=float), trial


def mlp_backward(model: MlpModel, trial: TrialResult, seed_y) -> GradientSet:
    """Gradient of ``sum_q seed_y[q] * y[q]`` for a trial produced by :func:`mlp_forward`."""
    seed_z = np.asarray(seed_y, dtype=float) / model.target_affine.scale
    return backward_decoded(trial.tape, np.broadcast_to(seed_z, (model.n_outputs,)))


def exact_first_derivative(model: MlpModel, x, dim: int | None = None, trial: TrialResult | None = None):
    """
    ``dy/dx`` of the model output through exact spike-time gradients and the encoding
    derivatives. Returns the full ``(n_outputs, n_inputs)`` Jacobian, or column ``dim``.
    """
    spikes, dt_dx = encode(x, model.encodings)
    if trial is None:
        trial = run_trial(model.net, spikes)
    jac = input_sensitivity(trial, dt_dx) / model.target_affine.scale
    # clamped inputs do not move their spikes
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    for d, e in enumerate(model.encodings):
        if xs[d] < e.x_min or xs[d] > e.x_max:
            jac[:, d] = 0.0
    return jac if dim is None else jac[:, dim]


@dataclass
class DeepOnetModel:
    branch: MlpModel
    trunk: MlpModel

    def __post_init__(self):
        if self.branch.n_outputs != self.trunk.n_outputs:
            raise ValueError("branch and trunk must produce the same latent width")

    @property
    def p(self) -> int:
        return self.branch.n_outputs


def deeponet_combine(b: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``sum_i B_i T_i`` for every pair of rows of ``b`` and ``t``."""
    return np.atleast_2d(b) @ np.atleast_2d(t).T


def deeponet_forward(model: DeepOnetModel, g_samples, y) -> float:
    b, _ = mlp_forward(model.branch, g_samples)
    t, _ = mlp_forward(model.trunk, np.atleast_1d(y))
    return float(b @ t)


@dataclass
class PinnProblem:
    """
    PDE residual configuration.

    ``pde_kind`` is ``poisson1d``, ``burgers`` or ``beltrami``; ``bounds`` lists
    ``(low, high)`` per input dimension (``x`` first, time last).
    """

    pde_kind: str
    bounds: list[tuple[float, float]]
    fd_step: float
    nu: float = 0.01 / np.pi

    def __post_init__(self):
        if self.pde_kind not in ("poisson1d", "burgers", "beltrami"):
            raise ValueError(f"unknown PDE {self.pde_kind!r}")
        extent = min(hi - lo for lo, hi in self.bounds)
        if not 0 < self.fd_step < 0.1 * extent:
            raise ValueError("fd_step must be positive and below a tenth of the domain extent")

    def hard_constraint(self, x):
        """Multiplier and its derivative for the hard-constrained problem (1-D Poisson)."""
        if self.pde_kind != "poisson1d":
            return 1.0, 0.0
        lo, hi = self.bounds[0]
        return (x - lo) * (hi - x), (hi - x) - (x - lo)


def _check_stencil(prob: PinnProblem, pts) -> None:
    for q in pts:
        for v, (lo, hi) in zip(np.atleast_1d(q), prob.bounds):
            if v < lo - 1e-12 or v > hi + 1e-12:
                raise ValueError(f"stencil point {np.atleast_1d(q).tolist()} leaves the domain")


def poisson_source(x):
    return 2 * np.pi ** 2 * np.sin(np.pi * x)


def _poisson_u(model: MlpModel, prob: PinnProblem, x: float):
    y, trial = mlp_forward(model, [x])
    m, _ = prob.hard_constraint(x)
    return m * float(y[0]), trial, m


def pinn_residual_poisson1d(model: MlpModel, prob: PinnProblem, x: float, source=poisson_source,
                            with_grad: bool = False):
    """
    Residual ``-u_xx - g(x)`` with ``u = x(1-x) N(x)`` and a 3-point central stencil.

    With ``with_grad`` also returns the exact weight gradient of the discretized residual,
    summed over the three stencil trials.
    """
    h = prob.fd_step
    pts = (x - h, x, x + h)
    cw = (-1.0 / h ** 2, 2.0 / h ** 2, -1.0 / h ** 2)
    _check_stencil(prob, pts)
    vals, trials, mults = zip(*(_poisson_u(model, prob, xi) for xi in pts))
    res = sum(c * v for c, v in zip(cw, vals)) - float(source(x))
    if not with_grad:
        return res
    grad = None
    for c, tr, m in zip(cw, trials, mults):
        g = mlp_backward(model, tr, [c * m])
        grad = g if grad is None else grad + g
    return res, grad


def _stencil_points(center, steps):
    """Center plus +-h along each dimension, in that order."""
    center = np.asarray(center, dtype=float)
    pts = [center]
    for d, h in enumerate(steps):
        for s in (1.0, -1.0):
            q = center.copy()
            q[d] += s * h
            pts.append(q)
    return pts


def _stencil_derivs(vals, steps):
    """Central first and second differences from values laid out by ``_stencil_points``."""
    vals = np.asarray(vals)
    c = vals[0]
    first, second = [], []
    for d, h in enumerate(steps):
        up, dn = vals[1 + 2 * d], vals[2 + 2 * d]
        first.append((up - dn) / (2 * h))
        second.append((up - 2 * c + dn) / h ** 2)
    return c, first, second


def pinn_residual_burgers(model: MlpModel, prob: PinnProblem, xt, with_grad: bool = False):
    """
    Residual ``u_t + u u_x - nu u_xx`` at ``(x, t)`` from a 5-point stencil.

    With ``with_grad`` returns ``(residual, seeds, trials)`` where ``seeds[k]`` is
    ``d residual / d u`` at stencil trial ``k``; callers scale seeds by the loss adjoint.
    """
    h = prob.fd_step
    steps = (h, h)
    pts = _stencil_points(xt, steps)
    _check_stencil(prob, pts)
    outs = [mlp_forward(model, q) for q in pts]
    vals = [float(o[0][0]) for o in outs]
    u, (ux, ut), (uxx, _) = _stencil_derivs(vals, steps)
    res = ut + u * ux - prob.nu * uxx
    if not with_grad:
        return res
    # d res / d vals at [c, x+, x-, t+, t-]
    seeds = np.array([
        ux + 2 * prob.nu / h ** 2,
        u / (2 * h) - prob.nu / h ** 2,
        -u / (2 * h) - prob.nu / h ** 2,
        1 / (2 * h),
        -1 / (2 * h),
    ])
    return res, seeds, [o[1] for o in outs]


def pinn_residual_beltrami(model: MlpModel, prob: PinnProblem, xyt, with_grad: bool = False):
    """
    Incompressible Navier-Stokes residuals ``(r_u, r_v, r_c)`` at ``(x, y, t)`` for a
    three-output network ``(u, v, p)``, unit viscosity, 7-point stencil.

    With ``with_grad`` returns ``(residuals, jac, trials)`` where ``jac[r, k, q]`` is the
    derivative of residual ``r`` with respect to output ``q`` at stencil trial ``k``.
    """
    h = prob.fd_step
    steps = (h, h, h)
    pts = _stencil_points(xyt, steps)
    _check_stencil(prob, pts)
    outs = [mlp_forward(model, q) for q in pts]
    V = np.array([o[0] for o in outs])  # (7, 3)
    (u, v, _p), first, second = _stencil_derivs(V, steps)
    (ux, vx, px), (uy, vy, py), (ut, vt, _) = first
    (uxx, vxx, _), (uyy, vyy, _), _ = second
    r_u = ut + u * ux + v * uy + px - (uxx + uyy)
    r_v = vt + u * vx + v * vy + py - (vxx + vyy)
    r_c = ux + vy
    res = np.array([r_u, r_v, r_c])
    if not with_grad:
        return res
    jac = np.zeros((3, 7, 3))
    d1 = 1 / (2 * h)
    d2 = 1 / h ** 2
    # stencil layout: 0 center, 1/2 x+-, 3/4 y+-, 5/6 t+-
    for comp, (r, adv_x, adv_y) in enumerate(((0, ux, uy), (1, vx, vy))):
        jac[r, 0, comp] += 4 * d2
        jac[r, 0, 0] += adv_x
        jac[r, 0, 1] += adv_y
        jac[r, 1, comp] += u * d1 - d2
        jac[r, 2, comp] += -u * d1 - d2
        jac[r, 3, comp] += v * d1 - d2
        jac[r, 4, comp] += -v * d1 - d2
        jac[r, 5, comp] += d1
        jac[r, 6, comp] += -d1
        jac[r, 1 if r == 0 else 3, 2] += d1
        jac[r, 2 if r == 0 else 4, 2] += -d1
    jac[2, 1, 0] += d1
    jac[2, 2, 0] += -d1
    jac[2, 3, 1] += d1
    jac[2, 4, 1] += -d1
    return res, jac, [o[1] for o in outs]


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"QIFSNNCK"
CHECKPOINT_VERSION = 1


def _mlp_header(m: MlpModel) -> dict:
    net = m.net
    return {
        "layer_sizes": net.layer_sizes,
        "tau_m": net.params.tau_m,
        "I_0": net.params.I_0,
        "eps_guard": net.params.eps_guard,
        "trial_T": net.trial_T,
        "decode_pairs": [list(p) for p in m.decode.pairs],
        "encodings": [e.__dict__ for e in m.encodings],
        "target_affine": {"scale": _jsonable(m.target_affine.scale),
                          "offset": _jsonable(m.target_affine.offset)},
    }


def _jsonable(v):
    return np.asarray(v, dtype=float).tolist()


def write_checkpoint_blob(path, header: dict, arrays) -> None:
    """
    Binary layout, little-endian:

        8 bytes   magic ``QIFSNNCK``
        uint32    format version
        uint32    header length n
        n bytes   UTF-8 JSON header
        float64[] the arrays, each flattened row-major, concatenated
    """
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint_blob(path) -> tuple[dict, np.ndarray]:
    """Inverse of :func:`write_checkpoint_blob`: the header and the concatenated floats."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + n])
    flat = np.frombuffer(data, dtype="<f8", offset=16 + n).astype(float)
    return header, flat


def save_checkpoint(path, model, meta: dict | None = None) -> None:
    """
    Persist an :class:`MlpModel` or :class:`DeepOnetModel`. The JSON header carries layer
    sizes, neuron parameters, trial length and codec settings per network; the payload holds,
    per network, the weights layer by layer (row-major) followed by the initial phases.
    """
    if isinstance(model, DeepOnetModel):
        kind, mlps = "deeponet", [model.branch, model.trunk]
    else:
        kind, mlps = "mlp", [model]
    header = {"kind": kind, "networks": [_mlp_header(m) for m in mlps], "meta": meta or {}}
    arrays = []
    for m in mlps:
        arrays += [m.net.flat_weights(), m.net.initial_phase]
    write_checkpoint_blob(path, header, arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, meta)``."""
    header, flat = read_checkpoint_blob(path)
    if header.get("kind") not in ("mlp", "deeponet"):
        raise ValueError(f"{path}: not a QIF model checkpoint")
    pos = 0
    mlps = []
    for h in header["networks"]:
        sizes = h["layer_sizes"]
        params = NeuronParams(h["tau_m"], h["I_0"], h["eps_guard"])
        ws = []
        for l in range(len(sizes) - 1):
            k = sizes[l] * sizes[l + 1]
            ws.append(flat[pos:pos + k].reshape(sizes[l + 1], sizes[l]).copy())
            pos += k
        n_phi = sum(sizes[1:])
        phi0 = flat[pos:pos + n_phi].copy()
        pos += n_phi
        pairs = [tuple(p) for p in h["decode_pairs"]]
        net = NetworkSpec(sizes, ws, params, h["trial_T"], phi0, pairs)
        ta = h["target_affine"]
        affine = TargetAffine(_unlist(ta["scale"]), _unlist(ta["offset"]))
        encs = [EncodingSpec(**e) for e in h["encodings"]]
        mlps.append(MlpModel(net, encs, DecodeSpec(tuple(pairs)), affine))
    model = DeepOnetModel(*mlps) if header["kind"] == "deeponet" else mlps[0]
    return model, header["meta"]


def _unlist(v):
    return np.asarray(v, dtype=float) if isinstance(v, list) else float(v)
