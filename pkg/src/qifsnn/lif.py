"""
Time-stepped leaky integrate-and-fire MLP trained with surrogate gradients.

Inputs are injected as constant currents, hidden layers spike and reset, and the readout
is the time-averaged membrane potential of a non-spiking output layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .codec import TargetAffine
from .models import read_checkpoint_blob, write_checkpoint_blob

__all__ = [
    "LifParams",
    "LifModel",
    "LifTrace",
    "init_lif_model",
    "lif_forward",
    "lif_backward",
    "lif_predict",
    "surrogate_derivative",
    "save_lif_checkpoint",
    "load_lif_checkpoint",
]


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 0.25
    lam: float = 1.0
    v_rest: float = 0.0
    v_th: float = 1.0
    n_steps: int = 128
    duration: float = 1.0
    surrogate_slope: float = 2.0
    dt_override: float | None = None

    def __post_init__(self):
        if not self.v_th > self.v_rest:
            raise ValueError("v_th must exceed v_rest")
        if self.n_steps < 1 or self.tau_m <= 0 or self.duration <= 0:
            raise ValueError("n_steps, tau_m and duration must be positive")
        if self.lam < 0 or self.surrogate_slope < 0:
            raise ValueError("lam and surrogate_slope must be non-negative")

    @property
    def dt(self) -> float:
        return self.dt_override if self.dt_override is not None else self.duration / self.n_steps

    @property
    def decay(self) -> float:
        """Multiplier of V per step from the leak."""
        return 1.0 - self.dt * self.lam / self.tau_m

    @property
    def gain(self) -> float:
        return self.dt / self.tau_m


@dataclass
class LifModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    params: LifParams
    x_lo: np.ndarray
    x_hi: np.ndarray
    target_affine: TargetAffine = field(default_factory=TargetAffine)

    def normalize(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.clip((x - self.x_lo) / (self.x_hi - self.x_lo), 0.0, 1.0)

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def init_lif_model(layer_sizes, params: LifParams, rng: np.random.Generator, x_lo, x_hi,
                   w_scale: float = 1.0, bias_range=(0.5, 1.5),
                   target_affine: TargetAffine | None = None) -> LifModel:
    ws, bs = [], []
    for l in range(len(layer_sizes) - 1):
        k = w_scale * math.sqrt(3.0 / layer_sizes[l])
        ws.append(rng.uniform(-k, k, (layer_sizes[l + 1], layer_sizes[l])))
        if l < len(layer_sizes) - 2:
            bs.append(rng.uniform(*bias_range, layer_sizes[l + 1]))
        else:
            bs.append(np.zeros(layer_sizes[l + 1]))
    return LifModel(list(layer_sizes), ws, bs, params, np.asarray(x_lo, float),
                    np.asarray(x_hi, float), target_affine or TargetAffine())


@njit(cache=True)
def _spiking_recurrence(I, decay, gain, lam, v_rest, v_th):
    """Euler steps of one spiking layer; returns pre-reset potentials H and spikes S."""
    n_t, n_b, n_u = I.shape
    H = np.empty_like(I)
    S = np.zeros_like(I)
    V = np.full((n_b, n_u), v_rest)
    for t in range(n_t):
        for b in range(n_b):
            for i in range(n_u):
                h = decay * V[b, i] + gain * (lam * v_rest + I[t, b, i])
                H[t, b, i] = h
                if h >= v_th:
                    S[t, b, i] = 1.0
                    V[b, i] = v_rest
                else:
                    V[b, i] = h
    return H, S


@njit(cache=True)
def _spiking_recurrence_backward(gS, H, S, decay, gain, slope, v_th):
    """Adjoint of :func:`_spiking_recurrence` w.r.t. the input currents."""
    n_t, n_b, n_u = H.shape
    gI = np.empty_like(H)
    gV = np.zeros((n_b, n_u))
    k = math.pi * slope
    for t in range(n_t - 1, -1, -1):
        for b in range(n_b):
            for i in range(n_u):
                d = H[t, b, i] - v_th
                sp = slope / (1.0 + (k * d) ** 2)
                gh = gS[t, b, i] * sp + gV[b, i] * (1.0 - S[t, b, i])
                gI[t, b, i] = gain * gh
                gV[b, i] = decay * gh
    return gI


@njit(cache=True)
def _readout_recurrence(I, decay, gain, lam, v_rest):
    n_t, n_b, n_u = I.shape
    V = np.full((n_b, n_u), v_rest)
    acc = np.zeros((n_b, n_u))
    for t in range(n_t):
        for b in range(n_b):
            for i in range(n_u):
                V[b, i] = decay * V[b, i] + gain * (lam * v_rest + I[t, b, i])
                acc[b, i] += V[b, i]
    return acc / n_t


@njit(cache=True)
def _readout_backward(gy, n_t, decay, gain):
    n_b, n_u = gy.shape
    gI = np.empty((n_t, n_b, n_u))
    gV = np.zeros((n_b, n_u))
    for t in range(n_t - 1, -1, -1):
        for b in range(n_b):
            for i in range(n_u):
                gV[b, i] = gy[b, i] / n_t + decay * gV[b, i]
                gI[t, b, i] = gain * gV[b, i]
    return gI


def surrogate_derivative(V, v_th: float = 1.0, slope: float = 2.0):
    """Arctan-family stand-in for the derivative of the spike step function."""
    with np.errstate(over="ignore"):  # huge |V| saturates to 0
        return slope / (1.0 + (np.pi * slope * (np.asarray(V) - v_th)) ** 2)


@dataclass
class LifTrace:
    inputs: list[np.ndarray]  # per layer, the (n_steps, batch, n_in) presynaptic signal
    H: list[np.ndarray]  # pre-reset potentials of spiking layers
    S: list[np.ndarray]  # spikes of spiking layers
    readout: np.ndarray  # (batch, n_out)


def lif_forward(weights, biases, x, params: LifParams) -> LifTrace:
    """
    Simulate ``params.n_steps`` Euler steps for a batch of normalized inputs ``x``
    (shape ``(batch, n_in)``), presented as constant currents.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sig = np.broadcast_to(x, (params.n_steps, *x.shape))
    inputs, Hs, Ss = [], [], []
    n_layers = len(weights)
    for l, (W, b) in enumerate(zip(weights, biases)):
        inputs.append(sig)
        I = sig @ W.T + b
        if l == n_layers - 1:
            y = _readout_recurrence(np.ascontiguousarray(I), params.decay, params.gain,
                                    params.lam, params.v_rest)
            return LifTrace(inputs, Hs, Ss, y)
        H, S = _spiking_recurrence(np.ascontiguousarray(I), params.decay, params.gain,
                                   params.lam, params.v_rest, params.v_th)
        Hs.append(H)
        Ss.append(S)
        sig = S
    raise ValueError("network needs at least one layer")


def lif_backward(weights, trace: LifTrace, grad_readout, params: LifParams):
    """
    Backpropagation through time with the surrogate spike derivative; resets are
    detached. Returns ``(d_weights, d_biases)``.
    """
    gy = np.atleast_2d(np.asarray(grad_readout, dtype=float))
    n_layers = len(weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    gI = _readout_backward(gy, params.n_steps, params.decay, params.gain)
    for l in range(n_layers - 1, -1, -1):
        inp = trace.inputs[l]
        d_w[l] = np.einsum("tbo,tbi->oi", gI, inp)
        d_b[l] = gI.sum(axis=(0, 1))
        if l == 0:
            break
        gS = gI @ weights[l]
        gI = _spiking_recurrence_backward(np.ascontiguousarray(gS), trace.H[l - 1], trace.S[l - 1],
                                          params.decay, params.gain, params.surrogate_slope,
                                          params.v_th)
    return d_w, d_b


def lif_predict(model: LifModel, x, chunk: int = 256) -> np.ndarray:
    """Physical-unit predictions for a batch of raw inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = []
    for s in range(0, len(x), chunk):
        tr = lif_forward(model.weights, model.biases, model.normalize(x[s:s + chunk]), model.params)
        out.append(model.target_affine.inverse(tr.readout))
    return np.vstack(out)


def save_lif_checkpoint(path, model: LifModel, meta: dict | None = None) -> None:
    header = {
        "kind": "lif",
        "layer_sizes": model.layer_sizes,
        "params": asdict(model.params),
        "x_lo": model.x_lo.tolist(),
        "x_hi": model.x_hi.tolist(),
        "target_affine": {"scale": np.asarray(model.target_affine.scale).tolist(),
                          "offset": np.asarray(model.target_affine.offset).tolist()},
        "meta": meta or {},
    }
    write_checkpoint_blob(path, header, [*model.weights, *model.biases])


def load_lif_checkpoint(path) -> tuple[LifModel, dict]:
    header, flat = read_checkpoint_blob(path)
    if header.get("kind") != "lif":
        raise ValueError(f"{path}: not an LIF checkpoint")
    sizes = header["layer_sizes"]
    ws, bs, pos = [], [], 0
    for l in range(len(sizes) - 1):
        k = sizes[l] * sizes[l + 1]
        ws.append(flat[pos:pos + k].reshape(sizes[l + 1], sizes[l]).copy())
        pos += k
    for l in range(len(sizes) - 1):
        bs.append(flat[pos:pos + sizes[l + 1]].copy())
        pos += sizes[l + 1]
    ta = header["target_affine"]
    affine = TargetAffine(np.asarray(ta["scale"]) if isinstance(ta["scale"], list) else ta["scale"],
                          np.asarray(ta["offset"]) if isinstance(ta["offset"], list) else ta["offset"])
    model = LifModel(sizes, ws, bs, LifParams(**header["params"]), np.asarray(header["x_lo"]),
                     np.asarray(header["x_hi"]), affine)
    return model, header["meta"]
