"""
Event-driven simulation of layered feedforward QIF networks over a trial ``[0, T]``.

Layers are simulated one after another: all emissions of layer ``l`` are known before
layer ``l+1`` is processed. Every neuron drifts with unit phase velocity, applies the
guarded PTC at each presynaptic spike, and fires when its phase reaches ``phi_theta``.
After the trial, pseudostates and first pseudospike times extend the output smoothly
past ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K
from .qif import NeuronParams, ptc, v_of_phi

__all__ = [
    "NetworkSpec",
    "SpikeEvent",
    "EventTape",
    "TrialResult",
    "run_trial",
    "apply_guarded_jump",
    "compute_pseudostates",
    "pseudospike_time",
    "pack_inputs",
]


@dataclass
class NetworkSpec:
    """
    Layer sizes, dense weights and trial configuration of a feedforward QIF network.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])``; ``layer_sizes[0]`` is the
    number of input channels. ``decode_pairs`` index the output layer as ``(a, b)`` and decode
    to ``t_b - t_a``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    params: NeuronParams
    trial_T: float
    initial_phase: np.ndarray | None = None
    decode_pairs: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("need at least an input and an output layer of positive size")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ValueError("one weight matrix per pair of adjacent layers")
        self.weights = [np.ascontiguousarray(w, dtype=float) for w in self.weights]
        for l, w in enumerate(self.weights):
            expected = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != expected:
                raise ValueError(f"weights[{l}] has shape {w.shape}, expected {expected}")
        if not self.trial_T > 0:
            raise ValueError("trial_T must be positive")
        if self.initial_phase is None:
            self.initial_phase = np.zeros(self.n_neurons)
        self.initial_phase = np.asarray(self.initial_phase, dtype=float)
        if self.initial_phase.shape != (self.n_neurons,):
            raise ValueError("initial_phase needs one entry per network neuron")
        if np.any(self.initial_phase < 0) or np.any(self.initial_phase >= self.params.phi_theta):
            raise ValueError("initial_phase must lie in [0, phi_theta)")
        n_out = self.layer_sizes[-1]
        if self.decode_pairs is None:
            if n_out % 2:
                raise ValueError("odd output layer needs explicit decode_pairs")
            self.decode_pairs = [(2 * q, 2 * q + 1) for q in range(n_out // 2)]
        self.decode_pairs = [(int(a), int(b)) for a, b in self.decode_pairs]
        used = sorted(i for pair in self.decode_pairs for i in pair)
        if used != list(range(n_out)):
            raise ValueError("decode pairs must partition the output layer")

    @property
    def n_neurons(self) -> int:
        return sum(self.layer_sizes[1:])

    @property
    def n_out(self) -> int:
        return len(self.decode_pairs)

    @property
    def layer_offsets(self) -> np.ndarray:
        """Offset of each network layer in the flat neuron index (length ``L + 1``)."""
        return np.concatenate([[0], np.cumsum(self.layer_sizes[1:])]).astype(np.int64)

    @property
    def weight_offsets(self) -> np.ndarray:
        sizes = [w.size for w in self.weights]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def set_flat_weights(self, flat: np.ndarray) -> None:
        off = self.weight_offsets
        for l, w in enumerate(self.weights):
            w[...] = flat[off[l]:off[l + 1]].reshape(w.shape)

    def copy(self) -> "NetworkSpec":
        return NetworkSpec(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            self.params,
            self.trial_T,
            self.initial_phase.copy(),
            list(self.decode_pairs),
        )


@dataclass(frozen=True)
class SpikeEvent:
    time: float
    layer: int
    neuron: int
    ordinal: int


@dataclass
class EventTape:
    """
    Flat record of a trial's events with their local partial derivatives.

    Node kinds are ``input``, ``phi0``, ``jump``, ``emission`` and ``terminal`` (see
    ``_kernels``); ``pseudo`` holds the dense post-trial quantities per neuron.
    """

    n_nodes: int
    kind: np.ndarray
    value: np.ndarray
    parents: np.ndarray
    coef: np.ndarray
    weight_index: np.ndarray
    weight_partial: np.ndarray
    guarded: np.ndarray
    owner: np.ndarray
    first_node: np.ndarray
    terminal_node: np.ndarray
    phi0_node: np.ndarray
    input_nodes: list[np.ndarray]
    pseudo_r: np.ndarray
    pseudo_u: np.ndarray
    pseudo_hphi: np.ndarray
    pseudo_hu: np.ndarray
    output_is_pseudo: np.ndarray
    net: NetworkSpec = field(repr=False)

    KIND_NAMES = ("input", "phi0", "jump", "emission", "terminal")

    def signature(self) -> tuple:
        """Event-order fingerprint; equal signatures mean the same differentiable branch."""
        n = self.n_nodes
        return (
            self.kind[:n].tobytes(),
            self.owner[:n].tobytes(),
            self.parents[:n, 1].tobytes(),
            self.guarded[:n].tobytes(),
        )


@dataclass
class TrialResult:
    """Outcome of one trial; ``spikes`` is materialized lazily from the tape."""

    terminal_phase: np.ndarray
    pseudostate_r: np.ndarray
    pseudo_u: np.ndarray
    n_trial: np.ndarray
    first_spike_time: np.ndarray
    decoded: np.ndarray
    tape: EventTape

    @cached_property
    def spikes(self) -> list[list[SpikeEvent]]:
        tape = self.tape
        net = tape.net
        off = net.layer_offsets
        layers: list[list[SpikeEvent]] = [[] for _ in range(len(net.layer_sizes) - 1)]
        counts = np.zeros(net.n_neurons, dtype=int)
        for nd in np.flatnonzero(tape.kind[: tape.n_nodes] == K.EMIT):
            g = int(tape.owner[nd])
            l = int(np.searchsorted(off, g, side="right") - 1)
            counts[g] += 1
            layers[l].append(SpikeEvent(float(tape.value[nd]), l, g - int(off[l]), int(counts[g])))
        for evs in layers:
            evs.sort(key=lambda e: (e.time, e.neuron))
        return layers

    def spikes_by_neuron(self) -> list[np.ndarray]:
        """Ordinary spike times per network neuron (global index order)."""
        tape = self.tape
        emit = np.flatnonzero(tape.kind[: tape.n_nodes] == K.EMIT)
        owners = tape.owner[emit]
        return [np.sort(tape.value[emit[owners == g]]) for g in range(tape.net.n_neurons)]

    @property
    def terminal_voltage(self) -> np.ndarray:
        return v_of_phi(self.terminal_phase, self.tape.net.params)


def pack_inputs(input_spikes, n_channels: int) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """
    Merge per-channel spike lists into one time-ordered stream (ties by channel).

    Returns ``(times, channels, index)`` where ``index[c][s]`` is the position of spike ``s``
    of channel ``c`` in the merged stream.
    """
    if len(input_spikes) != n_channels:
        raise ValueError(f"expected {n_channels} input channels, got {len(input_spikes)}")
    times, chans = [], []
    for c, ts in enumerate(input_spikes):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if ts.size > 1 and np.any(np.diff(ts) < 0):
            raise ValueError(f"input channel {c} is not sorted")
        times.append(ts)
        chans.append(np.full(ts.size, c, dtype=np.int64))
    t = np.concatenate(times) if times else np.empty(0)
    c = np.concatenate(chans) if chans else np.empty(0, dtype=np.int64)
    order = np.lexsort((c, t))
    pos = np.empty_like(order)
    pos[order] = np.arange(order.size)
    index, start = [], 0
    for ts in times:
        index.append(pos[start:start + ts.size])
        start += ts.size
    return t[order], c[order], index


def run_trial(net: NetworkSpec, input_spikes, _capacity: int | None = None) -> TrialResult:
    """
    Simulate ``net`` on per-channel sorted input spike times over ``[0, net.trial_T]``.
    """
    p = net.params
    T = float(net.trial_T)
    t_in, c_in, index = pack_inputs(input_spikes, net.layer_sizes[0])
    if t_in.size and (t_in.min() < 0 or t_in.max() > T):
        raise ValueError("input spike times must lie in [0, T]")
    sizes = np.asarray(net.layer_sizes, dtype=np.int64)
    wflat = net.flat_weights()
    woff = net.weight_offsets
    noff = net.layer_offsets
    cap = _capacity or max(1024, 4 * (t_in.size + net.n_neurons) + 8 * int(np.dot(sizes[1:], sizes[:-1])))
    while True:
        out = K.forward_trial(sizes, wflat, woff, net.initial_phase, noff, t_in, c_in,
                              p.tau_m, p.root, p.phi_theta, p.eps_guard, T, cap)
        if out[0]:
            break
        cap *= 2
    (_, n, kind, val, par, coef, widx, wd, guard, owner,
     n_spk, first_node, term_node, phi0_node) = out
    term_val = val[term_node]
    r, u, hphi, hu = K.pseudo_states(sizes, wflat, woff, noff, term_val, p.root, p.tau_m, p.phi_theta)

    out_sl = slice(noff[-2], noff[-1])
    out_n = n_spk[out_sl]
    is_pseudo = out_n == 0
    first = np.where(is_pseudo, T + p.phi_theta - r[out_sl] * p.phi_theta,
                     val[np.maximum(first_node[out_sl], 0)])
    pairs = np.asarray(net.decode_pairs, dtype=np.int64)
    decoded = first[pairs[:, 1]] - first[pairs[:, 0]]

    tape = EventTape(
        n_nodes=n, kind=kind, value=val, parents=par, coef=coef, weight_index=widx,
        weight_partial=wd, guarded=guard, owner=owner, first_node=first_node,
        terminal_node=term_node, phi0_node=phi0_node, input_nodes=index,
        pseudo_r=r, pseudo_u=u, pseudo_hphi=hphi, pseudo_hu=hu,
        output_is_pseudo=is_pseudo, net=net,
    )
    return TrialResult(
        terminal_phase=term_val, pseudostate_r=r, pseudo_u=u, n_trial=n_spk,
        first_spike_time=first, decoded=decoded, tape=tape,
    )


def apply_guarded_jump(phi: float, w: float, p: NeuronParams) -> float:
    """PTC jump, ignored when ``phi`` lies within ``eps_guard`` of reset or threshold."""
    eps = p.eps_guard
    if phi < eps or phi > p.phi_theta - eps:
        return float(phi)
    return float(ptc(phi, w, p))


def compute_pseudostates(terminal_voltage, weights, layer_sizes, p: NeuronParams):
    """
    Pseudostates ``r`` and pseudo-inputs ``u`` from terminal voltages.

    Input channels contribute ``r = 0``; deeper layers use ``u_i = sum_j w_ij r_j`` over the
    previous layer and ``r_i = Phi(V_i(T) + u_i) / phi_theta``.
    """
    from .qif import phi_of_v

    V = np.asarray(terminal_voltage, dtype=float)
    sizes = list(layer_sizes)
    off = np.concatenate([[0], np.cumsum(sizes[1:])])
    r = np.empty(off[-1])
    u = np.zeros(off[-1])
    for l in range(len(sizes) - 1):
        sl = slice(off[l], off[l + 1])
        if l > 0:
            u[sl] = np.asarray(weights[l]) @ r[off[l - 1]:off[l]]
        r[sl] = phi_of_v(V[sl] + u[sl], p) / p.phi_theta
    return r, u


def pseudospike_time(k: int, n_trial: int, phi_T: float, u: float, p: NeuronParams, T: float) -> float:
    """Time of the ``k``-th spike when it falls after the trial end (``k > n_trial``)."""
    if k <= n_trial:
        raise ValueError("spike ordinal k must exceed the ordinary spike count")
    return float(T + (k - n_trial) * p.phi_theta - ptc(phi_T, u, p))
