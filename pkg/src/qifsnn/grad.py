"""
Exact reverse-mode gradients of first output spike times by a backward sweep over the
event tape, plus a central-difference checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .engine import EventTape, NetworkSpec, TrialResult, run_trial

__all__ = [
    "GradientSet",
    "backward",
    "backward_decoded",
    "decoded_seed_to_spike_seed",
    "GradCheckReport",
    "grad_check",
    "input_sensitivity",
]


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_input_times: list[np.ndarray]
    d_initial_phase: np.ndarray

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.d_weights])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            [a + b for a, b in zip(self.d_weights, other.d_weights)],
            [a + b for a, b in zip(self.d_input_times, other.d_input_times)],
            self.d_initial_phase + other.d_initial_phase,
        )

    def scale(self, c: float) -> "GradientSet":
        return GradientSet(
            [c * g for g in self.d_weights],
            [c * g for g in self.d_input_times],
            c * self.d_initial_phase,
        )


def decoded_seed_to_spike_seed(net: NetworkSpec, seed_decoded) -> np.ndarray:
    """Adjoints of decoded values ``t_b - t_a`` as adjoints of the output first-spike times."""
    seed_decoded = np.asarray(seed_decoded, dtype=float)
    if seed_decoded.shape != (net.n_out,):
        raise ValueError(f"decoded seed needs shape ({net.n_out},)")
    s = np.zeros(net.layer_sizes[-1])
    for q, (a, b) in enumerate(net.decode_pairs):
        s[b] += seed_decoded[q]
        s[a] -= seed_decoded[q]
    return s


def backward(tape: EventTape, seed) -> GradientSet:
    """
    Gradient of ``sum_o seed[o] * t_first[o]`` over all weights, input spike times and
    initial phases, where ``t_first[o]`` is the first (ordinary or pseudo) spike time of
    output neuron ``o``.
    """
    net = tape.net
    seed = np.asarray(seed, dtype=float)
    n_out = net.layer_sizes[-1]
    if seed.shape != (n_out,):
        raise ValueError(f"seed must have one entry per output neuron ({n_out})")
    noff = net.layer_offsets
    theta = net.params.phi_theta

    node_seed = np.zeros(tape.n_nodes)
    u_seed = np.zeros(net.n_neurons)
    for o in range(n_out):
        s = seed[o]
        if s == 0.0:
            continue
        g = noff[-2] + o
        if tape.output_is_pseudo[o]:
            # t_ps = T + theta - H(phi_T, u)
            node_seed[tape.terminal_node[g]] -= tape.pseudo_hphi[g] * s
            u_seed[g] -= tape.pseudo_hu[g] * s
        else:
            node_seed[tape.first_node[g]] += s

    sizes = np.asarray(net.layer_sizes, dtype=np.int64)
    wflat = net.flat_weights()
    adj, gw = K.backward_sweep(
        tape.n_nodes, tape.kind, tape.parents, tape.coef, tape.weight_index,
        tape.weight_partial, node_seed, sizes, wflat, net.weight_offsets, noff,
        tape.terminal_node, tape.pseudo_r, tape.pseudo_hphi, tape.pseudo_hu, u_seed,
        theta, wflat.size,
    )
    woff = net.weight_offsets
    d_w = [gw[woff[l]:woff[l + 1]].reshape(w.shape) for l, w in enumerate(net.weights)]
    d_in = [adj[idx] for idx in tape.input_nodes]
    d_phi0 = adj[tape.phi0_node]
    return GradientSet(d_w, d_in, d_phi0)


def backward_decoded(tape: EventTape, seed_decoded) -> GradientSet:
    """Gradient of ``sum_q seed_decoded[q] * decoded[q]``."""
    return backward(tape, decoded_seed_to_spike_seed(tape.net, seed_decoded))


@dataclass
class GradCheckReport:
    max_rel_err: float
    location: tuple | None
    n_checked: int
    n_excluded: int
    worst_per_layer: list[tuple[float, tuple | None]]
    passed: bool

    def lines(self) -> list[str]:
        out = [
            f"max_rel_err={self.max_rel_err:.3e} at {self.location}",
            f"checked={self.n_checked} excluded_event_order={self.n_excluded}",
        ]
        for l, (err, loc) in enumerate(self.worst_per_layer):
            out.append(f"  layer {l}: worst rel_err={err:.3e} at {loc}")
        out.append("PASS" if self.passed else "FAIL")
        return out


def _rel_err(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(net: NetworkSpec, inputs, step: float = 1e-5, tol: float = 1e-5,
               seed_decoded=None, floor: float = 1e-3) -> GradCheckReport:
    """
    Compare :func:`backward_decoded` against symmetric differences of the decoded outputs
    for every weight and every input spike time.

    Perturbations whose ``+step`` or ``-step`` trial takes a different event order than
    the base trial lie on a non-smooth boundary; they are counted as excluded, not failed.
    Relative errors use ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    inputs = [np.atleast_1d(np.asarray(x, dtype=float)).copy() for x in inputs]
    base = run_trial(net, inputs)
    if seed_decoded is None:
        seed_decoded = np.ones(net.n_out)
    seed_decoded = np.asarray(seed_decoded, dtype=float)
    grads = backward_decoded(base.tape, seed_decoded)
    sig = base.tape.signature()

    def objective(res: TrialResult) -> float:
        return float(seed_decoded @ res.decoded)

    worst = [(0.0, None) for _ in net.weights]
    max_err, where = 0.0, None
    n_checked = n_excluded = 0

    def record(err, loc, layer):
        nonlocal max_err, where
        if layer is not None and err > worst[layer][0]:
            worst[layer] = (err, loc)
        if err > max_err:
            max_err, where = err, loc

    trial_net = net.copy()
    for l, w in enumerate(net.weights):
        for idx in np.ndindex(w.shape):
            vals = []
            same = True
            for sgn in (1.0, -1.0):
                trial_net.weights[l][idx] = w[idx] + sgn * step
                res = run_trial(trial_net, inputs)
                same &= res.tape.signature() == sig
                vals.append(objective(res))
            trial_net.weights[l][idx] = w[idx]
            if not same:
                n_excluded += 1
                continue
            n_checked += 1
            fd = (vals[0] - vals[1]) / (2 * step)
            record(_rel_err(grads.d_weights[l][idx], fd, floor), ("w", l) + tuple(idx), l)

    T = net.trial_T
    for c, ts in enumerate(inputs):
        for s in range(ts.size):
            if ts[s] - step < 0 or ts[s] + step > T:
                n_excluded += 1
                continue
            vals = []
            same = True
            for sgn in (1.0, -1.0):
                pert = [x.copy() for x in inputs]
                pert[c][s] += sgn * step
                if np.any(np.diff(pert[c]) < 0):
                    same = False
                    break
                res = run_trial(net, pert)
                same &= res.tape.signature() == sig
                vals.append(objective(res))
            if not same:
                n_excluded += 1
                continue
            n_checked += 1
            fd = (vals[0] - vals[1]) / (2 * step)
            record(_rel_err(grads.d_input_times[c][s], fd, floor), ("t", c, s), None)

    return GradCheckReport(max_err, where, n_checked, n_excluded, worst, max_err <= tol)


def input_sensitivity(result: TrialResult, dt_dx) -> np.ndarray:
    """
    Derivatives of every decoded value with respect to each real-valued input dimension.

    ``dt_dx[c]`` holds ``d t / d X`` for the spikes of input channel ``c``, as a
    ``(n_spikes, n_dims)`` array (a 1-D array means one input dimension). Returns an
    array of shape ``(n_decoded, n_dims)``.
    """
    tape = result.tape
    net = tape.net
    mats = []
    for c in range(len(tape.input_nodes)):
        m = np.asarray(dt_dx[c], dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.shape[0] != len(tape.input_nodes[c]):
            raise ValueError(f"dt_dx for channel {c} does not match its spike count")
        mats.append(m)
    n_dims = mats[0].shape[1] if mats else 0
    out = np.zeros((net.n_out, n_dims))
    for q in range(net.n_out):
        e = np.zeros(net.n_out)
        e[q] = 1.0
        g = backward_decoded(tape, e)
        for c, m in enumerate(mats):
            out[q] += g.d_input_times[c] @ m
    return out
