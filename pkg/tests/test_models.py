import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qifsnn.codec import DecodeSpec, EncodingSpec, TargetAffine
from qifsnn.engine import NetworkSpec
from qifsnn.models import (CHECKPOINT_MAGIC, DeepOnetModel, MlpModel, PinnProblem,
                           deeponet_combine, deeponet_forward, exact_first_derivative,
                           init_network, load_checkpoint, mlp_backward, mlp_forward,
                           pinn_residual_beltrami, pinn_residual_burgers,
                           pinn_residual_poisson1d, poisson_source, save_checkpoint)
from qifsnn.qif import NeuronParams

P = NeuronParams(1.0, 1.25)


def tiny_mlp(seed, sizes=(1, 4, 2), enc=None, affine=TargetAffine(2.0, 0.1), w_scale=1.5, T=2.0):
    rng = np.random.default_rng(seed)
    n_dims = sizes[0] if enc is None else None
    encs = enc or [EncodingSpec("direct", 0.0, 1.0, T)] * n_dims
    net = init_network(list(sizes), P, T, rng, w_scale=w_scale)
    net.initial_phase[:] = rng.uniform(0, 1.5, net.initial_phase.size)
    return MlpModel(net, encs, DecodeSpec.consecutive(sizes[-1] // 2), affine)


def zero_mlp(n_dims, n_out, affine=TargetAffine(1.0, 0.0)):
    sizes = [n_dims, 3, 2 * n_out]
    net = init_network(sizes, P, 2.0, np.random.default_rng(0))
    for w in net.weights:
        w[...] = 0.0
    encs = [EncodingSpec("direct", -1.0, 1.0, 2.0)] * n_dims
    return MlpModel(net, encs, DecodeSpec.consecutive(n_out), affine)


def test_model_validation():
    net = init_network([2, 2], P, 2.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        MlpModel(net, [EncodingSpec()], DecodeSpec.consecutive(1))
    with pytest.raises(ValueError):
        PinnProblem("heat", [(0, 1)], 1e-3)
    with pytest.raises(ValueError):
        PinnProblem("poisson1d", [(0, 1)], 0.2)


def test_zero_weights_give_affine_offset():
    m = zero_mlp(1, 1, TargetAffine(2.0, 0.3))
    for x in (-0.7, 0.0, 0.9):
        y, _ = mlp_forward(m, [x])
        assert y[0] == pytest.approx(-0.15, abs=1e-15)


def test_exact_derivative_of_constant_model():
    m = zero_mlp(2, 1)
    np.testing.assert_array_equal(exact_first_derivative(m, [0.2, -0.4]), 0.0)


@pytest.mark.parametrize("kind", ["direct", "grf"])
def test_exact_derivative_matches_differences(kind):
    if kind == "direct":
        encs = [EncodingSpec("direct", 0.0, 1.0, 2.0)] * 2
        sizes = (2, 5, 4)
    else:
        encs = [EncodingSpec("grf", 0.0, 1.0, 2.0, 4, 1.5)] * 2
        sizes = (8, 5, 4)
    rng = np.random.default_rng(9)
    checked = 0
    for seed in range(12):
        m = tiny_mlp(seed, sizes, encs)
        x = rng.uniform(0.1, 0.9, 2)
        y0, trial = mlp_forward(m, x)
        jac = exact_first_derivative(m, x)
        h = 1e-6
        for d in range(2):
            ys = []
            for s in (1, -1):
                xp = x.copy()
                xp[d] += s * h
                y, tr = mlp_forward(m, xp)
                ys.append(y if tr.tape.signature() == trial.tape.signature() else None)
            if ys[0] is None or ys[1] is None:
                continue
            fd = (ys[0] - ys[1]) / (2 * h)
            np.testing.assert_allclose(jac[:, d], fd, rtol=1e-4, atol=1e-6)
            checked += 1
    assert checked >= 12


def test_exact_derivative_zero_when_clamped():
    m = tiny_mlp(1)
    assert exact_first_derivative(m, [1.3], dim=0)[0] == 0.0


def test_deeponet_examples():
    assert deeponet_combine(np.array([2.0]), np.array([3.0]))[0, 0] == 6.0
    assert np.all(deeponet_combine(np.zeros(4), np.arange(4.0)) == 0.0)
    branch = zero_mlp(3, 2)
    trunk = tiny_mlp(4, (1, 3, 4))
    assert deeponet_forward(DeepOnetModel(branch, trunk), [0.1, 0.2, 0.3], 0.5) == 0.0
    with pytest.raises(ValueError):
        DeepOnetModel(zero_mlp(3, 2), zero_mlp(1, 3))


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-3, 3))
def test_deeponet_bilinear(b, t, c):
    b, t = np.array(b), np.array(t)
    g = lambda bb, tt: deeponet_combine(bb, tt)[0, 0]
    assert g(c * b + t, t) == pytest.approx(c * g(b, t) + g(t, t), abs=1e-9)
    assert g(b, c * t + b) == pytest.approx(c * g(b, t) + g(b, b), abs=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_hard_constraint_zero_on_boundary(seed):
    prob = PinnProblem("poisson1d", [(0.0, 1.0)], 1e-3)
    m = tiny_mlp(seed)
    for x in (0.0, 1.0):
        mult, _ = prob.hard_constraint(x)
        y, _ = mlp_forward(m, [x])
        assert mult * y[0] == 0.0


def test_poisson_residual_of_zero_network():
    prob = PinnProblem("poisson1d", [(0.0, 1.0)], 1e-3)
    m = zero_mlp(1, 1)
    m.encodings[0] = EncodingSpec("direct", 0.0, 1.0, 2.0)
    for x in (0.2, 0.5, 0.77):
        assert pinn_residual_poisson1d(m, prob, x) == pytest.approx(-poisson_source(x), abs=1e-12)


def test_poisson_stencil_of_exact_solution():
    h, x = 1e-2, np.linspace(0.05, 0.95, 19)
    u = lambda z: 2 * np.sin(np.pi * z)
    res = -(u(x + h) - 2 * u(x) + u(x - h)) / h ** 2 - poisson_source(x)
    assert np.max(np.abs(res)) <= 1e-3 * np.max(poisson_source(x))


def test_stencil_outside_domain_raises():
    prob = PinnProblem("poisson1d", [(0.0, 1.0)], 1e-2)
    with pytest.raises(ValueError):
        pinn_residual_poisson1d(tiny_mlp(0), prob, 0.005)


def test_burgers_residual_of_constant_field():
    prob = PinnProblem("burgers", [(-1.0, 1.0), (0.0, 1.0)], 1e-3)
    m = zero_mlp(2, 1, TargetAffine(1.0, -0.4))
    m.encodings[1] = EncodingSpec("direct", 0.0, 1.0, 2.0)
    assert mlp_forward(m, [0.1, 0.5])[0][0] == pytest.approx(0.4)
    assert pinn_residual_burgers(m, prob, [0.1, 0.5]) == pytest.approx(0.0, abs=1e-9)


def _fd_weight_grad(model, loss, step=1e-5):
    flat = model.net.flat_weights()
    out = np.empty_like(flat)
    for k in range(flat.size):
        vals = []
        for s in (1, -1):
            f = flat.copy()
            f[k] += s * step
            model.net.set_flat_weights(f)
            vals.append(loss())
        out[k] = (vals[0] - vals[1]) / (2 * step)
    model.net.set_flat_weights(flat)
    return out


def test_poisson_residual_gradient_consistency():
    prob = PinnProblem("poisson1d", [(0.0, 1.0)], 1e-2)
    m = tiny_mlp(3, (1, 3, 2))
    xs = (0.3, 0.6)

    def loss():
        return sum(pinn_residual_poisson1d(m, prob, x) ** 2 for x in xs)

    grad = 0.0
    for x in xs:
        r, g = pinn_residual_poisson1d(m, prob, x, with_grad=True)
        grad = grad + 2 * r * g.flat_weights()
    np.testing.assert_allclose(grad, _fd_weight_grad(m, loss), rtol=1e-4,
                               atol=1e-4 * np.abs(grad).max())


def test_burgers_residual_gradient_consistency():
    prob = PinnProblem("burgers", [(-1.0, 1.0), (0.0, 1.0)], 1e-2)
    m = tiny_mlp(5, (2, 3, 2))
    m.encodings[0] = EncodingSpec("direct", -1.0, 1.0, 2.0)
    pt = [0.2, 0.5]
    r, seeds, trials = pinn_residual_burgers(m, prob, pt, with_grad=True)
    grad = sum(mlp_backward(m, tr, [s]).flat_weights() for s, tr in zip(seeds, trials))
    fd = _fd_weight_grad(m, lambda: pinn_residual_burgers(m, prob, pt))
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-4 * np.abs(grad).max())


def test_beltrami_residual_gradient_consistency():
    prob = PinnProblem("beltrami", [(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)], 1e-2)
    m = tiny_mlp(6, (3, 4, 6), affine=TargetAffine(1.0, 0.0))
    m.encodings[0] = m.encodings[1] = EncodingSpec("direct", -1.0, 1.0, 2.0)
    pt = [0.1, -0.3, 0.4]
    c = np.array([0.7, -1.1, 0.5])
    res, jac, trials = pinn_residual_beltrami(m, prob, pt, with_grad=True)
    assert res.shape == (3,)
    grad = sum(mlp_backward(m, tr, c @ jac[:, k, :]).flat_weights() for k, tr in enumerate(trials))
    fd = _fd_weight_grad(m, lambda: c @ pinn_residual_beltrami(m, prob, pt))
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-4 * np.abs(grad).max())


def test_checkpoint_round_trip(tmp_path):
    enc = [EncodingSpec("grf", 0.0, 1.0, 2.0, 4, 1.5), EncodingSpec("direct", -1.0, 1.0, 2.0)]
    m = tiny_mlp(8, (5, 4, 2), enc)
    path = tmp_path / "m.bin"
    save_checkpoint(path, m, {"note": "x"})
    m2, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for a, b in zip(m.net.weights, m2.net.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(m.net.initial_phase, m2.net.initial_phase)
    assert m2.encodings == m.encodings and m2.decode == m.decode
    x = [0.37, -0.2]
    assert mlp_forward(m, x)[0][0] == mlp_forward(m2, x)[0][0]

    # byte layout: magic, little-endian uint32 version and header length, then <f8 payload
    raw = path.read_bytes()
    assert raw[:8] == CHECKPOINT_MAGIC
    version, n = struct.unpack("<II", raw[8:16])
    assert version == 1
    payload = np.frombuffer(raw[16 + n:], dtype="<f8")
    assert np.array_equal(payload[:m.net.flat_weights().size], m.net.flat_weights())

    d = DeepOnetModel(tiny_mlp(1, (3, 3, 4)), tiny_mlp(2, (1, 3, 4)))
    save_checkpoint(path, d)
    d2, _ = load_checkpoint(path)
    g = [0.1, 0.5, 0.9]
    assert deeponet_forward(d, g, 0.3) == deeponet_forward(d2, g, 0.3)


def test_checkpoint_rejects_foreign_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTACKPT" + bytes(8))
    with pytest.raises(ValueError):
        load_checkpoint(p)
