"""Reference solutions and dataset generation for every task."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_banded

log = logging.getLogger(__name__)

TASKS = ("parabola", "ricker", "ripple", "deeponet_poisson", "pinn_poisson", "pinn_burgers",
         "pinn_beltrami")


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str
    note: str = ""
    aux: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.inputs)


# ---------------------------------------------------------------------------
# target functions

def parabola(x):
    return np.asarray(x) ** 2


def ricker(x, y, sigma: float = 0.8):
    q = (x ** 2 + y ** 2) / sigma ** 2
    return (1 - 0.5 * q) * np.exp(-0.5 * q) / (np.pi * sigma ** 4)


def ripple(x, y):
    return 0.25 * np.sin(4 * np.pi * np.sqrt(x ** 2 + y ** 2)) + 0.5


def beltrami_exact(x, y, t):
    """Velocity and pressure of the decaying vortex solution with unit viscosity."""
    e = np.exp(-2 * t)
    u = -np.cos(x) * np.sin(y) * e
    v = np.sin(x) * np.cos(y) * e
    p = -0.25 * (np.cos(2 * x) + np.cos(2 * y)) * e * e
    return u, v, p


# ---------------------------------------------------------------------------
# oracles

def rbf_kernel(x, length_scale: float = 1.0) -> np.ndarray:
    d = x[:, None] - x[None, :]
    return np.exp(-0.5 * (d / length_scale) ** 2)


def grf_factor(n_sensors: int = 51, length_scale: float = 1.0, jitter: float = 1e-10,
               max_jitter: float = 1e-4) -> np.ndarray:
    """Lower Cholesky factor of the sensor covariance, raising the jitter until it succeeds."""
    x = np.linspace(-1.0, 1.0, n_sensors)
    K = rbf_kernel(x, length_scale)
    while True:
        try:
            return cholesky(K + jitter * np.eye(n_sensors), lower=True)
        except np.linalg.LinAlgError:
            if jitter >= max_jitter:
                raise
            jitter *= 10
            log.debug("raising GRF jitter to %g", jitter)


def sample_grf_source(n_sensors: int = 51, seed: int = 0, n_samples: int | None = None,
                      length_scale: float = 1.0) -> np.ndarray:
    """
    Zero-mean Gaussian random field draws on a uniform grid over ``[-1, 1]`` with RBF
    covariance. Returns one vector, or ``(n_samples, n_sensors)`` when ``n_samples`` is set.
    """
    L = grf_factor(n_sensors, length_scale)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((1 if n_samples is None else n_samples, n_sensors))
    g = z @ L.T
    return g[0] if n_samples is None else g


def poisson_solve_oracle(g, x) -> np.ndarray:
    """Second-order FD solution of ``-u'' = g`` with ``u = 0`` at both ends of the grid ``x``."""
    g = np.asarray(g, dtype=float)
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3 or g.shape[-1] != n:
        raise ValueError("need a grid of at least 3 points matching g")
    h = x[1] - x[0]
    if not np.allclose(np.diff(x), h, rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[2, :-1] = -1.0
    rhs = h * h * np.atleast_2d(g)[:, 1:-1].T
    u = np.zeros((rhs.shape[1], n))
    u[:, 1:-1] = solve_banded((1, 1), ab, rhs).T
    return u[0] if g.ndim == 1 else u


def burgers_reference(x, t, nu: float = 0.01 / np.pi, n_nodes: int = 200) -> np.ndarray:
    """
    Cole-Hopf solution of ``u_t + u u_x = nu u_xx`` with ``u(x, 0) = -sin(pi x)``, evaluated
    by Gauss-Hermite quadrature in the heat-kernel variable.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    z, w = np.polynomial.hermite.hermgauss(n_nodes)
    out = -np.sin(np.pi * x)
    live = t > 0
    if np.any(live):
        xs = x[live][:, None]
        s = np.sqrt(4 * nu * t[live])[:, None]
        y = xs - s * z[None, :]
        expo = -np.cos(np.pi * y) / (2 * np.pi * nu)
        expo -= expo.max(axis=1, keepdims=True)
        f = w[None, :] * np.exp(expo)
        out[live] = -np.sum(np.sin(np.pi * y) * f, axis=1) / np.sum(f, axis=1)
    return out


# ---------------------------------------------------------------------------
# task datasets

def _grid2d(n_side: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    g = np.linspace(lo, hi, n_side)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def make_datasets(task: str, cfg) -> tuple[Dataset, Dataset]:
    """Deterministic train/test datasets for ``task``; sizes come from ``cfg``."""
    if task == "parabola":
        xtr = np.linspace(0.0, 1.0, cfg.n_train)[:, None]
        xte = np.linspace(0.0, 1.0, cfg.n_test)[:, None]
        return (Dataset(xtr, parabola(xtr), "train", "uniform grid on [0, 1]"),
                Dataset(xte, parabola(xte), "test", "uniform grid on [0, 1]"))
    if task in ("ricker", "ripple"):
        fn = ricker if task == "ricker" else ripple
        side_tr = int(round(np.sqrt(cfg.n_train)))
        side_te = int(round(np.sqrt(cfg.n_test)))
        xtr, xte = _grid2d(side_tr), _grid2d(side_te)
        note = "uniform tensor grid on [-1, 1]^2"
        return (Dataset(xtr, fn(xtr[:, :1], xtr[:, 1:]), "train", note),
                Dataset(xte, fn(xte[:, :1], xte[:, 1:]), "test", note))
    if task == "deeponet_poisson":
        xs = np.linspace(-1.0, 1.0, cfg.n_sensors)
        g_tr = sample_grf_source(cfg.n_sensors, cfg.seed, cfg.n_train)
        g_te = sample_grf_source(cfg.n_sensors, cfg.seed + 1_000_003, cfg.n_test)
        aux = {"query": xs[:, None]}
        note = "GRF sources, FD solutions at the sensor grid"
        return (Dataset(g_tr, poisson_solve_oracle(g_tr, xs), "train", note, dict(aux)),
                Dataset(g_te, poisson_solve_oracle(g_te, xs), "test", note, dict(aux)))
    if task == "pinn_poisson":
        m = 1.5 * cfg.fd_step_rel
        xc = np.linspace(m, 1.0 - m, cfg.n_train)[:, None]
        xte = np.linspace(0.0, 1.0, cfg.n_test)[:, None]
        return (Dataset(xc, 2 * np.pi ** 2 * np.sin(np.pi * xc), "train", "collocation points, value = source"),
                Dataset(xte, 2 * np.sin(np.pi * xte), "test", "analytic solution"))
    if task == "pinn_burgers":
        rng = np.random.default_rng(cfg.seed)
        m = 1.5 * cfg.fd_step_rel  # keep stencils inside the domain
        xc = np.column_stack([rng.uniform(-1 + m, 1 - m, cfg.n_train), rng.uniform(m, 1 - m, cfg.n_train)])
        n_b = cfg.n_boundary
        xi = np.column_stack([np.linspace(-1, 1, n_b), np.zeros(n_b)])
        tb = np.linspace(0, 1, n_b)
        xb = np.vstack([np.column_stack([-np.ones(n_b), tb]), np.column_stack([np.ones(n_b), tb])])
        aux = {"ic_points": xi, "ic_values": -np.sin(np.pi * xi[:, :1]),
               "bc_points": xb, "bc_values": np.zeros((2 * n_b, 1))}
        side = int(round(np.sqrt(cfg.n_test)))
        gx, gt = np.meshgrid(np.linspace(-1, 1, side), np.linspace(0, 1, side), indexing="ij")
        xte = np.column_stack([gx.ravel(), gt.ravel()])
        ref = burgers_reference(xte[:, 0], xte[:, 1])[:, None]
        return (Dataset(xc, np.zeros((cfg.n_train, 1)), "train", "random collocation", aux),
                Dataset(xte, ref, "test", "Cole-Hopf quadrature reference"))
    if task == "pinn_beltrami":
        rng = np.random.default_rng(cfg.seed)
        n = cfg.n_train
        m = 1.5 * cfg.fd_step_rel  # keep stencils inside the domain
        xc = np.column_stack([rng.uniform(-1 + m, 1 - m, n), rng.uniform(-1 + m, 1 - m, n),
                              rng.uniform(m, 1 - m, n)])
        n_b = cfg.n_boundary
        xi = np.column_stack([rng.uniform(-1, 1, n_b), rng.uniform(-1, 1, n_b), np.zeros(n_b)])
        faces = []
        for d in (0, 1):
            for side in (-1.0, 1.0):
                q = np.column_stack([rng.uniform(-1, 1, n_b), rng.uniform(-1, 1, n_b),
                                     rng.uniform(0, 1, n_b)])
                q[:, d] = side
                faces.append(q)
        xb = np.vstack(faces)

        def uv(pts):
            u, v, _ = beltrami_exact(pts[:, 0], pts[:, 1], pts[:, 2])
            return np.column_stack([u, v])

        aux = {"ic_points": xi, "ic_values": uv(xi), "bc_points": xb, "bc_values": uv(xb)}
        side = max(2, int(round(cfg.n_test ** (1 / 3))))
        g = np.linspace(-1, 1, side)
        X, Y, Tt = np.meshgrid(g, g, np.linspace(0, 1, side), indexing="ij")
        xte = np.column_stack([X.ravel(), Y.ravel(), Tt.ravel()])
        return (Dataset(xc, np.zeros((n, 2)), "train", "random collocation", aux),
                Dataset(xte, uv(xte), "test", "exact velocity field"))
    raise ValueError(f"unknown task {task!r}")
