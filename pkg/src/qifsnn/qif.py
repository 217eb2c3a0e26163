r"""
Phase representation of the oscillatory QIF neuron with delta-pulse coupling.

    $$\tau_m \dot{V} = V(V-1) + I_0 + \tau_m \sum_i w_i \sum_{t_i} \delta(t-t_i)$$

With ``a = sqrt(I_0 - 1/4)`` the map ``Phi(V) = tau_m/a * (arctan((V - 1/2)/a) + pi/2)``
turns the voltage into a phase with unit velocity. Threshold (``V = +inf``) sits at
``phi_theta = tau_m*pi/a`` and reset (``V = -inf``) at 0.

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NeuronParams",
    "phi_of_v",
    "v_of_phi",
    "dphi_dv",
    "ptc",
    "ptc_derivatives",
    "drive_for_period",
]


@dataclass(frozen=True)
class NeuronParams:
    """
    Membrane constants of the oscillatory QIF neuron.

    Attributes:
        tau_m: Membrane time constant.
        I_0: Constant suprathreshold drive, must exceed 1/4.
        eps_guard: Inputs arriving within this distance of reset or threshold are ignored.
    """

    tau_m: float = 1.0
    I_0: float = 1.25
    eps_guard: float = 1e-6

    def __post_init__(self):
        if not self.tau_m > 0:
            raise ValueError("tau_m must be positive")
        if not self.I_0 > 0.25:
            raise ValueError("I_0 must exceed 1/4 for oscillatory dynamics")
        if not 0 < self.eps_guard < 1e-2 * self.phi_theta:
            raise ValueError("eps_guard must be positive and much smaller than phi_theta")

    @property
    def root(self) -> float:
        return math.sqrt(self.I_0 - 0.25)

    @property
    def phi_theta(self) -> float:
        return self.tau_m * math.pi / self.root

    @classmethod
    def for_period(cls, period: float, tau_m: float = 1.0, eps_guard: float = 1e-6) -> "NeuronParams":
        """Parameters whose free-running period equals ``period``."""
        return cls(tau_m=tau_m, I_0=drive_for_period(period, tau_m), eps_guard=eps_guard)


def drive_for_period(period: float, tau_m: float = 1.0) -> float:
    """Constant drive ``I_0`` giving ``phi_theta == period``."""
    if period <= 0:
        raise ValueError("period must be positive")
    return 0.25 + (tau_m * math.pi / period) ** 2


def phi_of_v(V, p: NeuronParams):
    """Phase of voltage ``V``; ``-inf`` and ``+inf`` map exactly to 0 and ``phi_theta``."""
    V = np.asarray(V, dtype=float)
    a = p.root
    phi = p.tau_m / a * (np.arctan((V - 0.5) / a) + np.pi / 2)
    phi = np.where(V == np.inf, p.phi_theta, phi)
    phi = np.where(V == -np.inf, 0.0, phi)
    return phi[()] if phi.ndim == 0 else phi


def v_of_phi(phi, p: NeuronParams):
    """Inverse of :func:`phi_of_v`; endpoints 0 and ``phi_theta`` give ``-inf`` and ``+inf``."""
    phi = np.asarray(phi, dtype=float)
    a = p.root
    # tan(s - pi/2) = -1/tan(s) keeps full relative precision next to both endpoints
    s = phi * a / p.tau_m
    with np.errstate(divide="ignore"):
        V = 0.5 - a / np.tan(s)
    V = np.where(phi <= 0.0, -np.inf, V)
    V = np.where(phi >= p.phi_theta, np.inf, V)
    return V[()] if V.ndim == 0 else V


def dphi_dv(V, p: NeuronParams):
    """Derivative ``Phi'(V) = tau_m / ((I_0 - 1/4) + (V - 1/2)^2)``; zero at infinite V."""
    V = np.asarray(V, dtype=float)
    out = p.tau_m / ((p.I_0 - 0.25) + (V - 0.5) ** 2)
    return out[()] if out.ndim == 0 else out


def _tan_coord(phi, p: NeuronParams):
    # y = (V - 1/2)/a, finite (about 1e16) at the exact endpoints
    s = np.asarray(phi, dtype=float) * p.root / p.tau_m
    return -1.0 / np.tan(np.clip(s, 1e-20, None))


def ptc(phi, w, p: NeuronParams):
    """Phase transition curve ``H_w(phi) = Phi(Phi^-1(phi) + w)``."""
    y = _tan_coord(phi, p)
    y_new = y + np.asarray(w, dtype=float) / p.root
    out = p.tau_m / p.root * (np.arctan(y_new) + np.pi / 2)
    return out[()] if out.ndim == 0 else out


def ptc_derivatives(phi, w, p: NeuronParams):
    """
    Partial derivatives of the PTC.

    Returns:
        ``(H_phi, H_u)`` with ``H_u = Phi'(Phi^-1(phi) + w)`` and
        ``H_phi = Phi'(Phi^-1(phi) + w) / Phi'(Phi^-1(phi))``.
    """
    a = p.root
    y = _tan_coord(phi, p)
    c = np.asarray(w, dtype=float) / a
    y_new = y + c
    H_u = p.tau_m / (a * a * (1.0 + y_new * y_new))
    big = np.abs(y) > 1.0
    ys = np.where(big, y, 1.0)
    inv2 = 1.0 / (ys * ys)
    ratio_big = (inv2 + 1.0) / (inv2 + (1.0 + c / ys) ** 2)
    ratio_small = (1.0 + y * y) / (1.0 + y_new * y_new)
    H_phi = np.where(big, ratio_big, ratio_small)
    if np.ndim(H_phi) == 0:
        return float(H_phi), float(H_u)
    return H_phi, H_u
