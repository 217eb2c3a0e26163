"""
Compiled event-driven trial simulation and reverse sweep.

Tape layout (one entry per node, parents always precede children):

    kind   INPUT    leaf, value = input spike time
           PHI0     leaf, value = initial phase of a network neuron
           JUMP     psi' = H_w(psi + t_k - t_ref); parents (psi, t_k, t_ref) with
                    partials (A, A, -A), weight partial B
           EMIT     t_sp = t_ref + theta - psi; parents (psi, -, t_ref) with partials (-1, 0, +1)
           TERM     phi_T = psi + T - t_ref; parents (psi, -, t_ref) with partials (+1, 0, -1)

A parent index of -1 denotes a constant (reset phase 0, trial start time 0).
"""

import math

import numpy as np
from numba import njit

INPUT = 0
PHI0 = 1
JUMP = 2
EMIT = 3
TERM = 4

HALF_PI = 0.5 * math.pi


@njit(cache=True)
def tan_coord(phi, a, tau):
    s = phi * a / tau
    if s < 1e-20:
        s = 1e-20
    return -1.0 / math.tan(s)


@njit(cache=True)
def ptc_full(phi, w, a, tau):
    """H_w(phi), H_phi, H_u without guard."""
    y = tan_coord(phi, a, tau)
    c = w / a
    yn = y + c
    h = tau / a * (math.atan(yn) + HALF_PI)
    hu = tau / (a * a * (1.0 + yn * yn))
    if abs(y) > 1.0:
        inv2 = 1.0 / (y * y)
        q = 1.0 + c / y
        hphi = (inv2 + 1.0) / (inv2 + q * q)
    else:
        hphi = (1.0 + y * y) / (1.0 + yn * yn)
    return h, hphi, hu


@njit(cache=True)
def forward_trial(sizes, wflat, woff, phi0, noff, in_t, in_c, tau, a, theta, eps, T, cap):
    """
    Simulate one trial. Returns a tuple; ``ok`` is False when ``cap`` nodes did not suffice.
    """
    L = sizes.shape[0] - 1
    n_net = noff[L]
    K0 = in_t.shape[0]

    kind = np.empty(cap, np.int8)
    val = np.empty(cap)
    par = np.empty((cap, 3), np.int64)
    coef = np.empty(cap)
    widx = np.empty(cap, np.int64)
    wd = np.empty(cap)
    guard = np.zeros(cap, np.int8)
    owner = np.empty(cap, np.int64)

    n_spk = np.zeros(n_net, np.int64)
    first_node = np.full(n_net, -1, np.int64)
    term_node = np.full(n_net, -1, np.int64)
    phi0_node = np.empty(n_net, np.int64)

    n = 0
    if K0 + n_net > cap:
        return (False, n, kind, val, par, coef, widx, wd, guard, owner,
                n_spk, first_node, term_node, phi0_node)

    ev_t = np.empty(K0)
    ev_src = np.empty(K0, np.int64)
    ev_node = np.empty(K0, np.int64)
    for k in range(K0):
        kind[n] = INPUT
        val[n] = in_t[k]
        par[n, 0] = -1
        par[n, 1] = -1
        par[n, 2] = -1
        coef[n] = 0.0
        widx[n] = -1
        wd[n] = 0.0
        owner[n] = -1 - in_c[k]
        ev_t[k] = in_t[k]
        ev_src[k] = in_c[k]
        ev_node[k] = n
        n += 1
    for g in range(n_net):
        kind[n] = PHI0
        val[n] = phi0[g]
        par[n, 0] = -1
        par[n, 1] = -1
        par[n, 2] = -1
        coef[n] = 0.0
        widx[n] = -1
        wd[n] = 0.0
        owner[n] = g
        phi0_node[g] = n
        n += 1

    K = K0
    for l in range(L):
        n_pre = sizes[l]
        n_post = sizes[l + 1]
        wo = woff[l]
        # emissions of this layer, appended neuron by neuron
        em_cap = cap - n
        em_t = np.empty(em_cap)
        em_src = np.empty(em_cap, np.int64)
        em_node = np.empty(em_cap, np.int64)
        m = 0
        for i in range(n_post):
            g = noff[l] + i
            psi = phi0[g]
            psi_node = phi0_node[g]
            tref = 0.0
            tref_node = -1
            for k in range(K + 1):
                last = k == K
                tk = T if last else ev_t[k]
                while psi + (tk - tref) >= theta:
                    if n >= cap or m >= em_cap:
                        return (False, n, kind, val, par, coef, widx, wd, guard, owner,
                                n_spk, first_node, term_node, phi0_node)
                    te = tref + theta - psi
                    kind[n] = EMIT
                    val[n] = te
                    par[n, 0] = psi_node
                    par[n, 1] = -1
                    par[n, 2] = tref_node
                    coef[n] = 0.0
                    widx[n] = -1
                    wd[n] = 0.0
                    owner[n] = g
                    if n_spk[g] == 0:
                        first_node[g] = n
                    n_spk[g] += 1
                    em_t[m] = te
                    em_src[m] = i
                    em_node[m] = n
                    m += 1
                    psi = 0.0
                    psi_node = -1
                    tref = te
                    tref_node = n
                    n += 1
                if n >= cap:
                    return (False, n, kind, val, par, coef, widx, wd, guard, owner,
                            n_spk, first_node, term_node, phi0_node)
                xi = psi + (tk - tref)
                if last:
                    kind[n] = TERM
                    val[n] = xi
                    par[n, 0] = psi_node
                    par[n, 1] = -1
                    par[n, 2] = tref_node
                    coef[n] = 0.0
                    widx[n] = -1
                    wd[n] = 0.0
                    owner[n] = g
                    term_node[g] = n
                    n += 1
                    break
                wi = wo + i * n_pre + ev_src[k]
                kind[n] = JUMP
                par[n, 0] = psi_node
                par[n, 1] = ev_node[k]
                par[n, 2] = tref_node
                widx[n] = wi
                owner[n] = g
                if xi < eps or xi > theta - eps:
                    val[n] = xi
                    coef[n] = 1.0
                    wd[n] = 0.0
                    guard[n] = 1
                else:
                    h, hphi, hu = ptc_full(xi, wflat[wi], a, tau)
                    val[n] = h
                    coef[n] = hphi
                    wd[n] = hu
                psi = val[n]
                psi_node = n
                tref = tk
                tref_node = ev_node[k]
                n += 1
        # forward this layer's emissions, time-ordered, ties by neuron index
        order = np.argsort(em_t[:m], kind="mergesort")
        ev_t = em_t[:m][order]
        ev_src = em_src[:m][order]
        ev_node = em_node[:m][order]
        K = m
    return (True, n, kind, val, par, coef, widx, wd, guard, owner,
            n_spk, first_node, term_node, phi0_node)


@njit(cache=True)
def pseudo_states(sizes, wflat, woff, noff, term_val, a, tau, theta):
    """Layer-by-layer pseudostates r, pseudo-inputs u and PTC partials at (phi_T, u)."""
    L = sizes.shape[0] - 1
    n_net = noff[L]
    r = np.empty(n_net)
    u = np.zeros(n_net)
    hphi = np.empty(n_net)
    hu = np.empty(n_net)
    for l in range(L):
        n_pre = sizes[l]
        wo = woff[l]
        for i in range(sizes[l + 1]):
            g = noff[l] + i
            ui = 0.0
            if l > 0:
                base = noff[l - 1]
                for j in range(n_pre):
                    ui += wflat[wo + i * n_pre + j] * r[base + j]
            h, hp, hq = ptc_full(term_val[g], ui, a, tau)
            u[g] = ui
            r[g] = h / theta
            hphi[g] = hp
            hu[g] = hq
    return r, u, hphi, hu


@njit(cache=True)
def backward_sweep(n_nodes, kind, par, coef, widx, wd, node_seed,
                   sizes, wflat, woff, noff, term_node, r, hphi, hu, u_seed, theta, n_w):
    """
    Reverse accumulation.

    ``node_seed`` holds adjoints injected directly on tape nodes, ``u_seed`` adjoints on
    pseudo-inputs u (per network neuron). Returns (node adjoints, weight gradient).
    """
    L = sizes.shape[0] - 1
    adj = node_seed[:n_nodes].copy()
    gw = np.zeros(n_w)
    ubar = u_seed.copy()
    # pseudo part: u_i = sum_j w_ij r_j, r_j = H(phi_T_j, u_j) / theta
    for l in range(L - 1, -1, -1):
        n_pre = sizes[l]
        wo = woff[l]
        for i in range(sizes[l + 1]):
            g = noff[l] + i
            ub = ubar[g]
            if ub == 0.0 or l == 0:
                continue
            base = noff[l - 1]
            for j in range(n_pre):
                gw[wo + i * n_pre + j] += ub * r[base + j]
        if l == 0:
            break
        base = noff[l - 1]
        for j in range(n_pre):
            rb = 0.0
            for i in range(sizes[l + 1]):
                ub = ubar[noff[l] + i]
                if ub != 0.0:
                    rb += ub * wflat[wo + i * n_pre + j]
            if rb != 0.0:
                gj = base + j
                adj[term_node[gj]] += rb * hphi[gj] / theta
                ubar[gj] += rb * hu[gj] / theta
    # event nodes in reverse creation order
    for nd in range(n_nodes - 1, -1, -1):
        g = adj[nd]
        if g == 0.0:
            continue
        k = kind[nd]
        if k == JUMP:
            A = coef[nd]
            p = par[nd, 0]
            if p >= 0:
                adj[p] += A * g
            adj[par[nd, 1]] += A * g
            p = par[nd, 2]
            if p >= 0:
                adj[p] -= A * g
            gw[widx[nd]] += wd[nd] * g
        elif k == EMIT:
            p = par[nd, 0]
            if p >= 0:
                adj[p] -= g
            p = par[nd, 2]
            if p >= 0:
                adj[p] += g
        elif k == TERM:
            p = par[nd, 0]
            if p >= 0:
                adj[p] += g
            p = par[nd, 2]
            if p >= 0:
                adj[p] -= g
    return adj, gw
