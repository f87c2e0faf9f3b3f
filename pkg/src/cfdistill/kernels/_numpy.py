"""Numpy reference implementation of the MLP kernels.

All kernels operate on float64 arrays in normalized input coordinates and on
the raw (unscaled) network output y = z_L. Shapes:

    X   (N, n_in)    batch of inputs
    Ws  list of L weight matrices, Ws[l] is (n_out_l, n_in_l)
    bs  list of L bias vectors, bs[l] is (n_out_l,)

The last layer is linear with a single output unit; all earlier layers use
the activation identified by an integer code. Derivative sweeps evaluate
g' and g'' from the cached activation values (for tanh h: g' = 1 - h^2,
g'' = -2h(1 - h^2); for softplus h: sigma = 1 - exp(-h) exactly), so no
transcendental is computed twice. The directional kernel computes d/dtheta
of sum_i u_i . grad_x y_i (reverse mode over a forward-mode tangent), which
is the second-order quantity the gradient penalties need.
"""
from __future__ import annotations

import numpy as np

ACT_TANH = 0
ACT_SOFTPLUS = 1


def _act(code: int, z: np.ndarray) -> np.ndarray:
    if code == ACT_TANH:
        return np.tanh(z)
    if code == ACT_SOFTPLUS:
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation code {code}")


def _act_d(code: int, h: np.ndarray) -> np.ndarray:
    """First derivative of the activation, from its value h = g(z)."""
    if code == ACT_TANH:
        return 1.0 - h * h
    if code == ACT_SOFTPLUS:
        # sigma(z) = 1 - exp(-softplus(z)); expm1 keeps tiny h accurate
        return -np.expm1(-h)
    raise ValueError(f"unknown activation code {code}")


def _act_dd(code: int, h: np.ndarray) -> np.ndarray:
    """Second derivative of the activation, from its value h = g(z)."""
    if code == ACT_TANH:
        return -2.0 * h * (1.0 - h * h)
    if code == ACT_SOFTPLUS:
        return -np.expm1(-h) * np.exp(-h)
    raise ValueError(f"unknown activation code {code}")


def forward(Ws, bs, X, act):
    """Run the batch through the net; returns (Zs, Hs) caches.

    Hs[l] is the input to layer l (Hs[0] = X); Zs[l] its pre-activation
    output. The scalar network output is Zs[-1][:, 0].
    """
    Hs = [np.ascontiguousarray(X, dtype=np.float64)]
    Zs = []
    n_layers = len(Ws)
    for l in range(n_layers):
        Z = Hs[l] @ Ws[l].T + bs[l]
        Zs.append(Z)
        if l < n_layers - 1:
            Hs.append(_act(act, Z))
    return Zs, Hs


def input_grad(Ws, Hs, act):
    """Gradient of y w.r.t. each input row: (N, n_in)."""
    n = Hs[0].shape[0]
    R = np.broadcast_to(Ws[-1][0], (n, Ws[-1].shape[1])).copy()
    for l in range(len(Ws) - 2, -1, -1):
        R = (_act_d(act, Hs[l + 1]) * R) @ Ws[l]
    return R


def param_grads_output_seed(Ws, bs, Hs, seed, act):
    """Parameter gradients of sum_i seed_i * y_i (plain reverse mode)."""
    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    D = np.asarray(seed, dtype=np.float64).reshape(-1, 1)
    last = len(Ws) - 1
    dWs[last] = D.T @ Hs[last]
    dbs[last] = D.sum(axis=0)
    B = D @ Ws[last]
    for l in range(last - 1, -1, -1):
        D = _act_d(act, Hs[l + 1]) * B
        dWs[l] = D.T @ Hs[l]
        dbs[l] = D.sum(axis=0)
        if l > 0:
            B = D @ Ws[l]
    return dWs, dbs


def param_grads_directional(Ws, bs, Hs, U, act):
    """Parameter gradients of rho = sum_i u_i . grad_x y_i.

    Forward-mode tangent along each sample's direction u_i, then reverse mode
    over the combined (primal, tangent) graph; the tangent adjoint propagates
    the activation first derivative while the primal adjoint picks up the
    second-derivative term g''(z) * z_dot.
    """
    n_layers = len(Ws)
    # forward tangent sweep
    Hd = [np.ascontiguousarray(U, dtype=np.float64)]
    Zd = []
    for l in range(n_layers - 1):
        zd = Hd[l] @ Ws[l].T
        Zd.append(zd)
        Hd.append(_act_d(act, Hs[l + 1]) * zd)

    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    last = n_layers - 1
    # seed: d rho / d zdot_L = 1 per sample; primal adjoint at the top is zero
    dWs[last] = Hd[last].sum(axis=0)[None, :]
    Hb = np.zeros_like(Hs[last])
    Hdb = np.broadcast_to(Ws[last][0], Hs[last].shape).copy()
    for l in range(last - 1, -1, -1):
        gp = _act_d(act, Hs[l + 1])
        gpp = _act_dd(act, Hs[l + 1])
        Zb = gp * Hb + gpp * Zd[l] * Hdb
        Zdb = gp * Hdb
        dWs[l] = Zb.T @ Hs[l] + Zdb.T @ Hd[l]
        dbs[l] = Zb.sum(axis=0)
        if l > 0:
            Hb = Zb @ Ws[l]
            Hdb = Zdb @ Ws[l]
    return dWs, dbs
