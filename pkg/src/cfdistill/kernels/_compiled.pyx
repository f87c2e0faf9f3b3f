# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementation of the MLP kernels.

Mirrors the numpy backend function for function. Dense products go through
BLAS dgemm (via scipy's cython bindings) and the activation itself through
numpy's vectorized functions; what runs as typed C loops are the derivative
sweeps, which fuse the chains of elementwise products that numpy would
evaluate through temporaries. Like the numpy backend, g' and g'' come from
the cached activation values, so the sweeps are branch-free arithmetic for
tanh. Accumulation order differs from the numpy backend, so results agree
to rounding, not bit for bit.
"""

import numpy as np

from libc.math cimport exp, expm1
from scipy.linalg.cython_blas cimport dgemm

ACT_TANH = 0
ACT_SOFTPLUS = 1


cdef inline double _gd_h(int act, double h) noexcept nogil:
    # activation first derivative from its value
    if act == 0:
        return 1.0 - h * h
    return -expm1(-h)


cdef inline double _gdd_h(int act, double h) noexcept nogil:
    # activation second derivative from its value
    cdef double s
    if act == 0:
        return -2.0 * h * (1.0 - h * h)
    s = -expm1(-h)
    return s * exp(-h)


cdef void _gemm_rm(bint trans_a, bint trans_b,
                   const double[:, ::1] A, const double[:, ::1] B,
                   double[:, ::1] C, double beta) noexcept nogil:
    # row-major C = op(A) @ op(B) + beta*C, expressed to Fortran dgemm as
    # the equivalent column-major product C^T = op(B)^T @ op(A)^T
    cdef int m = C.shape[1], n = C.shape[0]
    cdef int k = (A.shape[0] if trans_a else A.shape[1])
    cdef int lda = B.shape[1], ldb = A.shape[1], ldc = C.shape[1]
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tb = b'T' if trans_a else b'N'
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha,
          <double*> &B[0, 0], &lda, <double*> &A[0, 0], &ldb,
          &beta, &C[0, 0], &ldc)


cdef _activation(int act, Z):
    if act == 0:
        return np.tanh(Z)
    if act == 1:
        return np.logaddexp(0.0, Z)
    raise ValueError(f"unknown activation code {act}")


def forward(Ws, bs, X, int act):
    """Run the batch through the net; returns (Zs, Hs) caches."""
    cdef int n_layers = len(Ws)
    if act not in (ACT_TANH, ACT_SOFTPLUS):
        raise ValueError(f"unknown activation code {act}")
    cdef Py_ssize_t i, j, n, m
    cdef double[:, ::1] Zv
    cdef double[::1] bv
    Hs = [np.ascontiguousarray(X, dtype=np.float64)]
    Zs = []
    for l in range(n_layers):
        W = np.ascontiguousarray(Ws[l], dtype=np.float64)
        b = np.ascontiguousarray(bs[l], dtype=np.float64)
        Z = np.empty((Hs[l].shape[0], W.shape[0]), dtype=np.float64)
        _gemm_rm(False, True, Hs[l], W, Z, 0.0)
        Zv = Z
        bv = b
        n = Z.shape[0]
        m = Z.shape[1]
        with nogil:
            for i in range(n):
                for j in range(m):
                    Zv[i, j] += bv[j]
        Zs.append(Z)
        if l < n_layers - 1:
            Hs.append(_activation(act, Z))
    return Zs, Hs


def input_grad(Ws, Hs, int act):
    """Gradient of y w.r.t. each input row: (N, n_in)."""
    cdef Py_ssize_t i, j, n, m
    cdef double[:, ::1] Rv, Hv, Tv
    if act not in (ACT_TANH, ACT_SOFTPLUS):
        raise ValueError(f"unknown activation code {act}")
    n = Hs[0].shape[0]
    # no negative indices here: wraparound is compiled out module-wide
    W_last = np.ascontiguousarray(Ws[len(Ws) - 1], dtype=np.float64)
    R = np.tile(W_last[0], (n, 1))
    for l in range(len(Ws) - 2, -1, -1):
        T = np.empty_like(R)
        Rv = R
        Hv = Hs[l + 1]
        Tv = T
        m = T.shape[1]
        with nogil:
            for i in range(n):
                for j in range(m):
                    Tv[i, j] = _gd_h(act, Hv[i, j]) * Rv[i, j]
        W = np.ascontiguousarray(Ws[l], dtype=np.float64)
        R = np.empty((n, W.shape[1]), dtype=np.float64)
        _gemm_rm(False, False, T, W, R, 0.0)
    return R


def param_grads_output_seed(Ws, bs, Hs, seed, int act):
    """Parameter gradients of sum_i seed_i * y_i."""
    cdef Py_ssize_t i, j, n, m
    cdef double[:, ::1] Dv, Bv, Hv
    cdef double[::1] dbv
    if act not in (ACT_TANH, ACT_SOFTPLUS):
        raise ValueError(f"unknown activation code {act}")
    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    D = np.ascontiguousarray(seed, dtype=np.float64).reshape(-1, 1)
    last = len(Ws) - 1
    _gemm_rm(True, False, D, Hs[last], dWs[last], 0.0)
    dbs[last][0] = D.sum()
    W = np.ascontiguousarray(Ws[last], dtype=np.float64)
    B = np.empty((D.shape[0], W.shape[1]), dtype=np.float64)
    _gemm_rm(False, False, D, W, B, 0.0)
    for l in range(last - 1, -1, -1):
        n = B.shape[0]
        m = B.shape[1]
        Dn = np.empty_like(B)
        Dv = Dn
        Bv = B
        Hv = Hs[l + 1]
        dbv = dbs[l]
        with nogil:
            for i in range(n):
                for j in range(m):
                    Dv[i, j] = _gd_h(act, Hv[i, j]) * Bv[i, j]
                    dbv[j] += Dv[i, j]
        _gemm_rm(True, False, Dn, Hs[l], dWs[l], 0.0)
        if l > 0:
            W = np.ascontiguousarray(Ws[l], dtype=np.float64)
            B = np.empty((n, W.shape[1]), dtype=np.float64)
            _gemm_rm(False, False, Dn, W, B, 0.0)
    return dWs, dbs


def param_grads_directional(Ws, bs, Hs, U, int act):
    """Parameter gradients of rho = sum_i u_i . grad_x y_i."""
    cdef Py_ssize_t i, j, n, m
    cdef double[:, ::1] av, bv, cv, dv, ev, fv
    cdef double[::1] colv
    cdef double gp, gpp
    cdef int n_layers = len(Ws)
    if act not in (ACT_TANH, ACT_SOFTPLUS):
        raise ValueError(f"unknown activation code {act}")
    Hd = [np.ascontiguousarray(U, dtype=np.float64)]
    Zd = []
    n = Hd[0].shape[0]
    for l in range(n_layers - 1):
        W = np.ascontiguousarray(Ws[l], dtype=np.float64)
        zd = np.empty((n, W.shape[0]), dtype=np.float64)
        _gemm_rm(False, True, Hd[l], W, zd, 0.0)
        Zd.append(zd)
        hd = np.empty_like(zd)
        av = zd
        bv = hd
        cv = Hs[l + 1]
        m = zd.shape[1]
        with nogil:
            for i in range(n):
                for j in range(m):
                    bv[i, j] = _gd_h(act, cv[i, j]) * av[i, j]
        Hd.append(hd)

    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    last = n_layers - 1
    dWs[last][0, :] = Hd[last].sum(axis=0)
    W_last = np.ascontiguousarray(Ws[last], dtype=np.float64)
    Hb = np.zeros_like(Hs[last])
    Hdb = np.tile(W_last[0], (n, 1))
    for l in range(last - 1, -1, -1):
        m = Hb.shape[1]
        Zb = np.empty_like(Hb)
        Zdb = np.empty_like(Hdb)
        av = Zb
        bv = Zdb
        cv = Hs[l + 1]
        dv = Hb
        ev = Hdb
        fv = Zd[l]
        colv = dbs[l]
        with nogil:
            for i in range(n):
                for j in range(m):
                    gp = _gd_h(act, cv[i, j])
                    gpp = _gdd_h(act, cv[i, j])
                    av[i, j] = gp * dv[i, j] + gpp * fv[i, j] * ev[i, j]
                    bv[i, j] = gp * ev[i, j]
                    colv[j] += av[i, j]
        _gemm_rm(True, False, Zb, Hs[l], dWs[l], 0.0)
        _gemm_rm(True, False, Zdb, Hd[l], dWs[l], 1.0)
        if l > 0:
            W = np.ascontiguousarray(Ws[l], dtype=np.float64)
            Hb = np.empty((n, W.shape[1]), dtype=np.float64)
            Hdb = np.empty((n, W.shape[1]), dtype=np.float64)
            _gemm_rm(False, False, Zb, W, Hb, 0.0)
            _gemm_rm(False, False, Zdb, W, Hdb, 0.0)
    return dWs, dbs
