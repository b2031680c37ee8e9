# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled teacher recurrence kernel; computes the same quantities as ``_scan_py``.

The time loop runs in C. Each step's affine maps over the ``B`` parallel
sequences are single BLAS ``dgemm`` calls; tanh/exp are applied to whole
step blocks with numpy's vectorized ufuncs. Weight gradients are reduced
after the sweep by the shared :func:`regenid._scan_py.weight_grads`.
"""
import numpy as np

from scipy.linalg.cython_blas cimport dgemm

from ._scan_py import weight_grads

NAME = "compiled"


cdef inline void _mm(int m, int n, int k, const double* A, int lda, const double* B, int ldb,
                     double* C, int ldc, double beta) noexcept nogil:
    """Row-major ``C[m, n] = A[m, k] @ B[k, n] + beta * C`` with leading dimensions."""
    cdef char N = b'N'
    cdef double one = 1.0
    if m == 0 or n == 0:
        return
    dgemm(&N, &N, &n, &m, &k, &one, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


def _t(*Ws):
    """Row-stacked transposes, e.g. ``[Wz.T | Wr.T]`` as one contiguous (in, out) matrix."""
    return np.ascontiguousarray(np.concatenate([np.asarray(W, dtype=np.float64).T for W in Ws], axis=1))


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def scan_forward(y, eps, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, W1, b1, Wm, bm, Wl, bl,
                 double lo, double hi):
    cdef const double[:, :, ::1] yv = _c(y)
    cdef const double[:, :, ::1] ev = _c(eps)
    cdef Py_ssize_t T = yv.shape[0], B = yv.shape[1], dy = yv.shape[2]
    cdef Py_ssize_t H = np.shape(Wz)[0], nx = np.shape(Wz)[1]
    cdef Py_ssize_t dz = nx - dy
    cdef Py_ssize_t Eh = np.shape(W1)[0]
    if (np.shape(Uz) != (H, H) or np.shape(W1)[1] != dy + H or np.shape(Wm) != (dz, Eh)
            or ev.shape[2] != dz or ev.shape[0] != T or ev.shape[1] != B):
        raise ValueError("inconsistent teacher kernel shapes")
    cdef const double[:, ::1] WzrT = _t(Wz, Wr)       # (nx, 2H)
    cdef const double[:, ::1] UzrT = _t(Uz, Ur)       # (H, 2H)
    cdef const double[:, ::1] WhT = _t(Wh)            # (nx, H)
    cdef const double[:, ::1] UhT = _t(Uh)            # (H, H)
    cdef const double[:, ::1] W1T = _t(W1)            # (dy + H, Eh)
    cdef const double[:, ::1] WmlT = _t(Wm, Wl)       # (Eh, 2dz)
    cdef const double[::1] bzr = _c(np.concatenate([bz, br]))
    cdef const double[::1] bhv = _c(bh)
    cdef const double[::1] b1v = _c(b1)
    cdef const double[::1] bml = _c(np.concatenate([bm, bl]))

    cdef Py_ssize_t W = H + 3 * dz
    out_a = np.zeros((T, B, W))
    X_a = np.zeros((T, B, nx))
    Hp_a = np.zeros((T, B, H))
    G_a = np.zeros((T, B, H))
    R_a = np.zeros((T, B, H))
    C_a = np.zeros((T, B, H))
    E_a = np.zeros((T, B, Eh))
    Lr_a = np.zeros((T, B, dz))
    gr_a = np.zeros((B, 2 * H))
    ah_a = np.zeros((B, H))
    rh_a = np.zeros((B, H))
    ml_a = np.zeros((B, 2 * dz))
    sd_a = np.zeros((B, dz))
    cdef double[:, :, ::1] out = out_a
    cdef double[:, :, ::1] X = X_a
    cdef double[:, :, ::1] Hp = Hp_a
    cdef double[:, :, ::1] G = G_a
    cdef double[:, :, ::1] R = R_a
    cdef double[:, :, ::1] C = C_a
    cdef double[:, :, ::1] E = E_a
    cdef double[:, :, ::1] Lr = Lr_a
    cdef double[:, ::1] gr = gr_a
    cdef double[:, ::1] ah = ah_a
    cdef double[:, ::1] rh = rh_a
    cdef double[:, ::1] ml = ml_a
    cdef double[:, ::1] sd = sd_a
    cdef Py_ssize_t t, b, j
    cdef double l, g
    for t in range(T):
        with nogil:
            for b in range(B):
                if t > 0:
                    for j in range(dy):
                        X[t, b, j] = yv[t - 1, b, j]
                    for j in range(dz):
                        X[t, b, dy + j] = out[t - 1, b, H + j]
                    for j in range(H):
                        Hp[t, b, j] = out[t - 1, b, j]
                for j in range(2 * H):
                    gr[b, j] = bzr[j]
                for j in range(H):
                    ah[b, j] = bhv[j]
            _mm(B, 2 * H, nx, &X[t, 0, 0], nx, &WzrT[0, 0], 2 * H, &gr[0, 0], 2 * H, 1.0)
            _mm(B, 2 * H, H, &Hp[t, 0, 0], H, &UzrT[0, 0], 2 * H, &gr[0, 0], 2 * H, 1.0)
            for b in range(B):
                for j in range(2 * H):
                    gr[b, j] = 0.5 * gr[b, j]
        np.tanh(gr_a, out=gr_a)
        with nogil:
            for b in range(B):
                for j in range(H):
                    G[t, b, j] = 0.5 * (1.0 + gr[b, j])
                    R[t, b, j] = 0.5 * (1.0 + gr[b, H + j])
                    rh[b, j] = R[t, b, j] * Hp[t, b, j]
            _mm(B, H, nx, &X[t, 0, 0], nx, &WhT[0, 0], H, &ah[0, 0], H, 1.0)
            _mm(B, H, H, &rh[0, 0], H, &UhT[0, 0], H, &ah[0, 0], H, 1.0)
        np.tanh(ah_a, out=C_a[t])
        with nogil:
            for b in range(B):
                for j in range(H):
                    g = G[t, b, j]
                    out[t, b, j] = (1.0 - g) * Hp[t, b, j] + g * C[t, b, j]
                for j in range(Eh):
                    E[t, b, j] = b1v[j]
                for j in range(2 * dz):
                    ml[b, j] = bml[j]
            _mm(B, Eh, dy, &yv[t, 0, 0], dy, &W1T[0, 0], Eh, &E[t, 0, 0], Eh, 1.0)
            _mm(B, Eh, H, &out[t, 0, 0], W, &W1T[dy, 0], Eh, &E[t, 0, 0], Eh, 1.0)
        np.tanh(E_a[t], out=E_a[t])
        with nogil:
            _mm(B, 2 * dz, Eh, &E[t, 0, 0], Eh, &WmlT[0, 0], 2 * dz, &ml[0, 0], 2 * dz, 1.0)
            for b in range(B):
                for j in range(dz):
                    l = ml[b, dz + j]
                    Lr[t, b, j] = l
                    if l < lo:
                        l = lo
                    elif l > hi:
                        l = hi
                    out[t, b, H + dz + j] = ml[b, j]
                    out[t, b, H + 2 * dz + j] = l
                    sd[b, j] = 0.5 * l
        np.exp(sd_a, out=sd_a)
        with nogil:
            for b in range(B):
                for j in range(dz):
                    out[t, b, H + j] = ml[b, j] + sd[b, j] * ev[t, b, j]
    return out_a, (X_a, Hp_a, G_a, R_a, C_a, E_a, Lr_a)


def scan_backward(dout, y, eps, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, W1, b1, Wm, bm, Wl, bl,
                  double lo, double hi, out, cache):
    cdef const double[:, :, ::1] dv = _c(dout)
    cdef const double[:, :, ::1] ev = _c(eps)
    cdef const double[:, :, ::1] G = _c(cache[2])
    cdef const double[:, :, ::1] R = _c(cache[3])
    cdef const double[:, :, ::1] C = _c(cache[4])
    cdef const double[:, :, ::1] E = _c(cache[5])
    cdef const double[:, :, ::1] Lr = _c(cache[6])
    cdef const double[:, :, ::1] Hp = _c(cache[1])
    cdef Py_ssize_t T = ev.shape[0], B = ev.shape[1], dz = ev.shape[2]
    cdef Py_ssize_t H = np.shape(Wz)[0], nx = np.shape(Wz)[1]
    cdef Py_ssize_t dy = nx - dz
    cdef Py_ssize_t Eh = np.shape(W1)[0]
    cdef const double[:, ::1] Wzv = _c(Wz), Wrv = _c(Wr), Whv = _c(Wh)
    cdef const double[:, ::1] Uzv = _c(Uz), Urv = _c(Ur), Uhv = _c(Uh)
    cdef const double[:, ::1] W1v = _c(W1)
    cdef const double[:, ::1] Wml = _c(np.concatenate([Wm, Wl], axis=0))   # (2dz, Eh)
    out_np = np.asarray(out)
    cdef const double[:, :, ::1] S = _c(np.exp(0.5 * out_np[:, :, H + 2 * dz:]))

    GML_a = np.zeros((T, B, 2 * dz))
    GAE_a = np.zeros((T, B, Eh))
    DAZ_a = np.zeros((T, B, H)); DAR_a = np.zeros((T, B, H)); DAH_a = np.zeros((T, B, H))
    cdef double[:, :, ::1] GML = GML_a, GAE = GAE_a
    cdef double[:, :, ::1] DAZ = DAZ_a, DAR = DAR_a, DAH = DAH_a
    dhc_a = np.zeros((B, H)); dzc_a = np.zeros((B, dz))
    gh_a = np.zeros((B, H)); dhp_a = np.zeros((B, H)); drh_a = np.zeros((B, H))
    cdef double[:, ::1] dhc = dhc_a, dzc = dzc_a, gh = gh_a, dhp = dhp_a, drh = drh_a

    cdef Py_ssize_t t, b, j
    cdef double gz, e, g, c, hp, r
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(dz):
                    gz = dv[t, b, H + j] + dzc[b, j]
                    GML[t, b, j] = dv[t, b, H + dz + j] + gz
                    if Lr[t, b, j] >= lo and Lr[t, b, j] <= hi:
                        GML[t, b, dz + j] = dv[t, b, H + 2 * dz + j] + gz * ev[t, b, j] * 0.5 * S[t, b, j]
                    else:
                        GML[t, b, dz + j] = 0.0
            _mm(B, Eh, 2 * dz, &GML[t, 0, 0], 2 * dz, &Wml[0, 0], Eh, &GAE[t, 0, 0], Eh, 0.0)
            for b in range(B):
                for j in range(Eh):
                    e = E[t, b, j]
                    GAE[t, b, j] = GAE[t, b, j] * (1.0 - e * e)
                for j in range(H):
                    gh[b, j] = dv[t, b, j] + dhc[b, j]
            _mm(B, H, Eh, &GAE[t, 0, 0], Eh, &W1v[0, dy], dy + H, &gh[0, 0], H, 1.0)
            for b in range(B):
                for j in range(H):
                    g = G[t, b, j]
                    c = C[t, b, j]
                    hp = Hp[t, b, j]
                    DAH[t, b, j] = gh[b, j] * g * (1.0 - c * c)
                    DAZ[t, b, j] = gh[b, j] * (c - hp) * g * (1.0 - g)
                    dhp[b, j] = gh[b, j] * (1.0 - g)
            _mm(B, H, H, &DAH[t, 0, 0], H, &Uhv[0, 0], H, &drh[0, 0], H, 0.0)
            for b in range(B):
                for j in range(H):
                    r = R[t, b, j]
                    DAR[t, b, j] = drh[b, j] * Hp[t, b, j] * r * (1.0 - r)
                    dhc[b, j] = dhp[b, j] + drh[b, j] * r
            _mm(B, H, H, &DAZ[t, 0, 0], H, &Uzv[0, 0], H, &dhc[0, 0], H, 1.0)
            _mm(B, H, H, &DAR[t, 0, 0], H, &Urv[0, 0], H, &dhc[0, 0], H, 1.0)
            _mm(B, dz, H, &DAZ[t, 0, 0], H, &Wzv[0, dy], nx, &dzc[0, 0], dz, 0.0)
            _mm(B, dz, H, &DAR[t, 0, 0], H, &Wrv[0, dy], nx, &dzc[0, 0], dz, 1.0)
            _mm(B, dz, H, &DAH[t, 0, 0], H, &Whv[0, dy], nx, &dzc[0, 0], dz, 1.0)
    return weight_grads(y, out_np, cache, GML_a[:, :, :dz], GML_a[:, :, dz:], GAE_a,
                        DAZ_a, DAR_a, DAH_a)
