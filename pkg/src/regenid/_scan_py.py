"""Pure-numpy teacher recurrence kernel (fallback for the compiled ``_scan_ext``).

One call runs the sequential part of the teacher over a window of ``T`` steps
for ``B`` independent sequences: the GRU hidden update fed with the previous
output and latent sample, the inference network on ``[y_t; h_t]`` and the
reparameterized draw of ``z_t``. Output columns are ``[h | z | mean | logvar]``.
The t=0 step sees zero previous output, latent and hidden state.

Both backends expose the same two functions with the same argument order.
"""
import numpy as np

NAME = "python"


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def scan_forward(y, eps, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, W1, b1, Wm, bm, Wl, bl, lo, hi):
    T, B, dy = y.shape
    H, nx = Wz.shape
    dz = nx - dy
    Eh = W1.shape[0]
    out = np.zeros((T, B, H + 3 * dz))
    X = np.zeros((T, B, nx))
    Hp = np.zeros((T, B, H))
    G = np.zeros((T, B, H))
    R = np.zeros((T, B, H))
    C = np.zeros((T, B, H))
    E = np.zeros((T, B, Eh))
    Lr = np.zeros((T, B, dz))
    for t in range(T):
        if t > 0:
            X[t, :, :dy] = y[t - 1]
            X[t, :, dy:] = out[t - 1, :, H:H + dz]
            Hp[t] = out[t - 1, :, :H]
        x, hp = X[t], Hp[t]
        g = _sigmoid(x @ Wz.T + hp @ Uz.T + bz)
        r = _sigmoid(x @ Wr.T + hp @ Ur.T + br)
        c = np.tanh(x @ Wh.T + (r * hp) @ Uh.T + bh)
        h = (1.0 - g) * hp + g * c
        e = np.tanh(y[t] @ W1[:, :dy].T + h @ W1[:, dy:].T + b1)
        m = e @ Wm.T + bm
        lraw = e @ Wl.T + bl
        lv = np.clip(lraw, lo, hi)
        G[t], R[t], C[t], E[t], Lr[t] = g, r, c, e, lraw
        out[t, :, :H] = h
        out[t, :, H:H + dz] = m + np.exp(0.5 * lv) * eps[t]
        out[t, :, H + dz:H + 2 * dz] = m
        out[t, :, H + 2 * dz:] = lv
    return out, (X, Hp, G, R, C, E, Lr)


def weight_grads(y, out, cache, GM, GL, GAE, DAZ, DAR, DAH):
    """Parameter gradients from the per-step pre-activation gradients.

    Weight gradients do not feed back into the recurrence, so both backends
    collect the per-step terms in the sequential sweep and reduce them here
    with one matrix product per parameter block.
    """
    X, Hp, G, R, C, E, Lr = cache
    T, B, dy = y.shape
    H = DAZ.shape[-1]
    n = T * B

    def rows(a):
        a = np.asarray(a)
        return a.reshape(n, a.shape[-1])

    gm, gl, gae, daz, dar, dah = (rows(a) for a in (GM, GL, GAE, DAZ, DAR, DAH))
    e, x, hp = rows(E), rows(X), rows(Hp)
    yh = np.concatenate([rows(y), rows(out[:, :, :H])], axis=1)
    return (daz.T @ x, dar.T @ x, dah.T @ x,
            daz.T @ hp, dar.T @ hp, dah.T @ (rows(R) * hp),
            daz.sum(axis=0), dar.sum(axis=0), dah.sum(axis=0),
            gae.T @ yh, gae.sum(axis=0),
            gm.T @ e, gm.sum(axis=0), gl.T @ e, gl.sum(axis=0))


def scan_backward(dout, y, eps, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, W1, b1, Wm, bm, Wl, bl,
                  lo, hi, out, cache):
    X, Hp, G, R, C, E, Lr = cache
    T, B, dy = y.shape
    H = Wz.shape[0]
    dz = Wz.shape[1] - dy
    GM, GL = np.zeros((T, B, dz)), np.zeros((T, B, dz))
    GAE = np.zeros((T, B, W1.shape[0]))
    DAZ, DAR, DAH = np.zeros((T, B, H)), np.zeros((T, B, H)), np.zeros((T, B, H))
    dhc = np.zeros((B, H))
    dzc = np.zeros((B, dz))
    for t in range(T - 1, -1, -1):
        lv = out[t, :, H + 2 * dz:]
        gz = dout[t, :, H:H + dz] + dzc
        gm = dout[t, :, H + dz:H + 2 * dz] + gz
        gl = dout[t, :, H + 2 * dz:] + gz * eps[t] * 0.5 * np.exp(0.5 * lv)
        gl = gl * ((Lr[t] >= lo) & (Lr[t] <= hi))
        e = E[t]
        gae = (gm @ Wm + gl @ Wl) * (1.0 - e * e)
        gh = dout[t, :, :H] + dhc + gae @ W1[:, dy:]
        g, r, c, hp = G[t], R[t], C[t], Hp[t]
        dah = gh * g * (1.0 - c * c)
        daz = gh * (c - hp) * g * (1.0 - g)
        dhp = gh * (1.0 - g)
        drh = dah @ Uh
        dar = drh * hp * r * (1.0 - r)
        dhp += drh * r
        GM[t], GL[t], GAE[t], DAZ[t], DAR[t], DAH[t] = gm, gl, gae, daz, dar, dah
        dhc = dhp + daz @ Uz + dar @ Ur
        dzc = (daz @ Wz + dar @ Wr + dah @ Wh)[:, dy:]
    return weight_grads(y, out, cache, GM, GL, GAE, DAZ, DAR, DAH)
