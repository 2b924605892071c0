"""Pure-numpy selective scan kernels (fallback backend).

Per batch item, channel d and state n, with decay a_t = exp(delta_t[d] * A[d,n]):

    h_t[d,n] = a_t[d,n] * h_{t-1}[d,n] + delta_t[d] * b_t[n] * u_t[d],  h_0 = 0
    y_t[d]   = sum_n c_t[n] * h_t[d,n] + d_skip[d] * u_t[d]

The step loop is the hot path; the compiled backend in ``_scan_cy`` is
selected instead when available.
"""

import numpy as np

NAME = "numpy"


def scan_forward(u, delta, A, b, c, d_skip, save_states=False):
    """Left-to-right scan. Returns (y, h_all), h_all is None unless saved."""
    B, T, Dm = u.shape
    N = A.shape[1]
    y = np.empty_like(u)
    h = np.zeros((B, Dm, N), dtype=u.dtype)
    h_all = np.empty((B, T, Dm, N), dtype=u.dtype) if save_states else None
    for t in range(T):
        dt = delta[:, t, :]  # (B, Dm)
        a = np.exp(dt[:, :, None] * A[None, :, :])  # (B, Dm, N)
        inj = (dt * u[:, t, :])[:, :, None] * b[:, t, None, :]
        h = a * h + inj
        if save_states:
            h_all[:, t] = h
        y[:, t, :] = np.einsum("bdn,bn->bd", h, c[:, t, :]) + d_skip * u[:, t, :]
    return y, h_all


def scan_backward(u, delta, A, b, c, d_skip, h_all, gy):
    """Gradients of scan_forward w.r.t. every input, given d(loss)/dy."""
    B, T, Dm = u.shape
    N = A.shape[1]
    gu = gy * d_skip
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gb = np.zeros_like(b)
    gc = np.einsum("btdn,btd->btn", h_all, gy)
    gd_skip = np.einsum("btd,btd->d", gy, u)
    carry = np.zeros((B, Dm, N), dtype=u.dtype)
    for t in range(T - 1, -1, -1):
        dt = delta[:, t, :]
        a = np.exp(dt[:, :, None] * A[None, :, :])
        G = gy[:, t, :, None] * c[:, t, None, :] + carry
        Gb = np.einsum("bdn,bn->bd", G, b[:, t, :])
        gdelta[:, t, :] = u[:, t, :] * Gb
        gu[:, t, :] += dt * Gb
        gb[:, t, :] = np.einsum("bdn,bd->bn", G, dt * u[:, t, :])
        h_prev = h_all[:, t - 1] if t > 0 else np.zeros((B, Dm, N), dtype=u.dtype)
        da = G * h_prev
        daa = da * a
        gA += np.einsum("bdn,bd->dn", daa, dt)
        gdelta[:, t, :] += np.einsum("bdn,dn->bd", daa, A)
        carry = G * a
    return gu, gdelta, gA, gb, gc, gd_skip
