# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled selective scan kernels (hot path).

Same recurrence as ``_scan_np``; the per-step loop is fused into C so the
scan stays cheap at long sequence lengths.
"""

import numpy as np

cimport cython
from libc.math cimport exp

ctypedef fused real:
    float
    double

NAME = "cython"


def scan_forward(u, delta, A, b, c, d_skip, save_states=False):
    u = np.ascontiguousarray(u)
    delta = np.ascontiguousarray(delta)
    A = np.ascontiguousarray(A)
    b = np.ascontiguousarray(b)
    c = np.ascontiguousarray(c)
    d_skip = np.ascontiguousarray(d_skip)
    y = np.empty_like(u)
    B, T, Dm = u.shape
    N = A.shape[1]
    h_all = np.empty((B, T, Dm, N), dtype=u.dtype) if save_states else None
    if u.dtype == np.float64:
        _forward[double](u, delta, A, b, c, d_skip, y,
                         h_all if save_states else np.empty((0, 0, 0, 0), dtype=u.dtype),
                         1 if save_states else 0)
    else:
        _forward[float](u, delta, A, b, c, d_skip, y,
                        h_all if save_states else np.empty((0, 0, 0, 0), dtype=u.dtype),
                        1 if save_states else 0)
    return y, h_all


def scan_backward(u, delta, A, b, c, d_skip, h_all, gy):
    u = np.ascontiguousarray(u)
    delta = np.ascontiguousarray(delta)
    A = np.ascontiguousarray(A)
    b = np.ascontiguousarray(b)
    c = np.ascontiguousarray(c)
    d_skip = np.ascontiguousarray(d_skip)
    h_all = np.ascontiguousarray(h_all)
    gy = np.ascontiguousarray(gy)
    gu = np.zeros_like(u)
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    gd_skip = np.zeros_like(d_skip)
    if u.dtype == np.float64:
        _backward[double](u, delta, A, b, c, d_skip, h_all, gy,
                          gu, gdelta, gA, gb, gc, gd_skip)
    else:
        _backward[float](u, delta, A, b, c, d_skip, h_all, gy,
                         gu, gdelta, gA, gb, gc, gd_skip)
    return gu, gdelta, gA, gb, gc, gd_skip


cdef void _forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
                   real[:, :, ::1] b, real[:, :, ::1] c, real[::1] d_skip,
                   real[:, :, ::1] y, real[:, :, :, ::1] h_all, int save_states) noexcept:
    cdef Py_ssize_t B = u.shape[0]
    cdef Py_ssize_t T = u.shape[1]
    cdef Py_ssize_t Dm = u.shape[2]
    cdef Py_ssize_t N = A.shape[1]
    cdef Py_ssize_t bi, t, d, n
    cdef real dt, ud, inj, acc, hv
    cdef real[:, ::1] h = np.zeros((Dm, N), dtype=np.asarray(u).dtype)
    for bi in range(B):
        for d in range(Dm):
            for n in range(N):
                h[d, n] = 0
        for t in range(T):
            for d in range(Dm):
                dt = delta[bi, t, d]
                ud = u[bi, t, d]
                inj = dt * ud
                acc = 0
                for n in range(N):
                    hv = exp(dt * A[d, n]) * h[d, n] + inj * b[bi, t, n]
                    h[d, n] = hv
                    acc += c[bi, t, n] * hv
                    if save_states:
                        h_all[bi, t, d, n] = hv
                y[bi, t, d] = acc + d_skip[d] * ud


cdef void _backward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
                    real[:, :, ::1] b, real[:, :, ::1] c, real[::1] d_skip,
                    real[:, :, :, ::1] h_all, real[:, :, ::1] gy,
                    real[:, :, ::1] gu, real[:, :, ::1] gdelta, real[:, ::1] gA,
                    real[:, :, ::1] gb, real[:, :, ::1] gc, real[::1] gd_skip) noexcept:
    cdef Py_ssize_t B = u.shape[0]
    cdef Py_ssize_t T = u.shape[1]
    cdef Py_ssize_t Dm = u.shape[2]
    cdef Py_ssize_t N = A.shape[1]
    cdef Py_ssize_t bi, t, d, n
    cdef real dt, ud, gyv, G, a, hprev, da, gb_acc, gd_acc, gu_acc
    cdef real[:, ::1] carry = np.zeros((Dm, N), dtype=np.asarray(u).dtype)
    for bi in range(B):
        for d in range(Dm):
            for n in range(N):
                carry[d, n] = 0
        for t in range(T - 1, -1, -1):
            for d in range(Dm):
                dt = delta[bi, t, d]
                ud = u[bi, t, d]
                gyv = gy[bi, t, d]
                gd_skip[d] += gyv * ud
                gu_acc = gyv * d_skip[d]
                gd_acc = 0
                for n in range(N):
                    gc[bi, t, n] += gyv * h_all[bi, t, d, n]
                    G = gyv * c[bi, t, n] + carry[d, n]
                    a = exp(dt * A[d, n])
                    # input injection term
                    gd_acc += G * b[bi, t, n] * ud
                    gu_acc += dt * G * b[bi, t, n]
                    gb[bi, t, n] += G * dt * ud
                    # decay term
                    hprev = h_all[bi, t - 1, d, n] if t > 0 else <real>0
                    da = G * hprev * a
                    gA[d, n] += da * dt
                    gd_acc += da * A[d, n]
                    carry[d, n] = G * a
                gdelta[bi, t, d] = gd_acc
                gu[bi, t, d] = gu_acc
