# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernels for the builtin three-dimensional models.

Model codes: 0 flat, 1 heisenberg, 2 martinet. All builtins have n = 3,
m = 2. Array layout matches ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memset, memcpy

cnp.import_array()

DEF N = 3
DEF M = 2
DEF S = 6
DEF SS = 36

# F[a*N+i], J[(i*N+a)*N+b], H[((i*N+a)*N+b)*N+c]


cdef inline void _fields(int code, const double* q, double* F, double* J, double* H) noexcept nogil:
    memset(F, 0, N * N * sizeof(double))
    memset(J, 0, N * N * N * sizeof(double))
    memset(H, 0, N * N * N * N * sizeof(double))
    F[0 * N + 0] = 1.0
    F[1 * N + 1] = 1.0
    F[2 * N + 2] = 1.0
    if code == 1:
        F[2 * N + 0] = -0.5 * q[1]
        F[2 * N + 1] = 0.5 * q[0]
        J[(0 * N + 2) * N + 1] = -0.5
        J[(1 * N + 2) * N + 0] = 0.5
    elif code == 2:
        F[2 * N + 1] = 0.5 * q[0] * q[0]
        J[(1 * N + 2) * N + 0] = q[0]
        H[((1 * N + 2) * N + 0) * N + 0] = 1.0


cdef inline void _ham(int code, const double* y, double* dy, double* A) noexcept nogil:
    """Hamilton right-hand side; fills the 6x6 linearization when A != NULL."""
    cdef double F[N * N]
    cdef double J[N * N * N]
    cdef double H[N * N * N * N]
    cdef double u[M]
    cdef double w[M * N]
    cdef double K[M * N * N]
    cdef const double* q = y
    cdef const double* p = y + N
    cdef int i, a, b, c
    cdef double acc, uJ
    _fields(code, q, F, J, H)
    for i in range(M):
        acc = 0.0
        for a in range(N):
            acc += p[a] * F[a * N + i]
        u[i] = acc
        for b in range(N):
            acc = 0.0
            for a in range(N):
                acc += p[a] * J[(i * N + a) * N + b]
            w[i * N + b] = acc
    for a in range(N):
        acc = 0.0
        for i in range(M):
            acc += u[i] * F[a * N + i]
        dy[a] = acc
        acc = 0.0
        for i in range(M):
            acc -= u[i] * w[i * N + a]
        dy[N + a] = acc
    if A == NULL:
        return
    for i in range(M):
        for b in range(N):
            for c in range(N):
                acc = 0.0
                for a in range(N):
                    acc += p[a] * H[((i * N + a) * N + b) * N + c]
                K[(i * N + b) * N + c] = acc
    for a in range(N):
        for b in range(N):
            uJ = 0.0
            acc = 0.0
            for i in range(M):
                uJ += u[i] * J[(i * N + a) * N + b]
                acc += F[a * N + i] * w[i * N + b]
            A[a * S + b] = acc + uJ
            acc = 0.0
            for i in range(M):
                acc += F[a * N + i] * F[b * N + i]
            A[a * S + N + b] = acc
            # dp_b/dp_a uses J[i, a, b]; fill row N+b, column N+a
            acc = 0.0
            for i in range(M):
                acc += w[i * N + b] * F[a * N + i]
            A[(N + b) * S + N + a] = -(acc + uJ)
    for b in range(N):
        for c in range(N):
            acc = 0.0
            for i in range(M):
                acc += w[i * N + b] * w[i * N + c] + u[i] * K[(i * N + b) * N + c]
            A[(N + b) * S + c] = -acc


cdef inline void _aug(int code, const double* y, const double* Y, double* dy, double* dY) noexcept nogil:
    cdef double A[SS]
    cdef int r, c, k
    cdef double acc
    if Y == NULL:
        _ham(code, y, dy, NULL)
        return
    _ham(code, y, dy, A)
    for r in range(S):
        for c in range(S):
            acc = 0.0
            for k in range(S):
                acc += A[r * S + k] * Y[k * S + c]
            dY[r * S + c] = acc


def hamilton_rhs(int code, double[::1] q, double[::1] p):
    cdef double y[S]
    cdef double dy[S]
    cdef int a
    for a in range(N):
        y[a] = q[a]
        y[N + a] = p[a]
    _ham(code, y, dy, NULL)
    dq = np.empty(N)
    dp = np.empty(N)
    cdef double[::1] dqv = dq
    cdef double[::1] dpv = dp
    for a in range(N):
        dqv[a] = dy[a]
        dpv[a] = dy[N + a]
    return dq, dp


def hamilton_linear(int code, double[::1] q, double[::1] p):
    cdef double y[S]
    cdef double dy[S]
    cdef int a
    for a in range(N):
        y[a] = q[a]
        y[N + a] = p[a]
    out = np.empty((S, S))
    cdef double[:, ::1] ov = out
    _ham(code, y, dy, &ov[0, 0])
    return out


def hamilton_state_rhs(int code, double[::1] y):
    out = np.empty(S)
    cdef double[::1] ov = out
    _ham(code, &y[0], &ov[0], NULL)
    return out


def hamilton_aug_rhs(int code, double[::1] y):
    out = np.empty(S + SS)
    cdef double[::1] ov = out
    _aug(code, &y[0], &y[S], &ov[0], &ov[S])
    return out


def hamilton_flow(int code, q0, p0, double t0, double t1, int nsteps, bint stm=False):
    Ta = np.linspace(t0, t1, nsteps + 1)
    cdef double[::1] T = Ta
    Qa = np.empty((nsteps + 1, N))
    Pa = np.empty((nsteps + 1, N))
    cdef double[:, ::1] Q = Qa
    cdef double[:, ::1] P = Pa
    cdef double[::1] q0v = np.ascontiguousarray(q0, dtype=float)
    cdef double[::1] p0v = np.ascontiguousarray(p0, dtype=float)
    cdef double y[S]
    cdef double yt[S]
    cdef double k1[S]
    cdef double k2[S]
    cdef double k3[S]
    cdef double k4[S]
    cdef double Y[SS]
    cdef double Yt[SS]
    cdef double K1[SS]
    cdef double K2[SS]
    cdef double K3[SS]
    cdef double K4[SS]
    cdef double* Yp = NULL
    cdef double h
    cdef int j, a
    for a in range(N):
        y[a] = q0v[a]
        y[N + a] = p0v[a]
        Q[0, a] = y[a]
        P[0, a] = y[N + a]
    if stm:
        memset(Y, 0, SS * sizeof(double))
        for a in range(S):
            Y[a * S + a] = 1.0
        Yp = Y
    with nogil:
        for j in range(nsteps):
            h = T[j + 1] - T[j]
            if Yp != NULL:
                _aug(code, y, Y, k1, K1)
                for a in range(S):
                    yt[a] = y[a] + 0.5 * h * k1[a]
                for a in range(SS):
                    Yt[a] = Y[a] + 0.5 * h * K1[a]
                _aug(code, yt, Yt, k2, K2)
                for a in range(S):
                    yt[a] = y[a] + 0.5 * h * k2[a]
                for a in range(SS):
                    Yt[a] = Y[a] + 0.5 * h * K2[a]
                _aug(code, yt, Yt, k3, K3)
                for a in range(S):
                    yt[a] = y[a] + h * k3[a]
                for a in range(SS):
                    Yt[a] = Y[a] + h * K3[a]
                _aug(code, yt, Yt, k4, K4)
                for a in range(SS):
                    Y[a] = Y[a] + h / 6.0 * (K1[a] + 2.0 * K2[a] + 2.0 * K3[a] + K4[a])
            else:
                _ham(code, y, k1, NULL)
                for a in range(S):
                    yt[a] = y[a] + 0.5 * h * k1[a]
                _ham(code, yt, k2, NULL)
                for a in range(S):
                    yt[a] = y[a] + 0.5 * h * k2[a]
                _ham(code, yt, k3, NULL)
                for a in range(S):
                    yt[a] = y[a] + h * k3[a]
                _ham(code, yt, k4, NULL)
            for a in range(S):
                y[a] = y[a] + h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            for a in range(N):
                Q[j + 1, a] = y[a]
                P[j + 1, a] = y[N + a]
    Phi = None
    cdef double[:, ::1] Pv
    if stm:
        Phi = np.empty((S, S))
        Pv = Phi
        memcpy(&Pv[0, 0], Y, SS * sizeof(double))
    return Ta, Qa, Pa, Phi


cdef inline void _ctrl(int code, const double* q, const double* c, const double* Mt,
                       const double* Bt, double* dq, double* dM, double* dB) noexcept nogil:
    cdef double F[N * N]
    cdef double J[N * N * N]
    cdef double H[N * N * N * N]
    cdef double A[N * N]
    cdef int i, a, b, k
    cdef double acc
    _fields(code, q, F, J, H)
    for a in range(N):
        acc = 0.0
        for i in range(N):
            acc += F[a * N + i] * c[i]
        dq[a] = acc
    if Mt == NULL:
        return
    for a in range(N):
        for b in range(N):
            acc = 0.0
            for i in range(N):
                acc += c[i] * J[(i * N + a) * N + b]
            A[a * N + b] = acc
    for a in range(N):
        for b in range(N):
            acc = 0.0
            for k in range(N):
                acc += A[a * N + k] * Mt[k * N + b]
            dM[a * N + b] = acc
            acc = F[a * N + b]
            for k in range(N):
                acc += A[a * N + k] * Bt[k * N + b]
            dB[a * N + b] = acc


def control_flow(int code, q0, h, dt, int substeps=1, bint want_phi=False, bint want_sens=False):
    cdef double[:, ::1] hv = np.ascontiguousarray(h, dtype=float)
    cdef double[::1] dtv = np.ascontiguousarray(dt, dtype=float)
    cdef Py_ssize_t nint = hv.shape[0]
    Qa = np.empty((nint + 1, N))
    cdef double[:, ::1] Q = Qa
    cdef bint track = want_phi or want_sens
    Phia = np.empty((nint + 1, N, N)) if track else None
    Msa = np.empty((nint, N, N)) if want_sens else None
    Bsa = np.empty((nint, N, N)) if want_sens else None
    cdef double[:, :, ::1] Phi
    cdef double[:, :, ::1] Ms
    cdef double[:, :, ::1] Bs
    if track:
        Phi = Phia
    if want_sens:
        Ms = Msa
        Bs = Bsa
    cdef double q[N]
    cdef double qt[N]
    cdef double k1[N]
    cdef double k2[N]
    cdef double k3[N]
    cdef double k4[N]
    cdef double Mm[N * N]
    cdef double Bm[N * N]
    cdef double Mt[N * N]
    cdef double Bt[N * N]
    cdef double K1[N * N]
    cdef double K2[N * N]
    cdef double K3[N * N]
    cdef double K4[N * N]
    cdef double L1[N * N]
    cdef double L2[N * N]
    cdef double L3[N * N]
    cdef double L4[N * N]
    cdef double s, acc
    cdef const double* c
    cdef Py_ssize_t j
    cdef int a, b, k, sub
    q0v = np.ascontiguousarray(q0, dtype=float)
    for a in range(N):
        q[a] = q0v[a]
        Q[0, a] = q[a]
    if track:
        for a in range(N):
            for b in range(N):
                Phi[0, a, b] = 1.0 if a == b else 0.0
    with nogil:
        for j in range(nint):
            c = &hv[j, 0]
            s = dtv[j] / substeps
            if track:
                memset(Mm, 0, N * N * sizeof(double))
                memset(Bm, 0, N * N * sizeof(double))
                for a in range(N):
                    Mm[a * N + a] = 1.0
            for sub in range(substeps):
                if track:
                    _ctrl(code, q, c, Mm, Bm, k1, K1, L1)
                    for a in range(N):
                        qt[a] = q[a] + 0.5 * s * k1[a]
                    for a in range(N * N):
                        Mt[a] = Mm[a] + 0.5 * s * K1[a]
                        Bt[a] = Bm[a] + 0.5 * s * L1[a]
                    _ctrl(code, qt, c, Mt, Bt, k2, K2, L2)
                    for a in range(N):
                        qt[a] = q[a] + 0.5 * s * k2[a]
                    for a in range(N * N):
                        Mt[a] = Mm[a] + 0.5 * s * K2[a]
                        Bt[a] = Bm[a] + 0.5 * s * L2[a]
                    _ctrl(code, qt, c, Mt, Bt, k3, K3, L3)
                    for a in range(N):
                        qt[a] = q[a] + s * k3[a]
                    for a in range(N * N):
                        Mt[a] = Mm[a] + s * K3[a]
                        Bt[a] = Bm[a] + s * L3[a]
                    _ctrl(code, qt, c, Mt, Bt, k4, K4, L4)
                    for a in range(N * N):
                        Mm[a] = Mm[a] + s / 6.0 * (K1[a] + 2.0 * K2[a] + 2.0 * K3[a] + K4[a])
                        Bm[a] = Bm[a] + s / 6.0 * (L1[a] + 2.0 * L2[a] + 2.0 * L3[a] + L4[a])
                else:
                    _ctrl(code, q, c, NULL, NULL, k1, NULL, NULL)
                    for a in range(N):
                        qt[a] = q[a] + 0.5 * s * k1[a]
                    _ctrl(code, qt, c, NULL, NULL, k2, NULL, NULL)
                    for a in range(N):
                        qt[a] = q[a] + 0.5 * s * k2[a]
                    _ctrl(code, qt, c, NULL, NULL, k3, NULL, NULL)
                    for a in range(N):
                        qt[a] = q[a] + s * k3[a]
                    _ctrl(code, qt, c, NULL, NULL, k4, NULL, NULL)
                for a in range(N):
                    q[a] = q[a] + s / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            for a in range(N):
                Q[j + 1, a] = q[a]
            if track:
                for a in range(N):
                    for b in range(N):
                        acc = 0.0
                        for k in range(N):
                            acc += Mm[a * N + k] * Phi[j, k, b]
                        Phi[j + 1, a, b] = acc
            if want_sens:
                for a in range(N * N):
                    Ms[j, a // N, a % N] = Mm[a]
                    Bs[j, a // N, a % N] = Bm[a]
    sensa = None
    cdef double[:, :, ::1] sv
    cdef double Pm[N * N]
    cdef double Pn[N * N]
    if want_sens:
        sensa = np.empty((nint, N, N))
        sv = sensa
        memset(Pm, 0, N * N * sizeof(double))
        for a in range(N):
            Pm[a * N + a] = 1.0
        with nogil:
            for j in range(nint - 1, -1, -1):
                for a in range(N):
                    for b in range(N):
                        acc = 0.0
                        for k in range(N):
                            acc += Pm[a * N + k] * Bs[j, k, b]
                        sv[j, a, b] = acc
                for a in range(N):
                    for b in range(N):
                        acc = 0.0
                        for k in range(N):
                            acc += Pm[a * N + k] * Ms[j, k, b]
                        Pn[a * N + b] = acc
                memcpy(Pm, Pn, N * N * sizeof(double))
    return Qa, (Phia if want_phi else None), sensa
