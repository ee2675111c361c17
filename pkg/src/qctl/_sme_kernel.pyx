# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernel for diffusive stochastic master equations.

Mirrors ``qctl._sme_py.run`` exactly; see that module for the argument
conventions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport zheev

cnp.import_array()

ctypedef double complex cplx

cdef enum:
    LAW_CONST = 0
    LAW_LINEAR = 1
    LAW_PATCHED = 2


cdef inline void _matmul(const cplx* a, const cplx* b, cplx* out, int n) noexcept nogil:
    cdef int i, j, k
    cdef cplx s
    for i in range(n):
        for j in range(n):
            s = 0
            for k in range(n):
                s = s + a[i * n + k] * b[k * n + j]
            out[i * n + j] = s


cdef inline double _re_trace_prod(const cplx* a, const cplx* rho, int n) noexcept nogil:
    # Re tr(a rho)
    cdef int i, k
    cdef double s = 0.0
    for i in range(n):
        for k in range(n):
            s += (a[i * n + k] * rho[k * n + i]).real
    return s


cdef int _project(cplx* rho, int n, cplx* work_a, double* evals, cplx* zwork, int lwork,
                  double* rwork) noexcept nogil:
    """Hermitize, clip negative eigenvalues, renormalize. Returns 1 on a clip event."""
    cdef int i, j, k, info, event = 0
    cdef double tr, a, d, m, r, lm, lp
    cdef cplx b, s
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    for i in range(n):
        rho[i * n + i] = rho[i * n + i].real
        for j in range(i + 1, n):
            b = 0.5 * (rho[i * n + j] + rho[j * n + i].conjugate())
            rho[i * n + j] = b
            rho[j * n + i] = b.conjugate()
    if n == 2:
        a = rho[0].real
        d = rho[3].real
        b = rho[1]
        m = 0.5 * (a + d)
        r = sqrt(0.25 * (a - d) * (a - d) + b.real * b.real + b.imag * b.imag)
        lm = m - r
        if lm < 0.0:
            if lm < -1e-9:
                event = 1
            lp = m + r
            # projector onto the top eigenvector: (rho - lm I) / (lp - lm)
            rho[0] = (a - lm) / (lp - lm)
            rho[3] = (d - lm) / (lp - lm)
            rho[1] = b / (lp - lm)
            rho[2] = b.conjugate() / (lp - lm)
            return event
    else:
        for i in range(n):
            for j in range(n):
                work_a[j * n + i] = rho[i * n + j]
        zheev(&jobz, &uplo, &n, work_a, &n, evals, zwork, &lwork, rwork, &info)
        if info == 0 and evals[0] < 0.0:
            if evals[0] < -1e-9:
                event = 1
            for k in range(n):
                if evals[k] < 0.0:
                    evals[k] = 0.0
            for i in range(n):
                for j in range(n):
                    s = 0
                    for k in range(n):
                        s = s + evals[k] * work_a[k * n + i] * work_a[k * n + j].conjugate()
                    rho[i * n + j] = s
    tr = 0.0
    for i in range(n):
        tr += rho[i * n + i].real
    for i in range(n * n):
        rho[i] = rho[i] / tr
    return event


cdef int _trajectory(const cplx* rho0, const cplx* h0, const cplx* h1, const cplx* l,
                     const cplx* ldl, int n, double sqeta, double dt, const double* dw,
                     int n_steps, int record_every, int law, double c0, const cplx* kmat,
                     const cplx* pmat, double gamma, double u_const, int mode0, cplx* states_out,
                     double* u_out, double* dy_out, int* clips) noexcept nogil:
    # returns the first non-finite step, -1 on success, -2 if allocation failed
    cdef int nn = n * n
    cdef int lwork = 4 * n
    cdef cplx* buf = <cplx*> malloc((8 * nn + lwork) * sizeof(cplx))
    cdef double* dbuf = <double*> malloc((n + 3 * n) * sizeof(double))
    if buf == NULL or dbuf == NULL:
        free(buf)
        free(dbuf)
        return -2
    cdef cplx* rho = buf
    cdef cplx* h = buf + nn
    cdef cplx* a = buf + 2 * nn
    cdef cplx* b = buf + 3 * nn
    cdef cplx* c = buf + 4 * nn
    cdef cplx* bl = buf + 5 * nn
    cdef cplx* ldag = buf + 6 * nn
    cdef cplx* work_a = buf + 7 * nn
    cdef cplx* zwork = buf + 8 * nn
    cdef double* evals = dbuf
    cdef double* rwork = dbuf + n
    cdef int i, j, step, rec = 0, fail = -1, mode = mode0
    cdef double u, s, ov, sdw, trb
    cdef cplx drift, diff
    for i in range(nn):
        rho[i] = rho0[i]
    for i in range(n):
        for j in range(n):
            ldag[i * n + j] = l[j * n + i].conjugate()
    for i in range(nn):
        states_out[i] = rho[i]
    rec = 1
    clips[0] = 0
    for step in range(n_steps):
        if law == LAW_CONST:
            u = c0
        elif law == LAW_LINEAR:
            u = c0 + _re_trace_prod(kmat, rho, n)
        else:
            ov = _re_trace_prod(pmat, rho, n)
            if ov >= gamma:
                mode = 1
            elif ov <= 0.5 * gamma:
                mode = 0
            if mode == 1:
                u = _re_trace_prod(kmat, rho, n)
            else:
                u = u_const
        u_out[step] = u
        for i in range(nn):
            h[i] = h0[i] + u * h1[i]
        _matmul(h, rho, a, n)
        _matmul(l, rho, b, n)
        _matmul(b, ldag, bl, n)
        _matmul(ldl, rho, c, n)
        trb = 0.0
        for i in range(n):
            trb += b[i * n + i].real
        sdw = dw[step]
        dy_out[step] = sqeta * 2.0 * trb * dt + sdw
        for i in range(n):
            for j in range(n):
                # -i[H, rho] = -i(A - A^dagger); D = B L^dagger - (C + C^dagger)/2
                drift = (-1j) * (a[i * n + j] - a[j * n + i].conjugate()) + bl[i * n + j] \
                    - 0.5 * (c[i * n + j] + c[j * n + i].conjugate())
                diff = b[i * n + j] + b[j * n + i].conjugate() - 2.0 * trb * rho[i * n + j]
                work_a[i * n + j] = rho[i * n + j] + drift * dt + sqeta * diff * sdw
        for i in range(nn):
            rho[i] = work_a[i]
        s = 0.0
        for i in range(nn):
            s += rho[i].real + rho[i].imag
        if not isfinite(s):
            fail = step
            break
        clips[0] += _project(rho, n, work_a, evals, zwork, lwork, rwork)
        if (step + 1) % record_every == 0:
            for i in range(nn):
                states_out[rec * nn + i] = rho[i]
            rec += 1
    free(buf)
    free(dbuf)
    return fail


def run(cnp.ndarray rho0, cnp.ndarray h0, cnp.ndarray h1, cnp.ndarray l, double eta, double dt,
        double[:, ::1] dw, int record_every, int law, double c0, cnp.ndarray k, cnp.ndarray p,
        double gamma, double u_const, int mode0=0):
    """Integrate ``dw.shape[0]`` trajectories; see ``qctl._sme_py.run``."""
    cdef int n = rho0.shape[0]
    cdef int n_traj = dw.shape[0]
    cdef int n_steps = dw.shape[1]
    cdef int n_rec = n_steps // record_every + 1
    cdef cplx[:, ::1] r0 = np.ascontiguousarray(rho0, dtype=np.complex128)
    cdef cplx[:, ::1] mh0 = np.ascontiguousarray(h0, dtype=np.complex128)
    cdef cplx[:, ::1] mh1 = np.ascontiguousarray(h1, dtype=np.complex128)
    cdef cplx[:, ::1] ml = np.ascontiguousarray(l, dtype=np.complex128)
    cdef cplx[:, ::1] mldl = np.ascontiguousarray(l.conj().T @ l, dtype=np.complex128)
    cdef cplx[:, ::1] mk = np.ascontiguousarray(k, dtype=np.complex128)
    cdef cplx[:, ::1] mp = np.ascontiguousarray(p, dtype=np.complex128)
    states = np.zeros((n_traj, n_rec, n, n), dtype=np.complex128)
    u_arr = np.zeros((n_traj, n_steps), dtype=np.float64)
    dy_arr = np.zeros((n_traj, n_steps), dtype=np.float64)
    clips_arr = np.zeros(n_traj, dtype=np.int32)
    fail_arr = np.full(n_traj, -1, dtype=np.int32)
    cdef cplx[:, :, :, ::1] st = states
    cdef double[:, ::1] uo = u_arr
    cdef double[:, ::1] dyo = dy_arr
    cdef int[::1] co = clips_arr
    cdef int[::1] fo = fail_arr
    cdef double sqeta = sqrt(eta)
    cdef int i
    with nogil:
        for i in range(n_traj):
            fo[i] = _trajectory(&r0[0, 0], &mh0[0, 0], &mh1[0, 0], &ml[0, 0], &mldl[0, 0], n,
                                sqeta, dt, &dw[i, 0], n_steps, record_every, law, c0,
                                &mk[0, 0], &mp[0, 0], gamma, u_const, mode0, &st[i, 0, 0, 0],
                                &uo[i, 0], &dyo[i, 0], &co[i])
    return states, u_arr, dy_arr, clips_arr, fail_arr
