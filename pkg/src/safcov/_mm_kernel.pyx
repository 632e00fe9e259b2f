# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled majorize-minimize loop.

Semantics are identical to :mod:`safcov._mm_numpy` (same safeguard
constants, same update order); only the per-iteration plumbing differs.
The N x N x r products go through BLAS (``dsymm``), the r x r systems
through LAPACK Cholesky (``dpotrf``/``dpotrs``), and everything
elementwise runs in typed C loops without temporaries.

C-order arrays are handed to the Fortran BLAS in transposed view, which
works out because the symmetric matrix is its own transpose and the
tall-skinny operands are always used through explicit index loops or
consistent transposed solves.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, log, sqrt
from scipy.linalg.cython_blas cimport dsymm
from scipy.linalg.cython_lapack cimport dpotrf, dpotrs

from .errors import SingularInnerSystem

cnp.import_array()

ACCEPT_SLACK = 1e-10
MAX_HALVINGS = 30
PHI_FLOOR = 1e-8

cdef double _ACCEPT_SLACK = 1e-10
cdef int _MAX_HALVINGS = 30
cdef double _PHI_FLOOR = 1e-8


cdef double _state(double[:, ::1] S, double[:, ::1] lam, double[::1] phi,
                   double mu, double[::1] diag_S,
                   double[:, ::1] B0, double[:, ::1] G, double[:, ::1] C,
                   double[:, ::1] Mf, double[:, ::1] W) except? -1.0e308:
    """Factorize (lam, phi); fill B0, C, Mf (Cholesky) and return the objective.

    B0 = Phi^(-1) Lambda,  Mf holds the Cholesky factor of
    M = I_r + Lambda' B0,  G is clobbered,  C = S Omega^(-1) Lambda.
    """
    cdef int N = lam.shape[0]
    cdef int r = lam.shape[1]
    cdef int i, k, l, info
    cdef double acc, logdet, tr_term, pen
    cdef double one = 1.0, zero = 0.0
    cdef char side = b'R', uplo = b'L'

    for i in range(N):
        acc = phi[i]
        for k in range(r):
            B0[i, k] = lam[i, k] / acc

    for k in range(r):
        for l in range(r):
            acc = 1.0 if k == l else 0.0
            for i in range(N):
                acc += lam[i, k] * B0[i, l]
            Mf[k, l] = acc
    # Guard against rounding asymmetry before the Cholesky factorization.
    for k in range(r):
        for l in range(k + 1, r):
            acc = 0.5 * (Mf[k, l] + Mf[l, k])
            Mf[k, l] = acc
            Mf[l, k] = acc

    dpotrf(&uplo, &r, &Mf[0, 0], &r, &info)
    if info != 0:
        raise SingularInnerSystem(f"inner {r}x{r} system singular (dpotrf info={info})")

    logdet = 0.0
    for i in range(N):
        logdet += log(phi[i])
    for k in range(r):
        logdet += 2.0 * log(Mf[k, k])

    # G = S @ B0: in Fortran view G'(r x N) = B0'(r x N) * S(N x N)
    dsymm(&side, &uplo, &r, &N, &one, &S[0, 0], &N,
          &B0[0, 0], &r, &zero, &G[0, 0], &r)

    # W := B0' G (r x r, symmetric), then solve M X = W in place
    for k in range(r):
        for l in range(r):
            acc = 0.0
            for i in range(N):
                acc += B0[i, k] * G[i, l]
            W[k, l] = acc
    dpotrs(&uplo, &r, &r, &Mf[0, 0], &r, &W[0, 0], &r, &info)

    tr_term = 0.0
    for i in range(N):
        tr_term += diag_S[i] / phi[i]
    for k in range(r):
        tr_term -= W[k, k]

    pen = 0.0
    if mu != 0.0:
        for i in range(N):
            for k in range(r):
                pen += fabs(lam[i, k])
        pen *= mu

    # C = G M^(-1): solve M C' = G' in the Fortran view, in place
    for i in range(N):
        for k in range(r):
            C[i, k] = G[i, k]
    dpotrs(&uplo, &r, &N, &Mf[0, 0], &r, &C[0, 0], &r, &info)

    return logdet + tr_term + pen


cdef void _gradient(double[::1] phi, double[:, ::1] B0, double[:, ::1] C,
                    double[:, ::1] Mf, double[:, ::1] B, double[:, ::1] W,
                    double[:, ::1] A):
    """A := 2 [Omega^(-1) - Omega^(-1) S Omega^(-1)] Lambda from the state."""
    cdef int N = B0.shape[0]
    cdef int r = B0.shape[1]
    cdef int i, k, l, info
    cdef double acc
    cdef char uplo = b'L'

    # B := B0 M^(-1)  (Omega^(-1) Lambda)
    for i in range(N):
        for k in range(r):
            B[i, k] = B0[i, k]
    dpotrs(&uplo, &r, &N, &Mf[0, 0], &r, &B[0, 0], &r, &info)

    # W is filled with (B0' C)' so that its Fortran view is B0' C; the
    # in-place solve then leaves W holding [M^(-1) (B0' C)]' in C order.
    for k in range(r):
        for l in range(r):
            acc = 0.0
            for i in range(N):
                acc += C[i, k] * B0[i, l]
            W[k, l] = acc
    dpotrs(&uplo, &r, &r, &Mf[0, 0], &r, &W[0, 0], &r, &info)

    # Omega^(-1) S Omega^(-1) Lambda = C / phi - B0 W'
    for i in range(N):
        for k in range(r):
            acc = C[i, k] / phi[i]
            for l in range(r):
                acc -= B0[i, l] * W[k, l]
            A[i, k] = 2.0 * (B[i, k] - acc)


def run_mm(S, lam0, phi0, double mu, double step_t=0.01, double tol=1e-6,
           int max_iter=500):
    """Compiled twin of :func:`safcov._mm_numpy.run_mm`; same contract."""
    cdef cnp.ndarray[double, ndim=2] S_arr = np.ascontiguousarray(S, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lam = np.array(lam0, dtype=np.float64, copy=True, order="C")
    cdef cnp.ndarray[double, ndim=1] phi = np.array(phi0, dtype=np.float64, copy=True, order="C")
    cdef int N = lam.shape[0]
    cdef int r = lam.shape[1]
    cdef cnp.ndarray[double, ndim=1] diag_S = np.ascontiguousarray(np.diag(S_arr))

    cur = {name: np.empty((N, r)) for name in ("B0", "G", "C")}
    cur["Mf"] = np.empty((r, r))
    new = {name: np.empty((N, r)) for name in ("B0", "G", "C")}
    new["Mf"] = np.empty((r, r))
    cdef cnp.ndarray[double, ndim=2] W = np.empty((r, r))
    cdef cnp.ndarray[double, ndim=2] B = np.empty((N, r))
    cdef cnp.ndarray[double, ndim=2] A = np.empty((N, r))
    cdef cnp.ndarray[double, ndim=2] lam_new = np.empty((N, r))
    cdef cnp.ndarray[double, ndim=1] phi_new = np.empty(N)

    cdef double obj, obj_prev, obj_new, step, shifted, cut, acc, dphi
    cdef int i, k, halvings
    cdef bint accepted, converged = False
    cdef double[:, ::1] C_view, lam_view, lam_new_view
    cdef double[::1] phi_view, phi_new_view

    obj = _state(S_arr, lam, phi, mu, diag_S,
                 cur["B0"], cur["G"], cur["C"], cur["Mf"], W)
    trace = [obj]
    obj_prev = obj

    for _ in range(max_iter):
        _gradient(phi, cur["B0"], cur["C"], cur["Mf"], B, W, A)
        C_view = cur["C"]
        lam_view = lam
        phi_view = phi
        lam_new_view = lam_new
        phi_new_view = phi_new
        step = step_t
        accepted = False
        for halvings in range(_MAX_HALVINGS + 1):
            cut = step * mu
            for i in range(N):
                acc = diag_S[i]
                for k in range(r):
                    shifted = lam_view[i, k] - step * A[i, k]
                    if shifted > cut:
                        shifted -= cut
                    elif shifted < -cut:
                        shifted += cut
                    else:
                        shifted = 0.0
                    lam_new_view[i, k] = shifted
                    acc -= shifted * C_view[i, k]
                phi_new_view[i] = acc if acc > _PHI_FLOOR else _PHI_FLOOR
            obj_new = _state(S_arr, lam_new, phi_new, mu, diag_S,
                             new["B0"], new["G"], new["C"], new["Mf"], W)
            if obj_new <= obj_prev + _ACCEPT_SLACK:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break

        delta = np.asarray(lam_new) - np.asarray(lam)
        gram_eigs = np.linalg.eigvalsh(delta.T @ delta)
        dlam = sqrt(max(gram_eigs[r - 1], 0.0))
        dphi = 0.0
        for i in range(N):
            acc = fabs(phi_new_view[i] - phi_view[i])
            if acc > dphi:
                dphi = acc
        lam, lam_new = lam_new, lam
        phi, phi_new = phi_new, phi
        cur, new = new, cur
        trace.append(obj_new)
        obj_prev = obj_new
        if dlam < tol and dphi < tol:
            converged = True
            break

    return (np.asarray(lam), np.asarray(phi), np.asarray(trace),
            len(trace) - 1, converged)
