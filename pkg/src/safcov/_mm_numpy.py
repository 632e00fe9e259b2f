"""Reference implementation of the majorize-minimize loop.

This module is the pure-numpy twin of the compiled kernel in
``_mm_kernel.pyx``; :mod:`safcov.backend` picks one of the two at import
time.  Both implement exactly the same iteration:

1. gradient of the majorized likelihood at the current loadings,
2. projected-gradient step with elementwise soft-thresholding,
3. EM update of the diagonal noise variances,
4. objective safeguard: the candidate is accepted only if the penalized
   objective does not increase (up to 1e-10); otherwise the step is
   halved, up to 30 times.  The nominal step is restored on the next
   iteration.

All per-iteration linear algebra runs through the low-rank (Woodbury)
identities, so the dominant cost is two ``N x N x r`` multiplications.
"""

import numpy as np
import scipy.linalg

from .errors import SingularInnerSystem

#: Monotonicity slack for the safeguard acceptance test.
ACCEPT_SLACK = 1e-10
#: Maximum number of step halvings per outer iteration.
MAX_HALVINGS = 30
#: Floor applied to the diagonal noise variances.
PHI_FLOOR = 1e-8


def _factor_state(S, lam, phi, mu):
    """Factorize the current iterate; returns quantities reused everywhere.

    With ``B0 = Phi^(-1) Lambda`` and ``M = I_r + Lambda' B0`` the
    inverse of ``Omega = Lambda Lambda' + Phi`` never needs to be formed:

    * ``Omega^(-1) Lambda = B0 M^(-1)``
    * ``log det Omega = sum(log phi) + log det M``
    * ``tr(S Omega^(-1)) = sum(diag(S)/phi) - tr(M^(-1) B0' S B0)``
    """
    B0 = lam / phi[:, None]
    r = lam.shape[1]
    M = np.eye(r) + lam.T @ B0
    try:
        cho = scipy.linalg.cho_factor((M + M.T) / 2.0, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularInnerSystem(f"inner {r}x{r} system singular: {exc}") from exc
    G = S @ B0                          # S Phi^(-1) Lambda
    R = B0.T @ G
    logdet = float(np.sum(np.log(phi))) + 2.0 * float(
        np.sum(np.log(np.diag(cho[0]))))
    tr_term = float(np.sum(np.diag(S) / phi)) - float(
        np.trace(scipy.linalg.cho_solve(cho, R)))
    objective = logdet + tr_term + mu * float(np.abs(lam).sum())
    C = scipy.linalg.cho_solve(cho, G.T).T      # S Omega^(-1) Lambda
    return {"B0": B0, "cho": cho, "C": C, "objective": objective}


def _gradient(phi, state):
    """Majorization gradient ``2 [Omega^(-1) - Omega^(-1) S Omega^(-1)] Lambda``."""
    B0, cho, C = state["B0"], state["cho"], state["C"]
    B = scipy.linalg.cho_solve(cho, B0.T).T     # Omega^(-1) Lambda
    omega_inv_C = C / phi[:, None] - B0 @ scipy.linalg.cho_solve(cho, B0.T @ C)
    return 2.0 * (B - omega_inv_C)


def run_mm(S, lam0, phi0, mu, step_t=0.01, tol=1e-6, max_iter=500):
    """Run the safeguarded MM loop from ``(lam0, phi0)``.

    Parameters
    ----------
    S : (N, N) ndarray
        Sample covariance (already ridged when N > T, caller's job).
    lam0 : (N, r) ndarray
        Starting loadings.
    phi0 : (N,) ndarray
        Starting diagonal noise variances, strictly positive.
    mu : float
        l1 penalty level, ``>= 0``.
    step_t : float
        Projection depth of the gradient step.
    tol : float
        Convergence threshold on the spectral norms of the parameter
        deltas.
    max_iter : int
        Outer-iteration budget.

    Returns
    -------
    lam : (N, r) ndarray
    phi : (N,) ndarray
    trace : (n_iter + 1,) ndarray
        Penalized objective per iteration, including the starting value.
    n_iter : int
    converged : bool
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    lam = np.array(lam0, dtype=np.float64, copy=True)
    phi = np.array(phi0, dtype=np.float64, copy=True)
    diag_S = np.diag(S).copy()

    state = _factor_state(S, lam, phi, mu)
    trace = [state["objective"]]
    converged = False

    for _ in range(max_iter):
        A = _gradient(phi, state)
        C = state["C"]
        step = step_t
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            shifted = lam - step * A
            lam_new = np.sign(shifted) * np.maximum(np.abs(shifted) - step * mu, 0.0)
            phi_new = np.maximum(diag_S - np.einsum("ik,ik->i", lam_new, C),
                                 PHI_FLOOR)
            state_new = _factor_state(S, lam_new, phi_new, mu)
            if state_new["objective"] <= trace[-1] + ACCEPT_SLACK:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        delta = lam_new - lam
        gram_eigs = np.linalg.eigvalsh(delta.T @ delta)
        dlam_spec = float(np.sqrt(max(gram_eigs[-1], 0.0)))
        dphi_spec = float(np.max(np.abs(phi_new - phi)))
        lam, phi, state = lam_new, phi_new, state_new
        trace.append(state["objective"])
        if dlam_spec < tol and dphi_spec < tol:
            converged = True
            break

    return lam, phi, np.asarray(trace), len(trace) - 1, converged
