"""Continuous-time algebraic Riccati equation by Newton-Kleinman."""
import numpy as np
from scipy.linalg import solve_continuous_lyapunov


class StabilizationError(RuntimeError):
    pass


def is_hurwitz(A, margin=0.0):
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def pole_shift_gain(A, B):
    """Stabilising gain by pole shifting (Bass).

    With beta > 0 large enough that -(A + beta I) is Hurwitz, solve
    (A + beta I) Z + Z (A + beta I)' = 2 B B'. Then K = B' Z^-1 gives
    (A - BK) Z + Z (A - BK)' = -2 beta Z, so A - BK is Hurwitz whenever
    Z > 0, i.e. when (A, B) is controllable.
    """
    n = A.shape[0]
    beta = np.linalg.norm(A, 2) + 1.0
    Ab = A + beta * np.eye(n)
    Z = solve_continuous_lyapunov(-Ab, -2.0 * B @ B.T)
    Z = 0.5 * (Z + Z.T)
    try:
        K = np.linalg.solve(Z, B).T
    except np.linalg.LinAlgError as exc:
        raise StabilizationError("pole shift failed: (A, B) looks uncontrollable") from exc
    if not is_hurwitz(A - B @ K):
        raise StabilizationError("pole shift did not produce a stabilising gain")
    return K


def care_newton_kleinman(A, B, Q, R, K0=None, tol=1e-12, max_iter=100):
    """Solve A'P + PA - P B R^-1 B'P + Q = 0 for the stabilising P.

    Each step solves the closed-loop Lyapunov equation for the current gain.
    Starts from K0, else 0 if A is Hurwitz, else a pole-shift gain.
    Returns (P, K, iterations).
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, float)) for M in (A, B, Q, R))
    B = B.reshape(A.shape[0], -1)
    Rinv = np.linalg.inv(R)
    if K0 is None:
        K0 = np.zeros((B.shape[1], A.shape[0])) if is_hurwitz(A) else pole_shift_gain(A, B)
    K = np.atleast_2d(K0)
    if not is_hurwitz(A - B @ K):
        raise StabilizationError("initial gain is not stabilising")
    P = None
    for it in range(1, max_iter + 1):
        Acl = A - B @ K
        Pn = solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        Pn = 0.5 * (Pn + Pn.T)
        K = Rinv @ B.T @ Pn
        if P is not None and np.linalg.norm(Pn - P) <= tol * max(1.0, np.linalg.norm(Pn)):
            return Pn, K, it
        P = Pn
    raise RuntimeError(f"Newton-Kleinman did not converge in {max_iter} iterations")
