"""Pure numpy versions of the monomial kernels in ``_core.pyx``."""
import numpy as np


def _shifted(E, j, by):
    # exponent table with column j lowered by ``by`` (clipped at 0) and the
    # falling-factorial multiplier that goes with it
    Ej = E.copy()
    e = E[:, j]
    mult = e.astype(float)
    if by == 2:
        mult = mult * (e - 1)
    Ej[:, j] = np.maximum(e - by, 0)
    return Ej, mult


def _eval(X, E):
    return np.prod(X[:, None, :] ** E[None, :, :], axis=2)


def monomials(X, E, coef):
    X = np.asarray(X, float)
    return _eval(X, E) * coef[None, :]


def monomials_jacobian(X, E, coef):
    X = np.asarray(X, float)
    P, n = X.shape
    out = np.zeros((P, E.shape[0], n))
    for j in range(n):
        Ej, mult = _shifted(E, j, 1)
        out[:, :, j] = _eval(X, Ej) * (mult * coef)[None, :]
    return out


def monomials_laplacian(X, E, coef):
    X = np.asarray(X, float)
    out = np.zeros((X.shape[0], E.shape[0]))
    for j in range(X.shape[1]):
        Ej, mult = _shifted(E, j, 2)
        out += _eval(X, Ej) * (mult * coef)[None, :]
    return out


def poly_gradient(X, E, coef):
    """Gradient of sum_k coef_k * x**E_k at every row of X, shape (P, n)."""
    X = np.asarray(X, float)
    keep = coef != 0.0
    E, coef = E[keep], coef[keep]
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        Ej, mult = _shifted(E, j, 1)
        out[:, j] = _eval(X, Ej) @ (mult * coef)
    return out


def robust_solve(b, kappa, lam, V, rho_prime):
    """Rows u of (R + kappa/||u|| I) u = -b with R = V diag(lam) V'."""
    b = np.asarray(b, float)
    beta = b @ V
    nb = np.linalg.norm(b, axis=1)
    live = nb > kappa
    s = np.zeros(len(b))
    free = live & (kappa == 0)
    s[free] = np.linalg.norm(beta[free] / lam, axis=1)
    act = live & (kappa > 0)
    if np.any(act):
        bb, kk = beta[act] ** 2, kappa[act]
        if len(lam) == 1:
            s[act] = (np.sqrt(bb[:, 0]) - kk) / lam[0]
        else:
            sa = np.zeros(len(kk))
            for _ in range(100):
                den = lam[None, :] * sa[:, None] + kk[:, None]
                g = np.sum(bb / den ** 2, axis=1) - 1.0
                dg = -2.0 * np.sum(lam[None, :] * bb / den ** 3, axis=1)
                step = g / dg
                sa = sa - step
                if np.all(np.abs(step) <= 1e-15 * sa):
                    break
            s[act] = sa
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(live[:, None], s[:, None] / (lam[None, :] * s[:, None] + kappa[:, None]), 0.0)
        u = -(coef * beta) @ V.T
        rb = (beta / lam) @ V.T
        nr = np.linalg.norm(rb, axis=1)
        fl = np.where((nr > 0)[:, None], -rho_prime * rb / np.where(nr > 0, nr, 1.0)[:, None], 0.0)
    u = np.where(live[:, None], u, fl)
    nu = np.linalg.norm(u, axis=1)
    small = (nu > 0) & (nu < rho_prime)
    u[small] *= (rho_prime / nu[small])[:, None]
    return u
