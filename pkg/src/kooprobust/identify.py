"""EDMD identification of lifted bilinear models and error-bound estimation."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .lifting import lift, lift_jacobian

log = logging.getLogger(__name__)


class RankDeficiencyError(ValueError):
    """The stacked regressor W0 does not have full row rank."""

    def __init__(self, msg, singular_values):
        super().__init__(msg)
        self.singular_values = np.asarray(singular_values)


class InfeasibleBoundError(ValueError):
    pass


@dataclass
class DataBatch:
    Z0: np.ndarray
    U0: np.ndarray
    V0: list
    Z1: np.ndarray

    @property
    def T(self):
        return self.Z0.shape[1]

    @property
    def N(self):
        return self.Z0.shape[0]

    @property
    def m(self):
        return self.U0.shape[0]

    @property
    def W0(self):
        return np.vstack([self.Z0, self.U0] + list(self.V0))

    def singular_values(self):
        return np.linalg.svd(self.W0, compute_uv=False)

    def check_rank(self, rank_tol=1e-8):
        W0 = self.W0
        k = W0.shape[0]
        s = np.linalg.svd(W0, compute_uv=False)
        if len(s) < k or s[-1] <= rank_tol * s[0]:
            s_full = np.concatenate([s, np.zeros(k - len(s))])
            deficient = s_full[s_full <= rank_tol * s[0]]
            raise RankDeficiencyError(
                f"W0 ({k}x{W0.shape[1]}) is rank deficient; singular values below "
                f"{rank_tol:g}*s_max: {deficient.tolist()}", s_full)
        return s


def build_data_matrices(samples, dic, rank_tol=1e-8, check=True):
    """Stack Z0, U0, V0^i = u_i * Z0 and Z1 = dPsi/dx * xdot (columns are samples)."""
    X = np.atleast_2d(samples.X)
    U = np.asarray(samples.U, float).reshape(len(X), -1)
    Xd = np.atleast_2d(samples.Xdot)
    if len(X) == 0:
        raise ValueError("no samples")
    Z = lift(dic, X)
    J = lift_jacobian(dic, X)
    Z1 = np.einsum("pkn,pn->kp", J, Xd)
    V0 = [U[:, i][None, :] * Z.T for i in range(U.shape[1])]
    batch = DataBatch(Z0=Z.T.copy(), U0=U.T.copy(), V0=V0, Z1=Z1)
    if check:
        batch.check_rank(rank_tol)
    return batch


@dataclass
class BilinearModel:
    """z' = A z + B0 u + sum_i u_i B_i z."""
    A: np.ndarray
    B0: np.ndarray
    B_list: list
    dict_ref: str = ""
    n: int | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.B0 = np.asarray(self.B0, float).reshape(self.A.shape[0], -1)
        self.B_list = [np.asarray(B, float) for B in self.B_list]
        N = self.A.shape[0]
        if self.A.shape != (N, N) or any(B.shape != (N, N) for B in self.B_list):
            raise ValueError("inconsistent model dimensions")
        if len(self.B_list) not in (0, self.B0.shape[1]):
            raise ValueError("need one bilinear matrix per input (or none)")
        if not all(np.all(np.isfinite(M)) for M in [self.A, self.B0, *self.B_list]):
            raise ValueError("non-finite model entries")

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B0.shape[1]

    def B(self, z):
        """Input matrix B(z) = B0 + [B_1 z, ..., B_m z]; (N, m) or (P, N, m)."""
        Z = np.atleast_2d(np.asarray(z, float))
        out = np.repeat(self.B0[None], len(Z), axis=0)
        for i, Bi in enumerate(self.B_list):
            out[:, :, i] += Z @ Bi.T
        return out[0] if np.ndim(z) == 1 else out

    def input_gain(self, Z, Pm):
        """Rows of B(z)' p for row batches Z and Pm, shape (P, m)."""
        out = Pm @ self.B0
        for i, Bi in enumerate(self.B_list):
            out[:, i] += np.einsum("pn,pn->p", Z @ Bi.T, Pm)
        return out

    def field(self, Z, U):
        Z = np.atleast_2d(Z)
        U = np.asarray(U, float).reshape(len(Z), self.m)
        out = Z @ self.A.T + U @ self.B0.T
        for i, Bi in enumerate(self.B_list):
            out = out + U[:, i:i + 1] * (Z @ Bi.T)
        return out

    def stacked(self):
        return np.hstack([self.A, self.B0] + self.B_list)

    @classmethod
    def from_stacked(cls, M, N, m, **kw):
        M = np.asarray(M)
        Bl = [M[:, N + m + i * N: N + m + (i + 1) * N] for i in range((M.shape[1] - N - m) // N)]
        return cls(M[:, :N], M[:, N:N + m], Bl, **kw)

    def to_dict(self):
        return {"N": self.N, "m": self.m, "A": self.A.tolist(), "B0": self.B0.tolist(),
                "B": [B.tolist() for B in self.B_list], "dict_ref": self.dict_ref, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["B0"], d["B"], d.get("dict_ref", ""), d.get("n"))


def _lstsq_qr(W, Y):
    """Solve min ||Y - M W||_F via a QR factorisation of W^T."""
    Qf, Rf = np.linalg.qr(W.T, mode="reduced")
    return sla.solve_triangular(Rf, Qf.T @ Y.T, lower=False).T


def edmd_fit(batch, rank_tol=1e-8, dict_ref="", n=None):
    """Least-squares [A B0 B1 .. Bm] = Z1 W0^+ and its residual matrix."""
    s = batch.check_rank(rank_tol)
    cond = s[0] / s[-1]
    if cond > 1e8:
        warnings.warn(f"W0 is ill-conditioned (cond = {cond:.3g})", RuntimeWarning, stacklevel=2)
    W0 = batch.W0
    M = _lstsq_qr(W0, batch.Z1)
    resid = batch.Z1 - M @ W0
    model = BilinearModel.from_stacked(M, batch.N, batch.m, dict_ref=dict_ref, n=n)
    return model, resid


def fit_lti(batch):
    """Least-squares z' = A z + B0 u over [Z0; U0] only (no bilinear terms)."""
    W = np.vstack([batch.Z0, batch.U0])
    M = _lstsq_qr(W, batch.Z1)
    return M[:, :batch.N], M[:, batch.N:]


# ------------------------------------------------------ error bounds ---

@dataclass
class ErrorBound:
    c1: float
    c2: float
    L_p: float = 1.0
    lam_min_Qbar: float = 1.0
    lam_min_R: float = 1.0

    @property
    def C12(self):
        return max(2 * self.c1 * self.L_p / np.sqrt(self.lam_min_Qbar),
                   2 * self.c2 / np.sqrt(self.lam_min_R))

    def to_dict(self):
        return {"c1": self.c1, "c2": self.c2, "L_p": self.L_p, "lam_min_Qbar": self.lam_min_Qbar,
                "lam_min_R": self.lam_min_R, "C12": self.C12}

    @classmethod
    def from_dict(cls, d):
        return cls(d["c1"], d["c2"], d.get("L_p", 1.0), d.get("lam_min_Qbar", 1.0),
                   d.get("lam_min_R", 1.0))


def _upper_envelope(a, b):
    """Indices of the lines y = a + b x forming the upper envelope, ordered
    by slope, plus the breakpoints between consecutive ones."""
    order = np.lexsort((-a, b))            # slope ascending, best intercept first
    hull = []
    last_b = None
    for j in order:
        if last_b is not None and b[j] == last_b:
            continue                        # same slope, lower intercept
        last_b = b[j]
        while len(hull) >= 2:
            i, k = hull[-2], hull[-1]
            # k is useless if j overtakes i no later than k does
            if (a[j] - a[i]) * (b[k] - b[i]) >= (a[k] - a[i]) * (b[j] - b[i]):
                hull.pop()
            else:
                break
        hull.append(j)
    hull = np.array(hull, dtype=int)
    bp = (a[hull[:-1]] - a[hull[1:]]) / (b[hull[1:]] - b[hull[:-1]])
    return hull, bp


def solve_bound_lp(r, zn, un, weights=(1.0, 1.0)):
    """min w1 c1 + w2 c2  s.t.  r_j <= c1 zn_j + c2 un_j, c >= 0.

    Exact: for fixed c1 the smallest feasible c2 is the upper envelope of
    the lines (r_j - c1 zn_j)/un_j clipped at 0, so the optimum sits at c1's
    lower limit, at a vertex where two constraints meet, or where the
    envelope reaches the c2 = 0 axis.
    """
    r, zn, un = (np.asarray(v, float) for v in (r, zn, un))
    w1, w2 = map(float, weights)
    if w1 <= 0 or w2 <= 0:
        raise ValueError("LP weights must be positive")
    live = r > 0
    dead = live & (zn == 0) & (un == 0)
    if np.any(dead):
        raise InfeasibleBoundError(
            f"{int(dead.sum())} samples have z = 0, u = 0 but nonzero residual")
    r, zn, un = r[live], zn[live], un[live]
    nou = un == 0
    c1_lo = float(np.max(r[nou] / zn[nou])) if np.any(nou) else 0.0
    a, b = r[~nou] / un[~nou], -zn[~nou] / un[~nou]
    if len(a) == 0:
        return c1_lo, 0.0

    def c2_of(c1):
        return max(0.0, float(np.max(a + b * c1)))

    hull, bp = _upper_envelope(a, b)
    cand = [c1_lo] + [x for x in bp if x > c1_lo]
    neg = b[hull] < 0
    cand += [x for x in a[hull][neg] / -b[hull][neg] if x > c1_lo]
    cand = np.unique(np.array(cand))
    obj = np.array([w1 * c + w2 * c2_of(c) for c in cand])
    c1 = float(cand[int(np.argmin(obj))])
    return c1, c2_of(c1)


def residual_norms(batch, model):
    R = batch.Z1 - model.stacked() @ batch.W0
    return (np.linalg.norm(R, axis=0), np.linalg.norm(batch.Z0, axis=0),
            np.linalg.norm(batch.U0, axis=0))


def estimate_error_bounds(batch, model, dic=None, weights=None, lp_weights=(1.0, 1.0)):
    """Fit (c1, c2) to the per-sample residual norms by the 2-variable LP."""
    r, zn, un = residual_norms(batch, model)
    c1, c2 = solve_bound_lp(r, zn, un, lp_weights)
    kw = {}
    if dic is not None:
        kw["L_p"] = float(dic.L_p)
    if weights is not None:
        kw.update(lam_min_Qbar=weights.lam_min_Qbar, lam_min_R=weights.lam_min_R)
    return ErrorBound(c1, c2, **kw)


def bound_slack(batch, model, eb):
    r, zn, un = residual_norms(batch, model)
    return eb.c1 * zn + eb.c2 * un - r


# ------------------------------------------------------- noise set ---

def psd_sqrt(M, inverse=False):
    """Principal square root (or inverse root) of a symmetric PSD matrix."""
    M = np.asarray(M, float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValueError("matrix is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    if inverse:
        if w[0] <= 0:
            raise ValueError("matrix is singular")
        w = 1.0 / w
    return (V * np.sqrt(w)) @ V.T


@dataclass
class NoiseEnvelope:
    Delta: np.ndarray
    c_d: float
    zmax: float = 0.0

    @property
    def energy(self):
        return self.Delta @ self.Delta.T

    def to_dict(self):
        return {"c_d": self.c_d, "zmax": self.zmax, "Delta": np.asarray(self.Delta).tolist()}


def noise_coefficient(batch, Delta, zmax=0.0):
    """c_d = ||(Delta Delta^T)^{1/2}||_F ||(W0 W0^T)^{-1/2}||_F."""
    Delta = np.atleast_2d(np.asarray(Delta, float))
    W0 = batch.W0
    c_d = np.linalg.norm(psd_sqrt(Delta @ Delta.T), "fro") * \
        np.linalg.norm(psd_sqrt(W0 @ W0.T, inverse=True), "fro")
    return NoiseEnvelope(Delta=Delta, c_d=float(c_d), zmax=float(zmax))


def lifted_noise_delta(dic, T, amplitude):
    """Delta with D D^T <= Delta Delta^T for noise of norm <= amplitude.

    Column j of the noise in Z1 is dPsi(x_j) d_j, of norm <= L_p * amplitude,
    so D D^T <= ||D||_F^2 I <= T (L_p amplitude)^2 I.
    """
    return np.sqrt(T) * amplitude * dic.L_p * np.eye(dic.N)


def pseudo_inverse(batch):
    """W0^+ = W0^T (W0 W0^T)^{-1} through a Cholesky factor of W0 W0^T."""
    W0 = batch.W0
    G = W0 @ W0.T
    if np.linalg.cond(G) > 1e16:
        raise RankDeficiencyError("W0 W0^T is numerically singular", np.linalg.eigvalsh(G))
    cf = sla.cho_factor(G)
    return sla.cho_solve(cf, W0).T


def consistency_center(batch):
    W0 = batch.W0
    cf = sla.cho_factor(W0 @ W0.T)
    return sla.cho_solve(cf, W0 @ batch.Z1.T)


def consistency_membership(Ztilde, batch, env, tol=1e-9):
    """(Z~ - zeta)^T (W0 W0^T) (Z~ - zeta) <= Delta Delta^T ?

    ``Ztilde`` is (N + m + mN) x N, i.e. the transpose of a stacked model.
    Returns (member, slack) with slack the smallest eigenvalue of the gap.
    """
    W0 = batch.W0
    D = np.asarray(Ztilde, float) - consistency_center(batch)
    gap = env.energy - D.T @ (W0 @ W0.T) @ D
    slack = float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[0])
    scale = max(1.0, float(np.max(np.abs(env.energy))))
    return slack >= -tol * scale, slack


def fold_noise_into_bound(eb, env):
    """c1 += c_d (1 + zmax), c2 += c_d."""
    return ErrorBound(eb.c1 + env.c_d * (1.0 + env.zmax), eb.c2 + env.c_d,
                      eb.L_p, eb.lam_min_Qbar, eb.lam_min_R)
