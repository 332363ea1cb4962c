"""Fisher information for p = (t_x, t_y, t_z, x_C, y_C, z_C) and the derived bounds.

The information matrix is assembled by adaptive quadrature of

    F_mn = (2 / sigma^2) Re ∬ sum_a  de_a/dp_m  conj(de_a/dp_n)  dy dz

over the square surface, using closed-form field derivatives.  Bounds for
known orientation come from the position block alone; the unknown-orientation
bounds use its Schur complement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .em_field import DipoleSource, ObservationSurface, separation
from .errors import SingularInformation
from .quadrature import DEFAULT_MAX_CELLS, DEFAULT_REL_TOL, Rect2, integrate2d

__all__ = [
    "PARAMS", "FisherMatrix", "CrbReport", "field_jacobian", "assemble_fim",
    "crb_known", "crb_unknown", "mil_residual", "delta_rcrb", "crb_report",
    "snr_from_sigma2", "sigma2_from_snr", "CONDITION_CAP",
]

PARAMS = ("t_x", "t_y", "t_z", "x_C", "y_C", "z_C")
CONDITION_CAP = 1e12
_IU = np.triu_indices(6)


def snr_from_sigma2(chi: float, sigma2: float) -> float:
    """SNR = 2 |chi|^2 / sigma^2, the convention used by the closed forms."""
    return 2 * abs(chi) ** 2 / sigma2


def sigma2_from_snr(chi: float, snr: float) -> float:
    return 2 * abs(chi) ** 2 / snr


def field_jacobian(source: DipoleSource, y, z):
    """Derivatives of (e_x, e_y, e_z) with respect to the six parameters.

    Returns a complex array of shape (..., 3, 6); ``J[..., a, m]`` is
    de_a / dp_m with p ordered as :data:`PARAMS`.
    """
    xb, yb, zb, r = separation(source, y, z)
    tx, ty, tz = source.orientation
    k, chi = source.k, source.chi
    ik = 1j * k
    ph = np.exp(-1j * k * r)
    pre = -1j * chi * ph / r**4
    x2, y2, z2 = xb * xb, yb * yb, zb * zb
    xyz = xb * yb * zb

    J = np.empty(r.shape + (3, 6), dtype=complex)

    # orientation block: -i chi e^{-ikr}/r (delta_ab - r_a r_b)
    rv = (xb / r, yb / r, zb / r)
    base = -1j * chi * ph / r
    for a in range(3):
        for b in range(3):
            J[..., a, b] = base * ((a == b) - rv[a] * rv[b])

    ax = tx * (y2 + z2) - xb * (ty * yb + tz * zb)
    ay = ty * (x2 + z2) - yb * (tx * xb + tz * zb)
    az = tz * (x2 + y2) - zb * (tx * xb + ty * yb)

    J[..., 0, 3] = pre * (ik * xb * ax
                          + (3 * tx * xb * (y2 + z2) - (ty * yb + tz * zb) * (2 * x2 - y2 - z2)) / r)
    J[..., 0, 4] = pre * (ik * yb * ax
                          - (tx * yb * (2 * x2 - y2 - z2) - ty * xb * (x2 - 2 * y2 + z2)
                             + 3 * tz * xyz) / r)
    J[..., 0, 5] = pre * (ik * zb * ax
                          - (tx * zb * (2 * x2 - y2 - z2) + 3 * ty * xyz
                             - tz * xb * (x2 + y2 - 2 * z2)) / r)

    J[..., 1, 3] = pre * (ik * xb * ay
                          - (ty * xb * (2 * y2 - x2 - z2) - tx * yb * (y2 - 2 * x2 + z2)
                             + 3 * tz * xyz) / r)
    J[..., 1, 4] = pre * (ik * yb * ay
                          + (3 * ty * yb * (x2 + z2) - (tx * xb + tz * zb) * (2 * y2 - x2 - z2)) / r)
    J[..., 1, 5] = pre * (ik * zb * ay
                          - (ty * zb * (2 * y2 - x2 - z2) + 3 * tx * xyz
                             - tz * yb * (x2 + y2 - 2 * z2)) / r)

    J[..., 2, 3] = pre * (ik * xb * az
                          - (tz * xb * (2 * z2 - x2 - y2) + 3 * ty * xyz
                             - tx * zb * (z2 + y2 - 2 * x2)) / r)
    J[..., 2, 4] = pre * (ik * yb * az
                          - (tz * yb * (2 * z2 - x2 - y2) - ty * zb * (z2 - 2 * y2 + x2)
                             + 3 * tx * xyz) / r)
    J[..., 2, 5] = pre * (ik * zb * az
                          + (3 * tz * zb * (x2 + y2) - (tx * xb + ty * yb) * (2 * z2 - y2 - x2)) / r)
    return J


@dataclass
class FisherMatrix:
    """6x6 information matrix over :data:`PARAMS`, plus quadrature diagnostics."""
    matrix: np.ndarray
    sigma2: float | None = None
    abs_error: np.ndarray | None = None
    cells_used: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (6, 6):
            raise ValueError("Fisher matrix must be 6x6")

    @property
    def F_tt(self):
        return self.matrix[:3, :3]

    @property
    def F_tc(self):
        return self.matrix[:3, 3:]

    @property
    def F_ct(self):
        return self.matrix[3:, :3]

    @property
    def F_cc(self):
        return self.matrix[3:, 3:]

    def scaled(self, c: float) -> "FisherMatrix":
        err = None if self.abs_error is None else self.abs_error * c
        s2 = None if self.sigma2 is None else self.sigma2 / c
        return FisherMatrix(self.matrix * c, s2, err, self.cells_used)


@dataclass
class CrbReport:
    crb_known: np.ndarray
    crb_unknown: np.ndarray
    delta_rcrb: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def rcrb_known(self):
        return np.sqrt(self.crb_known)

    @property
    def rcrb_unknown(self):
        return np.sqrt(self.crb_unknown)


def _jacobian_gram_integrand(source: DipoleSource, rows=slice(None)):
    def f(y, z):
        J = field_jacobian(source, y, z)[:, rows, :]
        G = np.einsum("nam,nab->nmb", J, J.conj()).real
        return G[:, _IU[0], _IU[1]]
    return f


def assemble_fim(source: DipoleSource, surface: ObservationSurface, sigma2: float,
                 rel_tol: float = DEFAULT_REL_TOL, max_cells: int = DEFAULT_MAX_CELLS,
                 components=(0, 1, 2)) -> FisherMatrix:
    """Information matrix from the field components listed in ``components``.

    ``components=(2,)`` keeps only e_z, as a z-polarized receiver would.
    Zero-valued entries are given an absolute floor of
    ``rel_tol * sqrt(F_mm F_nn)`` taken from a coarse first pass.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    rows = list(components)
    f = _jacobian_gram_integrand(source, rows)
    dom = Rect2.square(surface.half)

    # diagonal entries are strictly positive, so a relative-only pass is safe
    def f_diag(y, z):
        J = field_jacobian(source, y, z)[:, rows, :]
        return np.einsum("nam,nam->nm", J, J.conj()).real
    coarse = integrate2d(f_diag, dom, rel_tol=1e-3, abs_tol=1e-300, max_cells=max_cells)
    diag = np.abs(np.asarray(coarse.value))
    floor = rel_tol * np.sqrt(np.outer(diag, diag))[_IU]
    floor = np.maximum(floor, 1e-300)

    res = integrate2d(f, dom, rel_tol=rel_tol, abs_tol=floor, max_cells=max_cells)
    M = np.zeros((6, 6))
    E = np.zeros((6, 6))
    M[_IU] = res.value
    E[_IU] = res.abs_error_estimate
    M = M + np.triu(M, 1).T
    E = E + np.triu(E, 1).T
    scale = 2.0 / sigma2
    return FisherMatrix(M * scale, sigma2, E * scale, res.cells_used)


def _as_matrix(F):
    return F.matrix if isinstance(F, FisherMatrix) else np.asarray(F, dtype=float)


def _equilibrated_inverse(A, what: str, cap: float = CONDITION_CAP):
    """Inverse of a symmetric positive block via Jacobi scaling; checks conditioning."""
    A = np.asarray(A, dtype=float)
    d = np.diag(A)
    if np.any(d <= 0):
        raise SingularInformation(f"{what} has a non-positive diagonal entry", np.inf)
    s = 1.0 / np.sqrt(d)
    B = A * np.outer(s, s)
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > cap:
        raise SingularInformation(f"{what} is near-singular (condition {cond:.3e})", cond)
    Binv = np.linalg.solve(B, np.eye(len(d)))
    return Binv * np.outer(s, s), cond


def _schur(M):
    """F_cc - F_tc^T F_tt^{-1} F_tc and the inverse of F_tt."""
    ftt, ftc, fcc = M[:3, :3], M[:3, 3:], M[3:, 3:]
    ftt_inv, cond_tt = _equilibrated_inverse(ftt, "F_tt")
    S = fcc - ftc.T @ ftt_inv @ ftc
    return 0.5 * (S + S.T), cond_tt


def crb_known(F) -> np.ndarray:
    """diag(F_cc^{-1}): bounds on (x_C, y_C, z_C) when the orientation is known."""
    M = _as_matrix(F)
    inv, _ = _equilibrated_inverse(M[3:, 3:], "F_cc")
    return np.diag(inv).copy()


def crb_unknown(F) -> np.ndarray:
    """Bounds when the orientation is a nuisance parameter (Schur-complement path)."""
    M = _as_matrix(F)
    S, _ = _schur(M)
    inv, _ = _equilibrated_inverse(S, "Schur complement of F_tt")
    return np.diag(inv).copy()


def mil_residual(F) -> float:
    """Largest relative mismatch between the two sides of the inversion-lemma identity.

    Left: diag((F_cc - F_tc^T F_tt^-1 F_tc)^-1).  Right: diag(F_cc^-1) plus
    diag(F_cc^-1 F_tc^T (F_tt - F_tc F_cc^-1 F_tc^T)^-1 F_tc F_cc^-1).
    """
    M = _as_matrix(F)
    ftt, ftc, fcc = M[:3, :3], M[:3, 3:], M[3:, 3:]
    lhs = crb_unknown(M)
    fcc_inv, _ = _equilibrated_inverse(fcc, "F_cc")
    T = ftt - ftc @ fcc_inv @ ftc.T
    T_inv, _ = _equilibrated_inverse(0.5 * (T + T.T), "Schur complement of F_cc")
    rhs = np.diag(fcc_inv) + np.diag(fcc_inv @ ftc.T @ T_inv @ ftc @ fcc_inv)
    return float(np.max(np.abs(lhs - rhs) / np.abs(lhs)))


def delta_rcrb(F, crb_k=None, crb_u=None) -> np.ndarray:
    """sqrt((CRB_u - CRB) / CRB) per coordinate; round-off negatives clip to 0."""
    ck = crb_known(F) if crb_k is None else np.asarray(crb_k)
    cu = crb_unknown(F) if crb_u is None else np.asarray(crb_u)
    return np.sqrt(np.clip((cu - ck) / ck, 0.0, None))


def _cond_sym(A):
    d = np.sqrt(np.abs(np.diag(A)))
    return float(np.linalg.cond(A / np.outer(d, d)))


def crb_report(F: FisherMatrix) -> CrbReport:
    M = _as_matrix(F)
    ck = crb_known(M)
    cu = crb_unknown(M)
    S, cond_tt = _schur(M)
    diag = {
        "cond_F_cc": _cond_sym(M[3:, 3:]),
        "cond_F_tt": cond_tt,
        "cond_schur": _cond_sym(S),
        "mil_residual": mil_residual(M),
    }
    if isinstance(F, FisherMatrix) and F.abs_error is not None:
        diag["max_rel_quad_error"] = float(
            np.max(F.abs_error / np.sqrt(np.outer(np.diag(M), np.diag(M)))))
        diag["cells_used"] = F.cells_used
    return CrbReport(ck, cu, delta_rcrb(M, ck, cu), diag)
