"""Closed forms for a source on the central perpendicular line (CPL).

With the source at (x_C, 0, 0) and a vertical orientation, the information
matrix depends on the geometry only through rho = L / x_C and ten
dimensionless integrals over the square [-rho/2, rho/2]^2 in the scaled
variables u = y / x_C, v = z / x_C.  Three of them (I1, I6, I9) have
closed forms; the rest are integrated numerically and cached.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .fim import CrbReport, FisherMatrix, crb_report
from .quadrature import DEFAULT_MAX_CELLS, Rect2, integrate2d

__all__ = [
    "CplParams", "ScriptIntegrals", "script_integrals", "i1_closed", "i6_closed",
    "i9_closed", "i3_bounds", "fim_blocks_cpl", "fim_cpl", "crb_cpl", "crb_highfreq",
    "crb_cpl_numeric", "crb_asymptotic", "ft_element_bounds", "HighFrequencyWarning",
]


class HighFrequencyWarning(UserWarning):
    """x_C / lambda is too small for the high-frequency approximation."""


@dataclass(frozen=True)
class CplParams:
    rho: float
    k: float
    x_C: float
    snr: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {v}")

    @classmethod
    def from_geometry(cls, L: float, wavelength: float, x_C: float, snr: float) -> "CplParams":
        return cls(L / x_C, 2 * math.pi / wavelength, x_C, snr)

    @property
    def wavelength(self) -> float:
        return 2 * math.pi / self.k

    @property
    def L(self) -> float:
        return self.rho * self.x_C


@dataclass(frozen=True)
class ScriptIntegrals:
    I1: float
    I2: float
    I3: float
    I4: float
    I5: float
    I6: float
    I7: float
    I8: float
    I9: float
    I10: float
    I1_quadrature: float = math.nan   # cross-check of the closed form
    max_abs_error: float = 0.0

    def as_tuple(self):
        return tuple(getattr(self, f"I{n}") for n in range(1, 11))


def _atan_term(rho):
    # arctan(rho / sqrt(4 + rho^2)) saturates at pi/2, no overflow for large rho
    q = math.sqrt(4 + rho * rho)
    return q, math.atan(rho / q)


def i1_closed(rho: float) -> float:
    q, a = _atan_term(rho)
    r2 = rho * rho
    return rho / (4 + r2) * ((14 + 3 * r2) / q * a + rho / (2 + r2))


def i6_closed(rho: float) -> float:
    q, a = _atan_term(rho)
    r2 = rho * rho
    return rho / (2 * (4 + r2) ** 2) * (
        (9 * r2 * r2 + 76 * r2 + 136) / q * a + rho * (3 * r2 * r2 + 4 * r2 - 8) / (2 + r2) ** 2)


def i9_closed(rho: float) -> float:
    q, a = _atan_term(rho)
    r2 = rho * rho
    return 2 * rho / (4 + r2) * ((2 + r2) / q * a - rho / (2 + r2))


def _integrands(u, v):
    u2, v2 = u * u, v * v
    d = 1 + u2 + v2
    d2 = d * d
    d3 = d2 * d
    d4 = d3 * d
    return np.stack([
        (1 + u2 * v2 + v2 * v2) / d4,                        # I2
        u2 * (1 + u2) / d3,                                  # I3
        (u2 * (1 + u2) + v2 * (1 + v2) - u2 * v2) / d4,      # I4
        v2 * (1 + u2) / d3,                                  # I5
        (u2 + v2) / d2,                                      # I7
        (1 + u2) / d2,                                       # I8
        (1 + 2 * u2) / d4,                                   # I10
        (1 + v2) / d3,                                       # I1, integrand form
    ], axis=-1)


@lru_cache(maxsize=256)
def _script_integrals_cached(rho: float, rel_tol: float, max_cells: int) -> ScriptIntegrals:
    # every integrand is even in u and v: integrate one quadrant, times 4
    dom = Rect2(0.0, rho / 2, 0.0, rho / 2)
    res = integrate2d(_integrands, dom, rel_tol=rel_tol, abs_tol=1e-300, max_cells=max_cells)
    i2, i3, i4, i5, i7, i8, i10, i1q = (4 * float(x) for x in res.value)
    return ScriptIntegrals(
        I1=i1_closed(rho), I2=i2, I3=i3, I4=i4, I5=i5, I6=i6_closed(rho),
        I7=i7, I8=i8, I9=i9_closed(rho), I10=i10, I1_quadrature=i1q,
        max_abs_error=4 * float(np.max(res.abs_error_estimate)))


def script_integrals(rho: float, rel_tol: float = 1e-12,
                     max_cells: int = DEFAULT_MAX_CELLS) -> ScriptIntegrals:
    """The ten CPL integrals at ``rho``; results are memoized on (rho, tolerances)."""
    if not (np.isfinite(rho) and rho > 0):
        raise ValueError(f"rho must be finite and > 0, got {rho}")
    return _script_integrals_cached(float(rho), float(rel_tol), int(max_cells))


def i3_bounds(rho: float) -> tuple[float, float]:
    """Integrals of the I3 integrand over the inscribed and circumscribed disks.

    The disk radii are a = rho/2 and a*sqrt(2); the square has half-side rho/2.
    """
    def disk(b):
        # 3pi/8 ln(1+b) - pi/16 b(5b+6)/(1+b)^2, arranged to avoid overflow
        return 3 * math.pi / 8 * math.log1p(b) - math.pi / 16 * b / (1 + b) * (5 + 1 / (1 + b))
    a2 = (rho / 2) ** 2
    return disk(a2), disk(2 * a2)


def ft_element_bounds(rho: float) -> tuple[float, float, float, float]:
    """Disk bounds (lb11, ub11, lb22, ub22) on the dimensionless I7 and I8.

    Multiply by SNR to bound [F_tt]_11 and [F_tt]_22.  Disk radii use the
    half-side a = rho/2, the convention under which they bracket the square.
    """
    a = rho / 2
    a2 = a * a
    lb11 = math.pi * (math.log1p(a2) - a2 / (1 + a2))
    ub11 = math.pi * (math.log1p(2 * a2) - 2 * a2 / (1 + 2 * a2))
    s = math.sqrt(1 + a2)
    base = 4 * a / s * math.atan(a / s)
    return lb11, ub11, base + lb11 / 2, base + ub11 / 2


def fim_blocks_cpl(p: CplParams, integrals: ScriptIntegrals | None = None):
    """Nonzero blocks of the CPL information matrix.

    Returns (F_cc diagonal, F_tt diagonal, F_tc) with F_tc a full 3x3 array
    holding the two nonzero entries [0, 2] and [2, 0].
    """
    I = integrals or script_integrals(p.rho)
    k2, x2 = p.k ** 2, p.x_C ** 2
    fcc = p.snr * np.array([k2 * I.I1 + I.I2 / x2,
                            k2 * I.I3 + I.I4 / x2,
                            k2 * I.I5 + I.I6 / x2])
    ftt = p.snr * np.array([I.I7, I.I8, I.I8])
    ftc = np.zeros((3, 3))
    ftc[0, 2] = p.snr * I.I9 / p.x_C
    ftc[2, 0] = -p.snr * I.I10 / p.x_C
    return fcc, ftt, ftc


def fim_cpl(p: CplParams, integrals: ScriptIntegrals | None = None) -> FisherMatrix:
    """Full 6x6 matrix assembled from :func:`fim_blocks_cpl`."""
    fcc, ftt, ftc = fim_blocks_cpl(p, integrals)
    M = np.zeros((6, 6))
    M[:3, :3] = np.diag(ftt)
    M[3:, 3:] = np.diag(fcc)
    M[:3, 3:] = ftc
    M[3:, :3] = ftc.T
    return FisherMatrix(M)


def crb_cpl(p: CplParams, integrals: ScriptIntegrals | None = None) -> CrbReport:
    """Bounds from the rational closed forms (known and unknown orientation)."""
    I = integrals or script_integrals(p.rho)
    k2, x2 = p.k ** 2, p.x_C ** 2
    known = 1.0 / (p.snr * np.array([k2 * I.I1 + I.I2 / x2,
                                     k2 * I.I3 + I.I4 / x2,
                                     k2 * I.I5 + I.I6 / x2]))
    unknown = 1.0 / (p.snr * np.array([k2 * I.I1 + (I.I2 - I.I10 ** 2 / I.I8) / x2,
                                       k2 * I.I3 + I.I4 / x2,
                                       k2 * I.I5 + (I.I6 - I.I9 ** 2 / I.I7) / x2]))
    delta = np.sqrt(np.clip((unknown - known) / known, 0.0, None))
    diag = {"rho": p.rho, "I1_closed_minus_quadrature": I.I1 - I.I1_quadrature,
            "max_abs_quad_error": I.max_abs_error}
    return CrbReport(known, unknown, delta, diag)


def crb_cpl_numeric(p: CplParams, integrals: ScriptIntegrals | None = None) -> CrbReport:
    """Same bounds, obtained by inverting the assembled CPL matrix."""
    return crb_report(fim_cpl(p, integrals))


def crb_highfreq(p: CplParams, integrals: ScriptIntegrals | None = None,
                 min_ratio: float = 100.0) -> tuple[float, float]:
    """High-frequency approximations of CRB(x_C) and CRB(y_C), valid for x_C >> lambda."""
    lam = p.wavelength
    if p.x_C / lam < min_ratio:
        warnings.warn(f"x_C/lambda = {p.x_C / lam:.3g} < {min_ratio:g}; the high-frequency "
                      "approximation may be inaccurate", HighFrequencyWarning, stacklevel=2)
    I = integrals or script_integrals(p.rho)
    c = lam ** 2 / (4 * math.pi ** 2 * p.snr)
    return c / I.I1, c / I.I3


def crb_asymptotic(wavelength: float, snr: float, rho: float) -> tuple[float, float, float]:
    """Large-rho limits of (CRB(x_C), CRB(y_C), CRB(z_C))."""
    base = wavelength ** 2 / (math.pi ** 3 * snr)
    lr = math.log(rho)
    return base / 3, base / (3 * lr), base / lr
