"""Adaptive 2-D quadrature on axis-aligned rectangles.

Each cell is integrated with a tensor-product 15-point Gauss-Kronrod rule.
The embedded 7-point Gauss rule gives a per-axis error estimate, and the
worst cells are bisected along the axis with the larger estimate until the
global error meets ``max(abs_tol, rel_tol * |value|)``.

Integrands are vectorized: ``f(u, v)`` receives two 1-D arrays of equal
length and returns an array whose leading axis matches them.  Trailing axes
are integrated component-wise, which lets one pass compute every entry of
a Gram matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AccuracyNotReached, NonFinite

__all__ = ["Rect2", "QuadResult", "integrate2d", "integrate2d_complex",
           "DEFAULT_REL_TOL", "DEFAULT_ABS_TOL", "DEFAULT_MAX_CELLS"]

DEFAULT_REL_TOL = 1e-9
DEFAULT_ABS_TOL = 1e-12
DEFAULT_MAX_CELLS = 1_000_000

# QUADPACK qk15 abscissae (positive half, descending) and weights.
_XGK_HALF = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK_HALF = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG_HALF = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

KRONROD_NODES = np.concatenate([-_XGK_HALF[:-1], _XGK_HALF[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK_HALF[:-1], _WGK_HALF[::-1]])
# Gauss nodes sit at the odd positions of the 15-point Kronrod grid.
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1::2] = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])


@dataclass(frozen=True)
class Rect2:
    u_min: float
    u_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        vals = (self.u_min, self.u_max, self.v_min, self.v_max)
        if not all(np.isfinite(vals)):
            raise ValueError(f"Rect2 bounds must be finite, got {vals}")
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError(f"Rect2 needs u_min < u_max and v_min < v_max, got {vals}")

    @classmethod
    def square(cls, half_side: float, center=(0.0, 0.0)) -> "Rect2":
        cu, cv = center
        return cls(cu - half_side, cu + half_side, cv - half_side, cv + half_side)

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)


@dataclass
class QuadResult:
    """Integral estimate; ``value`` and ``abs_error_estimate`` share a shape."""
    value: np.ndarray | float | complex
    abs_error_estimate: np.ndarray | float
    cells_used: int

    def __iter__(self):
        # allows ``value, err, n = integrate2d(...)``
        return iter((self.value, self.abs_error_estimate, self.cells_used))


def _eval_cells(f, ulo, uhi, vlo, vhi):
    """Apply the 15x15 rule to a batch of cells.

    Returns (kronrod estimate, error along u, error along v), each with shape
    (ncells, *component_shape).
    """
    n = ulo.shape[0]
    uc, hu = 0.5 * (ulo + uhi), 0.5 * (uhi - ulo)
    vc, hv = 0.5 * (vlo + vhi), 0.5 * (vhi - vlo)
    U = uc[:, None, None] + hu[:, None, None] * KRONROD_NODES[None, :, None]
    V = vc[:, None, None] + hv[:, None, None] * KRONROD_NODES[None, None, :]
    U, V = np.broadcast_arrays(U, V)
    vals = np.asarray(f(U.ravel(), V.ravel()))
    if vals.shape[0] != U.size:
        raise ValueError(
            f"integrand returned leading dimension {vals.shape[0]}, expected {U.size}")
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand returned a non-finite value")
    comp_shape = vals.shape[1:]
    vals = vals.reshape((n, 15, 15) + comp_shape)
    jac = (hu * hv).reshape((n,) + (1,) * len(comp_shape))

    # contract v first with both rules, then u
    kv = np.tensordot(vals, KRONROD_WEIGHTS, axes=([2], [0]))
    gv = np.tensordot(vals, GAUSS_WEIGHTS, axes=([2], [0]))
    kk = np.tensordot(kv, KRONROD_WEIGHTS, axes=([1], [0])) * jac
    gk = np.tensordot(kv, GAUSS_WEIGHTS, axes=([1], [0])) * jac   # gauss in u
    kg = np.tensordot(gv, KRONROD_WEIGHTS, axes=([1], [0])) * jac  # gauss in v
    return kk, np.abs(kk - gk), np.abs(kk - kg)


def integrate2d(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    domain: Rect2,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float | np.ndarray = DEFAULT_ABS_TOL,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> QuadResult:
    """Integrate ``f`` over ``domain`` to ``max(abs_tol, rel_tol*|value|)``.

    ``abs_tol`` may be an array broadcastable to the integrand's component
    shape, which is how callers give exactly-zero components a meaningful
    floor.  Raises :class:`AccuracyNotReached` (with the partial result
    attached) once ``max_cells`` cells are in use and the target is unmet.
    """
    if not (rel_tol > 0 and np.all(np.asarray(abs_tol) > 0)):
        raise ValueError("tolerances must be positive")
    if max_cells < 1:
        raise ValueError("max_cells must be >= 1")

    ulo = np.array([domain.u_min]); uhi = np.array([domain.u_max])
    vlo = np.array([domain.v_min]); vhi = np.array([domain.v_max])
    val, eu, ev = _eval_cells(f, ulo, uhi, vlo, vhi)
    comp_axes = tuple(range(1, val.ndim))
    total_area = domain.area

    while True:
        err = eu + ev
        total = val.sum(axis=0)
        total_err = err.sum(axis=0)
        target = np.maximum(abs_tol, rel_tol * np.abs(total))
        if np.all(total_err <= target):
            break
        ncells = ulo.shape[0]
        if ncells >= max_cells:
            partial = QuadResult(_scalarize(total), _scalarize(total_err), ncells)
            raise AccuracyNotReached(
                f"error estimate {np.max(total_err):.3e} above target after {ncells} cells",
                partial=partial)

        area = (uhi - ulo) * (vhi - vlo)
        share = (area / total_area).reshape((-1,) + (1,) * len(comp_axes))
        excess = err / (target * share)
        score = excess.max(axis=comp_axes) if comp_axes else excess
        bad = score > 1.0
        budget = max_cells - ncells
        if bad.sum() > budget:
            # keep the worst cells; stable sort keeps ties in index order
            order = np.argsort(-score, kind="stable")[:budget]
            bad = np.zeros_like(bad)
            bad[order] = True

        # larger weighted error decides the split axis
        scale = target if comp_axes else 1.0
        eu_n = (eu / scale).max(axis=comp_axes) if comp_axes else eu / scale
        ev_n = (ev / scale).max(axis=comp_axes) if comp_axes else ev / scale
        split_u = eu_n[bad] >= ev_n[bad]

        bu0, bu1, bv0, bv1 = ulo[bad], uhi[bad], vlo[bad], vhi[bad]
        um = np.where(split_u, 0.5 * (bu0 + bu1), bu1)
        vm = np.where(split_u, bv1, 0.5 * (bv0 + bv1))
        # first child: lower half; second child: upper half
        c_ulo = np.concatenate([bu0, np.where(split_u, um, bu0)])
        c_uhi = np.concatenate([um, bu1])
        c_vlo = np.concatenate([bv0, np.where(split_u, bv0, vm)])
        c_vhi = np.concatenate([vm, bv1])
        cval, ceu, cev = _eval_cells(f, c_ulo, c_uhi, c_vlo, c_vhi)

        keep = ~bad
        ulo = np.concatenate([ulo[keep], c_ulo]); uhi = np.concatenate([uhi[keep], c_uhi])
        vlo = np.concatenate([vlo[keep], c_vlo]); vhi = np.concatenate([vhi[keep], c_vhi])
        val = np.concatenate([val[keep], cval])
        eu = np.concatenate([eu[keep], ceu]); ev = np.concatenate([ev[keep], cev])

    return QuadResult(_scalarize(total), _scalarize(total_err), int(ulo.shape[0]))


def integrate2d_complex(f, domain: Rect2, rel_tol=DEFAULT_REL_TOL, abs_tol=DEFAULT_ABS_TOL,
                        max_cells=DEFAULT_MAX_CELLS) -> QuadResult:
    """Complex integrand: real and imaginary parts are integrated as separate components."""
    def split(u, v):
        z = np.asarray(f(u, v))
        return np.stack([z.real, z.imag], axis=-1)

    tol = np.asarray(abs_tol, dtype=float)
    if tol.ndim:
        tol = tol[..., None]
    res = integrate2d(split, domain, rel_tol, tol, max_cells)
    val = np.asarray(res.value)
    err = np.asarray(res.abs_error_estimate)
    value = val[..., 0] + 1j * val[..., 1]
    return QuadResult(_scalarize(value), _scalarize(np.hypot(err[..., 0], err[..., 1])),
                      res.cells_used)


def _scalarize(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x
