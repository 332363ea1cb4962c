"""Self-checks run by ``dipole-crb validate``: gradients, oracle equalities,
inequality chains and asymptotes.  Each check reports its measured margin."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cpl as _cpl
from . import em_field as _em
from . import fim as _fim

PARAM_NAMES = _fim.PARAMS
COMPONENTS = ("e_x", "e_y", "e_z")


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag}  {self.name}: measured {self.measured:.3e}, limit {self.limit:.3e}{extra}"


def random_source(rng, wavelength=(0.05, 1.0)) -> _em.DipoleSource:
    pos = (rng.uniform(1, 10), rng.uniform(-3, 3), rng.uniform(-3, 3))
    t = rng.normal(size=3)
    return _em.DipoleSource.oriented(pos, t, wavelength=rng.uniform(*wavelength))


def _field_unnormalized(source, y, z, p):
    # analytic field with t not renormalized, so d/dt_b is the plain partial derivative
    xb, yb, zb = -p[3], y - p[4], z - p[5]
    r = math.sqrt(xb * xb + yb * yb + zb * zb)
    rh = np.array([xb, yb, zb]) / r
    t = p[:3]
    return -1j * source.chi * np.exp(-1j * source.k * r) / r * (t - (rh @ t) * rh)


def jacobian_fd_error(source, y, z):
    """Worst relative error of the closed-form Jacobian against central differences.

    Each entry's error is scaled by the largest magnitude in its column.
    Returns (error, component index, parameter index).
    """
    J = _fim.field_jacobian(source, np.array(y), np.array(z))
    p = np.array(source.orientation + source.position)
    worst = (0.0, 0, 0)
    for m in range(6):
        h = 1e-6 * max(1.0, abs(p[m]))
        pp, pm = p.copy(), p.copy()
        pp[m] += h
        pm[m] -= h
        fd = (_field_unnormalized(source, y, z, pp) - _field_unnormalized(source, y, z, pm)) / (2 * h)
        col = np.max(np.abs(J[:, m]))
        err = np.abs(fd - J[:, m]) / col
        a = int(np.argmax(err))
        if err[a] > worst[0]:
            worst = (float(err[a]), a, m)
    return worst


def check_gradient(n=100, seed=12345, limit=1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = (0.0, 0, 0)
    for _ in range(n):
        s = random_source(rng)
        y, z = rng.uniform(-3, 3, size=2)
        e = jacobian_fd_error(s, y, z)
        if e[0] > worst[0]:
            worst = e
    err, a, m = worst
    return CheckResult("jacobian vs central differences", err <= limit, err, limit,
                       f"worst entry d{COMPONENTS[a]}/d{PARAM_NAMES[m]}, {n} configurations")


def check_cpl_oracle(sides=(0.6, 3.0, 6.0), x_c=6.0, wavelength=0.01, snr=10.0,
                     rel_tol=1e-9, limit=1e-6) -> CheckResult:
    worst, where = 0.0, ""
    for L in sides:
        s = _em.DipoleSource((x_c, 0, 0), (0, 0, 1), wavelength=wavelength)
        F = _fim.assemble_fim(s, _em.ObservationSurface(L), _fim.sigma2_from_snr(s.chi, snr),
                              rel_tol=rel_tol)
        G = _cpl.fim_cpl(_cpl.CplParams.from_geometry(L, wavelength, x_c, snr)).matrix
        nz = G != 0
        err = float(np.max(np.abs(F.matrix[nz] / G[nz] - 1)))
        if err > worst:
            worst, where = err, f"L={L}"
    return CheckResult("CPL closed forms vs general quadrature", worst <= limit, worst, limit, where)


def check_mil_and_ordering(n=50, seed=2024, rel_tol=1e-9, limit=1e-8) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_res, worst_order = 0.0, -np.inf
    for _ in range(n):
        s = random_source(rng, wavelength=(0.01, 0.2))
        L = rng.uniform(0.5, 6)
        F = _fim.assemble_fim(s, _em.ObservationSurface(L), 1.0, rel_tol=rel_tol)
        worst_res = max(worst_res, _fim.mil_residual(F))
        ck, cu = _fim.crb_known(F), _fim.crb_unknown(F)
        worst_order = max(worst_order, float(np.max((ck - cu) / ck)))
    return [
        CheckResult("inversion-lemma residual", worst_res <= limit, worst_res, limit,
                    f"{n} random geometries"),
        CheckResult("CRB_u >= CRB (max relative shortfall)", worst_order <= 1e-10, worst_order,
                    1e-10, f"{n} random geometries"),
    ]


def check_integral_chains(rhos=(0.5, 1.0, 5.0, 50.0, 1e3), rel_tol=1e-12) -> list[CheckResult]:
    out = []
    margin_i3 = np.inf
    margin_ft = np.inf
    margin_i1 = np.inf
    margin_schur = np.inf
    for rho in rhos:
        I = _cpl.script_integrals(rho, rel_tol=rel_tol)
        lb, ub = _cpl.i3_bounds(rho)
        margin_i3 = min(margin_i3, (I.I3 - lb) / I.I3, (ub - I.I3) / I.I3)
        lb11, ub11, lb22, ub22 = _cpl.ft_element_bounds(rho)
        margin_ft = min(margin_ft, (I.I7 - lb11) / I.I7, (ub11 - I.I7) / I.I7,
                        (I.I8 - lb22) / I.I8, (ub22 - I.I8) / I.I8)
        margin_i1 = min(margin_i1, (I.I1 - I.I2) / I.I1)
        red = I.I2 - I.I10 ** 2 / I.I8
        margin_schur = min(margin_schur, red / I.I2, (I.I2 - red) / I.I2)
    out.append(CheckResult("I3 disk bounds bracket quadrature (min relative margin)",
                           margin_i3 >= 0, margin_i3, 0.0))
    out.append(CheckResult("F_tt disk bounds bracket I7, I8 (min relative margin)",
                           margin_ft >= 0, margin_ft, 0.0))
    out.append(CheckResult("I1 > I2 (min relative gap)", margin_i1 > 0, margin_i1, 0.0))
    out.append(CheckResult("0 <= I2 - I10^2/I8 < I2 (min relative margin)",
                           margin_schur >= 0, margin_schur, 0.0))
    gap = min((2 * _cpl.script_integrals(r).I3 - _cpl.script_integrals(r).I4)
              / _cpl.script_integrals(r).I3 for r in (0.5, 1.0, 5.0))
    out.append(CheckResult("I4 < 2 I3 (min relative gap)", gap > 0, gap, 0.0))
    i1q = max(abs(_cpl.script_integrals(r).I1 - _cpl.script_integrals(r).I1_quadrature)
              / _cpl.script_integrals(r).I1 for r in (0.5, 1.0, 2.0))
    out.append(CheckResult("I1 closed form vs integrand quadrature", i1q <= 1e-8, i1q, 1e-8))
    return out


def check_asymptotes(rho=1e3, limit=5e-3) -> CheckResult:
    I = _cpl.script_integrals(rho)
    err = max(abs(I.I1 / (3 * math.pi / 4) - 1), abs(I.I6 / (9 * math.pi / 8) - 1),
              abs(I.I9 / (math.pi / 2) - 1))
    return CheckResult("I1, I6, I9 limits at rho=1e3", err <= limit, err, limit)


def check_dyadic_decay(limit=2e-4) -> CheckResult:
    # t perpendicular to r_hat: the deviation from the far field is ~1/kr
    lam = 0.01
    k = 2 * math.pi / lam
    r = 1e4 / k
    s = _em.DipoleSource((r, 0, 0), (0, 0, 1), wavelength=lam)
    e_far = _em.analytic_field(s, 0.0, 0.0)
    e_dy = _em.dyadic_green_field(s, 0.0, 0.0)
    dev = float(np.linalg.norm(e_dy - e_far) / np.linalg.norm(e_far))
    return CheckResult("dyadic vs far field at kr=1e4", dev <= limit, dev, limit)


def check_cpl_symmetry(limit=1e-8) -> CheckResult:
    s = _em.DipoleSource((6, 0, 0), (0, 0, 1), wavelength=0.01)
    F = _fim.assemble_fim(s, _em.ObservationSurface(3), 1.0).matrix
    worst = 0.0
    for blk in (F[:3, :3], F[3:, 3:]):
        off = blk - np.diag(np.diag(blk))
        worst = max(worst, float(np.max(np.abs(off)) / np.max(np.abs(np.diag(blk)))))
    return CheckResult("CPL F_tt, F_cc off-diagonals", worst <= limit, worst, limit)


def run_all(rel_tol=1e-9) -> list[CheckResult]:
    results = [check_gradient(), check_cpl_oracle(rel_tol=rel_tol)]
    results += check_mil_and_ordering(rel_tol=rel_tol)
    results += check_integral_chains(rel_tol=min(rel_tol, 1e-12))
    results += [check_asymptotes(), check_dyadic_decay(), check_cpl_symmetry()]
    return results
