"""Discrete receive grid, noisy voltages, ML position estimators and a Monte-Carlo harness.

Short z-oriented receive dipoles of length l_r sit at (y_m, z_n) = (m, n) * lambda/2
for 1 <= |m|, |n| <= N_r.  Each records V_mn = l_r e_z(r_mn) + nu_mn with circular
complex Gaussian noise of total variance sigma2_nu = 2 sigma^2 l_r / lambda.

Three signal models are fitted by least squares (the Gaussian log-likelihood):

* ``analytic``   l_r e_z from the dipole far field (orientation known or estimated)
* ``hu-scalar``  l_r beta G(r) sqrt(x_C / r), orientation ignored
* ``planar``     l_r beta G(r_C) exp(-i k r_C_hat . d), orientation ignored

beta = I_in l_s, so all three agree with the analytic model at the surface centre
for a vertical source.

The likelihood oscillates with period ~lambda along the range direction.  The
search therefore works on a phase-free envelope first (coarse grid and simplex),
then scans the full likelihood along the radial ray at sub-wavelength steps and
polishes the best fringes with a bounded Nelder-Mead.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .em_field import DipoleSource, ObservationSurface, scalar_green
from .errors import EmptyGrid, NoConvergence
from .fim import CrbReport, FisherMatrix, assemble_fim, crb_report, field_jacobian

__all__ = [
    "EstimatorKind", "ReceiverGrid", "VoltageField", "MleConfig", "Scenario", "TrialResult",
    "RmseSummary", "build_grid", "synthesize", "model_signal", "log_likelihood",
    "sphere_constrained_lsq", "estimate", "run_trial", "monte_carlo", "crb_z_component",
    "canonical_orientation",
]


class EstimatorKind(str, enum.Enum):
    ANALYTIC = "analytic"
    HU_SCALAR = "hu-scalar"
    PLANAR = "planar"


@dataclass(frozen=True)
class ReceiverGrid:
    y: np.ndarray          # flattened element centres, m
    z: np.ndarray
    l_r: float
    n_r: int
    wavelength: float
    side: float

    @property
    def size(self) -> int:
        return self.y.size

    @property
    def centers(self) -> np.ndarray:
        return np.stack([self.y, self.z], axis=-1)

    def as_matrix(self, values) -> np.ndarray:
        """Reshape a flat per-element array to (2N_r, 2N_r), rows indexed by m."""
        n = 2 * self.n_r
        return np.asarray(values).reshape(n, n)


def build_grid(L: float, wavelength: float, l_r: float | None = None,
               max_lr_fraction: float = 0.1) -> ReceiverGrid:
    """Square grid with spacing lambda/2 and N_r = floor(L / lambda) elements per half-axis."""
    if not (L > 0 and wavelength > 0):
        raise ValueError("L and wavelength must be positive")
    l_r = wavelength / 10 if l_r is None else float(l_r)
    if not 0 < l_r <= max_lr_fraction * wavelength * (1 + 1e-12):
        raise ValueError(f"l_r must be in (0, {max_lr_fraction} * lambda], got {l_r}")
    n_r = int(math.floor(L / wavelength + 1e-9))
    if n_r < 1:
        raise EmptyGrid(f"L={L} is smaller than lambda={wavelength}: no receive elements")
    idx = np.concatenate([np.arange(-n_r, 0), np.arange(1, n_r + 1)]) * (wavelength / 2)
    Y, Z = np.meshgrid(idx, idx, indexing="ij")
    return ReceiverGrid(Y.ravel(), Z.ravel(), l_r, n_r, float(wavelength), float(L))


@dataclass(frozen=True)
class VoltageField:
    V: np.ndarray            # flat, same ordering as the grid
    sigma2_nu: float
    grid: ReceiverGrid

    def __post_init__(self):
        if self.V.shape != (self.grid.size,):
            raise ValueError("voltage vector does not match the grid")
        if self.sigma2_nu < 0:
            raise ValueError("sigma2_nu must be >= 0")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def synthesize(source: DipoleSource, grid: ReceiverGrid, sigma2: float, rng_seed=None) -> VoltageField:
    """Noisy voltages; the real and imaginary noise parts each carry sigma2_nu / 2."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    sigma2_nu = 2 * sigma2 * grid.l_r / grid.wavelength
    h = _analytic_columns(source, grid, np.asarray(source.position)[None, :])[0] @ np.asarray(
        source.orientation)
    if sigma2_nu > 0:
        noise = _rng(rng_seed).standard_normal((grid.size, 2)) @ np.array([1.0, 1j])
        h = h + math.sqrt(sigma2_nu / 2) * noise
    return VoltageField(h, sigma2_nu, grid)


# --- signal models, batched over trial positions U of shape (B, 3) ---

def _analytic_columns(source: DipoleSource, grid: ReceiverGrid, U):
    """A[b, n, j] = l_r * d e_z / d t_j at element n for trial position U[b]."""
    xb = -U[:, 0:1]
    yb = grid.y[None, :] - U[:, 1:2]
    zb = grid.z[None, :] - U[:, 2:3]
    r = np.sqrt(xb * xb + yb * yb + zb * zb)
    amp = (-1j * source.chi * grid.l_r) * np.exp(-1j * source.k * r) / r
    rz = zb / r
    A = np.empty(r.shape + (3,), dtype=complex)
    A[..., 0] = -amp * rz * (xb / r)
    A[..., 1] = -amp * rz * (yb / r)
    A[..., 2] = amp * (1 - rz * rz)
    return A


def _hu_scalar(source, grid, U):
    xb = -U[:, 0:1]
    yb = grid.y[None, :] - U[:, 1:2]
    zb = grid.z[None, :] - U[:, 2:3]
    r = np.sqrt(xb * xb + yb * yb + zb * zb)
    g = scalar_green(r, source.k, source.impedance)
    return grid.l_r * source.moment * g * np.sqrt(U[:, 0:1] / r)


def _planar(source, grid, U):
    # r_C points from the source to the surface centre O
    rc = np.linalg.norm(U, axis=1, keepdims=True)
    d_dot = -(U[:, 1:2] * grid.y[None, :] + U[:, 2:3] * grid.z[None, :]) / rc
    g = scalar_green(rc, source.k, source.impedance)
    return grid.l_r * source.moment * g * np.exp(-1j * source.k * d_dot)


def model_signal(kind, u, grid: ReceiverGrid, source: DipoleSource, t=None):
    """Noiseless model voltages at trial position(s) ``u`` (shape (3,) or (B, 3))."""
    kind = EstimatorKind(kind)
    U = np.atleast_2d(np.asarray(u, dtype=float))
    if kind is EstimatorKind.ANALYTIC:
        t = np.asarray(source.orientation if t is None else t, dtype=float)
        out = _analytic_columns(source, grid, U) @ t
    elif kind is EstimatorKind.HU_SCALAR:
        out = _hu_scalar(source, grid, U)
    else:
        out = _planar(source, grid, U)
    return out[0] if np.ndim(u) == 1 else out


def log_likelihood(kind, trial_t, trial_u, V, grid: ReceiverGrid, source: DipoleSource) -> float:
    """-sum |V - h(trial)|^2.  The scalar models ignore ``trial_t``."""
    if trial_u[0] <= 0:
        raise ValueError("trial x_C must be > 0")
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.ANALYTIC:
        t = np.asarray(trial_t, dtype=float)
        if abs(np.linalg.norm(t) - 1) > 1e-9:
            raise ValueError("trial orientation must be a unit vector")
    V = V.V if isinstance(V, VoltageField) else np.asarray(V)
    h = model_signal(kind, np.asarray(trial_u, dtype=float), grid, source, trial_t)
    d = V - h
    return -float(np.vdot(d, d).real)


def sphere_constrained_lsq(Q, b):
    """argmin_t t'Qt - 2b't subject to |t| = 1, for symmetric Q (global minimizer)."""
    w, E = np.linalg.eigh(Q)
    c = E.T @ b
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return E[:, 0].copy()
    scale = max(abs(w[-1]), nb, 1e-300)

    def g(mu):
        return float(np.sum((c / (w - mu)) ** 2) - 1.0)

    hi = w[0] - 1e-14 * scale
    if g(hi) >= 0:
        mu = brentq(g, w[0] - nb - 1e-12 * scale, hi, xtol=1e-15 * scale, rtol=1e-15, maxiter=200)
        t = E @ (c / (w - mu))
        return t / np.linalg.norm(t)
    # hard case: b has (almost) no weight on the lowest eigenvector
    mu = w[0]
    part = np.zeros(3)
    mask = np.abs(w - mu) > 1e-12 * scale
    part[mask] = c[mask] / (w[mask] - mu)
    t = E @ part
    rest = max(0.0, 1.0 - float(t @ t))
    t = t + math.sqrt(rest) * E[:, 0]
    return t / np.linalg.norm(t)


def canonical_orientation(t) -> np.ndarray:
    """Sign convention t_x >= 0, then t_z >= 0 when t_x = 0."""
    t = np.asarray(t, dtype=float)
    if t[0] < 0 or (t[0] == 0 and t[2] < 0):
        return -t
    return t.copy()


# --- estimator ---

@dataclass
class MleConfig:
    estimator: EstimatorKind = EstimatorKind.ANALYTIC
    orientation_known: bool = True
    half_width: float = 1.0                  # search box: truth +- half_width per axis
    trials: int = 200
    seed: int = 0
    coarse: tuple[int, int, int] = (9, 9, 9)
    starts: int = 4                          # envelope refinements from the best grid points
    fringe_halfwidth: float = 2.0            # radial scan, in wavelengths
    fringe_step: float = 1 / 16              # radial scan step, in wavelengths
    fringe_starts: int | None = None         # None: refine every local minimum of the scan
    max_hops: int = 8                        # +-lambda moves tried after polishing
    xatol: float = 1e-9
    fatol_rel: float = 1e-8
    maxiter: int = 2000
    workers: int = 1
    chunk: int = 64

    def __post_init__(self):
        self.estimator = EstimatorKind(self.estimator)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.half_width <= 0:
            raise ValueError("half_width must be > 0")
        if self.estimator is not EstimatorKind.ANALYTIC and not self.orientation_known:
            # the scalar models carry no orientation; the flag is meaningless there
            self.orientation_known = True
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass
class TrialResult:
    u_hat: np.ndarray
    t_hat: np.ndarray | None
    loglik: float
    converged: bool
    nfev: int
    message: str = ""
    loglik_truth: float = math.nan

    @property
    def t_hat_canonical(self):
        return None if self.t_hat is None else canonical_orientation(self.t_hat)


class _Objective:
    """Full and phase-free costs for one data vector, batched over positions."""

    def __init__(self, kind, known, V, grid, source, chunk):
        self.kind, self.known, self.V = kind, known, V
        self.grid, self.source, self.chunk = grid, source, chunk
        self.t0 = np.asarray(source.orientation)
        self.v2 = float(np.vdot(V, V).real)
        self.nfev = 0

    def _columns(self, U):
        if self.kind is EstimatorKind.ANALYTIC:
            A = _analytic_columns(self.source, self.grid, U)
            if self.known:
                return (A @ self.t0)[..., None]
            return A
        if self.kind is EstimatorKind.HU_SCALAR:
            return _hu_scalar(self.source, self.grid, U)[..., None]
        return _planar(self.source, self.grid, U)[..., None]

    def _batched(self, fn, U):
        U = np.atleast_2d(U)
        out = np.empty(U.shape[0])
        for i in range(0, U.shape[0], self.chunk):
            out[i:i + self.chunk] = fn(U[i:i + self.chunk])
        self.nfev += U.shape[0]
        return out

    def envelope(self, U):
        """-|P_A V|^2: least-squares fit with a free complex amplitude per column."""
        def fn(Ub):
            A = self._columns(Ub)
            AhV = np.einsum("bnj,n->bj", A.conj(), self.V)
            if A.shape[-1] == 1:
                AhA = np.einsum("bnj,bnj->bj", A.conj(), A).real
                return -(np.abs(AhV[:, 0]) ** 2 / AhA[:, 0])
            G = np.einsum("bnj,bnk->bjk", A.conj(), A)
            x = np.linalg.solve(G, AhV[..., None])[..., 0]
            return -np.einsum("bj,bj->b", AhV.conj(), x).real
        return self._batched(fn, U)

    def full(self, U, return_t=False):
        """sum |V - h|^2 with the orientation profiled out when it is unknown."""
        ts = []

        def fn(Ub):
            A = self._columns(Ub)
            if A.shape[-1] == 1:
                h = A[..., 0]
                d = self.V[None, :] - h
                return np.einsum("bn,bn->b", d.conj(), d).real
            Q = np.einsum("bnj,bnk->bjk", A.conj(), A).real
            bvec = np.einsum("bnj,n->bj", A.conj(), self.V).real
            out = np.empty(Ub.shape[0])
            for i in range(Ub.shape[0]):
                t = sphere_constrained_lsq(Q[i], bvec[i])
                ts.append(t)
                out[i] = self.v2 + t @ Q[i] @ t - 2 * bvec[i] @ t
            return out
        val = self._batched(fn, U)
        if return_t:
            return val, (np.array(ts) if ts else None)
        return val


def _box(center, half_width):
    c = np.asarray(center, dtype=float)
    lo = c - half_width
    lo[0] = max(lo[0], 1e-6 * max(1.0, c[0]))
    return lo, c + half_width


def _simplex(x0, step, lo, hi):
    pts = [np.clip(x0, lo, hi)]
    for i in range(3):
        p = pts[0].copy()
        p[i] = p[i] + step if p[i] + step <= hi[i] else p[i] - step
        pts.append(p)
    return np.array(pts)


def estimate(kind, V, grid: ReceiverGrid, source: DipoleSource, config: MleConfig,
             center=None) -> TrialResult:
    """Maximize the log-likelihood over the search box around ``center``.

    ``source`` supplies the known constants (chi, lambda, Z0, I_in l_s) and,
    for known-orientation analytic fits, the orientation.  ``center``
    defaults to ``source.position``.
    """
    kind = EstimatorKind(kind)
    V = V.V if isinstance(V, VoltageField) else np.asarray(V, dtype=complex)
    known = config.orientation_known or kind is not EstimatorKind.ANALYTIC
    obj = _Objective(kind, known, V, grid, source, config.chunk)
    lo, hi = _box(source.position if center is None else center, config.half_width)
    bounds = list(zip(lo, hi))
    lam = grid.wavelength

    # 1) phase-free envelope on a coarse grid
    axes = [np.linspace(lo[i], hi[i], n) for i, n in enumerate(config.coarse)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    env = obj.envelope(G)
    order = np.argsort(env, kind="stable")[:config.starts]
    cell = np.array([(hi[i] - lo[i]) / max(n - 1, 1) for i, n in enumerate(config.coarse)])

    env_tol = 1e-9 * max(abs(float(env[order[0]])), 1e-300)
    env_best = None
    for j in order:
        res = minimize(lambda p: obj.envelope(p)[0], G[j], method="Nelder-Mead", bounds=bounds,
                       options=dict(initial_simplex=_simplex(G[j], 0.5 * cell.min(), lo, hi),
                                    xatol=lam / 64, fatol=env_tol, maxiter=config.maxiter))
        if env_best is None or res.fun < env_best.fun:
            env_best = res

    # 2) full likelihood along the radial ray through the envelope optimum
    u_e = env_best.x
    ray = u_e / np.linalg.norm(u_e)
    s = np.arange(-config.fringe_halfwidth, config.fringe_halfwidth + 1e-12,
                  config.fringe_step) * lam
    P = np.clip(u_e[None, :] + s[:, None] * ray[None, :], lo, hi)
    cost = obj.full(P)
    is_min = np.r_[True, cost[1:] <= cost[:-1]] & np.r_[cost[:-1] <= cost[1:], True]
    cand = np.flatnonzero(is_min)
    cand = cand[np.argsort(cost[cand], kind="stable")]
    if config.fringe_starts is not None:
        cand = cand[:config.fringe_starts]

    # 3) polish every fringe found by the scan, then hop to neighbours while it helps
    scale = max(obj.v2, 1e-300)

    def polish(x0):
        return minimize(lambda p: obj.full(p)[0], x0, method="Nelder-Mead", bounds=bounds,
                        options=dict(initial_simplex=_simplex(x0, lam / 8, lo, hi),
                                     xatol=config.xatol, fatol=config.fatol_rel * scale,
                                     maxiter=config.maxiter))

    best = None
    for j in cand:
        res = polish(P[j])
        if best is None or res.fun < best.fun:
            best = res
    for _ in range(config.max_hops):
        hops = [polish(np.clip(best.x + sgn * lam * ray, lo, hi)) for sgn in (-1.0, 1.0)]
        better = min(hops, key=lambda r: r.fun)
        if not better.fun < best.fun:
            break
        best = better

    val, ts = obj.full(best.x, return_t=True)
    t_hat = ts[0] if ts is not None else (
        np.asarray(source.orientation, dtype=float) if kind is EstimatorKind.ANALYTIC else None)
    return TrialResult(u_hat=np.asarray(best.x), t_hat=t_hat, loglik=-float(val[0]),
                       converged=bool(best.success), nfev=obj.nfev, message=str(best.message))


# --- Monte Carlo ---

@dataclass(frozen=True)
class Scenario:
    source: DipoleSource
    L: float
    sigma2: float
    l_r: float | None = None

    @classmethod
    def from_snr(cls, source: DipoleSource, L: float, snr: float, l_r=None) -> "Scenario":
        """``snr`` uses the 2|chi|^2 / sigma^2 convention."""
        return cls(source, L, 2 * source.chi ** 2 / snr, l_r)

    def grid(self) -> ReceiverGrid:
        return build_grid(self.L, self.source.wavelength, self.l_r)


@dataclass
class RmseSummary:
    rmse: np.ndarray            # per coordinate, m
    rmse_band: np.ndarray       # (2, 3): approximate 2-sigma Monte-Carlo band on the RMSE
    trials: int
    failures: int
    seed: int
    estimates: np.ndarray       # (trials, 3); NaN rows for failures
    orientations: np.ndarray | None = None
    search_misses: int = 0      # trials whose optimum scored below the truth
    extra: dict = field(default_factory=dict)


def run_trial(config: MleConfig, scenario: Scenario, index: int) -> TrialResult:
    """One Monte-Carlo trial; its noise stream is seeded with ``seed ^ index``."""
    grid = scenario.grid()
    vf = synthesize(scenario.source, grid, scenario.sigma2, np.random.default_rng(config.seed ^ index))
    res = estimate(config.estimator, vf, grid, scenario.source, config)
    truth_t = scenario.source.orientation if config.estimator is EstimatorKind.ANALYTIC else None
    res.loglik_truth = log_likelihood(config.estimator, truth_t, scenario.source.position,
                                      vf, grid, scenario.source)
    return res


def _trial_star(args):
    return run_trial(*args)


def monte_carlo(config: MleConfig, scenario: Scenario) -> RmseSummary:
    """RMSE per coordinate over ``config.trials`` seeded trials; result independent of workers."""
    jobs = [(config, scenario, i) for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            results = list(ex.map(_trial_star, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))
    else:
        results = [_trial_star(j) for j in jobs]

    truth = np.asarray(scenario.source.position)
    est = np.full((config.trials, 3), np.nan)
    ori = np.full((config.trials, 3), np.nan) if config.estimator is EstimatorKind.ANALYTIC else None
    failures = misses = 0
    for i, r in enumerate(results):
        if not r.converged:
            failures += 1
            continue
        est[i] = r.u_hat
        if ori is not None and r.t_hat is not None:
            ori[i] = r.t_hat
        # relative slack: the optimizer stops at xatol, not exactly on the peak
        if r.loglik < r.loglik_truth - 1e-9 * max(1.0, abs(r.loglik_truth)):
            misses += 1
    ok = ~np.isnan(est[:, 0])
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise NoConvergence(f"all {config.trials} trials failed to converge")
    sq = (est[ok] - truth) ** 2
    mse = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_ok) if n_ok > 1 else np.zeros(3)
    band = np.sqrt(np.stack([np.clip(mse - 2 * se, 0, None), mse + 2 * se]))
    return RmseSummary(np.sqrt(mse), band, config.trials, failures, config.seed, est, ori, misses)


# --- bounds from z-polarized observations ---

def crb_z_component(source: DipoleSource, grid_or_surface, sigma2: float, **quad) -> CrbReport:
    """Bounds when only e_z is observed.

    With an :class:`ObservationSurface` the information is the surface integral
    of the e_z term (noise sigma2).  With a :class:`ReceiverGrid` it is the sum
    over elements of the l_r e_z derivatives with noise sigma2_nu = 2 sigma2 l_r / lambda.
    """
    if isinstance(grid_or_surface, ObservationSurface):
        return crb_report(assemble_fim(source, grid_or_surface, sigma2, components=(2,), **quad))
    grid = grid_or_surface
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    sigma2_nu = 2 * sigma2 * grid.l_r / grid.wavelength
    J = grid.l_r * field_jacobian(source, grid.y, grid.z)[:, 2, :]
    M = (2.0 / sigma2_nu) * np.einsum("nm,nk->mk", J, J.conj()).real
    return crb_report(FisherMatrix(0.5 * (M + M.T), sigma2_nu))
