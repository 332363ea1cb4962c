"""Electric-field models for a source in front of the plane x = 0.

Frame: the observation surface is the square |y|, |z| <= L/2 in the plane
x = 0; the source centroid C sits at (x_C, y_C, z_C) with x_C > 0.  The
vector from C to a surface point P = (0, y, z) is

    r = (-x_C, y - y_C, z - z_C)

All field functions are vectorized over the observation point and return
complex arrays of shape ``(..., 3)`` holding (e_x, e_y, e_z) in V/m.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateGeometry

__all__ = [
    "Z0_FREE_SPACE", "DipoleSource", "ObservationSurface", "SphericalCoords",
    "separation", "spherical_from_point", "spherical_basis", "chi", "scalar_green",
    "analytic_field", "general_farfield", "dipole_radiation_vector",
    "dyadic_green_field", "hu_scalar_signal", "planar_signal", "fresnel_signal",
]

Z0_FREE_SPACE = 376.730313668  # ohm


def _unit(v) -> tuple[float, float, float]:
    v = np.asarray(v, dtype=float)
    return tuple(float(c) for c in v / np.linalg.norm(v))


@dataclass(frozen=True)
class DipoleSource:
    """Hertzian dipole: centroid, unit orientation and the constants of chi."""
    position: tuple[float, float, float]
    orientation: tuple[float, float, float] = (0.0, 0.0, 1.0)
    wavelength: float = 0.01
    current: float = 1.0
    length: float | None = None      # defaults to wavelength / 4
    impedance: float = Z0_FREE_SPACE

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "orientation", tuple(float(c) for c in self.orientation))
        if self.length is None:
            object.__setattr__(self, "length", self.wavelength / 4)
        if len(self.position) != 3 or len(self.orientation) != 3:
            raise ValueError("position and orientation must be 3-vectors")
        if not np.all(np.isfinite(self.position + self.orientation)):
            raise ValueError("source parameters must be finite")
        if abs(np.linalg.norm(self.orientation) - 1.0) > 1e-12:
            raise ValueError(f"orientation must be a unit vector, got {self.orientation}")
        if self.wavelength <= 0 or self.length <= 0:
            raise ValueError("wavelength and dipole length must be positive")
        if self.position[0] <= 0:
            raise DegenerateGeometry(
                f"x_C must be > 0 (source in front of the surface), got {self.position[0]}")

    @classmethod
    def oriented(cls, position, orientation, **kw) -> "DipoleSource":
        """Like the constructor, but normalizes ``orientation`` first."""
        return cls(position, _unit(orientation), **kw)

    def moved(self, position=None, orientation=None) -> "DipoleSource":
        kw = {}
        if position is not None:
            kw["position"] = tuple(position)
        if orientation is not None:
            kw["orientation"] = _unit(orientation)
        return replace(self, **kw)

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def chi(self) -> float:
        return chi(self)

    @property
    def moment(self) -> float:
        """|R| = I_in * l_s, the radiation-vector magnitude."""
        return self.current * self.length


@dataclass(frozen=True)
class ObservationSurface:
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"surface side must be > 0, got {self.side}")

    @property
    def half(self) -> float:
        return 0.5 * self.side


class SphericalCoords(NamedTuple):
    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray


def separation(source: DipoleSource, y, z):
    """Components (x̄, ȳ, z̄) of the vector from C to (0, y, z), and its length."""
    x_c, y_c, z_c = source.position
    yb = np.asarray(y, dtype=float) - y_c + 0.0
    zb = np.asarray(z, dtype=float) - z_c + 0.0
    xb = np.full(np.broadcast(yb, zb).shape, -x_c)
    r = np.sqrt(xb * xb + yb * yb + zb * zb)
    if np.any(r == 0):
        raise DegenerateGeometry("observation point coincides with the source")
    return xb, yb, zb, r


def spherical_from_point(source: DipoleSource, y, z) -> SphericalCoords:
    """Spherical coordinates of (0, y, z) in the frame centred at C.

    phi uses ``atan2(ȳ, x̄)`` so that the radial unit vector built from
    (theta, phi) reproduces (r_x, r_y, r_z) = (x̄, ȳ, z̄)/r.
    """
    xb, yb, zb, r = separation(source, y, z)
    theta = np.arccos(np.clip(zb / r, -1.0, 1.0))
    phi = np.arctan2(yb, xb)
    return SphericalCoords(r, theta, phi)


def spherical_basis(theta, phi):
    """Unit vectors (r̂, θ̂, φ̂), each of shape (..., 3)."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    r_hat = np.stack([st * cp, st * sp, ct], axis=-1)
    t_hat = np.stack([ct * cp, ct * sp, -st], axis=-1)
    p_hat = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return r_hat, t_hat, p_hat


def chi(source: DipoleSource) -> float:
    """chi = Z0 * I_in * l_s / (2 lambda), in volts."""
    if source.wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return source.impedance * source.current * source.length / (2 * source.wavelength)


def scalar_green(r, k: float, impedance: float = Z0_FREE_SPACE):
    """G(r) = -i k Z0 exp(-i k r) / (4 pi r)."""
    r = np.asarray(r, dtype=float)
    return -1j * k * impedance * np.exp(-1j * k * r) / (4 * np.pi * r)


def analytic_field(source: DipoleSource, y, z):
    """Far-field of the dipole: -i chi e^{-ikr}/r [t - (r̂·t) r̂]."""
    xb, yb, zb, r = separation(source, y, z)
    rhat = np.stack([xb, yb, zb], axis=-1) / r[..., None]
    t = np.asarray(source.orientation)
    proj = rhat @ t
    amp = -1j * source.chi * np.exp(-1j * source.k * r) / r
    return amp[..., None] * (t - proj[..., None] * rhat)


def dipole_radiation_vector(source: DipoleSource):
    """(R_theta, R_phi) callables for R = I_in l_s t̂."""
    R = source.moment * np.asarray(source.orientation)

    def r_theta(theta, phi):
        _, th, _ = spherical_basis(theta, phi)
        return th @ R

    def r_phi(theta, phi):
        _, _, ph = spherical_basis(theta, phi)
        return ph @ R

    return r_theta, r_phi


def general_farfield(R_theta: Callable, R_phi: Callable, coords: SphericalCoords,
                     k: float, impedance: float = Z0_FREE_SPACE):
    """Fraunhofer field G(r) [R_theta θ̂ + R_phi φ̂] for an arbitrary radiation vector."""
    r, theta, phi = coords
    g = scalar_green(r, k, impedance)
    rt = np.asarray(R_theta(theta, phi), dtype=complex)
    rp = np.asarray(R_phi(theta, phi), dtype=complex)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    ex = g * (rt * ct * cp - rp * sp)
    ey = g * (rt * ct * sp + rp * cp)
    ez = -g * rt * st
    return np.stack(np.broadcast_arrays(ex, ey, ez), axis=-1)


def dyadic_green_field(source: DipoleSource, y, z):
    """Exact radiated field of the point dipole (near-field terms included)."""
    xb, yb, zb, r = separation(source, y, z)
    k = source.k
    p_hat = np.stack([xb, yb, zb], axis=-1) / r[..., None]
    kr = k * r
    g = np.asarray(np.exp(-1j * kr) / (4 * np.pi * r))
    a = np.asarray(1 - 1j / kr - 1 / kr**2)
    b = np.asarray(1 - 3j / kr - 3 / kr**2)
    j = source.moment * np.asarray(source.orientation)
    proj = p_hat @ j
    field_ = g[..., None] * (a[..., None] * j - (b * proj)[..., None] * p_hat)
    return -1j * k * source.impedance * field_


def hu_scalar_signal(source: DipoleSource, y, z, beta: float = 1.0, angle_factor: bool = True):
    """Scalar spherical-wave model beta * G(r) * sqrt(x_C / r).

    With ``angle_factor=False`` this is the plain spherical wave beta * G(r).
    """
    _, _, _, r = separation(source, y, z)
    s = beta * scalar_green(r, source.k, source.impedance)
    if angle_factor:
        s = s * np.sqrt(source.position[0] / r)
    return s


def _planar_parts(source, y, z):
    # r_C points from C to the surface centre O, d from O to P
    rc_vec = -np.asarray(source.position)
    rc = float(np.linalg.norm(rc_vec))
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    d_dot = (rc_vec[1] * y + rc_vec[2] * z) / rc      # r̂_C · d = d cos(psi)
    d2 = y * y + z * z
    return rc, d_dot, d2


def planar_signal(source: DipoleSource, y, z, amplitude: float = 1.0):
    """Plane-wave approximation amplitude * G(r_C) exp(-i k d cos(psi))."""
    rc, d_dot, _ = _planar_parts(source, y, z)
    return amplitude * scalar_green(rc, source.k, source.impedance) * np.exp(-1j * source.k * d_dot)


def fresnel_signal(source: DipoleSource, y, z, amplitude: float = 1.0):
    """Fresnel approximation: adds the sin^2(psi) d^2 / (2 r_C) phase term."""
    rc, d_dot, d2 = _planar_parts(source, y, z)
    sin2_d2 = d2 - d_dot**2          # d^2 sin^2(psi)
    phase = d_dot + sin2_d2 / (2 * rc)
    return amplitude * scalar_green(rc, source.k, source.impedance) * np.exp(-1j * source.k * phase)
