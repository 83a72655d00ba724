"""Relative motion about a circular reference orbit, in cylindrical form.

The state is (rho, theta, z, rhoDot, thetaDot, zDot): radial offset from
the reference radius, angular offset from a virtual chief moving at the
mean motion, and out-of-plane offset, plus rates. The linearized
equations hold for arbitrarily large theta, which is what makes them
usable for whole-ring reconfiguration; only rho and z need to stay small
against R.

Also provides the exact zero-order-hold discretization and the
conversions to and from inertial Cartesian coordinates (reference orbit
in the X-Y plane).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import FrameDegeneracyError, InvalidArgumentError

EARTH_MU = 3.986004418e14  # m^3/s^2
EARTH_EQUATORIAL_RADIUS = 6378137.0  # m
EARTH_MEAN_RADIUS = 6371e3  # m


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = -((-theta + math.pi) % (2.0 * math.pi) - math.pi)
    return w


@dataclass(frozen=True)
class OrbitParams:
    """Circular reference orbit: radius, gravitational parameter, rates."""

    mu: float
    radius: float
    mean_motion: float
    period: float

    @classmethod
    def from_radius(cls, radius: float, mu: float = EARTH_MU) -> "OrbitParams":
        if radius <= EARTH_EQUATORIAL_RADIUS:
            raise InvalidArgumentError(
                f"orbit radius {radius} m is below the equatorial radius")
        n = math.sqrt(mu / radius**3)
        return cls(mu=mu, radius=radius, mean_motion=n, period=2.0 * math.pi / n)

    @classmethod
    def from_altitude(cls, altitude: float, mu: float = EARTH_MU) -> "OrbitParams":
        return cls.from_radius(EARTH_MEAN_RADIUS + altitude, mu=mu)

    def chief_angle_at(self, t: float) -> float:
        """Polar angle of the virtual chief at time t (unwrapped)."""
        return self.mean_motion * t


@dataclass(frozen=True)
class CylindricalState:
    rho: float
    theta: float
    z: float
    rho_dot: float
    theta_dot: float
    z_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.theta, self.z,
                         self.rho_dot, self.theta_dot, self.z_dot])

    @classmethod
    def from_array(cls, x) -> "CylindricalState":
        rho, theta, z, rho_dot, theta_dot, z_dot = (float(v) for v in x)
        return cls(rho, theta, z, rho_dot, theta_dot, z_dot)

    def validity_ratios(self, params: OrbitParams) -> dict:
        """Linearization quality diagnostics; small values mean valid.

        Not enforced anywhere: theta may be arbitrarily large by design.
        """
        return {
            "rho_over_R": abs(self.rho) / params.radius,
            "z_over_R": abs(self.z) / params.radius,
            "theta_dot_over_n": abs(self.theta_dot) / params.mean_motion,
        }


@dataclass(frozen=True)
class ThrustCommand:
    """Thrust in Newtons along (radial, along-track, cross-track)."""

    radial: float
    along_track: float
    cross_track: float

    def as_array(self) -> np.ndarray:
        return np.array([self.radial, self.along_track, self.cross_track])

    @classmethod
    def from_array(cls, u) -> "ThrustCommand":
        return cls(float(u[0]), float(u[1]), float(u[2]))

    def magnitude_inf(self) -> float:
        return max(abs(self.radial), abs(self.along_track),
                   abs(self.cross_track))


@dataclass(frozen=True)
class ContinuousModel:
    """x_dot = A_c x + B_c a for accelerations a in m/s^2.

    The along-track column of B_c carries a 1/R gain so the theta
    equation stays in angular units.
    """

    a_c: np.ndarray
    b_c: np.ndarray
    params: OrbitParams


@dataclass(frozen=True)
class DiscreteModel:
    a: np.ndarray
    b: np.ndarray
    ts: float
    params: OrbitParams


def build_continuous_model(params: OrbitParams) -> ContinuousModel:
    n = params.mean_motion
    r = params.radius
    a_c = np.zeros((6, 6))
    a_c[0, 3] = 1.0
    a_c[1, 4] = 1.0
    a_c[2, 5] = 1.0
    a_c[3, 0] = 3.0 * n * n
    a_c[3, 4] = 2.0 * r * n
    a_c[4, 3] = -2.0 * n / r
    a_c[5, 2] = -n * n
    b_c = np.zeros((6, 3))
    b_c[3, 0] = 1.0
    b_c[4, 1] = 1.0 / r
    b_c[5, 2] = 1.0
    return ContinuousModel(a_c=a_c, b_c=b_c, params=params)


def discretize(cm: ContinuousModel, ts: float) -> DiscreteModel:
    """Exact zero-order-hold pair via the augmented-matrix exponential."""
    if not ts > 0.0:
        raise InvalidArgumentError(f"sampling time must be positive, got {ts}")
    aug = np.zeros((9, 9))
    aug[:6, :6] = cm.a_c
    aug[:6, 6:] = cm.b_c
    phi = expm(aug * ts)
    a = phi[:6, :6].copy()
    b = phi[:6, 6:].copy()
    return DiscreteModel(a=a, b=b, ts=ts, params=cm.params)


def propagate_linear(model: DiscreteModel, x: CylindricalState,
                     u: ThrustCommand, mass: float) -> CylindricalState:
    """One discrete step x(k+1) = A x(k) + B (u(k)/mass)."""
    accel = u.as_array() / mass
    nxt = model.a @ x.as_array() + model.b @ accel
    return CylindricalState.from_array(nxt)


def cylindrical_to_eci(x: CylindricalState, chief_angle: float,
                       params: OrbitParams):
    """Map a relative state to inertial position and velocity.

    The reference orbit lies in the X-Y plane; z is the inertial Z axis.
    """
    n = params.mean_motion
    r_p = params.radius + x.rho
    phi = chief_angle + x.theta
    phi_dot = n + x.theta_dot
    c, s = math.cos(phi), math.sin(phi)
    r_eci = np.array([r_p * c, r_p * s, x.z])
    v_eci = np.array([x.rho_dot * c - r_p * phi_dot * s,
                      x.rho_dot * s + r_p * phi_dot * c,
                      x.z_dot])
    return r_eci, v_eci


def eci_to_cylindrical(r_eci, v_eci, chief_angle: float,
                       params: OrbitParams) -> CylindricalState:
    """Inverse of `cylindrical_to_eci`; theta is wrapped to (-pi, pi]."""
    x_i, y_i, z_i = (float(v) for v in r_eci)
    vx, vy, vz = (float(v) for v in v_eci)
    r_p = math.hypot(x_i, y_i)
    if r_p < 0.5 * params.radius:
        raise FrameDegeneracyError(
            f"in-plane radius {r_p:.3e} m is below half the reference radius")
    theta = wrap_angle(math.atan2(y_i, x_i) - chief_angle)
    rho = r_p - params.radius
    rho_dot = (x_i * vx + y_i * vy) / r_p
    theta_dot = (x_i * vy - y_i * vx) / (r_p * r_p) - params.mean_motion
    return CylindricalState(rho=rho, theta=theta, z=z_i,
                            rho_dot=rho_dot, theta_dot=theta_dot, z_dot=vz)
