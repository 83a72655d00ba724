"""Nonlinear two-body propagation used as closed-loop ground truth.

Each spacecraft is integrated in inertial Cartesian coordinates under
point-mass gravity plus its commanded thrust. The thrust vector is held
constant over a sampling interval in a local orbital frame that rotates
at the chief rate; the in-plane axes of that frame are anchored at the
spacecraft's own polar angle at the start of the step. Anchoring at the
chief's angle instead would misdirect the thrust by the (arbitrarily
large) angular separation theta, so the commanded radial/along-track
components would no longer act radially/along-track on the spacecraft.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .dynamics import OrbitParams, ThrustCommand
from .errors import (IntegrationFailureError, InvalidArgumentError,
                     SingularityError)


@dataclass(frozen=True, eq=False)
class InertialState:
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def specific_energy(self, mu: float) -> float:
        return 0.5 * float(self.v @ self.v) - mu / float(np.linalg.norm(self.r))

    def angular_momentum(self) -> np.ndarray:
        return np.cross(self.r, self.v)


@dataclass(frozen=True)
class IntegratorConfig:
    """Adaptive step control for the truth propagator.

    Defaults are tighter than strictly needed for control work so that
    a coasting orbit closes on itself to sub-micrometer-per-meter level;
    the integrator is nowhere near the runtime bottleneck.
    """

    rel_tol: float = 1e-14
    abs_tol: float = 1e-13
    max_step: float = math.inf
    method: str = "dp45"

    def __post_init__(self):
        for name, v in (("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)):
            if not (1e-14 <= v <= 1e-3):
                raise InvalidArgumentError(
                    f"{name} must lie in [1e-14, 1e-3], got {v}")
        if self.method != "dp45":
            raise InvalidArgumentError(
                f"unknown integration method {self.method!r}")


def two_body_derivative(s: InertialState, a_control, mu: float) -> np.ndarray:
    """Time derivative (rdot, vdot) of Keplerian motion plus control."""
    r = np.asarray(s.r, dtype=float)
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        raise SingularityError("two-body acceleration undefined at r = 0")
    acc = -mu / rn**3 * r + np.asarray(a_control, dtype=float)
    return np.concatenate([np.asarray(s.v, dtype=float), acc])


def propagate_truth(s: InertialState, thrust_lvlh: ThrustCommand, mass: float,
                    chief_angle_at_start: float, dt: float,
                    cfg: IntegratorConfig, params: OrbitParams) -> InertialState:
    """Propagate one sampling interval under constant LVLH thrust.

    `chief_angle_at_start` fixes the epoch; the thrust axes themselves
    are anchored at the spacecraft's polar angle (see module docstring)
    and rotate at the mean motion during the step.
    """
    if not dt > 0.0:
        raise InvalidArgumentError(f"propagation interval must be positive, got {dt}")
    del chief_angle_at_start  # epoch bookkeeping lives with the caller
    phi0 = math.atan2(float(s.r[1]), float(s.r[0]))
    r, v, _, status, t_reached = _backend.rk45_two_body(
        s.r, s.v, thrust_lvlh.as_array(), mass, phi0, params.mean_motion,
        params.mu, dt, cfg.rel_tol, cfg.abs_tol, cfg.max_step)
    if status == _backend.RK_STEP_UNDERFLOW:
        raise IntegrationFailureError(
            f"step size underflow at t = {t_reached:.6f} s of {dt} s",
            time_reached=t_reached)
    if status == _backend.RK_SINGULAR_RADIUS:
        raise SingularityError(
            f"radius collapsed during propagation at t = {t_reached:.6f} s")
    return InertialState(r=r, v=v)


def chief_angle_at(t: float, params: OrbitParams) -> float:
    """Polar angle of the virtual chief at time t, unwrapped."""
    return params.mean_motion * t
