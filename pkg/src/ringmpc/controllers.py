"""The three receding-horizon controllers.

Every spacecraft minimizes radial excursion and fuel during the
transient plus a terminal cost pulling its angle toward the mean of its
neighbors' angles. The three variants differ only in what they know
about the neighbors:

  * fd   -- fully decentralized: only the neighbors' current angles,
            frozen over the horizon;
  * is   -- decentralized with intention sharing: the neighbors'
            previously planned angle trajectories, time-shifted;
  * cent -- centralized: one joint program over all spacecraft, the
            terminal consensus cost coupling the decision variables.

States are condensed out, so each solve is a box-constrained QP on the
input sequence (see `ringmpc.qp`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dynamics import (CylindricalState, DiscreteModel, ThrustCommand,
                       wrap_angle)
from .errors import InvalidArgumentError
from .qp import (CachedBoxQp, DEFAULT_MAX_ITER, DEFAULT_TOL,
                 PredictionOperator, QpProblem, QpSolution, RingOperator,
                 STATUS_CONVERGED, build_prediction)

CONTROLLER_FD = "fd"
CONTROLLER_IS = "is"
CONTROLLER_CENT = "cent"
CONTROLLER_KINDS = (CONTROLLER_CENT, CONTROLLER_FD, CONTROLLER_IS)

DISPLAY_NAMES = {CONTROLLER_CENT: "CentMPC", CONTROLLER_FD: "FD-MPC",
                 CONTROLLER_IS: "DMPC-IS"}


@dataclass(frozen=True)
class Weights:
    """Cost weights: radial excursion, terminal angle, input, terminal boost."""

    alpha_rho: float
    alpha_theta: float
    alpha_u: float
    alpha_end: float

    def __post_init__(self):
        if self.alpha_u <= 0.0:
            raise InvalidArgumentError("alpha_u must be positive")
        if self.alpha_end < 1.0:
            raise InvalidArgumentError("alpha_end must be >= 1")
        if self.alpha_rho < 0.0 or self.alpha_theta < 0.0:
            raise InvalidArgumentError("weights must be nonnegative")


@dataclass(frozen=True, eq=False)
class NeighborInfo:
    """Angular information about a spacecraft's neighbors.

    Each entry maps a neighbor id to an angle trajectory: length 1 when
    only the current angle is known, length Np+1 when a full predicted
    trajectory was shared. Queries past the end of a trajectory clamp to
    its last sample, which is exactly the frozen-angle behavior.
    """

    entries: tuple

    @classmethod
    def from_mapping(cls, data: Mapping[int, Sequence[float]]) -> "NeighborInfo":
        items = tuple(sorted(
            ((int(j), np.atleast_1d(np.asarray(traj, dtype=float)))
             for j, traj in data.items()), key=lambda it: it[0]))
        for j, traj in items:
            if traj.ndim != 1 or traj.size == 0 or not np.all(np.isfinite(traj)):
                raise InvalidArgumentError(
                    f"neighbor {j} trajectory must be a finite 1-d array")
        return cls(entries=items)

    def __len__(self) -> int:
        return len(self.entries)

    def angle(self, j: int, k: int) -> float:
        for jj, traj in self.entries:
            if jj == j:
                return float(traj[min(k, traj.size - 1)])
        raise KeyError(j)

    def lengths(self) -> tuple:
        return tuple(traj.size for _, traj in self.entries)


def angular_setpoint(theta_self: float, neighbors: NeighborInfo,
                     k: int) -> float:
    """Circular mean of neighbor angles at step k, relative to self.

    Averaging wrapped differences (rather than raw angles) keeps the
    result correct when the neighborhood straddles the +-pi seam.
    """
    if len(neighbors) == 0:
        raise InvalidArgumentError("setpoint undefined without neighbors")
    acc = 0.0
    for j, traj in neighbors.entries:
        acc += wrap_angle(float(traj[min(k, traj.size - 1)]) - theta_self)
    return theta_self + acc / len(neighbors)


@dataclass(frozen=True, eq=False)
class ControlPlan:
    """One spacecraft's optimized horizon: inputs, prediction, telemetry."""

    inputs: np.ndarray       # (Np, 3) thrust in N
    states: np.ndarray       # (Np, 6) predicted states x(1..Np)
    theta_traj: np.ndarray   # (Np+1,) current + predicted angles
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    solve_time: float

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED

    def first_input(self) -> ThrustCommand:
        return ThrustCommand.from_array(self.inputs[0])

    def shifted_theta(self, horizon: int, ts: float) -> np.ndarray:
        """Shared trajectory advanced one step for the next solve.

        The final sample is extended by extrapolating at the terminal
        predicted angular rate, then the result is truncated to
        horizon+1 samples.
        """
        theta_dot_end = float(self.states[-1, 4])
        last = float(self.theta_traj[-1]) + theta_dot_end * ts
        shifted = np.concatenate([self.theta_traj[1:], [last]])
        return shifted[:horizon + 1]

    def next_warm_start(self) -> np.ndarray:
        """This optimum shifted one step, last input block repeated."""
        return np.vstack([self.inputs[1:], self.inputs[-1:]]).ravel()


class LocalCondensedCost:
    """Shared per-spacecraft condensed cost pieces for a fixed model.

    The Hessian depends only on (model, weights, mass, horizon), so all
    spacecraft share one copy (with its step-size work done once, see
    CachedBoxQp); only the linear term changes between solves.

    The radial terms of the cost are expressed in km while everything
    else stays SI. The standard weights are calibrated for km: read in
    meters they stiffen the radial penalty by 1e6, which freezes the
    altitude-change phasing maneuvers the angular setpoint requires
    (and pushes the Hessian condition number past 1e11).
    """

    def __init__(self, model: DiscreteModel, weights: Weights, horizon: int,
                 mass: float, u_max: float):
        if horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")
        if mass <= 0.0 or u_max <= 0.0:
            raise InvalidArgumentError("mass and u_max must be positive")
        self.model = model
        self.weights = weights
        self.horizon = horizon
        self.mass = mass
        self.u_max = u_max
        self.pred: PredictionOperator = build_prediction(model, horizon)
        nx = 6
        # rows of the stacked maps that read rho(k) in km and theta(Np);
        # states are metric, so the rho rows carry the m -> km factor
        self.s_rho = 1e-3 * self.pred.gamma[0::nx, :] / mass   # (Np, d)
        self.phi_rho = 1e-3 * self.pred.phi[0::nx, :]          # (Np, 6)
        self.g_theta = self.pred.gamma[nx * (horizon - 1) + 1, :] / mass
        self.phi_theta_end = self.pred.phi[nx * (horizon - 1) + 1, :]
        wvec = np.full(horizon, weights.alpha_rho)
        wvec[-1] = weights.alpha_end * weights.alpha_rho
        self.wvec = wvec
        self.sigma = 2.0 * weights.alpha_u
        self.c_rho = np.sqrt(2.0 * wvec)[:, None] * self.s_rho
        self.c_theta = (np.sqrt(2.0 * weights.alpha_end * weights.alpha_theta)
                        * self.g_theta)
        c = np.vstack([self.c_rho, self.c_theta])
        h = c.T @ c
        h[np.diag_indices_from(h)] += self.sigma
        self.h = h
        self.lower = np.full(3 * horizon, -u_max)
        self.upper = np.full(3 * horizon, u_max)
        self.qp = CachedBoxQp(self.h, self.lower, self.upper,
                              strong_convexity=self.sigma)

    def linear_term(self, x0: np.ndarray, setpoint: float) -> np.ndarray:
        w = self.weights
        p = self.phi_rho @ x0
        q = float(self.phi_theta_end @ x0)
        return 2.0 * (self.s_rho.T @ (self.wvec * p)
                      + w.alpha_end * w.alpha_theta * (q - setpoint)
                      * self.g_theta)

    def problem_for(self, x0: np.ndarray, setpoint: float) -> QpProblem:
        return QpProblem(h=self.h, f=self.linear_term(x0, setpoint),
                         lower=self.lower, upper=self.upper)

    def solve(self, f: np.ndarray, tol: float, max_iter: int,
              warm_start: np.ndarray | None = None) -> QpSolution:
        return self.qp.solve(f, tol=tol, max_iter=max_iter,
                             warm_start=warm_start)

    def expand_plan(self, x0: np.ndarray, u_flat: np.ndarray,
                    solution_like) -> ControlPlan:
        horizon = self.horizon
        states = (self.pred.phi @ x0
                  + self.pred.gamma @ (u_flat / self.mass)).reshape(horizon, 6)
        theta_traj = np.concatenate([[x0[1]], states[:, 1]])
        return ControlPlan(inputs=u_flat.reshape(horizon, 3), states=states,
                           theta_traj=theta_traj,
                           objective=solution_like.objective,
                           kkt_residual=solution_like.kkt_residual,
                           iterations=solution_like.iterations,
                           status=solution_like.status,
                           solve_time=solution_like.solve_time)


@dataclass(frozen=True)
class _SolveTelemetry:
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    solve_time: float


class LocalController:
    """FD / IS controller for one spacecraft population (shared cost)."""

    def __init__(self, model: DiscreteModel, weights: Weights, horizon: int,
                 mass: float, u_max: float, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        self.cost = LocalCondensedCost(model, weights, horizon, mass, u_max)
        self.tol = tol
        self.max_iter = max_iter

    def plan(self, x0: CylindricalState, neighbors: NeighborInfo,
             warm_start: np.ndarray | None = None) -> ControlPlan:
        setpoint = angular_setpoint(x0.theta, neighbors, self.cost.horizon)
        x0_arr = x0.as_array()
        f = self.cost.linear_term(x0_arr, setpoint)
        start = time.perf_counter()
        sol = self.cost.solve(f, tol=self.tol, max_iter=self.max_iter,
                              warm_start=warm_start)
        elapsed = time.perf_counter() - start
        telemetry = _SolveTelemetry(objective=sol.objective,
                                    kkt_residual=sol.kkt_residual,
                                    iterations=sol.iterations,
                                    status=sol.status, solve_time=elapsed)
        return self.cost.expand_plan(x0_arr, sol.u_star, telemetry)


def solve_fd_mpc(x0: CylindricalState, neighbor_angles: NeighborInfo,
                 weights: Weights, model: DiscreteModel, horizon: int,
                 mass: float, u_max: float, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> ControlPlan:
    """One fully decentralized solve from frozen neighbor angles."""
    if any(n != 1 for n in neighbor_angles.lengths()):
        raise InvalidArgumentError(
            "frozen-angle solve expects single-sample neighbor info")
    ctrl = LocalController(model, weights, horizon, mass, u_max, tol, max_iter)
    return ctrl.plan(x0, neighbor_angles)


def solve_dmpc_is(x0: CylindricalState, neighbor_trajectories: NeighborInfo,
                  weights: Weights, model: DiscreteModel, horizon: int,
                  mass: float, u_max: float, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> ControlPlan:
    """One intention-sharing solve from shared neighbor trajectories."""
    if any(n not in (1, horizon + 1) for n in neighbor_trajectories.lengths()):
        raise InvalidArgumentError(
            "shared trajectories must have length horizon+1 "
            "(or 1 before any have been exchanged)")
    ctrl = LocalController(model, weights, horizon, mass, u_max, tol, max_iter)
    return ctrl.plan(x0, neighbor_trajectories)


class CentralizedController:
    """Joint solve over every survivor with the coupled terminal cost.

    The terminal cost sums (theta_i(Np) - mean_{j in N_i} theta_j(Np))^2
    over spacecraft, a consensus quadratic on the ring. Angles are kept
    on a common winding by offsetting each neighbor difference with the
    integer number of turns seen in the current measured configuration.
    """

    def __init__(self, model: DiscreteModel, weights: Weights, horizon: int,
                 neighbor_ids: Sequence[Sequence[int]], mass: float,
                 u_max: float, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        self.cost = LocalCondensedCost(model, weights, horizon, mass, u_max)
        self.tol = tol
        self.max_iter = max_iter
        ns = len(neighbor_ids)
        if ns < 2:
            raise InvalidArgumentError("joint solve needs at least 2 spacecraft")
        self.n_sat = ns
        self.neighbor_ids = [tuple(int(j) for j in row) for row in neighbor_ids]
        for i, row in enumerate(self.neighbor_ids):
            if len(row) == 0:
                raise InvalidArgumentError(f"spacecraft {i} has no neighbors")
            if i in row:
                raise InvalidArgumentError(f"spacecraft {i} neighbors itself")
        lap = np.eye(ns)
        for i, row in enumerate(self.neighbor_ids):
            for j in row:
                lap[i, j] -= 1.0 / len(row)
        self.lap = lap
        self.kappa = float(np.sqrt(2.0 * weights.alpha_end
                                   * weights.alpha_theta))

        # The coupling is a rank-Ns quadratic: row i of V reads off
        # kappa * (terminal angle of i minus the mean over its neighbors),
        # each terminal angle being g_theta . u_j plus a constant.
        cost = self.cost
        d = 3 * horizon
        self.block_dim = d
        v_rows = np.zeros((ns, ns * d))
        for i in range(ns):
            for j in range(ns):
                if lap[i, j] != 0.0:
                    v_rows[i, j * d:(j + 1) * d] = (self.kappa * lap[i, j]
                                                    * cost.g_theta)
        self.v_rows = v_rows
        self.lower = np.tile(cost.lower, ns)
        self.upper = np.tile(cost.upper, ns)
        # Joint Hessian: per-spacecraft blocks carry sigma*I and the
        # radial rows; the terminal-angle curvature lives in V'V only.
        # Applied as an operator: a dense (ns*d)^2 array costs O(ns^2)
        # memory and a much slower matvec at full scale for the same
        # iterates.
        op = RingOperator(cost.sigma, cost.c_rho, self.kappa, lap,
                          cost.g_theta)
        self.qp = CachedBoxQp(op, self.lower, self.upper,
                              strong_convexity=cost.sigma)

    def winding_offsets(self, thetas: np.ndarray) -> np.ndarray:
        """Per-spacecraft constant in the consensus residual.

        offset_i = (2 pi / |N_i|) * sum_j w_ij where w_ij is the integer
        winding that places neighbor j on the same turn as i in the
        current measured configuration.
        """
        c = np.zeros(self.n_sat)
        for i, row in enumerate(self.neighbor_ids):
            acc = 0.0
            for j in row:
                raw = thetas[j] - thetas[i]
                acc += wrap_angle(raw) - raw
            c[i] = acc / len(row)
        return c

    def plan_all(self, states: Sequence[CylindricalState],
                 warm_start: np.ndarray | None = None) -> list:
        if len(states) != self.n_sat:
            raise InvalidArgumentError(
                f"expected {self.n_sat} states, got {len(states)}")
        cost = self.cost
        d = self.block_dim
        x0 = np.stack([s.as_array() for s in states])        # (Ns, 6)
        thetas = x0[:, 1]
        f0 = np.empty((self.n_sat, d))
        offs = np.empty(self.n_sat)
        for i in range(self.n_sat):
            p = cost.phi_rho @ x0[i]
            f0[i] = 2.0 * (cost.s_rho.T @ (cost.wvec * p))
            offs[i] = float(cost.phi_theta_end @ x0[i])
        # consensus residual L t - c with c from the measured winding
        c = self.winding_offsets(thetas)
        f = f0.ravel() + self.v_rows.T @ (self.kappa * (self.lap @ offs - c))

        start = time.perf_counter()
        sol = self.qp.solve(f, tol=self.tol, max_iter=self.max_iter,
                            warm_start=warm_start)
        elapsed = time.perf_counter() - start

        # the joint solve's cost of elapsed wall time is split evenly so a
        # per-spacecraft sum over a run recovers the true optimization total
        telemetry = _SolveTelemetry(
            objective=sol.objective, kkt_residual=sol.kkt_residual,
            iterations=sol.iterations, status=sol.status,
            solve_time=elapsed / self.n_sat)
        u = sol.u_star.reshape(self.n_sat, d)
        return [cost.expand_plan(x0[i], u[i], telemetry)
                for i in range(self.n_sat)]


def solve_centralized(states: Sequence[CylindricalState],
                      neighbor_ids: Sequence[Sequence[int]],
                      weights: Weights, model: DiscreteModel, horizon: int,
                      mass: float, u_max: float,
                      tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER) -> list:
    """One joint solve; returns a ControlPlan per spacecraft."""
    ctrl = CentralizedController(model, weights, horizon, neighbor_ids,
                                 mass, u_max, tol, max_iter)
    return ctrl.plan_all(states)
