"""Performance indices over closed-loop runs and batches of runs.

Distances between ring neighbors are arc lengths at the reference
radius, reported in km; at the spacings involved the chord differs by
under 1.4% and arc length keeps the equidistant target exactly
2*pi*R/N.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import OrbitParams, wrap_angle
from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Telemetry of one closed-loop run.

    `states` holds the measured cylindrical states of the survivors at
    every step boundary (n_loops+1 snapshots); `inputs` the thrust
    actually applied over each step. Spacecraft axis is ordered like
    `survivors`.
    """

    controller: str
    survivors: tuple                  # ids in ring order
    deorbited: tuple                  # ids removed at start
    n_original: int
    neighbor_count: int
    ts: float
    mass: float
    params: OrbitParams
    seed: Optional[int]
    states: np.ndarray                # (n_loops+1, n_sat, 6)
    inputs: np.ndarray                # (n_loops, n_sat, 3) in N
    solve_times: np.ndarray           # (n_loops, n_sat) seconds
    iterations: np.ndarray            # (n_loops, n_sat)
    degraded: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_loops(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_sat(self) -> int:
        return len(self.survivors)


@dataclass(frozen=True, eq=False)
class PositionErrorStats:
    per_spacecraft: np.ndarray   # D_i, km
    target: float                # Dbar, km
    mu_sim: float                # mean |D_i - Dbar|, km
    max_err: float               # max |D_i - Dbar|, km


def neighbor_distance(theta_i: float, theta_j: float,
                      params: OrbitParams) -> float:
    """Arc length in km between two ring angles."""
    return params.radius * abs(wrap_angle(theta_j - theta_i)) / 1000.0


def position_error_at_end(rec: RunRecord,
                          params: Optional[OrbitParams] = None
                          ) -> PositionErrorStats:
    """Spacing error against the equidistant ring at the final step."""
    params = params or rec.params
    thetas = rec.states[-1, :, 1]
    ns = rec.n_sat
    d_i = np.empty(ns)
    for idx in range(ns):
        fwd = neighbor_distance(thetas[idx], thetas[(idx + 1) % ns], params)
        bwd = neighbor_distance(thetas[idx], thetas[(idx - 1) % ns], params)
        d_i[idx] = 0.5 * (fwd + bwd)
    target = 2.0 * math.pi * params.radius / ns / 1000.0
    err = np.abs(d_i - target)
    return PositionErrorStats(per_spacecraft=d_i, target=target,
                              mu_sim=float(np.mean(err)),
                              max_err=float(np.max(err)))


def total_input(rec: RunRecord, mass: Optional[float] = None) -> float:
    """Total delivered delta-v in m/s: sum |u| * Ts / m over everything."""
    mass = mass if mass is not None else rec.mass
    return float(np.sum(np.abs(rec.inputs))) * rec.ts / mass


def per_spacecraft_input(rec: RunRecord) -> np.ndarray:
    """Delta-v per surviving spacecraft in m/s, ordered like survivors."""
    return np.sum(np.abs(rec.inputs), axis=(0, 2)) * rec.ts / rec.mass


def total_solve_time(rec: RunRecord) -> float:
    return float(np.sum(rec.solve_times))


def ring_fit_targets(rec: RunRecord) -> np.ndarray:
    """Equally spaced target angles anchored to the final configuration.

    The ideal ring is rotated so its circular-mean offset from the final
    measured angles is zero; a converged run then sits exactly on its
    targets.
    """
    thetas = rec.states[-1, :, 1]
    ns = rec.n_sat
    slots = 2.0 * math.pi * np.arange(ns) / ns
    offsets = np.array([wrap_angle(t - s) for t, s in zip(thetas, slots)])
    delta = math.atan2(float(np.mean(np.sin(offsets))),
                       float(np.mean(np.cos(offsets))))
    return np.array([wrap_angle(s + delta) for s in slots])


def angular_deviation_series(rec: RunRecord) -> np.ndarray:
    """Per-step, per-spacecraft wrapped deviation from the fitted targets.

    Shape (n_loops+1, n_sat); row 0 is the initial configuration.
    """
    targets = ring_fit_targets(rec)
    thetas = rec.states[:, :, 1]
    out = np.empty_like(thetas)
    for idx in range(thetas.shape[1]):
        out[:, idx] = [wrap_angle(t - targets[idx]) for t in thetas[:, idx]]
    return out


def orbits_to_threshold(rec: RunRecord, threshold: float = 0.01) -> np.ndarray:
    """Orbits until each spacecraft's deviation stays below `threshold`.

    Measured on the wrapped deviation from the fitted targets; the
    convergence time is the first step after which the deviation never
    exceeds the threshold again, in orbit units. `inf` marks spacecraft
    still above the threshold at the final step; 0 marks spacecraft
    that never exceeded it.
    """
    dev = np.abs(angular_deviation_series(rec))
    per_orbit = rec.ts / rec.params.period
    out = np.empty(rec.n_sat)
    for j in range(rec.n_sat):
        above = np.nonzero(dev[:, j] > threshold)[0]
        if above.size == 0:
            out[j] = 0.0
        elif above[-1] == dev.shape[0] - 1:
            out[j] = np.inf
        else:
            out[j] = (above[-1] + 1) * per_orbit
    return out


@dataclass(frozen=True)
class RunIndices:
    """The scalar indices of one run, small enough to keep by the batch."""

    controller: str
    seed: Optional[int]
    position_error: float      # mu_sim, km
    max_error: float           # km
    total_input: float         # m/s
    solve_time: float          # s


def run_indices(rec: RunRecord) -> RunIndices:
    stats = position_error_at_end(rec)
    return RunIndices(controller=rec.controller, seed=rec.seed,
                      position_error=stats.mu_sim, max_error=stats.max_err,
                      total_input=total_input(rec),
                      solve_time=total_solve_time(rec))


@dataclass(frozen=True)
class BatchStats:
    n_runs: int
    controller: str
    position_error_mean: float
    position_error_std: float
    max_error_mean: float
    total_input_mean: float
    total_input_std: float
    solve_time_total: float
    solve_time_mean: float


def _std(values: np.ndarray, sample: bool) -> float:
    if values.size <= 1:
        return 0.0
    return float(np.std(values, ddof=1 if sample else 0))


def summarize(indices: Sequence[RunIndices],
              sample_std: bool = False) -> BatchStats:
    """Mean/std of run indices. Population std by default."""
    if len(indices) == 0:
        raise InvalidArgumentError("cannot aggregate an empty batch")
    controllers = {ri.controller for ri in indices}
    controller = controllers.pop() if len(controllers) == 1 else "mixed"
    pos = np.array([ri.position_error for ri in indices])
    max_err = np.array([ri.max_error for ri in indices])
    tin = np.array([ri.total_input for ri in indices])
    times = np.array([ri.solve_time for ri in indices])
    return BatchStats(
        n_runs=len(indices), controller=controller,
        position_error_mean=float(np.mean(pos)),
        position_error_std=_std(pos, sample_std),
        max_error_mean=float(np.mean(max_err)),
        total_input_mean=float(np.mean(tin)),
        total_input_std=_std(tin, sample_std),
        solve_time_total=float(np.sum(times)),
        solve_time_mean=float(np.mean(times)))


def aggregate(batch: Sequence[RunRecord], sample_std: bool = False) -> BatchStats:
    """Mean/std of the run-level indices across a batch of full records."""
    if len(batch) == 0:
        raise InvalidArgumentError("cannot aggregate an empty batch")
    return summarize([run_indices(rec) for rec in batch],
                     sample_std=sample_std)


def save_record(rec: RunRecord, path) -> None:
    """Persist a run to .npz (arrays plus a JSON metadata blob)."""
    header = {
        "controller": rec.controller,
        "survivors": list(rec.survivors),
        "deorbited": list(rec.deorbited),
        "n_original": rec.n_original,
        "neighbor_count": rec.neighbor_count,
        "ts": rec.ts,
        "mass": rec.mass,
        "mu": rec.params.mu,
        "radius": rec.params.radius,
        "seed": rec.seed,
        "degraded": [list(ev) for ev in rec.degraded],
        "meta": rec.meta,
    }
    np.savez_compressed(path, header=json.dumps(header), states=rec.states,
                        inputs=rec.inputs, solve_times=rec.solve_times,
                        iterations=rec.iterations)


def load_record(path) -> RunRecord:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        params = OrbitParams.from_radius(header["radius"], mu=header["mu"])
        return RunRecord(
            controller=header["controller"],
            survivors=tuple(header["survivors"]),
            deorbited=tuple(header["deorbited"]),
            n_original=int(header["n_original"]),
            neighbor_count=int(header["neighbor_count"]),
            ts=float(header["ts"]), mass=float(header["mass"]),
            params=params, seed=header["seed"],
            states=data["states"], inputs=data["inputs"],
            solve_times=data["solve_times"], iterations=data["iterations"],
            degraded=tuple(tuple(ev) for ev in header["degraded"]),
            meta=header["meta"])
