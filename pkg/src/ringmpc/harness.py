"""Scenario configuration, the closed-loop driver, sweeps, plot exports.

The closed loop per step: measure truth states in relative coordinates,
exchange information per the controller's regime, solve, apply only the
first input block of each plan, propagate truth one sampling interval.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .constellation import (DeorbitEvent, apply_deorbit, draw_deorbit_event,
                            exchange, full_ring_topology, initial_ring)
from .controllers import (CONTROLLER_CENT, CONTROLLER_IS, CONTROLLER_KINDS,
                          CentralizedController, LocalController, Weights)
from .dynamics import (OrbitParams, build_continuous_model, discretize,
                       eci_to_cylindrical, cylindrical_to_eci)
from .errors import ConfigError, SolverFailureError
from .metrics import (RunIndices, RunRecord, angular_deviation_series,
                      orbits_to_threshold, per_spacecraft_input, run_indices,
                      summarize)
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL
from .truth import InertialState, IntegratorConfig, propagate_truth

OUTPUT_DIR_ENV = "RINGMPC_OUTPUT_DIR"


@dataclass(frozen=True)
class SolverSettings:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("solver tolerance/iteration budget invalid")


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop experiment. Defaults reproduce the headline setup:

    40 spacecraft at 500 km altitude, 5 deorbited, 355 s sampling, a
    64-step (4-orbit) horizon, 400 control steps (25 orbits), 200 mN
    thrust bound, 200 kg mass, and the standard cost weights.
    """

    n_sat: int = 40
    n_deorbit: int = 5
    neighbor_count: int = 2
    controller: str = CONTROLLER_IS
    horizon: int = 64
    ts: float = 355.0
    n_loops: int = 400
    weights: Weights = field(default_factory=lambda: Weights(
        alpha_rho=1e-5, alpha_theta=1.0, alpha_u=2.5e-3, alpha_end=1e5))
    u_max: float = 0.2
    mass: float = 200.0
    altitude: float = 500e3
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ConfigError(
                f"controller must be one of {CONTROLLER_KINDS}, "
                f"got {self.controller!r}")
        if self.n_sat < 2 or not 0 <= self.n_deorbit < self.n_sat:
            raise ConfigError("spacecraft/deorbit counts are inconsistent")
        if self.horizon < 1 or self.n_loops < 1:
            raise ConfigError("horizon and n_loops must be >= 1")
        if self.ts <= 0 or self.u_max <= 0 or self.mass <= 0:
            raise ConfigError("ts, u_max and mass must be positive")
        if self.altitude <= 0:
            raise ConfigError("altitude must be positive")

    def orbit_params(self) -> OrbitParams:
        return OrbitParams.from_altitude(self.altitude)

    def resolved_output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        return Path(self.output_dir) if self.output_dir else Path("out")

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def desk_scale_config(**overrides) -> ScenarioConfig:
    """Small preset for fast checks: 12 spacecraft, 2 gone, 96 steps."""
    base = dict(n_sat=12, n_deorbit=2, n_loops=96, horizon=32)
    base.update(overrides)
    return ScenarioConfig(**base)


_WEIGHT_KEYS = {"alpha_rho", "alpha_theta", "alpha_u", "alpha_end"}
_INTEGRATOR_KEYS = {"rel_tol", "abs_tol", "max_step", "method"}
_SOLVER_KEYS = {"tol", "max_iter"}


def config_from_dict(data: Optional[dict]) -> ScenarioConfig:
    """Build a config from parsed YAML; empty input means all defaults."""
    if data is None:
        return ScenarioConfig()
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    kw = {}
    top_fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key, value in data.items():
        if key == "weights":
            extra = set(value) - _WEIGHT_KEYS
            if extra:
                raise ConfigError(f"unknown weight keys {sorted(extra)}")
            defaults = ScenarioConfig().weights
            kw["weights"] = Weights(**{**dataclasses.asdict(defaults), **value})
        elif key == "integrator":
            extra = set(value) - _INTEGRATOR_KEYS
            if extra:
                raise ConfigError(f"unknown integrator keys {sorted(extra)}")
            merged = {**dataclasses.asdict(IntegratorConfig()), **value}
            if isinstance(merged.get("max_step"), str):
                merged["max_step"] = float(merged["max_step"])
            kw["integrator"] = IntegratorConfig(**merged)
        elif key == "solver":
            extra = set(value) - _SOLVER_KEYS
            if extra:
                raise ConfigError(f"unknown solver keys {sorted(extra)}")
            kw["solver"] = SolverSettings(
                **{**dataclasses.asdict(SolverSettings()), **value})
        elif key in top_fields:
            kw[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return ScenarioConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration is not valid YAML: {exc}") from exc
    return config_from_dict(data)


def _deorbit_event(cfg: ScenarioConfig) -> DeorbitEvent:
    return draw_deorbit_event(cfg.n_sat, cfg.n_deorbit, cfg.seed)


def run_closed_loop(cfg: ScenarioConfig,
                    event: Optional[DeorbitEvent] = None) -> RunRecord:
    """Run one scenario to completion and return its telemetry."""
    params = cfg.orbit_params()
    model = discretize(build_continuous_model(params), cfg.ts)
    ring = initial_ring(cfg.n_sat, params)
    if event is None:
        event = _deorbit_event(cfg)
    topology = apply_deorbit(full_ring_topology(cfg.n_sat, cfg.neighbor_count),
                             event)
    survivors = topology.order
    ns = len(survivors)

    regime = cfg.controller
    local_ctrl = None
    cent_ctrl = None
    if regime == CONTROLLER_CENT:
        cent_ctrl = CentralizedController(
            model, cfg.weights, cfg.horizon,
            topology.neighbor_rows_by_position(), cfg.mass, cfg.u_max,
            tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    else:
        local_ctrl = LocalController(
            model, cfg.weights, cfg.horizon, cfg.mass, cfg.u_max,
            tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)

    truth = {}
    for i in survivors:
        r, v = cylindrical_to_eci(ring[i], 0.0, params)
        truth[i] = InertialState(r=r, v=v)

    states_log = np.empty((cfg.n_loops + 1, ns, 6))
    inputs_log = np.empty((cfg.n_loops, ns, 3))
    times_log = np.empty((cfg.n_loops, ns))
    iters_log = np.empty((cfg.n_loops, ns), dtype=np.int64)
    degraded_all = []

    prev_plans = {}
    warm = {}          # spacecraft id -> shifted previous optimum
    joint_warm = None
    for k in range(cfg.n_loops + 1):
        chief = params.chief_angle_at(k * cfg.ts)
        measured = {i: eci_to_cylindrical(truth[i].r, truth[i].v, chief,
                                          params) for i in survivors}
        for idx, i in enumerate(survivors):
            states_log[k, idx] = measured[i].as_array()
        if k == cfg.n_loops:
            break

        plans = {}
        if regime == CONTROLLER_CENT:
            joint = cent_ctrl.plan_all([measured[i] for i in survivors],
                                       warm_start=joint_warm)
            plans = dict(zip(survivors, joint))
            joint_warm = np.concatenate(
                [p.next_warm_start() for p in joint])
        else:
            thetas = {i: measured[i].theta for i in survivors}
            ex = exchange(k, topology, thetas, prev_plans or None, regime,
                          cfg.horizon, cfg.ts)
            degraded_all.extend(ex.degraded)
            for i in survivors:
                plans[i] = local_ctrl.plan(measured[i], ex.infos[i],
                                           warm_start=warm.get(i))
                warm[i] = plans[i].next_warm_start()

        for idx, i in enumerate(survivors):
            plan = plans[i]
            if not plan.converged:
                raise SolverFailureError(
                    f"{cfg.controller} solve for spacecraft {i} at step {k} "
                    f"stopped at residual {plan.kkt_residual:.3e} after "
                    f"{plan.iterations} iterations")
            inputs_log[k, idx] = plan.inputs[0]
            times_log[k, idx] = plan.solve_time
            iters_log[k, idx] = plan.iterations
            truth[i] = propagate_truth(truth[i], plan.first_input(), cfg.mass,
                                       chief, cfg.ts, cfg.integrator, params)
        prev_plans = plans

    return RunRecord(
        controller=cfg.controller, survivors=survivors, deorbited=event.ids,
        n_original=cfg.n_sat, neighbor_count=cfg.neighbor_count, ts=cfg.ts,
        mass=cfg.mass, params=params, seed=cfg.seed, states=states_log,
        inputs=inputs_log, solve_times=times_log, iterations=iters_log,
        degraded=tuple(degraded_all),
        meta={"horizon": cfg.horizon, "u_max": cfg.u_max,
              "altitude": cfg.altitude})


@dataclass(frozen=True)
class SweepSpec:
    """Batch protocol: same seeded scenarios across every cell."""

    neighbor_counts: tuple = (2, 4, 6, 8, 10)
    controllers: tuple = CONTROLLER_KINDS
    n_scenarios: int = 10
    base_seed: int = 0

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ConfigError("a sweep needs at least one scenario")
        for c in self.controllers:
            if c not in CONTROLLER_KINDS:
                raise ConfigError(f"unknown controller {c!r}")

    def seeds(self) -> list:
        return [self.base_seed + s for s in range(self.n_scenarios)]


@dataclass(frozen=True)
class SweepResult:
    cells: dict      # (controller, p) -> BatchStats
    indices: dict    # (controller, p) -> list[RunIndices]

    def table_rows(self) -> list:
        rows = []
        for (controller, p), stats in sorted(self.cells.items()):
            rows.append((controller, p, stats))
        return rows


def _cache_meta(cfg: ScenarioConfig) -> dict:
    """Everything besides (controller, p, seed) that shapes a run."""
    w = cfg.weights
    return {
        "n_sat": cfg.n_sat, "n_deorbit": cfg.n_deorbit,
        "n_loops": cfg.n_loops, "horizon": cfg.horizon, "ts": cfg.ts,
        "u_max": cfg.u_max, "mass": cfg.mass, "altitude": cfg.altitude,
        "weights": [w.alpha_u, w.alpha_theta, w.alpha_rho, w.alpha_end],
        "tol": cfg.solver.tol, "max_iter": cfg.solver.max_iter,
    }


def cache_path_for(cfg: ScenarioConfig, cache_dir) -> Path:
    return Path(cache_dir) / (
        f"{cfg.controller}_p{cfg.neighbor_count}_s{cfg.seed}.json")


def load_cached_run(cfg: ScenarioConfig, cache_dir) -> Optional[dict]:
    """Cached payload for this config, or None on miss/fingerprint change."""
    path = cache_path_for(cfg, cache_dir)
    if not path.exists():
        return None
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if obj.get("meta") != _cache_meta(cfg):
        return None
    return obj


def run_indices_cached(cfg: ScenarioConfig, cache_dir) -> RunIndices:
    """One batch cell backed by a JSON file keyed by (controller, p, seed).

    Runs are deterministic per config, so a fingerprint-matched hit is
    exact. Written atomically so a reader never sees a partial file;
    besides the scalar indices the payload keeps each spacecraft's
    convergence time, which the batch records would otherwise lose.
    """
    cached = load_cached_run(cfg, cache_dir)
    if cached is not None:
        return RunIndices(**cached["indices"])
    rec = run_closed_loop(cfg)
    ri = run_indices(rec)
    conv = orbits_to_threshold(rec)
    payload = {
        "meta": _cache_meta(cfg),
        "indices": dataclasses.asdict(ri),
        "convergence_orbits": [float(v) if np.isfinite(v) else None
                               for v in conv],
        "survivors": [int(i) for i in rec.survivors],
    }
    path = cache_path_for(cfg, cache_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1))
    tmp.replace(path)
    return ri


def run_sweep(spec: SweepSpec, base: ScenarioConfig,
              progress=None, cache_dir=None) -> SweepResult:
    """Run the full grid; scenario s keeps one deorbit draw per seed.

    Runs are reduced to their scalar indices immediately so arbitrarily
    large sweeps hold no per-step telemetry. With `cache_dir`, cells
    already on disk are loaded instead of recomputed.
    """
    cells = {}
    indices = {}
    for controller in spec.controllers:
        for p in spec.neighbor_counts:
            cell = []
            for seed in spec.seeds():
                cfg = base.replace(controller=controller, neighbor_count=p,
                                   seed=seed)
                if progress:
                    progress(f"run controller={controller} p={p} seed={seed}")
                if cache_dir is not None:
                    cell.append(run_indices_cached(cfg, cache_dir))
                else:
                    cell.append(run_indices(run_closed_loop(cfg)))
            indices[(controller, p)] = cell
            cells[(controller, p)] = summarize(cell)
    return SweepResult(cells=cells, indices=indices)


PLOT_KINDS = ("angular-deviation", "per-sat-input", "error-vs-neighbors")


def emit_plot_data(source, kind: str, out_path) -> Path:
    """Write plain-text columnar data for the three standard figures."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if kind == "angular-deviation":
        rec: RunRecord = source
        series = angular_deviation_series(rec)
        orbit = rec.ts / rec.params.period
        lines = ["step time_s orbit sat_id deviation_rad"]
        for k in range(1, rec.n_loops + 1):
            for idx, i in enumerate(rec.survivors):
                lines.append(f"{k} {k * rec.ts:.3f} {k * orbit:.6f} {i} "
                             f"{series[k, idx]:.9e}")
    elif kind == "per-sat-input":
        rec = source
        dv = per_spacecraft_input(rec)
        by_id = dict(zip(rec.survivors, dv))
        lines = ["sat_id deorbited delta_v_mps"]
        for i in range(rec.n_original):
            if i in by_id:
                lines.append(f"{i} 0 {by_id[i]:.9e}")
            else:
                lines.append(f"{i} 1 0.0")
    elif kind == "error-vs-neighbors":
        sweep: SweepResult = source
        lines = ["# position error vs neighbor count; log-scale y recommended",
                 "neighbor_count controller position_error_km_mean "
                 "position_error_km_std total_input_mps_mean "
                 "total_input_mps_std"]
        for controller, p, stats in sweep.table_rows():
            lines.append(
                f"{p} {controller} {stats.position_error_mean:.9e} "
                f"{stats.position_error_std:.9e} "
                f"{stats.total_input_mean:.9e} {stats.total_input_std:.9e}")
    else:
        raise ConfigError(
            f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    out_path.write_text("\n".join(lines) + "\n")
    return out_path


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def validate_invariants(n_loops: int = 24) -> list:
    """Run the structural invariant suite on the desk-scale preset.

    Checks: ring neighbor symmetry, thrust-bound feasibility of applied
    inputs, rotational invariance of plans, and bit-exact determinism of
    a repeated seeded run. Returns one CheckResult per check.
    """
    results = []
    cfg = desk_scale_config(n_loops=n_loops)

    topo = apply_deorbit(full_ring_topology(cfg.n_sat, cfg.neighbor_count),
                         _deorbit_event(cfg))
    nbr = topo.neighbor_map()
    symmetric = all(i in nbr[j] for i, row in nbr.items() for j in row)
    results.append(CheckResult(
        "neighbor-symmetry", symmetric,
        f"{len(topo.order)} survivors, p={topo.neighbor_count}"))

    rec_a = run_closed_loop(cfg)
    max_u = float(np.max(np.abs(rec_a.inputs)))
    results.append(CheckResult(
        "box-feasibility", max_u <= cfg.u_max + 1e-15,
        f"max applied |u| = {max_u:.6e} N vs bound {cfg.u_max} N"))

    rec_b = run_closed_loop(cfg)
    same = (np.array_equal(rec_a.states, rec_b.states)
            and np.array_equal(rec_a.inputs, rec_b.inputs)
            and np.array_equal(rec_a.iterations, rec_b.iterations))
    results.append(CheckResult(
        "determinism", same,
        "states, inputs and iteration counts repeat bit-exactly"
        if same else "repeated run diverged"))

    results.append(_rotational_invariance_check(cfg))
    return results


def _rotational_invariance_check(cfg: ScenarioConfig) -> CheckResult:
    """Shift every angle by a constant; plans must not change."""
    from .controllers import NeighborInfo  # local import to avoid cycle noise
    from .dynamics import CylindricalState

    params = cfg.orbit_params()
    model = discretize(build_continuous_model(params), cfg.ts)
    local = LocalController(model, cfg.weights, cfg.horizon, cfg.mass,
                            cfg.u_max, tol=cfg.solver.tol,
                            max_iter=cfg.solver.max_iter)
    shift = 0.7345
    x = CylindricalState(rho=800.0, theta=0.4, z=0.0, rho_dot=0.02,
                         theta_dot=-3e-7, z_dot=0.0)
    x_shift = CylindricalState(rho=x.rho, theta=x.theta + shift, z=x.z,
                               rho_dot=x.rho_dot, theta_dot=x.theta_dot,
                               z_dot=x.z_dot)
    nbrs = NeighborInfo.from_mapping({1: [0.9], 2: [-0.2]})
    nbrs_shift = NeighborInfo.from_mapping({1: [0.9 + shift],
                                            2: [-0.2 + shift]})
    plan_a = local.plan(x, nbrs)
    plan_b = local.plan(x_shift, nbrs_shift)
    dev = float(np.max(np.abs(plan_a.inputs - plan_b.inputs)))
    ok = dev <= 10.0 * cfg.solver.tol
    return CheckResult("rotational-invariance", ok,
                       f"max plan difference {dev:.3e} N under +{shift} rad")
