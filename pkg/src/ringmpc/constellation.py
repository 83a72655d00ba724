"""Ring ordering, deorbit events, and the information-exchange layer.

Spacecraft ids are their slots in the launch ring (ascending initial
angle). After a deorbit event the survivors keep their ids; neighbor
sets are rebuilt over the survivor ring and then frozen for the whole
run, so the consensus graph the controllers see is constant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .controllers import (CONTROLLER_CENT, CONTROLLER_FD, CONTROLLER_IS,
                          ControlPlan, NeighborInfo)
from .dynamics import CylindricalState, OrbitParams
from .errors import InvalidArgumentError, ScenarioError


def initial_ring(n_sat: int, params: OrbitParams) -> list:
    """Equally spaced circular co-orbit: spacecraft i at angle 2*pi*i/n."""
    if n_sat < 2:
        raise InvalidArgumentError(f"need at least 2 spacecraft, got {n_sat}")
    del params  # the ring is defined by angles alone
    step = 2.0 * math.pi / n_sat
    return [CylindricalState(rho=0.0, theta=i * step, z=0.0,
                             rho_dot=0.0, theta_dot=0.0, z_dot=0.0)
            for i in range(n_sat)]


@dataclass(frozen=True)
class DeorbitEvent:
    """Ids removed from the ring at simulation start."""

    ids: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("deorbit ids must be distinct")
        if any(i < 0 for i in ids):
            raise InvalidArgumentError("deorbit ids must be nonnegative")
        object.__setattr__(self, "ids", tuple(sorted(ids)))


def draw_deorbit_event(n_sat: int, n_deorbit: int, seed: int) -> DeorbitEvent:
    """Uniform without replacement; the seed pins the whole scenario."""
    if not 0 <= n_deorbit <= n_sat:
        raise InvalidArgumentError(
            f"cannot deorbit {n_deorbit} of {n_sat} spacecraft")
    rng = np.random.default_rng(seed)
    ids = rng.choice(n_sat, size=n_deorbit, replace=False)
    return DeorbitEvent(ids=tuple(int(i) for i in ids))


@dataclass(frozen=True)
class RingTopology:
    """Survivor ring order and fixed neighbor sets of size p.

    Neighbors are the p/2 survivors ahead and p/2 behind in ring order.
    When p exceeds the survivor count minus one, wrapping necessarily
    repeats ids (e.g. two spacecraft each see the other twice); repeats
    carry multiplicity in the setpoint mean but never include self.
    """

    order: tuple               # survivor ids in ring order
    neighbor_count: int        # p
    neighbors: tuple           # tuple of (id, tuple-of-neighbor-ids)

    @classmethod
    def build(cls, order: Sequence[int], neighbor_count: int) -> "RingTopology":
        order = tuple(int(i) for i in order)
        ns = len(order)
        if ns < 2:
            raise ScenarioError(
                f"a ring needs at least 2 spacecraft, got {ns}")
        p = int(neighbor_count)
        if p < 2 or p % 2 != 0:
            raise InvalidArgumentError(
                f"neighbor count must be even and >= 2, got {p}")
        half = p // 2
        rows = []
        for idx, i in enumerate(order):
            ahead = [order[(idx + s) % ns] for s in range(1, half + 1)]
            behind = [order[(idx - s) % ns] for s in range(1, half + 1)]
            row = tuple(ahead + behind)
            if i in row:
                raise ScenarioError(
                    f"neighbor count {p} wraps onto spacecraft {i} itself "
                    f"with only {ns} survivors")
            rows.append((i, row))
        return cls(order=order, neighbor_count=p, neighbors=tuple(rows))

    def neighbor_map(self) -> dict:
        return {i: row for i, row in self.neighbors}

    def index_of(self, sat_id: int) -> int:
        return self.order.index(sat_id)

    def neighbor_rows_by_position(self) -> list:
        """Neighbor ids re-expressed as ring positions, for joint solves."""
        pos = {i: idx for idx, i in enumerate(self.order)}
        return [[pos[j] for j in row] for _, row in self.neighbors]


def full_ring_topology(n_sat: int, neighbor_count: int) -> RingTopology:
    return RingTopology.build(range(n_sat), neighbor_count)


def apply_deorbit(topology: RingTopology, event: DeorbitEvent) -> RingTopology:
    """Remove the event's ids and rebuild neighbor sets over survivors.

    Ids not present are ignored, so applying an event twice is the same
    as applying it once.
    """
    removed = set(event.ids)
    survivors = [i for i in topology.order if i not in removed]
    if len(survivors) < 2:
        raise ScenarioError(
            f"deorbit leaves {len(survivors)} spacecraft; need at least 2")
    return RingTopology.build(survivors, topology.neighbor_count)


@dataclass(frozen=True, eq=False)
class TrajectoryMessage:
    """One shared prediction: sender, step index, angles over the horizon."""

    sender: int
    step: int
    thetas: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        if thetas.ndim != 1 or not np.all(np.isfinite(thetas)):
            raise InvalidArgumentError("message trajectory must be finite 1-d")
        object.__setattr__(self, "thetas", thetas)

    def to_json_line(self) -> str:
        return json.dumps({"sender": self.sender, "step": self.step,
                           "length": int(self.thetas.size),
                           "thetas": self.thetas.tolist()})

    @classmethod
    def from_json_line(cls, line: str) -> "TrajectoryMessage":
        obj = json.loads(line)
        thetas = np.asarray(obj["thetas"], dtype=float)
        if int(obj["length"]) != thetas.size:
            raise InvalidArgumentError("message length field mismatch")
        return cls(sender=int(obj["sender"]), step=int(obj["step"]),
                   thetas=thetas)


@dataclass(frozen=True)
class ExchangeResult:
    infos: dict                # sat id -> NeighborInfo
    messages: tuple            # TrajectoryMessage sent this step
    degraded: tuple            # (step, receiver, neighbor) fallback events


def exchange(step: int, topology: RingTopology,
             current_thetas: Mapping[int, float],
             prev_plans: Optional[Mapping[int, ControlPlan]],
             regime: str, horizon: int, ts: float,
             drop: Optional[Mapping[int, Sequence[int]]] = None
             ) -> ExchangeResult:
    """Assemble per-spacecraft neighbor information for one step.

    Sensing mode (fd) carries only current angles. Sharing mode (is)
    carries each neighbor's previous plan shifted one step; where no
    plan exists (step 0, or a link listed in `drop` as receiver ->
    blocked senders) the neighbor degrades to its current angle and the
    event is recorded.
    """
    if regime == CONTROLLER_CENT:
        return ExchangeResult(infos={}, messages=(), degraded=())
    if regime not in (CONTROLLER_FD, CONTROLLER_IS):
        raise InvalidArgumentError(f"unknown information regime {regime!r}")

    infos = {}
    messages = []
    degraded = []
    shifted = {}
    if regime == CONTROLLER_IS and prev_plans:
        for j, plan in prev_plans.items():
            traj = plan.shifted_theta(horizon, ts)
            shifted[j] = traj
            messages.append(TrajectoryMessage(sender=j, step=step,
                                              thetas=traj))
    for i, row in topology.neighbors:
        data = {}
        for j in set(row):
            blocked = drop is not None and j in drop.get(i, ())
            if regime == CONTROLLER_IS and j in shifted and not blocked:
                data[j] = shifted[j]
            else:
                data[j] = [current_thetas[j]]
                if regime == CONTROLLER_IS and prev_plans \
                        and (blocked or j not in shifted):
                    degraded.append((step, i, j))
        infos[i] = NeighborInfo.from_mapping(data)
    return ExchangeResult(infos=infos, messages=tuple(messages),
                          degraded=tuple(degraded))
