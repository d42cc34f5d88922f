"""Domain types and pure kinematics for a signalized intersection.

Positions are 1-D arc lengths measured from the control-zone entry of each
lane.  All types here are immutable value objects and all operations are
pure functions, so they can be shared freely between concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CAV = "cav"
HDV = "hdv"


@dataclass(frozen=True)
class LaneGeometry:
    """Geometry of one approach lane.

    Attributes:
        lane_id: Integer lane identifier.
        control_zone_length: Length of the upstream control segment [m].
        stop_line_pos: Stop-line position from the zone entry [m].
        conflict_nodes: Tuple of ``(node_id, own_pos)`` pairs; ``own_pos`` is
            the arc position of the conflict point along this lane [m].
        downstream_length: Length of the segment past the stop line [m].
    """

    lane_id: int
    control_zone_length: float
    stop_line_pos: float
    conflict_nodes: tuple[tuple[int, float], ...]
    downstream_length: float

    def __post_init__(self):
        total = self.control_zone_length + self.downstream_length
        if not 0.0 < self.stop_line_pos < total:
            raise ValueError(
                f"lane {self.lane_id}: stop line {self.stop_line_pos} outside (0, {total})"
            )
        for node_id, pos in self.conflict_nodes:
            if pos <= self.stop_line_pos:
                raise ValueError(
                    f"lane {self.lane_id}: conflict node {node_id} at {pos} is not "
                    f"past the stop line {self.stop_line_pos}"
                )

    @property
    def exit_pos(self) -> float:
        return self.control_zone_length + self.downstream_length

    def node_pos(self, node_id: int) -> float:
        for nid, pos in self.conflict_nodes:
            if nid == node_id:
                return pos
        raise KeyError(f"lane {self.lane_id} has no conflict node {node_id}")

    def has_node(self, node_id: int) -> bool:
        return any(nid == node_id for nid, _ in self.conflict_nodes)


@dataclass(frozen=True)
class Intersection:
    """All lanes of the intersection plus the conflict-node topology."""

    lanes: dict[int, LaneGeometry]

    def __post_init__(self):
        owners: dict[int, list[int]] = {}
        for lane in self.lanes.values():
            for node_id, _ in lane.conflict_nodes:
                owners.setdefault(node_id, []).append(lane.lane_id)
        for node_id, lane_ids in owners.items():
            if len(lane_ids) != 2:
                raise ValueError(
                    f"conflict node {node_id} listed on lanes {sorted(lane_ids)}; "
                    "must appear on exactly two lanes"
                )
        object.__setattr__(
            self,
            "_node_pair",
            {n: (min(ls), max(ls)) for n, ls in owners.items()},
        )

    @property
    def node_pairs(self) -> dict[int, tuple[int, int]]:
        return dict(self._node_pair)

    def shared_nodes(self, l: int, m: int) -> tuple[int, ...]:
        key = (min(l, m), max(l, m))
        return tuple(sorted(n for n, pair in self._node_pair.items() if pair == key))

    def conflicting_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(set(self._node_pair.values())))

    def phi(self, lane_id: int, node_id: int) -> float:
        return self.lanes[lane_id].node_pos(node_id)


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one vehicle at a time step.

    ``vid`` is ``(lane_id, entry_seq)``; the entry sequence is stable for the
    vehicle's lifetime, and ordering by it matches ordering by position since
    lane changing and overtaking are not modeled.
    """

    vid: tuple[int, int]
    kind: str
    pos: float
    speed: float
    last_accels: tuple[float, ...] = ()
    entry_time: float = 0.0
    exit_time: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (CAV, HDV):
            raise ValueError(f"unknown vehicle kind {self.kind!r}")
        if self.exit_time is not None and self.exit_time < self.entry_time:
            raise ValueError("exit_time precedes entry_time")

    @property
    def lane_id(self) -> int:
        return self.vid[0]


@dataclass(frozen=True)
class LightState:
    """Signal state of one lane: 0 = red, 1 = green, plus last switch step."""

    s: int
    last_switch: int = 0

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"light state must be 0 or 1, got {self.s}")


@dataclass(frozen=True)
class HorizonParams:
    """Receding-horizon window: ``steps`` decision steps of ``dt`` seconds
    starting at step index ``k0``."""

    steps: int
    dt: float
    k0: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("horizon must be at least 1 step")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Problem constants shared by the builder, solvers and simulator.

    ``delta_min``/``delta_max`` are counted in steps.  ``est_horizon`` is the
    number of recent samples used to estimate a human driver's acceleration.
    """

    v_min: float = 0.0
    v_max: float = 15.0
    u_min: float = -4.0
    u_max: float = 3.0
    tau: float = 1.0
    d_min: float = 6.0
    delta_min: int = 20
    delta_max: int = 100
    w_p: float = 1.0
    w_u: float = 0.1
    big_m: float = 1e3
    rho: float = 1e6
    eps_term: float = 1e-6
    est_horizon: int = 5

    def __post_init__(self):
        if not self.u_min < 0.0 < self.u_max:
            raise ValueError("need u_min < 0 < u_max")
        if not 0.0 <= self.v_min < self.v_max:
            raise ValueError("need 0 <= v_min < v_max")
        if self.delta_min > self.delta_max:
            raise ValueError("need delta_min <= delta_max")
        for name in ("tau", "d_min", "w_p", "w_u", "big_m", "rho", "eps_term"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.est_horizon < 1:
            raise ValueError("est_horizon must be at least 1")
        # The penalty weight must dominate the big-M constant by a wide
        # margin, otherwise penalty trades can undercut disjunctive rows.
        if self.rho < 1e3 * self.big_m:
            raise ValueError("rho must exceed big_m by at least 1e3")


@dataclass(frozen=True)
class WorldState:
    """Snapshot of the intersection at one time step.

    ``vehicles[lane]`` is ordered front to back: element ``i-1`` is strictly
    ahead of element ``i``.
    """

    step: int
    vehicles: dict[int, tuple[VehicleState, ...]]
    lights: dict[int, LightState]

    def validate(self, geometry: Intersection, params: ModelParams) -> None:
        for lane_id, vehs in self.vehicles.items():
            if lane_id not in geometry.lanes:
                raise ValueError(f"vehicles on unknown lane {lane_id}")
            for i, veh in enumerate(vehs):
                if veh.vid[0] != lane_id:
                    raise ValueError(f"vehicle {veh.vid} stored on lane {lane_id}")
                if not params.v_min <= veh.speed <= params.v_max + 1e-9:
                    raise ValueError(f"vehicle {veh.vid} speed {veh.speed} out of range")
                if i > 0 and vehs[i - 1].pos <= veh.pos:
                    raise ValueError(
                        f"lane {lane_id}: vehicle order violated at index {i}"
                    )
        for lane_id, light in self.lights.items():
            if light.last_switch > self.step:
                raise ValueError(f"lane {lane_id}: last switch in the future")

    def all_vehicles(self):
        for lane_id in sorted(self.vehicles):
            yield from self.vehicles[lane_id]


def light_schedule(s0: int, kappa: int, horizon: int) -> np.ndarray:
    """Light states at offsets 1..horizon given a single switch at ``kappa``.

    Offset ``d`` holds ``1 - s0`` if ``d >= kappa`` and ``s0`` otherwise, so
    ``kappa = horizon + 2`` (and ``horizon + 1``) leaves every decided offset
    unchanged.

    Args:
        s0: Current light state, 0 or 1.
        kappa: Switch offset in ``{1, ..., horizon + 2}``.
        horizon: Number of decided offsets.

    Returns:
        Integer array of length ``horizon`` with values in {0, 1}.
    """
    if s0 not in (0, 1):
        raise ValueError(f"light state must be 0 or 1, got {s0}")
    if not 1 <= kappa <= horizon + 2:
        raise ValueError(f"kappa {kappa} outside [1, {horizon + 2}]")
    offsets = np.arange(1, horizon + 1)
    return np.where(offsets >= kappa, 1 - s0, s0).astype(np.int64)


def kappa_bounds(
    last_switch: int, k0: int, delta_min: int, delta_max: int, horizon: int
) -> tuple[int, int]:
    """Admissible switch-offset interval respecting the min/max switch gaps.

    The min/max guards keep the interval nonempty inside [1, horizon + 2]
    even when the gaps would otherwise push it outside the horizon.
    """
    if last_switch > k0:
        raise ValueError("last switch must not be in the future")
    lo = min(delta_min + last_switch - k0, horizon + 2)
    hi = max(delta_max + last_switch - k0, 1)
    lo = max(1, min(lo, horizon + 2))
    hi = max(1, min(hi, horizon + 2))
    return int(lo), int(hi)


def step_dynamics(p: float, v: float, u: float, dt: float) -> tuple[float, float]:
    """One step of the discrete double integrator (no limit clamping here)."""
    return p + dt * v + 0.5 * dt * dt * u, v + dt * u


def has_lateral_conflict(
    a: VehicleState,
    b: VehicleState,
    geom_a: LaneGeometry,
    geom_b: LaneGeometry,
    node_id: int,
) -> bool:
    """Whether the pair still conflicts at the shared node.

    A vehicle counts as having crossed a landmark once ``pos >= landmark``,
    so the pair conflicts only while both are strictly before the node.
    """
    if geom_a.lane_id == geom_b.lane_id:
        raise ValueError("vehicles must travel on distinct lanes")
    if a.vid[0] != geom_a.lane_id or b.vid[0] != geom_b.lane_id:
        raise ValueError("vehicle/lane geometry mismatch")
    if not (geom_a.has_node(node_id) and geom_b.has_node(node_id)):
        raise ValueError(f"node {node_id} is not shared by lanes "
                         f"{geom_a.lane_id} and {geom_b.lane_id}")
    return a.pos < geom_a.node_pos(node_id) and b.pos < geom_b.node_pos(node_id)


def brake_rollout(
    p0: float, v0: float, u_brake: float, horizon: int, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximal-braking trajectory: hold ``u_brake`` until rest, then coast.

    The step on which the speed would cross zero uses a reduced input so the
    speed lands exactly on zero.

    Returns:
        ``(p, v, u)`` with positions and speeds at offsets 1..horizon and
        inputs at offsets 0..horizon-1.
    """
    if u_brake >= 0:
        raise ValueError("braking input must be negative")
    p = np.empty(horizon)
    v = np.empty(horizon)
    u = np.empty(horizon)
    cur_p, cur_v = p0, v0
    for d in range(horizon):
        ud = u_brake if cur_v + dt * u_brake >= 0.0 else -cur_v / dt
        if cur_v <= 0.0:
            ud = 0.0
        cur_p, cur_v = step_dynamics(cur_p, cur_v, ud, dt)
        cur_v = max(cur_v, 0.0)
        p[d], v[d], u[d] = cur_p, cur_v, ud
    return p, v, u
