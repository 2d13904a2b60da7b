"""Static road network topology: lanes, phases, intersections, links."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Phase:
    """A set of simultaneously-green, non-conflicting movements."""

    id: int
    movements: tuple[tuple[str, str], ...]  # (incoming lane, outgoing lane)
    saturation_flow: int = 10  # vehicles per control step per movement

    def __post_init__(self):
        if not self.movements:
            raise ValueError(f"phase {self.id} has no movements")
        if self.saturation_flow < 1:
            raise ValueError(f"phase {self.id}: saturation_flow must be >= 1")


@dataclass(frozen=True)
class Intersection:
    id: str
    incoming_lanes: tuple[str, ...]
    outgoing_lanes: tuple[str, ...]
    phases: tuple[Phase, ...]
    neighbors: tuple[str, ...] = ()
    # movements that are always permitted regardless of the active phase
    # (right turns); served with their own saturation flow
    permanent_movements: tuple[tuple[str, str], ...] = ()
    permanent_saturation: int = 10

    def __post_init__(self):
        if len(self.phases) < 2:
            raise ValueError(f"intersection {self.id} needs at least 2 phases")
        lanes = set(self.incoming_lanes) | set(self.outgoing_lanes)
        for ph in self.phases:
            for src, dst in ph.movements:
                if src not in self.incoming_lanes or dst not in self.outgoing_lanes:
                    raise ValueError(
                        f"intersection {self.id} phase {ph.id}: movement "
                        f"({src}, {dst}) references unknown lanes"
                    )
        for src, dst in self.permanent_movements:
            if src not in lanes or dst not in lanes:
                raise ValueError(f"intersection {self.id}: bad permanent movement")

    def phase_ids(self) -> list[int]:
        return [ph.id for ph in self.phases]


@dataclass(frozen=True)
class Link:
    """Directed connection between two lanes with a free-flow travel time."""

    src: str
    dst: str
    travel_time_s: float = 20.0


@dataclass(frozen=True)
class TurnSplit:
    """Fraction of vehicles arriving on `lane` that divert to `partner` on queue entry."""

    lane: str
    partner: str
    prob: float = 0.25


@dataclass(frozen=True)
class RoadNetwork:
    name: str
    intersections: tuple[Intersection, ...]
    links: tuple[Link, ...] = ()
    entry_lanes: tuple[tuple[str, float], ...] = ()  # (incoming lane, veh/s)
    entry_travel_time_s: float = 20.0
    turn_splits: tuple[TurnSplit, ...] = ()
    horizon_s: int = 3600
    control_step_s: int = 10

    def __post_init__(self):
        if self.control_step_s <= 0 or self.horizon_s <= 0:
            raise ValueError("horizon_s and control_step_s must be positive")
        if self.horizon_s % self.control_step_s != 0:
            raise ValueError("horizon_s must be a multiple of control_step_s")
        incoming = {ln for it in self.intersections for ln in it.incoming_lanes}
        outgoing = {ln for it in self.intersections for ln in it.outgoing_lanes}
        for it in self.intersections:
            overlap = set(it.incoming_lanes) & set(it.outgoing_lanes)
            if overlap:
                raise ValueError(
                    f"intersection {it.id}: lanes both entry and exit: {overlap}"
                )
        for lk in self.links:
            if lk.src not in outgoing or lk.dst not in incoming:
                raise ValueError(f"link {lk.src}->{lk.dst} references unknown lanes")
        for lane, rate in self.entry_lanes:
            if lane not in incoming:
                raise ValueError(f"entry lane {lane} is not an incoming lane")
            if rate <= 0:
                raise ValueError(f"entry lane {lane}: rate must be positive")
        ids = {it.id for it in self.intersections}
        by_id = {it.id: it for it in self.intersections}
        for it in self.intersections:
            for nb in it.neighbors:
                if nb not in ids or it.id not in by_id[nb].neighbors:
                    raise ValueError(
                        f"neighbors not symmetric between {it.id} and {nb}"
                    )

    @property
    def num_steps(self) -> int:
        return self.horizon_s // self.control_step_s

    def intersection(self, inter_id: str) -> Intersection:
        for it in self.intersections:
            if it.id == inter_id:
                return it
        raise KeyError(f"unknown intersection {inter_id}")

    def sorted_intersections(self) -> list[Intersection]:
        return sorted(self.intersections, key=lambda it: it.id)

    def downstream_lane(self, out_lane: str) -> str | None:
        """Incoming lane fed by `out_lane`, or None at the network boundary."""
        for lk in self.links:
            if lk.src == out_lane:
                return lk.dst
        return None
