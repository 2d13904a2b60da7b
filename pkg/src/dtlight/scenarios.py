"""Built-in desk-scale scenarios: two single intersections and a 2x2 grid."""

from __future__ import annotations

from .network import Intersection, Link, Phase, RoadNetwork, TurnSplit

DIRECTIONS = ("N", "E", "S", "W")
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# exit side for a left turn made by traffic arriving from the keyed side
LEFT_EXIT = {"N": "E", "S": "W", "W": "N", "E": "S"}
RIGHT_EXIT = {"N": "W", "S": "E", "W": "S", "E": "N"}

# arrival-rate presets, vehicles/second per approach
RATE_PRESETS = {
    "single-3lane": (0.25, 0.5, 1.0),
    "single-2lane": (0.2, 0.4, 0.8),
    "grid-2x2": (0.2, 0.4, 0.8),
}

SCENARIO_NAMES = tuple(RATE_PRESETS)


def _three_lane_intersection(prefix: str, neighbors: tuple[str, ...] = ()) -> Intersection:
    """Four three-lane approaches (left / through / right) with 8 phases."""
    inc = []
    for d in DIRECTIONS:
        inc += [f"{prefix}{d}_in_L", f"{prefix}{d}_in_T", f"{prefix}{d}_in_R"]
    out = [f"{prefix}{d}_out" for d in DIRECTIONS]

    def thru(d):
        return (f"{prefix}{d}_in_T", f"{prefix}{OPPOSITE[d]}_out")

    def left(d):
        return (f"{prefix}{d}_in_L", f"{prefix}{LEFT_EXIT[d]}_out")

    phases = (
        Phase(0, (thru("N"), thru("S"))),
        Phase(1, (thru("E"), thru("W"))),
        Phase(2, (left("N"), left("S"))),
        Phase(3, (left("E"), left("W"))),
        Phase(4, (thru("N"), left("N"))),
        Phase(5, (thru("S"), left("S"))),
        Phase(6, (thru("E"), left("E"))),
        Phase(7, (thru("W"), left("W"))),
    )
    rights = tuple(
        (f"{prefix}{d}_in_R", f"{prefix}{RIGHT_EXIT[d]}_out") for d in DIRECTIONS
    )
    return Intersection(
        id=prefix.rstrip("_") or "i0",
        incoming_lanes=tuple(inc),
        outgoing_lanes=tuple(out),
        phases=phases,
        neighbors=neighbors,
        permanent_movements=rights,
    )


def _two_lane_intersection(inter_id: str, neighbors: tuple[str, ...] = ()) -> Intersection:
    """Four two-lane approaches (left / through) with 4 phases."""
    prefix = f"{inter_id}_" if neighbors else ""
    inc = []
    for d in DIRECTIONS:
        inc += [f"{prefix}{d}_in_L", f"{prefix}{d}_in_T"]
    out = [f"{prefix}{d}_out" for d in DIRECTIONS]

    def thru(d):
        return (f"{prefix}{d}_in_T", f"{prefix}{OPPOSITE[d]}_out")

    def left(d):
        return (f"{prefix}{d}_in_L", f"{prefix}{LEFT_EXIT[d]}_out")

    phases = (
        Phase(0, (thru("N"), thru("S"))),
        Phase(1, (thru("E"), thru("W"))),
        Phase(2, (left("N"), left("S"))),
        Phase(3, (left("E"), left("W"))),
    )
    return Intersection(
        id=inter_id,
        incoming_lanes=tuple(inc),
        outgoing_lanes=tuple(out),
        phases=phases,
        neighbors=neighbors,
    )


def _single_3lane(rate: float) -> RoadNetwork:
    inter = _three_lane_intersection("")
    # per-approach rate split: 25% left, 50% through, 25% right
    entries = []
    for d in DIRECTIONS:
        entries += [
            (f"{d}_in_L", 0.25 * rate),
            (f"{d}_in_T", 0.50 * rate),
            (f"{d}_in_R", 0.25 * rate),
        ]
    return RoadNetwork(
        name="single-3lane",
        intersections=(inter,),
        entry_lanes=tuple(entries),
    )


def _single_2lane(rate: float) -> RoadNetwork:
    inter = _two_lane_intersection("i0")
    entries = []
    for d in DIRECTIONS:
        entries += [(f"{d}_in_L", 0.3 * rate), (f"{d}_in_T", 0.7 * rate)]
    return RoadNetwork(
        name="single-2lane",
        intersections=(inter,),
        entry_lanes=tuple(entries),
    )


def _grid_2x2(rate: float) -> RoadNetwork:
    coords = {(0, 0): "i00", (0, 1): "i01", (1, 0): "i10", (1, 1): "i11"}
    offsets = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}

    def neighbor(rc, side):
        dr, dc = offsets[side]
        return coords.get((rc[0] + dr, rc[1] + dc))

    inters = []
    for rc, iid in coords.items():
        nbs = tuple(sorted(n for s in DIRECTIONS if (n := neighbor(rc, s))))
        inters.append(_two_lane_intersection(iid, neighbors=nbs))

    links, splits, entries = [], [], []
    for rc, iid in coords.items():
        for side in DIRECTIONS:
            nb = neighbor(rc, side)
            out_lane = f"{iid}_{side}_out"
            if nb is not None:
                # traffic leaving towards `nb` arrives there from the opposite side
                dst_t = f"{nb}_{OPPOSITE[side]}_in_T"
                dst_l = f"{nb}_{OPPOSITE[side]}_in_L"
                links.append(Link(src=out_lane, dst=dst_t))
                splits.append(TurnSplit(lane=dst_t, partner=dst_l, prob=0.25))
            else:
                # boundary approach on this side is a network entry
                entries += [
                    (f"{iid}_{side}_in_L", 0.3 * rate),
                    (f"{iid}_{side}_in_T", 0.7 * rate),
                ]
    return RoadNetwork(
        name="grid-2x2",
        intersections=tuple(inters),
        links=tuple(links),
        entry_lanes=tuple(entries),
        turn_splits=tuple(splits),
    )


def build_scenario(name: str, rate_preset: int = 1, rate: float | None = None) -> RoadNetwork:
    """Build one of the named scenarios.

    `rate_preset` indexes the per-scenario arrival presets; an explicit
    `rate` (veh/s per approach) overrides the preset.
    """
    if name not in RATE_PRESETS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")
    if rate is None:
        presets = RATE_PRESETS[name]
        if not 0 <= rate_preset < len(presets):
            raise ValueError(f"rate_preset must be in [0, {len(presets)})")
        rate = presets[rate_preset]
    if rate <= 0:
        raise ValueError("arrival rate must be positive")
    if name == "single-3lane":
        return _single_3lane(rate)
    if name == "single-2lane":
        return _single_2lane(rate)
    return _grid_2x2(rate)
