"""Exact routing baseline for the delivery environment.

A snapshot of the environment becomes a small pickup-and-delivery
instance: one pickup/delivery node pair per not-yet-picked-up order, one
bare delivery node per order already in the vehicle, and restaurant
nodes for the final return. The solver maximizes accepted revenue minus
travel cost subject to capacity, pickup-before-delivery, and per-order
deadlines, by depth-first search over acceptance subsets and visit
orders with bound/capacity/deadline pruning; at the sizes the
controller feeds it, this is exact.

If the committed orders alone cannot all meet their deadlines, the
instance has no feasible solution as formulated; a second pass then
keeps capacity hard but lets deadlines slip, routes everything that was
committed, and reports which nodes arrive late (the environment levies
its own penalties).

The controller replans when a new order appears, when a tracked order
vanishes for any reason other than our own delivery, or once when the
plan runs out, and otherwise translates the active route leg into one
environment action per step.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from ..core import ConfigError, Policy
from .env import ACCEPTED, OPEN, PICKED_UP, CityConfig, VrpState, manhattan

__all__ = [
    "MipInstance",
    "MipSolution",
    "build_instance",
    "solve",
    "exhaustive_oracle",
    "objective_of",
    "dump_instance",
    "load_instance",
    "MipControllerPolicy",
]


@dataclass(frozen=True)
class MipInstance:
    """Node 0 is the vehicle; pickups are 1..n, deliveries n+1..2n
    (delivery of order k sits at pickup-of-k plus n), then transit
    nodes, then restaurants. ``accepted`` holds 0-based order indices
    whose acceptance is forced."""

    coords: tuple[tuple[int, int], ...]
    n: int
    n_transit: int
    accepted: frozenset[int]
    revenues: tuple[float, ...]           # per order, index 0..n-1
    deadlines: tuple[float, ...]          # per delivery node then per transit node
    move_cost: float
    time_per_cell: float
    service_time: float
    capacity: int
    big_m: float
    # environment bookkeeping so the controller can translate plans back
    # into actions; the solver and the oracle ignore these
    order_slots: tuple[int, ...] = ()
    transit_slots: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.revenues) != self.n or self.accepted - set(range(self.n)):
            raise ConfigError("revenues/accepted must index the n orders")
        if len(self.deadlines) != self.n + self.n_transit:
            raise ConfigError("need one deadline per delivery and transit node")
        if self.n_restaurants < 1:
            raise ConfigError("at least one restaurant node is required")

    @property
    def node_count(self) -> int:
        return len(self.coords)

    @property
    def n_restaurants(self) -> int:
        return self.node_count - 1 - 2 * self.n - self.n_transit

    def pickup_node(self, k: int) -> int:
        return 1 + k

    def delivery_node(self, k: int) -> int:
        return 1 + self.n + k

    def transit_node(self, j: int) -> int:
        return 1 + 2 * self.n + j

    def restaurant_node(self, j: int) -> int:
        return 1 + 2 * self.n + self.n_transit + j

    def node_deadline(self, node: int) -> float:
        return self.deadlines[node - 1 - self.n]

    def distance(self, i: int, j: int) -> int:
        return manhattan(self.coords[i], self.coords[j])


@dataclass(frozen=True)
class MipSolution:
    objective: float
    accepted: tuple[int, ...]              # order indices with y = 1
    route: tuple[int, ...]                 # node sequence, 0 ... restaurant
    arrival_times: tuple[float, ...]       # time reached, per route node
    loads: tuple[int, ...]                 # vehicle load after each route node
    deadline_violations: tuple[int, ...]   # nodes visited after their deadline

    def arcs(self) -> list[tuple[int, int]]:
        return list(zip(self.route, self.route[1:]))

    @property
    def feasible(self) -> bool:
        return not self.deadline_violations


def build_instance(state: VrpState, config: CityConfig,
                   open_slots: list[int] | None = None) -> MipInstance:
    """Snapshot the live orders into an instance.

    ``open_slots`` optionally restricts which open orders are modeled
    (accepted and picked-up orders are always included); the controller
    uses it to stay under the solver's exactness cap.
    """
    pairs = []      # (slot, order) still needing pickup
    transit = []    # (slot, order) already in the vehicle
    for slot, order in enumerate(state.orders):
        if order is None:
            continue
        if order.status == PICKED_UP:
            transit.append((slot, order))
        elif order.status == ACCEPTED:
            pairs.append((slot, order))
        elif order.status == OPEN and (open_slots is None or slot in open_slots):
            pairs.append((slot, order))
    n = len(pairs)
    coords = [state.driver]
    coords += [o.pickup for _, o in pairs]
    coords += [o.delivery for _, o in pairs]
    coords += [o.delivery for _, o in transit]
    coords += list(state.pickups)
    deadlines = tuple(float(config.time_window - o.elapsed)
                      for _, o in pairs + transit)
    span = sum(config.map_size)
    big_m = float(span * (2 * n + len(transit) + 2) + (n + len(transit) + 2))
    return MipInstance(
        coords=tuple(coords), n=n, n_transit=len(transit),
        accepted=frozenset(k for k, (_, o) in enumerate(pairs)
                           if o.status == ACCEPTED),
        revenues=tuple(o.value for _, o in pairs), deadlines=deadlines,
        move_cost=config.move_cost, time_per_cell=1.0, service_time=1.0,
        capacity=config.capacity, big_m=big_m,
        order_slots=tuple(s for s, _ in pairs),
        transit_slots=tuple(s for s, _ in transit),
    )


def _route_nodes(inst: MipInstance, chosen: tuple[int, ...]) -> list[int]:
    nodes = [inst.transit_node(j) for j in range(inst.n_transit)]
    for k in chosen:
        nodes.append(inst.pickup_node(k))
        nodes.append(inst.delivery_node(k))
    return nodes


def _is_pickup(inst: MipInstance, node: int) -> bool:
    return 1 <= node <= inst.n


def _start_time(inst: MipInstance, chosen: tuple[int, ...]) -> float:
    # one service slot per newly accepted order before the vehicle moves
    return inst.service_time * sum(1 for k in chosen if k not in inst.accepted)


def _walk_route(inst: MipInstance, chosen: tuple[int, ...], order: list[int],
                restaurant: int, hard_deadlines: bool):
    """Validate a fixed visit order ending at the given restaurant node.
    Returns (cost, times, loads, violations) or None on a capacity or
    hard-deadline failure."""
    t = _start_time(inst, chosen)
    load = inst.n_transit
    if load > inst.capacity:
        return None
    pos = 0
    cost = 0.0
    times = [t]
    loads = [load]
    violations = []
    for node in order:
        dist = inst.distance(pos, node)
        t += inst.service_time + dist * inst.time_per_cell
        cost += dist
        if _is_pickup(inst, node):
            load += 1
            if load > inst.capacity:
                return None
        else:
            load -= 1
            if t > inst.node_deadline(node):
                if hard_deadlines:
                    return None
                violations.append(node)
        pos = node
        times.append(t)
        loads.append(load)
    dist = inst.distance(pos, restaurant)
    cost += dist
    times.append(t + inst.service_time + dist * inst.time_per_cell)
    loads.append(load)
    return cost, times, loads, violations


def _nearest_restaurant(inst: MipInstance, pos: int) -> int:
    return min((inst.restaurant_node(j) for j in range(inst.n_restaurants)),
               key=lambda r: inst.distance(pos, r))


def _search_routes(inst: MipInstance, chosen: tuple[int, ...], revenue: float,
                   incumbent: float, hard_deadlines: bool):
    """Depth-first search over visit orders for a fixed acceptance set.
    Returns the best strictly-above-incumbent (objective, route, times,
    loads, violations), or None."""
    if inst.n_transit > inst.capacity:
        return None
    targets = _route_nodes(inst, chosen)
    n_nodes = len(targets)
    m = inst.move_cost
    best = None
    best_obj = incumbent
    stack = [(0, _start_time(inst, chosen), inst.n_transit, 0.0, frozenset(), ())]
    while stack:
        pos, t, load, cost, visited, order = stack.pop()
        if revenue - m * cost <= best_obj:
            continue  # remaining legs only add cost
        if len(visited) == n_nodes:
            r_node = _nearest_restaurant(inst, pos)
            obj = revenue - m * (cost + inst.distance(pos, r_node))
            if obj > best_obj:
                walked = _walk_route(inst, chosen, list(order), r_node,
                                     hard_deadlines)
                _, times, loads, violations = walked
                best = (obj, order + (r_node,), tuple(times), tuple(loads),
                        tuple(violations))
                best_obj = obj
            continue
        for node in targets:
            if node in visited:
                continue
            if not _is_pickup(inst, node):
                k = node - 1 - inst.n
                if 0 <= k < inst.n and inst.pickup_node(k) not in visited:
                    continue  # pickup must precede delivery
                nload = load - 1
            else:
                nload = load + 1
                if nload > inst.capacity:
                    continue
            dist = inst.distance(pos, node)
            nt = t + inst.service_time + dist * inst.time_per_cell
            if (hard_deadlines and not _is_pickup(inst, node)
                    and nt > inst.node_deadline(node)):
                continue
            stack.append((node, nt, nload, cost + dist,
                          visited | {node}, order + (node,)))
    return best


def solve(instance: MipInstance, exactness_cap: int = 6) -> MipSolution:
    """Exact maximum of accepted revenue minus travel cost.

    Acceptance subsets containing the forced orders are tried in
    descending-revenue order so the incumbent bound can cut the rest;
    routes are searched depth-first per subset. Falls back to the
    soft-deadline pass when the committed orders are jointly unroutable
    inside their windows.
    """
    total = instance.n + instance.n_transit
    if total > exactness_cap:
        raise ValueError(
            f"instance has {total} orders, above the exactness cap "
            f"{exactness_cap}; reduce the instance (the controller drops "
            f"excess open orders) or raise the cap")
    subsets = []
    for bits in range(1 << instance.n):
        chosen = tuple(k for k in range(instance.n) if bits >> k & 1)
        if instance.accepted.issubset(chosen):
            subsets.append((sum(instance.revenues[k] for k in chosen), chosen))
    subsets.sort(key=lambda rc: (-rc[0], rc[1]))

    best = None
    best_obj = -float("inf")
    for revenue, chosen in subsets:
        if best is not None and revenue <= best_obj:
            break  # later subsets earn even less before costs
        found = _search_routes(instance, chosen, revenue, best_obj,
                               hard_deadlines=True)
        if found is not None:
            obj, order, times, loads, violations = found
            best = MipSolution(obj, chosen, (0,) + order, times, loads,
                               violations)
            best_obj = obj
    if best is not None:
        return best

    # committed orders cannot all make their windows: route them anyway,
    # accept nothing new, and report what arrives late
    chosen = tuple(sorted(instance.accepted))
    revenue = sum(instance.revenues[k] for k in chosen)
    found = _search_routes(instance, chosen, revenue, -float("inf"),
                           hard_deadlines=False)
    if found is None:
        raise RuntimeError("no capacity-feasible route exists")  # unreachable
    obj, order, times, loads, violations = found
    return MipSolution(obj, chosen, (0,) + order, times, loads, violations)


def _precedence_ok(inst: MipInstance, order: tuple[int, ...]) -> bool:
    seen = set()
    for node in order:
        if not _is_pickup(inst, node):
            k = node - 1 - inst.n
            if 0 <= k < inst.n and inst.pickup_node(k) not in seen:
                return False
        seen.add(node)
    return True


def _oracle_pass(inst: MipInstance, subsets, hard_deadlines: bool):
    best = None
    for revenue, chosen in subsets:
        nodes = _route_nodes(inst, chosen)
        for order in permutations(nodes):
            if not _precedence_ok(inst, order):
                continue
            for j in range(inst.n_restaurants):
                r_node = inst.restaurant_node(j)
                walked = _walk_route(inst, chosen, list(order), r_node,
                                     hard_deadlines)
                if walked is None:
                    continue
                cost, times, loads, violations = walked
                obj = revenue - inst.move_cost * cost
                if best is None or obj > best.objective + 1e-12:
                    best = MipSolution(obj, chosen, (0,) + order + (r_node,),
                                       tuple(times), tuple(loads),
                                       tuple(violations))
    return best


def exhaustive_oracle(instance: MipInstance, size_cap: int = 4) -> MipSolution:
    """Brute-force reference: every acceptance subset, every
    precedence-valid visit order, every closing restaurant."""
    total = instance.n + instance.n_transit
    if total > size_cap:
        raise ValueError(f"oracle limited to {size_cap} orders, got {total}")
    subsets = []
    for bits in range(1 << instance.n):
        chosen = tuple(k for k in range(instance.n) if bits >> k & 1)
        if instance.accepted.issubset(chosen):
            subsets.append((sum(instance.revenues[k] for k in chosen), chosen))
    best = _oracle_pass(instance, subsets, hard_deadlines=True)
    if best is not None:
        return best
    chosen = tuple(sorted(instance.accepted))
    revenue = sum(instance.revenues[k] for k in chosen)
    return _oracle_pass(instance, [(revenue, chosen)], hard_deadlines=False)


def objective_of(instance: MipInstance, solution: MipSolution) -> float:
    """Recompute revenue-minus-travel-cost from the acceptances and arcs."""
    revenue = sum(instance.revenues[k] for k in solution.accepted)
    dist = sum(instance.distance(i, j) for i, j in solution.arcs())
    return revenue - instance.move_cost * dist


def dump_instance(instance: MipInstance) -> str:
    """Line-oriented text form, one node per line, for debugging and
    file-based cross-checks."""
    lines = [
        "mip-instance v1",
        f"move_cost {instance.move_cost!r}",
        f"time_per_cell {instance.time_per_cell!r}",
        f"service_time {instance.service_time!r}",
        f"capacity {instance.capacity}",
        f"big_m {instance.big_m!r}",
        f"n {instance.n}",
        f"n_transit {instance.n_transit}",
        f"accepted {','.join(str(k) for k in sorted(instance.accepted)) or '-'}",
    ]
    for idx, (x, y) in enumerate(instance.coords):
        if idx == 0:
            kind, extra = "vehicle", "-"
        elif idx <= instance.n:
            kind, extra = "pickup", repr(instance.revenues[idx - 1])
        elif idx <= 2 * instance.n + instance.n_transit:
            kind = "delivery" if idx <= 2 * instance.n else "transit"
            extra = repr(instance.node_deadline(idx))
        else:
            kind, extra = "restaurant", "-"
        lines.append(f"node {idx} {kind} {x} {y} {extra}")
    return "\n".join(lines) + "\n"


def load_instance(text: str) -> MipInstance:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "mip-instance v1":
        raise ConfigError("not a v1 instance dump")
    header = {}
    coords, revenues, deadlines = [], [], []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "node":
            _, _, kind, x, y, extra = parts
            coords.append((int(x), int(y)))
            if kind == "pickup":
                revenues.append(float(extra))
            elif kind in ("delivery", "transit"):
                deadlines.append(float(extra))
        else:
            header[parts[0]] = parts[1]
    accepted = (frozenset() if header["accepted"] == "-" else
                frozenset(int(k) for k in header["accepted"].split(",")))
    return MipInstance(
        coords=tuple(coords), n=int(header["n"]),
        n_transit=int(header["n_transit"]), accepted=accepted,
        revenues=tuple(revenues), deadlines=tuple(deadlines),
        move_cost=float(header["move_cost"]),
        time_per_cell=float(header["time_per_cell"]),
        service_time=float(header["service_time"]),
        capacity=int(header["capacity"]), big_m=float(header["big_m"]),
    )


class MipControllerPolicy(Policy):
    """Rolling replanner: keeps the latest solved plan as a list of legs
    and emits one action per step toward the head leg."""

    name = "mip"

    def __init__(self, exactness_cap: int = 6):
        if exactness_cap < 1:
            raise ConfigError("exactness_cap must be at least 1")
        self.exactness_cap = exactness_cap
        self._legs: list[tuple] = []
        self._known: set[int] = set()
        self._replan_on_empty = True

    def reset(self, env) -> None:
        self._legs = []
        self._known = set()
        self._replan_on_empty = True

    def _solve_now(self, env) -> None:
        st = env.state
        forced = sum(1 for o in st.orders
                     if o is not None and o.status in (ACCEPTED, PICKED_UP))
        budget = max(self.exactness_cap - forced, 0)
        open_by_value = sorted(
            ((o.value, slot) for slot, o in enumerate(st.orders)
             if o is not None and o.status == OPEN),
            key=lambda vs: (-vs[0], vs[1]))
        inst = build_instance(
            st, env.config,
            open_slots=[slot for _, slot in open_by_value[:budget]])
        sol = solve(inst, self.exactness_cap)
        ids = {slot: o.id for slot, o in enumerate(st.orders) if o is not None}
        legs: list[tuple] = []
        for k in sol.accepted:
            if k not in inst.accepted:
                slot = inst.order_slots[k]
                legs.append(("accept", slot, ids[slot]))
        for node in sol.route[1:]:
            if _is_pickup(inst, node):
                slot = inst.order_slots[node - 1]
                legs.append(("pickup", slot, ids[slot]))
            elif node <= 2 * inst.n:
                slot = inst.order_slots[node - 1 - inst.n]
                legs.append(("deliver", slot, ids[slot]))
            elif node <= 2 * inst.n + inst.n_transit:
                slot = inst.transit_slots[node - 1 - 2 * inst.n]
                legs.append(("deliver", slot, ids[slot]))
            else:
                legs.append(("goto", node - 1 - 2 * inst.n - inst.n_transit,
                             None))
        self._legs = legs

    def _leg_done(self, env, leg) -> bool:
        kind, slot, order_id = leg
        st = env.state
        if kind == "goto":
            return st.driver == st.pickups[slot]
        order = st.orders[slot]
        if order is None or order.id != order_id:
            return True  # delivered by us, or lost to a breach mid-leg
        if kind == "accept":
            return order.status != OPEN
        if kind == "pickup":
            return order.status == PICKED_UP
        return False  # deliver: done only once the order leaves the board

    def act(self, env, step, rng) -> int:
        st = env.state
        m = env.config.max_orders
        live = {o.id for o in st.orders if o is not None}
        new_ids = live - self._known
        vanished = self._known - live
        self._known = live
        expected = set()
        if (self._legs and self._legs[0][0] == "deliver"
                and self._legs[0][2] in vanished):
            expected.add(self._legs[0][2])  # our own delivery completing
        if new_ids or vanished - expected:
            self._solve_now(env)
            self._replan_on_empty = True
        while self._legs and self._leg_done(env, self._legs[0]):
            self._legs.pop(0)
        if not self._legs and self._replan_on_empty:
            self._solve_now(env)
            self._replan_on_empty = False
            while self._legs and self._leg_done(env, self._legs[0]):
                self._legs.pop(0)
        if not self._legs:
            return 3 * m + env.config.n_pickup  # wait
        kind, slot, _ = self._legs[0]
        if kind == "accept":
            return slot
        if kind == "pickup":
            return m + slot
        if kind == "deliver":
            return 2 * m + slot
        return 3 * m + slot  # goto restaurant
