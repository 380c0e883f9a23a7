"""Hub-tier routing: ETX link costs, shortest paths, and the cooperative
multi-path planner with per-hop 3-branch selection combining.

Graphs live on the upper tier only — vertices are BAN hubs, identified by
their BAN index.  Sensors enter the picture exclusively as the extra
diversity branches of a hop's receiving BAN.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .channel import DEVICE_ORDER, RadioId
from .errors import ConfigError

NEG_INF = float("-inf")
DEFAULT_INIT_ETX_BOUND = 8.0


def etx(outage: float) -> float:
    """Expected transmission count of a link with the given outage.

    An always-out link (outage 1) costs infinity, which callers treat as
    "edge absent".
    """
    if not 0.0 <= outage <= 1.0:
        raise ValueError(f"outage must lie in [0, 1], got {outage}")
    if outage == 1.0:
        return math.inf
    return 1.0 / (1.0 - outage)


@dataclass
class NetworkGraph:
    """Directed hub graph with ETX edge weights.

    Edges with outage 1 are omitted entirely; every stored ETX is >= 1, so
    path costs strictly grow with hop count and Dijkstra's non-negativity
    requirement holds by construction.
    """

    num_bans: int
    edge_etx: dict[tuple[int, int], float]
    edge_outage: dict[tuple[int, int], float]

    def etx_of(self, u: int, v: int) -> float | None:
        return self.edge_etx.get((u, v))

    def neighbors(self, u: int) -> list[int]:
        return sorted(v for (a, v) in self.edge_etx if a == u)


def build_graph(link_outage: Mapping[tuple[int, int], float], num_bans: int) -> NetworkGraph:
    """Graph for the next window from per-link outage estimates.

    ``link_outage`` is keyed by directed (from_ban, to_ban) pairs; a key
    seen only in one direction is mirrored (channel reciprocity).
    """
    edges: dict[tuple[int, int], float] = {}
    outages: dict[tuple[int, int], float] = {}
    for (u, v), o in link_outage.items():
        for key in ((u, v), (v, u)):
            if key in outages and outages[key] != o:
                raise ValueError(f"conflicting outage estimates for edge {key}")
            cost = etx(o)
            if math.isinf(cost):
                continue
            outages[key] = o
            edges[key] = cost
    return NetworkGraph(num_bans, edges, outages)


def init_graph(num_bans: int, seed,
               etx_bound: float = DEFAULT_INIT_ETX_BOUND) -> NetworkGraph:
    """Bootstrap graph for the first window: random ETX per link.

    Values are drawn uniformly from [1, etx_bound), one draw per
    undirected pair, mirrored to both directions.
    """
    if etx_bound <= 1.0:
        raise ConfigError(f"etx_bound must exceed 1, got {etx_bound}")
    rng = np.random.default_rng(seed)
    edges: dict[tuple[int, int], float] = {}
    outages: dict[tuple[int, int], float] = {}
    for u in range(num_bans):
        for v in range(u + 1, num_bans):
            cost = float(rng.uniform(1.0, etx_bound))
            for key in ((u, v), (v, u)):
                edges[key] = cost
                outages[key] = 1.0 - 1.0 / cost
    return NetworkGraph(num_bans, edges, outages)


@dataclass(frozen=True)
class Path:
    """A simple hub-tier path with its routing cost."""

    vertices: tuple[int, ...]
    cost: float

    @property
    def hop_count(self) -> int:
        return len(self.vertices) - 1

    @property
    def intermediates(self) -> tuple[int, ...]:
        return self.vertices[1:-1]

    def hops(self) -> list[tuple[int, int]]:
        return list(zip(self.vertices, self.vertices[1:]))


class SprMetric(Enum):
    ETX_ONLY = "etx"
    ETX_PLUS_HOP_MAX2 = "etx_hop2"


def _dijkstra_min_etx(graph: NetworkGraph, s: int, d: int) -> Path | None:
    """Minimum ETX-sum path, ties broken lexicographically on the vertex
    sequence."""
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (s,))]
    settled: set[int] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u == d:
            return Path(path, cost)
        if u in settled:
            continue
        settled.add(u)
        for v in graph.neighbors(u):
            if v not in settled:
                heapq.heappush(heap, (cost + graph.edge_etx[(u, v)], path + (v,)))
    return None


def _two_hop_candidates(graph: NetworkGraph, s: int, d: int,
                        banned: frozenset[int] = frozenset()) -> list[Path]:
    """All <=2-hop simple paths under the combined ETX+hop-count cost."""
    paths: list[Path] = []
    direct = graph.etx_of(s, d)
    if direct is not None:
        paths.append(Path((s, d), direct + 1.0))
    for r in range(graph.num_bans):
        if r in (s, d) or r in banned:
            continue
        leg1, leg2 = graph.etx_of(s, r), graph.etx_of(r, d)
        if leg1 is not None and leg2 is not None:
            paths.append(Path((s, r, d), leg1 + leg2 + 2.0))
    return paths


def spr(graph: NetworkGraph, s: int, d: int,
        metric: SprMetric = SprMetric.ETX_PLUS_HOP_MAX2) -> Path | None:
    """Shortest-path route between two hubs, or None when unreachable.

    ETX_ONLY minimizes the ETX sum with no hop limit.  ETX_PLUS_HOP_MAX2
    minimizes ETX sum plus hop count over candidates of at most two hops,
    falling back to the direct edge when no relay qualifies; with the
    direct edge also absent there is no route.
    """
    if s == d:
        raise ValueError("source and destination must differ")
    if not (0 <= s < graph.num_bans and 0 <= d < graph.num_bans):
        raise ValueError(f"vertices {s}, {d} outside graph of {graph.num_bans} hubs")
    if metric is SprMetric.ETX_ONLY:
        return _dijkstra_min_etx(graph, s, d)
    candidates = _two_hop_candidates(graph, s, d)
    if not candidates:
        return None
    return min(candidates, key=lambda p: (p.cost, p.vertices))


def select_combine(branch_sinrs_db: Sequence[float]) -> tuple[float, int]:
    """Pick the strongest of exactly three diversity branches.

    Absent branches are passed as -inf; ties go to the lowest index.
    """
    if len(branch_sinrs_db) != 3:
        raise ValueError(f"expected exactly 3 branches, got {len(branch_sinrs_db)}")
    best_idx = 0
    for i in (1, 2):
        if branch_sinrs_db[i] > branch_sinrs_db[best_idx]:
            best_idx = i
    return branch_sinrs_db[best_idx], best_idx


BranchSinrMap = Mapping[tuple[int, int], Sequence[float]]


@dataclass
class RoutePlan:
    """Outcome of route planning for one source-destination pair."""

    strategy: str
    primary: Path | None
    secondary: Path | None = None
    primary_metric_db: float | None = None
    secondary_metric_db: float | None = None
    combined_metric_db: float | None = None
    delivered_path: str | None = None
    branch_choices: tuple[RadioId, ...] = ()

    @property
    def routable(self) -> bool:
        return self.primary is not None

    def delivery_path(self) -> Path | None:
        if self.delivered_path == "secondary":
            return self.secondary
        return self.primary


def _path_combined(path: Path, branch_sinr: BranchSinrMap) -> tuple[float, list[int]]:
    """Min over route hops of the per-hop selection-combined SINR."""
    combined = math.inf
    choices: list[int] = []
    for u, v in path.hops():
        branches = branch_sinr.get((u, v), (NEG_INF, NEG_INF, NEG_INF))
        best, idx = select_combine(tuple(branches))
        choices.append(idx)
        combined = min(combined, best)
    return combined, choices


def cmr(graph: NetworkGraph, s: int, d: int, branch_sinr: BranchSinrMap) -> RoutePlan:
    """Cooperative multi-path plan: two intermediate-disjoint routes.

    The primary route is the hop-limited shortest path; the secondary is
    the best remaining candidate that shares no intermediate vertex with
    it.  Each hop of each route is selection-combined over the three
    radios of its receiving BAN; a route scores the minimum of its hop
    values and the plan delivers over the better-scoring route.  Without a
    disjoint secondary the plan degrades to the primary alone.
    """
    p1 = spr(graph, s, d, SprMetric.ETX_PLUS_HOP_MAX2)
    if p1 is None:
        return RoutePlan("cmr", None)
    banned = frozenset(p1.intermediates)
    candidates = [p for p in _two_hop_candidates(graph, s, d, banned)
                  if p.vertices != p1.vertices]
    p2 = min(candidates, key=lambda p: (p.cost, p.vertices)) if candidates else None
    m1, choices1 = _path_combined(p1, branch_sinr)
    plan = RoutePlan("cmr", p1, p2, primary_metric_db=m1)
    if p2 is None:
        plan.combined_metric_db = m1
        plan.delivered_path = "primary"
        chosen_path, chosen = p1, choices1
    else:
        m2, choices2 = _path_combined(p2, branch_sinr)
        plan.secondary_metric_db = m2
        plan.combined_metric_db = max(m1, m2)
        if m2 > m1:
            plan.delivered_path = "secondary"
            chosen_path, chosen = p2, choices2
        else:
            plan.delivered_path = "primary"
            chosen_path, chosen = p1, choices1
    plan.branch_choices = tuple(
        RadioId(v, DEVICE_ORDER[idx])
        for (_, v), idx in zip(chosen_path.hops(), chosen))
    return plan
