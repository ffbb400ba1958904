"""Road-network data model, OSM ingestion, and partitioning-weight computation.

The graph is the static layer of the bi-layer network: intersections as nodes,
directed inter-intersection road segments as links. Weighted views of the same
graph feed the partitioner, with separate weighting rules for the mobility and
communication layers.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

EARTH_RADIUS_KM = 6367.0

# Road classes dropped during OSM ingestion. Configurable because excluding
# motorways is unusual for corridor studies.
DEFAULT_EXCLUDED_HIGHWAYS = frozenset(
    {"residential", "service", "footway", "cycleway", "motorway", "unclassified"}
)

DEFAULT_DENSITY_CODES = {"low": 1.0, "medium": 2.0, "high": 3.0}

COMM_WEIGHT_FLOOR = 1e-6


class GraphError(Exception):
    """Invalid graph structure or failed invariant."""


class OsmParseError(GraphError):
    """Malformed or inconsistent OSM input."""


class Density(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def code(self) -> float:
        return DEFAULT_DENSITY_CODES[self.value]


class WeightMode(str, Enum):
    MOBILITY = "mobility"
    COMM = "comm"


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GraphError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise GraphError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise GraphError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class RoadNode:
    nid: str
    pos: GeoPoint
    signalized: bool = False
    in_lanes: int = 0
    out_lanes: int = 0


@dataclass(frozen=True)
class RoadLink:
    lid: str
    frm: str
    to: str
    length_km: float
    lanes: int = 1
    density: Density = Density.LOW
    speed_limit_mps: float = 13.89

    @property
    def length_m(self) -> float:
        return self.length_km * 1000.0

    def free_flow_s(self) -> float:
        return self.length_m / self.speed_limit_mps


@dataclass
class RoadGraph:
    """Directed road network with adjacency indexes. Treat as immutable."""

    nodes: dict[str, RoadNode]
    links: dict[str, RoadLink]
    out_links: dict[str, tuple[str, ...]] = field(default_factory=dict)
    in_links: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def build(cls, nodes: list[RoadNode], links: list[RoadLink]) -> "RoadGraph":
        node_map: dict[str, RoadNode] = {}
        for n in nodes:
            if n.nid in node_map:
                raise GraphError(f"duplicate node id {n.nid!r}")
            node_map[n.nid] = n
        link_map: dict[str, RoadLink] = {}
        for l in links:
            if l.lid in link_map:
                raise GraphError(f"duplicate link id {l.lid!r}")
            if l.frm == l.to:
                raise GraphError(f"link {l.lid!r} is a self-loop at {l.frm!r}")
            if l.frm not in node_map or l.to not in node_map:
                raise GraphError(f"link {l.lid!r} references missing node")
            if not l.length_km > 0:
                raise GraphError(f"link {l.lid!r} has non-positive length")
            if l.lanes < 1:
                raise GraphError(f"link {l.lid!r} has no lanes")
            if not l.speed_limit_mps > 0:
                raise GraphError(f"link {l.lid!r} has non-positive speed limit")
            link_map[l.lid] = l

        out_l: dict[str, list[str]] = {nid: [] for nid in node_map}
        in_l: dict[str, list[str]] = {nid: [] for nid in node_map}
        for lid in sorted(link_map):
            l = link_map[lid]
            out_l[l.frm].append(lid)
            in_l[l.to].append(lid)
        g = cls(
            nodes=node_map,
            links=link_map,
            out_links={k: tuple(v) for k, v in out_l.items()},
            in_links={k: tuple(v) for k, v in in_l.items()},
        )
        return g

    def with_derived_lane_counts(self) -> "RoadGraph":
        """Fill in node in/out lane counts from incident links."""
        nodes = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            in_lanes = sum(self.links[l].lanes for l in self.in_links[nid])
            out_lanes = sum(self.links[l].lanes for l in self.out_links[nid])
            nodes.append(
                RoadNode(n.nid, n.pos, n.signalized, in_lanes=in_lanes, out_lanes=out_lanes)
            )
        return RoadGraph.build(nodes, [self.links[l] for l in sorted(self.links)])

    def weak_components(self) -> list[frozenset[str]]:
        """Connected components ignoring link direction, largest first."""
        neighbors: dict[str, set[str]] = {nid: set() for nid in self.nodes}
        for l in self.links.values():
            neighbors[l.frm].add(l.to)
            neighbors[l.to].add(l.frm)
        seen: set[str] = set()
        comps = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            stack, comp = [start], set()
            while stack:
                v = stack.pop()
                if v in comp:
                    continue
                comp.add(v)
                stack.extend(neighbors[v] - comp)
            seen |= comp
            comps.append(frozenset(comp))
        return sorted(comps, key=len, reverse=True)


@dataclass
class WeightedGraph:
    """A weighted view of a road graph for one partitioning mode.

    ``adjacency`` folds the directed links into undirected edges with summed
    weights, which is what the partitioning pipeline consumes.
    """

    mode: WeightMode
    node_weights: dict[str, float]
    link_weights: dict[str, float]
    adjacency: dict[str, dict[str, float]]
    graph: RoadGraph | None = None

    @classmethod
    def from_edges(
        cls,
        node_weights: dict[str, float],
        edges: list[tuple[str, str, float]],
        mode: WeightMode = WeightMode.MOBILITY,
    ) -> "WeightedGraph":
        """Build directly from an undirected edge list (testing and tools)."""
        adjacency: dict[str, dict[str, float]] = {n: {} for n in node_weights}
        link_weights = {}
        for u, v, w in edges:
            adjacency[u][v] = adjacency[u].get(v, 0.0) + w
            adjacency[v][u] = adjacency[v].get(u, 0.0) + w
            link_weights[f"{u}~{v}"] = w
        return cls(mode, dict(node_weights), link_weights, adjacency)

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.node_weights)

    def total_node_weight(self) -> float:
        return sum(self.node_weights.values())


def haversine_km(p1: GeoPoint, p2: GeoPoint) -> float:
    """Great-circle distance in kilometers on a 6367 km sphere."""
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    dphi = math.radians(p2.lat - p1.lat) / 2.0
    dlmb = math.radians(p2.lon - p1.lon) / 2.0
    a = math.sin(dphi) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def bearing_deg(p1: GeoPoint, p2: GeoPoint) -> float:
    """Initial great-circle bearing from p1 to p2, degrees in [0, 360)."""
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    dlmb = math.radians(p2.lon - p1.lon)
    y = math.sin(dlmb) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return math.degrees(math.atan2(y, x)) % 360.0


def node_weight(node: RoadNode, signal_multiplier: float = 4.0) -> float:
    """Partitioning weight of an intersection: lane sum, boosted when signalized."""
    if signal_multiplier < 1:
        raise ValueError("signal_multiplier must be >= 1")
    base = float(node.in_lanes + node.out_lanes)
    return signal_multiplier * base if node.signalized else base


def _minmax_norm(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi - lo <= 0:
        # Degenerate spread (single link or identical values): flat 1.0.
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def build_weights(
    graph: RoadGraph,
    mode: WeightMode,
    coeffs: tuple[float, float, float] = (1.0, 1.0, 1.0),
    signal_multiplier: float = 4.0,
    density_codes: dict[str, float] | None = None,
) -> WeightedGraph:
    """Compute per-node and per-link partitioning weights for one mode.

    Mobility mode scores each link by a weighted sum of min-max-normalized
    length, normalized lane count, and the density code: high-priority links
    are expensive to cut. Comm mode scores by density/length so that long,
    sparse links are the cheap cut candidates.
    """
    codes = density_codes or DEFAULT_DENSITY_CODES
    if mode is WeightMode.MOBILITY and any(c < 0 for c in coeffs):
        raise ValueError("mobility coefficients must be non-negative")

    node_w = {nid: node_weight(n, signal_multiplier) for nid, n in graph.nodes.items()}

    lids = sorted(graph.links)
    link_w: dict[str, float] = {}
    if mode is WeightMode.MOBILITY:
        norm_len = _minmax_norm([graph.links[l].length_km for l in lids])
        norm_lanes = _minmax_norm([float(graph.links[l].lanes) for l in lids])
        c1, c2, c3 = coeffs
        for i, lid in enumerate(lids):
            code = codes[graph.links[lid].density.value]
            link_w[lid] = c1 * norm_len[i] + c2 * norm_lanes[i] + c3 * code
    else:
        for lid in lids:
            l = graph.links[lid]
            link_w[lid] = max(codes[l.density.value] / l.length_km, COMM_WEIGHT_FLOOR)

    adjacency: dict[str, dict[str, float]] = {nid: {} for nid in graph.nodes}
    for lid in lids:
        l = graph.links[lid]
        adjacency[l.frm][l.to] = adjacency[l.frm].get(l.to, 0.0) + link_w[lid]
        adjacency[l.to][l.frm] = adjacency[l.to].get(l.frm, 0.0) + link_w[lid]

    return WeightedGraph(mode, node_w, link_w, adjacency, graph)


def _parse_speed_mps(tags: dict[str, str], default: float) -> float:
    raw = tags.get("maxspeed")
    if raw is None:
        return default
    try:
        kmh = float(raw.split()[0])
    except ValueError:
        return default
    return kmh / 3.6


def _parse_lanes(tags: dict[str, str], default: int) -> int:
    raw = tags.get("lanes")
    if raw is None:
        return default
    try:
        return max(1, int(float(raw)))
    except ValueError:
        return default


def parse_osm(
    xml_text: str,
    excluded_highways: frozenset[str] = DEFAULT_EXCLUDED_HIGHWAYS,
    default_lanes: int = 1,
    default_speed_mps: float = 13.89,
    default_density: Density = Density.LOW,
) -> RoadGraph:
    """Extract a road graph from OSM XML.

    Only ways carrying a highway tag outside the exclusion list survive. Way
    geometry is collapsed to intersection-to-intersection links whose length
    is the summed haversine length of the underlying segments. Intersections
    are way endpoints, nodes shared between kept ways, and signalized nodes.
    Two-way streets produce one directed link per direction.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise OsmParseError(f"malformed OSM XML at line {line}, column {col}") from exc

    positions: dict[str, GeoPoint] = {}
    signal_nodes: set[str] = set()
    for el in root.iter("node"):
        nid = el.attrib["id"]
        positions[nid] = GeoPoint(float(el.attrib["lat"]), float(el.attrib["lon"]))
        for tag in el.iter("tag"):
            if tag.attrib.get("k") == "highway" and tag.attrib.get("v") == "traffic_signals":
                signal_nodes.add(nid)

    kept_ways: list[tuple[str, list[str], dict[str, str]]] = []
    for el in root.iter("way"):
        wid = el.attrib["id"]
        tags = {t.attrib["k"]: t.attrib["v"] for t in el.iter("tag")}
        highway = tags.get("highway")
        if highway is None or highway in excluded_highways:
            continue
        refs = [nd.attrib["ref"] for nd in el.iter("nd")]
        if len(refs) < 2:
            continue
        for ref in refs:
            if ref not in positions:
                raise OsmParseError(f"way {wid} references missing node {ref}")
        kept_ways.append((wid, refs, tags))

    usage: dict[str, int] = {}
    for _, refs, _ in kept_ways:
        for ref in set(refs):
            usage[ref] = usage.get(ref, 0) + 1

    def is_split(ref: str, refs: list[str]) -> bool:
        return ref == refs[0] or ref == refs[-1] or usage.get(ref, 0) >= 2 or ref in signal_nodes

    node_ids: set[str] = set()
    links: list[RoadLink] = []
    for wid, refs, tags in kept_ways:
        lanes = _parse_lanes(tags, default_lanes)
        speed = _parse_speed_mps(tags, default_speed_mps)
        oneway = tags.get("oneway") in ("yes", "true", "1")
        seq = 0
        seg_start = refs[0]
        seg_len = 0.0
        for prev, cur in zip(refs, refs[1:]):
            seg_len += haversine_km(positions[prev], positions[cur])
            if not is_split(cur, refs):
                continue
            if cur == seg_start or seg_len <= 0:
                seg_start, seg_len = cur, 0.0
                continue
            node_ids.update((seg_start, cur))
            links.append(
                RoadLink(f"w{wid}.{seq}", seg_start, cur, seg_len, lanes, default_density, speed)
            )
            if not oneway:
                links.append(
                    RoadLink(f"w{wid}.{seq}r", cur, seg_start, seg_len, lanes, default_density, speed)
                )
            seq += 1
            seg_start, seg_len = cur, 0.0

    nodes = [
        RoadNode(nid, positions[nid], signalized=nid in signal_nodes) for nid in sorted(node_ids)
    ]
    return RoadGraph.build(nodes, links).with_derived_lane_counts()
