"""Scene descriptions and their conversion into heterogeneous graphs.

A :class:`SceneDescription` is the pre-graph view of one traffic scene: agent
records from perception, map entities from the HD map, and explicit map
relations.  :func:`assemble_graph` derives the dynamic relations (agent-agent
interaction, geometric agent-lane / agent-crosswalk assignment), encodes all
category features one-hot, and emits a graph over the fixed ontology.

Scenes serialize to a single JSON document; the layout is documented by the
JSON-Schema file shipped in ``hetscene/schemas/scene.schema.json``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from . import ontology as ont
from .graph import HeteroGraph


class SceneParseError(ValueError):
    pass


class SceneReferenceError(ValueError):
    """A map relation points at an entity id that does not exist."""


class GeometryError(ValueError):
    pass


@dataclass
class AgentRecord:
    id: str
    position: list          # [x, y] m
    velocity: list          # [vx, vy] m/s
    acceleration: list      # [ax, ay] m/s^2
    yaw: float              # rad
    yaw_rate: float         # rad/s
    covariance: list        # diagonal variances of the 8 state entries
    max_velocity: float
    tracked_time: float
    length: float
    width: float
    agent_type: str
    sensor_probabilities: list  # [det, exist] per sensor, camera/lidar/radar
    existence_confidence: float
    trajectory: list        # 30 x [dx, dy, dyaw, valid]

    def speed(self):
        return float(np.hypot(*self.velocity))


@dataclass
class LaneRecord:
    id: str
    centerline: list        # ordered [x, y] points
    widths: list            # one width per centerline point
    lane_type: str
    max_speed: float
    left_boundary: str
    right_boundary: str
    turn_type: str


@dataclass
class CrosswalkRecord:
    id: str
    polygon: list           # [x, y] ring, implicitly closed
    is_signaled: bool


@dataclass
class StopRecord:
    id: str
    stop_type: str
    position: list


@dataclass
class LightRecord:
    id: str
    light_type: str
    state: str
    deactivatable: bool
    position: list


@dataclass
class MapRelation:
    relation: str           # connection|conflict|precedence|overlaps|controls|signals|stops
    src: str
    dst: str
    attrs: dict = field(default_factory=dict)


@dataclass
class SceneDescription:
    agents: list
    lanes: list
    crosswalks: list = field(default_factory=list)
    stops: list = field(default_factory=list)
    lights: list = field(default_factory=list)
    map_relations: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)  # agent id -> {parked, ghost}


# ---------------------------------------------------------------------------
# geometry


class Polyline:
    """Arc-length parametrized polyline with linear width interpolation."""

    def __init__(self, points, widths=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise GeometryError(f"centerline needs >= 2 planar points, got {pts.shape}")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len < 1e-9):
            raise GeometryError("degenerate centerline: repeated points")
        self.points = pts
        self.seg = seg
        self.seg_len = seg_len
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum[-1])
        self.widths = (np.asarray(widths, dtype=np.float64)
                       if widths is not None else None)
        if self.widths is not None and len(self.widths) != len(pts):
            raise GeometryError("one width per centerline point required")

    def project(self, p):
        """Nearest point on the polyline.

        Returns (s, d, tangent_angle): arc length, signed lateral offset
        (positive left of travel direction, magnitude = distance to the
        nearest point), and the tangent direction there.
        """
        p = np.asarray(p, dtype=np.float64)
        rel = p[None, :] - self.points[:-1]
        t = np.clip(np.einsum("ij,ij->i", rel, self.seg) / self.seg_len**2, 0.0, 1.0)
        proj = self.points[:-1] + t[:, None] * self.seg
        dist = np.hypot(*(p[None, :] - proj).T)
        k = int(np.argmin(dist))
        s = float(self.cum[k] + t[k] * self.seg_len[k])
        tangent = self.seg[k] / self.seg_len[k]
        cross = tangent[0] * (p[1] - proj[k, 1]) - tangent[1] * (p[0] - proj[k, 0])
        d = float(np.copysign(dist[k], cross) if dist[k] > 0 else 0.0)
        return s, d, float(np.arctan2(tangent[1], tangent[0]))

    def width_at(self, s):
        if self.widths is None:
            raise GeometryError("polyline carries no widths")
        return float(np.interp(s, self.cum, self.widths))

    def vertex_curvatures(self):
        """Unsigned discrete curvature at interior vertices (0 at endpoints)."""
        k = np.zeros(len(self.points))
        for i in range(1, len(self.points) - 1):
            a0 = np.arctan2(self.seg[i - 1, 1], self.seg[i - 1, 0])
            a1 = np.arctan2(self.seg[i, 1], self.seg[i, 0])
            turn = abs(float(ont.wrap_angle(a1 - a0)))
            k[i] = turn / (0.5 * (self.seg_len[i - 1] + self.seg_len[i]))
        return k

    def curvature_at(self, s):
        return float(np.interp(s, self.cum, self.vertex_curvatures()))


def point_in_polygon(p, polygon):
    x, y = float(p[0]), float(p[1])
    poly = np.asarray(polygon, dtype=np.float64)
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xs = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xs:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# dynamic relation derivation

STATIONARY_SPEED = 0.5       # m/s
FOLLOWING_MAX_DEG = 45.0
CROSSING_MAX_DEG = 135.0


def derive_interacts(agents):
    """All ordered pairs of distinct agents with destination-relative features.

    Edge (j -> i) carries source-minus-destination differences of position,
    velocity, and heading (wrapped to (-pi, pi]).
    """
    edges, feats = [], []
    for i, dst in enumerate(agents):
        for j, src in enumerate(agents):
            if i == j:
                continue
            edges.append((j, i))
            feats.append([
                src.position[0] - dst.position[0],
                src.position[1] - dst.position[1],
                src.velocity[0] - dst.velocity[0],
                src.velocity[1] - dst.velocity[1],
                float(ont.wrap_angle(src.yaw - dst.yaw)),
            ])
    return (np.array(edges, dtype=np.int64).reshape(-1, 2),
            np.array(feats, dtype=np.float32).reshape(-1, ont.INTERACTS_DIM))


def behavior_primitive(agent, tangent_angle):
    if agent.speed() < STATIONARY_SPEED:
        return "stationary"
    delta = abs(float(ont.wrap_angle(agent.yaw - tangent_angle)))
    deg = np.degrees(delta)
    if deg < FOLLOWING_MAX_DEG:
        return "following"
    if deg < CROSSING_MAX_DEG:
        return "crossing"
    return "oncoming"


def under_edge_features(agent, lane_poly, lane: LaneRecord):
    """Features of a lane -> agent assignment, or None when the agent lies
    outside the lane corridor (|lateral offset| > half local width)."""
    s, d, tangent_angle = lane_poly.project(agent.position)
    half = lane_poly.width_at(s) / 2.0
    if abs(d) > half:
        return None
    tangent = np.array([np.cos(tangent_angle), np.sin(tangent_angle)])
    normal = np.array([-tangent[1], tangent[0]])
    v = np.asarray(agent.velocity, dtype=np.float64)
    assign = max(0.0, 1.0 - abs(d) / half) if half > 0 else 0.0
    feat = np.concatenate([
        [assign, s, d, float(v @ tangent), float(v @ normal),
         2 * half, lane_poly.curvature_at(s), lane.max_speed,
         half - d, half + d],
        ont.one_hot(behavior_primitive(agent, tangent_angle),
                    ont.BEHAVIOR_PRIMITIVES),
    ])
    return feat.astype(np.float32)


def derive_agent_map_relations(agents, lanes, crosswalks):
    """Geometric on/under/crosses edges.

    Returns dict relation name -> (edges array, feature matrix).
    """
    polys = [Polyline(l.centerline, l.widths) for l in lanes]
    on_e, under_e, under_f, crosses_e = [], [], [], []
    for ai, agent in enumerate(agents):
        for li, lane in enumerate(lanes):
            feat = under_edge_features(agent, polys[li], lane)
            if feat is None:
                continue
            on_e.append((ai, li))
            under_e.append((li, ai))
            under_f.append(feat)
        for ci, cw in enumerate(crosswalks):
            if point_in_polygon(agent.position, cw.polygon):
                crosses_e.append((ai, ci))
    unit = np.ones
    return {
        "on": (np.array(on_e, dtype=np.int64).reshape(-1, 2),
               unit((len(on_e), 1), dtype=np.float32)),
        "under": (np.array(under_e, dtype=np.int64).reshape(-1, 2),
                  np.array(under_f, dtype=np.float32).reshape(-1, ont.UNDER_DIM)),
        "crosses": (np.array(crosses_e, dtype=np.int64).reshape(-1, 2),
                    unit((len(crosses_e), 1), dtype=np.float32)),
    }


# ---------------------------------------------------------------------------
# node feature encoding


def agent_features(a: AgentRecord):
    traj = np.asarray(a.trajectory, dtype=np.float32)
    if traj.shape != (ont.TRAJECTORY_STEPS, ont.TRAJECTORY_WIDTH):
        raise SceneParseError(
            f"agent {a.id}: trajectory shape {traj.shape} != "
            f"({ont.TRAJECTORY_STEPS}, {ont.TRAJECTORY_WIDTH})")
    static = np.concatenate([
        a.position, a.velocity, a.acceleration, [a.yaw, a.yaw_rate],
        a.covariance,
        [a.max_velocity, a.tracked_time, a.length, a.width],
        ont.one_hot(a.agent_type, ont.AGENT_TYPES),
        np.asarray(a.sensor_probabilities, dtype=np.float32).ravel(),
        [a.existence_confidence],
    ]).astype(np.float32)
    if static.shape[0] != ont.AGENT_STATIC_DIM:
        raise SceneParseError(
            f"agent {a.id}: static feature dim {static.shape[0]} != "
            f"{ont.AGENT_STATIC_DIM}")
    return np.concatenate([static, traj.ravel()])


def lane_features(l: LaneRecord):
    poly = Polyline(l.centerline, l.widths)
    widths = np.asarray(l.widths, dtype=np.float64)
    curv = poly.vertex_curvatures()
    return np.concatenate([
        ont.one_hot(l.lane_type, ont.LANE_TYPES),
        [poly.length, widths.min(), widths.max(), curv.max(), l.max_speed],
        ont.one_hot(l.left_boundary, ont.BOUNDARY_TYPES),
        ont.one_hot(l.right_boundary, ont.BOUNDARY_TYPES),
        ont.one_hot(l.turn_type, ont.TURN_TYPES),
    ]).astype(np.float32)


def _map_relation_features(rel: MapRelation):
    try:
        if rel.relation == "connection":
            return ont.one_hot(rel.attrs["type"], ont.CONNECTION_TYPES)
        if rel.relation == "conflict":
            return ont.one_hot(rel.attrs["type"], ont.CONFLICT_TYPES)
        if rel.relation == "precedence":
            return ont.one_hot(rel.attrs["type"], ont.PRECEDENCE_TYPES)
        if rel.relation == "stops":
            return np.array([rel.attrs["longitudinal_position"]], dtype=np.float32)
    except KeyError as e:
        raise SceneParseError(
            f"map relation {rel.relation} {rel.src}->{rel.dst}: "
            f"missing attribute {e.args[0]!r}") from None
    return np.ones(1, dtype=np.float32)


_MAP_RELATION_ENDPOINTS = {
    "connection": ("lanes", "lanes"),
    "conflict": ("lanes", "lanes"),
    "precedence": ("lanes", "lanes"),
    "overlaps": ("crosswalks", "lanes"),
    "controls": ("lights", "lanes"),
    "signals": ("lights", "crosswalks"),
    "stops": ("stops", "lanes"),
}


def assemble_graph(scene: SceneDescription) -> HeteroGraph:
    """Encode a scene as a heterogeneous graph over the fixed ontology."""
    schema = ont.scene_schema()
    nodes = {
        "agent": np.stack([agent_features(a) for a in scene.agents])
                 if scene.agents else np.zeros((0, ont.AGENT_DIM), np.float32),
        "lane": np.stack([lane_features(l) for l in scene.lanes])
                if scene.lanes else np.zeros((0, ont.LANE_DIM), np.float32),
        "crosswalk": np.array([[float(c.is_signaled)] for c in scene.crosswalks],
                              np.float32).reshape(-1, 1),
        "stop": np.stack([ont.one_hot(s.stop_type, ont.STOP_TYPES)
                          for s in scene.stops])
                if scene.stops else np.zeros((0, ont.STOP_DIM), np.float32),
        "light": np.stack([np.concatenate([
                    ont.one_hot(l.light_type, ont.LIGHT_TYPES),
                    ont.one_hot(l.state, ont.LIGHT_STATES),
                    [float(l.deactivatable)]]) for l in scene.lights])
                 if scene.lights else np.zeros((0, ont.LIGHT_DIM), np.float32),
    }
    index = {
        "lanes": {l.id: i for i, l in enumerate(scene.lanes)},
        "crosswalks": {c.id: i for i, c in enumerate(scene.crosswalks)},
        "stops": {s.id: i for i, s in enumerate(scene.stops)},
        "lights": {l.id: i for i, l in enumerate(scene.lights)},
    }
    edges = {}
    feats = {}
    for name, (e, f) in derive_agent_map_relations(
            scene.agents, scene.lanes, scene.crosswalks).items():
        edges[name], feats[name] = e, f
    edges["interacts"], feats["interacts"] = derive_interacts(scene.agents)
    explicit = {name: ([], []) for name in _MAP_RELATION_ENDPOINTS}
    for rel in scene.map_relations:
        if rel.relation not in _MAP_RELATION_ENDPOINTS:
            raise SceneParseError(f"unknown map relation type {rel.relation!r}")
        src_kind, dst_kind = _MAP_RELATION_ENDPOINTS[rel.relation]
        try:
            si = index[src_kind][rel.src]
            di = index[dst_kind][rel.dst]
        except KeyError as e:
            raise SceneReferenceError(
                f"map relation {rel.relation}: unknown {e.args[0]!r}") from None
        explicit[rel.relation][0].append((si, di))
        explicit[rel.relation][1].append(_map_relation_features(rel))
    for name, (e, f) in explicit.items():
        dim = ont.RELATIONS[name][2]
        edges[name] = np.array(e, dtype=np.int64).reshape(-1, 2)
        feats[name] = (np.stack(f) if f else np.zeros((0, dim), np.float32))
    return HeteroGraph(schema, nodes, edges, feats)


def agent_labels(scene: SceneDescription):
    """Per-agent labels aligned with node order; NaN where the label is absent."""
    out = {}
    for task in ("parked", "ghost"):
        vals = np.full(len(scene.agents), np.nan, dtype=np.float32)
        for i, a in enumerate(scene.agents):
            lab = scene.labels.get(a.id, {}).get(task)
            if lab is not None:
                vals[i] = float(lab)
        out[task] = vals
    return out


# ---------------------------------------------------------------------------
# serialization


def _schema_doc():
    if not hasattr(_schema_doc, "_cache"):
        text = (resources.files("hetscene") / "schemas" / "scene.schema.json").read_text()
        _schema_doc._cache = json.loads(text)
    return _schema_doc._cache


def scene_to_dict(scene: SceneDescription):
    return {
        "agents": [asdict(a) for a in scene.agents],
        "lanes": [asdict(l) for l in scene.lanes],
        "crosswalks": [asdict(c) for c in scene.crosswalks],
        "stops": [asdict(s) for s in scene.stops],
        "lights": [asdict(l) for l in scene.lights],
        "map_relations": [asdict(r) for r in scene.map_relations],
        "labels": scene.labels,
    }


def scene_from_dict(doc):
    try:
        jsonschema.validate(doc, _schema_doc())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SceneParseError(f"{path}: {e.message}") from None
    return SceneDescription(
        agents=[AgentRecord(**a) for a in doc["agents"]],
        lanes=[LaneRecord(**l) for l in doc["lanes"]],
        crosswalks=[CrosswalkRecord(**c) for c in doc.get("crosswalks", [])],
        stops=[StopRecord(**s) for s in doc.get("stops", [])],
        lights=[LightRecord(**l) for l in doc.get("lights", [])],
        map_relations=[MapRelation(**r) for r in doc.get("map_relations", [])],
        labels=doc.get("labels", {}),
    )


def save_scene(scene: SceneDescription, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1)
        fh.write("\n")


def load_scene(path) -> SceneDescription:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SceneParseError(f"{path}: line {e.lineno}: {e.msg}") from None
    return scene_from_dict(doc)
