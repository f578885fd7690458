"""Seeded synthetic traffic-scene generator plus the simple baselines.

Scenes are built from archetypes whose evidence is planted so that the two
labels genuinely require context:

* ``parked`` is true iff the agent was slower than a threshold over its full
  history AND it sits on a parking-type lane or beyond a lateral-offset
  fraction of the lane half-width.  Temporarily stopped agents are placed
  centered in driving lanes (often with a crossing pedestrian or a red light
  as the visible cause), so speed alone cannot separate the classes.
* ``ghost`` is true for agents with implausible evidence: heading opposing
  the lane direction while moving, all per-sensor existence probabilities
  below a threshold, or a mostly-invalid trajectory.

Labels are evaluated by applying the rules to the generated records (not the
archetype intent) and then flipped with a configurable noise rate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ontology as ont
from . import scene as sc
from . import training as tr

DT = 0.1  # trajectory step length in seconds (30 steps = 3 s history)
VELOCITY_PARKED_THRESHOLD = 0.1  # m/s, the velocity baseline's rule


class GenError(ValueError):
    pass


@dataclass
class GenConfig:
    n_scenes: int = 5000
    agents_per_scene: tuple = (4, 9)
    lanes_per_scene: tuple = (2, 4)
    lane_length: tuple = (40.0, 70.0)
    lane_width: tuple = (3.2, 4.0)
    parking_lane_prob: float = 0.55
    crosswalk_prob: float = 0.5
    stop_prob: float = 0.3
    curve_prob: float = 0.3
    # archetype mix (renormalized); parked_lane falls back to parked_roadside
    # in scenes without a parking lane
    archetype_weights: dict = field(default_factory=lambda: {
        "driver": 0.35, "temp_stopped": 0.20, "parked_lane": 0.12,
        "parked_roadside": 0.18, "ghost": 0.15})
    companion_prob: float = 0.5     # parked cars come in rows
    pedestrian_prob: float = 0.85   # crossing pedestrian ahead of a temp stop
    # label rules
    parked_speed: float = 0.3       # m/s over the full history
    parked_offset_frac: float = 0.7  # of the lane half-width
    ghost_conf: float = 0.4         # all existence probabilities below this
    ghost_gap_frac: float = 0.5     # invalid trajectory fraction above this
    label_noise: float = 0.05
    traj_noise: float = 0.05        # m, per-step displacement noise (moving)
    target_parked_rate: float = 0.34
    splits: tuple = (0.6, 0.3, 0.1)
    seed: int = 0

    def __post_init__(self):
        for name in ("parking_lane_prob", "crosswalk_prob", "stop_prob",
                     "curve_prob", "companion_prob", "pedestrian_prob",
                     "parked_offset_frac", "ghost_conf", "ghost_gap_frac",
                     "label_noise", "target_parked_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GenError(f"{name}={v} outside [0, 1]")
        for name in ("agents_per_scene", "lanes_per_scene", "lane_length",
                     "lane_width"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise GenError(f"{name}=({lo}, {hi}) is not a valid range")
        if self.lanes_per_scene[0] < 1:
            raise GenError("need at least one lane per scene")
        if self.n_scenes < 0:
            raise GenError("n_scenes must be nonnegative")
        if not np.isclose(sum(self.splits), 1.0):
            raise GenError(f"splits {self.splits} do not sum to 1")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("agents_per_scene", "lanes_per_scene", "lane_length",
                  "lane_width", "splits"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ---------------------------------------------------------------------------
# geometry helpers


def _point_on(poly: sc.Polyline, s):
    """Point and tangent angle at arc length ``s`` (clamped to the line)."""
    s = float(np.clip(s, 0.0, poly.length))
    k = min(int(np.searchsorted(poly.cum, s, side="right")) - 1,
            len(poly.seg) - 1)
    k = max(k, 0)
    t = (s - poly.cum[k]) / np.hypot(*poly.seg[k])
    point = poly.points[k] + t * poly.seg[k]
    angle = float(np.arctan2(poly.seg[k][1], poly.seg[k][0]))
    return point, angle


def _place(poly, s, d):
    """Scene position at Frenet (s, d); d positive to the left."""
    point, angle = _point_on(poly, s)
    normal = np.array([-np.sin(angle), np.cos(angle)])
    return point + d * normal, angle


# ---------------------------------------------------------------------------
# label rules (applied to generated records, not archetype intent)


def history_max_speed(agent: sc.AgentRecord):
    """Max of the current speed and per-step trajectory speeds (valid steps)."""
    traj = np.asarray(agent.trajectory, dtype=np.float64)
    valid = traj[:, 3] > 0.5
    speeds = np.hypot(traj[valid, 0], traj[valid, 1]) / DT
    return max(agent.speed(), float(speeds.max()) if speeds.size else 0.0)


def parked_rule(agent, lanes, polys, cfg: GenConfig):
    if history_max_speed(agent) >= cfg.parked_speed:
        return False
    for lane, poly in zip(lanes, polys):
        feat = sc.under_edge_features(agent, poly, lane)
        if feat is None:
            continue
        if lane.lane_type == "parking":
            return True
        half = 0.5 * (feat[8] + feat[9])  # (half-d) + (half+d) = 2*half
        if abs(feat[2]) > cfg.parked_offset_frac * half:
            return True
    return False


def ghost_rule(agent, lanes, polys, cfg: GenConfig):
    if all(p[1] < cfg.ghost_conf for p in agent.sensor_probabilities):
        return True
    traj = np.asarray(agent.trajectory, dtype=np.float64)
    if np.mean(traj[:, 3] < 0.5) > cfg.ghost_gap_frac:
        return True
    if agent.speed() >= sc.STATIONARY_SPEED:
        behavior_idx = ont.BEHAVIOR_PRIMITIVES.index("oncoming")
        for lane, poly in zip(lanes, polys):
            feat = sc.under_edge_features(agent, poly, lane)
            if feat is not None and feat[10 + behavior_idx] > 0.5:
                return True
    return False


# ---------------------------------------------------------------------------
# agent construction


_BOX = {"car": (4.5, 1.9), "truck": (8.0, 2.5), "two_wheeler": (2.0, 0.8),
        "human": (0.6, 0.6), "other": (3.0, 1.5)}


def _trajectory(rng, speed, yaw, sigma, valid_mask=None):
    steps = np.zeros((ont.TRAJECTORY_STEPS, ont.TRAJECTORY_WIDTH))
    steps[:, 0] = speed * DT * np.cos(yaw)
    steps[:, 1] = speed * DT * np.sin(yaw)
    steps[:, :2] += rng.normal(scale=sigma, size=(ont.TRAJECTORY_STEPS, 2))
    steps[:, 2] = rng.normal(scale=0.002, size=ont.TRAJECTORY_STEPS)
    steps[:, 3] = 1.0
    if valid_mask is not None:
        steps[~valid_mask] = 0.0
    return steps.tolist()


def _make_agent(rng, aid, position, yaw, speed, agent_type="car", *,
                traj_sigma, low_confidence=False, valid_mask=None):
    length, width = _BOX[agent_type]
    direction = np.array([np.cos(yaw), np.sin(yaw)])
    if low_confidence:
        probs = [[round(float(rng.uniform(0.2, 0.8)), 4),
                  round(float(rng.uniform(0.05, 0.38)), 4)] for _ in range(3)]
    else:
        probs = [[round(float(rng.uniform(0.5, 1.0)), 4),
                  round(float(rng.uniform(0.55, 1.0)), 4)] for _ in range(3)]
    exist = float(np.mean([p[1] for p in probs]))
    return sc.AgentRecord(
        id=aid,
        position=[round(float(v), 4) for v in position],
        velocity=[round(float(v), 4) for v in speed * direction],
        acceleration=[round(float(v), 4) for v in rng.normal(scale=0.2, size=2)],
        yaw=round(float(ont.wrap_angle(yaw)), 4),
        yaw_rate=round(float(rng.normal(scale=0.01)), 4),
        covariance=[round(float(v), 4) for v in rng.uniform(0.01, 0.5, size=8)],
        max_velocity=round(float(max(speed, rng.uniform(5.0, 20.0))), 4),
        tracked_time=round(float(rng.uniform(0.5, 5.0)), 4),
        length=round(length + float(rng.normal(scale=0.1)), 4),
        width=round(width + float(rng.normal(scale=0.05)), 4),
        agent_type=agent_type,
        sensor_probabilities=probs,
        existence_confidence=round(min(max(exist + float(rng.normal(scale=0.05)),
                                           0.0), 1.0), 4),
        trajectory=_trajectory(rng, speed, yaw, traj_sigma,
                               valid_mask=valid_mask))


def _stationary_speed(rng):
    return float(rng.uniform(0.0, 0.05))


# ---------------------------------------------------------------------------
# scene construction


def _build_map(rng, cfg: GenConfig):
    n_lanes = int(rng.integers(cfg.lanes_per_scene[0],
                               cfg.lanes_per_scene[1] + 1))
    length = float(rng.uniform(*cfg.lane_length))
    width = float(rng.uniform(*cfg.lane_width))
    xs = np.linspace(-length / 2, length / 2, 5)
    curve = (float(rng.uniform(-0.002, 0.002))
             if rng.random() < cfg.curve_prob else 0.0)
    bend = curve * (xs - xs[0]) ** 2

    def centerline(y0):
        return [[round(float(x), 4), round(float(y0 + b), 4)]
                for x, b in zip(xs, bend)]

    lanes = []
    for i in range(n_lanes):
        lanes.append(sc.LaneRecord(
            id=f"l{i}", centerline=centerline(i * width),
            widths=[round(width, 4)] * 5, lane_type="car",
            max_speed=round(float(rng.uniform(8.0, 17.0)), 4),
            left_boundary="dashed" if i + 1 < n_lanes else "solid",
            right_boundary="dashed" if i > 0 else "solid",
            turn_type="straight"))
    has_parking = rng.random() < cfg.parking_lane_prob
    if has_parking:
        lanes.append(sc.LaneRecord(
            id="lp", centerline=centerline(-width),
            widths=[round(width, 4)] * 5, lane_type="parking",
            max_speed=2.0, left_boundary="dashed", right_boundary="curb",
            turn_type="straight"))

    relations = []
    order = [l.id for l in lanes[:n_lanes]]
    if has_parking:
        order.insert(0, "lp")
    for lo, hi in zip(order, order[1:]):
        relations.append(sc.MapRelation("connection", hi, lo,
                                        {"type": "right_neighbor"}))
        relations.append(sc.MapRelation("connection", lo, hi,
                                        {"type": "left_neighbor"}))
    if n_lanes >= 2 and rng.random() < 0.2:
        relations.append(sc.MapRelation(
            "conflict", "l0", "l1",
            {"type": str(rng.choice(ont.CONFLICT_TYPES))}))
        relations.append(sc.MapRelation(
            "precedence", "l0", "l1",
            {"type": str(rng.choice(ont.PRECEDENCE_TYPES))}))

    crosswalks, lights, stops = [], [], []
    crosswalk_x = None
    if rng.random() < cfg.crosswalk_prob:
        crosswalk_x = float(rng.uniform(-0.3, 0.3)) * length
        y_lo = (-1.5 if not has_parking else -width - 1.5)
        y_hi = (n_lanes - 1) * width + bend.max() + 1.5 + width
        half_w = float(rng.uniform(1.5, 2.5))
        crosswalks.append(sc.CrosswalkRecord(
            "c0",
            [[round(crosswalk_x - half_w, 4), round(y_lo, 4)],
             [round(crosswalk_x + half_w, 4), round(y_lo, 4)],
             [round(crosswalk_x + half_w, 4), round(y_hi, 4)],
             [round(crosswalk_x - half_w, 4), round(y_hi, 4)]],
            True))
        lights.append(sc.LightRecord(
            "t0", "car", "red", False,
            [round(crosswalk_x - half_w - 1.0, 4), round(-0.5 * width, 4)]))
        lights.append(sc.LightRecord(
            "tp", "pedestrian", "green", True,
            [round(crosswalk_x, 4), round(y_hi, 4)]))
        relations.append(sc.MapRelation("signals", "t0", "c0", {}))
        relations.append(sc.MapRelation("signals", "tp", "c0", {}))
        for i in range(n_lanes):
            relations.append(sc.MapRelation("overlaps", "c0", f"l{i}", {}))
            relations.append(sc.MapRelation("controls", "t0", f"l{i}", {}))
    if rng.random() < cfg.stop_prob:
        stop_x = float(rng.uniform(-0.4, 0.4)) * length
        stops.append(sc.StopRecord(
            "s0", str(rng.choice(ont.STOP_TYPES)), [round(stop_x, 4), 0.0]))
        relations.append(sc.MapRelation(
            "stops", "s0", "l0",
            {"longitudinal_position": round(stop_x + length / 2, 4)}))
    return (lanes, n_lanes, has_parking, length, width, crosswalk_x,
            crosswalks, lights, stops, relations)


def _gen_scene(scene_index, cfg: GenConfig, rng):
    (lanes, n_lanes, has_parking, length, width, crosswalk_x,
     crosswalks, lights, stops, relations) = _build_map(rng, cfg)
    polys = [sc.Polyline(l.centerline, l.widths) for l in lanes]
    driving = list(range(n_lanes))
    parking_idx = len(lanes) - 1 if has_parking else None
    half = width / 2

    names = list(cfg.archetype_weights)
    weights = np.array([cfg.archetype_weights[n] for n in names], dtype=float)
    weights /= weights.sum()
    n_agents = int(rng.integers(cfg.agents_per_scene[0],
                                cfg.agents_per_scene[1] + 1))

    agents = []
    stationary_sigma = min(cfg.traj_noise, 0.002)

    def add(agent):
        agents.append(agent)

    def rand_s(margin=3.0):
        return float(rng.uniform(margin, length - margin))

    for slot in range(n_agents):
        kind = names[int(rng.choice(len(names), p=weights))]
        if kind == "parked_lane" and not has_parking:
            kind = "parked_roadside"
        aid = f"a{len(agents)}"
        if kind == "driver":
            li = int(rng.choice(driving))
            pos, tangent = _place(polys[li], rand_s(),
                                  float(rng.normal(scale=0.25 * half)))
            add(_make_agent(rng, aid, pos, tangent,
                            float(rng.uniform(3.0, 14.0)),
                            agent_type=str(rng.choice(
                                ["car", "car", "car", "truck", "two_wheeler"])),
                            traj_sigma=cfg.traj_noise))
        elif kind == "temp_stopped":
            li = int(rng.choice(driving))
            s = (rand_s() if crosswalk_x is None
                 else crosswalk_x + length / 2 - float(rng.uniform(2.0, 7.0)))
            s = float(np.clip(s, 1.0, length - 1.0))
            d = float(np.clip(rng.normal(scale=0.15 * half),
                              -0.4 * half, 0.4 * half))
            pos, tangent = _place(polys[li], s, d)
            add(_make_agent(rng, aid, pos, tangent, _stationary_speed(rng),
                            traj_sigma=stationary_sigma))
            if rng.random() < cfg.pedestrian_prob:
                ppos, ptan = _place(polys[li], s + float(rng.uniform(3.0, 8.0)),
                                    float(rng.uniform(-0.5, 0.5) * half))
                add(_make_agent(rng, f"a{len(agents)}", ppos,
                                ptan + float(rng.choice([-1, 1])) * np.pi / 2,
                                float(rng.uniform(0.8, 2.0)),
                                agent_type="human", traj_sigma=cfg.traj_noise))
        elif kind == "parked_lane":
            pos, tangent = _place(polys[parking_idx], rand_s(),
                                  float(rng.normal(scale=0.2 * half)))
            add(_make_agent(rng, aid, pos, tangent, _stationary_speed(rng),
                            traj_sigma=stationary_sigma))
        elif kind == "parked_roadside":
            li = int(rng.choice(driving))
            side = float(rng.choice([-1, 1]))
            s = rand_s(margin=8.0)
            d = side * float(rng.uniform(0.75, 0.95)) * half
            pos, tangent = _place(polys[li], s, d)
            add(_make_agent(rng, aid, pos, tangent, _stationary_speed(rng),
                            traj_sigma=stationary_sigma))
            if rng.random() < cfg.companion_prob:
                pos2, tan2 = _place(polys[li],
                                    s + float(rng.uniform(5.0, 8.0)), d)
                add(_make_agent(rng, f"a{len(agents)}", pos2, tan2,
                                _stationary_speed(rng),
                                traj_sigma=stationary_sigma))
        else:  # ghost
            mode = str(rng.choice(["wrong_way", "low_conf", "gaps"]))
            li = int(rng.choice(driving))
            pos, tangent = _place(polys[li], rand_s(),
                                  float(rng.normal(scale=0.25 * half)))
            speed = float(rng.uniform(3.0, 12.0))
            if mode == "wrong_way":
                add(_make_agent(rng, aid, pos, tangent + np.pi, speed,
                                traj_sigma=cfg.traj_noise))
            elif mode == "low_conf":
                add(_make_agent(rng, aid, pos, tangent, speed,
                                traj_sigma=cfg.traj_noise,
                                low_confidence=True))
            else:
                frac = float(rng.uniform(cfg.ghost_gap_frac + 0.1, 0.9))
                mask = rng.random(ont.TRAJECTORY_STEPS) >= frac
                while np.mean(~mask) <= cfg.ghost_gap_frac:
                    mask[int(rng.integers(ont.TRAJECTORY_STEPS))] = False
                add(_make_agent(rng, aid, pos, tangent, speed,
                                traj_sigma=cfg.traj_noise, valid_mask=mask))

    labels = {}
    for a in agents:
        parked = parked_rule(a, lanes, polys, cfg)
        ghost = ghost_rule(a, lanes, polys, cfg)
        if rng.random() < cfg.label_noise:
            parked = not parked
        if rng.random() < cfg.label_noise:
            ghost = not ghost
        labels[a.id] = {"parked": bool(parked), "ghost": bool(ghost)}
    return sc.SceneDescription(
        agents=agents, lanes=lanes, crosswalks=crosswalks, stops=stops,
        lights=lights, map_relations=relations, labels=labels)


def generate(cfg: GenConfig):
    """All scenes for a config; scene i derives its own rng sub-stream."""
    scenes = []
    for i in range(cfg.n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        scenes.append(_gen_scene(i, cfg, rng))
    return scenes


# ---------------------------------------------------------------------------
# dataset plumbing


def split_indices(n, fractions=(0.6, 0.3, 0.1)):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (list(range(n_train)), list(range(n_train, n_train + n_val)),
            list(range(n_train + n_val, n)))


def as_labeled(scenes):
    return [tr.LabeledGraph(sc.assemble_graph(s), sc.agent_labels(s))
            for s in scenes]


def make_split(scenes, fractions=(0.6, 0.3, 0.1)) -> tr.SplitDataset:
    tr_idx, va_idx, te_idx = split_indices(len(scenes), fractions)
    return tr.SplitDataset(
        train=as_labeled([scenes[i] for i in tr_idx]),
        val=as_labeled([scenes[i] for i in va_idx]),
        test=as_labeled([scenes[i] for i in te_idx]))


def save_dataset(scenes, out_dir, cfg: GenConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:05d}.json"
        sc.save_scene(scene, out / name)
        names.append(name)
    tr_idx, va_idx, te_idx = split_indices(len(scenes), cfg.splits)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n_scenes": len(scenes),
        "splits": {"train": [names[i] for i in tr_idx],
                   "val": [names[i] for i in va_idx],
                   "test": [names[i] for i in te_idx]},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(data_dir) -> tr.SplitDataset:
    data = Path(data_dir)
    with open(data / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    parts = {}
    for split, names in manifest["splits"].items():
        parts[split] = as_labeled([sc.load_scene(data / n) for n in names])
    return tr.SplitDataset(**parts)


# ---------------------------------------------------------------------------
# baselines


def velocity_baseline(scene: sc.SceneDescription):
    """Parked prediction per agent: parked iff currently (near) stationary."""
    return np.array([int(a.speed() < VELOCITY_PARKED_THRESHOLD)
                     for a in scene.agents])


def velocity_baseline_metrics(scenes, labels_key="parked") -> tr.MetricReport:
    preds, labels = [], []
    for scene in scenes:
        pred = velocity_baseline(scene)
        lab = sc.agent_labels(scene)[labels_key]
        mask = ~np.isnan(lab)
        preds.append(pred[mask])
        labels.append(lab[mask].astype(int))
    return tr.compute_metrics(np.concatenate(preds), np.concatenate(labels))


@dataclass
class MlpModel:
    """Four linear layers with ReLU between, on raw agent features only."""

    hidden: int
    layers: list  # [{"w", "b"}] x 4
    norm: tuple = None  # (mean, std) per input column, fitted on train

    def tensors(self):
        out = {}
        for i, p in enumerate(self.layers):
            out[f"mlp.l{i}.w"], out[f"mlp.l{i}.b"] = p["w"], p["b"]
        return out

    def num_parameters(self):
        return sum(t.data.size for t in self.tensors().values())


def build_mlp(seed=0, hidden=64, d_in=ont.AGENT_DIM, dtype=np.float32):
    rng = np.random.default_rng(seed)
    dims = [d_in, hidden, hidden, hidden, 1]
    layers = [{"w": ad.glorot(rng, dims[i + 1], dims[i], dtype=dtype),
               "b": ad.zeros_param((1, dims[i + 1]), dtype=dtype)}
              for i in range(4)]
    return MlpModel(hidden=hidden, layers=layers)


def mlp_forward(model: MlpModel, graph):
    dtype = model.layers[0]["w"].dtype
    x = graph.nodes["agent"].astype(dtype)
    if model.norm is not None:
        x = ((x - model.norm[0]) / model.norm[1]).astype(dtype)
    h = ad.Tensor(x)
    for i, p in enumerate(model.layers):
        wt = ad.record_op(p["w"].data.T.copy(), (p["w"],), (lambda g: g.T,))
        h = ad.add(ad.matmul(h, wt), p["b"])
        if i + 1 < len(model.layers):
            h = ad.relu(h)
    return h


def _mlp_eval(model, data, task, threshold=0.5):
    preds, labels = [], []
    for lg in data:
        prob = tr._sigmoid(mlp_forward(model, lg.graph).data.reshape(-1))
        mask = ~np.isnan(lg.labels[task])
        preds.append((prob[mask] > threshold).astype(int))
        labels.append(lg.labels[task][mask].astype(int))
    return tr.compute_metrics(np.concatenate(preds), np.concatenate(labels))


def train_mlp(data: tr.SplitDataset, task, seed,
              train_cfg: tr.TrainConfig = None):
    """Same recipe as the scene model: Adam, masked BCE, best-val-F1 pick."""
    train_cfg = train_cfg or tr.TrainConfig()
    model = build_mlp(seed=seed)
    feats = np.concatenate([lg.graph.nodes["agent"] for lg in data.train
                            if lg.graph.num_nodes("agent")]).astype(np.float64)
    model.norm = (feats.mean(axis=0).astype(np.float32),
                  np.maximum(feats.std(axis=0), 1e-3).astype(np.float32))
    params = model.tensors()
    state = tr.AdamState(lr=train_cfg.lr)
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0B]))
    best = (-1.0, None)
    for _ in range(train_cfg.epochs):
        idx = order_rng.permutation(len(data.train))
        for start in range(0, len(idx), train_cfg.batch_size):
            batch = [data.train[i] for i in idx[start:start + train_cfg.batch_size]]
            labels = np.concatenate([lg.labels[task] for lg in batch])
            mask = np.flatnonzero(~np.isnan(labels))
            if mask.size == 0:
                continue
            ad.zero_grads(params.values())
            with ad.Tape() as tape:
                logits = ad.concat_rows(
                    [mlp_forward(model, lg.graph) for lg in batch])
                loss = tr.bce_loss(ad.gather_rows(logits, mask), labels[mask])
            ad.backward(tape, loss)
            tr.adam_step(params, state)
        val = _mlp_eval(model, data.val, task, train_cfg.threshold).f1
        if val > best[0]:
            best = (val, {k: p.data.copy() for k, p in params.items()})
    if best[1] is not None:
        for k, p in params.items():
            p.data = best[1][k]
    return model, _mlp_eval(model, data.test, task, train_cfg.threshold)
