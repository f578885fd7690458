"""The scene encoder/decoder model.

Type-specific linear input encoders, a split agent encoding (static linear +
recurrent trajectory encoding, concatenated), four cascaded heterogeneous
attention layers in the ontology's information-flow order
(crosswalk -> lane -> agent -> agent), two residual concatenations feeding a
two-layer MLP decoder with dropout.  All switches of the ablation studies are
configuration flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gat
from . import ontology as ont

CONTEXT_LEVELS = ("none", "agent", "lane", "full")

# cascade schedule: (updated node type, relations) in execution order,
# tagged with the minimal context level that enables each relation
_CASCADE = (
    ("crosswalk", {"crosses": "full", "signals": "full"}),
    ("lane", {"on": "lane", "connection": "lane", "conflict": "lane",
              "precedence": "lane", "overlaps": "full", "controls": "full",
              "stops": "full"}),
    ("agent", {"under": "lane"}),
    ("agent", {"interacts": "agent"}),
)


@dataclass
class EncoderConfig:
    d_node: int = 64
    d_edge: int = 16
    gru_hidden: int = 32
    heads: int = 2
    decoder_hidden: int = 64
    dropout: float = 0.3
    use_temporal: bool = True
    use_residual_concat: bool = True
    use_edge_features: bool = True
    context_level: str = "full"
    tasks: tuple = ("parked",)

    def __post_init__(self):
        if self.context_level not in CONTEXT_LEVELS:
            raise ValueError(f"context_level must be one of {CONTEXT_LEVELS}")
        if min(self.d_node, self.d_edge, self.gru_hidden, self.decoder_hidden) <= 0:
            raise ValueError("dimensions must be positive")

    def active_relations(self):
        idx = CONTEXT_LEVELS.index(self.context_level)

        def enabled(level):
            return CONTEXT_LEVELS.index(level) <= idx

        return [(target, [r for r, lvl in rels.items() if enabled(lvl)])
                for target, rels in _CASCADE]

    def to_dict(self):
        d = self.__dict__.copy()
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["tasks"] = tuple(d.get("tasks", ("parked",)))
        return cls(**d)


def _linear_params(rng, d_out, d_in, dtype):
    return {"w": ad.glorot(rng, d_out, d_in, dtype=dtype),
            "b": ad.zeros_param((1, d_out), dtype=dtype)}


def _linear(x, p):
    return ad.add(ad.matmul(x, ad.record_op(p["w"].data.T.copy(), (p["w"],),
                                            (lambda g: g.T,))), p["b"])


def _make_gru(rng, d_in, d_hidden, dtype):
    def w(r, c):
        return ad.glorot(rng, r, c, dtype=dtype)

    def b():
        return ad.zeros_param((1, d_hidden), dtype=dtype)

    return ad.GruParams(
        w_z=w(d_hidden, d_in), u_z=w(d_hidden, d_hidden), b_z=b(),
        w_r=w(d_hidden, d_in), u_r=w(d_hidden, d_hidden), b_r=b(),
        w_h=w(d_hidden, d_in), u_h=w(d_hidden, d_hidden), b_h=b())


@dataclass
class SceneModel:
    config: EncoderConfig
    node_encoders: dict          # non-agent type -> linear params
    agent_static: dict
    gru: object                  # GruParams or None
    edge_encoders: dict          # relation -> linear params or None
    layers: list                 # HetLayerParams per cascade stage (or None)
    decoders: dict               # task -> {"l1": .., "l2": ..}
    normalizer: dict = None      # input standardization; see fit_normalizer

    def tensors(self):
        out = {}
        for t, p in self.node_encoders.items():
            out[f"enc.{t}.w"], out[f"enc.{t}.b"] = p["w"], p["b"]
        out["enc.agent_static.w"] = self.agent_static["w"]
        out["enc.agent_static.b"] = self.agent_static["b"]
        if self.gru is not None:
            out.update(self.gru.tensors(prefix="gru."))
        for r, p in self.edge_encoders.items():
            if p is not None:
                out[f"edge_enc.{r}.w"], out[f"edge_enc.{r}.b"] = p["w"], p["b"]
        for li, layer in enumerate(self.layers):
            if layer is not None:
                out.update(layer.tensors(prefix=f"layer{li}."))
        for task, dec in self.decoders.items():
            for lname, p in dec.items():
                out[f"dec.{task}.{lname}.w"] = p["w"]
                out[f"dec.{task}.{lname}.b"] = p["b"]
        return out

    def num_parameters(self):
        return sum(t.data.size for t in self.tensors().values())


def build_scene_model(cfg: EncoderConfig, seed=0, dtype=np.float32) -> SceneModel:
    rng = np.random.default_rng(seed)
    d = cfg.d_node
    node_encoders = {
        t: _linear_params(rng, d, ont.NODE_DIMS[t], dtype)
        for t in ("lane", "crosswalk", "stop", "light")
    }
    static_out = d - cfg.gru_hidden if cfg.use_temporal else d
    if static_out <= 0:
        raise ValueError("gru_hidden must be smaller than d_node")
    agent_static = _linear_params(rng, static_out, ont.AGENT_STATIC_DIM, dtype)
    gru = (_make_gru(rng, ont.TRAJECTORY_WIDTH, cfg.gru_hidden, dtype)
           if cfg.use_temporal else None)
    edge_encoders = {}
    layers = []
    for target, relations in cfg.active_relations():
        if not relations:
            layers.append(None)
            continue
        per_rel = {}
        for r in relations:
            if cfg.use_edge_features:
                edge_encoders[r] = _linear_params(
                    rng, cfg.d_edge, ont.RELATIONS[r][2], dtype)
            per_rel[r] = gat.init_edge_gat(
                rng, d, cfg.d_edge, d, num_heads=cfg.heads,
                with_edge_features=cfg.use_edge_features, dtype=dtype)
        layers.append(gat.HetLayerParams(target, per_rel))
    dec_in = 3 * d if cfg.use_residual_concat else d
    decoders = {
        task: {"l1": _linear_params(rng, cfg.decoder_hidden, dec_in, dtype),
               "l2": _linear_params(rng, 1, cfg.decoder_hidden, dtype)}
        for task in cfg.tasks
    }
    return SceneModel(cfg, node_encoders, agent_static, gru, edge_encoders,
                      layers, decoders)


def fit_normalizer(graphs):
    """Per-column standardization statistics fitted on a list of graphs.

    Returns a dict with ``("node", type)``, ``("edge", relation)`` and
    ``("traj",)`` entries mapping to (mean, std) pairs; the trajectory entry
    is per channel, shared across the 30 timesteps.  Attach the result to
    ``SceneModel.normalizer``; ``None`` (the default) means identity.
    """
    node_cols = {}
    edge_cols = {}
    for g in graphs:
        for t, x in g.nodes.items():
            if len(x):
                node_cols.setdefault(t, []).append(
                    x[:, :ont.AGENT_STATIC_DIM] if t == "agent" else x)
        for r, x in g.edge_feats.items():
            if len(x):
                edge_cols.setdefault(r, []).append(x)
    traj = [g.nodes["agent"][:, ont.AGENT_STATIC_DIM:].reshape(
        -1, ont.TRAJECTORY_WIDTH) for g in graphs if g.num_nodes("agent")]

    def stats(chunks):
        x = np.concatenate(chunks).astype(np.float64)
        # float32 so that checkpoint round-trips reproduce statistics exactly
        return (x.mean(axis=0).astype(np.float32),
                np.maximum(x.std(axis=0), 1e-3).astype(np.float32))

    norm = {("node", t): stats(c) for t, c in node_cols.items()}
    norm.update({("edge", r): stats(c) for r, c in edge_cols.items()})
    if traj:
        norm[("traj",)] = stats(traj)
    return norm


def _standardize(x, norm, key):
    if norm is None or key not in norm:
        return x
    mean, std = norm[key]
    return ((x - mean) / std).astype(x.dtype)


def encode_inputs(g, m: SceneModel):
    """Type-specific input embeddings for all nodes and edges.

    Agents combine a linear static encoding with the final hidden state of
    the trajectory GRU (each followed by ReLU); every timestep carries its
    validity flag as an input feature.
    """
    dtype = m.agent_static["w"].dtype
    norm = m.normalizer
    feats = {}
    for t, enc in m.node_encoders.items():
        x = _standardize(g.nodes[t].astype(dtype), norm, ("node", t))
        feats[t] = ad.relu(_linear(ad.Tensor(x), enc))
    raw = g.nodes["agent"].astype(dtype)
    static = ad.relu(_linear(
        ad.Tensor(_standardize(raw[:, :ont.AGENT_STATIC_DIM], norm,
                               ("node", "agent"))),
        m.agent_static))
    if m.gru is not None:
        traj = raw[:, ont.AGENT_STATIC_DIM:].reshape(
            -1, ont.TRAJECTORY_STEPS, ont.TRAJECTORY_WIDTH)
        traj = _standardize(traj, norm, ("traj",))
        h = ad.Tensor(np.zeros((len(raw), m.config.gru_hidden), dtype=dtype))
        for t in range(ont.TRAJECTORY_STEPS):
            h = ad.gru_cell(ad.Tensor(np.ascontiguousarray(traj[:, t, :])), h, m.gru)
        feats["agent"] = ad.concat_cols([static, ad.relu(h)])
    else:
        feats["agent"] = static
    efeats = {}
    for r, enc in m.edge_encoders.items():
        x = _standardize(g.edge_feats[r].astype(dtype), norm, ("edge", r))
        efeats[r] = ad.relu(_linear(ad.Tensor(x), enc))
    return feats, efeats


def cascade_forward(g, m: SceneModel, feats, efeats):
    """Run the cascaded layers; returns (decoder input, final agent state).

    The decoder input concatenates the agent input embedding with the
    agent states after the third (map) and fourth (interaction) stages when
    residual concatenation is enabled.
    """
    feats = dict(feats)
    agent_taps = [feats["agent"]]
    for li, layer in enumerate(m.layers):
        if layer is not None:
            feats[layer.target_type] = gat.het_layer_forward(
                layer, g, feats, efeats)
        if li >= 2:  # the two agent-updating stages
            agent_taps.append(feats["agent"])
    if m.config.use_residual_concat:
        dec_in = ad.concat_cols(agent_taps)
    else:
        dec_in = agent_taps[-1]
    return dec_in, feats["agent"]


def decode(dec_in, m: SceneModel, task, training=False, rng=None):
    """Two-layer MLP head; dropout after each linear layer in training."""
    dec = m.decoders[task]
    rate = m.config.dropout
    rng = rng if rng is not None else np.random.default_rng(0)
    h = ad.dropout(ad.relu(_linear(dec_in, dec["l1"])), rate, training, rng)
    return ad.dropout(_linear(h, dec["l2"]), rate, training, rng)


def forward(g, m: SceneModel, tasks=None, training=False, rng=None):
    """Per-agent logits for each requested task, shape [n_agents x 1]."""
    feats, efeats = encode_inputs(g, m)
    dec_in, _ = cascade_forward(g, m, feats, efeats)
    tasks = tasks if tasks is not None else tuple(m.decoders)
    return {task: decode(dec_in, m, task, training=training, rng=rng)
            for task in tasks}
