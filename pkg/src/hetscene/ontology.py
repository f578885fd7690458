"""The fixed traffic-scene ontology: five node types, eleven relation types
with fixed source/destination types, and the feature layouts per type.

Category features are one-hot encoded; the enumerations below define both the
JSON vocabulary and the encoding order.
"""

from __future__ import annotations

import numpy as np

from .graph import Relation, Schema

AGENT_TYPES = ("car", "truck", "two_wheeler", "human", "other")
LANE_TYPES = ("car", "bike", "shoulder", "parking")
BOUNDARY_TYPES = ("solid", "dashed", "curb")
TURN_TYPES = ("straight", "left", "right")
STOP_TYPES = ("stop", "crosswalk", "yield")
LIGHT_TYPES = ("car", "pedestrian")
LIGHT_STATES = ("red", "yellow", "green", "off")
CONNECTION_TYPES = ("precede", "succeed", "left_neighbor", "right_neighbor")
CONFLICT_TYPES = ("cross", "merge", "diverge")
PRECEDENCE_TYPES = ("higher", "lower")
BEHAVIOR_PRIMITIVES = ("following", "crossing", "oncoming", "stationary")

SENSORS = ("camera", "lidar", "radar")  # two probabilities each

TRAJECTORY_STEPS = 30
TRAJECTORY_WIDTH = 4  # dx, dy, dyaw, valid

# static agent features: state (8) + covariance diagonal (8) + tracking (2)
# + bounding box (2) + type one-hot + sensor probabilities + fused confidence
AGENT_STATIC_DIM = 8 + 8 + 2 + 2 + len(AGENT_TYPES) + 2 * len(SENSORS) + 1
AGENT_DIM = AGENT_STATIC_DIM + TRAJECTORY_STEPS * TRAJECTORY_WIDTH

LANE_DIM = len(LANE_TYPES) + 5 + 2 * len(BOUNDARY_TYPES) + len(TURN_TYPES)
CROSSWALK_DIM = 1
STOP_DIM = len(STOP_TYPES)
LIGHT_DIM = len(LIGHT_TYPES) + len(LIGHT_STATES) + 1

INTERACTS_DIM = 5  # dpos (2), dvel (2), dheading (1)
UNDER_DIM = 10 + len(BEHAVIOR_PRIMITIVES)
UNIT_EDGE_DIM = 1  # relations whose features carry no attributes

# relation name -> (source type, destination type, edge feature dim)
RELATIONS = {
    "interacts": ("agent", "agent", INTERACTS_DIM),
    "on": ("agent", "lane", UNIT_EDGE_DIM),
    "under": ("lane", "agent", UNDER_DIM),
    "crosses": ("agent", "crosswalk", UNIT_EDGE_DIM),
    "overlaps": ("crosswalk", "lane", UNIT_EDGE_DIM),
    "controls": ("light", "lane", UNIT_EDGE_DIM),
    "signals": ("light", "crosswalk", UNIT_EDGE_DIM),
    "stops": ("stop", "lane", 1),
    "connection": ("lane", "lane", len(CONNECTION_TYPES)),
    "conflict": ("lane", "lane", len(CONFLICT_TYPES)),
    "precedence": ("lane", "lane", len(PRECEDENCE_TYPES)),
}

NODE_DIMS = {
    "agent": AGENT_DIM,
    "lane": LANE_DIM,
    "crosswalk": CROSSWALK_DIM,
    "stop": STOP_DIM,
    "light": LIGHT_DIM,
}


def scene_schema() -> Schema:
    return Schema(
        node_types=dict(NODE_DIMS),
        relations={name: Relation(name, src, dst, dim)
                   for name, (src, dst, dim) in RELATIONS.items()})


def one_hot(value, categories):
    vec = np.zeros(len(categories), dtype=np.float32)
    try:
        vec[categories.index(value)] = 1.0
    except ValueError:
        raise ValueError(f"unknown category {value!r}, expected one of {categories}")
    return vec


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = (-a + np.pi) % (2 * np.pi)
    return np.pi - w
