import filecmp
import json

import numpy as np
import pytest

from hetscene import autodiff as ad
from hetscene import ontology as ont
from hetscene import scene as sc
from hetscene import synth
from hetscene import training as tr
from hetscene.gradcheck import check_gradients
from hetscene.graph import validate

from test_scene import make_agent, make_lane


class TestConfig:
    def test_bad_probability(self):
        with pytest.raises(synth.GenError):
            synth.GenConfig(crosswalk_prob=1.5)

    def test_bad_range(self):
        with pytest.raises(synth.GenError):
            synth.GenConfig(agents_per_scene=(5, 2))

    def test_zero_lanes_rejected(self):
        with pytest.raises(synth.GenError):
            synth.GenConfig(lanes_per_scene=(0, 0))

    def test_round_trip(self):
        cfg = synth.GenConfig(n_scenes=3, seed=9)
        assert synth.GenConfig.from_dict(cfg.to_dict()) == cfg


class TestRules:
    def lane_setup(self):
        lane = make_lane("l", (0, 0), (20, 0), width=4.0)
        poly = sc.Polyline(lane.centerline, lane.widths)
        return lane, poly

    def test_stopped_centered_not_parked(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 0), vel=(0, 0))
        assert not synth.parked_rule(a, [lane], [poly], synth.GenConfig())

    def test_stopped_offset_parked(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 1.6), vel=(0, 0))  # 80% of half-width
        assert synth.parked_rule(a, [lane], [poly], synth.GenConfig())

    def test_stopped_on_parking_lane_parked(self):
        lane, poly = self.lane_setup()
        lane.lane_type = "parking"
        a = make_agent("a", (10, 0), vel=(0, 0))
        assert synth.parked_rule(a, [lane], [poly], synth.GenConfig())

    def test_moving_history_not_parked(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 1.6), vel=(0, 0))
        a.trajectory = [[0.5, 0.0, 0.0, 1.0]] * 30  # 5 m/s historically
        assert not synth.parked_rule(a, [lane], [poly], synth.GenConfig())

    def test_ghost_wrong_way(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 0), yaw=np.pi, vel=(-5, 0))
        assert synth.ghost_rule(a, [lane], [poly], synth.GenConfig())

    def test_ghost_low_confidence(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 0), vel=(5, 0))
        a.sensor_probabilities = [[0.5, 0.2]] * 3
        assert synth.ghost_rule(a, [lane], [poly], synth.GenConfig())

    def test_ghost_trajectory_gaps(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 0), vel=(5, 0))
        a.trajectory = ([[0.0, 0.0, 0.0, 0.0]] * 20
                        + [[0.5, 0.0, 0.0, 1.0]] * 10)
        assert synth.ghost_rule(a, [lane], [poly], synth.GenConfig())

    def test_regular_driver_neither(self):
        lane, poly = self.lane_setup()
        a = make_agent("a", (10, 0), vel=(8, 0))
        a.trajectory = [[0.8, 0.0, 0.0, 1.0]] * 30
        cfg = synth.GenConfig()
        assert not synth.parked_rule(a, [lane], [poly], cfg)
        assert not synth.ghost_rule(a, [lane], [poly], cfg)


class TestGenerate:
    def test_zero_agents(self):
        cfg = synth.GenConfig(n_scenes=3, agents_per_scene=(0, 0), seed=5)
        scenes = synth.generate(cfg)
        assert all(s.agents == [] for s in scenes)
        for s in scenes:
            assert validate(sc.assemble_graph(s)) == []

    def test_determinism_bitwise(self, tmp_path):
        cfg = synth.GenConfig(n_scenes=5, seed=11)
        for d in ("a", "b"):
            synth.save_dataset(synth.generate(cfg), tmp_path / d, cfg)
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                               shallow=False), name

    def test_all_scenes_valid(self):
        scenes = synth.generate(synth.GenConfig(n_scenes=40, seed=3))
        for s in scenes:
            g = sc.assemble_graph(s)
            assert validate(g) == []
            assert set(s.labels) == {a.id for a in s.agents}

    def test_class_balance_self_audit(self):
        # planted labels (noise off; the rng stream is unchanged by the rate)
        cfg = synth.GenConfig(n_scenes=1000, seed=0, label_noise=0.0)
        scenes = synth.generate(cfg)
        labels = [lab["parked"] for s in scenes for lab in s.labels.values()]
        rate = np.mean(labels)
        assert abs(rate - cfg.target_parked_rate) < 0.05, rate

    def test_scene_files_load(self, tmp_path):
        cfg = synth.GenConfig(n_scenes=6, seed=2)
        synth.save_dataset(synth.generate(cfg), tmp_path, cfg)
        data = synth.load_dataset(tmp_path)
        n = len(data.train) + len(data.val) + len(data.test)
        assert n == 6
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert synth.GenConfig.from_dict(manifest["config"]) == cfg


class TestVelocityBaseline:
    def test_stationary_parked(self):
        scene = sc.SceneDescription(
            agents=[make_agent("a", (0, 0), vel=(0, 0))], lanes=[])
        assert synth.velocity_baseline(scene).tolist() == [1]

    def test_moving_not_parked(self):
        scene = sc.SceneDescription(
            agents=[make_agent("a", (0, 0), vel=(10, 0))], lanes=[])
        assert synth.velocity_baseline(scene).tolist() == [0]


class TestMlpBaseline:
    def graph(self):
        scene = sc.SceneDescription(
            agents=[make_agent("a", (1, 0), vel=(2, 1)),
                    make_agent("b", (5, 2))],
            lanes=[make_lane("l", (0, 0), (10, 0))])
        return sc.assemble_graph(scene)

    def test_zero_weights_probability_half(self):
        m = synth.build_mlp(seed=0)
        for p in m.tensors().values():
            p.data[...] = 0.0
        out = synth.mlp_forward(m, self.graph())
        assert np.allclose(out.data, 0.0)  # sigmoid -> 0.5

    def test_gradient_check(self):
        m = synth.build_mlp(seed=1, hidden=3, dtype=np.float64)
        # nudge biases so no ReLU pre-activation sits on the kink
        for p in m.tensors().values():
            if p.data.shape[0] == 1:
                p.data += 0.05
        g = self.graph()
        labels = np.array([1.0, 0.0])

        def loss():
            return tr.bce_loss(synth.mlp_forward(m, g), labels)

        worst, report = check_gradients(loss, m.tensors())
        assert worst < 1e-6, report

    def test_trains_above_chance(self):
        scenes = synth.generate(synth.GenConfig(n_scenes=200, seed=7))
        data = synth.make_split(scenes)
        _, rep = synth.train_mlp(data, "parked", seed=0,
                                 train_cfg=tr.TrainConfig(epochs=10))
        naive = max(np.mean(np.concatenate(
            [lg.labels["parked"][~np.isnan(lg.labels["parked"])]
             for lg in data.test])), 0.0)
        assert rep.accuracy > max(naive, 1 - naive)
