import dataclasses
import json

import numpy as np
import pytest

from fgbev.labels import DepthBinConfig, generate_hard_labels
from fgbev.pci import frame_combination
from fgbev.pipeline import (
    PipelineConfig,
    PipelineResult,
    PipelineStageError,
    ablation_sweep,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    run_pipeline,
    sweep_table,
)
from fgbev.scene import SceneConfig, generate_scene

SMALL_SCENE = SceneConfig(
    n_frames=3,
    n_boxes=8,
    lidar_rays_per_box=16,
    clutter_points=32,
    dropout_fraction=0.3,
    stationary_fraction=0.7,
    image_width=256,
    image_height=128,
)


def small_config(**overrides):
    kwargs = dict(scene=SMALL_SCENE, seed=17)
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


class TestRunPipeline:
    def test_deterministic_across_runs(self):
        cfg = small_config()
        a = run_pipeline(cfg)
        b = run_pipeline(cfg)
        assert a.loss == b.loss
        assert a.included_cells == b.included_cells
        assert a.pci_report == b.pci_report
        assert np.array_equal(a.bev_occupancy_student, b.bev_occupancy_student)
        assert np.array_equal(a.bev_occupancy_teacher, b.bev_occupancy_teacher)
        assert a.to_dict() == b.to_dict()

    def test_all_stages_timed(self):
        result = run_pipeline(small_config())
        assert {
            "generate_scene",
            "msfe",
            "soft_labels",
            "hard_labels",
            "frame_combination",
            "pseudo_points",
            "student_pooling",
            "teacher_pooling",
            "encode",
            "distill_loss",
        } <= set(result.timing)
        assert all(t >= 0 for t in result.timing.values())

    def test_fixed_point_without_lidar(self):
        cfg = small_config(
            scene=dataclasses.replace(
                SMALL_SCENE, lidar_rays_per_box=0, clutter_points=0, dropout_fraction=0.0
            ),
            ppa_enabled=False,
        )
        result = run_pipeline(cfg)
        assert result.loss == 0.0
        assert np.array_equal(result.bev_occupancy_student, result.bev_occupancy_teacher)

    def test_perfect_soft_labels_converge(self):
        cfg = small_config(
            scene=dataclasses.replace(
                SMALL_SCENE, dropout_fraction=0.0, lidar_rays_per_box=48
            ),
            soft_label_noise=0.0,
            fc_enabled=False,
            ppa_enabled=False,
        )
        assert run_pipeline(cfg).loss < 1e-3

    def test_noise_separates_teacher_from_student(self):
        result = run_pipeline(small_config(soft_label_noise=0.2))
        assert result.loss > 0.0
        assert result.included_cells > 0

    def test_stage_isolation_of_pci(self):
        on = run_pipeline(small_config())
        off = run_pipeline(small_config(fc_enabled=False, ppa_enabled=False))
        assert np.array_equal(on.bev_occupancy_student, off.bev_occupancy_student)

    def test_added_points_never_reduce_valid_cells(self):
        bin_cfg = DepthBinConfig()
        for seed in range(5):
            scene = generate_scene(SMALL_SCENE, seed)
            cam = scene.current.cameras[0]
            raw = generate_hard_labels(
                scene.current.lidar, scene.current.boxes, cam, bin_cfg, 16
            )
            combined = frame_combination(scene.current, scene.past)
            dense = generate_hard_labels(combined, scene.current.boxes, cam, bin_cfg, 16)
            assert dense.valid_mask.sum() >= raw.valid_mask.sum()
            assert np.all(dense.valid_mask | ~raw.valid_mask)

    def test_teacher_mass_concentrates_near_boxes(self):
        # With exact soft labels every pooled contribution sits on a box
        # surface (measured, ray-cast, or corner-depth pseudo), so occupied
        # BEV cells must lie within each source box's footprint reach.
        cfg = small_config(
            scene=dataclasses.replace(SMALL_SCENE, dropout_fraction=0.3),
            soft_label_noise=0.0,
        )
        result = run_pipeline(cfg)
        occ = result.bev_occupancy_teacher
        assert occ.any()
        scene = generate_scene(cfg.scene, cfg.seed)
        boxes = scene.current.boxes
        bev = cfg.bev
        cell_h, cell_w = bev.cell_size
        rows, cols = np.nonzero(occ > 1e-12)
        for r, c in zip(rows, cols):
            x = -bev.range_xy + (c + 0.5) * cell_w
            y = -bev.range_xy + (r + 0.5) * cell_h
            slack = min(
                np.hypot(*(np.asarray(b.center[:2]) - (x, y))) - np.hypot(*b.size[:2]) / 2
                for b in boxes
            )
            assert slack < 1.6, f"occupied cell ({r},{c}) is {slack:.2f} m off any box"

    def test_encoder_choice_changes_loss(self):
        ident = run_pipeline(small_config(encoder_kind="identity"))
        blur = run_pipeline(small_config(encoder_kind="box_blur"))
        assert ident.loss != blur.loss

    def test_stage_error_attribution(self):
        cfg = small_config(
            scene=dataclasses.replace(SMALL_SCENE, image_width=250, image_height=130)
        )
        with pytest.raises(PipelineStageError, match="synth_features"):
            run_pipeline(cfg)

    def test_result_validation(self):
        with pytest.raises(ValueError, match="exceeds"):
            PipelineResult(
                loss=0.0,
                included_cells=100,
                pci_report=run_pipeline(small_config()).pci_report,
                bev_occupancy_student=np.zeros((3, 3)),
                bev_occupancy_teacher=np.zeros((3, 3)),
                msfe_metrics={},
                timing={},
            )


class TestConfig:
    def test_defaults_match_detection_geometry(self):
        cfg = PipelineConfig()
        assert cfg.bev.range_xy == 51.2
        assert (cfg.bev.grid_h, cfg.bev.grid_w) == (128, 128)
        assert cfg.bev.z_range == (-5.0, 3.0)
        assert cfg.bins.n_bins == 118
        assert cfg.beta == 0.1
        assert cfg.seg_threshold == 0.25

    def test_json_roundtrip(self):
        cfg = small_config(beta=0.2, encoder_kind="box_blur")
        data = json.loads(json.dumps(config_to_dict(cfg)))
        assert config_from_dict(data) == cfg

    def test_partial_dict_uses_defaults(self):
        cfg = config_from_dict({"seed": 5, "scene": {"n_boxes": 3}})
        assert cfg.seed == 5
        assert cfg.scene.n_boxes == 3
        assert cfg.scene.n_frames == SceneConfig().n_frames

    def test_unknown_field_named(self):
        with pytest.raises(ValueError, match="wibble"):
            config_from_dict({"wibble": 1})
        with pytest.raises(ValueError, match="wobble"):
            config_from_dict({"scene": {"wobble": 2}})

    @pytest.mark.parametrize(
        "data, field",
        [
            ({"scene": {"n_frames": "two"}}, "n_frames"),
            ({"beta": "high"}, "beta"),
            ({"scene": 42}, "scene"),
            ({"fc_enabled": "yes"}, "fc_enabled"),
            ({"seed": 1.5}, "seed"),
            ({"scene": {"n_boxes": True}}, "n_boxes"),
            ({"bev": {"z_range": [1, "b"]}}, "z_range"),
        ],
    )
    def test_wrong_json_types_named(self, data, field):
        with pytest.raises(ValueError, match=field):
            config_from_dict(data)

    def test_numeric_coercion_int_to_float(self):
        cfg = config_from_dict({"beta": 0, "bins": {"d_min": 2}})
        assert cfg.beta == 0.0 and isinstance(cfg.beta, float)
        assert cfg.bins.d_min == 2.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(beta=1.5),
            dict(seg_threshold=-0.1),
            dict(eps=0.0),
            dict(encoder_kind="mlp"),
            dict(soft_label_noise=-1.0),
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            PipelineConfig(**kwargs)

    def test_overrides_reach_nested_sections(self):
        cfg = apply_overrides(
            PipelineConfig(), {"scene.n_boxes": 3, "bev.grid_h": 64, "seed": 9}
        )
        assert cfg.scene.n_boxes == 3
        assert cfg.bev.grid_h == 64
        assert cfg.seed == 9

    def test_override_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="nonsense"):
            apply_overrides(PipelineConfig(), {"scene.nonsense": 1})


class TestAblationSweep:
    def test_empty_toggles_single_row(self):
        rows = ablation_sweep(small_config(), [])
        assert len(rows) == 1
        assert rows[0]["toggles"] == []

    def test_fc_toggle_recovers_boxes(self):
        base = small_config(
            scene=dataclasses.replace(
                SMALL_SCENE, dropout_fraction=1.0, stationary_fraction=1.0
            ),
            fc_enabled=False,
            ppa_enabled=False,
        )
        rows = ablation_sweep(base, [("fc", {"fc_enabled": True})])
        off, on = rows
        assert off["toggles"] == [] and on["toggles"] == ["fc"]
        assert (
            on["pci_report"]["boxes_without_points_after_fc"]
            < off["pci_report"]["boxes_without_points_after_fc"]
        )

    def test_two_toggles_four_rows_ordered(self):
        base = small_config(fc_enabled=False, ppa_enabled=False)
        rows = ablation_sweep(
            base, [("fc", {"fc_enabled": True}), ("ppa", {"ppa_enabled": True})]
        )
        assert [r["toggles"] for r in rows] == [[], ["fc"], ["ppa"], ["fc", "ppa"]]

    def test_table_rendering(self):
        rows = ablation_sweep(small_config(), [])
        text = sweep_table(rows)
        lines = text.strip().split("\n")
        assert lines[0].startswith("toggles,loss,included_cells")
        assert lines[1].startswith("(base),")
