from pathlib import Path

import pytest

import volumae.training.ablation
from volumae.config import InteractionSpace, RunConfig
from volumae.constants import ABLATION_FILE
from volumae.model import VolumaeModel
from volumae.orchestrator.data_storage import list_scene_files, read_json
from volumae.schemas import RunStatus
from volumae.training.ablation import (
    AblationArm,
    Modality,
    ablate,
    ablation_arms,
    structural_invariants,
)


def test_ablation_arms():
    arms = ablation_arms()

    assert len(arms) == 7
    assert len({arm.id for arm in arms}) == 7
    assert {(arm.interaction_space, arm.modality) for arm in arms if arm.interaction} == {
        (space, modality) for space in InteractionSpace for modality in Modality
    }
    assert len(ablation_arms(with_mask_ratios=True)) == 12


def test_arm_apply(tiny_config: RunConfig):
    arm = AblationArm(
        id="bev-camera",
        interaction_space=InteractionSpace.BEV,
        modality=Modality.CAMERA,
        interaction=False,
        mask_ratios=(0.5, 0.6),
    )

    config = arm.apply(tiny_config, steps=4)

    assert config.total_steps == 4
    assert (config.loss.weight_voxel, config.loss.weight_image) == (0.0, 1.0)
    assert config.mmim.blocks == 0
    assert config.interaction_space == InteractionSpace.BEV
    assert config.volume.grid_shape[2] == 1
    assert (config.mask_ratio_lidar, config.mask_ratio_camera) == (0.5, 0.6)
    assert config.encoder == tiny_config.encoder


def test_structural_invariants(tiny_config: RunConfig, scene_dir: Path):
    model = VolumaeModel(tiny_config)

    invariants = structural_invariants(model, list_scene_files(scene_dir)[0])

    assert invariants == {
        "attention_weights_normalized": True,
        "empty_interaction_is_identity": True,
    }


def test_ablate_runs_every_arm(
    monkeypatch, tiny_config: RunConfig, scene_dir: Path, tmp_path
):
    arms = [
        AblationArm(id="bev-lidar", interaction_space="bev", modality=Modality.LIDAR),
        AblationArm(id="no-mmim", interaction=False),
    ]
    monkeypatch.setattr(volumae.training.ablation, "ablation_arms", lambda _: arms)

    results = ablate(tiny_config, list_scene_files(scene_dir), tmp_path / "ablation", steps=2)

    assert [result.status for result in results] == [RunStatus.COMPLETED] * 2
    assert all(result.finite for result in results)
    assert all(all(result.invariants.values()) for result in results)
    assert results[0].interaction_space == InteractionSpace.BEV
    assert results[1].interaction is False

    stored = read_json(tmp_path / "ablation" / ABLATION_FILE)
    assert stored["steps"] == 2
    assert [arm["id"] for arm in stored["arms"]] == ["bev-lidar", "no-mmim"]
    assert (tmp_path / "ablation" / "no-mmim" / "metrics.csv").exists()


def test_failing_arm_does_not_stop_the_others(
    monkeypatch, tiny_config: RunConfig, scene_dir: Path, tmp_path
):
    arms = [AblationArm(id="broken"), AblationArm(id="fine")]
    monkeypatch.setattr(volumae.training.ablation, "ablation_arms", lambda _: arms)
    run_arm = volumae.training.ablation._run_arm

    def flaky_run_arm(arm, config, scene_files, directory):
        if arm.id == "broken":
            raise RuntimeError("arm broke")
        return run_arm(arm, config, scene_files, directory)

    monkeypatch.setattr(volumae.training.ablation, "_run_arm", flaky_run_arm)

    results = ablate(tiny_config, list_scene_files(scene_dir), tmp_path / "ablation", steps=1)

    assert [result.status for result in results] == [RunStatus.FAILED, RunStatus.COMPLETED]
    assert "arm broke" in results[0].error
    assert results[0].final is None


@pytest.mark.slow
def test_full_ablation(tiny_config: RunConfig, scene_dir: Path, tmp_path):
    results = ablate(
        tiny_config,
        list_scene_files(scene_dir),
        tmp_path / "ablation",
        steps=3,
        with_mask_ratios=True,
    )

    assert len(results) == 12
    assert all(result.status == RunStatus.COMPLETED for result in results)
    assert all(result.finite for result in results)
    assert all(all(result.invariants.values()) for result in results)
