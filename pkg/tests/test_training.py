import math
from pathlib import Path

import numpy as np
import pytest

from volumae.config import RunConfig, validate_run_config
from volumae.constants import (
    CHECKPOINT_ARRAYS_FILE,
    CHECKPOINT_META_FILE,
    METRICS_FILE,
    METRICS_HEADER,
    RECONSTRUCTION_DIR,
    RUN_LOGS_FILE,
    SUMMARY_FILE,
)
from volumae.exceptions import (
    CheckpointMismatchError,
    ConfigurationError,
    NonFiniteError,
    NonFiniteLossError,
)
from volumae.orchestrator.data_storage import list_scene_files, read_json, read_metrics
from volumae.training import loop
from volumae.training.checkpoint import check_compatible, load_checkpoint, restore_model
from volumae.training.loop import pretrain_run


def test_pretrain_writes_the_run_files(
    tiny_config: RunConfig, scene_dir: Path, tmp_path: Path
):
    run_dir = tmp_path / "run"

    summary = pretrain_run(tiny_config, list_scene_files(scene_dir), run_dir)

    assert summary.steps == tiny_config.total_steps
    assert summary.resumed_from is None
    assert summary.validation is None
    assert all(math.isfinite(value) for value in summary.final.values())

    rows = read_metrics(run_dir / METRICS_FILE)
    assert [row["step"] for row in rows] == list(range(tiny_config.total_steps))
    assert rows[0]["lr"] == 0.0
    header = (run_dir / METRICS_FILE).read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(METRICS_HEADER)

    for name in (CHECKPOINT_ARRAYS_FILE, CHECKPOINT_META_FILE, SUMMARY_FILE, RUN_LOGS_FILE):
        assert (run_dir / name).exists(), name
    assert any((run_dir / RECONSTRUCTION_DIR).glob("*.ppm"))

    stored = read_json(run_dir / SUMMARY_FILE)
    assert stored["steps"] == tiny_config.total_steps
    assert stored["config"]["seed"] == tiny_config.seed
    assert load_checkpoint(run_dir).step == tiny_config.total_steps


def test_pretrain_is_deterministic(tiny_config: RunConfig, scene_dir: Path, tmp_path: Path):
    files = list_scene_files(scene_dir)

    pretrain_run(tiny_config, files, tmp_path / "first")
    pretrain_run(tiny_config, files, tmp_path / "second")

    first = (tmp_path / "first" / METRICS_FILE).read_bytes()
    assert first == (tmp_path / "second" / METRICS_FILE).read_bytes()


def test_resume_matches_an_uninterrupted_run(
    tiny_config: RunConfig, scene_dir: Path, tmp_path: Path
):
    files = list_scene_files(scene_dir)

    pretrain_run(tiny_config, files, tmp_path / "straight")
    interrupted = pretrain_run(tiny_config, files, tmp_path / "resumed", stop_after=3)
    resumed = pretrain_run(tiny_config, files, tmp_path / "resumed", resume=True)

    assert interrupted.steps == 3
    assert resumed.resumed_from == 3
    assert resumed.steps == tiny_config.total_steps

    straight_metrics = (tmp_path / "straight" / METRICS_FILE).read_bytes()
    assert (tmp_path / "resumed" / METRICS_FILE).read_bytes() == straight_metrics

    straight = load_checkpoint(tmp_path / "straight").parameters
    for name, value in load_checkpoint(tmp_path / "resumed").parameters.items():
        np.testing.assert_array_equal(value, straight[name])


def test_resume_rejects_a_different_configuration(
    tiny_config: RunConfig, scene_dir: Path, tmp_path: Path
):
    files = list_scene_files(scene_dir)
    pretrain_run(tiny_config, files, tmp_path / "run", stop_after=3)
    changed = validate_run_config({"seed": 5}, base=tiny_config)

    with pytest.raises(CheckpointMismatchError) as exc:
        pretrain_run(changed, files, tmp_path / "run", resume=True)

    assert exc.value.field == "seed"


def test_resume_without_checkpoint_starts_over(
    tiny_config: RunConfig, scene_dir: Path, tmp_path: Path
):
    config = validate_run_config({"total_steps": 2}, base=tiny_config)

    summary = pretrain_run(config, list_scene_files(scene_dir), tmp_path / "run", resume=True)

    assert summary.resumed_from is None
    assert summary.steps == 2


def test_not_enough_scenes(tiny_config: RunConfig, scene_dir: Path, tmp_path: Path):
    config = validate_run_config({"scenes": {"train": 3}}, base=tiny_config)

    with pytest.raises(ConfigurationError):
        pretrain_run(config, list_scene_files(scene_dir), tmp_path / "run")


def test_validation_scenes(tiny_config: RunConfig, scene_dir: Path, tmp_path: Path):
    config = validate_run_config({"total_steps": 2, "scenes": {"val": 1}}, base=tiny_config)

    summary = pretrain_run(config, list_scene_files(scene_dir), tmp_path / "run")

    assert summary.validation is not None
    assert math.isfinite(summary.validation["loss_total"])


def test_non_finite_loss_stops_the_run(
    tiny_config: RunConfig, scene_dir: Path, tmp_path: Path, monkeypatch
):
    batch_loss = loop._batch_loss

    def exploding_batch_loss(model, scenes, config, step):
        if step == 2:
            raise NonFiniteError("loss")
        return batch_loss(model, scenes, config, step)

    monkeypatch.setattr(loop, "_batch_loss", exploding_batch_loss)
    run_dir = tmp_path / "run"

    with pytest.raises(NonFiniteLossError) as exc:
        pretrain_run(tiny_config, list_scene_files(scene_dir), run_dir)

    assert exc.value.step == 2
    assert load_checkpoint(run_dir).step == 2
    assert len(read_metrics(run_dir / METRICS_FILE)) == 2


def test_checkpoint_round_trip(tiny_config: RunConfig, scene_dir: Path, tmp_path: Path):
    run_dir = tmp_path / "run"
    pretrain_run(tiny_config, list_scene_files(scene_dir), run_dir, stop_after=3)

    checkpoint = load_checkpoint(run_dir / CHECKPOINT_META_FILE)
    model = restore_model(checkpoint)

    assert checkpoint.step == 3
    assert checkpoint.optimizer.step == 3
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, checkpoint.parameters[name])

    check_compatible(checkpoint, tiny_config)
    with pytest.raises(CheckpointMismatchError) as exc:
        check_compatible(checkpoint, tiny_config.with_interaction_space("bev"))
    assert exc.value.field.startswith(("interaction_space", "volume"))


def test_missing_checkpoint(tmp_path: Path):
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path)


@pytest.mark.slow
def test_desk_overfit(tmp_path: Path):
    from volumae.orchestrator.data_storage import scene_filename
    from volumae.scenegen import generate_scene, save_scene
    from volumae.training.report import summarize_metrics

    config = RunConfig.desk()
    save_scene(
        generate_scene(config.scenes.scene_spec(0, config.volume)),
        scene_filename(tmp_path / "scenes", 0),
    )

    pretrain_run(config, list_scene_files(tmp_path / "scenes"), tmp_path / "run")
    report = summarize_metrics(tmp_path / "run" / METRICS_FILE)

    assert report.final_smoothed["loss_total"] <= 0.2 * report.initial["loss_total"]
    assert report.psnr_gain_db >= 6.0
