import math
from pathlib import Path

import numpy as np
import pytest

import volumae.checks
from volumae.checks import CHECKS, run_checks
from volumae.checks.acceptance import check_desk_overfit
from volumae.checks.gradients import check_fusion_end_to_end, check_softmax_gradient
from volumae.checks.oracles import check_loss_literals
from volumae.config import RunConfig
from volumae.numerics import Tensor, ops
from volumae.orchestrator.data_storage import read_json
from volumae.schemas import CheckResult


def broken_softmax(softmax):
    def wrapper(logits, axis=-1):
        out = softmax(logits, axis=axis)
        parents = (ops.as_tensor(logits),)
        return Tensor.from_op(out.data, parents, lambda g: (g,), "softmax")

    return wrapper


def frozen_trilinear(sample):
    def wrapper(volume, location):
        out = sample(volume, location)
        parents = (ops.as_tensor(volume), ops.as_tensor(location))
        return Tensor.from_op(
            out.data,
            parents,
            lambda g: tuple(np.zeros_like(parent.data) for parent in parents),
            "sample_trilinear_3d",
        )

    return wrapper


@pytest.mark.parametrize("check", CHECKS, ids=lambda check: check.__name__)
def test_check_passes(check, tiny_config: RunConfig):
    result = check(tiny_config)

    assert isinstance(result, CheckResult)
    assert result.passed, result


def test_check_names_are_unique(tiny_config: RunConfig):
    tasks = volumae.checks.all_checks(tiny_config)

    assert len({task.id for task in tasks}) == len(CHECKS) >= 12
    assert "softmax_gradient" in {task.id for task in tasks}
    assert "fusion_end_to_end" in {task.id for task in tasks}


def test_run_checks_writes_a_report(monkeypatch, tmp_path: Path):
    monkeypatch.setattr(volumae.checks, "CHECKS", [check_loss_literals])

    report = run_checks(report_out=tmp_path / "report.json")

    assert report.passed
    stored = read_json(tmp_path / "report.json")
    assert [result["name"] for result in stored["results"]] == ["loss_literals"]
    assert stored["results"][0]["passed"] is True


def test_wrong_softmax_backward_is_caught(monkeypatch, tiny_config: RunConfig):
    monkeypatch.setattr(ops, "softmax", broken_softmax(ops.softmax))
    monkeypatch.setattr(
        volumae.checks, "CHECKS", [check_softmax_gradient, check_loss_literals]
    )

    report = run_checks(tiny_config)

    assert not report.passed
    assert [failure.name for failure in report.failures] == ["softmax_gradient"]


def test_raising_check_counts_as_failed(monkeypatch, tiny_config: RunConfig):
    def check_explodes(config: RunConfig) -> CheckResult:
        raise RuntimeError("boom")

    monkeypatch.setattr(volumae.checks, "CHECKS", [check_explodes, check_loss_literals])

    report = run_checks(tiny_config)

    assert [result.passed for result in report.results] == [False, True]
    failure = report.failures[0]
    assert failure.name == "explodes"
    assert math.isnan(failure.measured)
    assert "boom" in failure.detail


def test_fusion_check_sees_a_wrong_sampling_backward(monkeypatch, tiny_config: RunConfig):
    monkeypatch.setattr(ops, "sample_trilinear_3d", frozen_trilinear(ops.sample_trilinear_3d))

    result = check_fusion_end_to_end(tiny_config)

    assert not result.passed
    assert result.measured > result.tolerance


def test_overfit_run_is_recorded(monkeypatch, tiny_config: RunConfig, tmp_path: Path):
    monkeypatch.setattr(volumae.checks, "CHECKS", [check_loss_literals])

    report = run_checks(
        tiny_config, report_out=tmp_path / "report.json", overfit_config=tiny_config
    )

    assert [result.name for result in report.results] == ["loss_literals", "desk_overfit"]
    stored = read_json(tmp_path / "report.json")["results"][1]
    assert stored["values"]["seed"] == tiny_config.seed
    assert stored["values"]["steps"] == tiny_config.total_steps
    assert stored["measured"] == pytest.approx(stored["values"]["loss_ratio"])
    assert f"seed {tiny_config.seed}" in stored["detail"]
    assert (tmp_path / "desk_overfit" / "run" / "metrics.csv").exists()


@pytest.mark.slow
def test_desk_overfit_check(tmp_path: Path):
    result = check_desk_overfit(RunConfig.desk(), tmp_path)

    assert result.passed, result
    assert result.values["loss_ratio"] <= 0.2
    assert result.values["psnr_gain_db"] >= 6.0
