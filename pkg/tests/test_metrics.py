"""
Tests for PSNR/SSIM, benchmark aggregation, evaluation and report export.
"""

import json
import math
import shutil

import numpy as np
import pytest
import yaml
from skimage.metrics import structural_similarity

from src.checkpoint import capture, save_checkpoint
from src.config import ABLATION_PRESETS, BackboneConfig, ModelConfig, TrainConfig
from src.errors import ConfigurationError, DomainError, ResourceError, ShapeError
from src.evaluator import (
    dataset_name,
    evaluate,
    evaluate_predictions,
    evaluate_summaries,
    evaluate_with,
    preset_slug,
    run_ablation_study,
)
from src.exporters import export_report
from src.metrics import PSNR_CAP, aggregate_scores, build_report, psnr, report_from_rows, ssim
from src.models.models import DatasetManifest, DatasetScore, ImageScore
from src.networks.dsrnet import init_model_params

TABLE_COUNTS = (20, 200, 199, 55)
TABLE_PSNR = (24.23, 26.28, 24.56, 25.68)


def noisy_pair(seed, shape=(40, 48, 3), noise=0.1):
    rng = np.random.default_rng(seed)
    a = rng.random(shape)
    b = np.clip(a + rng.normal(0, noise, shape), 0, 1)
    return a, b


# ---------------------------------------------------------------- psnr

def test_psnr_examples():
    a = np.full((8, 8, 3), 0.5)
    assert psnr(a, a) == PSNR_CAP
    assert math.isclose(psnr(a, a + 0.1), 20.0, abs_tol=1e-9)
    assert math.isclose(psnr(np.zeros((4, 4)), np.ones((4, 4))), 0.0, abs_tol=1e-12)


def test_psnr_symmetric_and_monotone():
    a, b = noisy_pair(0)
    assert psnr(a, b) == psnr(b, a)
    base = np.full((16, 16, 3), 0.5)
    values = [psnr(base, base + amp) for amp in (0.01, 0.05, 0.1, 0.2, 0.4)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# ---------------------------------------------------------------- ssim

def test_ssim_identical_is_one():
    a, _ = noisy_pair(1)
    assert math.isclose(ssim(a, a), 1.0, abs_tol=1e-12)
    assert math.isclose(ssim(a, a, mode="gray"), 1.0, abs_tol=1e-12)


def test_ssim_constant_closed_form():
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.4)
    expected = (2 * 0.08 + 1e-4) / (0.2 + 1e-4)
    assert math.isclose(ssim(a, b), expected, rel_tol=1e-9)


def test_ssim_matches_reference_implementation():
    for seed in range(20):
        a, b = noisy_pair(seed, noise=0.05 + 0.01 * seed)
        reference = structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                          sigma=1.5, use_sample_covariance=False)
        assert abs(ssim(a, b) - reference) < 1e-4
        assert ssim(a, b) == ssim(b, a)


def test_ssim_gray_mode_matches_reference_on_luma():
    a, b = noisy_pair(3)
    luma = np.array([0.299, 0.587, 0.114])
    reference = structural_similarity(a @ luma, b @ luma, data_range=1.0, gaussian_weights=True,
                                      sigma=1.5, use_sample_covariance=False)
    assert abs(ssim(a, b, mode="gray") - reference) < 1e-4


def test_ssim_errors():
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))
    with pytest.raises(ConfigurationError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 16, 3)), mode="hsv")


# ---------------------------------------------------------------- aggregation

def table_datasets():
    return [DatasetScore(f"set{i}", n, p, 0.9) for i, (n, p) in enumerate(zip(TABLE_COUNTS, TABLE_PSNR))]


def test_weighted_average_reproduces_published_aggregate():
    weighted_psnr, weighted_ssim = aggregate_scores(table_datasets())
    assert round(weighted_psnr, 2) == 25.40
    assert math.isclose(weighted_ssim, 0.9)


def test_single_dataset_aggregate_is_its_mean():
    report = build_report([DatasetScore("only", 7, 23.5, 0.81)])
    assert report.weighted_psnr == 23.5 and report.weighted_ssim == 0.81


def test_aggregate_equals_recomputation_from_rows():
    rng = np.random.default_rng(0)
    rows = [ImageScore(f"d{k % 3}", f"img{k}", float(rng.uniform(15, 35)), float(rng.uniform(0.5, 1)))
            for k in range(31)]
    report = report_from_rows(rows)
    by_dataset = {}
    for row in rows:
        by_dataset.setdefault(row.dataset, []).append(row)
    counts = {name: len(group) for name, group in by_dataset.items()}
    means = {name: np.mean([r.psnr for r in group]) for name, group in by_dataset.items()}
    expected = sum(counts[n] * means[n] for n in counts) / sum(counts.values())
    assert math.isclose(report.weighted_psnr, expected, rel_tol=1e-12)
    assert math.isclose(report.weighted_psnr, np.mean([r.psnr for r in rows]), rel_tol=1e-12)


def test_aggregate_of_nothing():
    with pytest.raises(DomainError):
        aggregate_scores([])


# ---------------------------------------------------------------- evaluation

def _copy_ground_truth(manifest_path, predictions_dir):
    manifest = DatasetManifest.load(str(manifest_path))
    predictions_dir.mkdir(parents=True, exist_ok=True)
    for record in manifest:
        shutil.copy(manifest.resolve(record.t_path), predictions_dir / f"{record.id}_T.png")


def test_ground_truth_scores_perfect(tmp_path, synthetic_manifest):
    _copy_ground_truth(synthetic_manifest, tmp_path / "pred")
    report = evaluate_predictions(tmp_path / "pred", [synthetic_manifest])
    assert [d.name for d in report.datasets] == ["syn"]
    assert len(report.rows) == 4
    for row in report.rows:
        assert row.psnr == PSNR_CAP
        assert math.isclose(row.ssim, 1.0, abs_tol=1e-12)
    assert report.weighted_psnr == PSNR_CAP


def test_missing_prediction_is_resource_error(tmp_path, synthetic_manifest):
    (tmp_path / "pred").mkdir()
    with pytest.raises(ResourceError):
        evaluate_predictions(tmp_path / "pred", [synthetic_manifest])


def test_empty_manifest_is_domain_error(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(DomainError):
        evaluate_predictions(tmp_path, [empty])
    with pytest.raises(DomainError):
        evaluate_with(lambda record, manifest: None, [])


def test_dataset_names(tmp_path, synthetic_manifest):
    assert dataset_name(synthetic_manifest) == "syn"
    assert dataset_name(tmp_path / "real20.jsonl") == "real20"
    (tmp_path / "sir2").mkdir()
    assert dataset_name(tmp_path / "sir2") == "sir2"


def test_evaluate_from_checkpoint(tmp_path, synthetic_manifest):
    config = ModelConfig(base_width=4, pyramid_widths=(4, 4, 8, 8, 8))
    train_config = TrainConfig(base_width=4, backbone=BackboneConfig(random_init=True, seed=0))
    path = save_checkpoint(tmp_path / "model.ckpt",
                           capture(init_model_params(config, seed=0), config, train_config=train_config))
    report = evaluate(path, [synthetic_manifest])
    assert len(report.rows) == 4
    assert all(np.isfinite(r.psnr) and -1.0 <= r.ssim <= 1.0 for r in report.rows)
    with pytest.raises(ResourceError):
        evaluate(tmp_path / "missing.ckpt", [synthetic_manifest])


@pytest.mark.parametrize("suffix", [".json", ".yaml"])
def test_summaries_reproduce_published_aggregate(tmp_path, suffix):
    entries = [{"name": f"set{i}", "image_count": n, "mean_psnr": p, "mean_ssim": 0.9}
               for i, (n, p) in enumerate(zip(TABLE_COUNTS, TABLE_PSNR))]
    path = tmp_path / f"summaries{suffix}"
    path.write_text(json.dumps(entries) if suffix == ".json" else yaml.safe_dump(entries))
    report = evaluate_summaries(path)
    assert round(report.weighted_psnr, 2) == 25.40
    assert report.rows == []


def test_summaries_errors(tmp_path):
    with pytest.raises(ResourceError):
        evaluate_summaries(tmp_path / "none.json")
    (tmp_path / "empty.json").write_text("[]")
    with pytest.raises(DomainError):
        evaluate_summaries(tmp_path / "empty.json")


# ---------------------------------------------------------------- export

def test_export_report_files(tmp_path):
    rows = [ImageScore("a", "x", 30.0, 0.9), ImageScore("a", "y", 20.0, 0.7), ImageScore("b", "z", 25.0, 0.8)]
    report = report_from_rows(rows)
    written = export_report(report, str(tmp_path / "out"), excel=True)

    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["aggregate"]["weighted_psnr"] == pytest.approx(25.0)
    assert [d["name"] for d in data["datasets"]] == ["a", "b"]
    assert len(data["rows"]) == 3

    lines = (tmp_path / "out" / "report_rows.csv").read_text().splitlines()
    assert lines[0] == "Dataset,Image ID,PSNR (dB),SSIM"
    assert len(lines) == 4

    from openpyxl import load_workbook

    wb = load_workbook(written["excel"])
    assert wb.sheetnames == ["Summary", "Images"]
    assert wb["Summary"].cell(row=4, column=1).value == "Average"
    assert wb["Summary"].cell(row=4, column=2).value == 3
    assert wb["Images"].max_row == 4


def test_export_without_excel_skips_workbook(tmp_path):
    report = report_from_rows([ImageScore("a", "x", 30.0, 0.9)])
    written = export_report(report, str(tmp_path / "out"), stem="ablation")
    assert set(written) == {"json", "csv"}
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["ablation.json", "ablation_rows.csv"]


# ---------------------------------------------------------------- ablation study

def _study_config(tmp_path, manifest, **overrides):
    values = dict(manifests=[str(manifest)], checkpoint_dir=str(tmp_path / "study"), image_size=32,
                  base_width=4, backbone=BackboneConfig(random_init=True))
    values.update(overrides)
    return TrainConfig(**values)


def test_preset_slugs_are_distinct():
    slugs = {preset_slug(name) for name in ABLATION_PRESETS}
    assert len(slugs) == len(ABLATION_PRESETS)
    assert preset_slug("w/o Recons. Loss") == "w_o_recons_loss"


def test_ablation_study_reports_each_preset(tmp_path, synthetic_manifest, vgg_features):
    presets = ["w/o Recons. Loss", "w/ HyperColumn"]
    report = run_ablation_study(_study_config(tmp_path, synthetic_manifest), presets=presets,
                                steps=2, features=vgg_features)
    assert [d.name for d in report.datasets] == presets
    assert [d.image_count for d in report.datasets] == [4, 4]
    assert len(report.rows) == 8
    assert all(np.isfinite(r.psnr) and np.isfinite(r.ssim) for r in report.rows)
    for name in presets:
        assert (tmp_path / "study" / preset_slug(name) / "train_log.jsonl").read_text().count("\n") == 2


def test_ablation_study_steps_span_epochs(tmp_path, synthetic_manifest, vgg_features):
    run_ablation_study(_study_config(tmp_path, synthetic_manifest), presets=["full"],
                       steps=6, features=vgg_features)
    run_dir = tmp_path / "study" / "full"
    assert (run_dir / "epoch_001.ckpt").exists()
    assert (run_dir / "step_0000006.ckpt").exists()
    assert (run_dir / "train_log.jsonl").read_text().count("\n") == 6


@pytest.mark.parametrize("kwargs", [
    {"presets": []},
    {"presets": ["w/ Attention"]},
    {"steps": 0},
])
def test_ablation_study_rejects(tmp_path, synthetic_manifest, vgg_features, kwargs):
    with pytest.raises(ConfigurationError):
        run_ablation_study(_study_config(tmp_path, synthetic_manifest), features=vgg_features, **kwargs)
    assert not (tmp_path / "study").exists()
