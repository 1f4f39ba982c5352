from __future__ import annotations

import math

import numpy as np
import pytest

from plane_wave_inr.errors import MeasurementError, SpecParseError
from plane_wave_inr.metrics import (
    EvalConfig,
    Region,
    cnr,
    evaluate_stack,
    fwhm,
    load_roi_spec,
    mean_std,
    parse_roi_text,
    psnr,
    read_metric_rows,
    snr,
    ssim_metric,
)
from plane_wave_inr.model import init_params
from plane_wave_inr.phantom import generate_phantom, load_phantom_spec

SMALL_ROI = """
# name kind role params
pt     rect scatterer_point 5 5 10 10
inside disk target_in       16 16 3
ring   rect background_out  2 14 6 8
bg     rect snr_roi         16 2 6 6
"""


def test_default_roi_file_parses() -> None:
    roi = load_roi_spec()
    assert [r.name for r in roi.regions] == ["point_a", "point_b", "cyst", "cyst_ring", "speckle"]
    assert len(roi.by_role("scatterer_point")) == 2
    roi.validate((64, 64))


def test_roi_parse_errors_carry_line_numbers() -> None:
    with pytest.raises(SpecParseError) as info:
        parse_roi_text("a rect snr_roi 1 1 2 2\nb blob snr_roi 1 1 2\n")
    assert info.value.line == 2
    with pytest.raises(SpecParseError) as info:
        parse_roi_text("a rect snr_roi 1 1 2\n")
    assert info.value.line == 1
    with pytest.raises(SpecParseError):
        parse_roi_text("a rect snr_roi 1 1 2 2\na rect snr_roi 1 1 2 2\n")


def test_out_of_bounds_region_is_named() -> None:
    roi = parse_roi_text("edge rect snr_roi 60 60 10 10\n")
    with pytest.raises(MeasurementError, match="edge"):
        roi.validate((64, 64))


def test_psnr() -> None:
    gt = np.zeros((4, 4))
    assert psnr(gt, gt) == math.inf
    assert psnr(gt + 0.1, gt) == pytest.approx(20.0)


def test_psnr_falls_as_noise_grows() -> None:
    rng = np.random.default_rng(7)
    gt = rng.random((16, 16))
    noise = rng.standard_normal(gt.shape)
    values = [psnr(gt + level * noise, gt) for level in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_ssim_of_inverted_image_is_low() -> None:
    gt = np.random.default_rng(8).random((32, 32))
    assert ssim_metric(1.0 - gt, gt) < 0.5


def test_ssim_drops_as_a_pattern_shifts() -> None:
    cols = np.arange(32)
    gt = np.tile(0.5 + 0.4 * np.sin(2.0 * np.pi * cols / 16.0), (32, 1))
    shifted = [ssim_metric(np.roll(gt, d, axis=1), gt) for d in (0, 1, 4)]
    assert shifted[0] == pytest.approx(1.0)
    assert shifted[0] > shifted[1] > shifted[2]


def test_fwhm_of_gaussian_bump() -> None:
    sigma_px, pitch = 3.0, 0.1
    rows, cols = np.mgrid[0:61, 0:61]
    amplitude = np.exp(-0.5 * ((rows - 30) / 2.0) ** 2 - 0.5 * ((cols - 30) / sigma_px) ** 2)
    image_db = 20.0 * np.log10(np.maximum(amplitude, 1e-6))
    region = Region("p", "rect", "scatterer_point", (25, 25, 10, 10))
    expected = 2.0 * sigma_px * math.sqrt(2.0 * math.log(2.0)) * pitch
    assert fwhm(image_db, region, "lateral", pitch) == pytest.approx(expected, rel=0.05)
    assert fwhm(image_db, region, "axial", pitch) == pytest.approx(expected * 2.0 / sigma_px, rel=0.05)


def test_fwhm_ignores_db_offset_and_scales_with_pitch() -> None:
    rows, cols = np.mgrid[0:41, 0:41]
    amplitude = np.exp(-0.5 * ((rows - 20) / 2.0) ** 2 - 0.5 * ((cols - 20) / 3.0) ** 2)
    image_db = 20.0 * np.log10(np.maximum(amplitude, 1e-6))
    region = Region("p", "rect", "scatterer_point", (15, 15, 10, 10))
    width = fwhm(image_db, region, "lateral", 0.1)
    assert fwhm(image_db - 17.0, region, "lateral", 0.1) == pytest.approx(width, abs=1e-12)
    assert fwhm(image_db, region, "lateral", 0.2) == pytest.approx(2.0 * width, abs=1e-12)


def test_fwhm_crossing_exactly_at_threshold() -> None:
    image_db = np.full((11, 11), -40.0)
    image_db[5, 3:8] = [-6.0, -3.0, 0.0, -3.0, -6.0]
    region = Region("p", "rect", "scatterer_point", (3, 3, 5, 5))
    assert fwhm(image_db, region, "lateral", 0.5) == pytest.approx(2.0)


def test_fwhm_without_crossing_fails() -> None:
    flat = np.zeros((20, 20))
    with pytest.raises(MeasurementError):
        fwhm(flat, Region("p", "rect", "scatterer_point", (5, 5, 5, 5)), "axial", 0.1)


def test_cnr_and_snr_match_brute_force() -> None:
    rng = np.random.default_rng(5)
    image = rng.random((32, 32))
    roi = parse_roi_text(SMALL_ROI)
    inside = roi.by_role("target_in")[0].mask(image.shape)
    outside = roi.background_mask(image.shape)
    a, b = image[inside], image[outside]
    expected = 10 * math.log10((a.mean() - b.mean()) ** 2 / ((a.var() + b.var()) / 2))
    assert cnr(image, inside, outside) == pytest.approx(expected, abs=1e-9)
    region = roi.by_role("snr_roi")[0].mask(image.shape)
    assert snr(image, region) == pytest.approx(image[region].mean() / image[region].std(), abs=1e-9)


def test_cnr_rejects_overlapping_regions() -> None:
    image = np.random.default_rng(6).random((8, 8))
    inside = np.zeros((8, 8), dtype=bool)
    inside[2:5, 2:5] = True
    with pytest.raises(ValueError, match="overlap"):
        cnr(image, inside, np.ones((8, 8), dtype=bool))


def test_evaluation_cnr_background_excludes_the_target(small_stack) -> None:
    roi = parse_roi_text("t disk target_in 12 12 2\nb rect background_out 6 6 12 12\n")
    report = evaluate_stack(None, small_stack, roi)
    shape = (small_stack.height, small_stack.width)
    target = roi.regions[0].mask(shape)
    expected = cnr(small_stack.normalized(0).astype(np.float64), target, roi.background_mask(shape) & ~target)
    assert report.values("all", "gt", "cnr_db", "t")[0] == pytest.approx(expected, abs=1e-12)


def test_cnr_degenerate_cases() -> None:
    image = np.ones((8, 8))
    mask_a = np.zeros((8, 8), dtype=bool)
    mask_a[:4] = True
    assert cnr(image, mask_a, ~mask_a) == -math.inf
    image[:4] = 2.0
    assert cnr(image, mask_a, ~mask_a) == math.inf


def test_mean_std() -> None:
    assert mean_std([0.5, 0.5, 0.5]) == (0.5, 0.0)
    mean, std = mean_std([1.0, 3.0])
    assert (mean, std) == (2.0, 1.0)


def test_ground_truth_sanity_run_gives_unit_ssim() -> None:
    stack = generate_phantom(load_phantom_spec(), seed=0)
    report = evaluate_stack(None, stack, load_roi_spec())
    values = report.values("all", "gt", "ssim")
    assert len(values) == stack.num_angles
    assert all(v == pytest.approx(1.0) for v in values)
    assert {r.source for r in report.rows} == {"gt"}


def test_model_sources_and_holdout_section(small_stack, toy_arch) -> None:
    roi = parse_roi_text(SMALL_ROI.replace("16 16 3", "12 12 3"))
    cfg = EvalConfig(train_indices=(0, 2))
    params = init_params(toy_arch, 0)
    report = evaluate_stack(params, small_stack, roi, "holdout", cfg)
    assert report.sections == ["holdout"]
    assert {r.angle_index for r in report.rows} == {1}
    assert {r.source for r in report.rows} == {"gt", "o", "o_prime", "nearest_view"}


def test_aggregate_equals_recomputation_from_csv(tmp_path) -> None:
    stack = generate_phantom(load_phantom_spec(), seed=0)
    report = evaluate_stack(None, stack, load_roi_spec(), "all", EvalConfig(workers=2))
    path = report.write_csv(tmp_path / "metrics.csv")
    rows = read_metric_rows(path)
    assert len(rows) == len(report.rows)
    snr_values = [r.value for r in rows if r.metric == "snr" and r.source == "gt"]
    aggregate = report.aggregate()["all"]["gt"]["snr[speckle]"]
    assert aggregate["mean"] == pytest.approx(float(np.mean(snr_values)), abs=1e-12)
    assert aggregate["std"] == pytest.approx(float(np.std(snr_values)), abs=1e-12)
