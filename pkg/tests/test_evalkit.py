import json

import numpy as np
import pytest

from unrollrecon import evalkit
from unrollrecon.evalkit import (
    MetricsRecord,
    annulus_prior,
    dice,
    evaluate_arrays,
    evaluate_run,
    psnr,
    ssim,
    threshold_segment,
    write_report,
)
from unrollrecon.phantom import make_phantom
from unrollrecon.pipeline import write_recon_dir
from unrollrecon.verify import dice_oracle, psnr_oracle, ssim_oracle


def test_psnr_values(rng):
    truth = rng.uniform(0, 1, (16, 16))
    truth[0, 0] = 1.0
    assert psnr(truth, truth) == 99.0
    recon = truth + 0.1 * np.where(rng.uniform(size=truth.shape) > 0.5, 1, -1)
    assert psnr(recon, truth) == pytest.approx(20.0, abs=1e-9)
    noisy = truth + 0.05 * rng.standard_normal(truth.shape)
    assert abs(psnr(noisy, truth) - psnr_oracle(noisy, truth)) <= 1e-9
    with pytest.raises(ValueError):
        psnr(truth, np.zeros_like(truth))


def test_psnr_decreases_with_noise(rng):
    truth = rng.uniform(0, 1, (32, 32))
    noise = rng.standard_normal(truth.shape)
    vals = [psnr(truth + s * noise, truth) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_values(rng):
    truth = rng.uniform(0, 1, (16, 16))
    assert ssim(truth, truth) == 1.0
    small = truth + 0.01 * rng.standard_normal(truth.shape)
    large = truth + rng.uniform(-1, 1, truth.shape)
    assert ssim(large, truth) < ssim(small, truth) < 1
    assert abs(ssim(small, truth) - ssim_oracle(small, truth)) <= 1e-6
    with pytest.raises(ValueError):
        ssim(truth[:8, :8], truth[:8, :8])


def test_dice_values(rng):
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    b = np.zeros((20, 20), bool)
    b[:10, 5:15] = True
    assert dice(a, a) == 1.0
    assert dice(a, ~a) == 0.0
    assert dice(a, b) == pytest.approx(0.5)
    assert dice(np.zeros_like(a), np.zeros_like(a)) == 1.0
    r1, r2 = rng.uniform(size=(20, 20)) > 0.5, rng.uniform(size=(20, 20)) > 0.3
    assert dice(r1, r2) == dice(r2, r1) == pytest.approx(dice_oracle(r1, r2), abs=1e-12)


def test_segmenter_on_ground_truth():
    scores = []
    for seed in range(20):
        ph = make_phantom(seed)
        seg, empty = threshold_segment(ph.image, 0.6, annulus_prior(ph.la_mask))
        assert not empty
        scores.append(dice(seg, ph.la_mask))
    assert min(scores) >= 0.95


def test_segmenter_edge_cases(caplog):
    seg, empty = threshold_segment(np.zeros((16, 16)))
    assert empty and not seg.any()
    img = np.zeros((16, 16))
    img[4:12, 4:12] = 0.5
    img[0, 0] = 0.0
    seg, empty = threshold_segment(img, 0.0)
    assert seg.all() and not empty
    with pytest.raises(ValueError):
        threshold_segment(img, 1.5)


def test_segmenter_keeps_largest_component_touching_prior():
    img = np.zeros((20, 20))
    img[1:3, 1:3] = 1.0  # small blob, touches the prior
    img[10:18, 10:18] = 1.0  # large blob, away from the prior
    prior = np.zeros_like(img, bool)
    prior[0:4, 0:4] = True
    seg, _ = threshold_segment(img, 0.5, prior)
    assert seg.sum() == 4 and seg[1:3, 1:3].all()
    seg, _ = threshold_segment(img, 0.5)
    assert seg.sum() == 64


def test_metrics_record_summary():
    rec = MetricsRecord("cs", 4, psnr_db=[30.0, 32.0], ssim=[0.8, 0.9], dice=[0.7, 0.9])
    s = rec.summary()
    assert s["n_slices"] == 2 and s["psnr_mean"] == 31.0 and s["psnr_std"] == 1.0
    assert s["dice_mean"] == pytest.approx(0.8)
    assert {"method", "R", "n_slices", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "dice_mean"} <= set(s)


def test_single_slice_record_matches_direct_calls(small_dataset):
    i = small_dataset.splits["test"][0]
    truth = np.abs(small_dataset.image(i))
    recon = truth + 0.02
    rec = evaluate_arrays("x", 4, {i: recon}, small_dataset, [i])
    assert rec.psnr_db == [psnr(recon, truth)]
    assert rec.ssim == [ssim(recon, truth)]
    seg, _ = threshold_segment(recon, 0.6, annulus_prior(small_dataset.la_mask(i)))
    assert rec.dice == [dice(seg, small_dataset.la_mask(i))]


def test_evaluate_run_flags_dominant_method_and_missing(tmp_path, small_dataset):
    test = small_dataset.splits["test"]
    good = {i: np.abs(small_dataset.image(i)) * 1.001 for i in test}
    bad = {i: np.abs(small_dataset.image(i)) + 0.2 for i in test[:-1]}
    write_recon_dir(tmp_path / "good", "good", 4, "test", good)
    write_recon_dir(tmp_path / "bad", "bad", 4, "test", bad)
    records, missing = evaluate_run([tmp_path / "good", tmp_path / "bad", tmp_path / "nope"], small_dataset)
    assert missing == [str(tmp_path / "nope")]
    assert records[1].missing == [test[-1]]
    write_report(records, tmp_path / "report", missing)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc["rows"][0]["best"]) == {"psnr_mean", "ssim_mean", "dice_mean"}
    assert doc["rows"][1]["partial"] and doc["missing_dirs"]
    text = (tmp_path / "report.txt").read_text()
    assert "bad (partial)" in text and "*" in text.splitlines()[2]
    # pure function of its inputs
    again, _ = evaluate_run([tmp_path / "good"], small_dataset)
    assert again[0].psnr_db == records[0].psnr_db


def test_reference_rows_are_metadata_only():
    assert evalkit.REFERENCE_TABLE["edsr-unrolled"][4] == (35.6, 0.915)
