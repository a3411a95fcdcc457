"""Image-quality and segmentation metrics plus Table-style report assembly."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .tensor import serialize

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0

# Reference rows from the original preclinical study, attached to reports for
# context only; desk-scale numbers are never compared against them.
REFERENCE_TABLE = {
    "cs": {4: (31.6, 0.865), 6: (28.6, 0.824)},
    "dip": {4: (32.8, 0.894), 6: (29.3, 0.855)},
    "unet-unrolled": {4: (35.1, 0.906), 6: (32.4, 0.878)},
    "edsr-unrolled": {4: (35.6, 0.915), 6: (32.9, 0.889)},
}
REFERENCE_DICE = {"cs": 0.809, "dip": 0.835, "unet-unrolled": 0.884, "edsr-unrolled": 0.893, "ground-truth": 0.928}
REFERENCE_ABLATION = {5: (34.2, 0.897), 7: (35.6, 0.915), 9: (35.9, 0.923), 11: (35.9, 0.929)}


def psnr(recon, truth, cap=PSNR_CAP):
    """Peak SNR in dB with peak = max(truth).

    Identical inputs give ``inf``, clipped to ``cap`` unless ``cap`` is None.
    """
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {truth.shape}")
    peak = truth.max()
    if not np.any(truth):
        raise ValueError("truth image is all zero")
    mse = np.mean((recon - truth) ** 2)
    val = math.inf if mse == 0 else 10 * math.log10(peak**2 / mse)
    return val if cap is None else min(val, cap)


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(recon, truth, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over all fully contained Gaussian windows.

    The dynamic range is ``max(truth) - min(truth)``.
    """
    x = np.asarray(recon, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < win_size:
        raise ValueError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    L = y.max() - y.min()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    w = gaussian_window(win_size, sigma)

    def filt(a):
        return signal.correlate2d(a, w, mode="valid")

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx**2
    vy = filt(y * y) - my**2
    cxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(s.mean())


def dice(a, b):
    """Dice overlap ``2|A and B| / (|A| + |B|)``; two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2 * np.logical_and(a, b).sum() / total)


def annulus_prior(la_mask, margin=3):
    """Search region for the segmenter: the annulus grown by ``margin`` pixels."""
    return ndimage.binary_dilation(la_mask, iterations=margin)


def threshold_segment(magnitude, threshold=0.6, prior=None):
    """Fixed-threshold segmenter.

    The image is scaled to [0, 1] by its maximum and thresholded; the result
    is the largest 4-connected component that touches ``prior`` (any
    component when ``prior`` is None). Returns ``(mask, empty)`` where
    ``empty`` flags a segmentation with no pixels.
    """
    if not 0 <= threshold < 1:
        raise ValueError("threshold must lie in [0, 1)")
    img = np.asarray(magnitude, dtype=np.float64)
    peak = img.max()
    if peak > 0:
        mask = img / peak >= threshold
    else:
        mask = np.zeros(img.shape, dtype=bool)
    labels, n = ndimage.label(mask)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    if prior is not None:
        touching = np.unique(labels[np.asarray(prior, dtype=bool)])
        keep = np.zeros(n + 1, dtype=bool)
        keep[touching] = True
        sizes[~keep] = 0
    if n == 0 or sizes.max() == 0:
        logger.warning("threshold segmentation is empty")
        return np.zeros(img.shape, dtype=bool), True
    return labels == np.argmax(sizes), False


@dataclass
class MetricsRecord:
    method: str
    R: float
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    dice: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    @property
    def n_slices(self):
        return len(self.psnr_db)

    def summary(self):
        out = {
            "method": self.method,
            "R": self.R,
            "n_slices": self.n_slices,
            "psnr_mean": float(np.mean(self.psnr_db)) if self.psnr_db else None,
            "psnr_std": float(np.std(self.psnr_db)) if self.psnr_db else None,
            "psnr_median": float(np.median(self.psnr_db)) if self.psnr_db else None,
            "ssim_mean": float(np.mean(self.ssim)) if self.ssim else None,
            "ssim_std": float(np.std(self.ssim)) if self.ssim else None,
        }
        if self.dice:
            out["dice_mean"] = float(np.mean(self.dice))
            out["dice_median"] = float(np.median(self.dice))
        if self.missing:
            out["missing"] = list(self.missing)
            out["partial"] = True
        return out


def score_slice(recon_mag, truth_mag, la_mask, threshold=0.6):
    seg, _ = threshold_segment(recon_mag, threshold, annulus_prior(la_mask))
    return psnr(recon_mag, truth_mag), ssim(recon_mag, truth_mag), dice(seg, la_mask)


def evaluate_arrays(method, R, recons, dataset, indices, threshold=0.6):
    """Score in-memory magnitude reconstructions ``{index: array}``."""
    rec = MetricsRecord(method, R)
    for i in indices:
        if i not in recons:
            rec.missing.append(i)
            continue
        truth = np.abs(dataset.image(i))
        p, s, d = score_slice(recons[i], truth, dataset.la_mask(i), threshold)
        rec.psnr_db.append(p)
        rec.ssim.append(s)
        rec.dice.append(d)
    return rec


def read_recon_dir(path):
    """Load ``recon_meta.json`` and the per-slice magnitude containers of a recon directory."""
    path = Path(path)
    meta = json.loads((path / "recon_meta.json").read_text())
    recons = {}
    for i in meta["slices"]:
        f = path / f"slice_{i}_recon.urtn"
        if f.exists():
            recons[i] = serialize.load(f)
    return meta, recons


def evaluate_run(recon_dirs, dataset, split="test", threshold=0.6):
    """Score every recon directory; returns ``(records, missing_dirs)``."""
    records, missing_dirs = [], []
    for d in recon_dirs:
        d = Path(d)
        if not (d / "recon_meta.json").exists():
            logger.error("missing reconstruction directory %s", d)
            missing_dirs.append(str(d))
            continue
        meta, recons = read_recon_dir(d)
        indices = dataset.splits[meta.get("split", split)]
        rec = evaluate_arrays(meta["method"], meta["R"], recons, dataset, indices, threshold)
        records.append(rec)
    return records, missing_dirs


def best_flags(rows, keys=("psnr_mean", "ssim_mean", "dice_mean")):
    """Per R, mark the highest value of each metric column."""
    flags = [set() for _ in rows]
    for r in {row["R"] for row in rows}:
        idx = [i for i, row in enumerate(rows) if row["R"] == r]
        for k in keys:
            vals = [(rows[i].get(k), i) for i in idx if rows[i].get(k) is not None]
            if vals:
                flags[max(vals)[1]].add(k)
    return flags


def format_table(rows):
    """Aligned text table; the best entry per column and R carries a ``*``."""
    flags = best_flags(rows)
    head = f"{'Method':<16}{'R':>4}  {'PSNR (dB)':>16}  {'SSIM':>16}  {'Dice':>8}"
    lines = [head, "-" * len(head)]
    for row, fl in zip(rows, flags):
        def cell(mean, std, key, fmt):
            if row.get(mean) is None:
                return "n/a"
            s = f"{row[mean]:{fmt}} +/- {row[std]:{fmt}}" if std else f"{row[mean]:{fmt}}"
            return s + ("*" if key in fl else " ")

        psnr_s = cell("psnr_mean", "psnr_std", "psnr_mean", ".2f")
        ssim_s = cell("ssim_mean", "ssim_std", "ssim_mean", ".3f")
        dice_s = cell("dice_mean", None, "dice_mean", ".3f")
        tag = " (partial)" if row.get("partial") else ""
        lines.append(f"{row['method'] + tag:<16}{row['R']:>4g}  {psnr_s:>16}  {ssim_s:>16}  {dice_s:>8}")
    lines.append("* best per column and R; +/- is the std over slices")
    return "\n".join(lines)


def write_report(records, out, missing_dirs=(), extra=None):
    rows = [r.summary() for r in records]
    flags = best_flags(rows)
    for row, fl in zip(rows, flags):
        row["best"] = sorted(fl)
    doc = {
        "rows": rows,
        "missing_dirs": list(missing_dirs),
        "reference": {"psnr_ssim": REFERENCE_TABLE, "dice": REFERENCE_DICE},
        "per_slice": [asdict(r) for r in records],
    }
    if extra:
        doc.update(extra)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    text = format_table(rows)
    out.with_suffix(".json").write_text(json.dumps(doc, indent=2, default=float))
    out.with_suffix(".txt").write_text(text + "\n")
    return doc, text
