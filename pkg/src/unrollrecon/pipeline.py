"""Split-level reconstruction helpers shared by the CLI, tests and demos.

Every helper returns ``{slice_index: magnitude float32 [H, W]}`` for the
requested slices of a dataset at acceleration ``R``, using the manifest's
fixed evaluation masks and noise seeds.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evalkit
from .dip import DipConfig, dip_optimize, dip_reconstruct
from .mri import SenseSystem
from .solvers import CSConfig, cs_reconstruct
from .tensor import serialize
from .unrolled import reconstruct_batch

logger = logging.getLogger(__name__)

CS_TUNING_FILE = "cs_tuning.json"


def slice_system(dataset, i, R):
    y, mask = dataset.kspace(i, R)
    return SenseSystem(mask, dataset.coil_maps(i)), y


def _map(fn, jobs, items):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def zero_filled(dataset, indices, R):
    out = {}
    for i in indices:
        system, y = slice_system(dataset, i, R)
        out[i] = np.abs(system.adjoint(y)).astype(np.float32)
    return out


def _cs_one(args):
    system, y, cfg = args
    return np.abs(cs_reconstruct(system, y, cfg)).astype(np.float32)


def cs_split(dataset, indices, R, cfg=None, jobs=1):
    cfg = cfg or CSConfig()
    items = [(*slice_system(dataset, i, R), cfg) for i in indices]
    return dict(zip(indices, _map(_cs_one, jobs, items)))


def tune_cs(dataset, R, grid, cfg=None, n_slices=10, jobs=1):
    """Pick ``lambda_tv`` from ``grid`` by median validation PSNR.

    Returns ``(best_lambda, {lambda: median_psnr})``.
    """
    cfg = cfg or CSConfig()
    val = list(dataset.splits.get("val", []))[:n_slices]
    if not val:
        raise ValueError("CS tuning needs a nonempty val split")
    scores = {}
    for lam in grid:
        c = CSConfig(**{**vars(cfg), "lambda_tv": float(lam)})
        recons = cs_split(dataset, val, R, c, jobs)
        scores[float(lam)] = float(np.median([evalkit.psnr(recons[i], np.abs(dataset.image(i))) for i in val]))
        logger.info("CS tuning R=%g lambda_tv=%g: median val PSNR %.2f dB", R, lam, scores[float(lam)])
    best = max(scores, key=scores.get)
    return best, scores


def record_cs_tuning(dataset_dir, R, best, scores):
    path = Path(dataset_dir) / CS_TUNING_FILE
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[f"R={R:g}"] = {"lambda_tv": best, "val_median_psnr": {f"{k:g}": v for k, v in scores.items()}}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def recorded_cs_lambda(dataset_dir, R):
    """Last tuned ``lambda_tv`` stored in the dataset directory for ``R`` (or None)."""
    if dataset_dir is None:
        return None
    path = Path(dataset_dir) / CS_TUNING_FILE
    if not path.exists():
        return None
    entry = json.loads(path.read_text()).get(f"R={R:g}")
    return None if entry is None else float(entry["lambda_tv"])


def _dip_one(args):
    i, system, y, cfg, log_dir = args
    log_file = None
    if log_dir is not None:
        log_file = open(Path(log_dir) / f"dip_log_slice_{i}.jsonl", "w")

    def log(step, value):
        if log_file:
            log_file.write(json.dumps({"slice": i, "step": step, "objective": value}) + "\n")

    try:
        net, z, _ = dip_optimize(system, y, cfg, log)
    finally:
        if log_file:
            log_file.close()
    return np.abs(dip_reconstruct(net, z, cfg)).astype(np.float32)


def dip_split(dataset, indices, R, cfg=None, jobs=1, log_dir=None):
    """Per-slice self-guided DIP; only k-space and coil maps reach the optimizer."""
    cfg = cfg or DipConfig()
    items = [(i, *slice_system(dataset, i, R), cfg, log_dir) for i in indices]
    return dict(zip(indices, _map(_dip_one, jobs, items)))


def model_split(model, dataset, indices, R, batch_size=16):
    out = {}
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        pairs = [slice_system(dataset, i, R) for i in chunk]
        mags = np.abs(reconstruct_batch(model, [p[0] for p in pairs], [p[1] for p in pairs]))
        out.update({i: m.astype(np.float32) for i, m in zip(chunk, mags)})
    return out


# -- output -----------------------------------------------------------------


def write_pgm(path, image):
    """8-bit binary PGM, scaled by the image maximum."""
    img = np.asarray(image, dtype=np.float64)
    peak = img.max()
    data = np.zeros(img.shape, np.uint8) if peak <= 0 else np.clip(np.round(255 * img / peak), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_recon_dir(directory, method, R, split, recons, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, mag in recons.items():
        serialize.save(directory / f"slice_{i}_recon.urtn", np.asarray(mag, dtype=np.float32))
        write_pgm(directory / f"slice_{i}_recon.pgm", mag)
    meta = {"method": method, "R": R, "split": split, "slices": sorted(int(i) for i in recons)}
    if extra:
        meta.update(extra)
    (directory / "recon_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def psnr_median(recons, dataset):
    return float(np.median([evalkit.psnr(m, np.abs(dataset.image(i))) for i, m in recons.items()]))
