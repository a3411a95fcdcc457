"""Synthetic LGE-like phantoms, analytic coil maps and on-disk datasets.

A phantom is a dark field with a few smooth ellipses and one thin bright
annulus standing in for the left-atrial wall. Its boolean ``la_mask`` marks
the annulus and is the segmentation ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mri import CoilMaps, SamplingMask, SenseSystem, make_mask
from .tensor import serialize

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Missing, inconsistent or unreadable dataset content."""


@dataclass
class Phantom:
    image: np.ndarray  # magnitude, float32 in [0, 1]
    la_mask: np.ndarray
    phase: np.ndarray
    seed: int

    @property
    def complex_image(self):
        return (self.image * np.exp(1j * self.phase)).astype(np.complex64)


def _grid(h, w):
    y = (np.arange(h) - h / 2 + 0.5) / (h / 2)
    x = (np.arange(w) - w / 2 + 0.5) / (w / 2)
    return np.meshgrid(y, x, indexing="ij")


def _ellipse_radius(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return np.sqrt((u / rx) ** 2 + (v / ry) ** 2)


def make_phantom(seed, h=64, w=64):
    """Deterministic phantom for ``seed`` at ``h x w`` pixels."""
    if h < 32 or w < 32:
        raise ValueError(f"phantom needs at least 32x32 pixels, got {h}x{w}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    px = 2.0 / min(h, w)  # one pixel in normalized units

    # annulus: near-circular ring, 1.6-2.4 px thick
    ring_r = rng.uniform(0.22, 0.32)
    ecc = rng.uniform(0.8, 1.2)
    ry, rx = ring_r * np.sqrt(ecc), ring_r / np.sqrt(ecc)
    cy, cx = rng.uniform(-0.25, 0.25, size=2)
    theta = rng.uniform(0, np.pi)
    thick = rng.uniform(1.6, 2.4) * px
    rho = _ellipse_radius(yy, xx, cy, cx, ry, rx, theta)
    ring_dist = np.abs(rho - 1.0) * ring_r
    la_mask = ring_dist <= thick / 2

    img = np.full((h, w), rng.uniform(0.0, 0.05))
    # blood pool inside the ring
    pool = 1 / (1 + np.exp((rho - 1.0) * ring_r / (0.7 * px)))
    img += pool * rng.uniform(0.3, 0.5)

    # 1-3 more chambers kept clear of the ring
    keep_out = rho < 1.0 + 4 * px / ring_r
    n_extra = rng.integers(1, 4)
    placed = 0
    for _ in range(200):
        if placed == n_extra:
            break
        ery, erx = rng.uniform(0.12, 0.3, size=2)
        ecy, ecx = rng.uniform(-0.7, 0.7, size=2)
        et = rng.uniform(0, np.pi)
        er = _ellipse_radius(yy, xx, ecy, ecx, ery, erx, et)
        body = er < 1.0 + 2 * px / min(ery, erx)
        if np.any(body & keep_out) or np.any(body & (np.abs(yy) > 0.95)) or np.any(body & (np.abs(xx) > 0.95)):
            continue
        edge = 1 / (1 + np.exp((er - 1.0) * min(ery, erx) / (0.7 * px)))
        img += edge * rng.uniform(0.3, 0.7)
        keep_out |= body
        placed += 1

    img[la_mask] = rng.uniform(0.8, 1.0)
    a, b, c = rng.uniform(-0.08, 0.08, size=3)
    bias = 1 + a * yy + b * xx + c * yy * xx
    img = np.clip(img * bias, 0.0, 1.0)

    p = rng.uniform(-np.pi / 4, np.pi / 4, size=4)
    phase = p[0] + p[1] * yy + p[2] * xx + p[3] * (yy**2 + xx**2) / 2
    return Phantom(img.astype(np.float32), la_mask, phase.astype(np.float32), int(seed))


def make_coil_maps(c, h=64, w=64, seed=0):
    """Smooth, normalized complex coil sensitivities placed around the border."""
    if c < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    offset = rng.uniform(0, 2 * np.pi)
    maps = np.empty((c, h, w), dtype=np.complex128)
    for i in range(c):
        ang = offset + 2 * np.pi * i / c
        py, px = 1.1 * np.sin(ang), 1.1 * np.cos(ang)
        width = rng.uniform(0.4, 0.5)
        mag = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * width**2))
        ky, kx = rng.uniform(-0.6, 0.6, size=2)
        ph = rng.uniform(-np.pi, np.pi) + ky * yy + kx * xx
        maps[i] = mag * np.exp(1j * ph)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps((maps / rss).astype(np.complex64), normalized=True)


def simulate_kspace(phantom, coils, mask, noise_sigma, seed=0):
    """``A x + n`` with complex noise of std ``noise_sigma`` on sampled entries.

    ``phantom`` may be a :class:`Phantom` or a complex image array. Noise
    has per-component std ``noise_sigma / sqrt(2)``, so ``E|n|^2 = sigma^2``.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    x = phantom.complex_image if isinstance(phantom, Phantom) else np.asarray(phantom)
    system = SenseSystem(mask, coils)
    y = system.forward(x.astype(np.complex128))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        n = rng.standard_normal(y.shape + (2,)) @ np.array([1.0, 1j])
        y = y + system._m * n * (noise_sigma / np.sqrt(2))
    return y.astype(np.complex64)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class SliceEntry:
    index: int
    seed: int
    mask_seed: int
    R: float
    noise_sigma: float
    files: dict

    def noise_seed(self, r):
        return int(self.seed * 1000 + round(10 * r))


@dataclass
class DatasetManifest:
    entries: list
    splits: dict
    H: int = 64
    W: int = 64
    coils: int = 4
    center_fraction: float = 0.06
    R_list: list = field(default_factory=lambda: [4, 6])
    version: int = MANIFEST_VERSION
    arrays: dict = field(default_factory=dict, repr=False)
    root: Path | None = None

    def validate(self):
        n = len(self.entries)
        seen = {}
        for name, idx in self.splits.items():
            if name not in SPLITS:
                raise DatasetError(f"unknown split {name!r}")
            for i in idx:
                if i in seen:
                    raise DatasetError(f"slice {i} in both {seen[i]!r} and {name!r} splits")
                seen[i] = name
        if sorted(seen) != list(range(n)):
            raise DatasetError("split tags do not partition the slice entries")

    def split(self, name):
        return [self.entries[i] for i in self.splits.get(name, [])]

    def image(self, i):
        return self._get(i, "image")

    def la_mask(self, i):
        return self._get(i, "la_mask") > 0.5

    def coil_maps(self, i):
        return CoilMaps(self._get(i, "coils"))

    def _get(self, i, role):
        key = (i, role)
        if key not in self.arrays:
            if self.root is None:
                raise DatasetError(f"slice {i} {role} not loaded and no dataset root")
            self.arrays[key] = serialize.load(self.root / self.entries[i].files[role])
        return self.arrays[key]

    def mask(self, i, r=None):
        e = self.entries[i]
        return make_mask(self.H, r or e.R, self.center_fraction, seed=e.mask_seed, width=self.W)

    def kspace(self, i, r=None, mask=None, noise_seed=None):
        """Retrospectively undersampled measurements for slice ``i``."""
        e = self.entries[i]
        r = r or e.R
        mask = mask or self.mask(i, r)
        seed = e.noise_seed(r) if noise_seed is None else noise_seed
        return simulate_kspace(self.image(i), self.coil_maps(i), mask, e.noise_sigma, seed=seed), mask

    def to_json(self):
        return {
            "version": self.version,
            "H": self.H,
            "W": self.W,
            "coils": self.coils,
            "center_fraction": self.center_fraction,
            "R_list": list(self.R_list),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "slices": [
                {
                    "index": e.index,
                    "seed": e.seed,
                    "mask_seed": e.mask_seed,
                    "R": e.R,
                    "noise_sigma": e.noise_sigma,
                    "files": e.files,
                }
                for e in self.entries
            ],
        }


def split_counts(n):
    """Train/val/test sizes in the 16/3/5 ratio; every split nonempty when n >= 3."""
    if n < 3:
        return n, 0, 0
    n_val = max(1, round(n * 3 / 24))
    n_test = max(1, round(n * 5 / 24))
    return n - n_val - n_test, n_val, n_test


def build_dataset(n_slices=240, h=64, w=64, coils=4, seed=0, noise_sigma=0.01, R=4, center_fraction=0.06):
    """In-memory dataset: phantoms, per-slice coil maps, fixed evaluation mask seeds."""
    entries, arrays = [], {}
    for i in range(n_slices):
        s = seed * 100_003 + i
        ph = make_phantom(s, h, w)
        cm = make_coil_maps(coils, h, w, seed=s)
        files = {role: f"slice_{i}_{role}.urtn" for role in ("image", "la_mask", "coils")}
        entries.append(SliceEntry(i, s, mask_seed=s + 7919, R=float(R), noise_sigma=float(noise_sigma), files=files))
        arrays[(i, "image")] = ph.complex_image
        arrays[(i, "la_mask")] = ph.la_mask.astype(np.float32)
        arrays[(i, "coils")] = cm.maps
    n_train, n_val, _ = split_counts(n_slices)
    idx = list(range(n_slices))
    splits = {"train": idx[:n_train], "val": idx[n_train : n_train + n_val], "test": idx[n_train + n_val :]}
    m = DatasetManifest(entries, splits, h, w, coils, center_fraction, arrays=arrays)
    m.validate()
    return m


def write_dataset(manifest, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest.validate()
    for e in manifest.entries:
        for role, fname in e.files.items():
            serialize.save(directory / fname, manifest._get(e.index, role))
    (directory / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))


def read_dataset(directory, lazy=False):
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise DatasetError(f"{path}: missing manifest")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {doc.get('version')}")
    entries = [
        SliceEntry(s["index"], s["seed"], s["mask_seed"], s["R"], s["noise_sigma"], s["files"])
        for s in doc["slices"]
    ]
    m = DatasetManifest(
        entries,
        {k: list(v) for k, v in doc["splits"].items()},
        doc["H"],
        doc["W"],
        doc["coils"],
        doc["center_fraction"],
        doc["R_list"],
        root=directory,
    )
    m.validate()
    for e in entries:
        for fname in e.files.values():
            if not (directory / fname).exists():
                raise DatasetError(f"{directory / fname}: referenced file is missing")
    if not lazy:
        for e in entries:
            for role in e.files:
                m._get(e.index, role)
    return m
