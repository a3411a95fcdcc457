"""Centered unitary FFTs, Cartesian line masks and the SENSE operator pair.

Arrays follow ``[..., H, W]`` with ky along ``H`` (rows) and kx along ``W``.
Coil maps are ``[C, H, W]``; k-space is ``[C, H, W]`` or batched ``[B, C, H, W]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


class ConfigError(ValueError):
    """Invalid acquisition parameters."""


def fft2c(x):
    """Centered, orthonormal 2-D DFT over the last two axes."""
    x = sfft.ifftshift(x, axes=(-2, -1))
    x = sfft.fft2(x, axes=(-2, -1), norm="ortho")
    return sfft.fftshift(x, axes=(-2, -1))


def ifft2c(k):
    """Inverse of :func:`fft2c`."""
    k = sfft.ifftshift(k, axes=(-2, -1))
    k = sfft.ifft2(k, axes=(-2, -1), norm="ortho")
    return sfft.fftshift(k, axes=(-2, -1))


def center_block(h, center_fraction):
    """Indices of the fully sampled ky block around ``h // 2``.

    An even-sized block cannot be symmetric about ``h // 2``; its extra line
    sits on the low-index side.
    """
    n = max(math.ceil(center_fraction * h - 1e-9), 1)
    start = h // 2 - n // 2
    return np.arange(start, start + n)


@dataclass(frozen=True)
class SamplingMask:
    """Boolean ky-line selection broadcast across kx."""

    lines: np.ndarray
    width: int
    acceleration: float
    center_fraction: float
    seed: int | None = None

    @property
    def height(self):
        return self.lines.shape[0]

    @property
    def matrix(self):
        return np.broadcast_to(self.lines[:, None], (self.height, self.width))

    @property
    def n_sampled(self):
        return int(self.lines.sum())

    def params(self):
        return {
            "H": self.height,
            "W": self.width,
            "R": self.acceleration,
            "center_fraction": self.center_fraction,
            "seed": self.seed,
        }


def make_mask(h, r, center_fraction=0.06, seed=0, width=None):
    """Random Cartesian mask with a fully sampled center block.

    ``round(h / r)`` lines are kept: the ``ceil(center_fraction * h)`` center
    lines plus lines drawn uniformly without replacement from the periphery.
    """
    if r < 1:
        raise ConfigError(f"acceleration must be >= 1, got {r}")
    if not 0 < center_fraction <= 0.5:
        raise ConfigError(f"center_fraction must lie in (0, 0.5], got {center_fraction}")
    center = center_block(h, center_fraction)
    total = int(round(h / r))
    if total < center.size:
        raise ConfigError(
            f"round({h}/{r}) = {total} lines cannot hold the {center.size}-line center block"
        )
    lines = np.zeros(h, dtype=bool)
    lines[center] = True
    periphery = np.flatnonzero(~lines)
    rng = np.random.default_rng(seed)
    extra = rng.choice(periphery, total - center.size, replace=False)
    lines[extra] = True
    return SamplingMask(lines, width or h, float(r), float(center_fraction), seed)


def full_mask(h, width=None):
    return SamplingMask(np.ones(h, dtype=bool), width or h, 1.0, 0.5, None)


@dataclass(frozen=True)
class CoilMaps:
    maps: np.ndarray
    normalized: bool = True

    @property
    def n_coils(self):
        return self.maps.shape[0]


def normalize_maps(maps, floor=0.0):
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    out = np.where(rss > floor, maps / np.where(rss > floor, rss, 1), 0)
    return out.astype(maps.dtype)


class SenseSystem:
    """The encoding operator ``A = M . F . S`` and its adjoint.

    Images are complex ``[H, W]`` or ``[B, H, W]``; k-space gains a coil axis
    before the spatial ones.
    """

    def __init__(self, mask, coils):
        maps = coils.maps if isinstance(coils, CoilMaps) else np.asarray(coils)
        if maps.ndim != 3:
            raise ValueError(f"coil maps must be [C,H,W], got shape {maps.shape}")
        if (mask.height, mask.width) != maps.shape[1:]:
            raise ValueError(
                f"mask extent {(mask.height, mask.width)} disagrees with coil maps {maps.shape[1:]}"
            )
        self.mask = mask
        self.maps = maps
        self.C, self.H, self.W = maps.shape
        self._m = mask.lines[:, None].astype(maps.real.dtype)

    @classmethod
    def stack(cls, systems):
        """Batch systems with equal extents; images then carry a leading batch axis."""
        obj = cls.__new__(cls)
        obj.mask = [s.mask for s in systems]
        obj.maps = np.stack([s.maps for s in systems])
        obj.C, obj.H, obj.W = systems[0].C, systems[0].H, systems[0].W
        obj._m = np.stack([s._m for s in systems])[:, None]
        return obj

    @property
    def batched(self):
        return self.maps.ndim == 4

    @property
    def fully_sampled(self):
        masks = self.mask if isinstance(self.mask, list) else [self.mask]
        return all(m.lines.all() for m in masks)

    def _check_image(self, x):
        if x.shape[-2:] != (self.H, self.W):
            raise ValueError(f"image extent {x.shape[-2:]} does not match system {(self.H, self.W)}")

    def forward(self, x):
        """``y_c = M * fft2c(S_c * x)`` for every coil."""
        self._check_image(x)
        return self._m * fft2c(self.maps * x[..., None, :, :])

    def adjoint(self, y):
        """``sum_c conj(S_c) * ifft2c(M * y_c)``."""
        if y.shape[-3:] != (self.C, self.H, self.W):
            raise ValueError(f"k-space shape {y.shape[-3:]} does not match system {(self.C, self.H, self.W)}")
        return np.sum(np.conj(self.maps) * ifft2c(self._m * y), axis=-3)

    def normal(self, x):
        """``A^H A x``."""
        return self.adjoint(self.forward(x))

    def as_matrix(self):
        """Dense complex matrix of ``A`` (rows: coil/ky/kx, cols: pixels). Small systems only."""
        n = self.H * self.W
        cols = [self.forward(e.reshape(self.H, self.W)).ravel() for e in np.eye(n, dtype=complex)]
        return np.stack(cols, axis=1)


def sense_forward(system, image):
    return system.forward(image)


def sense_adjoint(system, kspace):
    return system.adjoint(kspace)


def estimate_sensitivities(kspace, center_lines, floor=1e-8):
    """Coil maps from the fully sampled k-space center.

    Each coil's calibration block is inverse transformed to a low-resolution
    image; maps are those images divided by their root-sum-of-squares.
    Pixels below ``floor * max(rss)`` get zero sensitivity.
    """
    kspace = np.asarray(kspace)
    c, h, w = kspace.shape
    if center_lines < 1:
        raise ValueError("calibration region is empty")
    block = center_block(h, center_lines / h)
    calib = np.zeros_like(kspace)
    calib[:, block, :] = kspace[:, block, :]
    # taper along ky to suppress ringing from the hard block edge
    taper = np.hanning(block.size + 2)[1:-1]
    calib[:, block, :] *= taper[None, :, None]
    low = ifft2c(calib)
    rss = np.sqrt(np.sum(np.abs(low) ** 2, axis=0))
    if rss.max() == 0:
        raise ValueError("calibration region carries no signal")
    maps = normalize_maps(low, floor=floor * rss.max())
    return CoilMaps(maps.astype(np.complex128), normalized=True)
