"""Unrolled model-based MRI reconstruction at desk scale.

Subpackages and modules:

- :mod:`unrollrecon.tensor` -- reverse-mode autodiff over numpy arrays
- :mod:`unrollrecon.mri` -- centered FFTs, line masks, the SENSE operator
- :mod:`unrollrecon.phantom` -- synthetic phantoms, coil maps, datasets
- :mod:`unrollrecon.solvers` -- CG data consistency and the TV-CS baseline
- :mod:`unrollrecon.networks` -- EDSR-style, U-Net and residual U-Net networks
- :mod:`unrollrecon.unrolled` -- the unrolled model and its training loop
- :mod:`unrollrecon.dip` -- self-guided deep image prior baseline
- :mod:`unrollrecon.evalkit` -- PSNR, SSIM, Dice, segmentation and reports
- :mod:`unrollrecon.cli` -- ``python -m unrollrecon``
"""

__version__ = "0.1.0"
