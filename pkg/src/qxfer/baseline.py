"""Conventional per-voxel microstructure estimation for comparison.

Fits each voxel's normalized signals with nonnegative linear least
squares over a fixed dictionary of generic Gaussian compartments
(isotropic balls at several diffusivities plus prolate kernels over a
direction fan), then reads the measure triple off the recovered
weights. This plays the role of a training-free model-based method
applied directly to the undersampled acquisition.
"""

import numpy as np
from scipy.optimize import nnls

from .niftio import ScalarVolume, require_binary_mask
from .synth import (FA_SPLIT_THRESHOLD, MEASURE_NAMES, fibonacci_directions,
                    fractional_anisotropy)

ISO_DIFFUSIVITIES = (0.7e-3, 1.5e-3, 3.0e-3)
PROLATE_KERNELS = ((1.4e-3, 0.35e-3), (1.7e-3, 0.15e-3))
N_KERNEL_DIRECTIONS = 12


def kernel_dictionary(scheme):
    """Signal dictionary of generic compartments for a gradient scheme.

    Returns (signals, tensors, aniso_mask): one column per kernel, the
    kernel tensors, and which kernels count as anisotropic under the
    measure split.
    """
    tensors = [d * np.eye(3) for d in ISO_DIFFUSIVITIES]
    dirs = fibonacci_directions(2 * N_KERNEL_DIRECTIONS)
    dirs = dirs[dirs[:, 2] >= 0][:N_KERNEL_DIRECTIONS]
    for axial, radial in PROLATE_KERNELS:
        for u in dirs:
            tensors.append(radial * np.eye(3)
                           + (axial - radial) * np.outer(u, u))
    signals = np.empty((len(scheme), len(tensors)))
    for j, d in enumerate(tensors):
        quad = np.einsum("ij,jk,ik->i", scheme.bvecs, d, scheme.bvecs)
        signals[:, j] = np.exp(-scheme.bvals * quad)
    aniso = np.array([fractional_anisotropy(d) > FA_SPLIT_THRESHOLD
                      for d in tensors])
    return signals, tensors, aniso


def estimate_measures(dwi, mask):
    """Per-voxel dictionary fit of a normalized series into measure maps.

    ``dwi`` must already be b0-normalized (attenuations, b0-free scheme).
    A unit-sum row softly ties the weights to a partial-volume reading.
    Returns one ScalarVolume per entry of MEASURE_NAMES.
    """
    mask_arr = require_binary_mask(mask)
    if mask_arr.shape != dwi.spatial_dims:
        raise ValueError("mask dims do not match series")
    kernels, tensors, aniso = kernel_dictionary(dwi.scheme)
    design = np.vstack([kernels, np.ones(kernels.shape[1])])
    tensors = np.array(tensors)

    maps = np.zeros(dwi.spatial_dims + (len(MEASURE_NAMES),))
    for x, y, z in np.argwhere(mask_arr):
        sig = dwi.data[x, y, z]
        rhs = np.append(sig, 1.0)
        weights, _ = nnls(design, rhs)
        total = weights.sum()
        if total <= 0:
            continue
        f_aniso = float(weights[aniso].sum() / total)
        if weights[aniso].sum() > 0:
            mean_tensor = np.tensordot(weights[aniso],
                                       tensors[aniso], axes=1)
            fa = fractional_anisotropy(mean_tensor / weights[aniso].sum())
        else:
            fa = 0.0
        maps[x, y, z] = (f_aniso, 1.0 - f_aniso, fa)

    header = dwi.header.with_(dims=dwi.spatial_dims)
    return [ScalarVolume(header, maps[..., i])
            for i in range(len(MEASURE_NAMES))]
