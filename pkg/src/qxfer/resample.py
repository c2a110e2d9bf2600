"""Spatial block-mean downsampling and volume-level q-space resampling.

These operations build training inputs: a high-quality series is optionally
reduced in resolution by block-wise averaging, b0-normalized, fitted with
the basis dictionary voxel by voxel, and re-evaluated on the sampling
scheme of the acquisition being targeted.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import shore
from .niftio import DwiVolume, ScalarVolume, VolumeHeader, require_binary_mask

# Voxels are processed in fixed-size chunks so that results are bitwise
# identical for any worker count.
_CHUNK = 4096


def normalize_b0(dwi):
    """Divide diffusion-weighted volumes by the mean b=0 volume.

    Returns
    -------
    (DwiVolume, ScalarVolume, ScalarVolume)
        The attenuation series without its b0 volumes (scheme shrinks
        accordingly), the mean b0 map, and a binary mask of voxels with a
        positive b0 where normalization was possible. Voxels outside that
        mask are set to 0.
    """
    b0s = dwi.scheme.b0_mask
    if not np.any(b0s):
        raise ValueError("scheme has no b=0 entries to normalize by")
    b0_map = dwi.data[..., b0s].mean(axis=3)
    valid = b0_map > 0

    dw = dwi.data[..., ~b0s]
    out = np.zeros_like(dw)
    np.divide(dw, b0_map[..., None], out=out, where=valid[..., None])

    header = dwi.header.with_(dims=out.shape)
    norm = DwiVolume(header, out, dwi.scheme.without_b0())
    hdr3 = dwi.header.with_(dims=out.shape[:3])
    return (norm,
            ScalarVolume(hdr3, b0_map),
            ScalarVolume(hdr3.with_(datatype="uint8"), valid.astype(float)))


def block_mean_downsample(vol, gamma):
    """Average non-overlapping gamma^3 blocks of a 3-D or 4-D array.

    Each spatial axis is first cropped to its largest multiple of gamma;
    trailing (gradient) axes are untouched.
    """
    gamma = int(gamma)
    if gamma < 1:
        raise ValueError("gamma must be a positive integer")
    a = np.asarray(vol, dtype=float)
    if a.ndim not in (3, 4):
        raise ValueError("expected a 3-D or 4-D array")
    if any(s < gamma for s in a.shape[:3]):
        raise ValueError(
            f"spatial dims {a.shape[:3]} smaller than block size {gamma}")
    if gamma == 1:
        return a.copy()
    nx, ny, nz = (s // gamma for s in a.shape[:3])
    a = a[:nx * gamma, :ny * gamma, :nz * gamma]
    rest = a.shape[3:]
    a = a.reshape(nx, gamma, ny, gamma, nz, gamma, *rest)
    return a.mean(axis=(1, 3, 5))


def downsample_dwi(dwi, gamma):
    """Block-mean a diffusion series, scaling the voxel size by gamma."""
    data = block_mean_downsample(dwi.data, gamma)
    header = VolumeHeader(
        data.shape,
        tuple(v * gamma for v in dwi.header.voxel_size),
        dwi.header.datatype,
        dwi.header.affine @ np.diag([gamma, gamma, gamma, 1.0]))
    return DwiVolume(header, data, dwi.scheme)


def downsample_mask(mask, gamma):
    """Block-mean a binary mask and threshold at 0.5."""
    data = require_binary_mask(mask).astype(float)
    low = block_mean_downsample(data, gamma) >= 0.5
    header = VolumeHeader(
        low.shape,
        tuple(v * gamma for v in mask.header.voxel_size),
        "uint8",
        mask.header.affine @ np.diag([gamma, gamma, gamma, 1.0]))
    return ScalarVolume(header, low.astype(float))


def block_replicate_upsample(vol, gamma):
    """Nearest-style upsampling: each voxel becomes a gamma^3 block."""
    gamma = int(gamma)
    if gamma < 1:
        raise ValueError("gamma must be a positive integer")
    a = np.asarray(vol, dtype=float)
    for axis in range(3):
        a = np.repeat(a, gamma, axis=axis)
    return a


def resample_qspace(dwi, mask, spec, target, n_workers=1, clamp_max=None):
    """Refit every masked voxel and evaluate it on a target scheme.

    Parameters
    ----------
    dwi : DwiVolume
        b0-normalized attenuation series (no b=0 entries in its scheme).
    mask : ScalarVolume
        Binary mask selecting voxels to process; everything else is 0.
    spec : shore.ShoreBasisSpec
        Basis configuration used for the per-voxel fit.
    target : GradientScheme
        Scheme to interpolate onto; its b=0 entries are dropped.
    n_workers : int
        Worker threads for the voxel-parallel map. The output is
        independent of this value.
    clamp_max : float, optional
        When given, interpolated values are clamped into [0, clamp_max]
        (display aid; off by default to preserve linearity).

    Returns
    -------
    DwiVolume
        Interpolated series on the diffusion-weighted part of ``target``.
    """
    mask_arr = require_binary_mask(mask)
    if mask_arr.shape != dwi.spatial_dims:
        raise ValueError(
            f"mask dims {mask_arr.shape} do not match data {dwi.spatial_dims}")

    target_dw = target.without_b0()
    design_src = shore.design_matrix(dwi.scheme, spec)
    design_tgt = shore.design_matrix(target_dw, spec)
    reg = shore.regularizer(design_src.index_set)
    solver = shore.CoefficientSolver(design_src, reg, spec.lambda_l,
                                     spec.lambda_n)

    coords = np.argwhere(mask_arr)
    signals = dwi.data[mask_arr]
    out_flat = np.zeros((signals.shape[0], len(target_dw)))

    def run_chunk(start):
        stop = min(start + _CHUNK, signals.shape[0])
        block = signals[start:stop]
        if not np.all(np.isfinite(block)):
            bad = np.argwhere(~np.isfinite(block))[0, 0] + start
            raise ValueError(
                f"non-finite signal at voxel {tuple(coords[bad])}")
        coeffs = solver.fit(block)
        out_flat[start:stop] = shore.interpolate(coeffs, design_tgt)

    starts = range(0, signals.shape[0], _CHUNK)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for start in starts:
            run_chunk(start)

    if clamp_max is not None:
        np.clip(out_flat, 0.0, clamp_max, out=out_flat)

    out = np.zeros(dwi.spatial_dims + (len(target_dw),))
    out[mask_arr] = out_flat
    header = dwi.header.with_(dims=out.shape)
    return DwiVolume(header, out, target_dw)
