"""Extraction of training samples from volumes and map reassembly.

A sample pairs a flattened input patch of signals with a flattened target
patch of microstructure values. Flattening is voxel-major: the patch array
of shape (p, p, p, channels) is raveled in C order, so the channel index
varies fastest within each voxel and voxels follow (x, y, z) lexicographic
order. Sample order is lexicographic over center coordinates.

Sample sets persist as a little-endian binary file:

    offset  size  field
    0       8     magic b"QXSAMP01"
    8       1     mode (0 = qdl, 1 = sr)
    9       4     in_size   (uint32)
    13      4     out_size  (uint32)
    17      4     gamma     (uint32)
    21      4     n_signals (uint32)
    25      4     n_measures(uint32)
    29      8     M, number of samples (uint64)
    37      -     M * 3 int32 center coordinates
    then    -     M * in_size^3 * n_signals float32 inputs
    then    -     M * out_size^3 * n_measures float32 targets
"""

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .niftio import ScalarVolume, VolumeHeader, require_binary_mask

_MAGIC = b"QXSAMP01"
_MODES = ("qdl", "sr")


@dataclass(frozen=True)
class PatchGeometry:
    """Shape bookkeeping shared by every sample in a set."""

    mode: str                 # "qdl" or "sr"
    in_size: int
    out_size: int
    gamma: int
    n_signals: int
    n_measures: int

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.in_size < 1 or self.in_size % 2 == 0:
            raise ValueError("in_size must be odd and positive")
        if self.mode == "sr" and self.out_size != self.gamma:
            raise ValueError(
                f"sr geometry requires out_size == gamma, got "
                f"{self.out_size} != {self.gamma}")

    @property
    def input_len(self):
        return self.in_size ** 3 * self.n_signals

    @property
    def target_len(self):
        return self.out_size ** 3 * self.n_measures


@dataclass(frozen=True)
class PatchSample:
    """One training pair: flattened input and target with its center."""

    center: tuple
    input: np.ndarray
    target: np.ndarray


@dataclass
class SampleSet:
    """Columnar store of samples with homogeneous geometry."""

    geometry: PatchGeometry
    centers: np.ndarray   # (M, 3) int
    inputs: np.ndarray    # (M, input_len)
    targets: np.ndarray   # (M, target_len)

    def __post_init__(self):
        m = self.centers.shape[0]
        if self.inputs.shape != (m, self.geometry.input_len):
            raise ValueError("input block does not match geometry")
        if self.targets.shape != (m, self.geometry.target_len):
            raise ValueError("target block does not match geometry")
        if not (np.all(np.isfinite(self.inputs))
                and np.all(np.isfinite(self.targets))):
            raise ValueError("non-finite sample values")

    def __len__(self):
        return self.centers.shape[0]

    def sample(self, i):
        return PatchSample(tuple(self.centers[i]), self.inputs[i],
                           self.targets[i])


def flatten_patch(patch):
    """Voxel-major flattening of a (p, p, p, channels) patch."""
    return np.ascontiguousarray(patch).reshape(-1)

def unflatten_patch(flat, size, channels):
    """Inverse of flatten_patch."""
    return np.asarray(flat).reshape(size, size, size, channels)


def _eligible_centers(dims, mask_arr, half):
    ok = np.zeros(dims, dtype=bool)
    ok[half:dims[0] - half, half:dims[1] - half, half:dims[2] - half] = True
    return np.argwhere(ok & mask_arr)


def _stack_measures(measures, dims):
    vols = []
    for vol in measures:
        data = vol.data if isinstance(vol, ScalarVolume) else np.asarray(vol)
        if data.shape != dims:
            raise ValueError(
                f"measure dims {data.shape} do not match {dims}")
        vols.append(data)
    return np.stack(vols, axis=-1)


def _input_windows(data, in_size):
    # windows[i, j, k] is the patch whose corner is (i, j, k)
    win = sliding_window_view(data, (in_size,) * 3, axis=(0, 1, 2))
    # axes: (cx, cy, cz, channel, dx, dy, dz) -> voxel-major, channel last
    return np.moveaxis(win, 3, 6)


def extract_inputs(signals, mask, geometry):
    """Sliding-window input patches at every eligible masked center.

    Eligibility requires the full input neighborhood to lie inside the
    array bounds; the center itself must be inside the mask. Returns
    (centers, inputs) with centers in lexicographic order.
    """
    data = signals.data
    dims = data.shape[:3]
    if data.shape[3] != geometry.n_signals:
        raise ValueError(
            f"series has {data.shape[3]} volumes, geometry expects "
            f"{geometry.n_signals}")
    mask_arr = require_binary_mask(mask)
    if mask_arr.shape != dims:
        raise ValueError(f"mask dims {mask_arr.shape} do not match {dims}")
    half = (geometry.in_size - 1) // 2
    centers = _eligible_centers(dims, mask_arr, half)
    if centers.shape[0] == 0:
        return centers, np.zeros((0, geometry.input_len))
    win = _input_windows(data, geometry.in_size)
    corners = centers - half
    inputs = win[corners[:, 0], corners[:, 1], corners[:, 2]]
    return centers, inputs.reshape(centers.shape[0], -1)


def extract_qdl(signals, measures, mask, in_size=3, out_size=1):
    """Training samples for q-space-only estimation.

    One sample per masked voxel whose in_size^3 neighborhood fits in the
    array; the target is the measure vector at the center voxel.
    """
    if out_size != 1:
        raise ValueError("qdl extraction uses out_size 1")
    geometry = PatchGeometry("qdl", in_size, 1, 1, signals.data.shape[3],
                             len(measures))
    centers, inputs = extract_inputs(signals, mask, geometry)
    stacked = _stack_measures(measures, signals.spatial_dims)
    targets = stacked[centers[:, 0], centers[:, 1], centers[:, 2]].reshape(
        centers.shape[0], geometry.target_len)
    return SampleSet(geometry, centers, inputs, targets)


def extract_sr(lr_signals, hr_measures, lr_mask, gamma=2, in_size=5,
               out_size=2):
    """Training samples for joint upsampling and estimation.

    Input patches come from the low-resolution series; the target for a
    center (i, j, k) is the gamma^3 high-resolution block spanning
    [gamma*i, gamma*i + gamma) on each axis.
    """
    geometry = PatchGeometry("sr", in_size, out_size, gamma,
                             lr_signals.data.shape[3], len(hr_measures))
    lr_dims = lr_signals.spatial_dims
    hr_dims = tuple(d * gamma for d in lr_dims)
    stacked = _stack_measures(hr_measures, hr_dims)

    centers, inputs = extract_inputs(lr_signals, lr_mask, geometry)
    targets = np.zeros((centers.shape[0], geometry.target_len))
    for row, (i, j, k) in enumerate(centers):
        block = stacked[gamma * i:gamma * i + gamma,
                        gamma * j:gamma * j + gamma,
                        gamma * k:gamma * k + gamma]
        targets[row] = flatten_patch(block)
    return SampleSet(geometry, centers, inputs, targets)


def assemble(predictions, geometry, out_dims, voxel_size=(1.0, 1.0, 1.0)):
    """Scatter predicted patches back into full maps.

    ``predictions`` yields (center, flattened values) pairs. Each
    prediction covers the center voxel (qdl) or its gamma^3 block (sr);
    voxels written by several patches are averaged, uncovered voxels
    stay 0. Returns one ScalarVolume per measure.
    """
    out_dims = tuple(int(d) for d in out_dims)
    n = geometry.n_measures
    acc = np.zeros(out_dims + (n,))
    count = np.zeros(out_dims)
    g = geometry.gamma if geometry.mode == "sr" else 1
    o = geometry.out_size
    for center, values in predictions:
        x, y, z = (int(c) for c in center)
        block = unflatten_patch(values, o, n)
        x0, y0, z0 = g * x, g * y, g * z
        if (x0 < 0 or y0 < 0 or z0 < 0 or x0 + o > out_dims[0]
                or y0 + o > out_dims[1] or z0 + o > out_dims[2]):
            raise ValueError(f"prediction at {center} falls outside "
                             f"{out_dims}")
        acc[x0:x0 + o, y0:y0 + o, z0:z0 + o] += block
        count[x0:x0 + o, y0:y0 + o, z0:z0 + o] += 1.0
    covered = count > 0
    acc[covered] /= count[covered, None]
    header = VolumeHeader(out_dims, voxel_size)
    return [ScalarVolume(header, acc[..., i]) for i in range(n)]


def concat_sample_sets(sample_sets):
    """Merge sample sets that share one geometry (training over subjects)."""
    sample_sets = list(sample_sets)
    if not sample_sets:
        raise ValueError("no sample sets to merge")
    geometry = sample_sets[0].geometry
    for ss in sample_sets[1:]:
        if ss.geometry != geometry:
            raise ValueError("sample sets have differing geometry")
    return SampleSet(geometry,
                     np.concatenate([ss.centers for ss in sample_sets]),
                     np.concatenate([ss.inputs for ss in sample_sets]),
                     np.concatenate([ss.targets for ss in sample_sets]))


def save_samples(path, sample_set):
    """Write a sample set in the documented binary layout."""
    geo = sample_set.geometry
    header = _MAGIC + struct.pack(
        "<BIIIIIQ", _MODES.index(geo.mode), geo.in_size, geo.out_size,
        geo.gamma, geo.n_signals, geo.n_measures, len(sample_set))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sample_set.centers,
                                      dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(sample_set.inputs,
                                      dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample_set.targets,
                                      dtype="<f4").tobytes())


def load_samples(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError("not a sample-set file (bad magic)")
    mode_i, in_size, out_size, gamma, n_sig, n_meas, m = struct.unpack_from(
        "<BIIIIIQ", blob, 8)
    if mode_i >= len(_MODES):
        raise ValueError(f"unknown mode code {mode_i}")
    geometry = PatchGeometry(_MODES[mode_i], in_size, out_size, gamma,
                             n_sig, n_meas)
    offset = 8 + struct.calcsize("<BIIIIIQ")
    expected = m * (12 + 4 * geometry.input_len + 4 * geometry.target_len)
    if len(blob) - offset < expected:
        raise ValueError("truncated sample-set file")

    def take(count, dtype):
        nonlocal offset
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    centers = take(3 * m, "<i4").reshape(m, 3).astype(int)
    inputs = take(m * geometry.input_len, "<f4").reshape(
        m, geometry.input_len).astype(float)
    targets = take(m * geometry.target_len, "<f4").reshape(
        m, geometry.target_len).astype(float)
    return SampleSet(geometry, centers, inputs, targets)
