"""Analytic multi-tensor phantoms with known microstructure.

Each voxel mixes Gaussian diffusion compartments; the forward signal is
S(b, g) = s0 * sum_i f_i exp(-b g^T D_i g). Ground-truth maps report the
anisotropic volume fraction (compartments with FA above a fixed
threshold), its isotropic complement, and the fractional anisotropy of
the combined anisotropic tensor. Phantoms are deterministic functions of
their seed; noise streams are derived per voxel from (seed, coordinate)
so that generation order cannot matter.
"""

import math
from dataclasses import dataclass

import numpy as np

from .niftio import DwiVolume, ScalarVolume, VolumeHeader
from .scheme import GradientScheme

FA_SPLIT_THRESHOLD = 0.2
MEASURE_NAMES = ("f_aniso", "f_iso", "fa_aniso")

_GOLDEN = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class VoxelModel:
    """Mixture of Gaussian compartments with a common non-weighted level."""

    compartments: tuple   # ((fraction, 3x3 tensor), ...)
    s0: float = 1.0

    def __post_init__(self):
        total = 0.0
        for fraction, tensor in self.compartments:
            tensor = np.asarray(tensor, dtype=float)
            if tensor.shape != (3, 3):
                raise ValueError("compartment tensor must be 3x3")
            if not np.allclose(tensor, tensor.T):
                raise ValueError("compartment tensor must be symmetric")
            if np.linalg.eigvalsh(tensor).min() < -1e-12:
                raise ValueError("compartment tensor must be positive "
                                 "semidefinite")
            if not 0.0 <= fraction <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")
            total += fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {total}, expected 1")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")


def fractional_anisotropy(tensor):
    """FA of a single diffusion tensor (0 for the zero tensor)."""
    evals = np.linalg.eigvalsh(np.asarray(tensor, dtype=float))
    sq = float(np.sum(evals ** 2))
    if sq == 0.0:
        return 0.0
    mean = evals.mean()
    return float(np.sqrt(1.5 * np.sum((evals - mean) ** 2) / sq))


def signal(model, scheme):
    """Noise-free signal of a voxel model on a gradient scheme."""
    out = np.zeros(len(scheme))
    for fraction, tensor in model.compartments:
        d = np.asarray(tensor, dtype=float)
        quad = np.einsum("ij,jk,ik->i", scheme.bvecs, d, scheme.bvecs)
        out += fraction * np.exp(-scheme.bvals * quad)
    return model.s0 * out


def ground_truth_measures(model):
    """(f_aniso, f_iso, fa_aniso) for a voxel model.

    f_aniso sums the fractions of compartments whose FA exceeds the split
    threshold; fa_aniso is the FA of the fraction-weighted sum of those
    tensors, 0 when no compartment qualifies.
    """
    f_aniso = 0.0
    weighted = np.zeros((3, 3))
    for fraction, tensor in model.compartments:
        if fractional_anisotropy(tensor) > FA_SPLIT_THRESHOLD:
            f_aniso += fraction
            weighted += fraction * np.asarray(tensor, dtype=float)
    fa = fractional_anisotropy(weighted) if f_aniso > 0 else 0.0
    return f_aniso, 1.0 - f_aniso, fa


def add_rician_noise(signals, sigma, seed, s0=1.0):
    """Magnitude-style noise: sqrt((S + n1)^2 + n2^2), n ~ N(0, sigma*s0)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    signals = np.asarray(signals, dtype=float)
    if sigma == 0:
        return signals.copy()
    rng = np.random.default_rng(seed)
    scale = sigma * s0
    n1 = rng.normal(0.0, scale, size=signals.shape)
    n2 = rng.normal(0.0, scale, size=signals.shape)
    return np.sqrt((signals + n1) ** 2 + n2 ** 2)


def fibonacci_directions(n, offset=0.0):
    """n roughly uniform unit vectors from a golden-angle spiral."""
    i = np.arange(n)
    z = (2 * i + 1) / n - 1
    r = np.sqrt(1.0 - z * z)
    phi = i * _GOLDEN + offset
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def multishell_scheme(dirs_per_shell, bvalues, n_b0=1, offset=0.0):
    """Scheme with n_b0 leading b=0 entries and staggered spiral shells."""
    bvals = [np.zeros(n_b0)]
    bvecs = [np.zeros((n_b0, 3))]
    for k, b in enumerate(bvalues):
        bvals.append(np.full(dirs_per_shell, float(b)))
        bvecs.append(fibonacci_directions(dirs_per_shell, offset + 0.55 * k))
    return GradientScheme(np.concatenate(bvals), np.vstack(bvecs))


def source_scheme(dirs_per_shell=20, n_b0=3):
    """Densely sampled three-shell acquisition used for training data."""
    return multishell_scheme(dirs_per_shell, (1000.0, 2000.0, 3000.0), n_b0)


def target_scheme(dirs_per_shell=18, n_b0=2):
    """Undersampled two-shell acquisition standing in for the dataset of
    interest: dirs_per_shell gradients on each of b = 1000 and 3000."""
    return multishell_scheme(dirs_per_shell, (1000.0, 3000.0), n_b0,
                             offset=0.31)


@dataclass(frozen=True)
class PhantomConfig:
    """Region layout plus acquisition noise settings.

    ``region_labels`` assigns each voxel an index into ``models``;
    label -1 marks background (no signal, outside the support mask).
    """

    dims: tuple
    region_labels: np.ndarray
    models: tuple            # VoxelModel per region label
    voxel_size: tuple = (2.0, 2.0, 2.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if tuple(self.region_labels.shape) != tuple(self.dims):
            raise ValueError("region label grid does not match dims")
        if self.region_labels.max() >= len(self.models):
            raise ValueError("region label exceeds model table")


def _prolate(axial, radial, direction):
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    return radial * np.eye(3) + (axial - radial) * np.outer(u, u)


def default_phantom(dims=(16, 16, 16), seed=0, noise_sigma=0.0,
                    voxel_size=(2.0, 2.0, 2.0)):
    """Spherical phantom with a fluid core, fiber sectors and a rim.

    Region tensors are jittered per seed within ranges that the basis
    fit reproduces accurately (radial diffusivity >= ~0.5e-3), so
    different seeds act as different subjects sharing the same anatomy
    style. Measure maps are piecewise constant over regions.
    """
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*(np.arange(d) for d in dims),
                                indexing="ij"), axis=-1).astype(float)
    center = (np.array(dims) - 1) / 2.0
    radius = np.linalg.norm(grid - center, axis=-1)
    r_outer = 0.46 * min(dims)
    r_core = 0.16 * min(dims)
    r_fiber = 0.34 * min(dims)

    azimuth = np.arctan2(grid[..., 1] - center[1], grid[..., 0] - center[0])
    n_sectors = 6
    sector = ((azimuth + math.pi) / (2 * math.pi) * n_sectors).astype(int)
    sector = np.clip(sector, 0, n_sectors - 1)

    labels = np.full(dims, -1, dtype=int)
    labels[radius <= r_outer] = 1 + n_sectors + sector[radius <= r_outer]
    fiber_zone = (radius > r_core) & (radius <= r_fiber)
    labels[fiber_zone] = 1 + sector[fiber_zone]
    labels[radius <= r_core] = 0

    models = [VoxelModel(((1.0, rng.uniform(2.7e-3, 3.0e-3) * np.eye(3)),))]
    for k in range(n_sectors):
        # fiber sector: prolate compartment plus isotropic partial volume
        u = fibonacci_directions(n_sectors, offset=rng.uniform(0, 2 * math.pi))[k]
        axial = rng.uniform(1.25e-3, 1.45e-3)
        radial = rng.uniform(0.48e-3, 0.58e-3)
        f = rng.uniform(0.6, 0.85)
        d_iso = rng.uniform(0.7e-3, 1.1e-3)
        models.append(VoxelModel(((f, _prolate(axial, radial, u)),
                                  (1.0 - f, d_iso * np.eye(3)))))
    for k in range(n_sectors):
        # rim sector: weakly anisotropic mixture
        u = fibonacci_directions(n_sectors, offset=1.1 + 0.2 * k)[k]
        axial = rng.uniform(1.15e-3, 1.3e-3)
        radial = rng.uniform(0.55e-3, 0.65e-3)
        f = rng.uniform(0.35, 0.55)
        d_iso = rng.uniform(0.9e-3, 1.6e-3)
        models.append(VoxelModel(((f, _prolate(axial, radial, u)),
                                  (1.0 - f, d_iso * np.eye(3)))))
    return PhantomConfig(dims, labels, tuple(models), tuple(voxel_size),
                         float(noise_sigma), int(seed))


@dataclass
class PhantomData:
    """Paired volumes sharing one ground truth."""

    dwi_source: DwiVolume
    dwi_target: DwiVolume
    measures: list           # ScalarVolume per MEASURE_NAMES entry
    mask: ScalarVolume


def _voxel_noise(data, labels, models, sigma, seed, tag):
    if sigma == 0.0:
        return data
    out = data.copy()
    for idx in np.argwhere(labels >= 0):
        x, y, z = (int(v) for v in idx)
        rng = np.random.default_rng((seed, tag, x, y, z))
        s0 = models[labels[x, y, z]].s0
        scale = sigma * s0
        n1 = rng.normal(0.0, scale, size=data.shape[3])
        n2 = rng.normal(0.0, scale, size=data.shape[3])
        out[x, y, z] = np.sqrt((data[x, y, z] + n1) ** 2 + n2 ** 2)
    return out


def generate(config, scheme_source, scheme_target):
    """Materialize a phantom on a source and a target acquisition.

    Returns paired noisy series (per ``config.noise_sigma``), the
    ground-truth measure maps and the support mask. Deterministic for a
    fixed config.
    """
    dims = config.dims
    labels = config.region_labels
    header4 = VolumeHeader(dims + (len(scheme_source),), config.voxel_size)
    header3 = VolumeHeader(dims, config.voxel_size)

    sig_src = {i: signal(m, scheme_source) for i, m in enumerate(config.models)}
    sig_tgt = {i: signal(m, scheme_target) for i, m in enumerate(config.models)}
    meas = {i: ground_truth_measures(m) for i, m in enumerate(config.models)}

    src = np.zeros(dims + (len(scheme_source),))
    tgt = np.zeros(dims + (len(scheme_target),))
    maps = np.zeros(dims + (len(MEASURE_NAMES),))
    for label in range(len(config.models)):
        sel = labels == label
        src[sel] = sig_src[label]
        tgt[sel] = sig_tgt[label]
        maps[sel] = meas[label]

    src = _voxel_noise(src, labels, config.models, config.noise_sigma,
                       config.seed, 0)
    tgt = _voxel_noise(tgt, labels, config.models, config.noise_sigma,
                       config.seed, 1)

    measures = [ScalarVolume(header3, maps[..., i])
                for i in range(len(MEASURE_NAMES))]
    mask = ScalarVolume(header3.with_(datatype="uint8"),
                        (labels >= 0).astype(float))
    return PhantomData(
        DwiVolume(header4, src, scheme_source),
        DwiVolume(header4.with_(dims=dims + (len(scheme_target),)), tgt,
                  scheme_target),
        measures, mask)


def format_manifest(config, scheme_source, scheme_target):
    """Human-readable record of how a phantom was generated."""
    lines = [
        f"dims = {' '.join(str(d) for d in config.dims)}",
        f"voxel_size = {' '.join(f'{v:g}' for v in config.voxel_size)}",
        f"noise_sigma = {config.noise_sigma:g}",
        f"seed = {config.seed}",
        f"n_regions = {len(config.models)}",
        f"source_entries = {len(scheme_source)}",
        f"target_entries = {len(scheme_target)}",
        f"fa_split_threshold = {FA_SPLIT_THRESHOLD:g}",
    ]
    for i, model in enumerate(config.models):
        parts = []
        for fraction, tensor in model.compartments:
            evals = np.linalg.eigvalsh(np.asarray(tensor))
            parts.append(f"{fraction:.4f}:[{evals[0]:.2e},{evals[1]:.2e},"
                         f"{evals[2]:.2e}]")
        lines.append(f"region_{i} = " + " + ".join(parts))
    return "\n".join(lines) + "\n"
