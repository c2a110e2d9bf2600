"""Diffusion gradient schemes and their mapping to q-space coordinates."""

import math
from dataclasses import dataclass

import numpy as np

# With tau = 1/(4*pi^2) the q magnitude reduces to sqrt(b).
DEFAULT_TAU = 1.0 / (4.0 * math.pi ** 2)
DEFAULT_B0_THRESHOLD = 10.0
UNIT_NORM_TOL = 1e-4

# Direction reported for samples at the q-space origin, where the gradient
# direction is undefined.
B0_DIRECTION = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class QPoint:
    """A single q-space sample: radial magnitude and unit direction."""

    magnitude: float
    direction: np.ndarray


class GradientScheme:
    """A gradient table: b-values with unit gradient directions.

    Parameters
    ----------
    bvals : array_like, shape (M,)
        Diffusion weightings in s/mm^2, all >= 0.
    bvecs : array_like, shape (M, 3)
        Gradient directions. Rows with bval > b0_threshold must have unit
        norm (tolerance ``UNIT_NORM_TOL``); rows at or below the threshold
        may be zero and are replaced by the b0 direction convention.
    b0_threshold : float
        b-values at or below this count as b=0 acquisitions.
    tau : float
        Diffusion time in seconds used for the q-space mapping.

    Instances are immutable after construction and safe to share between
    workers.
    """

    def __init__(self, bvals, bvecs, b0_threshold=DEFAULT_B0_THRESHOLD,
                 tau=DEFAULT_TAU):
        bvals = np.atleast_1d(np.asarray(bvals, dtype=float))
        bvecs = np.asarray(bvecs, dtype=float)
        if bvals.ndim != 1:
            raise ValueError("bvals must be a 1-D sequence")
        if bvecs.shape != (bvals.size, 3):
            raise ValueError(
                f"bvecs shape {bvecs.shape} does not match {bvals.size} bvals")
        if np.any(bvals < 0):
            raise ValueError("negative b-value")
        if tau <= 0:
            raise ValueError("tau must be positive")

        norms = np.linalg.norm(bvecs, axis=1)
        dw = bvals > b0_threshold
        bad = dw & (np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"entry {i}: bval {bvals[i]:g} with non-unit direction "
                f"(norm {norms[i]:.6g})")

        bvecs = bvecs.copy()
        bvecs[~dw & (norms == 0.0)] = B0_DIRECTION
        for arr in (bvals, bvecs):
            arr.flags.writeable = False

        self.bvals = bvals
        self.bvecs = bvecs
        self.b0_threshold = float(b0_threshold)
        self.tau = float(tau)

    def __len__(self):
        return self.bvals.size

    def __eq__(self, other):
        if not isinstance(other, GradientScheme):
            return NotImplemented
        return (np.array_equal(self.bvals, other.bvals)
                and np.array_equal(self.bvecs, other.bvecs)
                and self.b0_threshold == other.b0_threshold
                and self.tau == other.tau)

    @property
    def b0_mask(self):
        """Boolean mask of b=0 entries."""
        return self.bvals <= self.b0_threshold

    @property
    def n_b0(self):
        return int(np.count_nonzero(self.b0_mask))

    def without_b0(self):
        """The scheme restricted to diffusion-weighted entries."""
        keep = ~self.b0_mask
        return GradientScheme(self.bvals[keep], self.bvecs[keep],
                              self.b0_threshold, self.tau)

    def fingerprint(self):
        """Stable identifier for caching per-scheme computations."""
        return hash((self.bvals.tobytes(), self.bvecs.tobytes(), self.tau))


def q_magnitudes(scheme, tau=None):
    """q-space radial coordinates, one per scheme entry.

    q = sqrt(b / (4*pi^2*tau)); with the default tau this is sqrt(b).
    """
    if tau is None:
        tau = scheme.tau
    return np.sqrt(scheme.bvals / (4.0 * math.pi ** 2 * tau))


def q_coordinates(scheme, tau=None):
    """Map every scheme entry to its q-space sample point.

    Returns
    -------
    list of QPoint
        Magnitude sqrt(b / (4*pi^2*tau)) and the entry's unit direction;
        zero-magnitude points carry the fixed b0 direction.
    """
    mags = q_magnitudes(scheme, tau)
    points = []
    for mag, vec in zip(mags, scheme.bvecs):
        direction = B0_DIRECTION if mag == 0.0 else vec
        points.append(QPoint(float(mag), np.array(direction)))
    return points


def _parse_row(text, what):
    toks = text.split()
    try:
        return np.array([float(t) for t in toks])
    except ValueError as exc:
        raise ValueError(f"non-numeric token in {what}: {exc}") from None


def parse_fsl_gradients(bval_text, bvec_text,
                        b0_threshold=DEFAULT_B0_THRESHOLD, tau=DEFAULT_TAU):
    """Build a scheme from FSL-convention bvals/bvecs text.

    ``bval_text`` holds one whitespace-separated row of M values;
    ``bvec_text`` holds three rows (x, y, z components). Non-zero
    directions are renormalized to unit length; zero directions are only
    accepted for b=0 entries.
    """
    bvals = _parse_row(bval_text, "bvals")
    rows = [_parse_row(line, "bvecs")
            for line in bvec_text.splitlines() if line.strip()]
    if len(rows) != 3:
        raise ValueError(f"expected 3 bvec rows, got {len(rows)}")
    lengths = {r.size for r in rows}
    if len(lengths) != 1 or lengths.pop() != bvals.size:
        raise ValueError(
            f"gradient row lengths do not match: {bvals.size} bvals, "
            f"bvec rows of {[r.size for r in rows]}")
    bvecs = np.stack(rows, axis=1)

    norms = np.linalg.norm(bvecs, axis=1)
    zero = norms == 0.0
    if np.any(zero & (bvals > b0_threshold)):
        i = int(np.flatnonzero(zero & (bvals > b0_threshold))[0])
        raise ValueError(f"entry {i}: bval {bvals[i]:g} with zero direction")
    bvecs[~zero] /= norms[~zero, None]
    return GradientScheme(bvals, bvecs, b0_threshold, tau)


def format_fsl_gradients(scheme):
    """Scheme as FSL bvals/bvecs text with 6 significant digits."""
    bval_text = " ".join(f"{b:.6g}" for b in scheme.bvals) + "\n"
    lines = []
    for axis in range(3):
        lines.append(" ".join(f"{v:.6g}" for v in scheme.bvecs[:, axis]))
    return bval_text, "\n".join(lines) + "\n"


def read_fsl_gradients(bval_path, bvec_path,
                       b0_threshold=DEFAULT_B0_THRESHOLD, tau=DEFAULT_TAU):
    with open(bval_path) as fh:
        bval_text = fh.read()
    with open(bvec_path) as fh:
        bvec_text = fh.read()
    return parse_fsl_gradients(bval_text, bvec_text, b0_threshold, tau)


def write_fsl_gradients(scheme, bval_path, bvec_path):
    bval_text, bvec_text = format_fsl_gradients(scheme)
    with open(bval_path, "w") as fh:
        fh.write(bval_text)
    with open(bvec_path, "w") as fh:
        fh.write(bvec_text)
