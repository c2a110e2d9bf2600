"""SHORE basis evaluation, dictionary construction and regularized fitting.

The basis expands a q-space signal as a sum of radial Gaussian-Laguerre
functions times real spherical harmonics. A signal vector sampled by a
gradient scheme is modeled as ``y = Phi @ c`` where ``Phi`` holds the basis
values at the scheme's q-points; coefficients are recovered by Tikhonov-
regularized least squares with angular and radial smoothness weights,
solved in closed form through one Cholesky factorization per scheme that
is then shared across all voxels.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .scheme import DEFAULT_TAU, q_magnitudes

DEFAULT_RADIAL_ORDER = 6
DEFAULT_ZETA = 700.0
DEFAULT_LAMBDA = 1e-8


class NumericalError(RuntimeError):
    """A linear system could not be solved (singular or indefinite)."""


class ShoreIndex(NamedTuple):
    """Basis-function index triple."""

    n: int  # radial order
    l: int  # angular order (even)
    m: int  # angular degree, -l..l


@dataclass(frozen=True)
class ShoreBasisSpec:
    """Basis configuration: truncation order, scale and penalty weights."""

    radial_order: int = DEFAULT_RADIAL_ORDER
    zeta: float = DEFAULT_ZETA
    lambda_l: float = DEFAULT_LAMBDA
    lambda_n: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.radial_order < 0 or self.radial_order % 2:
            raise ValueError("radial_order must be a non-negative even integer")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.lambda_l < 0 or self.lambda_n < 0:
            raise ValueError("regularization weights must be non-negative")


def index_count(radial_order):
    """Number of basis functions for a given even radial order."""
    if radial_order < 0 or radial_order % 2:
        raise ValueError("radial_order must be a non-negative even integer")
    f = radial_order // 2
    return (f + 1) * (f + 2) * (4 * f + 3) // 6


def index_set(radial_order):
    """Admissible (n, l, m) triples in canonical column order.

    Outer loop: even l ascending; middle: n from l to (N + l)/2;
    inner: m from -l to l.
    """
    if radial_order < 0 or radial_order % 2:
        raise ValueError("radial_order must be a non-negative even integer")
    triples = []
    for l in range(0, radial_order + 1, 2):
        for n in range(l, (radial_order + l) // 2 + 1):
            for m in range(-l, l + 1):
                triples.append(ShoreIndex(n, l, m))
    assert len(triples) == index_count(radial_order)
    return triples


def laguerre(k, alpha, x):
    """Generalized Laguerre polynomial L_k^(alpha)(x) by recurrence.

    Vectorized over ``x``; uses the stable three-term recurrence
    L_k = ((2k - 1 + alpha - x) L_{k-1} - (k - 1 + alpha) L_{k-2}) / k.
    """
    if k < 0:
        raise ValueError("polynomial degree must be >= 0")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = 1.0 + alpha - x
    for j in range(2, k + 1):
        prev, cur = cur, ((2 * j - 1 + alpha - x) * cur
                          - (j - 1 + alpha) * prev) / j
    return cur


def _legendre_pml(l, m, x):
    """Associated Legendre P_l^m(x) for m >= 0, Condon-Shortley phase.

    Upward recurrence in the degree starting from the closed-form
    sectoral value, stable for the moderate orders used here.
    """
    x = np.asarray(x, dtype=float)
    somx2 = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    pmm = np.ones_like(x)
    for i in range(1, m + 1):
        pmm = pmm * (-(2 * i - 1)) * somx2
    if l == m:
        return pmm
    pmmp1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pmmp1
    for ll in range(m + 2, l + 1):
        pmm, pmmp1 = pmmp1, (x * (2 * ll - 1) * pmmp1
                             - (ll + m - 1) * pmm) / (ll - m)
    return pmmp1


def real_sph_harm(l, m, direction):
    """Real orthonormal spherical harmonic evaluated at unit direction(s).

    Convention: m = 0 gives Y_l^0; m > 0 gives sqrt(2) (-1)^m Re(Y_l^m);
    m < 0 gives sqrt(2) (-1)^m Im(Y_l^|m|), with the complex harmonics
    carrying the Condon-Shortley phase.

    ``direction`` is a unit 3-vector or an (M, 3) stack of them.
    """
    if abs(m) > l:
        raise ValueError(f"|m| = {abs(m)} exceeds l = {l}")
    d = np.asarray(direction, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    cos_theta = np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(d[:, 1], d[:, 0])

    am = abs(m)
    lognorm = 0.5 * (math.log(2 * l + 1) - math.log(4 * math.pi)
                     + math.lgamma(l - am + 1) - math.lgamma(l + am + 1))
    plm = _legendre_pml(l, am, cos_theta) * math.exp(lognorm)
    if m == 0:
        out = plm
    elif m > 0:
        out = math.sqrt(2.0) * (-1) ** m * plm * np.cos(m * phi)
    else:
        out = math.sqrt(2.0) * (-1) ** am * plm * np.sin(am * phi)
    return out[0] if single else out


@dataclass(frozen=True)
class DesignMatrix:
    """Basis dictionary evaluated at a scheme's q-points."""

    values: np.ndarray          # (M, K)
    index_set: tuple            # K ShoreIndex triples in column order
    scheme_fingerprint: int

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_coefficients(self):
        return self.values.shape[1]


def _radial_norm(n, l, zeta):
    # sqrt(2 (n-l)! / (zeta^(3/2) Gamma(n + 3/2))), through log-gamma so
    # that factorials stay finite for any supported order.
    return math.sqrt(2.0) * math.exp(
        0.5 * (math.lgamma(n - l + 1) - math.lgamma(n + 1.5))) / zeta ** 0.75


def design_matrix(scheme, spec):
    """Evaluate the basis dictionary for every entry of a gradient scheme.

    Entry (i, j) is
    ``kappa(zeta, n, l) (q_i^2/zeta)^(l/2) exp(-q_i^2/(2 zeta))
    L_{n-l}^{l+1/2}(q_i^2/zeta) Y_l^m(u_i)``
    for the j-th index triple (n, l, m). Rows at q = 0 therefore activate
    only the l = 0 columns.
    """
    q = q_magnitudes(scheme, spec.tau)
    u = scheme.bvecs
    x = q * q / spec.zeta
    gauss = np.exp(-0.5 * x)
    triples = index_set(spec.radial_order)

    values = np.empty((len(scheme), len(triples)))
    sh_cache = {}
    for j, (n, l, m) in enumerate(triples):
        key = (l, m)
        if key not in sh_cache:
            sh_cache[key] = real_sph_harm(l, m, u)
        radial = _radial_norm(n, l, spec.zeta) * x ** (l / 2) * gauss \
            * laguerre(n - l, l + 0.5, x)
        values[:, j] = radial * sh_cache[key]
    values.flags.writeable = False
    return DesignMatrix(values, tuple(triples), scheme.fingerprint())


@dataclass(frozen=True)
class RegularizerSpec:
    """Diagonal smoothness penalties aligned with a design's columns."""

    l_diag: np.ndarray  # l (l + 1) per column
    n_diag: np.ndarray  # n (n + 1) per column


def regularizer(triples):
    """Build the angular/radial penalty diagonals for an index set."""
    l_diag = np.array([l * (l + 1.0) for (_, l, _) in triples])
    n_diag = np.array([n * (n + 1.0) for (n, _, _) in triples])
    for arr in (l_diag, n_diag):
        arr.flags.writeable = False
    return RegularizerSpec(l_diag, n_diag)


class CoefficientSolver:
    """Closed-form ridge solver with a cached SPD factorization.

    Solves ``(Phi^T Phi + lambda_l L^T L + lambda_n N^T N) c = Phi^T y``
    where L and N are the diagonal penalty matrices. The factorization is
    computed once per (design, lambdas) pair; ``fit`` is pure and may be
    called concurrently from any number of workers.
    """

    def __init__(self, design, reg, lambda_l=DEFAULT_LAMBDA,
                 lambda_n=DEFAULT_LAMBDA):
        phi = design.values
        a = phi.T @ phi
        a[np.diag_indices_from(a)] += (lambda_l * reg.l_diag ** 2
                                       + lambda_n * reg.n_diag ** 2)
        try:
            self._factor = cho_factor(a, lower=True)
        except LinAlgError as exc:
            raise NumericalError(
                "singular system: the dictionary is rank deficient and the "
                "regularization weights do not make it positive definite"
            ) from exc
        self.design = design
        self.lambda_l = float(lambda_l)
        self.lambda_n = float(lambda_n)

    def fit(self, signals):
        """Coefficients for one signal vector (M,) or a stack (V, M)."""
        y = np.asarray(signals, dtype=float)
        single = y.ndim == 1
        y = np.atleast_2d(y)
        if y.shape[1] != self.design.n_samples:
            raise ValueError(
                f"signal length {y.shape[1]} does not match design rows "
                f"{self.design.n_samples}")
        coeffs = cho_solve(self._factor, self.design.values.T @ y.T).T
        return coeffs[0] if single else coeffs


def fit_coefficients(design, reg, lambda_l, lambda_n, signal):
    """One-shot closed-form fit of basis coefficients for a signal vector.

    Prefer constructing a CoefficientSolver when fitting many voxels with
    the same design: the factorization is then reused.
    """
    return CoefficientSolver(design, reg, lambda_l, lambda_n).fit(signal)


def interpolate(coeffs, target_design):
    """Evaluate fitted coefficients on another scheme's dictionary.

    Plain matrix-vector (or matrix-matrix for stacked coefficient rows)
    product; no clamping is applied.
    """
    c = np.asarray(coeffs, dtype=float)
    k = target_design.n_coefficients
    if c.shape[-1] != k:
        raise ValueError(
            f"coefficient length {c.shape[-1]} does not match design "
            f"columns {k}")
    return c @ target_design.values.T


def format_index_sidecar(triples):
    """Text listing of index triples in column order (one 'n l m' per line)."""
    lines = ["# columns: n l m"]
    lines += [f"{n} {l} {m}" for (n, l, m) in triples]
    return "\n".join(lines) + "\n"


def parse_index_sidecar(text):
    triples = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        n, l, m = (int(t) for t in line.split())
        triples.append(ShoreIndex(n, l, m))
    return triples
