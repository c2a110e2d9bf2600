"""Masked error metrics and paired comparisons between estimators.

The paired t-test evaluates two-sided p-values through the regularized
incomplete beta function, implemented here with the standard continued
fraction so the toolkit carries no statistics dependency.
"""

import math
import warnings

import numpy as np

from .niftio import require_binary_mask

_MAX_CF_ITER = 300
_CF_EPS = 1e-15
_CF_TINY = 1e-300


def mean_abs_error(estimate, gold, mask):
    """Mean absolute difference over masked voxels."""
    est = np.asarray(estimate.data if hasattr(estimate, "data") else estimate,
                     dtype=float)
    ref = np.asarray(gold.data if hasattr(gold, "data") else gold,
                     dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    m = require_binary_mask(mask)
    if m.shape != est.shape:
        raise ValueError(f"mask shape {m.shape} does not match {est.shape}")
    if not np.any(m):
        raise ValueError("empty mask")
    return float(np.mean(np.abs(est[m] - ref[m])))


def _betacf(a, b, x):
    # Lentz continued fraction for the incomplete beta function.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_reg(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, dof):
    """Cumulative distribution of Student's t with ``dof`` degrees."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = dof / (dof + t * t)
    tail = 0.5 * betainc_reg(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def paired_t_test(errors_a, errors_b):
    """Two-sided paired Student's t-test on matched error lists.

    Returns (t, p) for the differences a - b with the sample standard
    deviation (n - 1 denominator). Raises when fewer than two pairs are
    given or when the differences have zero variance.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and equally long")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise ValueError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = 2.0 * (1.0 - t_cdf(abs(t), n - 1))
    return t, float(min(max(p, 0.0), 1.0))


def summarize(per_subject_errors):
    """Mean and sample standard deviation per (measure, method) column.

    ``per_subject_errors`` maps a column key to its list of per-subject
    errors. A single-subject column gets sd 0 with a warning.
    """
    if not per_subject_errors:
        raise ValueError("empty error table")
    out = {}
    for key, values in per_subject_errors.items():
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise ValueError(f"no entries for {key!r}")
        if arr.size == 1:
            warnings.warn(f"single subject for {key!r}: reporting sd 0",
                          stacklevel=2)
            out[key] = (float(arr[0]), 0.0)
        else:
            out[key] = (float(arr.mean()), float(arr.std(ddof=1)))
    return out


def write_table(path, columns, rows):
    """Tab-separated table with a header line."""
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(
                f"{v:.9g}" if isinstance(v, float) else str(v)
                for v in row) + "\n")


def write_summary(path, mapping):
    """Machine-readable key = value summary file."""
    with open(path, "w") as fh:
        for key in sorted(mapping):
            value = mapping[key]
            if isinstance(value, float):
                fh.write(f"{key} = {value:.9g}\n")
            else:
                fh.write(f"{key} = {value}\n")


def read_summary(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
