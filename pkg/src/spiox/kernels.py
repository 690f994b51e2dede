"""Matern correlation functions with optional nugget, and matrix builders.

The correlation at distance d is

    M(d) = 2^(1-nu) / Gamma(nu) * (phi d)^nu * K_nu(phi d),

normalized so M(0) = 1, with the nugget tau2 added only at exactly zero
distance: rho(l, l') = M(||l - l'||) + tau2 * 1{l = l'}. The diagonal of a
correlation matrix over one set is therefore 1 + tau2.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import ValidationError

# distances below this are treated as zero to dodge the K_nu(0) singularity
DIST_FLOOR = 1e-14


@dataclass(frozen=True)
class KernelParams:
    """Per-outcome Matern parameters: decay phi (> 0, inverse range),
    smoothness nu (> 0), nugget variance tau2 (>= 0, relative to unit sill)."""

    phi: float
    nu: float
    tau2: float = 0.0

    def __post_init__(self):
        for name in ("phi", "nu", "tau2"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v}")
        if self.phi <= 0:
            raise ValidationError(f"phi must be > 0, got {self.phi}")
        if self.nu <= 0:
            raise ValidationError(f"nu must be > 0, got {self.nu}")
        if self.tau2 < 0:
            raise ValidationError(f"tau2 must be >= 0, got {self.tau2}")


def _matern_halfint(x, nu):
    """Closed forms for nu in {1/2, 3/2, 5/2}; x = phi * dist, elementwise."""
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    raise ValueError(f"no closed form for nu={nu}")


def _matern_bessel(x, nu):
    """General-nu evaluation via the modified Bessel function K_nu."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    tiny = x < DIST_FLOOR
    out[tiny] = 1.0
    xt = x[~tiny]
    c = 2.0 ** (1.0 - nu) / gamma_fn(nu)
    with np.errstate(over="ignore"):
        val = c * xt ** nu * kv(nu, xt)
    # kv underflows to 0 for large argument; the product is then correctly 0
    out[~tiny] = np.clip(val, 0.0, 1.0)
    return out


def matern_correlation(dist, phi, nu):
    """Nugget-free Matern correlation of distances (scalar or array)."""
    x = phi * np.asarray(dist, dtype=float)
    if abs(nu - 0.5) < 1e-12:
        return _matern_halfint(x, 0.5)
    if abs(nu - 1.5) < 1e-12:
        return _matern_halfint(x, 1.5)
    if abs(nu - 2.5) < 1e-12:
        return _matern_halfint(x, 2.5)
    return _matern_bessel(x, nu)


def matern(dist, p):
    """Matern correlation value(s) of ``dist`` under params ``p``, nugget included
    at exactly zero distance. Rejects negative or non-finite distances."""
    d = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distances must be finite and >= 0")
    val = matern_correlation(np.where(d < DIST_FLOOR, 0.0, d), p.phi, p.nu)
    if p.tau2 > 0:
        val = val + np.where(d == 0.0, p.tau2, 0.0)
    if np.ndim(dist) == 0:
        return float(val)
    return val


def corr_matrix(A, B, p):
    """The n_A x n_B matrix with (i, j) entry matern(||a_i - b_j||, p).

    When A and B are the same object the result is exactly symmetric with
    diagonal 1 + tau2.
    """
    same = A is B
    D = cdist(A.coords, B.coords)
    if same:
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
    M = matern(D, p)
    if same:
        M = 0.5 * (M + M.T)
        np.fill_diagonal(M, 1.0 + p.tau2)
    return M
