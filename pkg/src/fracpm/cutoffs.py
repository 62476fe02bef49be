"""Cut-off functions, the regularised entropy and the element matrix Theta.

All scalar functions accept floats or numpy arrays.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import ElementGeometry

# relative threshold below which two nodal values are treated as equal
EQUAL_TOL = 1e-12


@dataclass(frozen=True)
class CutoffParams:
    delta: float
    L: float

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0 < self.L < np.inf):
            raise ValueError(
                f"cut-offs need 0 < delta < 1 < L < inf, got delta={self.delta}, L={self.L}")


@dataclass(frozen=True)
class ThetaElement:
    theta_tilde: np.ndarray  # (2,)
    theta: np.ndarray        # (2, 2)


def beta_delta_L(s, p: CutoffParams):
    return np.clip(s, p.delta, p.L)


def beta_L(s, L):
    return np.minimum(s, L)


def entropy_G(s):
    """s (log s - 1) + 1 for s > 0, with G(0) = 1."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("entropy_G is defined for s >= 0 only")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, s * (np.log(np.where(s > 0, s, 1.0)) - 1.0) + 1.0, 1.0)
    return out[()] if out.ndim == 0 else out


def entropy_G_reg(s, p: CutoffParams):
    s = np.asarray(s, dtype=float)
    d, L = p.delta, p.L
    mid = np.clip(s, d, L)
    out = np.where(
        s <= d, (s * s - d * d) / (2 * d) + (np.log(d) - 1.0) * s + 1.0,
        np.where(s >= L, (s * s - L * L) / (2 * L) + (np.log(L) - 1.0) * s + 1.0,
                 mid * (np.log(mid) - 1.0) + 1.0))
    return out[()] if out.ndim == 0 else out


def dG_reg(s, p: CutoffParams):
    s = np.asarray(s, dtype=float)
    d, L = p.delta, p.L
    out = np.where(s <= d, s / d + np.log(d) - 1.0,
                   np.where(s >= L, s / L + np.log(L) - 1.0, np.log(np.clip(s, d, L))))
    return out[()] if out.ndim == 0 else out


def ddG_reg(s, p: CutoffParams):
    return 1.0 / beta_delta_L(s, p)


def dG_reg_increment(a, b, p: CutoffParams):
    """dG_reg(b) - dG_reg(a) for a <= b, summed branch by branch.

    Each branch contributes a nonnegative term, so there is no cancellation
    when a and b are close.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d, L = p.delta, p.L
    low = (np.minimum(b, d) - np.minimum(a, d)) / d
    high = (np.maximum(b, L) - np.maximum(a, L)) / L
    lo = np.clip(a, d, L)
    hi = np.clip(b, d, L)
    mid = np.log1p((hi - lo) / lo)
    return low + mid + high


def theta_tilde_entries(phi0, phij, p: CutoffParams):
    """Difference quotients (phi_j - phi_0) / (dG_reg(phi_j) - dG_reg(phi_0)).

    Falls back to beta_delta_L(phi_j) when the two values coincide up to
    ``EQUAL_TOL`` relative.  Vectorised over any broadcastable shapes.
    """
    phi0 = np.asarray(phi0, dtype=float)
    phij = np.asarray(phij, dtype=float)
    lo = np.minimum(phi0, phij)
    hi = np.maximum(phi0, phij)
    diff = hi - lo
    scale = np.maximum(1.0, np.maximum(np.abs(phi0), np.abs(phij)))
    equal = diff <= EQUAL_TOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        q = diff / dG_reg_increment(lo, hi, p)
    out = np.where(equal, beta_delta_L(phij, p), q)
    # the exact quotient is a weighted harmonic mean of beta over [lo, hi]
    out = np.clip(out, p.delta, p.L)
    return out[()] if out.ndim == 0 else out


def theta_element(phi_local, geo: ElementGeometry, p: CutoffParams) -> ThetaElement:
    phi = np.asarray(phi_local, dtype=float)
    if phi.shape != (3,) or not np.all(np.isfinite(phi)):
        raise ValueError("phi_local must be three finite nodal values")
    tt = theta_tilde_entries(phi[0], phi[1:], p)
    BT = geo.B.T
    theta = np.linalg.solve(BT, np.diag(tt) @ BT)
    return ThetaElement(np.asarray(tt), theta)


def p1_gradient(values_local, geo: ElementGeometry):
    """Gradient of the affine interpolant of three nodal values."""
    return geo.grad_basis.T @ np.asarray(values_local, dtype=float)
