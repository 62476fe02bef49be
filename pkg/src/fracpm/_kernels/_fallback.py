"""Pure numpy implementation of the hot per-element kernels."""

import numpy as np

from ..cutoffs import CutoffParams, theta_tilde_entries


def element_convection(triangles, B, grad_basis, area, AK, rho, c, delta, L):
    """Per-element contributions |K| (Theta A grad c) . grad phi_j, shape (M_h, 3)."""
    p = CutoffParams(delta, L)
    r = rho[triangles]
    grad_c = np.einsum("kja,kj->ka", grad_basis, c[triangles])
    flux = np.einsum("kab,kb->ka", AK, grad_c)
    # Theta = B^{-T} diag(tt) B^T; rows 1, 2 of grad_basis are the rows of B^{-1}
    v = np.einsum("kba,kb->ka", B, flux)
    v *= theta_tilde_entries(r[:, :1], r[:, 1:], p)
    flux = grad_basis[:, 1] * v[:, :1] + grad_basis[:, 2] * v[:, 1:]
    return area[:, None] * np.einsum("kja,ka->kj", grad_basis, flux)


def convection_rhs(triangles, B, grad_basis, area, AK, rho, c, delta, L, num_threads=1):
    contrib = element_convection(triangles, B, grad_basis, area, AK, rho, c, delta, L)
    return np.bincount(triangles.ravel(), weights=contrib.ravel(), minlength=rho.shape[0])
