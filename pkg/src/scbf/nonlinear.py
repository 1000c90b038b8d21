"""Convective and damping nonlinearities, evaluated pseudospectrally.

Products are formed on physical grids large enough that truncating back
to the retained ball is alias-free for the quadratic convection
(2/3-rule equivalent at n >= 3 k_max + 1) and for odd-integer damping
exponents; other exponents carry a small residual aliasing that the
tests quantify by resolution doubling.
"""

import numpy as np
import scipy.fft as sfft

from .errors import InvalidParameterError, ShapeMismatchError
from .runtime import get_num_threads
from .spectral import SpectralVelocityField, TWO_PI, leray_coeffs


def _check_pair(u, v):
    if not u.spectrum.compatible(v.spectrum):
        raise ShapeMismatchError(f"k_max mismatch: {u.k_max} vs {v.k_max}")


def _advect(spectrum, ucoef, vcoef, n):
    """Physical-space (u . grad) v on an n x n grid, batched.

    Returns (phys_u, conv) where conv has shape (..., 2, n, n).
    """
    ix, iy, ikx, iky = spectrum._grid(n)
    gu = spectrum.to_grid(ucoef, n)
    gv = gu if vcoef is ucoef else spectrum.to_grid(vcoef, n)
    stack = np.concatenate([gu, ikx * gv, iky * gv], axis=-3)
    phys = sfft.ifft2(stack, axes=(-2, -1), norm="forward", workers=get_num_threads()).real
    up = phys[..., 0:2, :, :]
    dvx = phys[..., 2:4, :, :]
    dvy = phys[..., 4:6, :, :]
    conv = up[..., 0:1, :, :] * dvx + up[..., 1:2, :, :] * dvy
    return up, conv


def convective_coeffs(spectrum, ucoef, vcoef):
    """Leray-projected, dealiased (u . grad) v in coefficient form (batched)."""
    n = spectrum.product_grid()
    _, conv = _advect(spectrum, ucoef, vcoef, n)
    return leray_coeffs(spectrum, spectrum.from_physical(conv, n))


def convective_term(u, v=None):
    """B(u, v) = P_H (u . grad) v; B(u) = B(u, u) when v is omitted."""
    if v is None:
        v = u
    _check_pair(u, v)
    vcoef = u.coeffs if v is u else v.coeffs
    return SpectralVelocityField(u.spectrum, convective_coeffs(u.spectrum, u.coeffs, vcoef))


def trilinear(u, v, w):
    """b(u, v, w) = <(u . grad) v, w>, by alias-free quadrature."""
    _check_pair(u, v)
    _check_pair(u, w)
    spectrum = u.spectrum
    n = spectrum.product_grid()
    _, conv = _advect(spectrum, u.coeffs, v.coeffs, n)
    wp = sfft.ifft2(
        spectrum.to_grid(w.coeffs, n), axes=(-2, -1), norm="forward",
        workers=get_num_threads(),
    ).real
    return float((TWO_PI / n) ** 2 * np.sum(conv * wp))


def damping_coeffs(spectrum, coeffs, r, with_lr1=False):
    """P_H |u|^(r-1) u truncated to the ball, batched.

    With with_lr1 the quadrature of |u|^(r+1) on the same refined grid is
    returned as well (the damping dissipation <C(u), u> integrand).
    """
    n = spectrum.damping_grid(r)
    phys = spectrum.to_physical(coeffs, n)
    mag2 = phys[..., 0, :, :] ** 2 + phys[..., 1, :, :] ** 2
    if r == 1.0:
        out = phys
    else:
        # (r-1)/2 > 0, so 0**power = 0 and the zero set needs no guard
        out = (mag2 ** ((r - 1.0) / 2.0))[..., None, :, :] * phys
    damped = leray_coeffs(spectrum, spectrum.from_physical(out, n))
    if not with_lr1:
        return damped
    lr1 = (TWO_PI / n) ** 2 * np.sum(mag2 ** ((r + 1.0) / 2.0), axis=(-2, -1))
    return damped, lr1


def damping_term(u, r):
    """C(u) = P_H(|u|^(r-1) u) for absorption exponent r >= 1."""
    if r < 1:
        raise InvalidParameterError(f"damping exponent must satisfy r >= 1, got {r}")
    return SpectralVelocityField(u.spectrum, damping_coeffs(u.spectrum, u.coeffs, float(r)))
