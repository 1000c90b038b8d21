"""Divergence-free Fourier fields on the 2pi-periodic torus.

Conventions used throughout the package:

* fields live on [0, 2pi)^2 with zero spatial mean; a velocity field is
  u(x) = sum_k uhat(k) e^{i k.x} over integer wavevectors k != 0 with
  uhat(-k) = conj(uhat(k)) (real field) and k.uhat(k) = 0 (divergence-free);
* the Stokes operator is diagonal here: A uhat(k) = |k|^2 uhat(k), so the
  spectrum is the sorted sequence of |k|^2 over retained modes and the
  smallest eigenvalue on the torus is exactly 1;
* norms carry the (2pi)^2 Parseval factor so that discrete norms equal the
  continuum integrals exactly for band-limited fields:
      |u|_H^2 = (2pi)^2 sum_k |uhat(k)|^2,
      |u|_V^2 = (2pi)^2 sum_k |k|^2 |uhat(k)|^2.

Coefficients are stored as complex arrays of shape (..., M, 2): M modes in
spectrum order, 2 velocity components.  Leading axes batch independent
fields (ensemble members) through the same kernels.
"""

import numpy as np
import scipy.fft as sfft

from .errors import InvalidParameterError, ShapeMismatchError
from .runtime import get_num_threads

TWO_PI = 2.0 * np.pi
PARSEVAL = TWO_PI**2


def build_basis(k_max):
    """Enumerate the retained wavevectors 0 < |k|^2 <= k_max^2.

    Modes are sorted by eigenvalue |k|^2 with lexicographic (k1, k2)
    tie-break, which makes the spectral projections P_m deterministic
    inside eigenvalue multiplicities.
    """
    if int(k_max) != k_max or k_max < 1:
        raise InvalidParameterError(f"k_max must be an integer >= 1, got {k_max}")
    return StokesSpectrum(int(k_max))


class StokesSpectrum:
    """Retained Fourier modes and everything derived from them.

    Instances are immutable after construction and cache the FFT scatter
    and gather index maps per physical grid size.  All transform scratch
    arrays are per-call, so a spectrum is safe to share across threads.
    """

    def __init__(self, k_max):
        self.k_max = k_max
        ks = np.arange(-k_max, k_max + 1)
        k1g, k2g = np.meshgrid(ks, ks, indexing="ij")
        k1 = k1g.ravel()
        k2 = k2g.ravel()
        lam = (k1**2 + k2**2).astype(np.int64)
        keep = (lam > 0) & (lam <= k_max * k_max)
        k1, k2, lam = k1[keep], k2[keep], lam[keep]
        order = np.lexsort((k2, k1, lam))
        self.modes = np.stack([k1[order], k2[order]], axis=1).astype(np.int64)
        self.eigenvalues = lam[order].astype(np.float64)
        self.lambda1 = float(self.eigenvalues[0])
        self.mode_count = self.modes.shape[0]

        self._index = {(int(a), int(b)): i for i, (a, b) in enumerate(self.modes)}
        self.conj_index = np.array(
            [self._index[(-int(a), -int(b))] for a, b in self.modes], dtype=np.int64
        )
        m1 = self.modes[:, 0]
        m2 = self.modes[:, 1]
        # one representative per Hermitian pair: k1 > 0, or k1 == 0 and k2 > 0
        self.canonical = (m1 > 0) | ((m1 == 0) & (m2 > 0))
        self.canonical_index = np.nonzero(self.canonical)[0]
        # unit divergence-free direction e(k) = (-k2, k1)/|k|
        kn = np.sqrt(self.eigenvalues)
        self.unit_tangent = np.stack([-m2 / kn, m1 / kn], axis=1)

        self._grids = {}

    # -- grids ----------------------------------------------------------

    @property
    def grid_size(self):
        """Default collocation grid, enough to hold the truncation."""
        return sfft.next_fast_len(2 * self.k_max + 1)

    def product_grid(self):
        """Grid for quadratic products: alias-free retention at k_max."""
        return sfft.next_fast_len(3 * self.k_max + 1)

    def damping_grid(self, r):
        """Grid for |u|^(r-1) u.

        At least twice the collocation resolution; exact for odd integer r
        (the damping is then polynomial of degree r).  For other r exact
        dealiasing is impossible and the residual aliasing is accepted,
        quantified in tests by resolution doubling.
        """
        n = 4 * self.k_max + 2
        if abs(r - round(r)) < 1e-12 and int(round(r)) % 2 == 1:
            n = max(n, (int(round(r)) + 1) * self.k_max + 1)
        return sfft.next_fast_len(n)

    def quadrature_grid(self, p):
        """Grid on which the trapezoid rule integrates |u|^p adequately."""
        return sfft.next_fast_len(max(int(np.ceil(p)) * self.k_max + 1, 2 * self.k_max + 1))

    def _grid(self, n):
        if n not in self._grids:
            if n < 2 * self.k_max + 1:
                raise InvalidParameterError(f"grid {n} cannot hold modes up to k_max={self.k_max}")
            ix = np.mod(self.modes[:, 0], n)
            iy = np.mod(self.modes[:, 1], n)
            kk = sfft.fftfreq(n, d=1.0 / n)
            kxg = np.broadcast_to(kk[None, :], (n, n))
            kyg = np.broadcast_to(kk[:, None], (n, n))
            self._grids[n] = (ix, iy, 1j * kxg, 1j * kyg)
        return self._grids[n]

    # -- transforms ------------------------------------------------------

    def to_grid(self, coeffs, n):
        """Scatter (..., M, 2) coefficients onto a (..., 2, n, n) spectral grid."""
        ix, iy, _, _ = self._grid(n)
        out = np.zeros(coeffs.shape[:-2] + (2, n, n), dtype=np.complex128)
        out[..., 0, iy, ix] = coeffs[..., :, 0]
        out[..., 1, iy, ix] = coeffs[..., :, 1]
        return out

    def to_physical(self, coeffs, n=None):
        """Collocation samples (..., 2, n, n); real part of the Fourier sum."""
        n = n or self.grid_size
        grid = self.to_grid(coeffs, n)
        return sfft.ifft2(grid, axes=(-2, -1), norm="forward", workers=get_num_threads()).real

    def from_physical(self, phys, n=None):
        """Gather (..., 2, n, n) samples back to ball coefficients.

        Modes outside the retained ball are dropped, which doubles as the
        2/3-rule dealias step whenever n >= 3*k_max + 1.
        """
        n = n or phys.shape[-1]
        ix, iy, _, _ = self._grid(n)
        ghat = sfft.fft2(phys, axes=(-2, -1), norm="forward", workers=get_num_threads())
        out = np.empty(phys.shape[:-3] + (self.mode_count, 2), dtype=np.complex128)
        out[..., :, 0] = ghat[..., 0, iy, ix]
        out[..., :, 1] = ghat[..., 1, iy, ix]
        return out

    # -- helpers ---------------------------------------------------------

    def index_of(self, k):
        return self._index[(int(k[0]), int(k[1]))]

    def compatible(self, other):
        return self is other or self.k_max == other.k_max

    def assemble(self, scalar):
        """Expand canonical scalar amplitudes (..., Mc) to full (..., M, 2) coefficients.

        Each canonical mode k carries amplitude c along the unit tangent
        e(k); the -k coefficient is set to the Hermitian conjugate.
        """
        ci = self.canonical_index
        out = np.zeros(scalar.shape[:-1] + (self.mode_count, 2), dtype=np.complex128)
        out[..., ci, :] = scalar[..., :, None] * self.unit_tangent[ci]
        cj = self.conj_index[ci]
        out[..., cj, :] = np.conj(out[..., ci, :])
        return out


# -- fields ---------------------------------------------------------------


class SpectralVelocityField:
    """A divergence-free, zero-mean velocity field in coefficient form."""

    __slots__ = ("spectrum", "coeffs")

    def __init__(self, spectrum, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (spectrum.mode_count, 2):
            raise ShapeMismatchError(
                f"coefficient shape {coeffs.shape} does not match spectrum "
                f"({spectrum.mode_count} modes)"
            )
        self.spectrum = spectrum
        self.coeffs = coeffs

    @property
    def k_max(self):
        return self.spectrum.k_max

    @property
    def grid_size(self):
        return self.spectrum.grid_size

    def copy(self):
        return SpectralVelocityField(self.spectrum, self.coeffs.copy())

    def get(self, k):
        """Coefficient at wavevector k as a complex 2-vector."""
        return self.coeffs[self.spectrum.index_of(k)].copy()

    def hermitian_defect(self):
        """max |uhat(-k) - conj(uhat(k))|, zero for real-valued fields."""
        return float(np.max(np.abs(self.coeffs[self.spectrum.conj_index] - np.conj(self.coeffs))))

    def divergence_defect(self):
        """max |k.uhat(k)| relative to |uhat(k)|."""
        kdot = np.abs(
            self.spectrum.modes[:, 0] * self.coeffs[:, 0]
            + self.spectrum.modes[:, 1] * self.coeffs[:, 1]
        )
        mag = np.abs(self.coeffs).sum(axis=1)
        scale = np.maximum(mag * np.sqrt(self.spectrum.eigenvalues), 1e-300)
        return float(np.max(kdot / scale))

    # small arithmetic surface for tests and ensemble assembly
    def __add__(self, other):
        self._check(other)
        return SpectralVelocityField(self.spectrum, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralVelocityField(self.spectrum, self.coeffs - other.coeffs)

    def __rmul__(self, scalar):
        return SpectralVelocityField(self.spectrum, scalar * self.coeffs)

    __mul__ = __rmul__

    def _check(self, other):
        if not self.spectrum.compatible(other.spectrum):
            raise ShapeMismatchError(
                f"k_max mismatch: {self.k_max} vs {other.k_max}"
            )


class PhysicalVelocityField:
    """Velocity samples at the n x n collocation points of [0, 2pi)^2."""

    __slots__ = ("samples",)

    def __init__(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[2] != 2 or samples.shape[0] != samples.shape[1]:
            raise ShapeMismatchError(f"expected (n, n, 2) samples, got {samples.shape}")
        self.samples = samples

    @property
    def grid_size(self):
        return self.samples.shape[0]


def to_physical_field(u, n=None):
    """Evaluate a spectral field at collocation points."""
    phys = u.spectrum.to_physical(u.coeffs, n)
    return PhysicalVelocityField(np.moveaxis(phys, 0, -1))


def from_physical_field(p, spectrum):
    """Project collocation samples back onto the retained modes."""
    phys = np.moveaxis(p.samples, -1, 0)
    return SpectralVelocityField(spectrum, spectrum.from_physical(phys, p.grid_size))


def zero_field(spectrum):
    return SpectralVelocityField(spectrum, np.zeros((spectrum.mode_count, 2), np.complex128))


# -- Leray projection and the Stokes operator ------------------------------


def leray_coeffs(spectrum, coeffs):
    """uhat - k (k.uhat)/|k|^2, batched over leading axes."""
    k = spectrum.modes.astype(np.float64)
    kdot = coeffs[..., :, 0] * k[:, 0] + coeffs[..., :, 1] * k[:, 1]
    frac = kdot / spectrum.eigenvalues
    out = coeffs.copy()
    out[..., :, 0] -= frac * k[:, 0]
    out[..., :, 1] -= frac * k[:, 1]
    return out


def leray_project(raw, spectrum=None):
    """Helmholtz-Hodge projection onto divergence-free fields.

    Accepts a {(k1, k2): (c1, c2)} map (missing modes are zero), a raw
    (M, 2) coefficient array, or a field.  The input is assumed
    Hermitian-symmetric; the projection preserves that symmetry.
    """
    if isinstance(raw, SpectralVelocityField):
        return SpectralVelocityField(raw.spectrum, leray_coeffs(raw.spectrum, raw.coeffs))
    if isinstance(raw, dict):
        if spectrum is None:
            raise InvalidParameterError("a spectrum is required with a coefficient map")
        coeffs = np.zeros((spectrum.mode_count, 2), dtype=np.complex128)
        for k, c in raw.items():
            coeffs[spectrum.index_of(k)] = np.asarray(c, dtype=np.complex128)
    else:
        if spectrum is None:
            raise InvalidParameterError("a spectrum is required with a coefficient array")
        coeffs = np.asarray(raw, dtype=np.complex128)
    return SpectralVelocityField(spectrum, leray_coeffs(spectrum, coeffs))


def apply_A(u):
    """Stokes operator: multiply each coefficient by its eigenvalue |k|^2."""
    return SpectralVelocityField(u.spectrum, u.coeffs * u.spectrum.eigenvalues[:, None])


# -- norms -----------------------------------------------------------------


def norm_h_sq(spectrum, coeffs):
    return PARSEVAL * np.sum(np.abs(coeffs) ** 2, axis=(-2, -1))


def norm_v_sq(spectrum, coeffs):
    w = np.sum(np.abs(coeffs) ** 2, axis=-1) * spectrum.eigenvalues
    return PARSEVAL * np.sum(w, axis=-1)


def norm_a_sq(spectrum, coeffs):
    """|A u|_H^2, the D(A) seminorm."""
    w = np.sum(np.abs(coeffs) ** 2, axis=-1) * spectrum.eigenvalues**2
    return PARSEVAL * np.sum(w, axis=-1)


def norm_h(u):
    return float(np.sqrt(norm_h_sq(u.spectrum, u.coeffs)))


def norm_v(u):
    return float(np.sqrt(norm_v_sq(u.spectrum, u.coeffs)))


def norm_lp_pow(spectrum, coeffs, p, n=None):
    """integral of |u|^p over the torus, batched; trapezoid on an anti-aliased grid."""
    if p < 2:
        raise InvalidParameterError(f"norm_lp requires p >= 2, got {p}")
    n = n or spectrum.quadrature_grid(p)
    phys = spectrum.to_physical(coeffs, n)
    mag2 = phys[..., 0, :, :] ** 2 + phys[..., 1, :, :] ** 2
    return (TWO_PI / n) ** 2 * np.sum(mag2 ** (p / 2.0), axis=(-2, -1))


def norm_lp(u, p):
    """L^p norm by spectral quadrature (exact for even integer p)."""
    return float(norm_lp_pow(u.spectrum, u.coeffs, p) ** (1.0 / p))


# -- spectral projections --------------------------------------------------


def project_pm(u, m):
    """Keep the first m modes in spectrum order (Q_m is the complement).

    Note that m may split a Hermitian pair inside an eigenvalue
    multiplicity; the projection is still well defined on coefficients
    (and exactly orthogonal), the projected field is just no longer
    real-valued in that case.
    """
    _check_m(u, m)
    out = np.zeros_like(u.coeffs)
    out[:m] = u.coeffs[:m]
    return SpectralVelocityField(u.spectrum, out)


def project_qm(u, m):
    _check_m(u, m)
    out = u.coeffs.copy()
    out[:m] = 0.0
    return SpectralVelocityField(u.spectrum, out)


def _check_m(u, m):
    if int(m) != m or m < 0 or m > u.spectrum.mode_count:
        raise InvalidParameterError(
            f"m must be in [0, {u.spectrum.mode_count}], got {m}"
        )


def eigenvalue_cutoffs(spectrum):
    """Mode counts at which the eigenvalue changes: the m values for which
    P_m spans complete eigenspaces (and never splits a Hermitian pair)."""
    lam = spectrum.eigenvalues
    ms = np.nonzero(np.diff(lam) > 0)[0] + 1
    return [int(m) for m in ms] + [spectrum.mode_count]


# -- random fields ---------------------------------------------------------


def random_field(spectrum, seed, decay=1.0, norm="h", target=None):
    """Reproducible random divergence-free field.

    Canonical amplitudes are complex Gaussians damped by lambda^(-decay/2),
    Hermitian-paired along the tangent directions.  When target is given
    the field is rescaled to that norm ("h" or "v").
    """
    rng = np.random.default_rng(seed)
    mc = len(spectrum.canonical_index)
    lam_c = spectrum.eigenvalues[spectrum.canonical_index]
    scale = lam_c ** (-decay / 2.0)
    zc = (rng.standard_normal(mc) + 1j * rng.standard_normal(mc)) * scale / np.sqrt(2.0)
    coeffs = spectrum.assemble(zc)
    u = SpectralVelocityField(spectrum, coeffs)
    if target is not None:
        cur = norm_h(u) if norm == "h" else norm_v(u)
        if cur == 0.0:
            raise InvalidParameterError("cannot rescale the zero field")
        u = (target / cur) * u
    return u
