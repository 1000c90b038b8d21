"""Two-sided Wiener increments on the retained modes and the stationary
Ornstein-Uhlenbeck process z solving dz + (mu A + alpha I) z dt = dW.

Noise covariance is diagonal in the eigenbasis with per-mode intensity
sigma_k = amplitude * lambda_k^(-decay_exponent); decay_exponent > 1 is the
discrete stand-in for the trace-class requirement and keeps every moment
sum finite at any truncation.

Randomness is counter-based: each Hermitian mode pair owns two Philox
streams keyed by (seed, tag, k1, k2) -- one for per-step Wiener increments,
one for stationary initial draws -- and step j of a stream occupies Philox
counter block j + OFFSET.  Consequences used throughout the toolkit:

* paths are bit-reproducible from (seed, t0, dt, k_max);
* growing k_max leaves the draws of existing modes unchanged;
* increments are indexed by absolute step (t = j dt, j possibly negative),
  so deepening a pullback horizon replays the same noise on [s, 0];
* ensemble members with distinct seeds generate concurrently with no
  shared mutable state.
"""

import numpy as np
from dataclasses import dataclass
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

from .errors import InvalidParameterError
from .spectral import PARSEVAL, SpectralVelocityField

_COUNTER_OFFSET = 2**48  # absolute step indices may be negative
_TAG_INCREMENT = 0
_TAG_INITIAL = 1


@dataclass(frozen=True)
class NoiseConfig:
    """Covariance law and OU damping for the driving noise.

    decay_exponent defaults to s + 1 + delta with s = 0.51, delta = 0.25;
    the paper fixes neither the covariance nor these values, only that the
    decay is summable -- treat 1.76 as a configurable choice.
    """

    decay_exponent: float = 1.76
    amplitude: float = 0.02
    alpha: float = 0.0
    mu: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.decay_exponent <= 1.0:
            raise InvalidParameterError(
                f"decay_exponent must exceed 1, got {self.decay_exponent}"
            )
        if self.amplitude < 0:
            raise InvalidParameterError("amplitude must be >= 0")
        if self.alpha < 0:
            raise InvalidParameterError("alpha must be >= 0")
        if self.mu <= 0:
            raise InvalidParameterError("mu must be > 0")

    def sigma(self, spectrum):
        """Per-mode noise intensity sigma_k, in spectrum order."""
        return self.amplitude * spectrum.eigenvalues ** (-self.decay_exponent)

    def theta(self, spectrum):
        """Per-mode OU relaxation rate mu*lambda_k + alpha."""
        return self.mu * spectrum.eigenvalues + self.alpha


def _mode_stream(seed, tag, k1, k2):
    ss = SeedSequence(
        entropy=(int(seed) & (2**64 - 1), int(tag), int(k1) & 0xFFFFFFFF, int(k2) & 0xFFFFFFFF)
    )
    return Philox(key=ss.generate_state(2, np.uint64))


def _stream_normals(bitgen, j0, n):
    """2n standard normals from counter blocks [j0, j0+n), shape (n, 2).

    One Philox counter block (4 x 64 bits) per index; the first two words
    become normals by inverse CDF so draw positions are fixed regardless of
    how many values any other code consumed.
    """
    bitgen.advance(j0 + _COUNTER_OFFSET)
    raw = bitgen.random_raw(4 * n).reshape(n, 4)[:, :2]
    u = (np.float64(raw >> np.uint64(11)) + 0.5) * 2.0**-53
    return ndtri(u)


def increment_gaussians(config, spectrum, j0, n):
    """Standard complex Gaussians xi_j for steps j0 <= j < j0+n, shape (n, Mc).

    E|xi|^2 = 1; column order follows spectrum.canonical_index.
    """
    ci = spectrum.canonical_index
    out = np.empty((n, len(ci)), dtype=np.complex128)
    for col, i in enumerate(ci):
        k1, k2 = spectrum.modes[i]
        z = _stream_normals(_mode_stream(config.seed, _TAG_INCREMENT, k1, k2), j0, n)
        out[:, col] = (z[:, 0] + 1j * z[:, 1]) / np.sqrt(2.0)
    return out


def initial_gaussians(config, spectrum, draw):
    """Standard complex Gaussians for stationary draw index `draw`, shape (Mc,)."""
    return increments_for_initial(config, spectrum, draw, 1)[0]


def increments_for_initial(config, spectrum, draw0, n):
    ci = spectrum.canonical_index
    out = np.empty((n, len(ci)), dtype=np.complex128)
    for col, i in enumerate(ci):
        k1, k2 = spectrum.modes[i]
        z = _stream_normals(_mode_stream(config.seed, _TAG_INITIAL, k1, k2), draw0, n)
        out[:, col] = (z[:, 0] + 1j * z[:, 1]) / np.sqrt(2.0)
    return out


# -- stationary law and the exact one-step recursion ------------------------


def stationary_scale(config, spectrum):
    """Std of the stationary scalar amplitude: sigma_k / sqrt(2 theta_k)."""
    theta = config.theta(spectrum)
    if config.mu * spectrum.lambda1 + config.alpha <= 0:
        raise InvalidParameterError("mu*lambda1 + alpha must be positive")
    return config.sigma(spectrum) / np.sqrt(2.0 * theta)


def step_coefficients(config, spectrum, dt):
    """(decay, noise_std) of the exact OU transition over one step of size dt."""
    if dt <= 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    theta = config.theta(spectrum)
    decay = np.exp(-theta * dt)
    var = -np.expm1(-2.0 * theta * dt) / (2.0 * theta)
    return decay, config.sigma(spectrum) * np.sqrt(var)


def sample_stationary_initial(config, spectrum, draw=0):
    """One draw from the exact stationary law, as a field.

    Per mode the complex amplitude has variance sigma_k^2/(2(mu lambda_k
    + alpha)); amplitudes sit on the divergence-free tangent direction and
    are Hermitian-paired, so the field needs no further projection.
    """
    scale = stationary_scale(config, spectrum)[spectrum.canonical_index]
    xi = initial_gaussians(config, spectrum, draw)
    return SpectralVelocityField(spectrum, spectrum.assemble(scale * xi))


def ou_step(z, dt, config, spectrum, step_index):
    """Exact per-mode OU update over [t, t+dt], t = step_index * dt.

    zhat' = e^(-theta dt) zhat + sigma sqrt((1 - e^(-2 theta dt))/(2 theta)) xi
    with xi a standard complex Gaussian; the marginal law is preserved
    exactly, there is no time-discretization bias in the linear dynamics.
    """
    decay, std = step_coefficients(config, spectrum, dt)
    xi = spectrum.assemble(increment_gaussians(config, spectrum, step_index, 1)[0])
    coeffs = decay[:, None] * z.coeffs + std[:, None] * xi
    return SpectralVelocityField(spectrum, coeffs)


# -- paths ------------------------------------------------------------------


def grid_index(t, dt, what="time"):
    """Absolute step index of t on the global grid t_j = j dt."""
    j = int(round(t / dt))
    if abs(j * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidParameterError(f"{what} {t} does not lie on the dt={dt} grid")
    return j


class OUPath:
    """A sampled OU path on the uniform grid t0, t0+dt, ..., t0+n*dt.

    Scalar canonical amplitudes are stored as (n+1, Mc); full coefficient
    arrays are assembled on demand.  Instances are immutable once built
    and are a deterministic function of (config.seed, t0, dt, k_max).
    """

    def __init__(self, spectrum, config, t0, dt, scalars):
        self.spectrum = spectrum
        self.config = config
        self.t0 = float(t0)
        self.dt = float(dt)
        self.scalars = scalars

    @property
    def n_steps(self):
        return self.scalars.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.scalars.shape[0])

    def coeffs(self, i):
        return self.spectrum.assemble(self.scalars[i])

    def value(self, i):
        return SpectralVelocityField(self.spectrum, self.coeffs(i))

    def norm_h_sq(self):
        return 2.0 * PARSEVAL * np.sum(np.abs(self.scalars) ** 2, axis=1)

    def norm_v_sq(self):
        lam = self.spectrum.eigenvalues[self.spectrum.canonical_index]
        return 2.0 * PARSEVAL * np.sum(lam * np.abs(self.scalars) ** 2, axis=1)

    def norm_a_sq(self):
        lam = self.spectrum.eigenvalues[self.spectrum.canonical_index]
        return 2.0 * PARSEVAL * np.sum(lam**2 * np.abs(self.scalars) ** 2, axis=1)

    def norm_v_pow(self, q):
        return self.norm_v_sq() ** (q / 2.0)

    def shift_view(self, steps):
        """The path of the shifted noise theta_{h} omega with h = steps*dt.

        Realized by re-indexing this path: z(theta_h w)(t) = z(w)(t + h).
        """
        if steps < 0 or steps > self.n_steps:
            raise InvalidParameterError("shift must stay inside the sampled window")
        return OUPath(self.spectrum, self.config, self.t0 + steps * self.dt,
                      self.dt, self.scalars[steps:])


def generate_path(t0, t_end, dt, config, spectrum, xi=None, initial=None):
    """Stationary initial draw at t0, then the exact per-step recursion.

    The interval must be an integer number of steps (to 1e-12 relative).
    Same seed means bit-identical path.  `xi` overrides the per-step
    standard Gaussians (used for refinement-consistent driving), `initial`
    overrides the stationary initial scalars.
    """
    if t0 >= t_end:
        raise InvalidParameterError("t0 must precede t_end")
    n_float = (t_end - t0) / dt
    n = int(round(n_float))
    if n < 1 or abs(n_float - n) > 1e-12 * max(1.0, abs(n_float)):
        raise InvalidParameterError(
            f"dt={dt} does not divide the interval [{t0}, {t_end}]"
        )
    j0 = grid_index(t0, dt, "path start")
    ci = spectrum.canonical_index
    decay, std = step_coefficients(config, spectrum, dt)
    decay_c, std_c = decay[ci], std[ci]
    if initial is None:
        initial = stationary_scale(config, spectrum)[ci] * initial_gaussians(config, spectrum, j0)
    if xi is None:
        xi = increment_gaussians(config, spectrum, j0, n)
    scalars = np.empty((n + 1, len(ci)), dtype=np.complex128)
    scalars[0] = initial
    for i in range(n):
        scalars[i + 1] = decay_c * scalars[i] + std_c * xi[i]
    return OUPath(spectrum, config, t0, dt, scalars)


def ou_scalar_stream(config, spectrum, j0, n, dt, chunk=4096, initial=None):
    """Yield (step, scalar_z, xi) for n steps starting at absolute index j0.

    scalar_z is the canonical amplitude vector at the step start and xi the
    standard complex Gaussian driving [t_j, t_j + dt); values replicate
    generate_path bit for bit while holding only `chunk` steps in memory.
    """
    ci = spectrum.canonical_index
    decay, std = step_coefficients(config, spectrum, dt)
    decay_c, std_c = decay[ci], std[ci]
    if initial is None:
        z = stationary_scale(config, spectrum)[ci] * initial_gaussians(config, spectrum, j0)
    else:
        z = initial.copy()
    done = 0
    while done < n:
        m = min(chunk, n - done)
        xi = increment_gaussians(config, spectrum, j0 + done, m)
        for i in range(m):
            yield done + i, z, xi[i]
            z = decay_c * z + std_c * xi[i]
        done += m
    yield n, z, None


# -- closed-form moments -----------------------------------------------------


def analytic_moments(config, spectrum):
    """Exact stationary expectations (E|z|_H^2, E|z|_V^2)."""
    var = stationary_scale(config, spectrum) ** 2
    mean_h2 = PARSEVAL * float(np.sum(var))
    mean_v2 = PARSEVAL * float(np.sum(spectrum.eigenvalues * var))
    return mean_h2, mean_v2


def alpha_for_v_bound(config, spectrum, bound=None):
    """Smallest OU damping alpha0 with E|z_alpha|_V^2 <= bound.

    The default bound mu^2 lambda1 / 16 is the threshold under which the
    dissipation exponent of the pullback quadratures stays negative.
    """
    if bound is None:
        bound = config.mu**2 * spectrum.lambda1 / 16.0

    def mean_v2(alpha):
        cfg = NoiseConfig(config.decay_exponent, config.amplitude, alpha, config.mu, config.seed)
        return analytic_moments(cfg, spectrum)[1]

    if mean_v2(0.0) <= bound:
        return 0.0
    lo, hi = 0.0, 1.0
    while mean_v2(hi) > bound:
        hi *= 2.0
        if hi > 1e12:
            raise InvalidParameterError("no finite alpha meets the variance bound")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_v2(mid) <= bound:
            hi = mid
        else:
            lo = mid
    return hi
