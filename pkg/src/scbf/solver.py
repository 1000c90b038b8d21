"""Time integration of the transformed random system and its direct
Euler-Maruyama cross-check.

The state v solves the pathwise random ODE

    dv/dt = -mu A v - B(v + eps z) - beta C(v + eps z) + eps alpha z + f,

obtained from the stochastic system by the substitution u = v + eps z with
z the stationary OU process.  The stiff linear part is integrated exactly
per mode (integrating factor), the nonlinearities explicitly:

    vhat' = e^(-mu lambda dt) (vhat + dt Nhat),

first order in dt.  Any nonfinite coefficient aborts the trajectory with
diagnostics rather than being clamped; clamping would silently invalidate
the energy-inequality ledger.
"""

import numpy as np
from dataclasses import dataclass, field as dc_field

from . import noise as noise_mod
from .errors import (DivergedError, InvalidInputError, InvalidParameterError,
                     ShapeMismatchError)
from .nonlinear import convective_coeffs, damping_coeffs
from .spectral import (PARSEVAL, SpectralVelocityField, build_basis,
                       norm_a_sq, norm_h_sq, norm_lp_pow, norm_v_sq, zero_field)


@dataclass
class SCBFParams:
    """Physical and numerical parameters of one run."""

    mu: float = 1.0
    beta: float = 1.0
    r: float = 3.0
    epsilon: float = 0.5
    alpha: float = 0.0
    forcing: SpectralVelocityField | None = None
    dt: float = 1e-3
    k_max: int = 16

    def __post_init__(self):
        if self.mu <= 0:
            raise InvalidParameterError("mu must be > 0")
        if self.beta < 0:
            raise InvalidParameterError("beta must be >= 0")
        if self.r < 1:
            raise InvalidParameterError("r must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidParameterError("epsilon must lie in [0, 1]")
        if self.alpha < 0:
            raise InvalidParameterError("alpha must be >= 0")
        if self.dt <= 0:
            raise InvalidParameterError("dt must be > 0")
        if self.k_max < 1:
            raise InvalidParameterError("k_max must be >= 1")

    def forcing_coeffs(self, spectrum):
        if self.forcing is None:
            return np.zeros((spectrum.mode_count, 2), dtype=np.complex128)
        if not self.forcing.spectrum.compatible(spectrum):
            raise ShapeMismatchError("forcing truncation does not match the run")
        return self.forcing.coeffs

    def forcing_h_sq(self, spectrum):
        return float(norm_h_sq(spectrum, self.forcing_coeffs(spectrum)))


def kolmogorov_forcing(spectrum, norm=1.0):
    """Fixed low-mode forcing 2c cos(x1) e2 with |f|_H = norm."""
    c = norm / (2.0 * np.pi * np.sqrt(2.0))
    coeffs = np.zeros((spectrum.mode_count, 2), dtype=np.complex128)
    coeffs[spectrum.index_of((1, 0)), 1] = c
    coeffs[spectrum.index_of((-1, 0)), 1] = c
    return SpectralVelocityField(spectrum, coeffs)


def check_noise_consistency(params, config):
    """The OU damping and viscosity must match between solver and noise."""
    if abs(params.mu - config.mu) > 1e-14 * max(1.0, params.mu):
        raise InvalidInputError("params.mu and noise.mu disagree")
    if abs(params.alpha - config.alpha) > 1e-14 * max(1.0, 1.0 + params.alpha):
        raise InvalidInputError("params.alpha and noise.alpha disagree")


@dataclass
class TrajectoryRecord:
    """Per-step observability of one trajectory.

    h_norm2 and v_norm2 track |v|_H^2 and |v|_V^2 of the transformed state,
    lr1_norm tracks |v + eps z|_{L^{r+1}}^{r+1} (the damping dissipation
    integrand), ledger the normalized residual of the H-energy inequality
    for the step starting at each time (NaN on the final row).  a_norm2
    (|A v|_H^2) and the z-path norms support the V-space ledgers.
    """

    times: np.ndarray
    h_norm2: np.ndarray
    v_norm2: np.ndarray
    lr1_norm: np.ndarray
    ledger: np.ndarray
    a_norm2: np.ndarray | None = None
    z_h2: np.ndarray | None = None
    z_v2: np.ndarray | None = None
    z_a2: np.ndarray | None = None
    u_h2: np.ndarray | None = None

    def __len__(self):
        return len(self.times)

    def window(self, t_lo, t_hi):
        """Index mask for times in [t_lo, t_hi]."""
        return (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)


def empty_record():
    e = np.empty(0)
    return TrajectoryRecord(e, e, e, e, e)


# -- step kernels ------------------------------------------------------------


class _Stepper:
    """Precomputed arrays for repeated steps at fixed (spectrum, params)."""

    def __init__(self, spectrum, params, dt=None):
        self.spectrum = spectrum
        self.params = params
        self.dt = params.dt if dt is None else dt
        self.decay = np.exp(-params.mu * spectrum.eigenvalues * self.dt)[:, None]
        self.fhat = params.forcing_coeffs(spectrum)

    def rhs(self, w, z=None, with_lr1=False):
        """N = -B(w) - beta C(w) + eps alpha z + f for w = v + eps z, batched."""
        p = self.params
        n = -convective_coeffs(self.spectrum, w, w)
        lr1 = None
        if p.beta > 0.0:
            if with_lr1:
                damped, lr1 = damping_coeffs(self.spectrum, w, p.r, with_lr1=True)
            else:
                damped = damping_coeffs(self.spectrum, w, p.r)
            n -= p.beta * damped
        elif with_lr1:
            lr1 = norm_lp_pow(self.spectrum, w, p.r + 1.0)
        if z is not None and p.epsilon * p.alpha != 0.0:
            n = n + (p.epsilon * p.alpha) * z
        n = n + self.fhat
        return (n, lr1) if with_lr1 else n

    def advance(self, v, w, z=None, with_lr1=False):
        if with_lr1:
            n, lr1 = self.rhs(w, z, with_lr1=True)
            return self.decay * (v + self.dt * n), lr1
        return self.decay * (v + self.dt * self.rhs(w, z))


def step_v(v, z, params):
    """One exponential-Euler step of the transformed system."""
    if not v.spectrum.compatible(z.spectrum):
        raise ShapeMismatchError("v and z live on different truncations")
    st = _Stepper(v.spectrum, params)
    w = v.coeffs + params.epsilon * z.coeffs
    out = st.advance(v.coeffs, w, z.coeffs)
    if not np.all(np.isfinite(out)):
        raise DivergedError(0, 0.0, "nonfinite coefficient after one step")
    return SpectralVelocityField(v.spectrum, out)


def step_u_direct(u, dw, params):
    """One exponential Euler-Maruyama step of the untransformed system.

    dw is the Wiener increment over the step, consistent with the noise
    streams (see wiener_increment_coeffs); epsilon scales it here.
    """
    if not u.spectrum.compatible(dw.spectrum):
        raise ShapeMismatchError("u and dW live on different truncations")
    st = _Stepper(u.spectrum, params)
    out = st.advance(u.coeffs, u.coeffs) + params.epsilon * dw.coeffs
    if not np.all(np.isfinite(out)):
        raise DivergedError(0, 0.0, "nonfinite coefficient after one step")
    return SpectralVelocityField(u.spectrum, out)


def wiener_increment_coeffs(config, spectrum, xi_row, dt):
    """dW over one step from its standard complex Gaussians: sigma sqrt(dt) xi."""
    ci = spectrum.canonical_index
    return spectrum.assemble(config.sigma(spectrum)[ci] * np.sqrt(dt) * xi_row)


# -- the H-energy inequality residual (shared with the energy module) --------


def h_ledger_residual(h2_now, h2_next, z_v2, params, f_h2, c_young, dt, lambda1=1.0):
    """Signed, normalized residual of the discrete H-energy inequality.

    LHS = (|v_{n+1}|^2 - |v_n|^2)/dt + mu lambda1 |v_n|^2 against the
    Gronwall right-hand side evaluated at the step start; positive values
    are violations.
    """
    p = params
    rhs = (
        (8.0 / p.mu) * h2_now * z_v2
        + (8.0 * p.epsilon**4 / (p.mu * lambda1**2)) * z_v2**2
        + c_young * p.epsilon ** (p.r + 1.0) * z_v2 ** ((p.r + 1.0) / 2.0)
        + (8.0 * p.alpha**2 * p.epsilon**2 / (p.mu * lambda1**4)) * z_v2
        + (8.0 / (p.mu * lambda1**2)) * f_h2
    )
    lhs = (h2_next - h2_now) / dt + p.mu * lambda1 * h2_now
    return (lhs - rhs) / np.maximum(rhs, 1e-300)


# -- pullback and forward solves ----------------------------------------------


def _prepare(u0_coeffs, params, spectrum, config):
    if spectrum.k_max != params.k_max:
        raise InvalidInputError(
            f"field truncation k_max={spectrum.k_max} does not match params.k_max={params.k_max}"
        )
    if config is not None and params.epsilon > 0.0:
        check_noise_consistency(params, config)


def pullback_ensemble(coeffs0, s, params, spectrum, config, record=False,
                      c_young=0.0, collect_z=False):
    """Evolve a batch (B, M, 2) from time s <= 0 to 0 under one noise path.

    Returns (terminal coeffs, diverged member list, records).  records is a
    dict of (n+1, B) arrays when record=True, else None.  Members that
    diverge are zeroed, excluded from further arithmetic and reported.
    """
    _prepare(coeffs0, params, spectrum, config)
    if s > 0:
        raise InvalidParameterError("pullback start must satisfy s <= 0")
    dt = params.dt
    if s == 0:
        return coeffs0.copy(), [], None
    j0 = noise_mod.grid_index(s, dt, "pullback time")
    n = -j0
    eps = params.epsilon
    st = _Stepper(spectrum, params)
    f_h2 = params.forcing_h_sq(spectrum)

    use_noise = eps > 0.0
    stream = (noise_mod.ou_scalar_stream(config, spectrum, j0, n, dt)
              if use_noise else None)

    v = coeffs0.copy()
    rec = None
    if record:
        b = coeffs0.shape[0]
        rec = {
            "times": s + dt * np.arange(n + 1),
            "h_norm2": np.empty((n + 1, b)),
            "v_norm2": np.empty((n + 1, b)),
            "lr1_norm": np.empty((n + 1, b)),
            "a_norm2": np.empty((n + 1, b)),
            "ledger": np.full((n + 1, b), np.nan),
        }
        if collect_z:
            rec["z_h2"] = np.zeros(n + 1)
            rec["z_v2"] = np.zeros(n + 1)
            rec["z_a2"] = np.zeros(n + 1)

    lam_c = spectrum.eigenvalues[spectrum.canonical_index]
    alive = np.ones(coeffs0.shape[0], dtype=bool)
    diverged = []

    def z_norms(zs):
        a2 = np.abs(zs) ** 2
        return (2 * PARSEVAL * a2.sum(), 2 * PARSEVAL * (lam_c * a2).sum(),
                2 * PARSEVAL * (lam_c**2 * a2).sum())

    z_coeffs = None
    h2_prev = None
    for i, zs, xi in (stream if use_noise else _zero_stream(n)):
        if use_noise:
            z_coeffs = spectrum.assemble(zs)
            if i == 0:
                v = v - eps * z_coeffs  # v(s) = u0 - eps z(s)
        if i == n:
            break
        w = v + eps * z_coeffs if use_noise else v
        if record:
            h2 = norm_h_sq(spectrum, v)
            rec["h_norm2"][i] = h2
            rec["v_norm2"][i] = norm_v_sq(spectrum, v)
            rec["a_norm2"][i] = norm_a_sq(spectrum, v)
            zh2 = zv2 = za2 = 0.0
            if use_noise:
                zh2, zv2, za2 = z_norms(zs)
            if collect_z:
                rec["z_h2"][i], rec["z_v2"][i], rec["z_a2"][i] = zh2, zv2, za2
            v, lr1 = st.advance(v, w, z_coeffs, with_lr1=True)
            rec["lr1_norm"][i] = lr1
            h2_next = norm_h_sq(spectrum, v)
            rec["ledger"][i] = h_ledger_residual(
                h2, h2_next, zv2, params, f_h2, c_young, dt, spectrum.lambda1)
        else:
            v = st.advance(v, w, z_coeffs)
        bad = ~np.isfinite(v).all(axis=(-2, -1))
        if bad.any():
            fresh = np.nonzero(bad & alive)[0]
            if fresh.size:
                if coeffs0.shape[0] == 1:
                    raise DivergedError(i, s + i * dt)
                diverged.extend((int(m), i) for m in fresh)
                alive &= ~bad
            v[bad] = 0.0

    u = v + eps * z_coeffs if use_noise else v
    if record:
        rec["h_norm2"][n] = norm_h_sq(spectrum, v)
        rec["v_norm2"][n] = norm_v_sq(spectrum, v)
        rec["a_norm2"][n] = norm_a_sq(spectrum, v)
        w = v + eps * z_coeffs if use_noise else v
        rec["lr1_norm"][n] = norm_lp_pow(spectrum, w, params.r + 1.0)
        if collect_z and use_noise:
            rec["z_h2"][n], rec["z_v2"][n], rec["z_a2"][n] = z_norms(zs)
        rec["u_h2"] = norm_h_sq(spectrum, u)
    return u, diverged, rec


def _zero_stream(n):
    for i in range(n + 1):
        yield i, None, None


def solve_pullback(u0, s, params, config, record=True, c_young=0.0):
    """Pullback solve of one trajectory from time s <= 0 to time 0.

    Generates the OU path on [s, 0] (stationary initial draw at s), sets
    v(s) = u0 - eps z(s), integrates to 0 and returns u(0) = v(0) + eps z(0)
    together with the trajectory record.  s = 0 returns u0 unchanged with
    an empty record.
    """
    if s == 0:
        return u0.copy(), empty_record()
    spectrum = u0.spectrum
    coeffs, diverged, rec = pullback_ensemble(
        u0.coeffs[None], s, params, spectrum, config,
        record=record, c_young=c_young, collect_z=record)
    if not record:
        return SpectralVelocityField(spectrum, coeffs[0]), empty_record()
    out = TrajectoryRecord(
        times=rec["times"],
        h_norm2=rec["h_norm2"][:, 0],
        v_norm2=rec["v_norm2"][:, 0],
        lr1_norm=rec["lr1_norm"][:, 0],
        ledger=rec["ledger"][:, 0],
        a_norm2=rec["a_norm2"][:, 0],
        z_h2=rec.get("z_h2"),
        z_v2=rec.get("z_v2"),
        z_a2=rec.get("z_a2"),
    )
    return SpectralVelocityField(spectrum, coeffs[0]), out


def evolve_with_path(x, path, i0, n_steps, params):
    """phi(n dt, .)x driven by a shared OU path read from index i0.

    Realizes the cocycle legs: the shifted noise theta_s omega is this same
    path re-indexed by i0 = s/dt.  Returns v(end) + eps z(end) as a field.
    """
    spectrum = path.spectrum
    if x.spectrum.k_max != spectrum.k_max:
        raise InvalidInputError("state and path truncations differ")
    if i0 < 0 or i0 + n_steps > path.n_steps:
        raise InvalidParameterError("requested window leaves the sampled path")
    if n_steps == 0:
        return x.copy()
    eps = params.epsilon
    st = _Stepper(spectrum, params)
    z = path.coeffs(i0)
    v = x.coeffs - eps * z
    for j in range(n_steps):
        w = v + eps * z
        v = st.advance(v[None], w[None], z[None])[0]
        if not np.all(np.isfinite(v)):
            raise DivergedError(j, (i0 + j) * path.dt)
        z = path.coeffs(i0 + j + 1)
    return SpectralVelocityField(spectrum, v + eps * z)


def solve_forward_direct(u0, t_end, params, config, xi=None):
    """Euler-Maruyama integration of the untransformed system on [0, t_end]."""
    spectrum = u0.spectrum
    _prepare(u0.coeffs, params, spectrum, config)
    n = int(round(t_end / params.dt))
    if abs(n * params.dt - t_end) > 1e-9:
        raise InvalidParameterError("t_end must lie on the dt grid")
    if xi is None:
        xi = noise_mod.increment_gaussians(config, spectrum, 0, n)
    st = _Stepper(spectrum, params)
    sig_c = config.sigma(spectrum)[spectrum.canonical_index]
    sqdt = np.sqrt(params.dt)
    u = u0.coeffs.copy()
    for i in range(n):
        dw = spectrum.assemble(sig_c * sqdt * xi[i])
        u = st.advance(u[None], u[None])[0] + params.epsilon * dw
        if not np.all(np.isfinite(u)):
            raise DivergedError(i, i * params.dt)
    return SpectralVelocityField(spectrum, u)


def solve_forward_transformed(u0, t_end, params, config, xi=None, initial=None,
                              observables=()):
    """Forward run of the transformed system on [0, t_end]; u(t) = v + eps z.

    observables is a sequence of callables taking (spectrum, u_coeffs
    (B, M, 2)) and returning (B,) arrays; their per-step time series are
    returned alongside the terminal state.
    """
    spectrum = u0.spectrum
    _prepare(u0.coeffs, params, spectrum, config)
    dt = params.dt
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9:
        raise InvalidParameterError("t_end must lie on the dt grid")
    eps = params.epsilon
    batched = u0.coeffs.ndim == 3
    v = u0.coeffs.copy() if batched else u0.coeffs[None].copy()
    series = [np.empty((n + 1,) + v.shape[:1]) for _ in observables]
    st = _Stepper(spectrum, params)

    use_noise = eps > 0.0
    if use_noise:
        path = noise_mod.generate_path(0.0, t_end, dt, config, spectrum,
                                       xi=xi, initial=initial)
        z = path.coeffs(0)
        v = v - eps * z
    else:
        z = None
    for i in range(n + 1):
        u = v + eps * z if use_noise else v
        for s_arr, ob in zip(series, observables):
            s_arr[i] = ob(spectrum, u)
        if i == n:
            break
        w = v + eps * z if use_noise else v
        v = st.advance(v, w, z)
        if not np.all(np.isfinite(v)):
            raise DivergedError(i, i * dt)
        if use_noise:
            z = path.coeffs(i + 1)
    u_field = SpectralVelocityField(spectrum, u[0]) if not batched else u
    return u_field, [s for s in series]


# -- refinement-consistent noise levels ---------------------------------------


def aggregated_driving(config, spectrum, t_end, dt_values):
    """Standard Gaussians per dt level, all derived from one Brownian path.

    dt_values must be dt_fine * 2^j; coarse increments are sums of fine
    ones renormalized to unit variance, so every level discretizes the same
    underlying Wiener path and Richardson ratios are clean.
    Returns (initial_scalars, {dt: xi}).
    """
    dt_fine = min(dt_values)
    n_fine = int(round(t_end / dt_fine))
    for dt in dt_values:
        m = dt / dt_fine
        if abs(m - round(m)) > 1e-9:
            raise InvalidParameterError("dt levels must be dyadic multiples of the finest")
    xi_fine = noise_mod.increment_gaussians(config, spectrum, 0, n_fine)
    init = (noise_mod.stationary_scale(config, spectrum)[spectrum.canonical_index]
            * noise_mod.initial_gaussians(config, spectrum, 0))
    out = {}
    for dt in dt_values:
        m = int(round(dt / dt_fine))
        if m == 1:
            out[dt] = xi_fine
        else:
            out[dt] = xi_fine.reshape(n_fine // m, m, -1).sum(axis=1) / np.sqrt(m)
    return init, out


def truncation_scale(u0, t_end, params, config):
    """|u_dt(T) - u_{dt/2}(T)|_H under a shared Wiener path: the O(dt)
    global-error scale used to calibrate cocycle residual tolerances."""
    dts = [params.dt, params.dt / 2.0]
    states = {}
    if params.epsilon > 0.0:
        init, xi = aggregated_driving(config, spectrum := u0.spectrum, t_end, dts)
    for dt in dts:
        p = _with_dt(params, dt)
        if params.epsilon > 0.0:
            u, _ = solve_forward_transformed(u0, t_end, p, config,
                                             xi=xi[dt], initial=init)
        else:
            u, _ = solve_forward_transformed(u0, t_end, p, config)
        states[dt] = u
    diff = states[dts[0]].coeffs - states[dts[1]].coeffs
    return float(np.sqrt(norm_h_sq(u0.spectrum, diff)))


def _with_dt(params, dt):
    return SCBFParams(params.mu, params.beta, params.r, params.epsilon,
                      params.alpha, params.forcing, dt, params.k_max)
