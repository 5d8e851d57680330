"""Analytical and semi-analytical baselines for validating the simulator."""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import bath as _bath
from .dynamics import FREE, HARMONIC, integrate_deterministic
from .errors import ConfigurationError
from .observables import ObservableSeries


@dataclass(frozen=True)
class ResponseFunction:
    """Homogeneous GLE response G with m G'' + int_0^t M(t-s) G'(s) ds = 0.

    Initial data G(0) = 0, G'(0) = 1/m (unit momentum impulse).  For linear
    dynamics the position commutator amplitude is A(t) = (hbar/2) G(t); the
    sign convention of A is unobservable here (it only enters squared).
    Deterministic: independent of temperature and of the noise statistics.
    """

    times: np.ndarray
    values: np.ndarray
    hbar: float = 1.0

    def amplitude(self):
        """A(t) = (hbar / 2) G(t)."""
        return 0.5 * self.hbar * self.values


def response(spec, pot, t_grid, dt=None):
    """Response function on ``t_grid`` by deterministic integration.

    Supported for the free and harmonic potentials, where the dynamics is
    linear and the commutator reduces to a c-number.  ``dt`` defaults to the
    grid spacing; pass the ensemble's own step to share discretisation with a
    Monte Carlo run.
    """
    if pot.form not in (FREE, HARMONIC):
        raise ConfigurationError(
            "response requires a quadratic (free or harmonic) potential")
    t_grid = np.asarray(t_grid, dtype=float)
    if dt is None:
        dt = t_grid[1] - t_grid[0] if len(t_grid) > 1 else spec.eps / 20
    n_steps = int(round(t_grid[-1] / dt))
    times, x, _ = integrate_deterministic(spec, pot, dt, n_steps, x0=0.0, p0=1.0)
    idx = np.round(t_grid / dt).astype(int)
    if np.any(np.abs(t_grid - times[idx]) > 1e-9 * max(1.0, t_grid[-1])):
        raise ConfigurationError("t_grid is not commensurate with dt")
    return ResponseFunction(times=t_grid, values=x[idx], hbar=spec.hbar)


def sigma_analytical(sigma0, d2_series, resp):
    """Position variance of a Gaussian-localised preparation.

    Assembles ``sigma0^2 + d2(t) + A(t)^2 / sigma0^2`` pointwise from the
    measured thermal mean squared displacement and the deterministic response
    amplitude.  All three terms are individually nonnegative.
    """
    if len(d2_series.times) != len(resp.times) or \
            np.any(np.abs(d2_series.times - resp.times) > 1e-9):
        raise ConfigurationError("d2 series and response use different grids")
    a = resp.amplitude()
    est = sigma0**2 + d2_series.estimates + a**2 / sigma0**2
    return ObservableSeries(times=d2_series.times, estimates=est,
                            standard_errors=d2_series.standard_errors,
                            effective_sample_size=d2_series.effective_sample_size)


def p2_quadrature(spec, t):
    """Momentum variance growth from rest in the zero-temperature limit.

    Evaluates ``(m*gamma*hbar/pi) * integral_0^inf domega omega e^{-eps*omega}
    |e^{i omega t} - e^{-gamma t}|^2 / (omega^2 + gamma^2)`` by adaptive
    quadrature.  Starts from zero, rises as (m*gamma*hbar/pi) t^2/eps^2 for
    t << eps, grows logarithmically for eps << t << 1/gamma.

    The damped-response factor ``e^{-gamma t}`` treats the friction as
    Markovian; the formula is therefore a wide-band approximation whose
    residual error decays only logarithmically in ``gamma*eps`` (a few
    percent at gamma*eps ~ 0.02).
    """
    t = float(t)
    if t < 0:
        raise ConfigurationError("p2_quadrature requires t >= 0")
    if t == 0.0 or spec.gamma == 0.0:
        return 0.0
    g = spec.gamma
    pref = spec.mass * g * spec.hbar / np.pi

    def base(w):
        return w * np.exp(-spec.eps * w) / (w**2 + g**2)

    flat, err1 = quad(base, 0.0, spec.omega_max, epsabs=1e-12, epsrel=1e-10,
                      limit=400)
    osc, err2 = quad(base, 0.0, spec.omega_max, weight="cos", wvar=t,
                     epsabs=1e-12, epsrel=1e-10, limit=400)
    value = pref * ((1.0 + np.exp(-2.0 * g * t)) * flat
                    - 2.0 * np.exp(-g * t) * osc)
    if not np.isfinite(value):
        raise RuntimeError(f"momentum variance quadrature failed at t={t}: "
                           f"errors ({err1:.2g}, {err2:.2g})")
    return value


def equilibrium_p2(spec):
    """Equilibrium momentum variance by the fluctuation-dissipation integral.

    ``(1/pi) * integral_0^inf noise_psd(omega) |chi_p(omega)|^2 domega`` with
    the momentum susceptibility of the free damped particle,
    ``|chi_p|^2 = 1/(omega^2 + gamma^2)``.  The prefactor is fixed by
    requiring that the kT = 0 value equal the long-time limit of
    :func:`p2_quadrature`, which this integral reproduces exactly.
    """
    if spec.gamma == 0.0:
        return 0.0

    def integrand(w):
        return _bath.noise_psd(spec, w) / (w**2 + spec.gamma**2)

    value, _ = quad(integrand, 0.0, spec.omega_max, epsabs=1e-12,
                    epsrel=1e-10, limit=400)
    return value / np.pi


def coherence_length(spec):
    """Off-diagonal width of the equilibrium state and the variance behind it.

    Returns ``(lambda, p2_eq)`` with ``lambda = hbar / sqrt(p2_eq)``.  The
    length shrinks as the cutoff frequency 1/eps grows, even at kT = 0, since
    zero-point momentum fluctuations diverge logarithmically in the cutoff.
    """
    p2 = equilibrium_p2(spec)
    if p2 <= 0.0:
        return np.inf, p2
    return spec.hbar / np.sqrt(p2), p2


def small_parameter(spec, pot, x_range=None, n_points=2001):
    """Classicality ratio lambda / L with L the potential's curvature scale.

    ``L = min over the probed range of |V'(x) / V'''(x)|^(1/2)`` excluding
    zeros of V'.  Quadratic potentials (V''' = 0) are exact for the
    trajectory mapping: returns (0.0, True), the flag marking the exact
    regime.  Polynomial potentials require an explicit ``x_range``.
    """
    if pot.form in (FREE, HARMONIC):
        return 0.0, True
    if x_range is None:
        raise ConfigurationError("small_parameter needs x_range for polynomial potentials")
    x = np.linspace(x_range[0], x_range[1], n_points)
    v1 = pot.derivative(x, spec.mass, order=1)
    v3 = pot.derivative(x, spec.mass, order=3)
    if np.all(v3 == 0.0):
        return 0.0, True
    keep = (np.abs(v1) > 1e-12) & (np.abs(v3) > 1e-12)
    if not np.any(keep):
        return 0.0, True
    length = np.sqrt(np.min(np.abs(v1[keep] / v3[keep])))
    lam, _ = coherence_length(spec)
    return lam / length, False
