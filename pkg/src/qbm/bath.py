"""Bath spectral density, memory kernel and noise correlation targets.

The bath is an ohmic oscillator continuum with an exponential frequency
cutoff.  The cutoff is parametrised by the time scale ``eps``; the
corresponding energy cutoff is ``hbar / eps`` (some conventions quote the
cutoff frequency ``Lambda = 1 / eps`` instead).  All functions are pure and
accept scalars or numpy arrays.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

OHMIC_EXPONENTIAL = "ohmic-exponential"

# Arguments of coth below this threshold use the Laurent series to avoid
# catastrophic cancellation in cosh/sinh.
_COTH_SERIES_THRESHOLD = 1e-4

# Adaptive quadratures truncate at omega = _OMEGA_MAX_FACTOR / eps, where the
# exponential cutoff bounds the tail below 1e-18.
_OMEGA_MAX_FACTOR = 50.0
_QUAD_ABS_TOL = 1e-10


@dataclass(frozen=True)
class BathSpec:
    """Ohmic-exponential bath parameters.

    Parameters
    ----------
    gamma : float
        Friction rate (1/time).  ``gamma = 0`` is allowed as the degenerate
        decoupled-bath limit (zero spectral density).
    eps : float
        Cutoff time scale; the spectral density decays as ``exp(-eps*omega)``.
    mass : float
        Particle mass.
    hbar : float
        Reduced Planck constant in the chosen unit system.
    kT : float
        Thermal energy; ``kT = 0`` selects pure zero-point statistics.
    family : str
        Spectral density family tag.  Only ``"ohmic-exponential"`` ships;
        the tag exists so other families can be added without touching
        consumers.
    """

    gamma: float
    eps: float
    mass: float = 1.0
    hbar: float = 1.0
    kT: float = 0.0
    family: str = OHMIC_EXPONENTIAL

    def __post_init__(self):
        if self.family != OHMIC_EXPONENTIAL:
            raise DomainError(f"unknown spectral density family: {self.family!r}")
        if not self.gamma >= 0.0:
            raise DomainError("gamma must be >= 0")
        if not self.eps > 0.0:
            raise DomainError("eps must be > 0")
        if not self.mass > 0.0:
            raise DomainError("mass must be > 0")
        if not self.hbar > 0.0:
            raise DomainError("hbar must be > 0")
        if not self.kT >= 0.0:
            raise DomainError("kT must be >= 0")

    @property
    def omega_max(self):
        """Upper quadrature limit; the spectral tail beyond it is < 1e-18."""
        return _OMEGA_MAX_FACTOR / self.eps


def spectral_density(spec, omega):
    """Ohmic spectral density J(omega) = gamma * m * omega * exp(-eps*omega).

    Linear in omega at small omega, exponentially cut off at large omega.
    Raises :class:`DomainError` for negative frequencies.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0.0):
        raise DomainError("spectral_density requires omega >= 0")
    out = spec.gamma * spec.mass * omega * np.exp(-spec.eps * omega)
    return out if out.ndim else float(out)


def memory_kernel(spec, t):
    """Friction memory kernel M(t) = (2*m*gamma/pi) * eps / (eps^2 + t^2).

    Even in t, Lorentzian in time, with total mass ``integral_0^inf M = m*gamma``.
    """
    t = np.asarray(t, dtype=float)
    out = (2.0 * spec.mass * spec.gamma / np.pi) * spec.eps / (spec.eps**2 + t**2)
    return out if out.ndim else float(out)


def kernel_mass(spec, upto=None):
    """Integral of the memory kernel over [0, upto]; the full mass for upto=None."""
    if upto is None:
        return spec.mass * spec.gamma
    return (2.0 * spec.mass * spec.gamma / np.pi) * np.arctan(upto / spec.eps)


def thermal_spectrum(spec, omega):
    """Thermal occupation factor coth(hbar*omega / (2*kT)).

    Returns exactly 1 for kT = 0 (zero-point limit).  Small arguments use the
    series 1/x + x/3 to avoid float cancellation near omega = 0.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0.0):
        raise DomainError("thermal_spectrum requires omega > 0")
    if spec.kT == 0.0:
        out = np.ones_like(omega)
        return out if out.ndim else 1.0
    # float-range edges saturate in the mathematically consistent direction:
    # the argument overflows to inf for denormal kT (coth -> 1) and the series
    # reciprocal overflows to inf for denormal omega (coth -> 1/x)
    with np.errstate(over="ignore", divide="ignore"):
        x = spec.hbar * omega / (2.0 * spec.kT)
        small = x < _COTH_SERIES_THRESHOLD
        safe = np.where(small, 1.0, x)
        # 1/tanh is overflow-safe for large arguments (tanh saturates at 1)
        out = np.where(small, 1.0 / np.where(small, x, 1.0) + x / 3.0,
                       1.0 / np.tanh(safe))
    return out if out.ndim else float(out)


def noise_psd(spec, omega):
    """Spectral weight J(omega) * hbar * coth(hbar*omega/(2*kT)) of the noise.

    This is the two-sided power spectral density of the stationary force,
    evaluated on omega >= 0; the symmetric correlation function is its cosine
    transform divided by pi.  At omega = 0 the analytic limit is
    ``2 * kT * gamma * m`` (the classical white-noise strength), which is 0
    at kT = 0.  Nonnegative everywhere, as required of a Gaussian process.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0.0):
        raise DomainError("noise_psd requires omega >= 0")
    decay = spec.gamma * spec.mass * np.exp(-spec.eps * omega)
    if spec.kT == 0.0:
        out = spec.hbar * omega * decay
        return out if out.ndim else float(out)
    # denormal kT overflows the coth argument to inf; the non-series branch
    # saturates correctly there (coth -> 1)
    with np.errstate(over="ignore"):
        x = spec.hbar * omega / (2.0 * spec.kT)
        small = x < _COTH_SERIES_THRESHOLD
        # small arguments (omega -> 0 included) use the cancellation-free
        # product gamma m e^{-eps w} (2kT + hbar w x / 3), whose limit is the
        # classical white-noise strength 2 kT gamma m
        series = decay * (2.0 * spec.kT + spec.hbar * omega * x / 3.0)
    safe = np.where(small, 1.0, omega)
    body = spec.hbar * safe * spec.gamma * spec.mass * np.exp(-spec.eps * safe) \
        * thermal_spectrum(spec, safe)
    out = np.where(small, series, body)
    return out if out.ndim else float(out)


def quantum_correlation(spec, lag):
    """Symmetric quantum noise correlation at the given time lag.

    Evaluates ``(1/pi) * integral_0^inf noise_psd(omega) cos(omega*lag) domega``
    by adaptive quadrature with absolute tolerance 1e-10, truncated at
    ``50 / eps``.  For kT = 0 this equals the closed form
    ``(m*gamma*hbar/pi) * (eps^2 - lag^2) / (eps^2 + lag^2)^2``.

    Raises
    ------
    RuntimeError
        If the quadrature does not converge to the requested tolerance.
    """
    lag = float(lag)
    if spec.gamma == 0.0:
        return 0.0

    def integrand(w):
        return noise_psd(spec, w)

    if lag == 0.0:
        value, abserr = quad(integrand, 0.0, spec.omega_max,
                             epsabs=_QUAD_ABS_TOL, epsrel=1e-12, limit=400)
    else:
        value, abserr = quad(integrand, 0.0, spec.omega_max,
                             weight="cos", wvar=abs(lag),
                             epsabs=_QUAD_ABS_TOL, epsrel=1e-12, limit=400)
    if not np.isfinite(value):
        raise RuntimeError(
            f"noise correlation quadrature failed at lag={lag}: value={value}, "
            f"estimated error={abserr}")
    return value / np.pi


def classical_correlation(spec, lag):
    """Classical noise correlation kT * M(lag) (classical limit of the quantum one)."""
    return spec.kT * memory_kernel(spec, lag)
