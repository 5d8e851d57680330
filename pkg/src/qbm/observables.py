"""Weighted ensemble estimates of phase-space (Weyl symbol) observables."""

from dataclasses import dataclass

import numpy as np

from .errors import SignProblemError

# Times whose effective sample size falls below this are flagged unreliable.
_ESS_FLOOR = 100.0


@dataclass(frozen=True)
class WeylObservable:
    """Phase-space function averaged over the weighted trajectory ensemble.

    Forms: ``x2``, ``p2``, ``xp`` (the symmetrised product), ``cat-coherence``
    (the off-diagonal projector of a two-packet superposition; its phase
    ``cos(2 x0 p / hbar)`` threads hbar explicitly for unit consistency), and
    ``poly`` with a coefficient matrix C[i, j] for sum C_ij x^i p^j.
    """

    form: str
    x0: float = 0.0
    sigma: float = 0.0
    hbar: float = 1.0
    coefficients: tuple = ()

    @classmethod
    def x2(cls):
        return cls(form="x2")

    @classmethod
    def p2(cls):
        return cls(form="p2")

    @classmethod
    def xp(cls):
        return cls(form="xp")

    @classmethod
    def cat_coherence(cls, x0, sigma, hbar=1.0):
        return cls(form="cat-coherence", x0=float(x0), sigma=float(sigma),
                   hbar=float(hbar))

    @classmethod
    def polynomial(cls, coefficients):
        c = tuple(tuple(float(v) for v in row) for row in coefficients)
        return cls(form="poly", coefficients=c)

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.form == "x2":
            return x * x
        if self.form == "p2":
            return p * p
        if self.form == "xp":
            return x * p
        if self.form == "cat-coherence":
            s2 = self.sigma**2
            return 4.0 * np.exp(-x**2 / (2.0 * s2)
                                - 2.0 * s2 * p**2 / self.hbar**2) \
                * np.cos(2.0 * self.x0 * p / self.hbar)
        if self.form == "poly":
            c = np.asarray(self.coefficients)
            return np.polynomial.polynomial.polyval2d(x, p, c)
        raise ValueError(f"unknown observable form {self.form!r}")


@dataclass(frozen=True)
class ObservableSeries:
    """Weighted time series with delta-method errors and sampling diagnostics."""

    times: np.ndarray
    estimates: np.ndarray
    standard_errors: np.ndarray
    effective_sample_size: np.ndarray

    @property
    def low_ess(self):
        return self.effective_sample_size < _ESS_FLOOR


def _check_weights(weights):
    """Signed-weight normalisation must be resolvable from zero (5 SE rule).

    The check targets sign cancellation, so it applies only to mixed-sign
    ensembles; a skewed all-positive ensemble is legitimate (it surfaces as a
    low effective sample size instead).
    """
    total = weights.sum()
    if total == 0.0:
        raise SignProblemError("sum of weights is exactly zero")
    mixed = np.any(weights > 0) and np.any(weights < 0)
    if mixed and len(weights) > 1:
        se_total = weights.std(ddof=1) * np.sqrt(len(weights))
        if abs(total) < 5.0 * se_total:
            raise SignProblemError(
                f"sum of weights {total:.3g} is within 5 standard errors "
                f"({se_total:.3g}) of zero; the ratio estimator is undefined")
    return total


def estimate(ensemble, obs):
    """Weighted ratio estimate of ``obs`` on the ensemble's recording grid.

    Per time: ``sum_j w_j O(x_j, p_j) / sum_j w_j`` with the standard error
    from the delta-method linearisation of the ratio (weights are signed, so
    the naive weighted variance underestimates).  Effective sample size is
    ``(sum w)^2 / sum w^2``; times where it drops below 100 are flagged via
    ``low_ess``.
    """
    good = np.setdiff1d(np.arange(ensemble.n_traj), ensemble.failed_ids)
    w = ensemble.weights[good]
    total = _check_weights(w)
    ess = total**2 / np.sum(w**2)

    n_times = len(ensemble.times)
    est = np.empty(n_times)
    se = np.empty(n_times)
    for k0 in range(0, n_times, 256):
        k1 = min(k0 + 256, n_times)
        vals = obs(ensemble.x[good, k0:k1], ensemble.p[good, k0:k1])
        ratio = (w[:, None] * vals).sum(axis=0) / total
        resid = w[:, None] * (vals - ratio[None, :])
        se[k0:k1] = np.sqrt((resid**2).sum(axis=0)) / abs(total)
        est[k0:k1] = ratio
    return ObservableSeries(times=ensemble.times, estimates=est,
                            standard_errors=se,
                            effective_sample_size=np.full(n_times, ess))


def msd(ensemble, t0=0.0):
    """Mean squared displacement <(x(t) - x(t0))^2> of the thermal particle.

    Defined for the unprepared (all weights exactly 1) equilibrium ensemble;
    a weighted ensemble is a usage error.
    """
    if not ensemble.unweighted():
        raise ValueError("msd is defined for the unweighted thermal ensemble; "
                         "got preparation weights != 1")
    k0 = int(np.argmin(np.abs(ensemble.times - t0)))
    if abs(ensemble.times[k0] - t0) > 1e-9:
        raise ValueError(f"reference time {t0} not on the recording grid")
    good = np.setdiff1d(np.arange(ensemble.n_traj), ensemble.failed_ids)
    disp = (ensemble.x[good] - ensemble.x[good, k0][:, None]) ** 2
    n = len(good)
    est = disp.mean(axis=0)
    se = disp.std(axis=0, ddof=1) / np.sqrt(n)
    return ObservableSeries(times=ensemble.times, estimates=est,
                            standard_errors=se,
                            effective_sample_size=np.full(len(ensemble.times), float(n)))


def cat_initial_value(x0, sigma):
    """Expected coherence of a fresh two-packet superposition at t = 0+.

    Equals ``1 + exp(-x0^2 / (2 sigma^2))`` from the Gaussian overlap of the
    two packets; anchors the decoherence curve at its start.
    """
    return 1.0 + np.exp(-x0**2 / (2.0 * sigma**2))
