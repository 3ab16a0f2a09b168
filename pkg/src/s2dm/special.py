"""Log modified Bessel functions of the first kind, I_nu(x), for nu >= 0.

Power series below ``CROSSOVER`` and the Debye uniform asymptotic
expansion above it. Everything is evaluated in log space so concentrations
up to the thousands never overflow.
"""
import numpy as np
from scipy.special import gammaln

from .errors import NumericError

CROSSOVER = 50.0
_SERIES_TERMS = 256
_K = np.arange(_SERIES_TERMS, dtype=np.float64)
_LOG_K_FACT = gammaln(_K + 1.0)

# Debye polynomials u_k(t) = sum_j c[k][j] t^j
_DEBYE = [
    {0: 1.0},
    {1: 3 / 24, 3: -5 / 24},
    {2: 81 / 1152, 4: -462 / 1152, 6: 385 / 1152},
    {3: 30375 / 414720, 5: -369603 / 414720, 7: 765765 / 414720, 9: -425425 / 414720},
    {4: 4465125 / 39813120, 6: -94121676 / 39813120, 8: 349922430 / 39813120,
     10: -446185740 / 39813120, 12: 185910725 / 39813120},
]


def _log_series_scaled(nu, x):
    """log( I_nu(x) / (x/2)^nu ) by direct summation of the power series."""
    half = np.log(np.where(x > 0, x / 2.0, 1.0))[..., None]
    k = _K
    terms = np.where(k == 0, 0.0, 2.0 * k * half) - _LOG_K_FACT - gammaln(k + nu[..., None] + 1.0)
    terms = np.where((x[..., None] == 0) & (k > 0), -np.inf, terms)
    top = terms.max(axis=-1, keepdims=True)
    return (top + np.log(np.exp(terms - top).sum(axis=-1, keepdims=True)))[..., 0]


def _log_debye(nu, x):
    s = np.sqrt(nu * nu + x * x)
    # sum_k u_k(t) / nu^k with t = nu/s, rewritten as sum c_kj nu^(j-k) / s^j
    # so that nu = 0 needs no special case
    acc = np.zeros_like(s)
    for k, poly in enumerate(_DEBYE):
        for j, c in poly.items():
            acc = acc + c * nu ** (j - k) / s ** j
    lead = s + nu * np.log(x / (nu + s)) - 0.5 * np.log(2.0 * np.pi * s)
    return lead + np.log(acc)


def log_bessel_i(nu, x):
    """log I_nu(x), elementwise, x >= 0 (x = 0 gives -inf unless nu = 0)."""
    nu, x = np.broadcast_arrays(np.asarray(nu, dtype=np.float64), np.asarray(x, dtype=np.float64))
    out = np.empty(x.shape)
    small = x < CROSSOVER
    if np.any(small):
        xs, ns = x[small], nu[small]
        with np.errstate(divide="ignore"):
            lead = np.where(ns == 0, 0.0, ns * np.log(xs / 2.0))
        out[small] = lead + _log_series_scaled(ns, xs)
    big = ~small
    if np.any(big):
        out[big] = _log_debye(nu[big], x[big])
    bad = np.isnan(out) | np.isposinf(out)
    if np.any(bad):
        raise NumericError("log Bessel evaluation overflowed")
    return out


def bessel_ratio(nu, x):
    """A(x) = I_{nu+1}(x) / I_nu(x); zero at x = 0."""
    nu, x = np.broadcast_arrays(np.asarray(nu, dtype=np.float64), np.asarray(x, dtype=np.float64))
    out = np.zeros(x.shape)
    pos = x > 0
    if np.any(pos):
        out[pos] = np.exp(log_bessel_i(nu[pos] + 1.0, x[pos]) - log_bessel_i(nu[pos], x[pos]))
    return out


def vmf_mean_length(d, kappa):
    """E[mu . x] under vMF(mu, kappa) on the unit sphere in R^d."""
    return bessel_ratio(d / 2.0 - 1.0, kappa)


def log_vmf_normalizer(d, kappa):
    """log C_d(kappa), C_d = kappa^nu / ((2 pi)^(d/2) I_nu(kappa)), nu = d/2 - 1."""
    kappa = np.asarray(kappa, dtype=np.float64)
    nu = d / 2.0 - 1.0
    base = -(d / 2.0) * np.log(2.0 * np.pi)
    out = np.empty(kappa.shape)
    small = kappa < CROSSOVER
    if np.any(small):
        # kappa^nu / I_nu = 2^nu / series, exact at kappa = 0
        nus = np.full(kappa[small].shape, nu)
        out[small] = base + nu * np.log(2.0) - _log_series_scaled(nus, kappa[small])
    big = ~small
    if np.any(big):
        kb = kappa[big]
        out[big] = base + nu * np.log(kb) - log_bessel_i(np.full(kb.shape, nu), kb)
    if not np.all(np.isfinite(out)):
        raise NumericError("vMF normalizer overflowed")
    return out


def log_sphere_area_inv(d):
    """log C_d(0): the uniform density on the unit sphere in R^d."""
    return float(gammaln(d / 2.0) - np.log(2.0) - (d / 2.0) * np.log(np.pi))
