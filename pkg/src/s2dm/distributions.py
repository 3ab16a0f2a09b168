"""Latent distributions: von Mises-Fisher (semantic) and diagonal Gaussian (syntactic)."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .special import bessel_ratio, log_sphere_area_inv, log_vmf_normalizer

VAR_FLOOR = 1e-8


@dataclass
class VmfParams:
    mu: T.Tensor      # (..., d), unit rows
    kappa: T.Tensor   # (...,), non-negative

    def validate(self):
        if self.mu.shape[-1] < 2:
            raise ContractError("vMF needs dimension d >= 2")
        if self.kappa.shape != self.mu.shape[:-1]:
            raise ContractError(f"kappa shape {self.kappa.shape} does not match mu {self.mu.shape}")
        if np.any(self.kappa.data < 0):
            raise ContractError("vMF concentration must be non-negative")
        norms = np.linalg.norm(self.mu.data, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractError("vMF mean direction must be unit norm")


@dataclass
class GaussParams:
    mu: T.Tensor
    sigma2: T.Tensor

    def validate(self):
        if self.sigma2.shape != self.mu.shape:
            raise ContractError("sigma2 must match mu in shape")
        if np.any(self.sigma2.data <= 0):
            raise ContractError("Gaussian variance must be positive")

    @classmethod
    def from_logvar(cls, mu, logvar):
        return cls(mu, T.maximum(T.exp(logvar), VAR_FLOOR))


@dataclass
class VmfNoise:
    """Pre-drawn randomness for one batch of vMF samples around the north pole."""
    w: np.ndarray       # (...,) polar cosine
    v: np.ndarray       # (..., d-1) unit tangent direction

    def north_pole_sample(self):
        r = np.sqrt(np.clip(1.0 - self.w ** 2, 0.0, None))[..., None]
        return np.concatenate([self.w[..., None], r * self.v], axis=-1)


def sample_polar(kappa, d, rng):
    """Wood (1994) rejection sampler for w = mu . x, vectorized over kappa."""
    kappa = np.asarray(kappa, dtype=np.float64)
    flat = kappa.reshape(-1)
    m = d - 1.0
    b = m / (np.sqrt(4.0 * flat ** 2 + m ** 2) + 2.0 * flat)
    x0 = (1.0 - b) / (1.0 + b)
    c = flat * x0 + m * np.log(1.0 - x0 ** 2)
    out = np.empty_like(flat)
    todo = np.arange(flat.size)
    while todo.size:
        z = rng.beta(m / 2.0, m / 2.0, size=todo.size)
        w = (1.0 - (1.0 + b[todo]) * z) / (1.0 - (1.0 - b[todo]) * z)
        u = rng.uniform(size=todo.size)
        ok = flat[todo] * w + m * np.log(1.0 - x0[todo] * w) - c[todo] >= np.log(u)
        out[todo[ok]] = w[ok]
        todo = todo[~ok]
    return out.reshape(kappa.shape)


def draw_vmf_noise(kappa, d, rng):
    kappa = np.asarray(kappa, dtype=np.float64)
    w = sample_polar(kappa, d, rng)
    v = rng.standard_normal(kappa.shape + (d - 1,))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return VmfNoise(w, v)


def householder_to(mu, x):
    """Reflect north-pole-frame points ``x`` so that e1 maps onto ``mu``."""
    d = mu.shape[-1]
    e1 = np.zeros(d)
    e1[0] = 1.0
    u = T.sub(e1, mu)
    uu = T.tsum(u * u, axis=-1, keepdims=True) + 1e-300
    proj = T.tsum(u * x, axis=-1, keepdims=True)
    return T.sub(x, 2.0 * u * (proj / uu))


def vmf_sample(params, rng=None, noise=None):
    """Reparameterized vMF draw: gradient reaches mu, kappa's path is stopped."""
    params.validate()
    d = params.mu.shape[-1]
    if noise is None:
        if rng is None:
            raise ContractError("vmf_sample needs an rng or pre-drawn noise")
        noise = draw_vmf_noise(params.kappa.data, d, rng)
    return householder_to(params.mu, noise.north_pole_sample())


def _kl_vmf_values(kappa, d):
    a = bessel_ratio(d / 2.0 - 1.0, kappa)
    kl = kappa * a + log_vmf_normalizer(d, kappa) - log_sphere_area_inv(d)
    return np.maximum(kl, 0.0), a


def kl_vmf_to_uniform(params):
    """KL(vMF(mu, kappa) || uniform sphere), one value per distribution."""
    params.validate()
    d = params.mu.shape[-1]
    k = params.kappa.data
    kl, a = _kl_vmf_values(k, d)
    # dKL/dkappa = kappa * A'(kappa), A' = 1 - A^2 - (d-1)/kappa * A
    dkl = k * (1.0 - a * a) - (d - 1.0) * a
    return T._make("kl_vmf", kl, (params.kappa,), lambda g: (g * dkl,))


def gauss_sample(params, rng=None, eps=None):
    params.validate()
    if eps is None:
        if rng is None:
            raise ContractError("gauss_sample needs an rng or pre-drawn noise")
        eps = rng.standard_normal(params.mu.shape)
    return params.mu + T.sqrt(params.sigma2) * eps


def kl_gauss_to_standard(params):
    """KL(N(mu, diag sigma2) || N(0, I)), summed over the last axis."""
    params.validate()
    mu, s2 = params.mu, params.sigma2
    return 0.5 * T.tsum(mu * mu + s2 - T.log(s2) - 1.0, axis=-1)
