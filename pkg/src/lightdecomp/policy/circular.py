"""Von Mises and Beta action distributions.

Log-densities are written in torch so they are differentiable in the
distribution parameters. Sampling happens in numpy on detached parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

LOG_2PI = math.log(2 * math.pi)
BETA_CLAMP = 1e-4
POSITIVE_FLOOR = 1e-3
# power series below this concentration, asymptotic expansion above
BESSEL_SWITCH = 15.0
_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 28


def log_bessel_i0(kappa):
    """log I0(kappa), differentiable and finite for large kappa.

    Both branches are evaluated on clamped inputs so that the unused branch
    never produces inf/nan gradients.
    """
    kappa = torch.as_tensor(kappa, dtype=torch.float64)
    small = kappa.clamp(max=BESSEL_SWITCH)
    q = (small / 2) ** 2
    term = torch.ones_like(small)
    total = torch.ones_like(small)
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * k)
        total = total + term
    log_small = torch.log(total)

    large = kappa.clamp(min=BESSEL_SWITCH)
    inv = 1.0 / large
    coef = 1.0
    term = torch.ones_like(large)
    total = torch.ones_like(large)
    for k in range(1, _ASYMPTOTIC_TERMS):
        coef *= (2 * k - 1) ** 2 / (8.0 * k)
        term = term * inv
        total = total + coef * term
    log_large = large - 0.5 * torch.log(2 * math.pi * large) + torch.log(total)

    return torch.where(kappa < BESSEL_SWITCH, log_small, log_large)


def bessel_i0(kappa: float) -> float:
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return math.exp(float(log_bessel_i0(kappa)))


def von_mises_log_pdf(x, mu, kappa):
    x, mu, kappa = (torch.as_tensor(t, dtype=torch.float64) for t in (x, mu, kappa))
    return kappa * torch.cos(x - mu) - LOG_2PI - log_bessel_i0(kappa)


def log_beta_fn(alpha, beta):
    return torch.lgamma(alpha) + torch.lgamma(beta) - torch.lgamma(alpha + beta)


def beta_log_pdf(x, alpha, beta, clamp: bool = True):
    x, alpha, beta = (torch.as_tensor(t, dtype=torch.float64) for t in (x, alpha, beta))
    if clamp:
        x = x.clamp(BETA_CLAMP, 1 - BETA_CLAMP)
    return (alpha - 1) * torch.log(x) + (beta - 1) * torch.log1p(-x) - log_beta_fn(alpha, beta)


def positive(raw):
    """Softplus with a floor, mapping any finite pre-activation above zero."""
    return torch.nn.functional.softplus(raw) + POSITIVE_FLOOR


@dataclass
class ActionDistribution:
    """Batched action distribution: Von Mises over hue, Beta over value."""

    mu: torch.Tensor
    kappa: torch.Tensor
    alpha: torch.Tensor
    beta: torch.Tensor

    def log_prob(self, hue, value):
        return von_mises_log_pdf(hue, self.mu, self.kappa) + beta_log_pdf(value, self.alpha, self.beta)

    def with_temperature(self, iota: float) -> "ActionDistribution":
        """Flatten (iota > 1) or sharpen (iota < 1) the distribution.

        kappa is divided by iota; Beta shapes move toward 1 as
        ``1 + (shape - 1) / iota``.
        """
        if not iota > 0:
            raise ValueError("temperature must be positive")
        if iota == 1.0:
            return self
        return ActionDistribution(
            self.mu,
            self.kappa / iota,
            (1 + (self.alpha - 1) / iota).clamp(min=POSITIVE_FLOOR),
            (1 + (self.beta - 1) / iota).clamp(min=POSITIVE_FLOOR),
        )

    def detach(self) -> "ActionDistribution":
        return ActionDistribution(self.mu.detach(), self.kappa.detach(), self.alpha.detach(), self.beta.detach())

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        mu = self.mu.detach().cpu().numpy().ravel()
        kappa = self.kappa.detach().cpu().numpy().ravel()
        hue = sample_von_mises(mu, kappa, rng)
        value = rng.beta(
            self.alpha.detach().cpu().numpy().ravel(), self.beta.detach().cpu().numpy().ravel()
        )
        shape = tuple(self.mu.shape)
        return hue.reshape(shape), value.reshape(shape)


def sample_von_mises(mu, kappa, rng: np.random.Generator) -> np.ndarray:
    """Best-Fisher rejection sampler, vectorized; returns angles in [0, 2*pi)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), mu.shape)
    out = np.empty(mu.shape)
    tiny = kappa < 1e-8
    out[tiny] = rng.uniform(0.0, 2 * np.pi, tiny.sum())

    idx = np.flatnonzero(~tiny)
    k = kappa[idx]
    tau = 1 + np.sqrt(1 + 4 * k * k)
    rho = (tau - np.sqrt(2 * tau)) / (2 * k)
    r = (1 + rho * rho) / (2 * rho)
    while idx.size:
        u1, u2, u3 = rng.uniform(size=(3, idx.size))
        z = np.cos(np.pi * u1)
        f = (1 + r * z) / (r + z)
        c = k * (r - f)
        accept = (c * (2 - c) - u2 > 0) | (np.log(c / u2) + 1 - c >= 0)
        theta = mu[idx] + np.sign(u3 - 0.5) * np.arccos(np.clip(f, -1.0, 1.0))
        out[idx[accept]] = theta[accept]
        keep = ~accept
        idx, k, r = idx[keep], k[keep], r[keep]
    out = np.mod(out, 2 * np.pi)
    out[out >= 2 * np.pi] = 0.0
    return out
