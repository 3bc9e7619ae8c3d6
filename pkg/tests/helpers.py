"""Independent oracles used across the test suite.

Everything here deliberately avoids the package's own fast paths: dense
linear algebra instead of ladders, quadrature instead of closed forms,
direct white-noise formulas instead of the general potential.  Oracle
results are what the implementation is measured against.
"""

import numpy as np
from scipy import integrate, special
from scipy.linalg import toeplitz
from scipy.stats import multivariate_normal


def fgn_gamma_dense(hurst, dt, m):
    """Reference fGN autocovariance sequence, written out independently."""
    k = np.arange(m, dtype=float)
    return 0.5 * dt ** (2 * hurst) * (
        (k + 1) ** (2 * hurst) + np.abs(k - 1) ** (2 * hurst) - 2 * k ** (2 * hurst)
    )


def dense_mvn_logpdf(z, cov):
    """Dense multivariate-normal log density at z, zero mean."""
    return float(multivariate_normal(mean=np.zeros(len(z)), cov=cov).logpdf(z))


def ou_spectral_density(xi, gamma_rev, sigma, hurst):
    w = 2 * np.pi * np.abs(xi)
    c = sigma**2 * special.gamma(2 * hurst + 1) * np.sin(np.pi * hurst)
    return c * w ** (1 - 2 * hurst) / (gamma_rev**2 + w**2)


def fou_acf_fourier_oracle(t, gamma_rev=1.0, sigma=1.0, hurst=0.75):
    """High-resolution quadrature of the spectral representation.

    Splits at a finite frequency: adaptive quadrature below (handles the
    |xi|^{1-2H} endpoint), oscillatory-weight quadrature on the tail.
    """
    t = abs(t)
    split = 5.0 * max(1.0, gamma_rev)
    if t == 0.0:
        a, _ = integrate.quad(
            lambda x: ou_spectral_density(x, gamma_rev, sigma, hurst), 0, split, limit=400
        )
        b, _ = integrate.quad(
            lambda x: ou_spectral_density(x, gamma_rev, sigma, hurst), split, np.inf, limit=400
        )
        return 2 * (a + b)
    a, _ = integrate.quad(
        lambda x: np.cos(2 * np.pi * t * x) * ou_spectral_density(x, gamma_rev, sigma, hurst),
        0,
        split,
        limit=4000,
    )
    b, _ = integrate.quad(
        lambda x: ou_spectral_density(x, gamma_rev, sigma, hurst),
        split,
        np.inf,
        weight="cos",
        wvar=2 * np.pi * t,
        limit=400,
    )
    return 2 * (a + b)


def white_noise_potential(values, theta, sigma, hurst_unused, dt, drift_fn, log_prior):
    """Independently coded Euler potential for iid Normal(0, dt) noise."""
    dx = np.diff(values)
    dg = (dx - drift_fn(values[:-1], theta) * dt) / sigma
    m = len(dg)
    loglik = -0.5 * np.sum(dg**2 / dt) - 0.5 * m * np.log(2 * np.pi * dt)
    return -loglik + m * np.log(sigma) - log_prior


def dense_euler_complete_logpdf(values, theta, sigma, hurst, dt, drift_fn, gamma_fn=None):
    """Exact complete-data log density of the Euler model, dense oracle.

    Conditions on values[0]; uses the Jacobian of the increment map
    (sigma^{-M}) times the dense fGN normal density of the increments.
    """
    dx = np.diff(values)
    dg = (dx - drift_fn(values[:-1], theta) * dt) / sigma
    m = len(dg)
    gam = fgn_gamma_dense(hurst, dt, m) if gamma_fn is None else gamma_fn(hurst, dt, m)
    return dense_mvn_logpdf(dg, toeplitz(gam)) - m * np.log(sigma)


def ks_distance_to_grid(samples, axis, density):
    """Kolmogorov-Smirnov distance between draws and a gridded density."""
    from scipy.integrate import cumulative_trapezoid

    cdf_grid = np.concatenate([[0.0], cumulative_trapezoid(density, axis)])
    cdf_grid = cdf_grid / cdf_grid[-1]
    samples = np.sort(np.asarray(samples))
    n = len(samples)
    cdf_at = np.interp(samples, axis, cdf_grid, left=0.0, right=1.0)
    emp_hi = np.arange(1, n + 1) / n
    emp_lo = np.arange(0, n) / n
    return float(np.max(np.maximum(np.abs(emp_hi - cdf_at), np.abs(cdf_at - emp_lo))))


def split_brownian_increments(noise, dt, rng):
    """Refine Brownian increments dt -> dt/2 by conditional (bridge) halving."""
    n = len(noise)
    half = rng.normal(noise / 2.0, np.sqrt(dt / 4.0))
    out = np.empty(2 * n)
    out[0::2] = half
    out[1::2] = noise - half
    return out
