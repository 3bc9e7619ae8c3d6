"""Exact Gaussian computations: conjugate regression posteriors and grids.

For models whose Euler likelihood takes the regression form
Y ~ N(X beta, sigma^2 V) with V the fGN Toeplitz matrix, (beta, sigma)
integrate out in closed form, leaving a marginal density over the remaining
parameters theta (which enter through X and V) that can be evaluated on a
grid without Monte Carlo error.  This covers the k = 0 likelihoods of both
models and, through the exact Gaussian law of the Euler-discretized
mean-reverting model, any level k >= 1 as well (the missing data integrates
out analytically there).

Conventions follow the innovation factorization: V^{-1}-weighted cross
products are computed through ladder residuals (solve, never a dense
inverse).  The noninformative rate parameter is S/2 with
S = s - U'T^{-1}U (the limit of the conjugate family as the prior
flattens), not s/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.linalg import toeplitz as _dense_toeplitz

from .errors import NumericError, SamplerError
from .models import FouParams
from .toeplitz import (
    CholeskyLadder,
    FgnCovariance,
    as_generator,
    fgn_autocovariance,
    ladder_for,
    toeplitz_quadratic_form,
)

__all__ = [
    "RegressionStats",
    "ConjugatePrior",
    "GridPosterior",
    "FcirK0Draws",
    "regression_stats",
    "regression_stats_dense",
    "marginal_theta_logdensity",
    "conditional_sample",
    "fou_k0_grid",
    "fou_grid_posterior",
    "fou_exact_marginal",
    "fcir_k0_posterior",
    "default_gamma_grid",
    "default_hurst_grid",
]

# slightly negative S is roundoff; anything worse is a degenerate fit
S_ROUNDOFF_TOL = -1e-10


@dataclass(frozen=True)
class RegressionStats:
    """Blocks of [Y X]' V^{-1} [Y X] plus derived quantities.

    s = Y'V^{-1}Y, U = X'V^{-1}Y, T = X'V^{-1}X, beta_hat = T^{-1}U and
    S = s - U' beta_hat (the generalized residual sum of squares).
    """

    s: float
    u: np.ndarray
    t_mat: np.ndarray
    beta_hat: np.ndarray
    big_s: float
    logdet_v: float
    n: int
    d: int


def _stats_from_whitened(zy: np.ndarray, zx: np.ndarray, logdet_v: float) -> RegressionStats:
    n, d = zx.shape
    s = float(zy @ zy)
    u = zx.T @ zy
    t_mat = zx.T @ zx
    try:
        cho = cho_factor(t_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError("design matrix is rank deficient (T not positive definite)") from exc
    beta_hat = cho_solve(cho, u)
    big_s = s - float(u @ beta_hat)
    if big_s < S_ROUNDOFF_TOL:
        raise NumericError(f"negative residual quadratic form S = {big_s:g}")
    return RegressionStats(
        s=s,
        u=u,
        t_mat=t_mat,
        beta_hat=beta_hat,
        big_s=max(big_s, 0.0),
        logdet_v=logdet_v,
        n=n,
        d=d,
    )


def regression_stats(
    y: np.ndarray,
    design: np.ndarray,
    cov: FgnCovariance | None = None,
    ladder: CholeskyLadder | None = None,
) -> RegressionStats:
    """Cross products of Y ~ N(X beta, sigma^2 V) with V Toeplitz.

    ``V^{-1}``-weighted products come from the innovation residuals: with
    r = B z and variances v, z1' V^{-1} z2 = sum_j r1_j r2_j / v_j.  Pass a
    prebuilt ``ladder`` to amortize the factorization across many calls with
    the same covariance (grids do this).
    """
    y = np.asarray(y, dtype=np.float64)
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    if design.shape[0] != len(y):
        design = design.T
    if design.shape[0] != len(y):
        raise ValueError(f"design shape {design.shape} incompatible with n={len(y)}")
    if ladder is None:
        if cov is None:
            raise ValueError("provide either cov or ladder")
        if len(cov) < len(y):
            raise ValueError(f"covariance holds {len(cov)} lags, need {len(y)}")
        ladder = ladder_for(cov.hurst, cov.dt, len(y))
    sd = np.sqrt(ladder.v)
    zy = ladder.residuals(y) / sd
    zx = (ladder.b @ design) / sd[:, None]
    return _stats_from_whitened(zy, zx, float(np.sum(np.log(ladder.v))))


def regression_stats_dense(y: np.ndarray, design: np.ndarray, cov: np.ndarray) -> RegressionStats:
    """Same as ``regression_stats`` for a general dense covariance matrix."""
    y = np.asarray(y, dtype=np.float64)
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    if design.shape[0] != len(y):
        design = design.T
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance matrix not positive definite") from exc
    zy = solve_triangular(chol, y, lower=True)
    zx = solve_triangular(chol, design, lower=True)
    logdet_v = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return _stats_from_whitened(zy, zx, logdet_v)


@dataclass(frozen=True)
class ConjugatePrior:
    """sigma^2 ~ Inv-Gamma(alpha, rate); beta | sigma ~ N(mean, sigma^2 precision^{-1}).

    The noninformative prior pi proportional to 1/sigma is the limit
    precision -> 0, alpha -> -d/2, rate -> 0; pass ``None`` wherever a prior
    is expected to select that case directly.
    """

    alpha: float
    rate: float
    mean: np.ndarray
    precision: np.ndarray


def _conjugate_blocks(stats: RegressionStats, prior: ConjugatePrior):
    a_mat = stats.t_mat + prior.precision
    cho = cho_factor(a_mat)
    lam_hat = cho_solve(cho, stats.u + prior.precision @ prior.mean)
    gamma_hat = 0.5 * (
        stats.s
        + float(prior.mean @ prior.precision @ prior.mean)
        - float(lam_hat @ a_mat @ lam_hat)
    )
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return a_mat, cho, lam_hat, gamma_hat, logdet_a


def marginal_theta_logdensity(
    stats: RegressionStats,
    prior: ConjugatePrior | None = None,
    log_pi_theta: float = 0.0,
) -> float:
    """Unnormalized log marginal of theta with (beta, sigma^2) integrated out.

    Noninformative (prior=None):
        log pi(theta) - 1/2 [ (n-d) log(S/2) + log|T| + log|V| ]
    Conjugate:
        log pi(theta) - 1/2 [ (2 alpha + n) log(rate + gamma_hat)
                              + log|T + Omega| + log|V| ]
    """
    if prior is None:
        if stats.big_s <= 0.0:
            raise NumericError("degenerate fit: S <= 0, marginal density undefined")
        return log_pi_theta - 0.5 * (
            (stats.n - stats.d) * np.log(0.5 * stats.big_s)
            + float(np.linalg.slogdet(stats.t_mat)[1])
            + stats.logdet_v
        )
    _, _, _, gamma_hat, logdet_a = _conjugate_blocks(stats, prior)
    total_rate = prior.rate + gamma_hat
    if total_rate <= 0.0:
        raise NumericError("degenerate fit: posterior rate <= 0")
    return log_pi_theta - 0.5 * (
        (2.0 * prior.alpha + stats.n) * np.log(total_rate) + logdet_a + stats.logdet_v
    )


def conditional_sample(
    stats: RegressionStats,
    prior: ConjugatePrior | None = None,
    rng: np.random.Generator | int | None = None,
) -> tuple[float, np.ndarray]:
    """One draw of (sigma^2, beta) given theta and the data.

    sigma^2 ~ Inv-Gamma(shape, rate): noninformative shape (n-d)/2, rate S/2;
    conjugate shape alpha + n/2, rate prior.rate + gamma_hat.  Then
    beta | sigma ~ N(center, sigma^2 A^{-1}) with A = T (+ Omega), sampled
    through the Cholesky factor of A.
    """
    rng = as_generator(rng)
    if prior is None:
        shape = 0.5 * (stats.n - stats.d)
        rate = 0.5 * stats.big_s
        center = stats.beta_hat
        a_mat = stats.t_mat
    else:
        a_mat, _, center, gamma_hat, _ = _conjugate_blocks(stats, prior)
        shape = prior.alpha + 0.5 * stats.n
        rate = prior.rate + gamma_hat
    sigma2 = rate / rng.gamma(shape)
    chol = np.linalg.cholesky(a_mat)
    z = rng.standard_normal(stats.d)
    beta = center + np.sqrt(sigma2) * solve_triangular(chol.T, z, lower=False)
    return float(sigma2), beta


# ---------------------------------------------------------------------------
# Grid posteriors
# ---------------------------------------------------------------------------


class GridPosterior:
    """Log density tabulated on a rectangular parameter grid.

    Stores the unnormalized log density; exposes the normalized density
    (trapezoid rule), 1-d marginals, and moment / quantile summaries.
    """

    def __init__(self, axis_names, axes, log_density):
        self.axis_names = tuple(axis_names)
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
        self.log_density = np.asarray(log_density, dtype=np.float64)
        if self.log_density.shape != tuple(len(a) for a in self.axes):
            raise ValueError("log_density shape does not match the axes")
        shifted = np.exp(self.log_density - self.log_density.max())
        z = shifted
        for ax in range(len(self.axes) - 1, -1, -1):
            z = np.trapezoid(z, self.axes[ax], axis=ax)
        self.log_norm = float(np.log(z)) + self.log_density.max()
        self.density = shifted / float(z)

    def _axis(self, name: str) -> int:
        return self.axis_names.index(name)

    def marginal(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(axis values, normalized marginal density) for one parameter."""
        ax = self._axis(name)
        dens = self.density
        for other in range(len(self.axes) - 1, -1, -1):
            if other != ax:
                dens = np.trapezoid(dens, self.axes[other], axis=other)
        return self.axes[ax], dens

    def marginal_cdf(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        from scipy.integrate import cumulative_trapezoid

        x, dens = self.marginal(name)
        cdf = np.concatenate([[0.0], cumulative_trapezoid(dens, x)])
        return x, cdf / cdf[-1]

    def mean(self, name: str) -> float:
        x, dens = self.marginal(name)
        return float(np.trapezoid(x * dens, x) / np.trapezoid(dens, x))

    def quantile(self, name: str, q) -> np.ndarray:
        x, cdf = self.marginal_cdf(name)
        return np.interp(np.atleast_1d(q), cdf, x)

    def mode(self, name: str) -> float:
        x, dens = self.marginal(name)
        return float(x[np.argmax(dens)])

    def to_csv(self, path) -> None:
        """Long-format CSV: one row per grid node with the normalized density."""
        import csv

        mesh = np.meshgrid(*self.axes, indexing="ij")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.axis_names) + ["density"])
            for idx in np.ndindex(self.density.shape):
                writer.writerow([f"{m[idx]:.12g}" for m in mesh] + [f"{self.density[idx]:.12g}"])


def default_gamma_grid(dt_obs: float, n: int = 64) -> np.ndarray:
    """Log-spaced mean-reversion grid spanning [0.05, 20] per unit dT."""
    return np.geomspace(0.05 / dt_obs, 20.0 / dt_obs, n)


def default_hurst_grid(n: int = 128) -> np.ndarray:
    return np.linspace(0.01, 0.99, n)


def fou_k0_grid(
    x_obs: np.ndarray,
    dt: float,
    gamma_grid: np.ndarray | None = None,
    hurst_grid: np.ndarray | None = None,
) -> GridPosterior:
    """Exact k = 0 Euler grid posterior of (gamma, H) for the fou model.

    Casts the Euler recursion as the regression
    y_i = eta dt + eps_i with y_i = X_{i+1} + (gamma dt - 1) X_i, eta =
    gamma mu and fGN errors, under the flat prior on (gamma, eta, H) with
    pi proportional to 1/sigma; (eta, sigma) integrate out in closed form.
    Costs one ladder per H node; gamma sweeps reuse its residuals.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    gammas = default_gamma_grid(dt) if gamma_grid is None else np.asarray(gamma_grid)
    hursts = default_hurst_grid() if hurst_grid is None else np.asarray(hurst_grid)
    if np.any(gammas <= 0) or np.any((hursts <= 0) | (hursts >= 1)):
        raise ValueError("grids must satisfy gamma > 0 and 0 < H < 1")
    n = len(x_obs) - 1
    dx = np.diff(x_obs)
    x_head = x_obs[:-1]
    ones = np.ones(n)
    logdens = np.empty((len(gammas), len(hursts)))
    for j, h in enumerate(hursts):
        ladder = ladder_for(float(h), dt, n)
        v = ladder.v
        r_dx = ladder.residuals(dx)
        r_xh = ladder.residuals(x_head)
        r_one = ladder.residuals(ones) * dt
        logdet_v = float(np.sum(np.log(v)))
        t_val = float(np.sum(r_one * r_one / v))
        for i, g in enumerate(gammas):
            ry = r_dx + g * dt * r_xh
            s = float(np.sum(ry * ry / v))
            u = float(np.sum(ry * r_one / v))
            big_s = s - u * u / t_val
            if big_s <= 0:
                logdens[i, j] = -np.inf
                continue
            logdens[i, j] = -0.5 * ((n - 1) * np.log(0.5 * big_s) + np.log(t_val) + logdet_v)
    return GridPosterior(("gamma", "hurst"), (gammas, hursts), logdens)


def _phi_powers(gamma: float, dt: float, m: int) -> np.ndarray:
    # phi_i = (1 - gamma dt)^i, the Euler autoregression weights
    return (1.0 - gamma * dt) ** np.arange(m + 1)


def _observed_rows(n_obs: int, level: int) -> np.ndarray:
    # complete-data row of X_{n 2^k} in the (X_1 .. X_M) block, 0-indexed
    return np.arange(1, n_obs + 1) * 2**level - 1


def fou_exact_marginal(
    x_obs: np.ndarray,
    params: FouParams,
    level: int,
    dt: float,
) -> float:
    """Log density of the observations under the level-k Euler law.

    The complete data is Gaussian: X = b + sigma A dB with
    A colj->rowi = phi_{i-j}, phi_i = (1 - gamma dt_k)^i and mean
    b_n = mu + phi_n (X_0 - mu).  Restricting the mean vector and the
    covariance sigma^2 A V A' (computed through the circulant spectrum) to
    the observed rows integrates the missing data out analytically.  A
    non-positive-definite restricted covariance gets one jitter retry
    (1e-10 * trace / n on the diagonal) before raising NumericError.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    n_obs = len(x_obs) - 1
    if level < 0:
        raise ValueError("level must be >= 0")
    m = n_obs * 2**level
    dt_k = dt / 2**level
    phi = _phi_powers(params.gamma_rev, dt_k, m)
    a_mat = _dense_toeplitz(phi[:m], np.zeros(m))
    cov = fgn_autocovariance(params.hurst, dt_k, m - 1)
    sigma_full = params.sigma**2 * toeplitz_quadratic_form(a_mat, cov)
    rows = _observed_rows(n_obs, level)
    sigma_obs = sigma_full[np.ix_(rows, rows)]
    mean_obs = params.mu_mean + phi[rows + 1] * (x_obs[0] - params.mu_mean)
    resid = x_obs[1:] - mean_obs
    for attempt in range(2):
        try:
            cho = cho_factor(sigma_obs, lower=True)
            break
        except np.linalg.LinAlgError:
            if attempt == 1:
                raise NumericError(
                    f"observed-data covariance not positive definite at level {level}"
                ) from None
            jitter = 1e-10 * np.trace(sigma_obs) / len(rows)
            sigma_obs = sigma_obs + jitter * np.eye(len(rows))
    z = solve_triangular(cho[0], resid, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return -0.5 * (float(z @ z) + logdet + n_obs * np.log(2.0 * np.pi))


def fou_grid_posterior(
    x_obs: np.ndarray,
    dt: float,
    level: int,
    gamma_grid: np.ndarray | None = None,
    hurst_grid: np.ndarray | None = None,
) -> GridPosterior:
    """Level-k grid posterior of (gamma, H) with (mu, sigma) integrated out.

    The observed block of the exact Euler law is itself a regression
    Y - phi_obs X_0 = mu (1 - phi_obs) + error, error ~ N(0, sigma^2
    Sigma_obs(gamma, H)), so the conjugate machinery applies with the
    transformed noninformative prior pi(gamma, H) proportional to gamma.
    At k = 0 this reproduces ``fou_k0_grid`` exactly (up to a constant);
    for k >= 1 it is the posterior "computed without Monte Carlo error"
    that MCMC runs are validated against.
    """
    x_obs = np.asarray(x_obs, dtype=np.float64)
    gammas = default_gamma_grid(dt) if gamma_grid is None else np.asarray(gamma_grid)
    hursts = default_hurst_grid() if hurst_grid is None else np.asarray(hurst_grid)
    n_obs = len(x_obs) - 1
    m = n_obs * 2**level
    dt_k = dt / 2**level
    rows = _observed_rows(n_obs, level)
    cols = np.arange(m)
    lag = rows[:, None] - cols[None, :]  # row i of A holds phi_{i - j}
    valid = lag >= 0
    logdens = np.empty((len(gammas), len(hursts)))
    for j, h in enumerate(hursts):
        v_mat = fgn_autocovariance(float(h), dt_k, m - 1).toeplitz()
        for i, g in enumerate(gammas):
            phi = _phi_powers(float(g), dt_k, m)
            w = np.where(valid, phi[np.clip(lag, 0, m)], 0.0)
            sigma_obs = w @ v_mat @ w.T
            phi_obs = phi[rows + 1]
            y = x_obs[1:] - phi_obs * x_obs[0]
            design = 1.0 - phi_obs
            try:
                stats = regression_stats_dense(y, design, sigma_obs)
                logdens[i, j] = marginal_theta_logdensity(stats, log_pi_theta=float(np.log(g)))
            except NumericError:
                logdens[i, j] = -np.inf
    return GridPosterior(("gamma", "hurst"), (gammas, hursts), logdens)


# ---------------------------------------------------------------------------
# fcir k = 0 posterior by rejection
# ---------------------------------------------------------------------------


@dataclass
class FcirK0Draws:
    """Accepted k = 0 posterior draws for the square-root model."""

    hurst: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    rejection_rate: float
    grid: GridPosterior  # marginal of H under the unrestricted regression


def fcir_k0_posterior(
    x_obs: np.ndarray,
    dt: float,
    n_draws: int,
    rng: np.random.Generator | int | None = None,
    hurst_grid: np.ndarray | None = None,
    enforce_restrictions: bool = True,
) -> FcirK0Draws:
    """Exact k = 0 posterior of (gamma, beta, sigma^2, H) for the fcir model.

    On the unit-diffusion scale Y = 2 sqrt(X) the Euler increments follow
    y_i = -gamma Y_i dt / 2 + beta dt / Y_i + eps_i with fGN errors and the
    noninformative prior 1/sigma.  H is drawn from its grid marginal
    (uniform jitter within a cell), then (sigma^2, (gamma, beta)) from the
    conditional normal-inverse-gamma; draws violating gamma > 0 or
    beta + sigma^2/2 > 0 are rejected, giving exact draws from the
    restricted posterior.  Aborts if fewer than 1% of proposals survive.
    """
    rng = as_generator(rng)
    x_obs = np.asarray(x_obs, dtype=np.float64)
    if np.any(x_obs <= 0):
        raise ValueError("fcir observations must be strictly positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    hursts = default_hurst_grid() if hurst_grid is None else np.asarray(hurst_grid)

    y_path = 2.0 * np.sqrt(x_obs)
    y = np.diff(y_path)
    head = y_path[:-1]
    design = np.column_stack([-0.5 * head * dt, dt / head])
    n = len(y)

    stats_by_node = []
    logdens = np.empty(len(hursts))
    for j, h in enumerate(hursts):
        ladder = ladder_for(float(h), dt, n)
        stats = regression_stats(y, design, ladder=ladder)
        stats_by_node.append(stats)
        logdens[j] = marginal_theta_logdensity(stats)
    grid = GridPosterior(("hurst",), (hursts,), logdens)

    # node probabilities = density * cell width (trapezoid cells)
    widths = np.gradient(hursts)
    probs = grid.density * widths
    probs = probs / probs.sum()

    out_h = np.empty(n_draws)
    out_gamma = np.empty(n_draws)
    out_beta = np.empty(n_draws)
    out_sigma2 = np.empty(n_draws)
    accepted = 0
    attempts = 0
    max_attempts = max(200 * n_draws, 10_000)
    while accepted < n_draws:
        if attempts >= max_attempts or (
            attempts >= 2000 and accepted < 0.01 * attempts
        ):
            raise SamplerError(
                f"fcir restrictions rejected {attempts - accepted} of {attempts} draws; "
                "model badly mismatched to the data"
            )
        node = int(rng.choice(len(hursts), p=probs))
        attempts += 1
        sigma2, coef = conditional_sample(stats_by_node[node], rng=rng)
        gamma, beta = float(coef[0]), float(coef[1])
        if enforce_restrictions and not (gamma > 0 and beta + 0.5 * sigma2 > 0):
            continue
        out_h[accepted] = hursts[node] + rng.uniform(-0.5, 0.5) * widths[node]
        out_gamma[accepted] = gamma
        out_beta[accepted] = beta
        out_sigma2[accepted] = sigma2
        accepted += 1
    return FcirK0Draws(
        hurst=out_h,
        gamma=out_gamma,
        beta=out_beta,
        sigma2=out_sigma2,
        rejection_rate=1.0 - n_draws / attempts,
        grid=grid,
    )
