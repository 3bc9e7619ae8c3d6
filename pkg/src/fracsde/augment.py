"""Level-k data augmentation: complete-data potential and its gradients.

The complete data at level k carries 2^k - 1 imputed points between
consecutive observations.  The potential is the negative log posterior
kernel of (parameters, missing data) under the Euler discretization with
fGN driving noise,

    potential = -loglik(noise increments | H) + M log(sigma) - log(prior),

and its gradients in the path, drift parameters and sigma come from the
innovation (Durbin-Levinson) factorization in O(M^2); the Hurst derivative
is a central finite difference (two extra ladder builds per call).

Domain violations are signalled by a +inf potential value, never an
exception, so Hamiltonian trajectories treat them as infinite energy
barriers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .models import SdeModel
from .toeplitz import gaussian_loglik, ladder_for

__all__ = [
    "CompleteData",
    "ParamState",
    "PriorSpec",
    "GradPotential",
    "refine",
    "noise_increments",
    "potential",
    "grad_potential",
    "AugmentedTarget",
    "fou_noninformative_prior",
    "fcir_noninformative_prior",
    "prior_by_name",
    "HURST_EPS",
]

# H is restricted to (HURST_EPS, 1 - HURST_EPS)
HURST_EPS = 1e-4
# central-difference step for the Hurst derivative, clamped near the bounds
HURST_FD_STEP = 1e-5


@dataclass(frozen=True)
class CompleteData:
    """Observed path augmented to resolution level k.

    ``values`` has length n_obs * 2^level + 1; entries at indices that are
    multiples of 2^level are observed and are never mutated by samplers,
    the rest are imputed.  ``dt`` is the fine step dT / 2^level.
    """

    level: int
    values: np.ndarray
    dt: float
    n_obs: int

    def __post_init__(self):
        expected = self.n_obs * 2**self.level + 1
        if len(self.values) != expected:
            raise ValueError(
                f"values has length {len(self.values)}, expected {expected} "
                f"for n_obs={self.n_obs} at level {self.level}"
            )

    @classmethod
    def from_observed(cls, x_obs: np.ndarray, dt_obs: float) -> "CompleteData":
        x_obs = np.asarray(x_obs, dtype=np.float64)
        return cls(level=0, values=x_obs.copy(), dt=dt_obs, n_obs=len(x_obs) - 1)

    @property
    def stride(self) -> int:
        return 2**self.level

    @property
    def n_increments(self) -> int:
        return self.n_obs * self.stride

    @property
    def obs_index(self) -> np.ndarray:
        return np.arange(0, self.n_increments + 1, self.stride)

    @property
    def miss_index(self) -> np.ndarray:
        mask = np.ones(self.n_increments + 1, dtype=bool)
        mask[self.obs_index] = False
        return np.nonzero(mask)[0]

    def observed_values(self) -> np.ndarray:
        return self.values[self.obs_index]

    def with_values(self, values: np.ndarray) -> "CompleteData":
        return replace(self, values=values)


def refine(data: CompleteData, to_level: int) -> CompleteData:
    """Raise the augmentation level, interpolating new missing entries.

    Every currently filled point (observed or imputed) is preserved; new
    points are initialized on the straight line between their neighbours.
    Observed entries are carried over bit-exactly.
    """
    if to_level < data.level:
        raise ValueError(f"cannot coarsen from level {data.level} to {to_level}")
    if to_level == data.level:
        return data
    factor = 2 ** (to_level - data.level)
    old = data.values
    m_new = (len(old) - 1) * factor
    new = np.interp(np.arange(m_new + 1) / factor, np.arange(len(old)), old)
    new[::factor] = old  # exact carry-over, no interpolation roundoff
    return CompleteData(
        level=to_level, values=new, dt=data.dt / factor, n_obs=data.n_obs
    )


@dataclass(frozen=True)
class ParamState:
    """Sampled parameter block: drift parameters, diffusion scale, Hurst."""

    theta: np.ndarray
    sigma: float
    hurst: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.sigma, self.hurst]])


@dataclass(frozen=True)
class PriorSpec:
    """Log prior density and its gradient in (theta..., sigma, hurst).

    ``log_density`` returns -inf outside the support; ``gradient`` returns
    the natural-scale gradient vector of length theta_dim + 2.
    """

    name: str
    log_density: Callable[[ParamState], float]
    gradient: Callable[[ParamState], np.ndarray]


def fou_noninformative_prior() -> PriorSpec:
    """pi(gamma, mu, sigma, H) proportional to gamma / sigma on gamma, sigma > 0."""

    def log_density(state: ParamState) -> float:
        gamma = state.theta[0]
        if gamma <= 0 or state.sigma <= 0:
            return -np.inf
        return float(np.log(gamma) - np.log(state.sigma))

    def gradient(state: ParamState) -> np.ndarray:
        return np.array([1.0 / state.theta[0], 0.0, -1.0 / state.sigma, 0.0])

    return PriorSpec("fou-noninformative", log_density, gradient)


def fcir_noninformative_prior() -> PriorSpec:
    """pi(gamma, beta, sigma, H) proportional to 1 / sigma on the restricted set.

    Support: gamma > 0 and beta + sigma^2 / 2 > 0 (equivalently mu > 0 in
    the natural parametrization).
    """

    def log_density(state: ParamState) -> float:
        gamma, beta = state.theta
        if gamma <= 0 or state.sigma <= 0 or beta + 0.5 * state.sigma**2 <= 0:
            return -np.inf
        return float(-np.log(state.sigma))

    def gradient(state: ParamState) -> np.ndarray:
        return np.array([0.0, 0.0, -1.0 / state.sigma, 0.0])

    return PriorSpec("fcir-noninformative", log_density, gradient)


def prior_by_name(name: str) -> PriorSpec:
    try:
        return {
            "fou-noninformative": fou_noninformative_prior,
            "fcir-noninformative": fcir_noninformative_prior,
        }[name]()
    except KeyError:
        raise ValueError(f"unknown prior {name!r}") from None


def noise_increments(data: CompleteData, model: SdeModel, state: ParamState) -> np.ndarray:
    """Driving-noise increments implied by the path under the Euler scheme.

    dG_n = (X_{n+1} - X_n - drift(X_n, theta) dt) / sigma, length M.
    """
    x = data.values
    if not model.in_domain(x):
        raise ValueError(f"path leaves the {model.name} domain {model.domain}")
    drift = model.drift(x[:-1], state.theta)
    return (np.diff(x) - drift * data.dt) / state.sigma


def _state_valid(data: CompleteData, model: SdeModel, state: ParamState) -> bool:
    return (
        np.isfinite(state.sigma)
        and state.sigma > 0
        and bool(np.all(np.isfinite(state.theta)))
        and HURST_EPS < state.hurst < 1.0 - HURST_EPS
        and model.in_domain(data.values)
    )


def potential(
    data: CompleteData, model: SdeModel, state: ParamState, prior: PriorSpec
) -> float:
    """Negative log posterior kernel of (path, parameters); +inf if invalid.

    The 2 pi normalizing constant is kept so that values are comparable with
    dense-oracle densities; only differences matter for sampling.
    """
    if not _state_valid(data, model, state):
        return np.inf
    log_prior = prior.log_density(state)
    if not np.isfinite(log_prior):
        return np.inf
    m = data.n_increments
    dg = noise_increments(data, model, state)
    ladder = ladder_for(state.hurst, data.dt, m)
    loglik, _, _ = gaussian_loglik(ladder, dg)
    return -loglik + m * np.log(state.sigma) - log_prior


@dataclass(frozen=True)
class GradPotential:
    """Gradient blocks of the potential (missing-path, theta, sigma, hurst)."""

    x_miss: np.ndarray
    theta: np.ndarray
    sigma: float
    hurst: float


def _hurst_fd_step(hurst: float) -> float:
    return min(HURST_FD_STEP, 0.5 * (hurst - HURST_EPS), 0.5 * (1.0 - HURST_EPS - hurst))


def grad_potential(
    data: CompleteData,
    model: SdeModel,
    state: ParamState,
    prior: PriorSpec,
    compute_hurst: bool = True,
) -> GradPotential:
    """Analytic gradients of the potential via the innovation factorization.

    With r the innovations of the noise increments, w = r / v and
    g = B' w, direct differentiation gives (index n over path points,
    increments live between n and n+1):

        d/dX_n     = (g_{n-1} - (1 + mu_x(X_n) dt) g_n) / sigma
        d/dtheta_i = -(dt / sigma) sum_n mu_i(X_n) g_n   - dlog pi
        d/dsigma   = (M - sum_j r_j^2 / v_j) / sigma     - dlog pi

    (the signs were fixed against a finite-difference oracle).  The Hurst
    derivative differences the Gaussian term at H +/- h with the increments
    held fixed; only missing-path coordinates are returned since observed
    ones are never updated.  Invalid inputs yield NaN-filled blocks.
    """
    p = model.theta_dim
    if not _state_valid(data, model, state) or not np.isfinite(prior.log_density(state)):
        nan = np.nan
        return GradPotential(
            x_miss=np.full(len(data.miss_index), nan),
            theta=np.full(p, nan),
            sigma=nan,
            hurst=nan,
        )

    x = data.values
    m = data.n_increments
    dt = data.dt
    sigma = state.sigma
    dg = noise_increments(data, model, state)
    ladder = ladder_for(state.hurst, dt, m)
    r = ladder.residuals(dg)
    w = r / ladder.v
    g = ladder.adjoint(w)

    prior_grad = prior.gradient(state)

    miss = data.miss_index  # all in 1..M-1: endpoints are observed
    mu_x = np.asarray(model.drift_dx(x[miss], state.theta))
    gx = (g[miss - 1] - (1.0 + mu_x * dt) * g[miss]) / sigma

    mu_th = np.atleast_2d(model.drift_dtheta(x[:-1], state.theta))
    g_theta = -(dt / sigma) * (mu_th @ g) - prior_grad[:p]

    quad = float(np.sum(r * r / ladder.v))
    g_sigma = (m - quad) / sigma - prior_grad[p]

    if compute_hurst:
        h = _hurst_fd_step(state.hurst)

        def gaussian_neg_loglik(hval: float) -> float:
            lad = ladder_for(hval, dt, m)
            rr = lad.residuals(dg)
            return 0.5 * float(np.sum(rr * rr / lad.v + np.log(lad.v)))

        g_hurst = (
            gaussian_neg_loglik(state.hurst + h) - gaussian_neg_loglik(state.hurst - h)
        ) / (2.0 * h) - prior_grad[p + 1]
    else:
        g_hurst = np.nan

    return GradPotential(x_miss=gx, theta=np.asarray(g_theta), sigma=float(g_sigma), hurst=float(g_hurst))


class AugmentedTarget:
    """Potential on unconstrained coordinates, for gradient-based samplers.

    Coordinates are laid out as [missing path, theta, log sigma, logit H],
    restricted to the ``blocks`` selected at construction.  Positive drift
    parameters are log-transformed; H is mapped through a scaled logit so
    trajectories cannot leave (HURST_EPS, 1 - HURST_EPS).  The Jacobian of
    the transformation is folded into the potential, and natural-scale
    gradients are chain-ruled.

    Frozen blocks read their values from the stored base data / state,
    updated via ``set_values`` / ``set_state`` (used by the within-Gibbs
    sweeps).
    """

    ALL_BLOCKS = ("path", "theta", "sigma", "hurst")

    def __init__(
        self,
        data: CompleteData,
        model: SdeModel,
        prior: PriorSpec,
        blocks: tuple[str, ...] = ALL_BLOCKS,
    ):
        unknown = set(blocks) - set(self.ALL_BLOCKS)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")
        self.data = data
        self.model = model
        self.prior = prior
        self.blocks = tuple(b for b in self.ALL_BLOCKS if b in blocks)
        self._base_values = data.values.copy()
        self._base_state: ParamState | None = None
        self._miss = data.miss_index
        self._n_miss = len(self._miss) if "path" in self.blocks else 0
        self._p = model.theta_dim

    # -- frozen-block management -------------------------------------------

    def set_state(self, state: ParamState) -> None:
        self._base_state = state

    def set_values(self, values: np.ndarray) -> None:
        self._base_values = np.asarray(values, dtype=np.float64).copy()

    # -- coordinate packing --------------------------------------------------

    @property
    def dim(self) -> int:
        n = self._n_miss
        if "theta" in self.blocks:
            n += self._p
        if "sigma" in self.blocks:
            n += 1
        if "hurst" in self.blocks:
            n += 1
        return n

    def _theta_to_u(self, theta: np.ndarray) -> np.ndarray:
        u = np.asarray(theta, dtype=np.float64).copy()
        for i, pos in enumerate(self.model.theta_positive):
            if pos:
                u[i] = np.log(theta[i])
        return u

    def _u_to_theta(self, u: np.ndarray) -> np.ndarray:
        theta = np.asarray(u, dtype=np.float64).copy()
        with np.errstate(over="ignore"):  # inf is caught by the domain checks
            for i, pos in enumerate(self.model.theta_positive):
                if pos:
                    theta[i] = np.exp(u[i])
        return theta

    @staticmethod
    def _h_to_w(hurst: float) -> float:
        return float(logit((hurst - HURST_EPS) / (1.0 - 2.0 * HURST_EPS)))

    @staticmethod
    def _w_to_h(w: float) -> float:
        return float(HURST_EPS + (1.0 - 2.0 * HURST_EPS) * expit(w))

    def pack(self, values: np.ndarray, state: ParamState) -> np.ndarray:
        parts = []
        if "path" in self.blocks:
            parts.append(np.asarray(values, dtype=np.float64)[self._miss])
        if "theta" in self.blocks:
            parts.append(self._theta_to_u(state.theta))
        if "sigma" in self.blocks:
            parts.append([np.log(state.sigma)])
        if "hurst" in self.blocks:
            parts.append([self._h_to_w(state.hurst)])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in parts])

    def unpack(self, q: np.ndarray) -> tuple[np.ndarray, ParamState]:
        """Overlay active coordinates onto the frozen base; natural scale."""
        values = self._base_values.copy()
        base = self._base_state
        i = 0
        if "path" in self.blocks:
            values[self._miss] = q[: self._n_miss]
            i = self._n_miss
        if "theta" in self.blocks:
            theta = self._u_to_theta(q[i : i + self._p])
            i += self._p
        else:
            theta = base.theta
        if "sigma" in self.blocks:
            with np.errstate(over="ignore"):
                sigma = float(np.exp(q[i]))
            i += 1
        else:
            sigma = base.sigma
        if "hurst" in self.blocks:
            hurst = self._w_to_h(q[i])
            i += 1
        else:
            hurst = base.hurst
        return values, ParamState(theta=theta, sigma=sigma, hurst=hurst)

    # -- potential and gradient ----------------------------------------------

    def _log_jacobian(self, q: np.ndarray, state: ParamState) -> float:
        # log |d(natural)/d(unconstrained)| for the transformed coordinates
        lj = 0.0
        if "theta" in self.blocks:
            for i, pos in enumerate(self.model.theta_positive):
                if pos:
                    lj += np.log(state.theta[i])
        if "sigma" in self.blocks:
            lj += np.log(state.sigma)
        if "hurst" in self.blocks:
            h = state.hurst
            lj += np.log(
                (h - HURST_EPS) * (1.0 - HURST_EPS - h) / (1.0 - 2.0 * HURST_EPS)
            )
        return lj

    def potential(self, q: np.ndarray) -> float:
        values, state = self.unpack(q)
        pot = potential(self.data.with_values(values), self.model, state, self.prior)
        if not np.isfinite(pot):
            return np.inf
        return pot - self._log_jacobian(q, state)

    def gradient(self, q: np.ndarray) -> np.ndarray:
        values, state = self.unpack(q)
        grad = grad_potential(
            self.data.with_values(values),
            self.model,
            state,
            self.prior,
            compute_hurst="hurst" in self.blocks,
        )
        out = np.empty(self.dim)
        i = 0
        if "path" in self.blocks:
            out[: self._n_miss] = grad.x_miss
            i = self._n_miss
        if "theta" in self.blocks:
            gth = grad.theta.copy()
            for j, pos in enumerate(self.model.theta_positive):
                if pos:
                    gth[j] = gth[j] * state.theta[j] - 1.0
            out[i : i + self._p] = gth
            i += self._p
        if "sigma" in self.blocks:
            out[i] = grad.sigma * state.sigma - 1.0
            i += 1
        if "hurst" in self.blocks:
            h = state.hurst
            span = 1.0 - 2.0 * HURST_EPS
            prob = (h - HURST_EPS) / span
            dh_dw = span * prob * (1.0 - prob)
            out[i] = grad.hurst * dh_dw - (1.0 - 2.0 * prob)
            i += 1
        return out

    def state_of(self, q: np.ndarray) -> ParamState:
        return self.unpack(q)[1]

    def values_of(self, q: np.ndarray) -> np.ndarray:
        return self.unpack(q)[0]
