"""Hybrid Monte Carlo and Metropolis-within-Gibbs over (X_miss, theta, sigma, H).

Two sampling strategies over the augmented posterior:

* ``run_hmc_full`` - one Hamiltonian update of every unknown per iteration
  (missing path and parameters jointly);
* ``run_gibbs`` - componentwise random-walk Metropolis on the parameters
  alternated with a Hamiltonian update of the missing path only.

Both operate on the unconstrained coordinates provided by
``augment.AugmentedTarget``.  Step sizes are tuned by dual averaging during
warmup (target acceptance 0.7 for HMC, 0.44 for the scalar random walks);
the mass vector defaults to the identity with an optional variance-matching
adaptation halfway through warmup.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugmentedTarget, CompleteData, ParamState, PriorSpec
from .errors import SamplerError
from .models import SdeModel
from .toeplitz import as_generator

__all__ = [
    "HmcConfig",
    "ChainOutput",
    "ChainDiagnostics",
    "leapfrog",
    "hmc_step",
    "run_hmc_full",
    "run_gibbs",
    "chain_diagnostics",
    "autocorrelation",
    "effective_sample_size",
    "default_initial_state",
]

# sampler aborts if a post-warmup window of this many iterations accepts
# less than MIN_WINDOW_ACCEPT of its proposals
ACCEPT_WINDOW = 500
MIN_WINDOW_ACCEPT = 0.01


@dataclass
class HmcConfig:
    """Tuning knobs for the Hamiltonian and within-Gibbs samplers."""

    step_eps: float | None = None  # None: tuned by dual averaging in warmup
    n_leapfrog: int = 10
    mass: np.ndarray | None = None  # None: identity
    mass_policy: str = "identity"  # "identity" | "adapt"
    n_warmup: int = 1000
    target_accept: float = 0.7
    update_blocks: tuple[str, ...] = ("path", "theta", "sigma", "hurst")
    x_snapshot_every: int = 100
    rw_scale: float = 0.25  # initial scalar-Metropolis proposal sd (Gibbs)
    diag_max_lag: int | None = None

    def __post_init__(self):
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if self.step_eps is not None and self.step_eps <= 0:
            raise ValueError("step_eps must be positive")
        if self.mass is not None and np.any(np.asarray(self.mass) <= 0):
            raise ValueError("mass entries must be positive")
        if self.mass_policy not in ("identity", "adapt"):
            raise ValueError(f"unknown mass_policy {self.mass_policy!r}")


def leapfrog(
    x0: np.ndarray,
    p0: np.ndarray,
    grad: Callable[[np.ndarray], np.ndarray],
    mass: np.ndarray,
    eps: float,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """n_steps of the leapfrog recursion for H(x, p) = potential(x) + p'M^-1 p/2.

    p_half = p - grad(x) eps/2;  x' = x + M^-1 p_half eps;
    p' = p_half - grad(x') eps/2.

    A non-finite gradient (infinite-energy barrier) aborts immediately; the
    returned position then carries NaNs, which the acceptance step treats as
    a certain rejection.
    """
    x = np.array(x0, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    g = grad(x)
    if not np.all(np.isfinite(g)):
        return np.full_like(x, np.nan), np.full_like(p, np.nan)
    for _ in range(n_steps):
        p = p - 0.5 * eps * g
        x = x + eps * p / mass
        g = grad(x)
        if not np.all(np.isfinite(g)):
            return np.full_like(x, np.nan), np.full_like(p, np.nan)
        p = p - 0.5 * eps * g
    return x, p


def _kinetic(p: np.ndarray, mass: np.ndarray) -> float:
    return 0.5 * float(np.sum(p * p / mass))


def _hmc_transition(q, pot_q, target, mass, eps, n_leapfrog, rng):
    """One proposal; returns (q, pot, accepted, accept_prob)."""
    p0 = rng.standard_normal(len(q)) * np.sqrt(mass)
    h0 = pot_q + _kinetic(p0, mass)
    q_new, p_new = leapfrog(q, p0, target.gradient, mass, eps, n_leapfrog)
    if not np.all(np.isfinite(q_new)):
        return q, pot_q, False, 0.0
    pot_new = target.potential(q_new)
    h_new = pot_new + _kinetic(p_new, mass)
    if not np.isfinite(h_new):
        return q, pot_q, False, 0.0
    log_ratio = h0 - h_new
    accept_prob = min(1.0, float(np.exp(min(log_ratio, 0.0))))
    if np.log(rng.uniform()) < log_ratio:
        return q_new, pot_new, True, accept_prob
    return q, pot_q, False, accept_prob


def hmc_step(
    current: np.ndarray,
    target,
    config: HmcConfig,
    rng: np.random.Generator | int | None = None,
) -> tuple[np.ndarray, bool]:
    """Single HMC update of ``current`` under ``target`` (potential+gradient).

    Draws momentum from N(0, diag(mass)), runs the leapfrog trajectory and
    accepts with the Metropolis-Hastings probability for the joint
    (position, momentum) energy.  Numeric trouble rejects, never raises.
    """
    rng = as_generator(rng)
    current = np.asarray(current, dtype=np.float64)
    mass = _mass_vector(config.mass, len(current))
    pot = target.potential(current)
    if not np.isfinite(pot):
        raise ValueError("hmc_step requires a starting point with finite potential")
    eps = config.step_eps if config.step_eps is not None else 0.1
    q, _, accepted, _ = _hmc_transition(current, pot, target, mass, eps, config.n_leapfrog, rng)
    return q, accepted


def _mass_vector(mass, dim: int) -> np.ndarray:
    if mass is None:
        return np.ones(dim)
    mass = np.asarray(mass, dtype=np.float64)
    if mass.ndim == 0:
        return np.full(dim, float(mass))
    if len(mass) != dim:
        raise ValueError(f"mass has length {len(mass)}, expected {dim}")
    return mass.copy()


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target: float):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.log(eps0)
        self.h_bar = 0.0
        self.m = 0
        self.gamma = 0.05
        self.t0 = 10.0
        self.kappa = 0.75

    def update(self, accept_prob: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        eta = self.m**-self.kappa
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def adapted(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _find_reasonable_eps(target, q, mass, rng) -> float:
    """Double/halve a single-step size until acceptance crosses 1/2."""
    eps = 0.1
    pot = target.potential(q)
    p = rng.standard_normal(len(q)) * np.sqrt(mass)
    h0 = pot + _kinetic(p, mass)

    def log_ratio(e):
        q1, p1 = leapfrog(q, p, target.gradient, mass, e, 1)
        if not np.all(np.isfinite(q1)):
            return -np.inf
        h1 = target.potential(q1) + _kinetic(p1, mass)
        return h0 - h1 if np.isfinite(h1) else -np.inf

    direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
    for _ in range(40):
        candidate = eps * 2.0**direction
        if direction > 0 and log_ratio(candidate) <= np.log(0.5):
            break
        if direction < 0 and log_ratio(candidate) > np.log(0.5):
            eps = candidate
            break
        eps = candidate
        if not 1e-8 < eps < 1e3:
            break
    return float(np.clip(eps, 1e-8, 1e3))


@dataclass
class ChainDiagnostics:
    """Sample autocorrelations, effective sample sizes and the raw traces."""

    acf: np.ndarray  # (n_coord, max_lag + 1)
    ess: np.ndarray  # (n_coord,)
    traces: np.ndarray  # (n, n_coord)

    def iact(self) -> np.ndarray:
        """Integrated autocorrelation time n / ESS per coordinate."""
        n = self.traces.shape[0]
        return n / self.ess


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample ACF of a 1-d series up to ``max_lag`` (FFT-based); ACF[0] = 1."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0.0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f))[: max_lag + 1] / n
    return acov / acov[0]


def effective_sample_size(x: np.ndarray, max_lag: int | None = None) -> float:
    """ESS = n / (1 + 2 sum rho_k), truncated by the initial positive sequence.

    Lag pairs (rho_{2m-1} + rho_{2m}) are summed while positive, the standard
    truncation that keeps the estimate stable on noisy tails.  A constant
    chain is degenerate: warns and returns NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2 or np.var(x) == 0.0:
        warnings.warn("degenerate (constant) chain: effective sample size undefined")
        return np.nan
    if max_lag is None:
        max_lag = min(n - 1, 2000)
    rho = autocorrelation(x, max_lag)
    s = 0.0
    k = 1
    while k + 1 <= max_lag:
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        s += pair
        k += 2
    return float(n / (1.0 + 2.0 * s))


def chain_diagnostics(chain: np.ndarray, max_lag: int | None = None) -> ChainDiagnostics:
    """ACF, ESS and traces for each column of a (n, d) chain matrix."""
    chain = np.atleast_2d(np.asarray(chain, dtype=np.float64))
    if chain.shape[0] == 1 and chain.shape[1] > 1:
        chain = chain.T
    n, d = chain.shape
    if n < 10:
        raise ValueError(f"chain length {n} < 10: diagnostics unreliable")
    if max_lag is None:
        max_lag = min(n - 1, 2000)
    acf = np.vstack([autocorrelation(chain[:, j], max_lag) for j in range(d)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ess = np.array([effective_sample_size(chain[:, j], max_lag) for j in range(d)])
    return ChainDiagnostics(acf=acf, ess=ess, traces=chain)


@dataclass
class ChainOutput:
    """Posterior draws plus acceptance and mixing diagnostics."""

    param_names: tuple[str, ...]
    draws: np.ndarray  # (n_iter, n_params) on the natural scale
    acceptance_rate: float | dict[str, float]
    x_snapshots: np.ndarray | None = None
    snapshot_every: int = 100
    acf: np.ndarray | None = None
    ess: np.ndarray | None = None
    tuning: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.draws.shape[0]

    def states(self, theta_dim: int):
        """Iterate draws as ParamState objects."""
        for row in self.draws:
            yield ParamState(theta=row[:theta_dim], sigma=row[theta_dim], hurst=row[theta_dim + 1])

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    def summary(self) -> dict:
        out = {"n_draws": int(len(self)), "acceptance": self.acceptance_rate, "tuning": self.tuning}
        params = {}
        for j, name in enumerate(self.param_names):
            col = self.draws[:, j]
            if len(col) == 0:
                continue
            q = np.percentile(col, [2.5, 50.0, 97.5])
            params[name] = {
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
                "q2.5": float(q[0]),
                "q50": float(q[1]),
                "q97.5": float(q[2]),
                "ess": float(self.ess[j]) if self.ess is not None else None,
            }
        out["params"] = params
        return out


def default_initial_state(model: SdeModel, data: CompleteData) -> ParamState:
    """Cheap moment-based starting point; adequate for warmup to refine."""
    x = data.observed_values()
    dt_obs = data.dt * data.stride
    dx = np.diff(x)
    sigma0 = max(float(np.std(dx)) / np.sqrt(dt_obs), 1e-3)
    if len(x) > 2 and np.var(x) > 0:
        rho1 = float(np.corrcoef(x[:-1], x[1:])[0, 1])
    else:
        rho1 = 0.5
    gamma0 = -np.log(np.clip(rho1, 0.05, 0.95)) / dt_obs
    if model.name == "fcir":
        beta0 = 0.5 * gamma0 * float(np.mean(x)) ** 2
        theta0 = np.array([gamma0, max(beta0, 1e-4)])
    else:
        theta0 = np.array([gamma0, float(np.mean(x))])
    return ParamState(theta=theta0, sigma=sigma0, hurst=0.5)


def _finalize(
    names, draws, accept, snapshots, config, tuning
) -> ChainOutput:
    draws = np.asarray(draws, dtype=np.float64).reshape(-1, len(names))
    acf = ess = None
    if draws.shape[0] >= 10:
        diag = chain_diagnostics(draws, config.diag_max_lag)
        acf, ess = diag.acf, diag.ess
    return ChainOutput(
        param_names=tuple(names),
        draws=draws,
        acceptance_rate=accept,
        x_snapshots=np.asarray(snapshots) if snapshots else None,
        snapshot_every=config.x_snapshot_every,
        acf=acf,
        ess=ess,
        tuning=tuning,
    )


class _AcceptWindow:
    """Raises SamplerError when a window of iterations nearly always rejects."""

    def __init__(self, label: str):
        self.label = label
        self.count = 0
        self.accepted = 0

    def push(self, accepted: bool | float) -> None:
        self.count += 1
        self.accepted += float(accepted)
        if self.count >= ACCEPT_WINDOW:
            rate = self.accepted / self.count
            if rate < MIN_WINDOW_ACCEPT:
                raise SamplerError(
                    f"{self.label}: acceptance {rate:.2%} over the last "
                    f"{self.count} iterations; step size badly mistuned"
                )
            self.count = 0
            self.accepted = 0


def _param_names(model: SdeModel) -> tuple[str, ...]:
    return tuple(model.theta_names) + ("sigma", "hurst")


def run_hmc_full(
    data: CompleteData,
    model: SdeModel,
    prior: PriorSpec,
    config: HmcConfig,
    n_iter: int,
    rng: np.random.Generator | int | None = None,
    init_state: ParamState | None = None,
) -> ChainOutput:
    """Joint HMC over missing data and parameters.

    ``n_iter`` counts post-warmup draws; ``config.n_warmup`` extra
    iterations tune the step size (dual averaging toward
    ``config.target_accept``) and, under ``mass_policy="adapt"``, the mass
    vector.  Aborts with SamplerError if acceptance collapses (< 1% over a
    500-iteration window after warmup).
    """
    rng = as_generator(rng)
    state = init_state or default_initial_state(model, data)
    blocks = tuple(b for b in config.update_blocks if b in AugmentedTarget.ALL_BLOCKS)
    target = AugmentedTarget(data, model, prior, blocks=blocks)
    target.set_state(state)
    q = target.pack(data.values, state)
    mass = _mass_vector(config.mass, len(q))

    pot = target.potential(q)
    if not np.isfinite(pot):
        raise ValueError("initial state has infinite potential")

    # ---- warmup: step size (and optionally mass) adaptation
    if config.step_eps is None:
        eps = _find_reasonable_eps(target, q, mass, rng)
        averager = _DualAveraging(eps, config.target_accept)
    else:
        eps = config.step_eps
        averager = None
    adapt_mass_at = config.n_warmup // 2 if config.mass_policy == "adapt" else -1
    warm_draws = []
    for it in range(config.n_warmup):
        q, pot, _, aprob = _hmc_transition(q, pot, target, mass, eps, config.n_leapfrog, rng)
        if averager is not None:
            eps = averager.update(aprob)
        if adapt_mass_at >= 0:
            warm_draws.append(q.copy())
            if it == adapt_mass_at and len(warm_draws) > 10:
                var = np.var(np.asarray(warm_draws[len(warm_draws) // 2 :]), axis=0)
                mass = 1.0 / np.maximum(var, 1e-6)
                warm_draws.clear()
                if averager is not None:
                    eps = _find_reasonable_eps(target, q, mass, rng)
                    averager = _DualAveraging(eps, config.target_accept)
    if averager is not None:
        eps = averager.adapted

    # ---- sampling
    names = _param_names(model)
    draws = np.empty((n_iter, len(names)))
    snapshots = []
    n_accept = 0
    window = _AcceptWindow("run_hmc_full")
    for it in range(n_iter):
        q, pot, accepted, _ = _hmc_transition(q, pot, target, mass, eps, config.n_leapfrog, rng)
        n_accept += accepted
        window.push(accepted)
        values, st = target.unpack(q)
        draws[it] = np.concatenate([st.theta, [st.sigma, st.hurst]])
        if config.x_snapshot_every > 0 and it % config.x_snapshot_every == 0:
            snapshots.append(values.copy())
    accept_rate = n_accept / n_iter if n_iter else 0.0
    tuning = {"step_eps": float(eps), "n_leapfrog": config.n_leapfrog, "n_warmup": config.n_warmup}
    return _finalize(names, draws, accept_rate, snapshots, config, tuning)


def run_gibbs(
    data: CompleteData,
    model: SdeModel,
    prior: PriorSpec,
    config: HmcConfig,
    n_iter: int,
    rng: np.random.Generator | int | None = None,
    init_state: ParamState | None = None,
) -> ChainOutput:
    """Metropolis-within-Gibbs on parameters + HMC on the missing path.

    Each iteration performs one scalar normal random-walk Metropolis update
    per parameter coordinate (on the unconstrained scale, proposal scales
    adapted during warmup toward 0.44 acceptance) and, when the level is
    positive, one HMC update of the missing path with the parameters held
    fixed.  With no missing data this reduces to pure Metropolis-within-
    Gibbs on the parameters.
    """
    rng = as_generator(rng)
    state = init_state or default_initial_state(model, data)
    values = data.values.copy()

    par_target = AugmentedTarget(data, model, prior, blocks=("theta", "sigma", "hurst"))
    par_target.set_values(values)
    q_par = par_target.pack(values, state)
    n_par = len(q_par)
    scales = np.full(n_par, config.rw_scale)

    has_path = len(data.miss_index) > 0
    if has_path:
        path_target = AugmentedTarget(data, model, prior, blocks=("path",))
        path_target.set_state(state)
        q_path = path_target.pack(values, state)
        mass = _mass_vector(config.mass, len(q_path))
        pot_path = path_target.potential(q_path)
        if not np.isfinite(pot_path):
            raise ValueError("initial path has infinite potential")
        if config.step_eps is None:
            eps = _find_reasonable_eps(path_target, q_path, mass, rng)
            averager = _DualAveraging(eps, config.target_accept)
        else:
            eps = config.step_eps
            averager = None
    else:
        eps = config.step_eps or 0.0
        averager = None

    pot_par = par_target.potential(q_par)
    if not np.isfinite(pot_par):
        raise ValueError("initial state has infinite potential")

    names = _param_names(model)
    draws = np.empty((n_iter, n_par))
    snapshots = []
    accept_par = np.zeros(n_par)
    accept_path = 0
    window = _AcceptWindow("run_gibbs")
    total = config.n_warmup + n_iter

    for it in range(total):
        warm = it < config.n_warmup
        # (a) componentwise random walk on the parameters
        for j in range(n_par):
            prop = q_par.copy()
            prop[j] += scales[j] * rng.standard_normal()
            pot_prop = par_target.potential(prop)
            aprob = np.exp(min(0.0, pot_par - pot_prop)) if np.isfinite(pot_prop) else 0.0
            if rng.uniform() < aprob:
                q_par = prop
                pot_par = pot_prop
                if not warm:
                    accept_par[j] += 1
            if warm:
                # Robbins-Monro toward 0.44 acceptance
                scales[j] *= np.exp((aprob - 0.44) / np.sqrt(it + 1.0))
        _, state = par_target.unpack(q_par)

        # (b) HMC over the missing path at the current parameters
        if has_path:
            path_target.set_state(state)
            pot_path = path_target.potential(q_path)
            q_path, pot_path, acc, aprob = _hmc_transition(
                q_path, pot_path, path_target, mass, eps, config.n_leapfrog, rng
            )
            if warm and averager is not None:
                eps = averager.update(aprob)
                if it == config.n_warmup - 1:
                    eps = averager.adapted
            if not warm:
                accept_path += acc
                window.push(acc)
            values = path_target.values_of(q_path)
            par_target.set_values(values)
            pot_par = par_target.potential(q_par)

        if not warm:
            i = it - config.n_warmup
            draws[i] = np.concatenate([state.theta, [state.sigma, state.hurst]])
            if config.x_snapshot_every > 0 and i % config.x_snapshot_every == 0:
                snapshots.append(values.copy())

    acceptance = {
        name: (accept_par[j] / n_iter if n_iter else 0.0) for j, name in enumerate(names)
    }
    if has_path:
        acceptance["x_miss"] = accept_path / n_iter if n_iter else 0.0
    tuning = {
        "step_eps": float(eps),
        "n_leapfrog": config.n_leapfrog,
        "n_warmup": config.n_warmup,
        "rw_scales": [float(s) for s in scales],
    }
    return _finalize(names, draws, acceptance, snapshots, config, tuning)
