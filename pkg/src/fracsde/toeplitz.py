"""Stationary-Gaussian covariance machinery for fractional Gaussian noise.

Autocovariance of fGN increments, Durbin-Levinson innovation factorization,
circulant-embedding FFT quadratic forms, and fGN path simulation.  Everything
here is a pure function of its inputs; returned arrays are marked read-only
so results can be cached and shared between threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericError

logger = logging.getLogger(__name__)

__all__ = [
    "FgnCovariance",
    "CholeskyLadder",
    "CirculantSpectrum",
    "fgn_autocovariance",
    "durbin_levinson",
    "ladder_for",
    "gaussian_loglik",
    "circulant_spectrum",
    "toeplitz_quadratic_form",
    "fgn_simulate",
    "as_generator",
]

# Relative tolerance for negative circulant eigenvalues: clamp below, fall
# back to ladder sampling above.
NEG_EIG_RTOL = 1e-10

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


@dataclass(frozen=True)
class FgnCovariance:
    """Autocovariance sequence of fGN increments at step ``dt``.

    ``gamma[k]`` is the covariance between increments k lags apart; the
    implied Toeplitz matrix is positive definite for every H in (0, 1).
    """

    hurst: float
    dt: float
    gamma: np.ndarray

    def __len__(self) -> int:
        return len(self.gamma)

    def toeplitz(self, m: int | None = None) -> np.ndarray:
        """Dense m x m Toeplitz matrix (mostly for oracles and small problems)."""
        from scipy.linalg import toeplitz as _toeplitz

        m = len(self.gamma) if m is None else m
        if m > len(self.gamma):
            raise ValueError(f"need {m} lags, covariance holds {len(self.gamma)}")
        return _toeplitz(self.gamma[:m])


@dataclass(frozen=True)
class CholeskyLadder:
    """Innovation coefficients and variances of a stationary covariance.

    ``b`` is lower triangular with unit diagonal and ``v`` holds the
    innovation variances, so that for increments z with Toeplitz covariance V
    the residuals r = b @ z are uncorrelated with variances v (B V B' is
    diagonal).  The full coefficient table is kept because the potential
    gradients index arbitrary b[j, n].
    """

    b: np.ndarray
    v: np.ndarray

    def __len__(self) -> int:
        return len(self.v)

    def residuals(self, z: np.ndarray) -> np.ndarray:
        """r_j = sum_{n<=j} b[j, n] z_n."""
        return self.b @ z

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        """(B' w)_n = sum_{j>=n} b[j, n] w_j, the transpose application."""
        return self.b.T @ w

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw with the factored covariance, by forward substitution."""
        e = rng.standard_normal(len(self.v)) * np.sqrt(self.v)
        return solve_triangular(self.b, e, lower=True, unit_diagonal=True)


@dataclass(frozen=True)
class CirculantSpectrum:
    """Eigenvalues of the circulant embedding of an fGN Toeplitz matrix."""

    eigenvalues: np.ndarray  # length 2m - 2, real up to roundoff

    @property
    def size(self) -> int:
        return len(self.eigenvalues)


def fgn_autocovariance(hurst: float, dt: float, max_lag: int) -> FgnCovariance:
    """Autocovariance of fGN increments up to ``max_lag``.

    gamma[k] = (dt^{2H}/2) (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H}), so
    gamma[0] = dt^{2H}, gamma vanishes for k >= 1 at H = 1/2, is positive
    decaying for H > 1/2 and negative for H < 1/2.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must be in (0, 1), got {hurst}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if max_lag < 0:
        raise ValueError(f"max_lag must be >= 0, got {max_lag}")
    k = np.arange(max_lag + 1, dtype=np.float64)
    two_h = 2.0 * hurst
    gamma = 0.5 * dt**two_h * ((k + 1.0) ** two_h + np.abs(k - 1.0) ** two_h - 2.0 * k**two_h)
    gamma.setflags(write=False)
    return FgnCovariance(hurst=hurst, dt=dt, gamma=gamma)


if HAVE_NUMBA:

    @njit(cache=True)
    def _dl_kernel(g):  # pragma: no cover - exercised via durbin_levinson
        m = g.shape[0]
        b = np.zeros((m, m))
        v = np.empty(m)
        phi = np.zeros(m)
        work = np.zeros(m)
        b[0, 0] = 1.0
        v[0] = g[0]
        for j in range(1, m):
            acc = g[j]
            for k in range(1, j):
                acc -= phi[k] * g[j - k]
            p = acc / v[j - 1]
            for k in range(1, j):
                work[k] = phi[k] - p * phi[j - k]
            for k in range(1, j):
                phi[k] = work[k]
            phi[j] = p
            v[j] = v[j - 1] * (1.0 - p * p)
            b[j, j] = 1.0
            for k in range(1, j + 1):
                b[j, j - k] = -phi[k]
        return b, v

else:

    def _dl_kernel(g):
        m = g.shape[0]
        b = np.zeros((m, m))
        v = np.empty(m)
        phi = np.zeros(m)
        b[0, 0] = 1.0
        v[0] = g[0]
        for j in range(1, m):
            acc = g[j] - np.dot(phi[1:j], g[j - 1 : 0 : -1])
            p = acc / v[j - 1]
            phi[1:j] = phi[1:j] - p * phi[j - 1 : 0 : -1]
            phi[j] = p
            v[j] = v[j - 1] * (1.0 - p * p)
            b[j, j] = 1.0
            b[j, :j] = -phi[1 : j + 1][::-1]
        return b, v


def durbin_levinson(cov: FgnCovariance | np.ndarray) -> CholeskyLadder:
    """Innovation factorization of a Toeplitz covariance in O(M^2).

    The j-th recursion step fits the best linear predictor of z_j from
    z_0..z_{j-1}; row j of ``b`` holds (minus) those predictor weights with
    b[j, j] = 1, and v[j] is the prediction-error variance.

    Raises
    ------
    NumericError
        If any innovation variance is <= 0 (non-positive-definite input or
        catastrophic roundoff).
    """
    gamma = cov.gamma if isinstance(cov, FgnCovariance) else np.asarray(cov, dtype=np.float64)
    if gamma.ndim != 1 or len(gamma) < 1:
        raise ValueError("covariance sequence must be a non-empty 1-d array")
    if gamma[0] <= 0.0:
        raise NumericError(f"lag-0 covariance must be positive, got {gamma[0]}")
    b, v = _dl_kernel(np.ascontiguousarray(gamma, dtype=np.float64))
    if not np.all(v > 0.0):
        j = int(np.argmin(v))
        raise NumericError(f"non-positive innovation variance v[{j}] = {v[j]:g}")
    b.setflags(write=False)
    v.setflags(write=False)
    return CholeskyLadder(b=b, v=v)


@lru_cache(maxsize=64)
def ladder_for(hurst: float, dt: float, m: int) -> CholeskyLadder:
    """Cached ladder for m fGN increments at (hurst, dt).

    Samplers re-enter here every time H moves; identical (H, dt, m) keys hit
    the cache, which is what makes Gibbs parameter sweeps at fixed H cheap.
    """
    return durbin_levinson(fgn_autocovariance(hurst, dt, m - 1))


def gaussian_loglik(
    ladder: CholeskyLadder, z: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Zero-mean Gaussian log density of ``z`` under the factored covariance.

    Returns ``(loglik, residuals, variances)``; the residuals r and variances
    v are exposed because the potential gradients reuse them.

    loglik = -1/2 sum_j (r_j^2 / v_j + log v_j) - (M/2) log(2 pi)
    """
    z = np.asarray(z, dtype=np.float64)
    m = len(ladder.v)
    if z.shape != (m,):
        raise ValueError(f"increment vector has shape {z.shape}, expected ({m},)")
    r = ladder.residuals(z)
    v = ladder.v
    loglik = -0.5 * float(np.sum(r * r / v + np.log(v))) - 0.5 * m * np.log(2.0 * np.pi)
    return loglik, r, v


def _embedding_first_row(gamma: np.ndarray, m: int) -> np.ndarray:
    # first row (g0 .. g_{m-1}, g_{m-2} .. g1) of the (2m-2) circulant
    if m < 2:
        raise ValueError("circulant embedding needs m >= 2")
    if len(gamma) < m:
        raise ValueError(f"need {m} lags, covariance holds {len(gamma)}")
    return np.concatenate([gamma[:m], gamma[m - 2 : 0 : -1]])


def circulant_spectrum(cov: FgnCovariance, m: int) -> CirculantSpectrum:
    """Eigenvalues of the (2m-2)-circulant embedding the m x m fGN Toeplitz.

    The embedding is symmetric, so the eigenvalues are real up to FFT
    roundoff (|Im| ~ 1e-16 relative).
    """
    row = _embedding_first_row(np.asarray(cov.gamma), m)
    eig = np.fft.fft(row)
    eig.setflags(write=False)
    return CirculantSpectrum(eigenvalues=eig)


def toeplitz_quadratic_form(a_matrix: np.ndarray, cov: FgnCovariance) -> np.ndarray:
    """A V A' with V the fGN Toeplitz matrix, via the circulant spectrum.

    A is zero-padded to M x (2M-2); the middle product V A' is carried out by
    multiplying through the circulant eigenvalues in the Fourier domain
    (O(M^2 log M)); the remaining outer product A (V A') is one dense BLAS
    call.  Equals the direct triple product to roundoff.
    """
    a = np.asarray(a_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"a_matrix must be square, got shape {a.shape}")
    m = a.shape[0]
    if m == 1:
        return a * cov.gamma[0] * a
    n = 2 * m - 2
    lam = circulant_spectrum(cov, m).eigenvalues
    # row i of w is the first m entries of C a_i, i.e. w = (A C)[:, :m] = A V
    p = np.fft.fft(a, n=n, axis=1)
    w = np.fft.ifft(p * lam, axis=1)[:, :m]
    out = np.real(w @ a.T)
    # symmetrize away roundoff
    return 0.5 * (out + out.T)


def fgn_simulate(
    hurst: float,
    dt: float,
    m: int,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Draw m stationary fGN increments with the exact autocovariance.

    Uses circulant-embedding spectral sampling; if the embedding has
    eigenvalues more negative than NEG_EIG_RTOL times the largest one, falls
    back to exact O(m^2) ladder sampling (logged, not an error).  Small
    negative eigenvalues within tolerance are clamped to zero.
    """
    rng = as_generator(rng)
    cov = fgn_autocovariance(hurst, dt, max(m - 1, 0))
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m == 1:
        return np.sqrt(cov.gamma[0]) * rng.standard_normal(1)

    lam = np.real(circulant_spectrum(cov, m).eigenvalues)
    floor = -NEG_EIG_RTOL * lam.max()
    if lam.min() < floor:
        logger.warning(
            "circulant embedding not nonnegative (min eig %.3e); "
            "falling back to Durbin-Levinson sampling",
            lam.min(),
        )
        return durbin_levinson(cov).sample(rng)
    lam = np.maximum(lam, 0.0)

    n = 2 * m - 2
    half = m - 1  # n//2
    z = np.empty(n, dtype=np.complex128)
    z[0] = rng.standard_normal()
    z[half] = rng.standard_normal()
    re = rng.standard_normal(half - 1)
    im = rng.standard_normal(half - 1)
    z[1:half] = (re + 1j * im) / np.sqrt(2.0)
    z[half + 1 :] = np.conj(z[1:half][::-1])
    y = np.fft.ifft(np.sqrt(lam) * z) * np.sqrt(n)
    return np.real(y[:m]).copy()


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Coerce a seed (or None) to a counter-based Philox generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(rng))
