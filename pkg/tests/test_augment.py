import numpy as np
import pytest

from fracsde.augment import (
    HURST_EPS,
    AugmentedTarget,
    CompleteData,
    ParamState,
    PriorSpec,
    grad_potential,
    noise_increments,
    potential,
    prior_by_name,
    refine,
)
from fracsde.models import euler_simulate, fcir_model, fou_model
from fracsde.toeplitz import as_generator, fgn_simulate

from helpers import dense_euler_complete_logpdf, white_noise_potential

FOU = fou_model()
FCIR = fcir_model()
FOU_PRIOR = prior_by_name("fou-noninformative")
FCIR_PRIOR = prior_by_name("fcir-noninformative")


def _flat_prior(theta_dim):
    return PriorSpec(
        "flat",
        log_density=lambda s: 0.0,
        gradient=lambda s: np.zeros(theta_dim + 2),
    )


def _random_fou_case(rng, n_obs=6, level=2, hurst=0.7):
    theta = np.array([rng.uniform(0.3, 1.5), rng.uniform(-0.5, 0.5)])
    sigma = rng.uniform(0.5, 2.0)
    m = n_obs * 2**level
    dt = 1.0 / 2**level
    noise = fgn_simulate(hurst, dt, m, rng)
    path = euler_simulate(FOU, theta, sigma, rng.normal(), dt, m, noise)
    data = CompleteData(level=level, values=path, dt=dt, n_obs=n_obs)
    state = ParamState(theta=theta, sigma=sigma, hurst=hurst)
    return data, state


class TestCompleteData:
    def test_indices(self):
        data = CompleteData(level=1, values=np.arange(7.0), dt=0.5, n_obs=3)
        np.testing.assert_array_equal(data.obs_index, [0, 2, 4, 6])
        np.testing.assert_array_equal(data.miss_index, [1, 3, 5])
        assert data.n_increments == 6

    def test_length_validated(self):
        with pytest.raises(ValueError):
            CompleteData(level=1, values=np.arange(6.0), dt=0.5, n_obs=3)


class TestRefine:
    def test_identity_at_same_level(self):
        data = CompleteData.from_observed(np.array([0.0, 2.0]), 1.0)
        assert refine(data, 0) is data

    def test_one_level_midpoint(self):
        data = CompleteData.from_observed(np.array([0.0, 2.0]), 1.0)
        fine = refine(data, 1)
        np.testing.assert_allclose(fine.values, [0.0, 1.0, 2.0])
        assert fine.dt == pytest.approx(0.5)

    def test_two_levels(self):
        data = CompleteData.from_observed(np.array([0.0, 2.0]), 1.0)
        fine = refine(data, 2)
        np.testing.assert_allclose(fine.values, [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_observed_preserved_bit_exactly(self):
        rng = as_generator(0)
        x = rng.standard_normal(11)
        fine = refine(CompleteData.from_observed(x, 1.0), 3)
        np.testing.assert_array_equal(fine.observed_values(), x)

    def test_refines_previously_imputed(self):
        data = CompleteData(level=1, values=np.array([0.0, 3.0, 2.0]), dt=0.5, n_obs=1)
        fine = refine(data, 2)
        np.testing.assert_allclose(fine.values, [0.0, 1.5, 3.0, 2.5, 2.0])

    def test_cannot_coarsen(self):
        data = CompleteData(level=1, values=np.zeros(3), dt=0.5, n_obs=1)
        with pytest.raises(ValueError):
            refine(data, 0)


class TestNoiseIncrements:
    def test_zero_drift_unit_sigma_is_diff(self):
        values = np.array([1.0, 2.0, 1.5])
        data = CompleteData.from_observed(values, 1.0)
        state = ParamState(theta=np.array([1.0, 0.0]), sigma=1.0, hurst=0.5)
        model = fou_model()
        # gamma = 0 is outside the prior but fine for the pure map: emulate
        # zero drift with mu equal to each point via direct formula instead
        got = noise_increments(data, model, ParamState(np.array([0.0, 0.0]), 1.0, 0.5))
        np.testing.assert_allclose(got, np.diff(values))

    def test_hand_case(self):
        data = CompleteData.from_observed(np.array([1.0, 0.5]), 1.0)
        state = ParamState(theta=np.array([1.0, 0.0]), sigma=2.0, hurst=0.5)
        got = noise_increments(data, FOU, state)
        assert got[0] == pytest.approx(0.25)  # (-0.5 + 1) / 2

    def test_round_trip_recovers_noise(self):
        rng = as_generator(2)
        theta = np.array([0.8, 0.1])
        noise = fgn_simulate(0.6, 0.25, 20, rng)
        path = euler_simulate(FOU, theta, 1.3, 0.4, 0.25, 20, noise)
        data = CompleteData(level=0, values=path, dt=0.25, n_obs=20)
        state = ParamState(theta=theta, sigma=1.3, hurst=0.6)
        np.testing.assert_allclose(noise_increments(data, FOU, state), noise, atol=1e-12)

    def test_domain_error(self):
        data = CompleteData.from_observed(np.array([1.0, -0.5]), 1.0)
        state = ParamState(theta=np.array([1.0, 0.1]), sigma=1.0, hurst=0.5)
        with pytest.raises(ValueError):
            noise_increments(data, FCIR, state)


class TestPotential:
    def test_reduces_to_white_noise_potential(self):
        rng = as_generator(4)
        data, state = _random_fou_case(rng, hurst=0.5)
        got = potential(data, FOU, state, FOU_PRIOR)
        log_prior = np.log(state.theta[0]) - np.log(state.sigma)
        want = white_noise_potential(
            data.values, state.theta, state.sigma, 0.5, data.dt, FOU.drift, log_prior
        )
        assert got == pytest.approx(want, abs=1e-10)

    def test_prior_constant_shifts_exactly(self):
        rng = as_generator(5)
        data, state = _random_fou_case(rng)
        c = 1.7
        base = _flat_prior(2)
        shifted = PriorSpec(
            "shift", log_density=lambda s: c, gradient=lambda s: np.zeros(4)
        )
        assert potential(data, FOU, state, base) - potential(
            data, FOU, state, shifted
        ) == pytest.approx(c, abs=1e-12)

    def test_sigma_scaling_against_dense_oracle(self):
        rng = as_generator(6)
        data, state = _random_fou_case(rng, hurst=0.65)
        for sig in (state.sigma, 2 * state.sigma):
            st = ParamState(state.theta, sig, state.hurst)
            got = potential(data, FOU, st, _flat_prior(2))
            want = -dense_euler_complete_logpdf(
                data.values, state.theta, sig, state.hurst, data.dt, FOU.drift
            )
            assert got == pytest.approx(want, abs=1e-8)

    def test_matches_dense_oracle_up_to_prior(self):
        rng = as_generator(7)
        data, state = _random_fou_case(rng, n_obs=5, level=1, hurst=0.8)
        got = potential(data, FOU, state, FOU_PRIOR)
        want = -dense_euler_complete_logpdf(
            data.values, state.theta, state.sigma, state.hurst, data.dt, FOU.drift
        ) - FOU_PRIOR.log_density(state)
        assert got == pytest.approx(want, abs=1e-8)

    def test_domain_violation_gives_inf(self):
        data = CompleteData.from_observed(np.array([1.0, -2.0, 1.0]), 1.0)
        state = ParamState(np.array([1.0, 0.2]), 1.0, 0.6)
        assert potential(data, FCIR, state, FCIR_PRIOR) == np.inf

    def test_hurst_bounds_give_inf(self):
        data = CompleteData.from_observed(np.array([0.0, 1.0]), 1.0)
        st = ParamState(np.array([1.0, 0.0]), 1.0, HURST_EPS / 2)
        assert potential(data, FOU, st, FOU_PRIOR) == np.inf

    def test_fcir_restriction_gives_inf(self):
        data = CompleteData.from_observed(np.array([1.0, 1.1, 0.9]), 1.0)
        st = ParamState(np.array([1.0, -1.0]), 0.5, 0.6)  # beta + sigma^2/2 < 0
        assert potential(data, FCIR, st, FCIR_PRIOR) == np.inf


def _fd_gradient(data, model, state, prior, eps=1e-6):
    """Central finite differences of the potential in every coordinate."""
    miss = data.miss_index
    gx = np.empty(len(miss))
    for a, idx in enumerate(miss):
        vp = data.values.copy()
        vp[idx] += eps
        vm = data.values.copy()
        vm[idx] -= eps
        gx[a] = (
            potential(data.with_values(vp), model, state, prior)
            - potential(data.with_values(vm), model, state, prior)
        ) / (2 * eps)
    p = model.theta_dim
    gth = np.empty(p)
    for i in range(p):
        up = state.theta.copy()
        up[i] += eps
        dn = state.theta.copy()
        dn[i] -= eps
        gth[i] = (
            potential(data, model, ParamState(up, state.sigma, state.hurst), prior)
            - potential(data, model, ParamState(dn, state.sigma, state.hurst), prior)
        ) / (2 * eps)
    gs = (
        potential(data, model, ParamState(state.theta, state.sigma + eps, state.hurst), prior)
        - potential(data, model, ParamState(state.theta, state.sigma - eps, state.hurst), prior)
    ) / (2 * eps)
    gh = (
        potential(data, model, ParamState(state.theta, state.sigma, state.hurst + eps), prior)
        - potential(data, model, ParamState(state.theta, state.sigma, state.hurst - eps), prior)
    ) / (2 * eps)
    return gx, gth, gs, gh


def _assert_grad_close(got, want, rel=1e-5):
    scale = max(np.abs(want).max(), 1e-3)
    np.testing.assert_allclose(got, want, rtol=rel, atol=rel * scale)


class TestGradPotential:
    @pytest.mark.parametrize("hurst", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_fou_matches_finite_differences(self, hurst, level):
        rng = as_generator(int(100 * hurst) + level)
        data, state = _random_fou_case(rng, n_obs=5, level=level, hurst=hurst)
        grad = grad_potential(data, FOU, state, FOU_PRIOR)
        gx, gth, gs, gh = _fd_gradient(data, FOU, state, FOU_PRIOR)
        if level > 0:
            _assert_grad_close(grad.x_miss, gx)
        _assert_grad_close(grad.theta, gth)
        _assert_grad_close(grad.sigma, gs)
        _assert_grad_close(grad.hurst, gh, rel=1e-3)

    def test_fcir_matches_finite_differences(self):
        rng = as_generator(42)
        theta = np.array([1.0, 0.3])
        sigma = 0.4
        m, dt = 12, 0.25
        noise = fgn_simulate(0.6, dt, m, rng)
        path = euler_simulate(FCIR, theta, sigma, 1.0, dt, m, noise)
        data = CompleteData(level=2, values=path, dt=dt, n_obs=3)
        state = ParamState(theta=theta, sigma=sigma, hurst=0.6)
        grad = grad_potential(data, FCIR, state, FCIR_PRIOR)
        gx, gth, gs, gh = _fd_gradient(data, FCIR, state, FCIR_PRIOR)
        _assert_grad_close(grad.x_miss, gx)
        _assert_grad_close(grad.theta, gth)
        _assert_grad_close(grad.sigma, gs)
        _assert_grad_close(grad.hurst, gh, rel=1e-3)

    def test_white_noise_locality(self):
        # at H = 1/2 the gradient in X_n involves only residuals n-1 and n:
        # perturbing a distant observation must not change it
        rng = as_generator(9)
        data, state = _random_fou_case(rng, n_obs=6, level=1, hurst=0.5)
        grad = grad_potential(data, FOU, state, FOU_PRIOR)
        idx = data.miss_index[2]  # path index of the third missing point
        far = data.values.copy()
        far[-1] += 0.5  # last observed point, far from idx
        grad2 = grad_potential(data.with_values(far), FOU, state, FOU_PRIOR)
        assert grad2.x_miss[2] == pytest.approx(grad.x_miss[2], rel=1e-12)
        # while at H > 1/2 the same perturbation does change it
        state_lr = ParamState(state.theta, state.sigma, 0.75)
        g_near = grad_potential(data, FOU, state_lr, FOU_PRIOR)
        g_far = grad_potential(data.with_values(far), FOU, state_lr, FOU_PRIOR)
        assert abs(g_far.x_miss[2] - g_near.x_miss[2]) > 1e-8

    def test_zero_gradient_at_gaussian_minimizer(self):
        # zero drift, mu known: the potential in the missing points is a
        # quadratic whose minimizer at H = 1/2 is the linear interpolant
        obs = np.array([0.0, 1.0, -0.5])
        data = refine(CompleteData.from_observed(obs, 1.0), 2)
        state = ParamState(np.array([0.0, 0.0]), 1.0, 0.5)
        grad = grad_potential(data, FOU, state, _flat_prior(2))
        np.testing.assert_allclose(grad.x_miss, 0.0, atol=1e-10)

    def test_invalid_state_gives_nans(self):
        data = CompleteData.from_observed(np.array([1.0, -1.0]), 1.0)
        state = ParamState(np.array([1.0, 0.1]), 1.0, 0.6)
        grad = grad_potential(data, FCIR, state, FCIR_PRIOR)
        assert np.all(np.isnan(grad.theta)) and np.isnan(grad.hurst)


class TestAugmentedTarget:
    def test_pack_unpack_round_trip(self):
        rng = as_generator(11)
        data, state = _random_fou_case(rng)
        target = AugmentedTarget(data, FOU, FOU_PRIOR)
        q = target.pack(data.values, state)
        values, st = target.unpack(q)
        np.testing.assert_allclose(values, data.values)
        np.testing.assert_allclose(st.theta, state.theta)
        assert st.sigma == pytest.approx(state.sigma)
        assert st.hurst == pytest.approx(state.hurst)

    def test_gradient_matches_fd_of_transformed_potential(self):
        rng = as_generator(12)
        data, state = _random_fou_case(rng, n_obs=4, level=1, hurst=0.65)
        target = AugmentedTarget(data, FOU, FOU_PRIOR)
        q = target.pack(data.values, state)
        grad = target.gradient(q)
        eps = 1e-6
        for j in range(len(q)):
            qp = q.copy()
            qp[j] += eps
            qm = q.copy()
            qm[j] -= eps
            fd = (target.potential(qp) - target.potential(qm)) / (2 * eps)
            assert grad[j] == pytest.approx(fd, rel=2e-4, abs=2e-5)

    def test_path_only_block(self):
        rng = as_generator(13)
        data, state = _random_fou_case(rng, n_obs=4, level=1)
        target = AugmentedTarget(data, FOU, FOU_PRIOR, blocks=("path",))
        target.set_state(state)
        q = target.pack(data.values, state)
        assert len(q) == len(data.miss_index)
        assert np.isfinite(target.potential(q))
        grad = target.gradient(q)
        full = grad_potential(data, FOU, state, FOU_PRIOR)
        np.testing.assert_allclose(grad, full.x_miss)

    def test_out_of_domain_potential_is_inf(self):
        rng = as_generator(14)
        data, state = _random_fou_case(rng, n_obs=4, level=1)
        target = AugmentedTarget(data, FOU, FOU_PRIOR)
        q = target.pack(data.values, state)
        q[-1] = 5.0  # logit-H large: H near 1 but inside the open interval
        assert np.isfinite(target.potential(q))
        q[-1] = 60.0  # saturates to the H = 1 - eps boundary: rejected
        assert target.potential(q) == np.inf
        q[-2] = 800.0  # log sigma overflows to inf -> invalid
        assert target.potential(q) == np.inf
