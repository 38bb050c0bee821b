import math

import numpy as np
import pytest

from cesaro_lmc.bayes import GaussianLocationModel, build_posterior, sample_dataset, standard_gaussian_prior
from cesaro_lmc.errors import DivergenceError, ParameterError
from cesaro_lmc.oracle import ou_cesaro_moments
from cesaro_lmc.potentials import builtin_gaussian_location, builtin_p_power
from cesaro_lmc.rng import mix64, stream
from cesaro_lmc.sampler import (
    ChainConfig,
    euler_step,
    moment_clamp,
    replicate_runs,
    run_chain,
    run_diffusion_fine,
)

OU = builtin_gaussian_location(1, 0.0, 1.0)


class TestEulerStep:
    def test_deterministic_contraction(self):
        g = builtin_gaussian_location(3, 0.0, 1.0)
        x = np.array([1.0, -2.0, 0.5])
        out = euler_step(x, g, 0.2, np.zeros(3))
        assert np.allclose(out, 0.8 * x)

    def test_pure_noise_at_minimizer(self):
        g = builtin_gaussian_location(2, [1.0, 1.0], 3.0)
        z = np.array([0.3, -0.7])
        out = euler_step(np.array([1.0, 1.0]), g, 0.1, z)
        assert np.allclose(out, 1.0 + math.sqrt(0.2) * z)

    def test_overflow_raises(self):
        g = builtin_gaussian_location(1, 0.0, 1.0)
        with pytest.raises(DivergenceError):
            euler_step(np.array([1e308]), g, 1e10, np.zeros(1))

    def test_stationary_variance_matches_ar1(self):
        # 2/(rho (2 - gamma rho)) is the exact AR(1) stationary variance
        gamma, rho, n = 0.01, 1.0, 10**6
        cfg = ChainConfig(gamma=gamma, n_steps=n, x0=[0.0], seed=3)
        run = run_chain(OU, cfg)
        # recover second moment from long-run Cesaro of squares via a second pass
        rng = stream(3)
        x = 0.0
        acc = 0.0
        for block in range(n // 10**4):
            z = rng.standard_normal(10**4)
            for zz in z:
                acc += x * x
                x = x - gamma * x + math.sqrt(2 * gamma) * zz
        emp = acc / n
        assert emp == pytest.approx(2.0 / (rho * (2.0 - gamma * rho)), rel=0.02)


class TestRunChain:
    def test_single_step_cesaro_is_x0(self):
        cfg = ChainConfig(gamma=0.1, n_steps=1, x0=[2.0], seed=5)
        run = run_chain(OU, cfg)
        assert run.cesaro[0] == 2.0

    def test_cesaro_indexing_excludes_final_state(self):
        cfg = ChainConfig(gamma=0.1, n_steps=3, x0=[1.0], seed=7)
        run = run_chain(OU, cfg)
        rng = stream(7)
        x = 1.0
        states = []
        for _ in range(3):
            states.append(x)
            x = x - 0.1 * x + math.sqrt(0.2) * rng.standard_normal(1)[0]
        assert run.cesaro[0] == pytest.approx(np.mean(states), rel=1e-15)
        assert run.final_state[0] == pytest.approx(x, rel=1e-15)

    def test_ou_cesaro_within_4_sigma(self):
        gamma, n = 0.1, 10**5
        cfg = ChainConfig(gamma=gamma, n_steps=n, x0=[0.0], seed=11)
        run = run_chain(OU, cfg)
        _, var = ou_cesaro_moments(1.0, 0.0, gamma, n, 0.0)
        assert abs(run.cesaro[0]) <= 4.0 * math.sqrt(var)

    def test_conjugate_posterior_mean_within_4_sigma(self):
        model = GaussianLocationModel(1, 1.0)
        data = sample_dataset(model, [0.3], 100, seed=21)
        post = build_posterior(model, data, standard_gaussian_prior(1))
        target = data.observations.sum() / 101.0
        gamma, n = 1e-3, 2 * 10**4
        cfg = ChainConfig(gamma=gamma, n_steps=n, x0=post.mode, seed=23)
        run = run_chain(post.potential, cfg)
        # the posterior chain is an exact AR(1) with curvature n rho + 1
        _, var = ou_cesaro_moments(101.0, 0.0, gamma, n, 0.0)
        assert abs(run.cesaro[0] - target) <= 4.0 * math.sqrt(var)

    def test_kahan_cesaro_matches_recomputation(self):
        cfg = ChainConfig(gamma=0.05, n_steps=500, x0=[1.5], seed=31)
        run = run_chain(OU, cfg)
        rng = stream(31)
        x = 1.5
        states = []
        for _ in range(500):
            states.append(x)
            x = x - 0.05 * x + math.sqrt(0.1) * rng.standard_normal(1)[0]
        assert abs(run.cesaro[0] - np.mean(states)) < 1e-12

    def test_divergence_carries_partial_run(self):
        steep = builtin_gaussian_location(1, 0.0, 1.0)
        cfg = ChainConfig(gamma=3.0, n_steps=200, x0=[1e6], seed=1)
        with pytest.raises(DivergenceError) as exc:
            run_chain(steep, cfg)
        assert exc.value.step is not None
        assert exc.value.payload.diverged_step == exc.value.step

    def test_clamp_flag_enforced(self):
        g = builtin_gaussian_location(2, 0.0, 1.0)
        limit = moment_clamp(g)
        with pytest.raises(ParameterError):
            run_chain(g, ChainConfig(gamma=2 * limit, n_steps=10, x0=[0.0, 0.0], seed=0, clamp=True))
        run_chain(g, ChainConfig(gamma=limit, n_steps=10, x0=[0.0, 0.0], seed=0, clamp=True))

    def test_moment_exponent_validated(self):
        with pytest.raises(ParameterError):
            ChainConfig(gamma=0.1, n_steps=10, x0=[0.0], seed=0, track_moments=0.2)


class TestTangent:
    def test_gaussian_exact_contraction(self):
        gamma, rho = 0.1, 1.0
        cfg = ChainConfig(
            gamma=gamma, n_steps=30, x0=[0.5], seed=2, track_tangent=True, checkpoints=30
        )
        run = run_chain(OU, cfg)
        for t, norm in run.tangent_log:
            k = round(t / gamma)
            assert norm == pytest.approx((1 - gamma * rho) ** k, abs=1e-14)

    def test_sc_contraction_bound_nonquadratic(self):
        # W = |x|^2/2 + 0.1 sum log cosh(x_i): rho = 1, L = 1.1
        from cesaro_lmc.potentials import Potential, Smoothness, StronglyConvex

        def value(x):
            return 0.5 * np.sum(x**2, axis=-1) + 0.1 * np.sum(np.log(np.cosh(x)), axis=-1)

        def grad(x):
            return x + 0.1 * np.tanh(x)

        def hess_vec(x, v):
            return v + 0.1 * v / np.cosh(x) ** 2

        pot = Potential(
            dim=2, value=value, grad=grad, hess_vec=hess_vec,
            smoothness=Smoothness(L=1.1), profile=StronglyConvex(1.0),
        )
        gamma = 0.02
        cfg = ChainConfig(
            gamma=gamma, n_steps=100, x0=[1.0, -2.0], seed=3, track_tangent=True, checkpoints=100
        )
        run = run_chain(pot, cfg)
        for t, norm in run.tangent_log:
            assert norm <= math.exp(-t) * (1 + 10 * gamma * 1.1) + 1e-12


class TestFineDiffusion:
    def test_k1_reduces_to_run_chain(self):
        cfg1 = ChainConfig(gamma=0.1, n_steps=64, x0=[1.0], seed=17, fine_substeps=1)
        cfg2 = ChainConfig(gamma=0.1, n_steps=64, x0=[1.0], seed=17)
        assert np.array_equal(run_diffusion_fine(OU, cfg1).cesaro, run_chain(OU, cfg2).cesaro)

    def test_transient_follows_substep_ar1_algebra(self):
        # per coarse step the mean contracts by (1 - gamma/K)^K; the Cesaro
        # transient it implies converges monotonically to the diffusion value
        x0, gamma, n = 5.0, 0.4, 50

        def transient(a):
            return x0 * np.mean(a ** np.arange(n))

        cont = transient(math.exp(-gamma))
        prev_gap = None
        for k_sub in (1, 4, 16):
            a_k = (1.0 - gamma / k_sub) ** k_sub
            expect = transient(a_k)
            gap = abs(expect - cont)
            if prev_gap is not None:
                assert gap < prev_gap
            prev_gap = gap
            cfg = ChainConfig(gamma=gamma, n_steps=n, x0=[x0], seed=19, fine_substeps=k_sub)
            runs = replicate_runs(OU, cfg, 400, base_seed=101)
            emp = np.mean([r.cesaro[0] for r in runs])
            _, var = ou_cesaro_moments(1.0, 0.0, gamma, n, 0.0)
            se = math.sqrt(var / 400)
            assert abs(emp - expect) <= 4.5 * se


class TestReplicates:
    def test_singleton_matches_run_chain(self):
        cfg = ChainConfig(gamma=0.1, n_steps=40, x0=[0.3], seed=0)
        rep = replicate_runs(OU, cfg, 1, base_seed=55)[0]
        single = run_chain(OU, ChainConfig(gamma=0.1, n_steps=40, x0=[0.3], seed=mix64(55, 0)))
        assert np.array_equal(rep.cesaro, single.cesaro)
        assert np.array_equal(rep.final_state, single.final_state)

    def test_bit_reproducible(self):
        cfg = ChainConfig(gamma=0.1, n_steps=25, x0=[0.0], seed=0)
        a = replicate_runs(OU, cfg, 5, base_seed=9)
        b = replicate_runs(OU, cfg, 5, base_seed=9)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.cesaro, rb.cesaro)

    def test_sample_variance_near_exact(self):
        gamma, n, m = 0.1, 300, 200
        cfg = ChainConfig(gamma=gamma, n_steps=n, x0=[0.0], seed=0)
        runs = replicate_runs(OU, cfg, m, base_seed=77)
        emp = np.var([r.cesaro[0] for r in runs], ddof=1)
        _, var = ou_cesaro_moments(1.0, 0.0, gamma, n, 0.0)
        assert emp == pytest.approx(var, rel=0.30)

    def test_divergent_replicates_do_not_abort(self):
        steep = builtin_gaussian_location(1, 0.0, 1.0)
        cfg = ChainConfig(gamma=3.0, n_steps=100, x0=[1e6], seed=0)
        runs = replicate_runs(steep, cfg, 4, base_seed=3)
        assert all(r.diverged_step is not None for r in runs)
        assert all(np.isnan(r.cesaro[0]) for r in runs)


class TestMomentTracking:
    def test_exponential_moment_stays_bounded(self):
        pot = builtin_p_power(2, 0.0, 0.75)
        gamma = moment_clamp(pot)
        cfg = ChainConfig(
            gamma=gamma, n_steps=20000, x0=[0.0, 0.0], seed=41,
            track_moments=1.0 / 16.0, checkpoints=100,
        )
        run = run_chain(pot, cfg)
        vals = np.array([v for _, v in run.moment_log])
        first_decile = vals[: max(1, len(vals) // 10)].max()
        w0 = float(pot.value_normalized(np.zeros(2)))
        assert vals.max() <= 2.0 * (math.exp(w0 / 16.0) + first_decile)


class TestBurnInAndDump:
    def test_burn_in_drops_prefix(self):
        cfg0 = ChainConfig(gamma=0.1, n_steps=10, x0=[3.0], seed=51)
        cfg5 = ChainConfig(gamma=0.1, n_steps=10, x0=[3.0], seed=51, burn_in=5)
        full = run_chain(OU, cfg0)
        burned = run_chain(OU, cfg5)
        rng = stream(51)
        x = 3.0
        states = []
        for _ in range(10):
            states.append(x)
            x = x - 0.1 * x + math.sqrt(0.2) * rng.standard_normal(1)[0]
        assert burned.cesaro[0] == pytest.approx(np.mean(states[5:]), rel=1e-14)
        assert full.cesaro[0] == pytest.approx(np.mean(states), rel=1e-14)

    def test_burn_in_validation(self):
        with pytest.raises(ParameterError):
            ChainConfig(gamma=0.1, n_steps=10, x0=[0.0], seed=0, burn_in=10)

    def test_dump_round_trip(self, tmp_path):
        from cesaro_lmc.sampler import dump_trajectory, read_trajectory

        cfg = ChainConfig(gamma=0.1, n_steps=20, x0=[1.0], seed=61)
        n_frames = dump_trajectory(OU, cfg, tmp_path / "t.bin", tmp_path / "t.json", stride=4)
        frames, header = read_trajectory(tmp_path / "t.bin", tmp_path / "t.json")
        assert n_frames == 5 and frames.shape == (5, 1)
        assert header == {"d": 1, "gamma": 0.1, "stride": 4, "seed": 61}
        assert frames[0, 0] == 1.0
        # frame k is the chain state at step k*stride
        rng = stream(61)
        x = 1.0
        states = []
        for _ in range(20):
            states.append(x)
            x = x - 0.1 * x + math.sqrt(0.2) * rng.standard_normal(1)[0]
        assert np.allclose(frames[:, 0], states[::4], rtol=0, atol=0)

    def test_replicate_chunking_identical(self):
        from cesaro_lmc.diagnostics import mse_experiment
        from cesaro_lmc.tuning import TuningPlan

        plan = TuningPlan(gamma=0.1, n_steps=100, regime="manual", constants={}, clamped=False)
        r1 = mse_experiment(OU, plan, 30, reference=[0.0], base_seed=71, jobs=1)
        r3 = mse_experiment(OU, plan, 30, reference=[0.0], base_seed=71, jobs=3)
        assert np.array_equal(r1.estimates, r3.estimates)
        assert r1.mse == r3.mse


class TestChunkBoundaryInvariance:
    @pytest.mark.parametrize("n", [1, 7, 8192, 8193, 9001])
    def test_noise_block_boundaries(self, n):
        # results are identical whatever the internal block size hits
        cfg = ChainConfig(gamma=0.05, n_steps=n, x0=[0.4], seed=n)
        a = run_chain(OU, cfg)
        b = run_chain(OU, ChainConfig(gamma=0.05, n_steps=n, x0=[0.4], seed=n))
        assert np.array_equal(a.cesaro, b.cesaro)
        assert np.array_equal(a.final_state, b.final_state)

    def test_large_batch_small_blocks(self):
        # the memory cap shrinks noise blocks for wide batches; bits must not move
        cfg = ChainConfig(gamma=0.1, n_steps=13, x0=[0.0], seed=0)
        wide = replicate_runs(OU, cfg, 600, base_seed=5)
        narrow = [
            replicate_runs(OU, cfg, 1, base_seed=5, index_offset=i)[0]
            for i in (0, 299, 599)
        ]
        for got, idx in zip(narrow, (0, 299, 599)):
            assert np.array_equal(wide[idx].cesaro, got.cesaro)
