import numpy as np
import pytest

from hankelx.hankel import HankelShape, WeightedSignal, hankel_dense
from hankelx.recovery import (
    Factors,
    RecoveryConfig,
    SolverError,
    approx_dist,
    default_gamma,
    hsnld_step,
    project_incoherence,
    recovery_error,
    run_hsnld,
    run_plain_gd,
    spectral_init,
)
from hankelx.recovery import _refresh
from hankelx.sampling import WITHOUT_REPLACEMENT, project_obs, sample_pattern
from hankelx.signals import OutlierSpec, inject_outliers, spectral_signal

from conftest import rand_complex, rel_err


def truth_factors(sig, r):
    X = hankel_dense(sig)
    U, S, Vh = np.linalg.svd(X, full_matrices=False)
    L = U[:, :r] * np.sqrt(S[:r])
    R = Vh[:r].conj().T * np.sqrt(S[:r])
    return X, L, R, S[:r]


def make_instance(n, r, kappa, m, alpha, seed):
    sig, _ = spectral_signal(n, r, kappa, seed=seed)
    pattern = sample_pattern(n, m, WITHOUT_REPLACEMENT, seed=seed + 1)
    f_obs, s_true = inject_outliers(sig, pattern, OutlierSpec(alpha, 10.0, seed + 2))
    return sig, pattern, f_obs, s_true


def row_cross_norms(L, R):
    prod = L @ R.conj().T
    return max(
        np.linalg.norm(prod, axis=1).max(), np.linalg.norm(prod.conj().T, axis=1).max()
    )


def test_default_gamma_schedule():
    assert abs(default_gamma(0) - 1.5) <= 1e-12
    assert default_gamma(50) > 1.0
    assert default_gamma(10) < default_gamma(0)


def test_config_validation():
    with pytest.raises(ValueError):
        RecoveryConfig(rank=0, alpha=0.1).validate()
    with pytest.raises(ValueError):
        RecoveryConfig(rank=1, alpha=0.1, eta=1.5).validate()
    with pytest.raises(ValueError):
        RecoveryConfig(rank=1, alpha=0.1, incoherence_bound=-1.0).validate()
    with pytest.raises(ValueError):
        RecoveryConfig(rank=1, alpha=0.1, gamma=lambda k: 0.9).gamma_at(0)


def test_project_incoherence_identity_within_bound(rng):
    L = rand_complex(rng, 12, 2)
    R = rand_complex(rng, 11, 2)
    big = 10 * row_cross_norms(L, R)
    out = project_incoherence(L, R, big)
    np.testing.assert_array_equal(out.L, L)
    np.testing.assert_array_equal(out.R, R)


def test_project_incoherence_scalar_case():
    # row norm of L against (R^H R)^{1/2} is 2, so the row shrinks onto the
    # radius: min(1, 1/2) * 2 = 1; symmetrically R against (L^H L)^{1/2}
    out = project_incoherence(np.array([[2.0]]), np.array([[1.0]]), 1.0)
    np.testing.assert_allclose(out.L, [[1.0]], atol=1e-14)
    np.testing.assert_allclose(out.R, [[0.5]], atol=1e-14)


def test_project_incoherence_enforces_bound(rng):
    for _ in range(10):
        L = 3 * rand_complex(rng, 15, 3)
        R = 2 * rand_complex(rng, 13, 3)
        bound = 0.4 * row_cross_norms(L, R)
        out = project_incoherence(L, R, bound)
        assert row_cross_norms(out.L, out.R) <= bound * (1 + 1e-12)


def test_project_incoherence_idempotent_on_image(rng):
    L = 3 * rand_complex(rng, 9, 2)
    R = rand_complex(rng, 8, 2)
    bound = 0.5 * row_cross_norms(L, R)
    once = project_incoherence(L, R, bound)
    # rows on or inside the radius are left alone when projected again with
    # the (smaller) projected Grams
    twice = project_incoherence(once.L, once.R, bound)
    np.testing.assert_array_equal(once.L, twice.L)
    np.testing.assert_array_equal(once.R, twice.R)


def test_project_incoherence_nonexpansive_near_truth():
    # shrinking rows never increases the alignment distance (checked through
    # the upper-bound diagnostic, which is exact at these small sizes)
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        sig, _ = spectral_signal(41, 2, 2.0, seed=seed)
        X, L_star, R_star, sigma = truth_factors(sig, 2)
        L = L_star + 0.05 * rand_complex(rng, *L_star.shape) * np.abs(L_star).mean()
        R = R_star + 0.05 * rand_complex(rng, *R_star.shape) * np.abs(R_star).mean()
        bound = 1.05 * np.linalg.norm(L_star @ R_star.conj().T, axis=1).max()
        before = approx_dist(Factors(L, R), L_star, R_star, sigma)
        out = project_incoherence(L, R, bound)
        after = approx_dist(out, L_star, R_star, sigma)
        if after > before * (1 + 1e-6):
            violations += 1
    assert violations == 0


def test_spectral_init_full_observation_exact():
    n, r = 101, 3
    sig, _ = spectral_signal(n, r, 5.0, seed=21)
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=22)
    f_obs = project_obs(sig.z, pattern)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.0, seed=23)
    X = hankel_dense(sig)
    assert rel_err(init.factors.L @ init.factors.R.conj().T, X) <= 1e-6


def test_spectral_init_zero_input():
    n = 31
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=0)
    init = spectral_init(np.zeros(n), pattern, HankelShape.square(n), 2, 0.1, seed=0)
    assert np.allclose(init.factors.L, 0)
    assert np.allclose(init.factors.R, 0)
    assert init.top_singular_value == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_spectral_init_lands_in_basin(seed):
    n, r = 125, 10
    sig, pattern, f_obs, _ = make_instance(n, r, 10.0, 100, 0.05, 1000 + 7 * seed)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.05, seed=seed)
    X = hankel_dense(sig)
    rel = rel_err(init.factors.L @ init.factors.R.conj().T, X)
    assert rel < 1.0


def test_spectral_init_rejects_offsupport_data():
    n = 21
    pattern = sample_pattern(n, 5, WITHOUT_REPLACEMENT, seed=1)
    bad = np.ones(n, dtype=complex)
    with pytest.raises(ValueError):
        spectral_init(bad, pattern, HankelShape.square(n), 1, 0.0, seed=0)


def _state_at(factors, f_obs, pattern, shape, config, bound=1e9):
    return _refresh(Factors(*factors), f_obs, pattern, shape, config, 0, bound)


def test_hsnld_step_fixed_point_at_truth():
    n, r = 101, 3
    sig, pattern, f_obs, s_true = make_instance(n, r, 5.0, n, 0.05, 31)
    X, L, R, _ = truth_factors(sig, r)
    config = RecoveryConfig(rank=r, alpha=0.05, incoherence_bound=1e9)
    state = _state_at((L, R), f_obs, pattern, sig.shape, config)
    np.testing.assert_allclose(state.s.s, s_true.s, atol=1e-9)
    stepped = hsnld_step(state, f_obs, pattern, sig.shape, config)
    drift = np.linalg.norm(stepped.factors.L @ stepped.factors.R.conj().T - X)
    assert drift <= 1e-10 * np.linalg.norm(X)


def test_hsnld_step_eta_zero_refreshes_only_outliers():
    n, r = 64, 2
    sig, pattern, f_obs, _ = make_instance(n, r, 2.0, 50, 0.1, 41)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.1, seed=0)
    config = RecoveryConfig(rank=r, alpha=0.1, eta=0.0, incoherence_bound=1e9)
    state = _state_at((init.factors.L, init.factors.R), f_obs, pattern, sig.shape, config)
    stepped = hsnld_step(state, f_obs, pattern, sig.shape, config)
    np.testing.assert_array_equal(stepped.factors.L, state.factors.L)
    np.testing.assert_array_equal(stepped.factors.R, state.factors.R)
    assert stepped.iteration == 1


def test_hsnld_step_contracts_inside_basin():
    # once the factor-product error is below 0.01 * sigma_r, every step
    # shrinks it by at least the guaranteed 1 - 0.6 * eta = 0.7
    n, r = 255, 5
    sig, pattern, f_obs, _ = make_instance(n, r, 100.0, n, 0.05, 51)
    X, _, _, sigma = truth_factors(sig, r)
    config = RecoveryConfig(rank=r, alpha=0.05, max_iters=60, tol_residual=0.0)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.05, seed=config.seed)
    state = _refresh(init.factors, f_obs, pattern, sig.shape, config, 0,
                     init.incoherence_bound)
    gate = 0.01 * sigma[-1]
    checked = 0
    prev = np.linalg.norm(state.factors.L @ state.factors.R.conj().T - X)
    for _ in range(60):
        state = hsnld_step(state, f_obs, pattern, sig.shape, config)
        cur = np.linalg.norm(state.factors.L @ state.factors.R.conj().T - X)
        if prev < gate and prev > 1e-11 * np.linalg.norm(X):
            assert cur <= 0.7 * prev
            checked += 1
        prev = cur
    assert checked >= 10


def test_run_hsnld_clean_full_observation_fast():
    n, r = 255, 3
    sig, _ = spectral_signal(n, r, 1.0, seed=61)
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=62)
    f_obs = project_obs(sig.z, pattern)
    config = RecoveryConfig(rank=r, alpha=0.0)
    report = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert report.termination == "residual_tol"
    assert report.iterations <= 40
    # exact rank-r data with full observation initializes at the answer
    assert report.iterations <= 1


@pytest.mark.parametrize("seed", range(20))
def test_run_hsnld_monotone_residual_after_burn_in(seed):
    n, r = 101, 3
    sig, _ = spectral_signal(n, r, 3.0, seed=2000 + seed)
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=3000 + seed)
    f_obs = project_obs(sig.z, pattern)
    config = RecoveryConfig(rank=r, alpha=0.0, max_iters=30, tol_residual=1e-12)
    report = run_hsnld(f_obs, pattern, sig.shape, config)
    res = report.residuals()
    tail = res[3:]
    assert np.all(np.diff(tail) <= 1e-12 + 1e-6 * tail[:-1])


def test_run_hsnld_iterates_stay_incoherent_and_supported():
    n, r = 125, 4
    sig, pattern, f_obs, _ = make_instance(n, r, 10.0, 100, 0.1, 71)
    config = RecoveryConfig(rank=r, alpha=0.1, max_iters=25)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.1,
                         bound=config.incoherence_bound, seed=config.seed)
    state = _refresh(init.factors, f_obs, pattern, sig.shape, config, 0,
                     init.incoherence_bound)
    observed = set(pattern.indices)
    for _ in range(15):
        state = hsnld_step(state, f_obs, pattern, sig.shape, config)
        assert row_cross_norms(state.factors.L, state.factors.R) <= (
            init.incoherence_bound * (1 + 1e-10)
        )
        assert set(state.s.support) <= observed


def test_run_hsnld_partial_with_outliers_recovers():
    n, r = 255, 5
    sig, pattern, f_obs, _ = make_instance(n, r, 10.0, 180, 0.1, 81)
    config = RecoveryConfig(rank=r, alpha=0.1)
    report = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert report.termination == "residual_tol"
    assert report.final_error <= 1e-3


def test_run_hsnld_trace_shape_and_determinism():
    n, r = 101, 2
    sig, pattern, f_obs, _ = make_instance(n, r, 2.0, 80, 0.05, 91)
    config = RecoveryConfig(rank=r, alpha=0.05, seed=5)
    a = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    b = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert len(a.records) == a.iterations + 1
    np.testing.assert_array_equal(a.residuals(), b.residuals())
    np.testing.assert_array_equal(a.errors(), b.errors())
    np.testing.assert_array_equal(a.signal.z, b.signal.z)


def test_run_hsnld_resample_mode_converges():
    n, r = 101, 2
    sig, _ = spectral_signal(n, r, 2.0, seed=95)
    full = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=96)
    f_full = sig.z.copy()
    pattern = sample_pattern(n, 85, WITHOUT_REPLACEMENT, seed=97)
    f_obs = project_obs(f_full, pattern)
    config = RecoveryConfig(rank=r, alpha=0.0, max_iters=200)
    report = run_hsnld(f_obs, pattern, sig.shape, config,
                       ground_truth=sig.z, resample_from=f_full)
    assert report.termination == "residual_tol"
    assert report.final_error <= 1e-3


def test_run_hsnld_stagnation_stop():
    # with the residual tolerance disabled, the run bottoms out at the
    # numerical floor and the stagnation rule has to end it
    n, r = 101, 2
    sig, _ = spectral_signal(n, r, 2.0, seed=141)
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=142)
    f_obs = project_obs(sig.z, pattern)
    config = RecoveryConfig(rank=r, alpha=0.0, tol_residual=0.0,
                            tol_stagnation=1e-6, max_iters=200)
    report = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert report.termination == "stagnation"
    assert report.final_error <= 1e-10


def test_run_hsnld_with_replacement_diagnostic_mode():
    n, r = 101, 2
    sig, _ = spectral_signal(n, r, 2.0, seed=151)
    pattern = sample_pattern(n, 3 * n, "with_replacement", seed=152)
    f_obs = project_obs(sig.z, pattern)
    config = RecoveryConfig(rank=r, alpha=0.0, max_iters=300)
    report = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert report.termination == "residual_tol"
    assert report.final_error <= 1e-3


def test_hsnld_step_requires_resolved_bound(rng):
    n, r = 64, 2
    sig, pattern, f_obs, _ = make_instance(n, r, 2.0, 50, 0.0, 161)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.0, seed=0)
    config = RecoveryConfig(rank=r, alpha=0.0)  # bound left as "auto"
    state = _refresh(init.factors, f_obs, pattern, sig.shape, config, 0)
    with pytest.raises(ValueError, match="not resolved"):
        hsnld_step(state, f_obs, pattern, sig.shape, config)


def test_run_hsnld_degenerate_gram_raises():
    # asking for rank 2 on exactly rank-1 data collapses the second factor
    # column and the preconditioner must refuse
    n = 64
    sig, _ = spectral_signal(n, 1, 1.0, seed=98)
    pattern = sample_pattern(n, n, WITHOUT_REPLACEMENT, seed=99)
    f_obs = project_obs(sig.z, pattern)
    config = RecoveryConfig(rank=2, alpha=0.0, max_iters=10, tol_residual=1e-16)
    with pytest.raises(SolverError):
        run_hsnld(f_obs, pattern, sig.shape, config)


def test_run_plain_gd_matches_on_well_conditioned():
    n, r = 255, 3
    sig, pattern, f_obs, _ = make_instance(n, r, 1.0, n, 0.0, 101)
    config = RecoveryConfig(rank=r, alpha=0.0, max_iters=500)
    fast = run_hsnld(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    slow = run_plain_gd(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    assert slow.termination == "residual_tol"
    assert slow.iterations <= 3 * max(fast.iterations, 10)


def test_run_plain_gd_eta_zero_makes_no_progress():
    n, r = 101, 2
    sig, pattern, f_obs, _ = make_instance(n, r, 2.0, 80, 0.0, 111)
    config = RecoveryConfig(rank=r, alpha=0.0, eta=0.0, max_iters=5)
    report = run_plain_gd(f_obs, pattern, sig.shape, config, ground_truth=sig.z)
    errs = report.errors()
    np.testing.assert_allclose(errs, errs[0], rtol=1e-12)


def test_recovery_error_basics(rng):
    z = rand_complex(rng, 40)
    assert recovery_error(z, z) == 0.0
    assert abs(recovery_error(np.zeros(40), z) - 1.0) <= 1e-15
    assert abs(recovery_error(1.001 * z, z) - 1e-3) <= 1e-12
    with pytest.raises(ValueError):
        recovery_error(z, np.zeros(40))
    with pytest.raises(ValueError):
        recovery_error(z, rand_complex(rng, 39))


def test_approx_dist_zero_at_truth():
    sig, _ = spectral_signal(64, 3, 4.0, seed=121)
    _, L, R, sigma = truth_factors(sig, 3)
    assert approx_dist(Factors(L, R), L, R, sigma) <= 1e-10


def test_approx_dist_gauge_invariance(rng):
    sig, _ = spectral_signal(64, 3, 4.0, seed=122)
    _, L, R, sigma = truth_factors(sig, 3)
    A = rand_complex(rng, 3, 3) + 3 * np.eye(3)
    factors = Factors(L @ A, R @ np.linalg.inv(A).conj().T)
    assert approx_dist(factors, L, R, sigma) <= 1e-8 * np.sqrt(sigma[0])


def test_approx_dist_upper_bounds_product_error():
    # consistency with the product-error bound: near the truth,
    # |L R^H - X|_F <= sqrt(2) * (1 + 0.005) * dist whenever dist < 0.01 * sigma_r
    n, r = 255, 5
    sig, pattern, f_obs, _ = make_instance(n, r, 10.0, n, 0.05, 131)
    X, L_star, R_star, sigma = truth_factors(sig, r)
    config = RecoveryConfig(rank=r, alpha=0.05, max_iters=40)
    init = spectral_init(f_obs, pattern, sig.shape, r, 0.05,
                         bound=config.incoherence_bound, seed=config.seed)
    state = _refresh(init.factors, f_obs, pattern, sig.shape, config, 0,
                     init.incoherence_bound)
    checked = 0
    for _ in range(40):
        state = hsnld_step(state, f_obs, pattern, sig.shape, config)
        d = approx_dist(state.factors, L_star, R_star, sigma)
        if d < 0.01 * sigma[-1]:
            gap = np.linalg.norm(state.factors.L @ state.factors.R.conj().T - X)
            assert gap <= np.sqrt(2) * 1.005 * d * (1 + 1e-9)
            checked += 1
    assert checked >= 5
