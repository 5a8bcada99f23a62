import math
from dataclasses import replace

import numpy as np
import pytest

from bcfsim.bmcl import (
    BmclCode,
    BmclDesign,
    asymptotic_energy_rate,
    base_matrix,
    base_matrix_energy,
    base_matrix_energy_closed,
    bler_prediction,
    closed_form_noise_terms,
    combiner,
    combiner_asymptotic,
    hadamard_rows,
    make_design,
    noise_covariance,
    optimize_gamma,
    output_snr,
    per_user_snr,
    solve_beta,
    solve_beta_asymptotic,
    spreading_matrix,
    sum_capacity,
)
from bcfsim.channel import derive_stream
from bcfsim.modulation import map_message
from bcfsim.solvers import SolverError

from _oracles import pam_ser


class TestHadamard:
    def test_order_one(self):
        assert np.array_equal(hadamard_rows(1), [[1]])

    def test_order_two(self):
        h = hadamard_rows(2)
        assert np.array_equal(h, [[1, 1], [1, -1]])
        assert h[0] @ h[1] == 0

    def test_order_four_orthogonal(self):
        h = hadamard_rows(4)
        assert np.array_equal(h @ h.T, 4 * np.eye(4, dtype=np.int64))

    def test_rejects_non_power_of_two(self):
        for bad in (0, 3, 6, 12):
            with pytest.raises(ValueError):
                hadamard_rows(bad)


class TestSpreading:
    def test_single_user_identity(self):
        assert np.array_equal(spreading_matrix(0, 7, 1), np.eye(7))

    def test_second_user_alternates(self):
        c = spreading_matrix(1, 5, 2)
        assert np.array_equal(np.diag(c), [1, -1, 1, -1, 1])
        assert np.count_nonzero(c - np.diag(np.diag(c))) == 0

    @pytest.mark.parametrize("L", [1, 2, 4, 8])
    def test_involution(self, L):
        for ell in range(L):
            c = spreading_matrix(ell, 65, L)
            assert np.array_equal(c @ c, np.eye(65))

    def test_index_validation(self):
        with pytest.raises(ValueError):
            spreading_matrix(2, 5, 2)


class TestBaseMatrix:
    def test_strictly_lower_triangular(self):
        for beta in (0.2, 0.5, 0.8):
            f = base_matrix(beta, 2, 6)
            assert np.array_equal(np.triu(f), np.zeros_like(f))

    def test_single_user_geometric_form(self):
        beta, n_hat = 0.55, 6
        f = base_matrix(beta, 1, n_hat)
        for t in range(1, n_hat + 1):
            for m in range(t):
                expect = -((1 - beta ** 2) / beta) * beta ** (t - m - 1)
                assert f[t, m] == pytest.approx(expect, rel=1e-14)

    def test_toeplitz_in_lag(self):
        f = base_matrix(0.6, 2, 8)
        for t in range(1, 8):
            for m in range(t):
                assert f[t + 1, m + 1] == f[t, m]

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            base_matrix(0.0, 2, 4)
        with pytest.raises(ValueError):
            base_matrix(1.0, 2, 4)


class TestMatrixEnergy:
    def test_vanishes_as_beta_tends_to_one(self):
        assert base_matrix_energy(1 - 1e-8, 2, 8) < 1e-12

    def test_single_entry_hand_value(self):
        # L=1, n_hat=1, beta=0.5: lone entry -(1-b^2)/b = -1.5
        f = base_matrix(0.5, 1, 1)
        assert f[1, 0] == pytest.approx(-1.5)
        assert base_matrix_energy(0.5, 1, 1) == pytest.approx(2.25)

    @pytest.mark.parametrize("L,n_hat", [(1, 5), (2, 7), (4, 12), (8, 17)])
    def test_monotone_decreasing_in_beta(self, L, n_hat):
        grid = np.arange(0.1, 0.95, 0.05)
        vals = [base_matrix_energy(b, L, n_hat) for b in grid]
        assert np.all(np.diff(vals) < 0.0)

    @pytest.mark.parametrize("L", [1, 2, 4])
    @pytest.mark.parametrize("beta", [0.15, 0.5, 0.85])
    def test_closed_form_agrees_with_direct_sum(self, L, beta):
        for n_hat in (1, 4, 9, 16):
            direct = base_matrix_energy(beta, L, n_hat)
            closed = base_matrix_energy_closed(beta, L, n_hat)
            assert closed == pytest.approx(direct, rel=1e-12)


class TestBetaSolvers:
    def test_finite_blocklength_residual(self):
        beta = solve_beta(0.4, 1.0, 0.5, 0.01, 2, 9)
        target = 9 * 1.0 * 0.4 / (2 * 0.51)
        assert base_matrix_energy(beta, 2, 7) == pytest.approx(target, rel=1e-10)

    def test_larger_gamma_means_smaller_beta(self):
        betas = [solve_beta(g, 1.0, 0.5, 0.0, 2, 9) for g in (0.2, 0.4, 0.6, 0.8)]
        assert np.all(np.diff(betas) < 0.0)

    def test_feedback_noise_rescales_target(self):
        # solving with (sigma_b2 + sigma_f2) equals solving a perfect-feedback
        # problem whose gamma is scaled by the same factor
        b1 = solve_beta(0.3, 1.0, 0.5, 0.001, 2, 9)
        b2 = solve_beta(0.3 * 0.5 / 0.501, 1.0, 0.5, 0.0, 2, 9)
        assert b1 == pytest.approx(b2, rel=1e-9)

    def test_gamma_domain(self):
        with pytest.raises(ValueError):
            solve_beta(0.0, 1.0, 0.5, 0.0, 2, 9)
        with pytest.raises(ValueError):
            solve_beta(0.5, 1.0, 0.5, 0.0, 2, 2)

    @pytest.mark.parametrize("L", [1, 2, 4, 8])
    def test_asymptotic_rate_strictly_decreasing(self, L):
        grid = np.linspace(0.05, 0.95, 200)
        vals = [asymptotic_energy_rate(b, L) for b in grid]
        assert np.all(np.diff(vals) < 0.0)

    def test_asymptotic_matches_capacity_parameter(self):
        snr = 10 ** 0.4
        beta = solve_beta_asymptotic(1.0, 1.0, 1.0 / snr, 0.0, 2)
        assert beta == pytest.approx(sum_capacity(snr, 2).beta_inf, rel=1e-10)

    def test_finite_blocklength_energy_rate_converges(self):
        gamma, P, sb2 = 0.5, 1.0, 0.5
        b_inf = solve_beta_asymptotic(gamma, P, sb2, 0.0, 2)
        gaps = []
        for N in (20, 100, 500):
            b = solve_beta(gamma, P, sb2, 0.0, 2, N)
            gaps.append(abs(b - b_inf))
        assert gaps[0] > gaps[1] > gaps[2]


class TestNoiseCovariance:
    def test_no_cancellation_is_white(self):
        f0 = np.zeros((5, 5))
        r = noise_covariance(f0, [f0, f0], 0.7, 0.0)
        assert np.array_equal(r, 0.7 * np.eye(5))

    def test_symmetry_exact(self):
        d = make_design(1.0, 0.5, 0.01, 2, 9, 0.5)
        assert np.array_equal(d.R, d.R.T)
        assert np.all(np.linalg.eigvalsh(d.R) > 0.0)

    def test_matches_simulated_noise_covariance(self):
        # run the time-domain protocol and compare the stacked-noise sample
        # covariance entrywise at Monte Carlo precision
        P, sb2, sf2, N = 1.0, 0.5, 0.01, 6
        code = BmclCode(P, sb2, sf2, 2, N, L=2, gamma=0.5)
        d = code.design
        rng = derive_stream(83, 0)
        B = 1_000_000
        msgs = rng.integers(0, 4, size=(2, B))
        n_b = rng.standard_normal((2, N, B)) * math.sqrt(sb2)
        n_f = rng.standard_normal((2, N, B)) * math.sqrt(sf2)
        enc = code.start(msgs)
        y = np.empty((2, N, B))
        for t in range(N):
            xt = enc.transmit(t)
            y[:, t] = xt[None, :] + n_b[:, t]
            enc.consume(t, y[:, t] + n_f[:, t])
        theta = map_message(msgs, code.constellation)
        stacked = code.stacked_observation(y, 0)
        noise = stacked.copy()
        noise[0] -= theta[0]
        # de-spread so every user shares one covariance
        noise = d.C_users[0].diagonal()[:, None] * noise
        emp = noise @ noise.T / B
        se = np.sqrt((np.outer(np.diag(d.R), np.diag(d.R)) + d.R ** 2) / B)
        assert np.all(np.abs(emp - d.R) <= 3.0 * se)


class TestCombiner:
    def test_white_noise_uses_symbol_slot_only(self):
        q = combiner(0.3 * np.eye(6))
        assert q == pytest.approx(np.eye(6)[0])

    def test_unit_gain_on_symbol_slot(self):
        for gamma in (0.2, 0.5, 0.8):
            d = make_design(1.0, 0.5, 0.0, 2, 9, gamma)
            assert d.q[0] == pytest.approx(1.0)

    def test_local_optimality(self):
        d = make_design(1.0, 0.5, 0.001, 2, 9, 0.5)
        base = d.q @ d.R @ d.q
        rng = derive_stream(89, 0)
        for _ in range(100):
            delta = rng.standard_normal(d.q.size)
            q = d.q + 1e-3 * delta
            q = q / q[0]  # keep the unbiased-combiner constraint
            assert q @ d.R @ q >= base - 1e-15


class TestOutputSnr:
    def test_no_cancellation_limit(self):
        # F = 0 with q = e1: SNR collapses to the symbol-slot energy ratio
        size = 8
        f0 = np.zeros((size, size))
        c_users = tuple(spreading_matrix(ell, size, 2) for ell in range(2))
        gamma = 1e-9
        d = BmclDesign(L=2, N=9, n_hat=7, P=1.0, sigma_b2=0.5, sigma_f2=0.0,
                       gamma=gamma, beta=0.5, theta_power=(1 - gamma) * 9 / 2,
                       F=f0, F_users=(f0, f0), C_users=c_users,
                       q=np.eye(size)[0], R=0.5 * np.eye(size), snr=0.0)
        expect = 9.0 / (2 * 0.5)
        assert output_snr(d) == pytest.approx(expect, rel=1e-6)

    def test_symmetric_across_users(self):
        d = make_design(1.0, 0.5, 0.01, 2, 9, 0.6)
        snrs = per_user_snr(d)
        assert abs(snrs[0] - snrs[1]) < 1e-12 * snrs[0]

    def test_equals_quadratic_form_identity(self):
        # the stated denominator is exactly q^T R q
        for sf2 in (0.0, 0.01):
            d = make_design(1.0, 0.5, sf2, 2, 9, 0.55)
            direct = d.theta_power / (d.q @ d.R @ d.q)
            assert output_snr(d) == pytest.approx(direct, rel=1e-12)

    def test_matches_empirical_snr(self):
        P, sb2, N = 1.0, 10 ** -0.4, 9
        code = BmclCode(P, sb2, 0.0, 3, N, L=2, gamma=0.6)
        rng = derive_stream(97, 0)
        B = 1_000_000
        msgs = rng.integers(0, 8, size=(2, B))
        n_b = rng.standard_normal((2, N, B)) * math.sqrt(sb2)
        enc = code.start(msgs)
        y = np.empty((2, N, B))
        for t in range(N):
            xt = enc.transmit(t)
            y[:, t] = xt[None, :] + n_b[:, t]
            enc.consume(t, y[:, t])
        theta = map_message(msgs, code.constellation)
        err = np.concatenate([
            code._q_users[l] @ code.stacked_observation(y, l) - theta[l]
            for l in range(2)])
        emp = code.design.theta_power / err.var()
        se_rel = math.sqrt(2.0 / err.size)
        assert emp == pytest.approx(code.design.snr, rel=4 * se_rel)


class TestClosedFormNoiseTerms:
    @pytest.mark.parametrize("L", [2, 4])
    @pytest.mark.parametrize("beta", [0.3, 0.6])
    def test_agrees_with_direct_matrices(self, L, beta):
        for n_hat in range(1, 13):
            size = n_hat + 1
            f = base_matrix(beta, L, n_hat)
            q = combiner_asymptotic(beta, n_hat)
            psi_direct = float(np.sum((q @ (np.eye(size) + f)) ** 2))
            zeta_direct = 0.0
            c0 = spreading_matrix(0, size, L)
            q0 = c0.diagonal() * q
            for i in range(1, L):
                ci = spreading_matrix(i, size, L)
                zeta_direct += float(np.sum(((q0 * ci.diagonal()) @ f) ** 2))
            psi, zeta = closed_form_noise_terms(beta, L, n_hat)
            assert psi == pytest.approx(psi_direct, rel=1e-8)
            assert zeta == pytest.approx(zeta_direct, rel=1e-8, abs=1e-12)

    def test_single_user_has_no_interference(self):
        _, zeta = closed_form_noise_terms(0.5, 1, 8)
        assert zeta == 0.0

    def test_residual_decay_constant_bounded(self):
        beta, L = 0.6, 2
        ratios = []
        for n_hat in range(4, 41):
            psi, zeta = closed_form_noise_terms(beta, L, n_hat)
            ratios.append((psi + zeta) / beta ** (2 * n_hat))
        assert max(ratios) < 10 * min(ratios)


class TestBlerPrediction:
    def test_vanishes_at_high_snr(self):
        assert bler_prediction(1e9, 9, 3 / 9) < 1e-300

    def test_one_bit_is_antipodal_detection(self):
        # a single bit at SNR s decides by sign: error Q(sqrt(s))
        for snr in (0.5, 1.0, 2.0, 4.0):
            expect = 0.5 * math.erfc(math.sqrt(snr) / math.sqrt(2))
            assert bler_prediction(snr, 3, 1 / 3) == pytest.approx(expect, rel=1e-12)

    def test_equals_pam_error_oracle(self):
        for snr in (3.0, 30.0, 300.0):
            assert bler_prediction(snr, 9, 3 / 9) == pytest.approx(
                pam_ser(snr, 3), rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            bler_prediction(0.0, 9, 1 / 3)


class TestGammaSearch:
    def test_dominates_fixed_grid_points(self):
        best = optimize_gamma(1.0, 0.5, 0.0, 2, 9)
        for gamma in (0.25, 0.5, 0.75):
            assert best.snr >= make_design(1.0, 0.5, 0.0, 2, 9, gamma).snr

    def test_feedback_noise_never_helps(self):
        snrs = [optimize_gamma(1.0, 0.5, sf2, 2, 9).snr
                for sf2 in (0.0, 1e-3, 1e-2, 1e-1)]
        assert np.all(np.diff(snrs) < 0.0)

    def test_grid_refinement_changes_little(self):
        coarse = optimize_gamma(1.0, 0.5, 0.01, 2, 9, step=0.01)
        fine = optimize_gamma(1.0, 0.5, 0.01, 2, 9, step=0.001)
        assert fine.snr == pytest.approx(coarse.snr, rel=1e-3)
        assert fine.snr >= coarse.snr - 1e-12


class TestTrialRunner:
    def test_matches_matrix_model_on_tapes(self):
        P, sb2, sf2, K, N = 1.0, 10 ** -0.4, 1e-2, 3, 9
        code = BmclCode(P, sb2, sf2, K, N, L=2)
        d = code.design
        rng = derive_stream(101, 0)
        B = 2000
        msgs = rng.integers(0, 8, size=(2, B))
        n_b = rng.standard_normal((2, N, B)) * math.sqrt(sb2)
        n_f = rng.standard_normal((2, N, B)) * math.sqrt(sf2)
        enc = code.start(msgs)
        y = np.empty((2, N, B))
        for t in range(N):
            xt = enc.transmit(t)
            y[:, t] = xt[None, :] + n_b[:, t]
            enc.consume(t, y[:, t] + n_f[:, t])
        theta = map_message(msgs, code.constellation)
        e1 = np.zeros((d.n_hat + 1, 1))
        e1[0] = 1.0
        for ell in range(2):
            got = code.stacked_observation(y, ell)
            nb_l = np.concatenate([n_b[ell, ell:ell + 1], n_b[ell, 2:]], axis=0)
            nf_l = np.concatenate([n_f[ell, ell:ell + 1], n_f[ell, 2:]], axis=0)
            model = e1 * theta[ell] + (np.eye(d.n_hat + 1) + d.F_users[ell]) @ nb_l \
                + d.F_users[ell] @ nf_l
            other = 1 - ell
            nb_o = np.concatenate([n_b[other, other:other + 1], n_b[other, 2:]], axis=0)
            nf_o = np.concatenate([n_f[other, other:other + 1], n_f[other, 2:]], axis=0)
            model += d.F_users[other] @ (nb_o + nf_o)
            assert np.max(np.abs(got - model)) < 1e-9

    def test_near_noiseless_recovery(self):
        code = BmclCode(1.0, 1e-12, 1e-13, 2, 8, L=2, gamma=0.5)
        rng = derive_stream(103, 0)
        B = 256
        msgs = rng.integers(0, 4, size=(2, B))
        n_b = rng.standard_normal((2, 8, B)) * 1e-6
        n_f = rng.standard_normal((2, 8, B)) * math.sqrt(1e-13)
        enc = code.start(msgs)
        y = np.empty((2, 8, B))
        for t in range(8):
            xt = enc.transmit(t)
            y[:, t] = xt[None, :] + n_b[:, t]
            enc.consume(t, y[:, t] + n_f[:, t])
        theta = map_message(msgs, code.constellation)
        for ell in range(2):
            est = code._q_users[ell] @ code.stacked_observation(y, ell)
            assert np.max(np.abs(est - theta[ell])) < 1e-4

    @pytest.mark.parametrize("L", [2, 4])
    def test_multiuser_power_within_budget(self, L):
        sb2 = 0.5
        code = BmclCode(1.0, sb2, 0.0, 2, 4 * L, L=L, gamma=0.5)
        rng = derive_stream(107, L)
        B = 100_000
        msgs = rng.integers(0, 4, size=(L, B))
        n_b = rng.standard_normal((L, 4 * L, B)) * math.sqrt(sb2)
        enc = code.start(msgs)
        x = np.empty((4 * L, B))
        for t in range(4 * L):
            xt = enc.transmit(t)
            x[t] = xt
            y_t = xt[None, :] + n_b[:, t]
            enc.consume(t, y_t)
        energy = (x * x).sum(axis=0)
        mean = energy.mean() / (4 * L)
        se = energy.std() / math.sqrt(B) / (4 * L)
        assert mean <= 1.0 + 3.0 * se


class TestSumCapacity:
    def test_unit_rate_point(self):
        # at beta_inf = 1/2 the single-user equation needs SNR = 3
        snr = asymptotic_energy_rate(0.5, 1)
        assert snr == pytest.approx(3.0)
        assert sum_capacity(3.0, 1).c_sum == pytest.approx(1.0, abs=1e-10)

    def test_limit_equation_residual(self):
        r = sum_capacity(10.0, 4)
        lhs = (1 - math.exp(-2 * r.alpha_limit)) ** 2 \
            / (2 * r.alpha_limit * math.exp(-2 * r.alpha_limit))
        assert lhs == pytest.approx(10.0, rel=1e-10)

    def test_domain(self):
        with pytest.raises(ValueError):
            sum_capacity(0.0, 2)
        with pytest.raises(ValueError):
            sum_capacity(1.0, 0)
