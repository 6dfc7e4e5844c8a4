import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qkdstego.adversary import (
    OPTIMAL_POVM, ORACLE, RANDOM_BASIS_RESPONSE, RANDOM_BB84_BASIS, ChannelModel, EveStrategy,
    InsufficientSampleError, Observations, chi_squared_sf, chi_squared_uniform,
    estimate_embedding_rate, intercept_resend, mdep_curve, oracle_observations, response_matrix,
    steganalyze,
)
from qkdstego.dv import prepare_symbols, transmit
from qkdstego.qstate import EmbeddingParams, bb84_ensemble, mdep_bruteforce
from qkdstego.seeding import trial_rng

Z99 = 2.5758293035489004


def chi2_3_sf(x):
    """Closed-form survival function of chi-squared with 3 degrees of freedom."""
    return math.erfc(math.sqrt(x / 2)) + math.sqrt(2 * x / math.pi) * math.exp(-x / 2)


def eve_view(n, rate, rng, measurement=RANDOM_BB84_BASIS):
    labels = prepare_symbols(n, rng, EmbeddingParams(rate, 1.0) if rate else None)
    obs, _ = intercept_resend(labels, EveStrategy(1.0, measurement), rng)
    return obs


def power(rate, n, trials, tag, alpha=0.01):
    hits = 0
    for i in range(trials):
        hits += steganalyze(eve_view(n, rate, trial_rng(5, tag, i)), alpha).verdict
    return hits / trials


class TestChannel:
    def test_lossless_copies(self):
        x = np.arange(4).repeat(5)
        assert np.array_equal(ChannelModel().apply(x, np.random.default_rng(0)), x)

    def test_flip_stays_in_basis(self):
        x = np.arange(4).repeat(10_000)
        y = ChannelModel.depolarizing(0.3).apply(x, np.random.default_rng(1))
        assert np.array_equal(x // 2, y // 2)
        assert np.mean(x != y) == pytest.approx(0.3, abs=0.01)

    @pytest.mark.parametrize("kw", [dict(kind="lossy"), dict(kind="depolarizing", flip_probability=1.2),
                                    dict(kind="lossless", flip_probability=0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChannelModel(**kw)

    def test_strategy_invariants(self):
        with pytest.raises(ValueError):
            EveStrategy(intercept_fraction=-0.1)
        with pytest.raises(ValueError):
            EveStrategy(measurement="telepathy")


class TestInterceptResend:
    def test_zero_fraction(self):
        labels = prepare_symbols(5000, np.random.default_rng(2))
        obs, fwd = intercept_resend(labels, EveStrategy(0.0), np.random.default_rng(3))
        assert np.array_equal(fwd, labels) and len(obs) == 0

    @pytest.mark.parametrize("measurement", [RANDOM_BB84_BASIS, OPTIMAL_POVM])
    def test_untouched_symbols_pass_through(self, measurement):
        labels = prepare_symbols(5000, np.random.default_rng(4))
        obs, fwd = intercept_resend(labels, EveStrategy(0.4, measurement), np.random.default_rng(5))
        assert len(fwd) == len(labels)
        keep = ~obs.intercepted
        assert np.array_equal(fwd[keep], labels[keep])
        assert len(obs) == int(obs.intercepted.sum())

    @pytest.mark.parametrize("f,expected", [(1.0, 0.25), (0.5, 0.125), (0.0, 0.0)])
    def test_induced_qber(self, f, expected):
        errors = total = 0
        i = 0
        while total < 10_000:
            tr = transmit(4000, 1, trial_rng(9, f"qber{f}", i), eve=EveStrategy(f))
            errors += int((tr.sifted_key_sender != tr.sifted_key_receiver).sum())
            total += len(tr.sift_positions)
            i += 1
        assert errors / total == pytest.approx(expected, abs=0.02)
        if f == 0.0:
            assert errors == 0

    def test_random_basis_response(self):
        # Right basis: deterministic bit; wrong basis: 1/4 each.
        assert np.allclose(RANDOM_BASIS_RESPONSE[0], [0.5, 0.0, 0.25, 0.25])
        assert np.allclose(RANDOM_BASIS_RESPONSE[3], [0.25, 0.25, 0.0, 0.5])
        assert np.allclose(RANDOM_BASIS_RESPONSE.sum(axis=1), 1.0)

    def test_outcome_frequencies_follow_response(self):
        labels = np.full(200_000, 2)
        obs, _ = intercept_resend(labels, EveStrategy(1.0), np.random.default_rng(6))
        freq = np.bincount(obs.outcomes, minlength=4) / len(obs)
        assert freq == pytest.approx(RANDOM_BASIS_RESPONSE[2], abs=0.005)

    def test_povm_resend_is_max_posterior(self):
        hyp = EmbeddingParams(0.5, 1.0)
        response = response_matrix(OPTIMAL_POVM, hyp)
        assert np.allclose(response.sum(axis=1), 1.0)
        priors = np.array(bb84_ensemble(hyp).priors)
        labels = prepare_symbols(20_000, np.random.default_rng(7), hyp)
        obs, fwd = intercept_resend(labels, EveStrategy(1.0, OPTIMAL_POVM, hyp), np.random.default_rng(8))
        posterior_best = (priors[:, None] * response).argmax(axis=0)
        assert np.array_equal(fwd, posterior_best[obs.outcomes])

    def test_optimal_povm_is_blind_to_skew(self):
        # The minimum-error measurement for E=0.5 guesses only the two likely
        # states, and both appear with equal weight whatever the skew.
        r = response_matrix(OPTIMAL_POVM, EmbeddingParams(0.5, 1.0))
        for rate in (0.0, 0.5, 1.0):
            p = np.array(bb84_ensemble(EmbeddingParams(rate, 1.0)).priors) @ r
            assert p == pytest.approx([0.5, 0.0, 0.5, 0.0], abs=1e-6)


class TestEstimator:
    @pytest.mark.parametrize("counts,expected", [((500, 500), 0.0), ((750, 250), 0.5), ((0, 1000), -1.0)])
    def test_examples(self, counts, expected):
        assert estimate_embedding_rate(counts) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            estimate_embedding_rate((0, 0))

    @pytest.mark.parametrize("measurement", [ORACLE, RANDOM_BB84_BASIS])
    def test_unbiased(self, measurement):
        est = []
        for i in range(1000):
            rng = trial_rng(11, "unbiased" + measurement, i)
            labels = prepare_symbols(10_000, rng, EmbeddingParams(0.3, 1.0))
            if measurement == ORACLE:
                obs = oracle_observations(labels)
            else:
                obs, _ = intercept_resend(labels, EveStrategy(1.0), rng)
            est.append(steganalyze(obs).estimated_rate)
        assert np.mean(est) == pytest.approx(0.3, abs=0.02)

    def test_blind_measurement_gives_nan(self):
        obs = eve_view(2000, 0.5, np.random.default_rng(0), OPTIMAL_POVM)
        assert math.isnan(steganalyze(obs).estimated_rate)


class TestChiSquared:
    def test_uniform_counts(self):
        assert chi_squared_uniform([250] * 4) == (0.0, 1.0)

    def test_skewed_counts(self):
        # Each cell contributes 125^2 / 250 = 62.5.
        stat, p = chi_squared_uniform([375, 125, 375, 125])
        assert stat == 250.0 == stats.chisquare([375, 125, 375, 125]).statistic
        assert p < 1e-16

    def test_insufficient(self):
        with pytest.raises(InsufficientSampleError):
            chi_squared_uniform([9, 10, 10, 10])
        chi_squared_uniform([10, 10, 10, 10])

    @given(st.floats(0.0, 60.0))
    def test_survival_function_accuracy(self, x):
        assert chi_squared_sf(x, 3) == pytest.approx(chi2_3_sf(x), abs=1e-10)

    def test_null_calibration(self):
        rng = np.random.default_rng(12)
        draws = rng.multinomial(400, [0.25] * 4, size=10_000)
        statistics = [chi_squared_uniform(c)[0] for c in draws]
        assert stats.kstest(statistics, stats.chi2(3).cdf).pvalue > 0.01

    def test_dead_cells(self):
        stat, p = chi_squared_uniform([50, 0, 50, 0], expected=[0.5, 0.0, 0.5, 0.0])
        assert stat == 0.0 and p == 1.0
        stat, p = chi_squared_uniform([50, 1, 50, 0], expected=[0.5, 0.0, 0.5, 0.0])
        assert stat == math.inf and p == 0.0


class TestSteganalyze:
    def test_report_shape(self):
        obs = eve_view(10_000, 0.5, np.random.default_rng(13))
        rep = steganalyze(obs, 0.01, induced_qber=0.25)
        assert sum(rep.state_counts) == sum(rep.bit_counts) == rep.samples == 10_000
        assert 0.0 <= rep.p_value <= 1.0
        assert rep.verdict and rep.measurement == RANDOM_BB84_BASIS
        d = rep.to_dict()
        assert d["samples"] == 10_000 and d["induced_qber"] == 0.25

    def test_empty(self):
        with pytest.raises(ValueError):
            steganalyze(Observations(np.array([], dtype=int)))

    def test_null_false_positive_rate(self):
        fp = 0
        trials = 10_000
        for i in range(trials):
            rng = trial_rng(14, "null", i)
            fp += steganalyze(eve_view(1000, 0.0, rng)).verdict
        half = Z99 * math.sqrt(0.01 * 0.99 / trials)
        assert abs(fp / trials - 0.01) <= half

    def test_power_at_half_rate(self):
        assert power(0.5, 10_000, 1000, "p50") > 0.99

    def test_low_rate_small_sample(self):
        assert power(0.05, 100, 2000, "low") < 0.05

    def test_power_monotone(self):
        # Neighbouring cells may only decrease by Monte Carlo noise (99% half-width).
        trials = 1000
        rates = (0.05, 0.1, 0.2)
        sizes = (100, 1000, 4000)
        grid = np.array([[power(e, n, trials, f"grid{e}-{n}") for n in sizes] for e in rates])
        slack = Z99 * math.sqrt(0.25 / trials)
        assert np.all(np.diff(grid, axis=0) >= -slack)
        assert np.all(np.diff(grid, axis=1) >= -slack)
        assert grid[-1, -1] > grid[0, 0]

    def test_oracle_mode(self):
        labels = prepare_symbols(10_000, np.random.default_rng(15), EmbeddingParams(0.5, 1.0))
        rep = steganalyze(oracle_observations(labels))
        assert rep.verdict
        assert rep.estimated_rate == pytest.approx(0.5, abs=0.03)

    def test_merge_observations(self):
        a = eve_view(100, 0.0, np.random.default_rng(1))
        b = eve_view(50, 0.0, np.random.default_rng(2))
        assert len(a.concatenate(b)) == 150
        with pytest.raises(ValueError):
            a.concatenate(oracle_observations([0, 1]))


class TestMdepCurve:
    def test_curve(self):
        grid = np.linspace(0, 1, 11)
        rows = mdep_curve(grid)
        values = [r["mdep"] for r in rows]
        assert values[0] == pytest.approx(0.5, abs=1e-4)
        assert values[-1] == pytest.approx(0.1464466, abs=1e-6)
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert all(r["converged"] for r in rows)
        for e, v in zip(grid, values):
            assert v == pytest.approx(mdep_bruteforce(bb84_ensemble(EmbeddingParams(float(e), 1.0))), abs=1e-3)
