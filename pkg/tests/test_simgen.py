import numpy as np
import pytest

from sptcov.core import make_rng
from sptcov.model import BandedTensor
from sptcov.simgen import (
    ExperimentConfig,
    SimConfig,
    default_candidates,
    error_experiment,
    legendre_cov,
    ma_filter,
    ma_scale,
    ma_symbol,
    noise_variance_map,
    sample_ma,
    sample_matrix_normal,
    simulate,
    wiener_cov,
)
from sptcov.stationary import StationarySymbol, symbol_fro_norm


def mc_cov(xs):
    n = len(xs)
    flat = xs.reshape(n, -1)
    return flat.T @ flat / n, flat


def within_se(emp_flat, target, z=4.0):
    """Entrywise check of a second-moment matrix against ``target`` within z standard errors."""
    n = emp_flat.shape[0]
    prods = emp_flat[:, :, None] * emp_flat[:, None, :]
    mean = prods.mean(axis=0)
    se = prods.std(axis=0) / np.sqrt(n)
    return np.all(np.abs(mean - target) <= z * se + 1e-12)


class TestFactors:
    def test_legendre(self):
        a = legendre_cov(20)
        np.testing.assert_allclose(a, a.T, atol=1e-15)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
        w = np.sort(np.linalg.eigvalsh(a))[::-1]
        assert w[6] > 1e-3 and abs(w[7]) <= 1e-10
        assert w.min() >= -1e-12
        # linear decay of the non-zero spectrum
        np.testing.assert_allclose(w[:7] / w[0], (8 - np.arange(1, 8)) / 7, atol=1e-12)

    def test_legendre_rank_limit(self):
        with pytest.raises(ValueError):
            legendre_cov(5, rank=7)

    def test_wiener(self):
        np.testing.assert_allclose(wiener_cov(2), np.array([[0.5, 0.5], [0.5, 1.0]]) / np.sqrt(1.75))
        a = wiener_cov(10)
        assert np.linalg.eigvalsh(a).min() > 0
        assert np.linalg.norm(a) == pytest.approx(1.0)


class TestFilters:
    def test_signed(self):
        np.testing.assert_array_equal(ma_filter("signed", 1).q[1], [-1, 1, -1])

    def test_epanechnikov(self):
        q = ma_filter("epanechnikov", 1).q
        assert q[1, 1] == pytest.approx(9 / 16)
        for a, b in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert q[a, b] == pytest.approx(9 / 64)

    def test_unknown(self):
        with pytest.raises(ValueError):
            ma_filter("box", 1)

    def test_white_symbol(self):
        sym = ma_symbol(ma_filter("signed", 0), 5, 4)
        expect = np.zeros((9, 7))
        expect[4, 3] = 1 / np.sqrt(20)
        np.testing.assert_allclose(sym.s, expect, atol=1e-15)

    @pytest.mark.parametrize("kind", ["signed", "epanechnikov"])
    def test_symbol_band_and_norm(self, kind):
        f = ma_filter(kind, 2)
        sym = ma_symbol(f, 12, 10)
        assert sym.band == 5
        for h in range(-11, 12):
            for l in range(-9, 10):
                if max(abs(h), abs(l)) >= 5:
                    assert sym.at(h, l) == 0
        assert symbol_fro_norm(sym) == pytest.approx(1.0)

    def test_sample_variance_formula(self):
        f = ma_filter("epanechnikov", 1)
        c = ma_scale(f, 8, 8)
        w = sample_ma(f, 8, 8, c, make_rng(3), n=40000)
        var = w[:, 4, 4].var()
        target = np.sum(f.q**2) * c**2
        assert abs(var - target) <= 4 * target * np.sqrt(2 / 40000)

    def test_sample_matches_symbol(self):
        f = ma_filter("signed", 1)
        k = 6
        sym = ma_symbol(f, k, k)
        w = sample_ma(f, k, k, ma_scale(f, k, k), make_rng(4), n=60000)
        _, flat = mc_cov(w)
        i, j = np.divmod(np.arange(k * k), k)
        target = np.array([[sym.at(a - c, b - e) for c, e in zip(i, j)] for a, b in zip(i, j)])
        assert within_se(flat, target)

    def test_p0_is_scaled_white_noise(self):
        f = ma_filter("signed", 0)
        w = sample_ma(f, 3, 4, 2.0, make_rng(1))
        np.testing.assert_allclose(w, 2.0 * make_rng(1).standard_normal((3, 4)))


class TestMatrixNormal:
    def test_identity(self):
        x = sample_matrix_normal(np.eye(4), np.eye(4), make_rng(0), n=20000)
        assert x.var() == pytest.approx(1.0, abs=0.02)

    def test_zero_factor(self):
        np.testing.assert_array_equal(sample_matrix_normal(np.zeros((3, 3)), np.eye(3), make_rng(0)), 0)

    def test_covariance(self):
        a1 = np.array([[2.0, 0.5, 0, 0], [0.5, 1, 0.2, 0], [0, 0.2, 1, 0.3], [0, 0, 0.3, 0.5]])
        a2 = legendre_cov(4, rank=3) + 0.1 * np.eye(4)
        x = sample_matrix_normal(a1, a2, make_rng(9), n=60000)
        _, flat = mc_cov(x)
        assert within_se(flat, np.kron(a1, a2))


class TestSimulate:
    def test_seed_determinism(self):
        cfg = SimConfig(k=10, n=20, d_true=3, seed=5)
        a, _ = simulate(cfg)
        b, _ = simulate(cfg)
        np.testing.assert_array_equal(a.data, b.data)
        c, _ = simulate(cfg, rep=1)
        assert not np.array_equal(a.data, c.data)

    def test_pure_white_noise(self):
        st, truth = simulate(SimConfig(k=4, n=5, tau=0.0, d_true=1, seed=2, rank=3))
        assert truth.banded.band == 1
        np.testing.assert_allclose(np.linalg.norm(truth.a1), 0.0)
        assert st.data.shape == (5, 4, 4)

    @pytest.mark.parametrize("kw", [{}, {"noise_sigma2": 0.5}, {"noise_sigma2": 0.5, "noise_profile": "ramp"}])
    def test_truth_matches_draws(self, kw):
        cfg = SimConfig(k=5, n=60000, tau=2.0, d_true=3, seed=7, rank=3, **kw)
        st, truth = simulate(cfg)
        _, flat = mc_cov(st.data)
        assert within_se(flat, truth.to_tensor().matrix())

    def test_ramp_is_band_storage(self):
        _, truth = simulate(SimConfig(k=6, n=3, d_true=3, noise_sigma2=1.0, noise_profile="ramp", rank=3))
        assert isinstance(truth.banded, BandedTensor)
        np.testing.assert_allclose(noise_variance_map(2, 3, 2.0, "ramp"), [[1.0, 1.5, 2.0]] * 2)

    def test_config_validation_and_roundtrip(self):
        with pytest.raises(ValueError):
            SimConfig(d_true=4)
        with pytest.raises(ValueError):
            SimConfig(k=3, d_true=5)
        with pytest.raises(ValueError):
            SimConfig(k=5, d_true=3, rank=6)
        cfg = SimConfig(k=7, d_true=3, seed=3, filter_kind="epanechnikov")
        assert SimConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            SimConfig.from_dict({**cfg.to_dict(), "rng": "mt19937"})


class TestExperiment:
    def test_candidates(self):
        assert default_candidates(50, 9) == [0, 1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21]
        assert default_candidates(6, 5) == [0, 1, 3, 5]

    def test_small_grid(self):
        cfg = ExperimentConfig(
            base=SimConfig(k=12, n=60, d_true=3, seed=1), vary="d_true", values=[0, 3], reps=2, folds=3
        )
        rows = error_experiment(cfg)
        methods = {r["method"] for r in rows}
        assert {"SPT-d", "SPT-CV", "PT", "NKP", "ECE", "SPT-CV:d", "bias"} <= methods
        for r in rows:
            assert r["q25"] <= r["median"] <= r["q75"]
        by = {(r["value"], r["method"]): r["median"] for r in rows}
        # at d = 0 the shifted estimator is plain partial tracing
        assert by[(0, "SPT-d")] == pytest.approx(by[(0, "PT")])
        assert error_experiment(cfg) == rows

    def test_config_checks(self):
        with pytest.raises(ValueError):
            ExperimentConfig(vary="rank")
        with pytest.raises(ValueError):
            ExperimentConfig(methods=("SPT",))
        cfg = ExperimentConfig.from_dict({"base": {"k": 8, "d_true": 3}, "vary": "tau", "values": [1, 3], "reps": 1})
        assert cfg.base.k == 8 and cfg.base.d_true == 3 and cfg.values == [1, 3]
