import numpy as np
import pytest

from conftest import loop_outer, random_spd, random_symbol
from sptcov.core import CovTensor4, DegenerateTraceError, SampleStack, separable_tensor
from sptcov.estimators import (
    baseline_nkp,
    baseline_pt,
    empirical_cov,
    estimate_banded,
    estimate_from_tensor,
    estimate_full,
    estimate_separable,
    psd_project_matrix,
    rel_error,
)
from sptcov.model import BandedTensor, SepPlusBandedCov
from sptcov.stationary import StationarySymbol


def prod(a1, a2):
    return separable_tensor(a1, a2).data


class TestSeparable:
    def test_rank_one_sample(self, rng):
        u, v = rng.standard_normal(4), rng.standard_normal(5)
        x = np.outer(u, v)
        a1, a2 = estimate_separable(x[None], 0, center=False)
        np.testing.assert_allclose(prod(a1, a2), loop_outer(x), atol=1e-12)
        cos = abs(u @ a1 @ u) / (np.linalg.norm(a1) * (u @ u))
        assert cos == pytest.approx(1.0)

    def test_zero_samples(self):
        with pytest.raises(DegenerateTraceError):
            estimate_separable(np.zeros((3, 4, 4)), 1, center=False)

    def test_psd_and_symmetric(self, rng):
        xs = rng.standard_normal((10, 6, 5))
        a1, a2 = estimate_separable(xs, 2)
        for a in (a1, a2):
            np.testing.assert_array_equal(a, a.T)
            assert np.linalg.eigvalsh(a).min() >= -1e-10 * np.abs(a).max()

    def test_raw_formula(self, rng):
        xs = rng.standard_normal((4, 5, 5))
        t = sum(loop_outer(x) for x in xs) / 4
        a1, a2 = estimate_separable(xs, 1, psd=False, center=False)
        tr = sum(t[i, j, i + 1, j + 1] for i in range(4) for j in range(4))
        s1 = sum(t[:, j, :, j + 1] for j in range(4))
        s2 = sum(t[i, :, i + 1, :] for i in range(4)) / tr
        np.testing.assert_allclose(a1, (s1 + s1.T) / 2, atol=1e-12)
        np.testing.assert_allclose(a2, (s2 + s2.T) / 2, atol=1e-12)

    def test_pt_is_d0(self, rng):
        xs = rng.standard_normal((6, 4, 4))
        for got, want in zip(baseline_pt(xs), estimate_separable(xs, 0)):
            np.testing.assert_array_equal(got, want)


class TestPopulation:
    @pytest.mark.parametrize("dstar", [0, 1, 2, 3, 5])
    def test_recovers_separable_part(self, rng, dstar):
        k = 8
        a1, a2 = random_spd(rng, k, 1.0), random_spd(rng, k, 1.0)
        t = prod(a1, a2)
        if dstar:
            b = rng.standard_normal((k, k, k, k))
            t = t + BandedTensor.from_tensor(CovTensor4(b + b.transpose(2, 3, 0, 1)), dstar).to_tensor().data
        for d in range(dstar, k):
            fit = estimate_from_tensor(CovTensor4(t), d, banded_kind="none")
            np.testing.assert_allclose(prod(fit.a1, fit.a2), prod(a1, a2), atol=1e-10 * np.abs(t).max())

    def test_banded_residual_recovered(self, rng):
        k, d = 6, 2
        a1, a2 = random_spd(rng, k, 1.0), random_spd(rng, k, 1.0)
        b = rng.standard_normal((k, k, k, k))
        band = BandedTensor.from_tensor(CovTensor4(b + b.transpose(2, 3, 0, 1)), d)
        fit = estimate_from_tensor(CovTensor4(prod(a1, a2) + band.to_tensor().data), d, banded_kind="banded")
        np.testing.assert_allclose(fit.to_tensor().data, prod(a1, a2) + band.to_tensor().data, atol=1e-10)


class TestFull:
    def test_none_kind(self, rng):
        assert estimate_full(rng.standard_normal((5, 4, 4)), 2, banded_kind="none").banded is None

    def test_d1_banded_variance_map(self, rng):
        xs = rng.standard_normal((7, 5, 6))
        fit = estimate_full(xs, 1, banded_kind="banded", center=False)
        v = np.mean(xs**2, axis=0) - np.outer(np.diag(fit.a1), np.diag(fit.a2))
        np.testing.assert_allclose(fit.banded.variance_map(), v, atol=1e-12)

    @pytest.mark.parametrize("kind", ["stationary", "banded", "none"])
    @pytest.mark.parametrize("psd", [False, True])
    def test_vs_dense_pipeline(self, rng, kind, psd):
        xs = rng.standard_normal((5, 6, 6))
        for d in (1, 2, 4):
            fit = estimate_full(xs, d, banded_kind=kind, psd=psd, center=False)
            ref = estimate_from_tensor(CovTensor4(sum(loop_outer(x) for x in xs) / 5), d, kind, psd=psd)
            np.testing.assert_allclose(fit.to_tensor().data, ref.to_tensor().data, atol=1e-10)

    def test_band_and_bandwidth(self, rng):
        xs = rng.standard_normal((20, 7, 7))
        raw = estimate_full(xs, 3, psd=False)
        assert raw.d == 3 and raw.banded.band == 3
        for h in range(-6, 7):
            for l in range(-6, 7):
                if max(abs(h), abs(l)) >= 3:
                    assert raw.banded.at(h, l) == 0.0
        assert estimate_full(xs, 3).banded.spectrum.min >= -1e-10

    def test_centering(self, rng):
        xs = rng.standard_normal((30, 5, 5))
        a = estimate_full(xs + 5.0, 1)
        b = estimate_full(xs, 1)
        np.testing.assert_allclose(a.to_tensor().data, b.to_tensor().data, atol=1e-10)

    def test_bad_kind(self, rng):
        with pytest.raises(ValueError):
            estimate_full(rng.standard_normal((3, 3, 3)), 1, banded_kind="dense")

    def test_estimate_banded_needs_band(self, rng):
        with pytest.raises(ValueError):
            estimate_banded(rng.standard_normal((3, 3, 3)), np.eye(3), np.eye(3), 0)


class TestBaselines:
    def test_nkp_rank_one(self, rng):
        u, v = rng.standard_normal(4), rng.standard_normal(3)
        x = np.outer(u, v)
        res = baseline_nkp(x[None], center=False)
        assert res.converged and res.iterations <= 2
        np.testing.assert_allclose(prod(res.a1, res.a2), loop_outer(x), atol=1e-12)

    def test_nkp_vs_svd(self, rng):
        xs = rng.standard_normal((3, 4, 4))
        t = sum(loop_outer(x) for x in xs) / 3
        r = t.transpose(0, 2, 1, 3).reshape(16, 16)
        u, s, vt = np.linalg.svd(r)
        best = s[0] * np.einsum("ik,jl->ijkl", u[:, 0].reshape(4, 4), vt[0].reshape(4, 4))
        res = baseline_nkp(xs, iters=2000, tol=1e-13, center=False)
        np.testing.assert_allclose(prod(res.a1, res.a2), best, atol=1e-8)

    def test_nkp_fixed_point(self, rng):
        a1, a2 = random_spd(rng, 4), random_spd(rng, 5)
        res = baseline_nkp((a1, a2))
        np.testing.assert_allclose(prod(res.a1, res.a2), prod(a1, a2), atol=1e-12)

    def test_nkp_warns(self, rng):
        with pytest.warns(RuntimeWarning):
            res = baseline_nkp(rng.standard_normal((5, 4, 4)), iters=1, tol=0.0)
        assert not res.converged

    def test_empirical(self, rng):
        x = rng.standard_normal((3, 2))
        np.testing.assert_allclose(empirical_cov(x[None], center=False).data, loop_outer(x))
        xs = np.array([[[1.0, 2.0], [0.0, -1.0]], [[3.0, 0.0], [1.0, 1.0]]])
        t = empirical_cov(xs, center=False)
        assert t.is_symmetric()
        assert t.data[0, 0, 0, 0] == pytest.approx((1 + 9) / 2)
        assert t.data[0, 1, 1, 1] == pytest.approx((2 * -1 + 0 * 1) / 2)
        assert t.data[1, 0, 0, 0] == pytest.approx((0 + 3) / 2)


class TestPsdAndError:
    def test_psd_examples(self, rng):
        a = random_spd(rng, 5)
        np.testing.assert_allclose(psd_project_matrix(a), a, atol=1e-10)
        np.testing.assert_allclose(psd_project_matrix(np.diag([1.0, -1.0])), np.diag([1.0, 0.0]))
        np.testing.assert_allclose(psd_project_matrix(-a), a, atol=1e-10)

    def test_psd_idempotent(self, rng):
        for _ in range(20):
            m = rng.standard_normal((6, 6))
            p = psd_project_matrix(m)
            assert np.linalg.eigvalsh(p).min() >= -1e-10
            np.testing.assert_allclose(psd_project_matrix(p), p, atol=1e-10)

    def test_rel_error(self, rng):
        a1, a2 = random_spd(rng, 6), random_spd(rng, 6)
        truth = SepPlusBandedCov(a1, a2, StationarySymbol(random_symbol(rng, 6, 6), band=2), 2)
        assert rel_error(truth, truth) == pytest.approx(0.0, abs=1e-7)
        zero = SepPlusBandedCov(np.zeros((6, 6)), np.zeros((6, 6)))
        assert rel_error(zero, truth) == pytest.approx(1.0)
        est = estimate_full(rng.standard_normal((8, 6, 6)), 2)
        want = np.linalg.norm(est.to_tensor().data - truth.to_tensor().data) / np.linalg.norm(truth.to_tensor().data)
        assert rel_error(est, truth) == pytest.approx(want, rel=1e-10)
        ece = empirical_cov(rng.standard_normal((8, 6, 6)))
        want = np.linalg.norm(ece.data - truth.to_tensor().data) / np.linalg.norm(truth.to_tensor().data)
        assert rel_error(ece, truth) == pytest.approx(want, rel=1e-10)
        with pytest.raises(ValueError):
            rel_error(truth, zero)
