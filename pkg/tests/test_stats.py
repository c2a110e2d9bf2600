import numpy as np
import pytest

from qxfer import stats
from qxfer.niftio import ScalarVolume, VolumeHeader
from qxfer.stats import (betainc_reg, mean_abs_error, paired_t_test,
                         summarize, t_cdf)


def vol(data):
    data = np.asarray(data, dtype=float)
    return ScalarVolume(VolumeHeader(data.shape), data)


def mask_of(arr):
    return ScalarVolume(VolumeHeader(np.shape(arr), datatype="uint8"),
                        np.asarray(arr, dtype=float))


class TestMeanAbsError:
    def test_equal_maps_zero(self):
        a = vol(np.random.default_rng(0).normal(size=(4, 4, 4)))
        m = mask_of(np.ones((4, 4, 4)))
        assert mean_abs_error(a, a, m) == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        g = rng.normal(size=(4, 4, 4))
        m = mask_of(np.ones((4, 4, 4)))
        assert mean_abs_error(vol(g + 0.1), vol(g), m) == pytest.approx(
            0.1, abs=1e-12)

    def test_matches_direct_loop_oracle(self):
        rng = np.random.default_rng(2)
        est = rng.normal(size=(5, 5, 5))
        gold = rng.normal(size=(5, 5, 5))
        mask = rng.random((5, 5, 5)) < 0.5
        total, count = 0.0, 0
        for x in range(5):
            for y in range(5):
                for z in range(5):
                    if mask[x, y, z]:
                        total += abs(est[x, y, z] - gold[x, y, z])
                        count += 1
        got = mean_abs_error(vol(est), vol(gold), mask_of(mask.astype(float)))
        assert got == pytest.approx(total / count, abs=1e-12)

    def test_empty_mask_rejected(self):
        a = vol(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError, match="empty"):
            mean_abs_error(a, a, mask_of(np.zeros((2, 2, 2))))

    def test_mask_restricts_region(self):
        est = np.zeros((2, 2, 2))
        gold = np.zeros((2, 2, 2))
        est[0, 0, 0] = 1.0   # masked out
        mask = np.ones((2, 2, 2))
        mask[0, 0, 0] = 0.0
        assert mean_abs_error(vol(est), vol(gold), mask_of(mask)) == 0.0


class TestPairedTTest:
    def test_reference_example(self):
        # d = [1, 2, 3]: t = 2 sqrt(3), dof 2, p from the t distribution
        t, p = paired_t_test([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
        assert t == pytest.approx(3.4641, abs=1e-4)
        assert p == pytest.approx(0.0742, abs=1e-3)

    def test_swap_negates_t_keeps_p(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=12)
        b = rng.normal(size=12)
        t1, p1 = paired_t_test(a, b)
        t2, p2 = paired_t_test(b, a)
        assert t1 == pytest.approx(-t2, abs=1e-12)
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_p_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 20))
            t, p = paired_t_test(rng.normal(size=n), rng.normal(size=n))
            assert 0.0 < p <= 1.0

    def test_identical_lists_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    def test_single_pair_rejected(self):
        with pytest.raises(ValueError, match="two"):
            paired_t_test([1.0], [2.0])

    def test_against_scipy_oracle(self):
        from scipy import stats as sps

        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(3, 30))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            t, p = paired_t_test(a, b)
            ref = sps.ttest_rel(a, b)
            assert t == pytest.approx(ref.statistic, abs=1e-10)
            assert p == pytest.approx(ref.pvalue, abs=1e-10)


class TestTDistribution:
    # classical two-sided 95% and 90% quantiles
    REFERENCE = [
        (2, 4.302653, 0.975),
        (2, 2.919986, 0.95),
        (5, 2.570582, 0.975),
        (5, 2.015048, 0.95),
        (10, 2.228139, 0.975),
    ]

    @pytest.mark.parametrize("dof,quantile,prob", REFERENCE)
    def test_cdf_matches_reference_quantiles(self, dof, quantile, prob):
        assert t_cdf(quantile, dof) == pytest.approx(prob, abs=1e-6)

    def test_cdf_symmetry(self):
        for t in (0.3, 1.2, 4.5):
            assert t_cdf(-t, 7) == pytest.approx(1.0 - t_cdf(t, 7),
                                                 abs=1e-12)

    def test_betainc_against_scipy(self):
        from scipy.special import betainc

        rng = np.random.default_rng(6)
        for _ in range(300):
            a = rng.uniform(0.05, 40.0)
            b = rng.uniform(0.05, 40.0)
            x = rng.uniform(0.0, 1.0)
            assert betainc_reg(a, b, x) == pytest.approx(
                betainc(a, b, x), abs=1e-12)

    def test_domain_checked(self):
        with pytest.raises(ValueError):
            betainc_reg(1.0, 1.0, 1.5)
        with pytest.raises(ValueError):
            t_cdf(0.0, 0)


class TestSummarize:
    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        values = rng.normal(size=9)
        out = summarize({"col": values})
        assert out["col"][0] == pytest.approx(values.mean(), abs=1e-12)
        assert out["col"][1] == pytest.approx(values.std(ddof=1), abs=1e-12)

    def test_single_subject_sd_zero_with_warning(self):
        with pytest.warns(UserWarning, match="single subject"):
            out = summarize({"col": [0.4]})
        assert out["col"] == (0.4, 0.0)

    def test_constant_column_sd_zero(self):
        out = summarize({"col": [0.2, 0.2, 0.2]})
        assert out["col"][1] == pytest.approx(0.0, abs=1e-15)

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            summarize({})


class TestFileFormats:
    def test_summary_roundtrip(self, tmp_path):
        path = tmp_path / "summary.txt"
        stats.write_summary(path, {"alpha": 0.125, "note": "ok"})
        back = stats.read_summary(path)
        assert float(back["alpha"]) == 0.125
        assert back["note"] == "ok"

    def test_table_is_tab_separated(self, tmp_path):
        path = tmp_path / "table.tsv"
        stats.write_table(path, ("subject", "mae"), [(0, 0.5), (1, 0.25)])
        lines = path.read_text().splitlines()
        assert lines[0] == "subject\tmae"
        assert lines[1].split("\t") == ["0", "0.5"]
