import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles.exact import all_paths_1d, srw1_return_by, srw2_return_by
from rwre_lab import prf
from rwre_lab.environment import EnvironmentSpec, kernels_at_sites
from rwre_lab.stats import (
    KS_THRESHOLD_999,
    CovarianceEstimate,
    SchmidtTable,
    clt_distribution_test,
    covariance_agreement,
    dyadic_steps,
    empirical_covariance,
    ks_distance,
    martingale_audit,
    recurrence_stats,
    schmidt_criterion,
    theoretical_covariance,
)
from rwre_lab.walker import WalkEnsemble, annealed_sample, quenched_sample

SS1 = EnvironmentSpec("simple-symmetric", 1)
SS2 = EnvironmentSpec("simple-symmetric", 2)
DRIFTED = EnvironmentSpec("explicit-periodic", 1, table={
    "period": [1], "lambda": [[-1], [1]], "kernels": [[0.4, 0.6]]})


def enumerated_ensemble(n):
    paths = all_paths_1d(n)
    m = len(paths)
    at0 = paths[:, 1:] == 0
    first = np.where(at0.any(axis=1), at0.argmax(axis=1) + 1, 0)
    return WalkEnsemble(SS1, "quenched", n, np.zeros(m, np.uint64), np.arange(m, dtype=np.uint64),
                        np.arange(n + 1), paths[:, :, None], first)


# -- KS -----------------------------------------------------------------------


def test_ks_threshold_is_kolmogorov_quantile():
    assert KS_THRESHOLD_999 == pytest.approx(stats.kstwobign.ppf(0.999), abs=0.01)


def test_ks_zero_samples_gives_one_half():
    assert ks_distance(np.zeros(1000)) == 0.5


@given(st.integers(0, 2**32), st.integers(1, 300))
def test_ks_matches_scipy(seed, m):
    x = np.random.default_rng(seed).normal(0.3, 1.2, m)
    assert ks_distance(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)


def test_ks_handles_ties_like_scipy():
    x = np.repeat([-1.0, 0.0, 2.0], [3, 5, 2])
    assert ks_distance(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)


# -- covariance and CLT ---------------------------------------------------------


def test_theoretical_covariance_simple_symmetric():
    c = theoretical_covariance(SS2, 1)
    np.testing.assert_array_equal(c.matrix, np.eye(2) / 2)


def test_theoretical_covariance_periodic_exact():
    spec = EnvironmentSpec("explicit-periodic", 1, table={
        "period": [2], "lambda": [[-1], [0], [1]], "kernels": [[0.3, 0.4, 0.3], [0.1, 0.8, 0.1]]})
    assert theoretical_covariance(spec, 1).matrix[0, 0] == pytest.approx((0.6 + 0.2) / 2)


def test_theoretical_covariance_iid_is_environment_average():
    spec = EnvironmentSpec("iid-appendix", 1, 4)
    c = theoretical_covariance(spec, 4000)
    again = theoretical_covariance(spec, 4000, first_index=4000)
    assert abs(c.matrix[0, 0] - again.matrix[0, 0]) < 5 * math.hypot(
        c.standard_errors[0, 0], again.standard_errors[0, 0])
    # in d=1 the local second moment is p(0, -1) + p(0, 1) = 2 p(0, 1)
    one = theoretical_covariance(spec, 1)
    env0 = int(prf.derive_seed(spec.seed, "cov-env", 0))
    q = kernels_at_sites(spec.with_seed(env0), np.zeros((1, 1), np.int64))
    assert spec.jumps.displacements == ((-1,), (0,), (1,))
    assert one.matrix[0, 0] == pytest.approx(2 * q[0, 2], rel=1e-15)


def test_empirical_covariance_and_clt_simple_symmetric():
    ens = annealed_sample(SS2, 4000, 400)
    emp = empirical_covariance(ens)
    z = covariance_agreement(theoretical_covariance(SS2, 1), emp)
    assert z.max() < 4
    rep = clt_distribution_test(ens, theoretical_covariance(SS2, 1))
    assert rep.passed and rep.skipped == []


def test_clt_rejects_drifted_walk():
    ens = quenched_sample(DRIFTED, 2000, 400)
    rep = clt_distribution_test(ens, theoretical_covariance(DRIFTED, 1))
    assert not rep.passed


def test_clt_degenerate_coordinate_is_skipped():
    spec = EnvironmentSpec("explicit-periodic", 2, table={
        "period": [1, 1], "lambda": [[-1, 0], [1, 0]], "kernels": [[0.5, 0.5]]})
    ens = annealed_sample(spec, 500, 100)
    rep = clt_distribution_test(ens, theoretical_covariance(spec, 1))
    assert rep.skipped == [1] and rep.scaled[1] is None


def test_clt_all_degenerate_raises():
    ens = enumerated_ensemble(2)
    with pytest.raises(ValueError):
        clt_distribution_test(ens, CovarianceEstimate(np.zeros((1, 1)), 1, np.zeros((1, 1))))


# -- martingale ---------------------------------------------------------------


def test_martingale_audit_balanced_and_drifted():
    ok = martingale_audit(annealed_sample(EnvironmentSpec("iid-appendix", 2, 1), 50, 100))
    assert ok.passed and ok.n_checked == 5000 and ok.max_drift <= 1e-15
    bad = martingale_audit(quenched_sample(DRIFTED, 5, 10))
    assert not bad.passed and bad.max_drift == pytest.approx(0.2)


def test_martingale_audit_replays_partial_recordings():
    spec = EnvironmentSpec("explicit-periodic", 1, table={
        "period": [3], "lambda": [[-1], [1]], "kernels": [[0.5, 0.5], [0.5, 0.5], [0.45, 0.55]]})
    full = martingale_audit(quenched_sample(spec, 20, 64))
    part = martingale_audit(quenched_sample(spec, 20, 64, record_steps=[32]))
    assert full.to_dict() == part.to_dict()


# -- Schmidt ------------------------------------------------------------------


def test_schmidt_matches_exact_enumeration_d1():
    ens = enumerated_ensemble(10)
    paths = all_paths_1d(10)
    table = schmidt_criterion(ens, [10], [0.1, 0.25, 0.5])
    for row, rho in zip(table.rows, [0.1, 0.25, 0.5]):
        exact = np.count_nonzero(np.abs(paths[:, 10]) / 10 < rho) / 2**10
        assert row["r_est"] == exact
        assert row["ratio"] == exact / rho


def test_schmidt_table_csv_and_threshold():
    t = SchmidtTable(2)
    t.add(4, 0.5, 0.1, 0.01)
    t.add(8, 0.5, 0.0, 0.0)
    assert t.to_csv().splitlines()[0] == "n,rho,r_est,ratio,stderr"
    assert t.min_ratio() == 0.0 and not t.passes(0.05)


def test_schmidt_norms_and_errors():
    ens = annealed_sample(SS2, 200, 64)
    e = schmidt_criterion(ens, [64], [0.5], norm="euclidean").rows[0]["r_est"]
    m = schmidt_criterion(ens, [64], [0.5], norm="max").rows[0]["r_est"]
    l1 = schmidt_criterion(ens, [64], [0.5], norm="l1").rows[0]["r_est"]
    assert l1 <= e <= m
    with pytest.raises(ValueError):
        schmidt_criterion(ens, [65], [0.5])
    with pytest.raises(ValueError):
        schmidt_criterion(ens, [64], [0.5], norm="cube")


def test_dyadic_steps():
    assert dyadic_steps(20) == [1, 2, 4, 8, 16]
    assert dyadic_steps(2**14, start=2**10) == [1024, 2048, 4096, 8192, 16384]


# -- recurrence ---------------------------------------------------------------


def test_return_by_two_is_one_half_by_enumeration():
    rep = recurrence_stats(enumerated_ensemble(2))
    assert rep.fraction_by(2) == 0.5 == srw1_return_by(2)


def test_recurrence_d1_exact_enumeration():
    rep = recurrence_stats(enumerated_ensemble(12))
    for n in range(1, 13):
        assert rep.fraction_by(n) == float(srw1_return_by(n))


def test_recurrence_d2_against_renewal_oracle():
    exact = srw2_return_by(40)
    rep = recurrence_stats(annealed_sample(SS2, 20_000, 40))
    for n in (2, 10, 40):
        assert abs(rep.fraction_by(n) - exact[n]) < 4 * rep.stderr(n) + 1e-12
    assert rep.monotone


def test_recurrence_report_exports():
    rep = recurrence_stats(enumerated_ensemble(4))
    assert rep.first_return_histogram == {2: 8, 4: 2}
    lines = rep.to_csv().splitlines()
    assert lines[0] == "step,return_fraction,first_return_count" and len(lines) == 5
    assert rep.to_dict()["final_return_fraction"] == 10 / 16
