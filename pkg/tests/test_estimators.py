import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condci.estimators import (
    BootstrapCovariance,
    CoxFitError,
    DataFormatError,
    SurvivalData,
    TwoArmContinuousData,
    bootstrap_cov,
    cox_loghr,
    cox_loghr_weighted,
    diff_in_means,
    read_survival_csv,
    read_two_arm_csv,
)

# 20 subjects with tied times (0.1 x3, 0.4, 0.5, 0.6, 2.0)
TIMES = [2.0, 0.8, 1.3, 0.5, 0.0, 0.4, 0.6, 0.1, 0.1, 1.0, 1.1, 1.2, 0.2, 2.2, 1.4, 2.0, 0.5, 0.1, 0.4, 0.6]
EVENTS = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0]
ARMS = [0, 1] * 10
# Breslow partial likelihood maximised in 30-digit arithmetic (mpmath findroot on the score)
COX_BETA = -0.21941195690627456158
COX_INFO = 3.1830745863826148436


def breslow_loglik(beta, t, e, r):
    """Plain double loop over event times; no sorting or cumulative sums."""
    total = 0.0
    for i in range(len(t)):
        if e[i]:
            den = sum(math.exp(beta * r[k]) for k in range(len(t)) if t[k] >= t[i])
            total += beta * r[i] - math.log(den)
    return total


def test_cox_matches_high_precision_oracle():
    b, info = cox_loghr(SurvivalData(TIMES, EVENTS, ARMS))
    assert b == pytest.approx(COX_BETA, abs=1e-10)
    assert info == pytest.approx(COX_INFO, rel=1e-8)


def test_cox_beats_brute_force_grid():
    b, _ = cox_loghr(SurvivalData(TIMES, EVENTS, ARMS))
    grid = np.arange(-0.3, -0.15, 1e-4)
    coarse = grid[np.argmax([breslow_loglik(g, TIMES, EVENTS, ARMS) for g in grid])]
    fine = coarse + np.arange(-1e-4, 1e-4, 1e-6)
    best = fine[np.argmax([breslow_loglik(g, TIMES, EVENTS, ARMS) for g in fine])]
    assert abs(b - best) <= 1e-6
    assert breslow_loglik(b, TIMES, EVENTS, ARMS) >= breslow_loglik(best, TIMES, EVENTS, ARMS) - 1e-12


def test_cox_matches_statsmodels():
    from statsmodels.duration.hazard_regression import PHReg

    rng = np.random.default_rng(3)
    n = 300
    r = rng.integers(0, 2, n)
    t = rng.exponential(1 / np.exp(0.4 * r))
    c = rng.exponential(2.0, n)
    time, ev = np.minimum(t, c), (t <= c).astype(int)
    b, info = cox_loghr(SurvivalData(time, ev, r))
    fit = PHReg(time, r[:, None].astype(float), status=ev, ties="breslow").fit()
    assert b == pytest.approx(fit.params[0], abs=1e-8)
    assert info ** -0.5 == pytest.approx(fit.bse[0], rel=1e-6)


def test_cox_label_swap_is_antisymmetric():
    b, info = cox_loghr(SurvivalData(TIMES, EVENTS, ARMS))
    b2, info2 = cox_loghr(SurvivalData(TIMES, EVENTS, 1 - np.array(ARMS)))
    assert b2 == pytest.approx(-b, abs=1e-10)
    assert info2 == pytest.approx(info, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["log1p", "cube", "affine"]))
def test_cox_invariant_to_monotone_time_maps(kind):
    t = np.array(TIMES)
    f = {"log1p": np.log1p, "cube": lambda x: x**3, "affine": lambda x: 3 * x + 7}[kind]
    b, _ = cox_loghr(SurvivalData(TIMES, EVENTS, ARMS))
    b2, _ = cox_loghr(SurvivalData(f(t), EVENTS, ARMS))
    assert b2 == pytest.approx(b, abs=1e-12)


def test_cox_no_events_in_one_arm_raises():
    e = np.array(EVENTS) * (np.array(ARMS) == 0)
    with pytest.raises(CoxFitError):
        cox_loghr(SurvivalData(TIMES, e, ARMS))


def test_cox_weighted_rows_equal_duplicated_data():
    w = np.ones(20)
    w[[1, 4, 9]] = 3
    b, info, ok = cox_loghr_weighted(TIMES, EVENTS, ARMS, w[None, :])
    idx = np.repeat(np.arange(20), w.astype(int))
    ref, ref_info = cox_loghr(SurvivalData(np.array(TIMES)[idx], np.array(EVENTS)[idx], np.array(ARMS)[idx]))
    assert ok[0] and b[0] == pytest.approx(ref, abs=1e-10) and info[0] == pytest.approx(ref_info, rel=1e-10)


def test_cox_null_consistency():
    rng = np.random.default_rng(11)
    n = 20_000
    r = rng.integers(0, 2, n)
    t = rng.exponential(1.0, n)
    c = rng.exponential(3.0, n)
    b, info = cox_loghr(SurvivalData(np.minimum(t, c), (t <= c).astype(int), r))
    assert abs(b) < 4 * info ** -0.5


# ---------------------------------------------------------------------------
# difference in means
# ---------------------------------------------------------------------------


def two_arm(seed=0, n=80, k=3):
    rng = np.random.default_rng(seed)
    return TwoArmContinuousData(rng.normal(size=(n, k)) + np.arange(k), np.tile([0, 1], n // 2))


def test_diff_in_means_formula():
    d = two_arm()
    gs = diff_in_means(d)
    y1, y0 = d.y[d.r == 1], d.y[d.r == 0]
    assert np.allclose(gs.theta_hat, y1.mean(0) - y0.mean(0), atol=1e-14)
    sigma = d.n * (np.cov(y1, rowvar=False) / len(y1) + np.cov(y0, rowvar=False) / len(y0))
    assert np.allclose(gs.sigma_hat, sigma, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.integers(0, 1000))
def test_diff_in_means_location_scale_equivariance(shift, scale, seed):
    d = two_arm(seed)
    gs = diff_in_means(d)
    moved = diff_in_means(TwoArmContinuousData(scale * d.y + shift, d.r))
    assert np.allclose(moved.theta_hat, scale * gs.theta_hat, atol=1e-9 * scale)
    assert np.allclose(moved.sigma_hat, scale**2 * gs.sigma_hat, rtol=1e-9)
    swapped = diff_in_means(TwoArmContinuousData(d.y, 1 - d.r))
    assert np.allclose(swapped.theta_hat, -gs.theta_hat, atol=1e-12)


def test_identical_arms_give_zero():
    y = np.random.default_rng(1).normal(size=(30, 2))
    d = TwoArmContinuousData(np.vstack([y, y]), np.repeat([0, 1], 30))
    assert np.allclose(diff_in_means(d).theta_hat, 0.0, atol=1e-14)


def test_sample_mean_mode():
    d = two_arm(n=50)
    gs = diff_in_means(d, sample_mean=True)
    assert np.allclose(gs.theta_hat, d.y.mean(0))
    assert np.allclose(gs.sigma_hat, np.cov(d.y, rowvar=False))


def test_tiny_arm_rejected():
    with pytest.raises(ValueError, match="each arm"):
        diff_in_means(TwoArmContinuousData(np.zeros((5, 1)), [1, 0, 0, 0, 0]))


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_close_to_analytic_covariance():
    d = two_arm(seed=4, n=400, k=2)
    analytic = diff_in_means(d).sigma_hat
    boot = bootstrap_cov(d, "diff_in_means", B=4000, seed=9)
    # sampling error of a variance estimate from B draws is about sqrt(2 / B)
    tol = np.maximum(0.05, 3 * math.sqrt(2 / 4000)) * np.sqrt(np.outer(np.diag(analytic), np.diag(analytic)))
    assert np.all(np.abs(boot.sigma_hat - analytic) <= tol)
    assert np.array_equal(boot.theta_hat, diff_in_means(d).theta_hat)


def test_bootstrap_cox_close_to_inverse_information():
    rng = np.random.default_rng(8)
    n = 400
    r = rng.integers(0, 2, n)
    t = rng.exponential(1.0, n)
    c = rng.exponential(2.0, n)
    data = SurvivalData(np.minimum(t, c), (t <= c).astype(int), r)
    _, info = cox_loghr(data)
    boot = bootstrap_cov(data, "cox", B=2000, seed=1)
    assert boot.sigma_hat[0, 0] / n == pytest.approx(1 / info, rel=0.12)


def test_bootstrap_is_bitwise_reproducible():
    d = two_arm(seed=2, n=60)
    a = bootstrap_cov(d, B=600, seed=5)
    b = bootstrap_cov(d, B=600, seed=5)
    assert a.replicates.tobytes() == b.replicates.tobytes()
    assert a.sigma_hat.tobytes() == b.sigma_hat.tobytes()
    c = bootstrap_cov(d, B=600, seed=6)
    assert not np.array_equal(a.replicates, c.replicates)


def test_bootstrap_prefix_is_stable_across_B():
    d = two_arm(seed=2, n=60)
    small = bootstrap_cov(d, B=250, seed=5)
    large = bootstrap_cov(d, B=750, seed=5)
    assert np.array_equal(small.replicates, large.replicates[:250])


def test_bootstrap_callable_matches_builtin():
    d = two_arm(seed=3, n=40, k=2)
    builtin = bootstrap_cov(d, "sample_mean", B=300, seed=2)
    custom = bootstrap_cov(d, lambda x: x.y.mean(axis=0), B=300, seed=2)
    assert np.allclose(builtin.replicates, custom.replicates, atol=1e-13)


def test_constant_outcome_gives_zero_variance():
    d = two_arm(seed=1, n=40, k=2)
    y = d.y.copy()
    y[:, 1] = 3.0
    boot = bootstrap_cov(TwoArmContinuousData(y, d.r), B=200, seed=0)
    assert isinstance(boot, BootstrapCovariance)
    assert boot.sigma_hat[1, 1] == 0.0 and boot.sigma_hat[0, 1] == 0.0
    with pytest.raises(ValueError):
        boot.summary()


@pytest.mark.parametrize("B", [0, 99, 150.5])
def test_bootstrap_rejects_small_B(B):
    with pytest.raises(ValueError, match="B must be"):
        bootstrap_cov(two_arm(), B=B)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def test_read_two_arm_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y1,y2,arm\n1.0,2.0,0\n1.5,2.5,1\n\n0.5,1.0,0\n2.0,3.0,1\n")
    d = read_two_arm_csv(p, ["y1", "y2"], "arm")
    assert d.y.shape == (4, 2) and list(d.r) == [0, 1, 0, 1]


@pytest.mark.parametrize(
    "body, line, msg",
    [
        ("y,arm\n1,0\n,1\n", 3, "non-finite|cannot parse"),
        ("y,arm\n1,0\nabc,1\n", 3, "cannot parse"),
        ("y,arm\n1,0\n2,1\n3,2\n", 4, "0/1"),
        ("y,arm\n1,0\n2\n", 3, "fields"),
        ("x,arm\n1,0\n", 1, "header"),
    ],
)
def test_csv_errors_name_the_line(tmp_path, body, line, msg):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataFormatError, match=msg) as info:
        read_two_arm_csv(p, ["y"], "arm")
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_read_survival_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,e,arm\n1.0,1,0\n2.0,0,1\n-1.0,1,1\n")
    with pytest.raises(DataFormatError, match="negative") as info:
        read_survival_csv(p, ["t"], ["e"], "arm")
    assert info.value.line == 4
    p.write_text("t,e,arm\n1.0,1,0\n2.0,0,1\n")
    s = read_survival_csv(p, ["t"], ["e"], "arm")
    assert s.m == 1 and s.n == 2
