import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condci.gaussian_numerics import IntervalUnion
from condci.selection_region import (
    GaussianSummary,
    LinearConstraint,
    SelectionEvent,
    UnobservedEventError,
    decompose,
    region_from_arrays,
    truncation_set,
    truncation_set_batch,
)

SPRINT_SIGMA = [[64.46, 62.01], [62.01, 162.58]]


@st.composite
def summaries(draw, d=None):
    d = d or draw(st.integers(2, 4))
    a = np.array(draw(st.lists(st.floats(-1, 1), min_size=d * d, max_size=d * d))).reshape(d, d)
    sigma = a @ a.T + 0.1 * np.eye(d)
    theta = draw(st.lists(st.floats(-3, 3), min_size=d, max_size=d))
    n = draw(st.integers(1, 500))
    return GaussianSummary(theta, sigma, n)


# ---------------------------------------------------------------------------
# summary validation
# ---------------------------------------------------------------------------


def test_gaussian_summary_validation():
    with pytest.raises(ValueError):
        GaussianSummary([0, 0], [[1, 0.2], [0.3, 1]], 10)
    with pytest.raises(ValueError):
        GaussianSummary([0, 0], [[1, 0], [0, 0]], 10)
    with pytest.raises(ValueError):
        GaussianSummary([0, 0], [[1, 0], [0, 1]], 0)
    with pytest.raises(ValueError):
        GaussianSummary([0], [[1, 0], [0, 1]], 10)


def test_gaussian_summary_standard_error():
    gs = GaussianSummary([0.3, 0.1], [[4.0, 1.0], [1.0, 9.0]], 100)
    assert gs.se(0) == pytest.approx(0.2)
    assert gs.z(1) == pytest.approx(0.1 / 0.3)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------


def test_decompose_zero_covariance():
    gs = GaussianSummary([0.5, 0.2], np.eye(2), 10)
    dec = decompose(gs, 1)
    assert dec.slope[0] == 0
    assert dec.t_value == pytest.approx(0.5)


def test_decompose_blood_pressure_trial_slope():
    gs = GaussianSummary([-0.31, -0.33], SPRINT_SIGMA, 9361)
    dec = decompose(gs, 1)
    assert dec.slope[0] == pytest.approx(62.01 / 162.58, rel=1e-14)


@settings(max_examples=100)
@given(summaries(), st.data())
def test_decompose_reconstructs_and_decorrelates(gs, data):
    t = data.draw(st.integers(0, gs.d - 1))
    dec = decompose(gs, t)
    recon = dec.slope * gs.theta_hat[t] + dec.residual
    np.testing.assert_allclose(recon, gs.theta_hat, atol=1e-12)
    # cov(theta_j - slope_j theta_t, theta_t) = 0
    for j in range(gs.d):
        if j != t:
            cov = gs.sigma_hat[j, t] - dec.slope[j] * gs.sigma_hat[t, t]
            assert abs(cov) <= 1e-10 * max(1.0, abs(gs.sigma_hat[j, t]))


# ---------------------------------------------------------------------------
# truncation regions
# ---------------------------------------------------------------------------


def test_independent_gate_gives_real_line():
    gs = GaussianSummary([2.5, 0.1], np.eye(2), 1)
    ev = SelectionEvent.one_sided(0, 2, 1.96)
    assert truncation_set(ev, decompose(gs, 1), gs).is_real_line


def test_one_sided_gate_positive_covariance_closed_form():
    sigma = np.array([[1.0, 0.6], [0.6, 2.0]])
    n = 50
    gs = GaussianSummary([0.4, 0.2], sigma, n)
    c = 0.3
    dec = decompose(gs, 1)
    t = gs.theta_hat[0] - sigma[0, 1] / sigma[1, 1] * gs.theta_hat[1]
    region = truncation_set(SelectionEvent.one_sided(0, 2, c), dec, gs)
    expected = (c - t) / (sigma[0, 1] / sigma[1, 1])
    assert len(region) == 1
    assert region.intervals[0][0] == pytest.approx(expected, rel=1e-12)
    assert region.intervals[0][1] == math.inf


def test_one_sided_gate_negative_covariance_flips_side():
    gs = GaussianSummary([0.4, -0.2], [[1.0, -0.6], [-0.6, 2.0]], 50)
    region = truncation_set(SelectionEvent.one_sided(0, 2, 0.3), decompose(gs, 1), gs)
    assert region.intervals[0][0] == -math.inf and math.isfinite(region.intervals[0][1])


def test_two_sided_gate_gives_union_of_half_lines():
    gs = GaussianSummary([0.5, 0.3], [[1.0, 0.5], [0.5, 1.0]], 20)
    region = truncation_set(SelectionEvent.two_sided(0, 2, 0.44), decompose(gs, 1), gs)
    assert len(region) == 2
    assert region.intervals[0][0] == -math.inf and region.intervals[1][1] == math.inf


def test_unobserved_event_is_rejected():
    gs = GaussianSummary([0.1, 0.3], [[1.0, 0.5], [0.5, 1.0]], 20)
    with pytest.raises(UnobservedEventError, match="conditioning on unobserved event"):
        truncation_set(SelectionEvent.one_sided(0, 2, 1.0), decompose(gs, 1), gs)


def test_contradictory_clause_contributes_nothing():
    gs = GaussianSummary([1.0, 0.3], [[1.0, 0.5], [0.5, 1.0]], 20)
    impossible = ((LinearConstraint.on(0, 2, 2.0, "greater"), LinearConstraint.on(0, 2, -2.0, "less")),)
    feasible = ((LinearConstraint.on(0, 2, 0.5, "greater"),),)
    ev = SelectionEvent(impossible + feasible)
    dec = decompose(gs, 1)
    assert truncation_set(ev, dec, gs) == truncation_set(SelectionEvent(feasible), dec, gs)


def test_delta_n_switches_weak_covariance_off():
    gs = GaussianSummary([2.0, 0.3], [[1.0, 0.04], [0.04, 1.0]], 20)
    ev = SelectionEvent.one_sided(0, 2, 0.2)
    dec = decompose(gs, 1)
    assert not truncation_set(ev, dec, gs, delta_n=0.0).is_real_line
    assert truncation_set(ev, dec, gs, delta_n=0.05).is_real_line


@settings(max_examples=100)
@given(summaries(d=2), st.floats(0.0, 0.99), st.floats(0.0, 1.0))
def test_delta_n_below_covariance_leaves_region_unchanged(gs, frac1, frac2):
    cov = abs(gs.sigma_hat[0, 1])
    if cov < 1e-6:
        return
    bound = gs.theta_hat[0] - 0.1
    ev = SelectionEvent.one_sided(0, 2, bound)
    dec = decompose(gs, 1)
    r1 = truncation_set(ev, dec, gs, delta_n=frac1 * cov)
    r2 = truncation_set(ev, dec, gs, delta_n=frac2 * frac1 * cov)
    assert r1 == r2 == truncation_set(ev, dec, gs, 0.0)


@settings(max_examples=200)
@given(summaries(), st.data())
def test_observed_target_lies_in_region(gs, data):
    t = data.draw(st.integers(0, gs.d - 1))
    j = data.draw(st.integers(0, gs.d - 1))
    width = data.draw(st.floats(0.01, 2.0))
    x = gs.theta_hat[j]
    ev = SelectionEvent.one_sided(j, gs.d, x - width) if data.draw(st.booleans()) else SelectionEvent.two_sided(
        j, gs.d, max(abs(x) - width, 0.0)
    )
    if not ev.holds(gs.theta_hat):
        return
    region = truncation_set(ev, decompose(gs, t), gs, data.draw(st.sampled_from([0.0, 0.01])))
    xt = gs.theta_hat[t]
    assert any(lo - 1e-9 * max(1, abs(xt)) <= xt <= hi + 1e-9 * max(1, abs(xt)) for lo, hi in region)


@pytest.mark.parametrize(
    "event",
    [
        SelectionEvent.two_sided(0, 2, 0.3),
        SelectionEvent.one_sided(0, 2, 0.25),
        SelectionEvent.between(0, 2, -0.1, 0.35),
    ],
)
def test_region_matches_rejection_sampling_support(event):
    """Conditional draws of the target given a thin residual bin land only in the region."""
    sigma = np.array([[1.0, 0.6], [0.6, 1.0]])
    n = 25
    rng = np.random.default_rng(99)
    chol = np.linalg.cholesky(sigma / n)
    observed = np.array([0.32, 0.05])
    gs = GaussianSummary(observed, sigma, n)
    dec = decompose(gs, 1)
    region = truncation_set(event, dec, gs)
    slope = sigma[0, 1] / sigma[1, 1]
    h = 0.002
    kept = []
    for _ in range(10):
        draws = rng.standard_normal((10**6, 2)) @ chol.T
        t = draws[:, 0] - slope * draws[:, 1]
        sel = draws[np.abs(t - dec.t_value) < h]
        hit = np.zeros(len(sel), dtype=bool)
        for clause in event.dnf:
            m = np.ones(len(sel), dtype=bool)
            for c in clause:
                v = sel @ np.asarray(c.coeffs)
                m &= v > c.bound if c.direction == "greater" else v < c.bound
            hit |= m
        kept.append(sel[hit, 1])
    kept = np.concatenate(kept)
    assert kept.size > 500
    slack = h / slope  # bin half-width mapped into the target coordinate
    inside = np.array([any(lo - slack <= v <= hi + slack for lo, hi in region) for v in kept])
    assert inside.all()
    # every component within reach of the samples is populated
    for lo, hi in region:
        a, b = max(lo, kept.min()), min(hi, kept.max())
        if b - a > 4 * slack:
            assert np.any((kept > a) & (kept < b))


# ---------------------------------------------------------------------------
# batch routine
# ---------------------------------------------------------------------------


def test_batch_matches_scalar():
    rng = np.random.default_rng(5)
    sigma = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]])
    ev = SelectionEvent.two_sided(0, 3, 0.1).conjoin(SelectionEvent.one_sided(1, 3, -0.2))
    theta = rng.normal(0, 0.4, size=(400, 3))
    theta = theta[[ev.holds(th) for th in theta]]
    for t in range(3):
        lo, hi = truncation_set_batch(ev, theta, sigma, t)
        for i, th in enumerate(theta):
            gs = GaussianSummary(th, sigma, 10)
            ref = truncation_set(ev, decompose(gs, t), gs)
            got = region_from_arrays(lo[i], hi[i])
            assert len(got) == len(ref)
            for (a1, b1), (a2, b2) in zip(got, ref):
                assert a1 == pytest.approx(a2, rel=1e-12, abs=1e-12)
                assert b1 == pytest.approx(b2, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


@settings(max_examples=50)
@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_event_json_round_trip(n_clauses, width, data):
    d = 3
    clauses = []
    for _ in range(n_clauses):
        clause = []
        for _ in range(width):
            coeffs = data.draw(st.lists(st.floats(-2, 2), min_size=d, max_size=d).filter(lambda c: any(c)))
            bound = data.draw(st.one_of(st.floats(-5, 5), st.sampled_from([math.inf, -math.inf])))
            clause.append(LinearConstraint(tuple(coeffs), bound, data.draw(st.sampled_from(["greater", "less"]))))
        clauses.append(tuple(clause))
    ev = SelectionEvent(tuple(clauses))
    text = ev.dumps()
    json.loads(text)  # strict JSON, no bare Infinity
    assert "Infinity" not in text
    assert SelectionEvent.loads(text) == ev


def test_event_json_rejects_unknown_keys():
    with pytest.raises(ValueError):
        SelectionEvent.from_json_obj({"clauses": [], "extra": 1})
    with pytest.raises(ValueError):
        SelectionEvent.from_json_obj({"clauses": [[{"coeffs": [1], "bound": 0, "sign": ">"}]]})


def test_always_event_gives_real_line():
    gs = GaussianSummary([0.1, -0.2], [[1, 0.9], [0.9, 1]], 5)
    assert truncation_set(SelectionEvent.always(2), decompose(gs, 1), gs) == IntervalUnion.real_line()
