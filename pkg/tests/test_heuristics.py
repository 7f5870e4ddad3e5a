import math

import pytest
from hypothesis import given, settings, strategies as st

from pgy.heuristics import (
    LOG_Y_PRECISE,
    StageModel,
    aggregate_split_probability,
    approx_n,
    deviation_series,
    extinction_fixed_point,
    failure_probability,
    log10_failure_probability,
    n_distribution,
    omega_series,
    omega_step,
    omega_step_binomial,
    predict_next_n,
    split_probability,
    stability,
    table6,
)
from pgy.ntcore import nth_prime


def test_closed_form_matches_binomial_sum():
    for k in (1, 2, 3, 7):
        model = StageModel(k=k)
        for s in (101, 150, 400):
            for om in (0.5, 0.9, 0.97):
                assert abs(omega_step(om, s, model) - omega_step_binomial(om, s, model)) < 1e-10


def test_series_is_fixed_point_of_recursion():
    ser = omega_series(100, 600)
    for s in range(101, 601):
        assert omega_step(ser[s], s, ser.model) == ser[s - 1]


def test_omega_rejects_bad_start():
    with pytest.raises(ValueError):
        omega_series(100, 200, 1.0)
    with pytest.raises(ValueError):
        omega_series(200, 100)


def test_omega_insensitive_to_far_start():
    a = omega_series(100, 2000)[100]
    b = omega_series(100, 2262)[100]
    assert abs(a - b) < 1e-6


def test_omega_perturbation_rule():
    # omega(t) -> omega(t) + delta moves omega(t-1) by about delta (1 - omega) / 2
    ser = omega_series(299, 2000)
    s = 300
    d = 1e-7
    base = omega_step(ser[s], s, ser.model)
    moved = omega_step(ser[s] + d, s, ser.model)
    ratio = (moved - base) / d
    # generating-function derivative: N pr omega(s-1) / (1 - pr(1-omega(s)))
    _, n, pr = ser.model.trials(s)
    assert abs(ratio - n * pr * base / (1 - pr * (1 - ser[s]))) < 1e-4


def test_failure_probability():
    assert failure_probability(0.3, 0) == 1.0
    assert abs(failure_probability(0.5, 3) - 0.125) < 1e-15
    assert log10_failure_probability(0.5, 10) == pytest.approx(-10 * math.log10(2))


@pytest.mark.parametrize("s,origin", [(101, None), (101, 100), (150, 100), (1000, 999)])
def test_distribution_normalized(s, origin):
    probs = n_distribution(s, origin)
    assert abs(math.fsum(probs) - 1) < 1e-9
    assert all(p >= 0 for p in probs)


def test_single_window_distribution_is_binomial():
    model = StageModel()
    _, n, pr = model.trials(120)
    probs = n_distribution(120)
    for j in range(4):
        exact = math.comb(int(n), j) * pr**j * (1 - pr) ** (int(n) - j)
        assert abs(probs[j] - exact) < 1e-12


def test_predict_next_n_zero_and_linear():
    assert predict_next_n(0, 50) == 0
    assert predict_next_n(20, 50) == pytest.approx(2 * predict_next_n(10, 50))


def test_deviation_series_sigma():
    recs, hist = deviation_series({10: 6, 11: 4})
    r = recs[0]
    assert r.s == 11 and r.actual_n == 4
    assert r.sigma == pytest.approx((4 - r.predicted_n) / math.sqrt(r.predicted_n))
    assert sum(hist.values()) == 1


def test_approx_n():
    assert approx_n(61) == pytest.approx(math.sqrt(math.exp(math.sqrt(183))) / 8)


def test_split_probability_monotone_in_fold():
    v2 = split_probability(150, 2)
    v3 = split_probability(150, 3)
    assert v2 > v3 > 0
    assert aggregate_split_probability(v3, 1) == pytest.approx(v3)
    assert aggregate_split_probability(0.0, 1000) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1.01, max_value=20))
def test_extinction_fixed_point(z):
    w = extinction_fixed_point(z)
    assert 0 <= w < 1
    assert abs(w - math.exp(z * (w - 1))) < 1e-10


def test_extinction_fixed_point_subcritical():
    assert extinction_fixed_point(0.8) == 1.0


def test_stability_flag():
    assert stability(592642, 2111).stable
    assert not stability(100, 2111).stable


def test_precise_log_y_changes_little():
    a = omega_series(100, 2000)[100]
    b = omega_series(100, 2000, log_y=LOG_Y_PRECISE)[100]
    assert abs(a - b) < 1e-4


def test_table6_rows():
    rows = table6([101, 102])
    assert rows[0][1] == nth_prime(101) == 547
