import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgy.density import (
    DensityModel,
    TABLE5_LENGTHS,
    default_k,
    hl_offset_a,
    hl_offset_a_float,
    phi_after_coprime,
    psi,
    psi_limit,
    table4,
    table4_csv,
    table5,
    twin_prime_constant,
)
from pgy.ntcore import primes_up_to, w_density

_PERIOD_CACHE = {}


def period_oracle(length, k):
    """Average coprime count after a coprime start, over one full period k#."""
    key = k
    if key not in _PERIOD_CACHE:
        ps = primes_up_to(k).tolist()
        M = math.prod(ps)
        x = np.arange(2 * M + 200)
        mask = np.ones(len(x), dtype=bool)
        for p in ps:
            mask &= x % p != 0
        _PERIOD_CACHE[key] = (M, mask, np.concatenate(([0], np.cumsum(mask))))
    M, mask, cs = _PERIOD_CACHE[key]
    starts = np.flatnonzero(mask[:M])
    counts = cs[starts + length + 1] - cs[starts + 1]
    return Fraction(int(counts.sum()), len(starts))


@pytest.mark.parametrize("k", [3, 5, 7, 11, 13])
def test_phi_equals_period_oracle(k):
    for length in range(k, 61):
        assert phi_after_coprime(length, k) == period_oracle(length, k)


def test_phi_domain():
    with pytest.raises(ValueError):
        phi_after_coprime(10, 2)
    with pytest.raises(ValueError):
        phi_after_coprime(10, 11)


def test_table5_exact():
    expected = [0, 0, 2, 2, Fraction(8, 3), Fraction(14, 3), Fraction(116, 15), Fraction(6866, 495),
                Fraction(141274, 8415), Fraction(1329632, 58905)]
    got = [a for _, a in table5()]
    assert got[:10] == expected
    assert [n for n, _ in table5()] == list(TABLE5_LENGTHS)


def brute_offset(p):
    # sum over even x <= p-1 of prod_{odd r | x} (r-1)/(r-2), minus (p-1)/2 ... doubled
    total = Fraction(0)
    for x in range(2, p, 2):
        prod = Fraction(1)
        for r in primes_up_to(x).tolist():
            if r > 2 and x % r == 0:
                prod *= Fraction(r - 1, r - 2)
        total += prod
    return 2 * total - (p - 1)


@pytest.mark.parametrize("p", [3, 5, 9, 21, 41, 101, 151])
def test_offset_against_direct_sum(p):
    assert hl_offset_a(p) == brute_offset(p)


def test_offset_float_matches_exact():
    for p in (101, 151, 541, 1001):
        assert abs(hl_offset_a_float(p) - float(hl_offset_a(p))) < 1e-9


def test_twin_prime_constant():
    c6 = twin_prime_constant(10**6)
    c7 = twin_prime_constant(10**7)
    assert abs(c6 - 0.6601618158468696) < 1e-11
    assert abs(c6 - c7) < 1e-10


def test_psi_limit_below_one_in_range():
    for p in primes_up_to(541).tolist():
        if p >= 17:
            assert psi_limit(p) < 1.0


def test_psi_small_primes_at_least_one():
    for p in (3, 7, 13):
        assert psi_limit(p) >= 1.0


def test_psi_limit_is_k_limit():
    # finite-k values approach the limit as k grows
    p = 211
    d = [abs(psi(p, k) - psi_limit(p)) for k in (13, 31, 61, 113)]
    assert d[-1] < d[0]
    assert d[-1] < 0.01


def test_default_k_policy():
    assert default_k(100) == 17
    assert default_k(10**8) == 19
    assert psi(541) == psi_limit(541)
    assert psi(541, "policy") == psi(541, 17)


def test_density_model_caches():
    m = DensityModel(11)
    assert m.phi(101) == phi_after_coprime(100, 11)
    assert m.psi(101) == m.psi(101)
    assert abs(m.adjusted_length(101) - m.psi(101) * 99) < 1e-9


def test_table4_values():
    cols, rows = table4()
    assert cols == [2, 3, 5, 7, 11]
    assert rows[0].coprime == w_density(11)
    assert abs(float(rows[0].cumulative) - 2.08) < 0.01
    assert abs(float(rows[-1].cumulative) - 1.78) < 0.01
    text = table4_csv()
    assert "prime +6,0%,0%,25%,17%,10%,56%,1.13" in text


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([3, 5, 7, 11, 13]), st.integers(min_value=14, max_value=200))
def test_phi_bounded_by_length(k, length):
    v = phi_after_coprime(length, k)
    assert 0 <= v <= length
    # monotone in length
    assert phi_after_coprime(length + 1, k) >= v
