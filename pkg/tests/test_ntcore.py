import math

import gmpy2
import mpmath
import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings, strategies as st

from pgy import ntcore
from pgy.ntcore import (
    get_tables,
    is_probable_prime,
    li_star,
    nth_prime,
    prime_pi,
    primes_up_to,
    primorial,
    segmented_sieve,
    strong_fermat_base2,
    strong_lucas_selfridge,
    survival_inequality,
    theta,
    theta_gap_from_li_pi,
    w_density,
)


def trial_division(n):
    if n < 2:
        return False
    f = 2
    while f * f <= n:
        if n % f == 0:
            return False
        f += 1
    return True


def test_sieve_against_trial_division():
    ps = primes_up_to(5000).tolist()
    assert ps == [n for n in range(5001) if trial_division(n)]


def test_segmented_sieve_matches_plain():
    base = primes_up_to(400)
    seg = segmented_sieve(10_000, 150_000, base, block=7919)
    plain = primes_up_to(150_000)
    assert seg.tolist() == plain[plain >= 10_000].tolist()


def test_small_values():
    assert nth_prime(1) == 2
    assert nth_prime(100) == 541
    assert nth_prime(318) == 2111
    assert prime_pi(2111) == 318
    assert primorial(11) == 2310
    assert primorial(1) == 1
    assert len(str(primorial(2357))) == 1000


def test_tables_extend_on_demand():
    p = nth_prime(20_000)
    assert p == 224737
    assert get_tables().limit >= p


def test_bpsw_exhaustive_below_one_million():
    # exact for n < 10**6; compare against a sieve
    flags = np.zeros(10**6, dtype=bool)
    flags[primes_up_to(10**6 - 1)] = True
    sample = list(range(0, 10**6, 7)) + list(range(999_000, 10**6))
    assert all(is_probable_prime(n) == flags[n] for n in sample)


@pytest.mark.parametrize("n", [2047, 3277, 4033, 4681, 8321, 15841, 29341, 42799, 49141, 52633, 65281, 74665, 80581])
def test_strong_base2_pseudoprimes_rejected(n):
    assert strong_fermat_base2(n)
    assert not is_probable_prime(n)


@pytest.mark.parametrize("n", [5459, 5777, 10877, 16109, 18971, 22499, 24569, 25199, 40309, 58519])
def test_strong_lucas_pseudoprimes_rejected(n):
    # composite, passes strong Lucas, fails strong Fermat
    assert strong_lucas_selfridge(n)
    assert not is_probable_prime(n)


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=10**6, max_value=10**40))
def test_bpsw_agrees_with_gmpy2(n):
    assert is_probable_prime(n) == gmpy2.is_prime(n, 30)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=2**64, max_value=2**200))
def test_bpsw_on_products_of_primes(seed):
    p = int(gmpy2.next_prime(seed))
    q = int(gmpy2.next_prime(p + 2))
    assert is_probable_prime(p)
    assert not is_probable_prime(p * q)
    assert not is_probable_prime(p * p)


def test_known_large_prime():
    # bottleneck member of stage 29
    assert is_probable_prime(350842542483891235293716663559065020274899073)
    assert is_probable_prime(2**521 - 1)
    assert not is_probable_prime(2**523 - 1)


def test_theta_matches_direct_sum():
    for p in (2, 3, 97, 541, 7919):
        direct = math.fsum(math.log(q) for q in primes_up_to(p).tolist())
        assert abs(float(theta(p)) - direct) < 1e-10


def test_li_star_small():
    assert abs(float(li_star(2)) - 1 / math.log(2)) < 1e-15
    assert abs(float(li_star(4)) - sum(1 / math.log(x) for x in (2, 3, 4))) < 1e-14


def test_theta_gap_identity_sample():
    # summation by parts reproduces p - theta(p) from Li* and pi alone
    for p in primes_up_to(3000).tolist()[1:]:
        lhs = theta_gap_from_li_pi(p)
        rhs = p - theta(p)
        assert abs(lhs - rhs) < mpmath.mpf("1e-20")


def test_w_density():
    assert w_density(7) == Fraction(48, 210)
    assert w_density(11) == Fraction(480, 2310)
    assert w_density(2) == Fraction(1, 2)


def test_survival_inequality():
    # (p - 1) / (theta(p) - 1 + log y) > 1 holds while p - theta(p) is not too small
    assert survival_inequality(541)
    assert survival_inequality(2111)
