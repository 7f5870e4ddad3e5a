"""Prime tables, probable-prime testing and the elementary prime functions.

Everything here works on plain Python ints (``gmpy2.mpz`` internally where it
pays off).  Real-valued results (theta, Li*, the theta gap) are computed in a
private 128-bit mpmath context with compensated summation and returned as
mpmath ``mpf`` values; wrap them in ``float()`` when double precision is
enough.
"""
from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import mpmath
import numpy as np
from gmpy2 import mpz

__all__ = [
    "CachedPrimeTables",
    "get_tables",
    "primes_up_to",
    "segmented_sieve",
    "is_probable_prime",
    "strong_fermat_base2",
    "strong_lucas_selfridge",
    "bpsw_sieved",
    "primorial",
    "nth_prime",
    "prime_pi",
    "theta",
    "li_star",
    "theta_gap_from_li_pi",
    "w_density",
    "survival_inequality",
    "LOG_Y",
]

#: log y with y = 1.2541961..., treated as a fixed constant.
LOG_Y = 0.23

MP = mpmath.MPContext()
MP.prec = 128


# ---------------------------------------------------------------------------
# sieving


def primes_up_to(n: int) -> np.ndarray:
    """All primes <= n as an int64 array (plain Eratosthenes, odd-only)."""
    if n < 2:
        return np.zeros(0, dtype=np.int64)
    size = (n - 1) // 2  # index i <-> 2*i + 3
    flags = np.ones(size, dtype=bool)
    for i in range((math.isqrt(n) - 1) // 2):
        if flags[i]:
            p = 2 * i + 3
            flags[(p * p - 3) // 2 :: p] = False
    odd = 2 * np.nonzero(flags)[0].astype(np.int64) + 3
    return np.concatenate(([2], odd)).astype(np.int64)


def segmented_sieve(lo: int, hi: int, base: np.ndarray, block: int = 1 << 20) -> np.ndarray:
    """Primes in [lo, hi) given ``base`` containing every prime <= sqrt(hi)."""
    out = []
    lo = max(lo, 2)
    for start in range(lo, hi, block):
        stop = min(start + block, hi)
        flags = np.ones(stop - start, dtype=bool)
        for p in base:
            p = int(p)
            if p * p >= stop:
                break
            first = max(p * p, -(-start // p) * p)
            flags[first - start :: p] = False
        out.append(np.nonzero(flags)[0].astype(np.int64) + start)
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out)


class _Neumaier:
    """Compensated running sum in the module's mpmath context."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = MP.mpf(0)
        self.c = MP.mpf(0)

    def add(self, x):
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def value(self):
        return self.s + self.c


@dataclass(frozen=True)
class CachedPrimeTables:
    """Immutable snapshot of the primes up to ``limit`` with prefix functions.

    ``theta_prefix[i]`` is the sum of log p over ``primes[:i+1]``.  The Li*
    prefix is integer-indexed and built lazily (it is only needed at modest
    sizes), guarded by a lock so snapshots can be shared between threads.
    """

    limit: int
    primes: np.ndarray
    theta_prefix: list = field(repr=False)
    _lazy: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def build(cls, limit: int, previous: "CachedPrimeTables | None" = None) -> "CachedPrimeTables":
        if previous is None or previous.limit < 2:
            primes = primes_up_to(limit)
            theta_prefix: list = []
            acc = _Neumaier()
            start = 0
        else:
            base = primes_up_to(math.isqrt(limit) + 1)
            extra = segmented_sieve(previous.limit + 1, limit + 1, base)
            primes = np.concatenate((previous.primes, extra))
            theta_prefix = list(previous.theta_prefix)
            acc = _Neumaier()
            acc.s = theta_prefix[-1] if theta_prefix else MP.mpf(0)
            start = len(previous.primes)
        for p in primes[start:]:
            acc.add(MP.log(int(p)))
            theta_prefix.append(acc.value)
        return cls(limit, primes, theta_prefix)

    # -- counting ---------------------------------------------------------

    def pi(self, x: int) -> int:
        if x > self.limit:
            raise ValueError(f"pi({x}) beyond table limit {self.limit}")
        return int(np.searchsorted(self.primes, x, side="right"))

    def theta(self, x: int):
        k = self.pi(x)
        return self.theta_prefix[k - 1] if k else MP.mpf(0)

    # -- lazily built integer-indexed prefixes -------------------------------

    def _li_tables(self, upto: int):
        """Li*(x) and the summation-by-parts correction sum, both indexed by x."""
        if upto > self.limit:
            raise ValueError(f"Li* table beyond limit {self.limit}")
        with self._lock:
            li, corr = self._lazy.setdefault("li", [MP.mpf(0), MP.mpf(0)]), self._lazy.setdefault(
                "corr", [MP.mpf(0), MP.mpf(0)]
            )
            if len(li) > upto:
                return li, corr
            acc = self._lazy.setdefault("li_acc", _Neumaier())
            cacc = self._lazy.setdefault("corr_acc", _Neumaier())
            # li[x] = Li*(x); corr[x] = sum_{u=2}^{x-1} log((u+1)/u) (Li*(u) - pi(u))
            x = len(li)
            while x <= upto:
                acc.add(1 / MP.log(x))
                li.append(acc.value)
                if x >= 3:
                    u = x - 1
                    cacc.add(MP.log1p(MP.mpf(1) / u) * (li[u] - self.pi(u)))
                corr.append(cacc.value)
                x += 1
            return li, corr


_TABLE_LOCK = threading.Lock()
_TABLES = CachedPrimeTables.build(1 << 16)


def get_tables(limit: int = 0) -> CachedPrimeTables:
    """Current shared snapshot, extended (by doubling) to cover ``limit``."""
    global _TABLES
    snap = _TABLES
    if snap.limit >= limit:
        return snap
    with _TABLE_LOCK:
        snap = _TABLES
        if snap.limit < limit:
            new_limit = max(limit, 2 * snap.limit)
            _TABLES = snap = CachedPrimeTables.build(new_limit, snap)
    return snap


def nth_prime(s: int) -> int:
    """p_s with p_1 = 2."""
    if s < 1:
        raise ValueError("stage index must be >= 1")
    tab = get_tables()
    while len(tab.primes) < s:
        tab = get_tables(2 * tab.limit)
    return int(tab.primes[s - 1])


def prime_pi(x: int) -> int:
    return get_tables(x).pi(x)


def primorial(p: int) -> int:
    """Product of all primes <= p (1 for p < 2)."""
    if p < 2:
        return 1
    tab = get_tables(p)
    k = tab.pi(p)
    out = mpz(1)
    for q in tab.primes[:k]:
        out *= int(q)
    return int(out)


def theta(p: int):
    """Chebyshev's first function: sum of log q over primes q <= p."""
    return get_tables(p).theta(p)


def li_star(p: int):
    """The discrete logarithmic integral sum_{x=2}^{p} 1/log x."""
    if p < 2:
        return MP.mpf(0)
    li, _ = get_tables(p)._li_tables(p)
    return li[p]


def theta_gap_from_li_pi(p: int):
    """p - theta(p) obtained only from Li* and pi via summation by parts."""
    if p < 2:
        raise ValueError("p must be >= 2")
    tab = get_tables(p)
    li, corr = tab._li_tables(p)
    return MP.log(p) * (li[p] - tab.pi(p)) + 1 - corr[p]


def w_density(k: int) -> Fraction:
    """Density of integers coprime to k#: prod over primes u <= k of (1 - 1/u)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    tab = get_tables(k)
    out = Fraction(1)
    for u in tab.primes[: tab.pi(k)]:
        u = int(u)
        out *= Fraction(u - 1, u)
    return out


def survival_inequality(p: int, log_y: float = LOG_Y) -> bool:
    """(p - 1) / (theta(p) - (1 - log y)) > 1, i.e. one child beats none."""
    if p < 3:
        raise ValueError("p must be >= 3")
    denom = theta(p) - (1 - MP.mpf(log_y))
    return bool((p - 1) / denom > 1)


# ---------------------------------------------------------------------------
# probable primes

SMALL_PRIMES = tuple(int(q) for q in primes_up_to(999))
_SMALL_PRODUCT = mpz(math.prod(SMALL_PRIMES))
_SMALL_LIMIT_SQ = 1000 * 1000


def strong_fermat_base2(n) -> bool:
    """Miller-Rabin with the single witness 2; n odd and > 2."""
    n = mpz(n)
    d = n - 1
    s = gmpy2.bit_scan1(d)
    d >>= s
    x = gmpy2.powmod(2, d, n)
    if x == 1 or x == n - 1:
        return True
    for _ in range(s - 1):
        x = x * x % n
        if x == n - 1:
            return True
        if x == 1:
            return False
    return False


def _selfridge(n):
    d = 5
    while True:
        j = gmpy2.jacobi(d % n, n)
        if j == -1:
            return d
        if j == 0 and abs(d) != n:
            return 0
        if d == 13 and gmpy2.is_square(n):
            return 0
        d = -d - 2 if d > 0 else -d + 2


def strong_lucas_selfridge(n) -> bool:
    """Strong Lucas probable-prime test, Selfridge method A (P = 1).

    ``n`` must be odd, > 2 and not a perfect square for a meaningful answer;
    perfect squares are reported composite.
    """
    n = mpz(n)
    D = _selfridge(n)
    if D == 0:
        return False
    P, Q = 1, (1 - D) // 4
    d = n + 1
    s = gmpy2.bit_scan1(d)
    d >>= s
    U, V, Qk = mpz(1), mpz(P), mpz(Q) % n
    for bit in gmpy2.digits(d, 2)[1:]:
        U = U * V % n
        V = (V * V - 2 * Qk) % n
        Qk = Qk * Qk % n
        if bit == "1":
            U, V = P * U + V, D * U + P * V
            if U & 1:
                U += n
            U = (U >> 1) % n
            if V & 1:
                V += n
            V = (V >> 1) % n
            Qk = Qk * Q % n
    if U == 0 or V == 0:
        return True
    for _ in range(s - 1):
        V = (V * V - 2 * Qk) % n
        if V == 0:
            return True
        Qk = Qk * Qk % n
    return False


def bpsw_sieved(n) -> bool:
    """Fermat + Lucas stages only, for candidates already free of small factors."""
    return strong_fermat_base2(n) and strong_lucas_selfridge(n)


def is_probable_prime(n) -> bool:
    """BPSW: trial division by primes < 1000, strong base-2 Fermat, strong Lucas.

    Exact for n < 10**6.
    """
    if n < 2:
        return False
    if n < 1000:
        i = bisect.bisect_left(SMALL_PRIMES, int(n))
        return i < len(SMALL_PRIMES) and SMALL_PRIMES[i] == n
    n = mpz(n)
    if gmpy2.gcd(n, _SMALL_PRODUCT) != 1:
        return False
    if n < _SMALL_LIMIT_SQ:
        return True
    return bpsw_sieved(n)
