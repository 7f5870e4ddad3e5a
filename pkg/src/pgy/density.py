"""Coprimality densities in the interval that follows a prime.

The central quantity is the expected number of integers coprime to k# in the
``length`` positions after a number that is itself coprime to k#.  Position j
is never coprime to 2 when j is odd; for an odd prime b it is divisible by b
with probability 1/(b-1) unless b | j.  Summing the products over even j and
expanding prod (1 + 1/(b-2)) over odd b | j gives a finite sum over squarefree
odd d with 2d <= length, which is what :func:`phi_after_coprime` enumerates.
"""
from __future__ import annotations

import csv
import io
import math
import threading
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import mpmath
import numpy as np

from .ntcore import get_tables, primes_up_to, w_density

__all__ = [
    "phi_after_coprime",
    "hl_offset_a",
    "hl_offset_a_float",
    "default_k",
    "psi",
    "psi_limit",
    "twin_prime_constant",
    "DensityModel",
    "Table4Row",
    "table4",
    "table4_csv",
    "table5",
    "table5_csv",
    "TABLE5_LENGTHS",
]

TABLE5_LENGTHS = (2, 4, 6, 8, 10, 12, 20, 30, 40, 50, 100, 150)


def _odd_primes_upto(k: int) -> list[int]:
    return [int(u) for u in primes_up_to(k) if u > 2]


def phi_after_coprime(length: int, k: int) -> Fraction:
    """Expected count of integers coprime to k# in (t, t + length], t coprime to k#.

    Valid for 2 < k < length + 1 (with length = p - 1 this is 2 < k < p).
    """
    if k <= 2 or k >= length + 1:
        raise ValueError(f"need 2 < k < length + 1, got k={k}, length={length}")
    odd = _odd_primes_upto(k)
    lead = Fraction(1)
    for u in odd:
        lead *= Fraction(u - 2, u - 1)

    total = Fraction(0)

    def walk(start: int, d: int, weight: int):
        # weight = prod (v - 2) over the primes in d
        nonlocal total
        total += Fraction(length // (2 * d), weight)
        for i in range(start, len(odd)):
            v = odd[i]
            if 2 * d * v > length:
                break
            walk(i + 1, d * v, weight * (v - 2))

    walk(0, 1, 1)
    return lead * total


def _odd_prime_factors(x: int) -> list[int]:
    out = []
    while x % 2 == 0:
        x //= 2
    f = 3
    while f * f <= x:
        if x % f == 0:
            out.append(f)
            while x % f == 0:
                x //= f
        f += 2
    if x > 1:
        out.append(x)
    return out


def hl_offset_a(p: int) -> Fraction:
    """Exact offset a with adjusted length C2 * (p - 1 + a); p odd, p >= 3."""
    if p < 3 or p % 2 == 0:
        raise ValueError("p must be odd and >= 3")
    total = Fraction(0)
    for x in range(1, (p - 1) // 2 + 1):
        prod = Fraction(1)
        for r in _odd_prime_factors(x):
            prod *= Fraction(r - 1, r - 2)
        total += prod - 1
    return 2 * total


class _OffsetTable:
    """Float prefix sums of prod_{r | x} (r-1)/(r-2) - 1, for many p at once."""

    def __init__(self):
        self.limit = 0
        self.prefix = np.zeros(1)
        self.lock = threading.Lock()

    def get(self, half: int) -> float:
        if half > self.limit:
            with self.lock:
                if half > self.limit:
                    self._build(max(half, 2 * self.limit, 1 << 12))
        return float(self.prefix[half])

    def _build(self, limit: int):
        f = np.ones(limit + 1)
        for r in primes_up_to(limit):
            r = int(r)
            if r == 2:
                continue
            f[r::r] *= (r - 1) / (r - 2)
        f -= 1.0
        f[0] = 0.0
        self.prefix = np.cumsum(f)
        self.limit = limit


_OFFSETS = _OffsetTable()


def hl_offset_a_float(p: int) -> float:
    """Floating-point :func:`hl_offset_a`, fast for large p."""
    return 2.0 * _OFFSETS.get((p - 1) // 2)


_C2_CACHE: dict[int, float] = {}


def twin_prime_constant(cutoff: int = 10**6) -> float:
    """C2 = prod over odd primes u of (1 - 1/(u-1)^2).

    The product runs over primes <= cutoff; the remaining factor is estimated
    by exp(-E1(log cutoff)), the integral of 1/(t^2 log t) beyond the cutoff.
    """
    if cutoff in _C2_CACHE:
        return _C2_CACHE[cutoff]
    u = primes_up_to(cutoff)[1:].astype(np.float64)
    log_prod = math.fsum(np.log1p(-1.0 / (u - 1.0) ** 2))
    tail = float(mpmath.e1(math.log(cutoff)))
    val = math.exp(log_prod - tail)
    _C2_CACHE[cutoff] = val
    return val


def default_k(p: int) -> int:
    """Smallest prime k with k > max(log p, 13)."""
    bound = max(math.log(p), 13.0)
    k = int(bound) + 1
    while True:
        tab = get_tables(k)
        if tab.pi(k) - tab.pi(k - 1) == 1:
            return k
        k += 1


def psi_limit(p: int) -> float:
    """k -> infinity value of psi: C2 * (p - 1 + a) / (p - 2)."""
    if p < 3:
        raise ValueError("p must be >= 3")
    a = float(hl_offset_a(p)) if p < 400 else hl_offset_a_float(p)
    return twin_prime_constant() * (p - 1 + a) / (p - 2)


def psi(p: int, k: int | None = None) -> float:
    """Adjusted-interval-length ratio Phi(p-1, k) / (W(k) * (p-2)).

    With ``k=None`` the k -> infinity value :func:`psi_limit` is returned;
    ``k="policy"`` uses :func:`default_k` (falling back to the limit when the
    cutoff is not below p).
    """
    if k is None:
        return psi_limit(p)
    if k == "policy":
        k = default_k(p)
        if k >= p:
            return psi_limit(p)
    return float(_psi_exact(p, k))


def _psi_exact(p: int, k: int) -> Fraction:
    return phi_after_coprime(p - 1, k) / (w_density(k) * (p - 2))


@dataclass
class DensityModel:
    """A fixed cutoff k with cached Phi/psi values keyed by p."""

    k: int
    w_k: Fraction = field(init=False)
    c2: float = field(init=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.k < 3:
            raise ValueError("k must be >= 3")
        self.w_k = w_density(self.k)
        self.c2 = twin_prime_constant()

    def phi(self, p: int) -> Fraction:
        key = ("phi", p)
        val = self._cache.get(key)
        if val is None:
            val = phi_after_coprime(p - 1, self.k)
            with self._lock:
                self._cache.setdefault(key, val)
        return val

    def psi(self, p: int) -> float:
        key = ("psi", p)
        val = self._cache.get(key)
        if val is None:
            val = float(self.phi(p) / (self.w_k * (p - 2)))
            with self._lock:
                self._cache.setdefault(key, val)
        return val

    def adjusted_length(self, p: int) -> float:
        return float(self.phi(p) / self.w_k)


# ---------------------------------------------------------------------------
# table reproductions


@dataclass(frozen=True)
class Table4Row:
    label: str
    divisible: tuple[Fraction, ...]
    coprime: Fraction
    cumulative: Fraction


def table4(j_max: int = 10, k: int = 11) -> tuple[list[int], list[Table4Row]]:
    """Divisibility fractions after a random start and after a prime.

    Returns the prime columns and the rows: first the random-start row, then
    one row per offset j = 1..j_max.
    """
    cols = [int(b) for b in primes_up_to(k)]
    w = w_density(k)
    rows = [
        Table4Row(f"random +[1..{j_max}]", tuple(Fraction(1, b) for b in cols), w, w * j_max)
    ]
    cum = Fraction(0)
    for j in range(1, j_max + 1):
        fr = []
        for b in cols:
            if b == 2:
                fr.append(Fraction(j % 2))
            else:
                fr.append(Fraction(0) if j % b == 0 else Fraction(1, b - 1))
        cop = Fraction(1)
        for x in fr:
            cop *= 1 - x
        cum += cop
        rows.append(Table4Row(f"prime +{j}", tuple(fr), cop, cum))
    return cols, rows


def _half_up(x: Fraction, places: int) -> str:
    d = Decimal(x.numerator) / Decimal(x.denominator)
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def _pct(x: Fraction) -> str:
    return f"{_half_up(x * 100, 0)}%"


def table4_csv(j_max: int = 10, k: int = 11) -> str:
    cols, rows = table4(j_max, k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["number", *[str(b) for b in cols], "not divisible", "interval sum"])
    for r in rows:
        w.writerow([r.label, *[_pct(x) for x in r.divisible], _pct(r.coprime), _half_up(r.cumulative, 2)])
    return buf.getvalue()


def table5(lengths: Iterable[int] = TABLE5_LENGTHS) -> list[tuple[int, Fraction]]:
    return [(n, hl_offset_a(n + 1)) for n in lengths]


def table5_csv(lengths: Iterable[int] = TABLE5_LENGTHS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p-1", "a"])
    for n, a in table5(lengths):
        w.writerow([n, str(a)])
    return buf.getvalue()
