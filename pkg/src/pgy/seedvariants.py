"""Side games: p#*m - 1 chains, semi-sequences and power-tower seeds.

Power towers floor(A**(c**n)) are evaluated with mpmath interval arithmetic;
a floor is accepted only when both ends of the enclosing interval have the
same integer part, so every reported value is exact.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import gmpy2
import mpmath
import numpy as np
from mpmath import libmp
from mpmath.ctx_iv import MPIntervalContext

from .engine import RunResult, StageState, VariantRule, run, seed
from .ntcore import get_tables, is_probable_prime, primes_up_to, primorial

__all__ = [
    "ChainRecord",
    "chain_length",
    "chain_search",
    "chain_csv",
    "SemiOutcome",
    "semi_scan",
    "semi_record_scan",
    "semi_records_csv",
    "PowerTowerSeed",
    "PrecisionError",
    "construct_power_seed",
    "verify_power_seed",
    "plouffe_constant",
]


# ---------------------------------------------------------------------------
# p# * m - 1 chains


@dataclass(frozen=True)
class ChainRecord:
    r: int
    m: int

    def members(self) -> list[int]:
        """p# * m - 1 for the primes p <= r."""
        return [primorial(int(p)) * self.m - 1 for p in primes_up_to(self.r)]


def chain_length(m: int, limit: int | None = None) -> int:
    """Number of leading primes p = 2, 3, 5, ... with p# * m - 1 a probable prime."""
    k = 0
    f = m - 1  # f(0); f(s+1) = (f(s) + 1) * p_s - 1
    for p in get_tables().primes.tolist():
        f = (f + 1) * p - 1
        if not is_probable_prime(f):
            break
        k += 1
        if limit is not None and k >= limit:
            break
    return k


def _chain_block(m0: int, size: int, inverses) -> list[int]:
    """m in [m0, m0 + size) surviving the sieve for every chain prime."""
    bad = np.zeros(size, dtype=bool)
    for inv_row in inverses:
        for b, r in inv_row:
            bad[(r - m0) % b :: b] = True
    return (np.flatnonzero(~bad) + m0).tolist()


def chain_search(
    r_max: int,
    m_start: int = 1,
    m_cap: int | None = None,
    *,
    sieve_limit: int = 1 << 16,
    block: int = 1 << 20,
    workers: int = 1,
) -> tuple[list[ChainRecord], bool]:
    """Smallest m >= m_start with p# * m - 1 prime for all primes p <= r.

    Returns (records for every prime 5 <= r <= r_max found, complete flag).
    The flag is False when ``m_cap`` stopped the search early.
    """
    if r_max < 5:
        raise ValueError("r_max must be >= 5")
    rs = [int(p) for p in primes_up_to(r_max) if p >= 5]
    chain_index = {r: i + 1 for i, r in enumerate(int(p) for p in primes_up_to(r_max))}
    found: dict[int, int] = {}

    def harvest(m: int):
        length = chain_length(m, chain_index[rs[-1]])
        for r in rs:
            if r not in found and chain_index[r] <= length:
                found[r] = m

    sieve = primes_up_to(sieve_limit)
    # small m: p# * m - 1 may itself be a sieving prime, test directly
    m = m_start
    direct_end = max(m_start, sieve_limit // 2 + 2)
    while m < direct_end and len(found) < len(rs):
        if m_cap is not None and m > m_cap:
            break
        harvest(m)
        m += 1

    inv_cache: dict[int, list] = {}

    def inverses_for(r: int):
        if r not in inv_cache:
            rows = []
            for p in primes_up_to(r).tolist():
                pm = primorial(p)
                rows.append([(int(b), pow(pm % int(b), -1, int(b))) for b in sieve.tolist() if b > p])
            inv_cache[r] = rows
        return inv_cache[r]

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(found) < len(rs):
            if m_cap is not None and m > m_cap:
                break
            target = next(r for r in rs if r not in found)
            inv = inverses_for(target)
            span = block if m_cap is None else min(block, m_cap - m + 1)
            if pool:
                futs = [
                    pool.submit(_chain_block, m + j * span, span, inv) for j in range(workers)
                ]
                cands = [c for f in futs for c in f.result()]
                advance = span * workers
            else:
                cands = _chain_block(m, span, inv)
                advance = span
            for c in cands:
                if m_cap is not None and c > m_cap:
                    break
                harvest(c)
                if target in found:
                    break
            if target in found:
                m = found[target] + 1
            else:
                m += advance
    finally:
        if pool:
            pool.shutdown()
    records = [ChainRecord(r, found[r]) for r in rs if r in found]
    return records, len(records) == len(rs)


def chain_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "m"])
    for rec in records:
        w.writerow([rec.r, rec.m])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# semi-sequences


@dataclass(frozen=True)
class SemiOutcome:
    base: int
    extinct_at: int | None
    state: StageState  # last live state

    @property
    def alive(self) -> bool:
        return self.extinct_at is None


def semi_scan(base: int, to_stage: int, restrict: bool = False, **kw) -> SemiOutcome:
    """Play the game with integer part ``base`` up to ``to_stage``."""
    st = seed(VariantRule.semi(base, restrict))
    if st.n == 0:
        return SemiOutcome(base, 1, st)
    res: RunResult = run(st, to_stage, **kw)
    return SemiOutcome(base, res.extinct_at, res.state)


def semi_record_scan(b_max: int, horizon: int = 30, b_min: int = 2, restrict: bool = False) -> list[tuple[int, int]]:
    """Bases whose extinction stage beats every smaller base (within horizon).

    Bases still alive at the horizon are not counted as finite.
    """
    out: list[tuple[int, int]] = []
    best = 0
    for b in range(b_min, b_max + 1):
        o = semi_scan(b, horizon, restrict)
        if o.extinct_at is not None and o.extinct_at > best:
            best = o.extinct_at
            out.append((b, o.extinct_at))
    return out


def semi_records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["B", "extinct_stage"])
    w.writerows(records)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# power towers


class PrecisionError(ArithmeticError):
    def __init__(self, n: int):
        super().__init__(f"insufficient precision at n={n}")
        self.n = n


def _as_fraction(c) -> Fraction:
    c = Fraction(str(c)) if isinstance(c, float) else Fraction(c)
    if c <= 1:
        raise ValueError("c must be > 1")
    return c


def _iv_ctx(bits: int):
    ctx = MPIntervalContext()
    ctx.prec = bits
    return ctx


def _iv_pow(x: Fraction, e: Fraction, bits: int):
    """Raw (lower, upper) mpf bounds enclosing x**e for positive rationals."""
    ctx = _iv_ctx(bits)
    xi = ctx.mpf(x.numerator) / x.denominator
    ei = ctx.mpf(e.numerator) / e.denominator
    return ctx.exp(ei * ctx.log(xi))._mpi_


def _floor(raw) -> int:
    return int(libmp.to_int(raw, "f"))


def _floor_pow(x: int, e: Fraction, bits: int = 128) -> tuple[int, bool]:
    """(floor(x**e), exact) for integers x >= 1; ``exact`` when x**e is an integer."""
    num, den = e.numerator, e.denominator
    if den == 1:
        return x**num, True
    root, exact = gmpy2.iroot(gmpy2.mpz(x), den)
    if exact:
        return int(root) ** num, True
    while True:
        lo, hi = _iv_pow(Fraction(x), e, bits)
        if _floor(lo) == _floor(hi):
            return _floor(lo), False
        bits *= 2


def _cmp_pow(x: int, e: Fraction, y: int, f: Fraction, bits: int = 128) -> int:
    """Sign of x**e - y**f for integers >= 1."""
    if (x, e) == (y, f):
        return 0
    while True:
        a = _iv_pow(Fraction(x), e, bits)
        b = _iv_pow(Fraction(y), f, bits)
        if libmp.mpf_lt(a[1], b[0]):
            return -1
        if libmp.mpf_gt(a[0], b[1]):
            return 1
        bits *= 2
        if bits > 1 << 16:
            # equal to 2**-65536 relative precision
            return 0


@dataclass
class PowerTowerSeed:
    """A lies in [a_lo, a_hi), a_lo = x_lo**(c**-n_lo), a_hi = x_hi**(c**-n_hi)."""

    c: Fraction
    chain: list[int]
    lo_def: tuple[int, int]  # (n, x) with a_lo = x**(c**-n)
    hi_def: tuple[int, int]
    precision: int = 50  # decimal places for rendering
    failed_at: int | None = None
    history: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)

    def _endpoint(self, d: tuple[int, int], bits: int):
        n, x = d
        return _iv_pow(Fraction(x), self.c ** (-n), bits)

    def _render(self, raw) -> str:
        digits = len(str(_floor(raw))) + self.precision
        return libmp.to_str(raw, digits)

    @property
    def a_lo(self) -> str:
        """Lower end, rounded down at the working precision."""
        return self._render(self._endpoint(self.lo_def, int(self.precision * 3.33) + 64)[0])

    @property
    def a_hi(self) -> str:
        """Upper end, rounded up at the working precision."""
        return self._render(self._endpoint(self.hi_def, int(self.precision * 3.33) + 64)[1])

    def enclosure(self, bits: int = 256) -> tuple[Fraction, Fraction]:
        """Rationals lo < hi strictly inside [a_lo, a_hi)."""
        lo = self._endpoint(self.lo_def, bits)[1]
        hi = self._endpoint(self.hi_def, bits)[0]
        lo_f, hi_f = _raw_fraction(lo), _raw_fraction(hi)
        if not lo_f < hi_f:
            raise ArithmeticError("interval too narrow for the requested bits")
        return lo_f, hi_f

    def window(self, n: int) -> tuple[int, int]:
        """Integers k with [k, k+1) meeting [a_lo**(c**n), a_hi**(c**n))."""
        n_lo, x_lo = self.lo_def
        n_hi, x_hi = self.hi_def
        lo, _ = _floor_pow(x_lo, self.c ** (n - n_lo))
        top, exact = _floor_pow(x_hi, self.c ** (n - n_hi))
        hi = top - 1 if exact else top
        return lo, hi

    def floors(self, bits: int = 256) -> list[int]:
        """floor(A**(c**n)) along the chain, recomputed from a point inside the interval."""
        lo, hi = self.enclosure(bits)
        mid = (lo + hi) / 2
        return [q for _, q, _ in verify_power_seed((mid, mid), self.c, len(self.chain) - 1, check_prime=False)]


def _raw_fraction(raw) -> Fraction:
    sign, man, exp, _ = raw
    v = Fraction(int(man)) * (Fraction(2) ** exp)
    return -v if sign else v


def construct_power_seed(c, q0: int, depth: int, precision: int = 50) -> PowerTowerSeed:
    """Greedy nested intervals: q_{n+1} is the smallest probable prime k with
    [k, k+1) meeting the image of the current A-interval under x -> x**(c**(n+1))."""
    c = _as_fraction(c)
    if not is_probable_prime(q0):
        raise ValueError("q0 must be prime")
    seed_ = PowerTowerSeed(c, [q0], (0, q0), (0, q0 + 1), precision)
    seed_.history.append((seed_.lo_def, seed_.hi_def))
    for n in range(1, depth + 1):
        lo, hi = seed_.window(n)
        q = next((k for k in range(lo, hi + 1) if is_probable_prime(k)), None)
        if q is None:
            seed_.failed_at = n
            break
        seed_.chain.append(q)
        e = c ** (-n)
        if _cmp_pow(q, e, seed_.lo_def[1], c ** (-seed_.lo_def[0])) > 0:
            seed_.lo_def = (n, q)
        if _cmp_pow(q + 1, e, seed_.hi_def[1], c ** (-seed_.hi_def[0])) < 0:
            seed_.hi_def = (n, q + 1)
        seed_.history.append((seed_.lo_def, seed_.hi_def))
    return seed_


def plouffe_constant() -> tuple[Fraction, Fraction]:
    """Enclosure [lo, hi] of the bundled A = 10**E - D (D truncated)."""
    text = resources.files(__package__).joinpath("plouffe_a.txt").read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    e, d = int(lines[0]), lines[1]
    places = len(d.split(".")[1]) if "." in d else 0
    top = Fraction(10) ** e
    d_lo = Fraction(d)
    return top - d_lo - Fraction(1, 10**places), top - d_lo


def _decimal_enclosure(a_digits: str) -> tuple[Fraction, Fraction]:
    a_digits = a_digits.strip()
    places = len(a_digits.split(".")[1]) if "." in a_digits else 0
    lo = Fraction(a_digits)
    return lo, lo + Fraction(1, 10**places)


def _log2(x: Fraction) -> float:
    return math.log2(x.numerator) - math.log2(x.denominator)


def verify_power_seed(a, c, n_max: int, check_prime: bool = True) -> list[tuple[int, int, bool]]:
    """[(n, floor(A**(c**n)), is PRP)] for n = 0..n_max.

    ``a`` is a truncated decimal string or an exact enclosure (lo, hi) of A.
    A floor is reported only if it is the same for every A in the enclosure;
    otherwise :class:`PrecisionError` is raised for that n.
    """
    c = _as_fraction(c)
    lo, hi = _decimal_enclosure(a) if isinstance(a, str) else (Fraction(a[0]), Fraction(a[1]))
    if lo > hi or lo <= 0:
        raise ValueError("bad enclosure")
    # bits below the unit place that the enclosure can still resolve
    frac_bits = 64 if lo == hi else max(64, int(-_log2((hi - lo) / lo)) + 64)
    exact_bits = max(x.bit_length() for x in (lo.numerator, lo.denominator, hi.numerator, hi.denominator))
    out = []
    for n in range(n_max + 1):
        e = c**n
        mag = int(float(e) * _log2(hi)) + 64
        bits = mag + frac_bits
        # near an integer boundary rounding noise can straddle it; refine
        # until the working precision far exceeds what the enclosure carries
        while True:
            ctx = _iv_ctx(bits)
            enc = ctx.mpf([ctx.mpf(lo.numerator) / lo.denominator, ctx.mpf(hi.numerator) / hi.denominator])
            v = ctx.exp(ctx.mpf(e.numerator) / e.denominator * ctx.log(enc))._mpi_
            fl = _floor(v[0])
            if fl == _floor(v[1]):
                break
            if bits > mag + 2 * exact_bits + 256:
                raise PrecisionError(n)
            bits *= 2
        out.append((n, fl, bool(is_probable_prime(fl)) if check_prime else False))
    return out
