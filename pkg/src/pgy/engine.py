"""Stage evolution: sieve every member's child window, keep the probable primes.

A stage is a sorted population of integers q = floor(y * p_s#) for the
still-admissible constants y.  Going to the next prime P, each member q
spawns a window of P - 1 (or P) consecutive integers, which is sieved by all
primes up to P**2 (stepping for primes shorter than the window, a single
possible hit for the longer ones) and then BPSW-tested.

To avoid recomputing big-number residues, every member carries its residues
modulo the sieving primes; a child's residues follow from its parent's by one
multiply-add per prime.  The cache is dropped when it would exceed the memory
budget and residues are then recomputed by Horner evaluation per chunk.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from gmpy2 import mpz

from .ntcore import bpsw_sieved, get_tables, is_probable_prime, nth_prime, primorial

__all__ = [
    "VariantRule",
    "StageState",
    "StepResult",
    "RunResult",
    "YInterval",
    "YBounds",
    "CheckpointError",
    "seed",
    "children",
    "window",
    "step",
    "run",
    "y_bounds",
    "split_offsets",
    "export_checkpoint",
    "import_checkpoint",
    "infer_stage",
    "CheckpointDir",
    "render_decimal",
]

log = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes of cached residues


# ---------------------------------------------------------------------------
# variants and state


@dataclass(frozen=True)
class VariantRule:
    """Which game is played.

    ``floor``: q = floor(y p#), seed {2}.  ``round``: nearest integer, seed
    {2, 3}.  ``semi``: floor with a free integer part B, stage-1 values
    {2B, 2B+1}, primality required from stage 2 on.  ``semi_restrict`` keeps
    only stage-1 values that are primes or semiprimes.
    """

    kind: str = "floor"
    semi_base: int = 0
    primality_from_stage: int = 1
    semi_restrict: bool = False

    def __post_init__(self):
        if self.kind not in ("floor", "round", "semi"):
            raise ValueError(f"unknown variant {self.kind!r}")
        if self.semi_base < 0:
            raise ValueError("semi base must be >= 0")

    @classmethod
    def floor(cls) -> "VariantRule":
        return cls("floor")

    @classmethod
    def round(cls) -> "VariantRule":
        return cls("round")

    @classmethod
    def semi(cls, base: int, restrict: bool = False) -> "VariantRule":
        return cls("semi", base, 2, restrict)

    @classmethod
    def parse(cls, text: str) -> "VariantRule":
        text = text.strip()
        if text in ("floor", "round"):
            return cls(text)
        m = re.fullmatch(r"semi:(\d+)(:restrict)?", text)
        if m:
            return cls.semi(int(m.group(1)), bool(m.group(2)))
        raise ValueError(f"cannot parse variant {text!r}")

    def __str__(self) -> str:
        if self.kind == "semi":
            return f"semi:{self.semi_base}" + (":restrict" if self.semi_restrict else "")
        return self.kind


@dataclass(frozen=True, eq=False)
class StageState:
    """Population of stage ``s`` (prime ``p``), members ascending."""

    variant: VariantRule
    s: int
    values: tuple[int, ...]
    _residues: object = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return nth_prime(self.s)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def a(self) -> int:
        return self.values[0]

    @property
    def d(self) -> list[int]:
        v = self.values
        return [0] + [v[i] - v[i - 1] for i in range(1, len(v))]

    @classmethod
    def from_deltas(cls, variant: VariantRule, s: int, a: int, d: Sequence[int]) -> "StageState":
        vals = []
        cur = a
        for i, x in enumerate(d):
            cur = a if i == 0 else cur + x
            vals.append(cur)
        return cls(variant, s, tuple(vals))

    def __eq__(self, other):
        if not isinstance(other, StageState):
            return NotImplemented
        return (self.variant, self.s, self.values) == (other.variant, other.s, other.values)

    def __hash__(self):
        return hash((self.variant, self.s, self.values))


def seed(variant: VariantRule) -> StageState:
    """Stage-1 population of a variant."""
    if variant.kind == "floor":
        vals: tuple[int, ...] = (2,)
    elif variant.kind == "round":
        vals = (2, 3)
    else:
        b = variant.semi_base
        vals = (2 * b, 2 * b + 1)
        if variant.semi_restrict:
            vals = tuple(v for v in vals if _prime_or_semiprime(v))
    return StageState(variant, 1, vals)


def _prime_or_semiprime(v: int) -> bool:
    if v < 2:
        return False
    f = 2
    count = 0
    while f * f <= v:
        while v % f == 0:
            v //= f
            count += 1
        f += 1
    count += v > 1
    return count <= 2


def window(q: int, P: int, variant: VariantRule) -> tuple[int, int]:
    """(first integer, count) of q's child window for the next stage prime P."""
    if variant.kind == "round":
        h = (P - 1) // 2
        return q * P - h, P
    if q <= 1:
        # q * P is prime only for q = 1; keep it in the window there
        return q * P, P
    return q * P + 1, P - 1


# ---------------------------------------------------------------------------
# residues


def _limb_matrix(values: Sequence[int]) -> np.ndarray:
    """Rows of 32-bit limbs, most significant first."""
    nbytes = max(4, -(-max(int(v).bit_length() for v in values) // 32) * 4)
    buf = b"".join(int(v).to_bytes(nbytes, "big") for v in values)
    return np.frombuffer(buf, dtype=">u4").reshape(len(values), nbytes // 4).astype(np.int64)


def residues(values: Sequence[int], primes: np.ndarray, chunk: int = 256) -> np.ndarray:
    """values[i] mod primes[j] as an int64 matrix (Horner over 32-bit limbs)."""
    out = np.empty((len(values), len(primes)), dtype=np.int64)
    if len(values) == 0 or len(primes) == 0:
        return out
    b = primes[None, :]
    for lo in range(0, len(values), chunk):
        limbs = _limb_matrix(values[lo : lo + chunk])
        r = np.zeros((limbs.shape[0], len(primes)), dtype=np.int64)
        for j in range(limbs.shape[1]):
            r <<= 32
            r |= limbs[:, j : j + 1]
            r %= b
        out[lo : lo + chunk] = r
    return out


def _sieve_primes(P: int) -> np.ndarray:
    tab = get_tables(P * P)
    return tab.primes[: tab.pi(P * P)]


# ---------------------------------------------------------------------------
# expanding windows


def _expand(
    P: int,
    variant: VariantRule,
    values: Sequence[int],
    rows: np.ndarray | None,
    primes: np.ndarray,
    require_prime: bool,
    sieve: bool,
    keep_rows: bool,
):
    """Children of every value in ``values``.

    Returns (children, local parent index per child, child residue rows).
    """
    out: list[int] = []
    par: list[int] = []
    child_rows: list[np.ndarray] = []
    if len(primes):
        pmod = P % primes
        n_small = int(np.searchsorted(primes, P, side="left"))
    top = int(primes[-1]) if len(primes) else 0
    full_test = top < 1000
    for i, q in enumerate(values):
        lo, count = window(q, P, variant)
        if not require_prime:
            for r in range(count):
                out.append(lo + r)
                par.append(i)
            continue
        if not sieve or rows is None or lo <= top:
            base = mpz(lo)
            for r in range(count):
                if is_probable_prime(base + r):
                    out.append(lo + r)
                    par.append(i)
            continue
        lo_res = (rows[i] * pmod + (lo - q * P)) % primes
        neg = (-lo_res) % primes
        marks = np.zeros(count, dtype=bool)
        for j in range(n_small):
            marks[int(neg[j]) :: int(primes[j])] = True
        big = neg[n_small:]
        marks[big[big < count]] = True
        base = mpz(lo)
        for r in np.flatnonzero(~marks).tolist():
            c = base + r
            if is_probable_prime(c) if full_test else bpsw_sieved(c):
                out.append(lo + r)
                par.append(i)
                if keep_rows:
                    child_rows.append((lo_res + r) % primes)
    rows_out = np.vstack(child_rows).astype(np.int32) if keep_rows and child_rows else None
    return out, par, rows_out


def children(
    q: int,
    p_next: int,
    variant: VariantRule | None = None,
    require_prime: bool = True,
    sieve: bool = True,
) -> list[int]:
    """Ascending admissible children of q when the next stage prime is p_next."""
    variant = variant or VariantRule.floor()
    primes = _sieve_primes(p_next) if sieve else np.zeros(0, dtype=np.int64)
    rows = residues([q], primes) if sieve else None
    kids, _, _ = _expand(p_next, variant, [q], rows, primes, require_prime, sieve, False)
    return kids


@dataclass(frozen=True)
class StepResult:
    state: StageState
    parents: tuple[int, ...]  # parents[i] = index (0-based) of member i's parent

    @property
    def extinct(self) -> bool:
        return self.state.n == 0


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def step(
    state: StageState,
    workers: int = 1,
    *,
    sieve: bool = True,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    chunk: int = 64,
    progress: Callable[[int, int, int], None] | None = None,
) -> StepResult:
    """Advance one stage.  The merge is ordered by parent, so the output does
    not depend on ``workers``."""
    s_next = state.s + 1
    P = nth_prime(s_next)
    variant = state.variant
    require_prime = s_next >= variant.primality_from_stage
    values = state.values
    primes = _sieve_primes(P) if sieve else np.zeros(0, dtype=np.int64)

    # residues of the parents modulo the sieving primes
    cached = state._residues
    rows_all = None
    if sieve and len(values):
        if isinstance(cached, np.ndarray) and cached.shape[0] == len(values) and cached.shape[1] <= len(primes):
            k = cached.shape[1]
            extra = residues(values, primes[k:]) if k < len(primes) else None
            rows_all = cached if extra is None else np.hstack((cached, extra.astype(np.int32)))
        elif len(values) * len(primes) * 8 <= memory_budget:
            rows_all = residues(values, primes).astype(np.int32)

    def rows_for(lo, hi):
        if not sieve:
            return None
        if rows_all is not None:
            return rows_all[lo:hi].astype(np.int64)
        return residues(values[lo:hi], primes)

    next_count_guess = len(values) * 2
    keep_rows = sieve and next_count_guess * len(_sieve_primes(nth_prime(s_next + 1))) * 4 <= memory_budget

    parts = _chunks(len(values), chunk)
    results = []
    if workers > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [
                ex.submit(_expand, P, variant, values[lo:hi], rows_for(lo, hi), primes, require_prime, sieve, keep_rows)
                for lo, hi in parts
            ]
            for j, f in enumerate(futs):
                results.append(f.result())
                if progress:
                    progress(j + 1, len(parts), sum(len(r[0]) for r in results))
    else:
        for j, (lo, hi) in enumerate(parts):
            results.append(_expand(P, variant, values[lo:hi], rows_for(lo, hi), primes, require_prime, sieve, keep_rows))
            if progress:
                progress(j + 1, len(parts), sum(len(r[0]) for r in results))

    kids: list[int] = []
    parents: list[int] = []
    row_blocks = []
    for (lo, _), (out, par, rws) in zip(parts, results):
        kids.extend(out)
        parents.extend(lo + x for x in par)
        if rws is not None:
            row_blocks.append(rws)
    assert all(kids[i] < kids[i + 1] for i in range(len(kids) - 1)), "child windows overlap"
    new_rows = None
    if keep_rows and row_blocks and sum(len(b) for b in row_blocks) == len(kids):
        new_rows = np.vstack(row_blocks)
    return StepResult(StageState(variant, s_next, tuple(kids), new_rows), tuple(parents))


@dataclass(frozen=True)
class RunResult:
    state: StageState  # last live state
    extinct_at: int | None = None


def run(
    state: StageState,
    to_stage: int,
    sink: Callable[[StepResult, float], None] | None = None,
    workers: int = 1,
    **step_kw,
) -> RunResult:
    """Step until ``to_stage`` or extinction.  ``sink(result, elapsed_ms)`` is
    called after every stage (checkpointing)."""
    if to_stage < state.s:
        raise ValueError("to_stage precedes the current stage")
    while state.s < to_stage:
        t0 = time.perf_counter()
        res = step(state, workers, **step_kw)
        elapsed = (time.perf_counter() - t0) * 1000
        if res.extinct:
            log.info("extinct at stage %d", res.state.s)
            if sink:
                sink(res, elapsed)
            return RunResult(state, res.state.s)
        if sink:
            sink(res, elapsed)
        log.info("stage %d p=%d n=%d (%.0f ms)", res.state.s, nth_prime(res.state.s), res.state.n, elapsed)
        state = res.state
    return RunResult(state, None)


# ---------------------------------------------------------------------------
# bounds on y


def render_decimal(x: Fraction, digits: int, rounding: str = "down") -> str:
    """Fixed-point decimal with ``digits`` places, rounded down or up."""
    scale = 10**digits
    num, den = x.numerator * scale, x.denominator
    q, r = divmod(num, den)
    if rounding == "up" and r:
        q += 1
    sign = "-" if q < 0 else ""
    q = abs(q)
    ip, fp = divmod(q, scale)
    return f"{sign}{ip}." + str(fp).rjust(digits, "0") if digits else f"{sign}{ip}"


@dataclass(frozen=True)
class YInterval:
    """[q / m, (q + 1) / m) with m = p#."""

    numerator: int
    modulus: int

    @property
    def lower(self) -> Fraction:
        return Fraction(self.numerator, self.modulus)

    @property
    def upper(self) -> Fraction:
        return Fraction(self.numerator + 1, self.modulus)

    def contains(self, x: Fraction) -> bool:
        return self.lower <= x < self.upper

    def decimal(self, digits: int = 80) -> tuple[str, str]:
        return render_decimal(self.lower, digits, "down"), render_decimal(self.upper, digits, "up")


@dataclass(frozen=True)
class YBounds:
    first: YInterval
    last: YInterval

    @property
    def y_min(self) -> Fraction:
        return self.first.lower

    @property
    def y_max(self) -> Fraction:
        return self.last.upper

    @property
    def gap(self) -> Fraction:
        return self.y_max - self.y_min

    def contains(self, x: Fraction) -> bool:
        return self.y_min <= x < self.y_max

    def decimal(self, digits: int = 80) -> tuple[str, str]:
        return render_decimal(self.y_min, digits, "down"), render_decimal(self.y_max, digits, "up")

    def gap_decimal(self, significant: int = 20) -> str:
        return sci_truncated(self.gap, significant)


def sci_truncated(x: Fraction, significant: int) -> str:
    """Truncated scientific notation of a positive rational."""
    if x <= 0:
        return "0"
    e = len(str(x.numerator // x.denominator)) - 1 if x >= 1 else -len(str(x.denominator // x.numerator))
    while x / Fraction(10) ** e >= 10:
        e += 1
    while x / Fraction(10) ** e < 1:
        e -= 1
    m = x / Fraction(10) ** e
    digits = render_decimal(m, significant - 1, "down")
    return f"{digits}e{e}"


def y_bounds(state: StageState) -> YBounds:
    """Admissible y: [q_first / p#, (q_last + 1) / p#)."""
    if state.n == 0:
        raise ValueError("empty population")
    m = primorial(state.p)
    return YBounds(YInterval(state.values[0], m), YInterval(state.values[-1], m))


def split_offsets(siblings: Sequence[int], s: int) -> list[Fraction]:
    """Offsets (q_j - q_0) / p_s# of sibling members q_0 < q_1 < ... of stage s."""
    m = primorial(nth_prime(s))
    q0 = siblings[0]
    return [Fraction(q - q0, m) for q in siblings]


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    """Malformed checkpoint or violated invariant; ``index`` is 1-based."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


_CKPT_RE = re.compile(r"\s*a\s*=\s*(\d+)\s*;\s*d\s*=\s*\[([\d,\s]*)\]\s*;?\s*")


def export_checkpoint(state: StageState) -> str:
    if state.n == 0:
        raise ValueError("cannot checkpoint an extinct stage")
    return f"a={state.a}; d=[{', '.join(str(x) for x in state.d)}]\n"


def infer_stage(a: int) -> int:
    """Stage of a floor-variant member: divide out primes until <= 1."""
    s, b = 0, a
    while b > 1:
        s += 1
        b //= nth_prime(s)
    return s


def import_checkpoint(
    text: str,
    s: int | None = None,
    variant: VariantRule | None = None,
    verify: bool = False,
) -> StageState:
    """Parse ``a=...; d=[...]``.  With ``verify`` every member is PRP-tested."""
    variant = variant or VariantRule.floor()
    m = _CKPT_RE.fullmatch(text)
    if not m:
        raise CheckpointError("not a checkpoint line")
    a = int(m.group(1))
    body = m.group(2).strip()
    d = [int(x) for x in body.split(",")] if body else []
    if not d:
        raise CheckpointError("empty delta vector")
    if d[0] != 0:
        raise CheckpointError("first delta must be 0", 1)
    for i, x in enumerate(d[1:], start=2):
        if x <= 0:
            raise CheckpointError(f"delta {i} is not positive", i)
    if s is None:
        s = infer_stage(a)
    state = StageState.from_deltas(variant, s, a, d)
    if verify and s >= variant.primality_from_stage:
        for i, q in enumerate(state.values, start=1):
            if not is_probable_prime(q):
                raise CheckpointError(f"member {i} is not a probable prime", i)
    return state


class CheckpointDir:
    """``stage_<s>.pgy`` + ``parents_<s>.csv`` per stage and ``stagelog.csv``.

    Parent files list, for each member (1-based ordinal), the 1-based ordinal
    of its parent in the previous stage.
    """

    CONFIG = "run.cfg"
    LOG_HEADER = ["s", "p", "n", "q_digits", "elapsed_ms"]

    def __init__(self, path: str | os.PathLike, variant: VariantRule | None = None):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        cfg = self.read_config()
        if variant is None:
            variant = VariantRule.parse(cfg.get("variant", "floor"))
        elif cfg and cfg.get("variant") != str(variant):
            raise CheckpointError(f"directory holds variant {cfg.get('variant')}, not {variant}")
        self.variant = variant
        if not cfg:
            self.write_config({"variant": str(variant)})

    def read_config(self) -> dict[str, str]:
        f = self.path / self.CONFIG
        if not f.exists():
            return {}
        out = {}
        for line in f.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
        return out

    def write_config(self, cfg: dict[str, str]):
        (self.path / self.CONFIG).write_text("".join(f"{k}={v}\n" for k, v in cfg.items()))

    def stage_file(self, s: int) -> Path:
        return self.path / f"stage_{s}.pgy"

    def parents_file(self, s: int) -> Path:
        return self.path / f"parents_{s}.csv"

    def stages(self) -> list[int]:
        out = []
        for f in self.path.glob("stage_*.pgy"):
            m = re.fullmatch(r"stage_(\d+)\.pgy", f.name)
            if m:
                out.append(int(m.group(1)))
        return sorted(out)

    def write_state(self, state: StageState):
        tmp = self.stage_file(state.s).with_suffix(".tmp")
        tmp.write_text(export_checkpoint(state))
        tmp.replace(self.stage_file(state.s))

    def write_parents(self, s: int, parents: Sequence[int]):
        tmp = self.parents_file(s).with_suffix(".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["member", "parent"])
            for i, par in enumerate(parents, start=1):
                w.writerow([i, par + 1])
        tmp.replace(self.parents_file(s))

    def log_stage(self, state: StageState, elapsed_ms: float):
        f = self.path / "stagelog.csv"
        rows = []
        if f.exists():
            with open(f, newline="") as fh:
                rows = [r for r in csv.reader(fh)][1:]
        rows = [r for r in rows if int(r[0]) < state.s]
        digits = len(str(state.a)) if state.n else 0
        rows.append([str(state.s), str(nth_prime(state.s)), str(state.n), str(digits), f"{elapsed_ms:.0f}"])
        with open(f, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.LOG_HEADER)
            w.writerows(rows)

    def mark_extinct(self, s: int):
        cfg = self.read_config()
        cfg["extinct_at"] = str(s)
        self.write_config(cfg)

    @property
    def extinct_at(self) -> int | None:
        v = self.read_config().get("extinct_at")
        return int(v) if v else None

    def __call__(self, res: StepResult, elapsed_ms: float):
        if res.extinct:
            self.write_parents(res.state.s, ())
            self.log_stage(res.state, elapsed_ms)
            self.mark_extinct(res.state.s)
            return
        self.write_state(res.state)
        self.write_parents(res.state.s, res.parents)
        self.log_stage(res.state, elapsed_ms)

    def load(self, s: int, verify: bool = False) -> StageState:
        return import_checkpoint(self.stage_file(s).read_text(), s, self.variant, verify)

    def load_parents(self, s: int) -> np.ndarray:
        f = self.parents_file(s)
        if not f.exists():
            raise FileNotFoundError(f"missing parent map {f.name}; re-run with checkpoints enabled")
        with open(f, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return np.array([int(r[1]) - 1 for r in rows], dtype=np.int64)

    def latest(self) -> StageState | None:
        st = self.stages()
        return self.load(st[-1]) if st else None

    def start(self) -> StageState:
        """Latest checkpoint, or the variant's seed written as stage 1."""
        state = self.latest()
        if state is None:
            state = seed(self.variant)
            self.write_state(state)
            self.log_stage(state, 0.0)
        return state
