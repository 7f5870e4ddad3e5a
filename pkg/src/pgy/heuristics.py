"""Branching-process heuristics for the stage population.

A stage-(s-1) member has p_s - 1 candidate children, each prime with
probability psi(p_s) / log q where log q = theta(p_s) + log y.  Everything
below (extinction probabilities, per-stage distributions, growth forecasts,
split probabilities) follows from that model.

``k`` selects the wheel-throttled variant: the candidate count becomes
W(k)(p-1) and the per-candidate probability psi / (W(k) log q).  ``k=1``
means no throttling (W = 1).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln, lambertw

from .density import psi as psi_k
from .density import psi_limit
from .ntcore import LOG_Y, nth_prime, theta, w_density

__all__ = [
    "LOG_Y_PRECISE",
    "StageModel",
    "OmegaSeries",
    "omega_step",
    "omega_step_binomial",
    "omega_series",
    "failure_probability",
    "log10_failure_probability",
    "n_distribution",
    "table6",
    "table6_csv",
    "predict_next_n",
    "PredictionRecord",
    "deviation_series",
    "predictions_csv",
    "approx_n",
    "split_probability",
    "aggregate_split_probability",
    "project_stage_targets",
    "extinction_fixed_point",
    "omega_delta_estimate",
    "Stability",
    "stability",
    "TABLE6_STAGES",
]

#: log(1.2541961015780119...), the value log y actually approximates.
LOG_Y_PRECISE = math.log(1.2541961015780119362776795549142134)

TABLE6_STAGES = (101, 102, 103, 104, 105, 110, 150, 200, 1000, 2000)


def _throttle(k: int) -> float:
    return 1.0 if k <= 1 else float(w_density(k))


@dataclass(frozen=True)
class StageModel:
    """Parameters shared by every heuristic.

    ``psi_mode`` is ``"limit"`` (k -> infinity adjusted length, the default),
    ``"policy"`` (finite default cutoff) or ``"one"`` (no correction).
    """

    k: int = 1
    log_y: float = LOG_Y
    psi_mode: str = "limit"

    def psi(self, p: int) -> float:
        if self.psi_mode == "limit":
            return psi_limit(p)
        if self.psi_mode == "policy":
            return psi_k(p, "policy")
        if self.psi_mode == "one":
            return 1.0
        raise ValueError(f"unknown psi mode {self.psi_mode!r}")

    def log_q(self, p: int) -> float:
        return float(theta(p)) + self.log_y

    def trials(self, s: int) -> tuple[int, float, float]:
        """(p_s, number of candidates, per-candidate prime probability)."""
        p = nth_prime(s)
        w = _throttle(self.k)
        return p, w * (p - 1), self.psi(p) / (w * self.log_q(p))


def omega_step(omega: float, s: int, model: StageModel = StageModel()) -> float:
    """omega(s-1) from omega(s).

    The binomial sum collapses to (1 - pr * (1 - omega))**N, evaluated in log
    space.
    """
    _, n, pr = model.trials(s)
    return math.exp(n * math.log1p(-pr * (1.0 - omega)))


def omega_step_binomial(omega: float, s: int, model: StageModel = StageModel()) -> float:
    """omega(s-1) by explicit (generalised) binomial summation up to floor(N)."""
    _, n, pr = model.trials(s)
    log_l = math.log(1.0 / pr)  # log of log q / psi (throttled)
    j = np.arange(0, math.floor(n) + 1, dtype=np.float64)
    log_binom = gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
    with np.errstate(divide="ignore"):
        log_terms = log_binom + j * math.log(omega) - j * math.log(math.exp(log_l) - 1.0)
    lead = n * math.log1p(-pr)
    top = log_terms.max()
    return math.exp(lead + top + math.log(np.exp(log_terms - top).sum()))


@dataclass
class OmegaSeries:
    """omega(s) for s_min <= s <= t, filled backwards from omega(t)."""

    t: int
    omega_t: float
    model: StageModel = field(default_factory=StageModel)
    values: dict[int, float] = field(default_factory=dict)

    def __getitem__(self, s: int) -> float:
        return self.values[s]

    @property
    def s_min(self) -> int:
        return min(self.values)

    def rows(self) -> list[tuple[int, int, float]]:
        return [(s, nth_prime(s), self.values[s]) for s in sorted(self.values)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "p", "omega"])
        for s, p, om in self.rows():
            w.writerow([s, p, repr(om)])
        return buf.getvalue()


def default_start(s_query: int) -> int:
    """Start stage: 1900 stages beyond the query, capped near p = 2e4."""
    return min(s_query + 1900, 2262)


def omega_series(
    s_min: int,
    t: int | None = None,
    omega_t: float | None = None,
    k: int = 1,
    *,
    log_y: float = LOG_Y,
    psi_mode: str = "limit",
) -> OmegaSeries:
    """Backward recursion from omega(t) (default 1 - 1/sqrt(2 p_t)) down to s_min."""
    if t is None:
        t = default_start(s_min)
    if s_min >= t:
        raise ValueError("need s_min < t")
    if omega_t is None:
        omega_t = 1.0 - 1.0 / math.sqrt(2 * nth_prime(t))
    if not 0.0 <= omega_t < 1.0:
        raise ValueError("omega_t must lie in [0, 1)")
    model = StageModel(k=k, log_y=log_y, psi_mode=psi_mode)
    out = OmegaSeries(t, omega_t, model, {t: omega_t})
    om = omega_t
    for s in range(t, s_min, -1):
        om = omega_step(om, s, model)
        out.values[s - 1] = om
    return out


def failure_probability(omega: float, n: int) -> float:
    """omega**n; returns 0.0 on underflow, see :func:`log10_failure_probability`."""
    if n == 0:
        return 1.0
    return math.exp(n * math.log(omega))


def log10_failure_probability(omega: float, n: int) -> float:
    return 0.0 if n == 0 else n * math.log10(omega)


# ---------------------------------------------------------------------------
# distribution of the number of descendants


def _series_log(u: np.ndarray) -> np.ndarray:
    # u[0] == 1
    m = len(u)
    out = np.zeros(m)
    for n in range(1, m):
        acc = n * u[n]
        for i in range(1, n):
            acc -= i * out[i] * u[n - i]
        out[n] = acc / n
    return out


def _series_exp(v: np.ndarray) -> np.ndarray:
    # v[0] == 0
    m = len(v)
    out = np.zeros(m)
    out[0] = 1.0
    for n in range(1, m):
        acc = 0.0
        for i in range(1, n + 1):
            acc += i * v[i] * out[n - i]
        out[n] = acc / n
    return out


def _compose_step(inner: np.ndarray, n: float, pr: float) -> np.ndarray:
    """Coefficients of (1 - pr + pr * inner(x))**n, truncated."""
    c = pr * inner
    c[0] += 1.0 - pr
    c0 = c[0]
    lg = _series_log(c / c0)
    lg *= n
    out = _series_exp(lg) * math.exp(n * math.log(c0))
    return out


def n_distribution(
    s: int,
    origin: int | None = None,
    k: int = 1,
    n_max: int = 7,
    *,
    log_y: float = LOG_Y,
    psi_mode: str = "limit",
) -> list[float]:
    """P(a stage-``origin`` member has n descendants at stage s), n = 0..n_max.

    The last entry is the tail P(n > n_max).  ``origin`` defaults to s - 1,
    i.e. the number of children in a single window.
    """
    if origin is None:
        origin = s - 1
    if origin >= s:
        raise ValueError("origin must precede s")
    model = StageModel(k=k, log_y=log_y, psi_mode=psi_mode)
    series = np.zeros(n_max + 1)
    series[1] = 1.0  # identity: x
    for j in range(s, origin, -1):
        _, n, pr = model.trials(j)
        series = _compose_step(series, n, pr)
    probs = [float(x) for x in series]
    probs.append(max(0.0, 1.0 - math.fsum(probs)))
    return probs


def table6(stages: Iterable[int] = TABLE6_STAGES, origin: int = 100, **kw) -> list[tuple[int, int, list[float]]]:
    return [(s, nth_prime(s), n_distribution(s, origin, **kw)) for s in stages]


def table6_csv(stages: Iterable[int] = TABLE6_STAGES, origin: int = 100, **kw) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "p", *[f"P{i}" for i in range(8)], "Pgt7"])
    for s, p, probs in table6(stages, origin, **kw):
        w.writerow([s, p, *[f"{100 * x:.2f}" for x in probs]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# growth


def predict_next_n(n: float, s: int, *, log_y: float = LOG_Y, psi_mode: str = "limit") -> float:
    """Expected stage-(s+1) population given n members at stage s."""
    if n == 0:
        return 0.0
    model = StageModel(log_y=log_y, psi_mode=psi_mode)
    p = nth_prime(s + 1)
    return n * model.psi(p) * (p - 1) / model.log_q(p)


@dataclass(frozen=True)
class PredictionRecord:
    s: int
    predicted_n: float
    actual_n: int

    @property
    def sigma(self) -> float:
        if self.predicted_n <= 0:
            return 0.0
        return (self.actual_n - self.predicted_n) / math.sqrt(self.predicted_n)


def deviation_series(
    actuals: Mapping[int, int],
    predictor: Callable[[float, int], float] | None = None,
) -> tuple[list[PredictionRecord], dict[int, int]]:
    """Per-stage deviations from the one-step forecast, plus a 1-sigma histogram.

    Histogram keys are floor(sigma); e.g. key -1 counts sigma in [-1, 0).
    """
    if len(actuals) < 2:
        raise ValueError("need at least two stages")
    predictor = predictor or predict_next_n
    recs = []
    for s in sorted(actuals):
        if s - 1 in actuals:
            recs.append(PredictionRecord(s, predictor(actuals[s - 1], s - 1), actuals[s]))
    hist: dict[int, int] = {}
    for r in recs:
        b = math.floor(r.sigma)
        hist[b] = hist.get(b, 0) + 1
    return recs, dict(sorted(hist.items()))



def predictions_csv(records: Sequence[PredictionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "predicted", "actual", "sigma"])
    for r in records:
        w.writerow([r.s, f"{r.predicted_n:.3f}", r.actual_n, f"{r.sigma:.4f}"])
    return buf.getvalue()


def approx_n(s: float) -> float:
    """Closed-form medium-range estimate sqrt(exp(sqrt(3 s))) / 8."""
    return math.sqrt(math.exp(math.sqrt(3 * s))) / 8


def project_stage_targets(
    s0: int = 318,
    n0: float = 592642,
    targets: Sequence[float] = (1e6, 1e9, 1e12),
    *,
    log_y: float = LOG_Y,
    exact_psi_limit: int = 2_000_000,
    max_stage: int = 10**6,
) -> list[int]:
    """First stage at which the expected population exceeds each target.

    Iterates log n_{s+1} = log n_s + log(psi(p) (p-1) / (theta(p) + log y)),
    with psi from the adjusted-length formula up to ``exact_psi_limit`` and
    1 - log p / (2p) beyond it.
    """
    if n0 <= 0:
        raise ValueError("n0 must be positive")
    model = StageModel(log_y=log_y)
    order = sorted(range(len(targets)), key=lambda i: targets[i])
    out = [0] * len(targets)
    log_n = math.log(n0)
    s = s0
    i = 0
    while i < len(order) and math.log(targets[order[i]]) < log_n:
        out[order[i]] = s0
        i += 1
    while i < len(order):
        if s >= max_stage:
            raise RuntimeError("target not reached before max_stage")
        s += 1
        p = nth_prime(s)
        ps = model.psi(p) if p <= exact_psi_limit else 1.0 - math.log(p) / (2 * p)
        log_n += math.log(ps * (p - 1) / model.log_q(p))
        while i < len(order) and log_n > math.log(targets[order[i]]):
            out[order[i]] = s
            i += 1
    return out


# ---------------------------------------------------------------------------
# splits and stability


def split_probability(
    s: int,
    fold: int = 3,
    omega_prev: float | None = None,
    *,
    log_y: float = LOG_Y,
    cutoff: float = 1e-30,
) -> float:
    """Probability that one stage-(s-1) member founds >= ``fold`` lasting branches.

    Sum over x >= fold of C(p-1, x) (log q - 1)^-x (1 - 1/log q)^(p-1)
    (1 - omega)^x C(x, fold), with p = p_s, log q = theta(p_s) + log y and
    omega = omega(s-1) (computed by :func:`omega_series` when not given).
    """
    if fold < 2:
        raise ValueError("fold must be >= 2")
    p = nth_prime(s)
    n = p - 1
    if fold > n:
        return 0.0
    if omega_prev is None:
        omega_prev = omega_series(s - 1, log_y=log_y)[s - 1]
    lq = float(theta(p)) + log_y
    lead = n * math.log1p(-1.0 / lq)
    base = math.log(1.0 - omega_prev) - math.log(lq - 1.0)
    terms = []
    peaked = False
    prev = -math.inf
    for x in range(fold, n + 1):
        lt = (
            math.lgamma(n + 1) - math.lgamma(x + 1) - math.lgamma(n - x + 1)
            + x * base + lead
            + math.lgamma(x + 1) - math.lgamma(fold + 1) - math.lgamma(x - fold + 1)
        )
        terms.append(lt)
        if lt < prev:
            peaked = True
        prev = lt
        if peaked and lt < math.log(cutoff):
            break
    top = max(terms)
    return math.exp(top) * math.fsum(math.exp(t - top) for t in terms)


def aggregate_split_probability(v: float, n: int) -> float:
    """1 - (1 - v)**n: some member out of n splits."""
    return -math.expm1(n * math.log1p(-v))


def extinction_fixed_point(z: float) -> float:
    """Extinction probability of a Poisson(z) branching process.

    The limit of f <- exp(z (f - 1)) from f = 0: 1 for z <= 1, otherwise the
    smaller root, -W0(-z e^-z) / z.
    """
    if z < 0:
        raise ValueError("z must be >= 0")
    if z <= 1.0:
        return 1.0
    return float(-lambertw(-z * math.exp(-z), 0).real / z)


def omega_delta_estimate(m: float, p: float, omega: float) -> float:
    """Leading terms of omega(s+1) - omega(s) when theta(p) = p + m sqrt(p)."""
    return (omega - 1.0) * (m / math.sqrt(p) + 1.0 / p + (1.0 - omega) / 2.0)


@dataclass(frozen=True)
class Stability:
    above_p: bool
    above_strong_bound: bool

    @property
    def stable(self) -> bool:
        return self.above_p


def stability(n: int, p: int) -> Stability:
    """n > p and n > sqrt(p) log(p) / 2."""
    return Stability(n > p, n > 0.5 * math.sqrt(p) * math.log(p))
