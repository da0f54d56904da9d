"""Ground truth that does not depend on any trained network.

* analytic binomial quantiles of the urn toy problem,
* brute-force expected EMD of the two fixed single-draw strategies,
* Monte-Carlo quantile bands for arbitrary histogram generators,
* coverage (calibration) of a predicted band against a generator.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

# Slack for comparing a CDF value against a quantile level; keeps exact
# ties (e.g. CDF = 0.4 at tau = 0.4) on the ">= tau" side despite rounding.
TIE_TOL = 1e-12


class DomainError(ValueError):
    pass


class NoEligibleBins(ValueError):
    pass


@dataclass(frozen=True)
class UrnSpec:
    n_balls: int
    draws: int

    def __post_init__(self):
        if int(self.n_balls) < 1 or int(self.draws) < 1:
            raise DomainError("an urn needs at least one ball and one draw")


@dataclass(frozen=True)
class QuantileBand:
    """Per-bin quantiles of the cumulative histogram; ``values[t, j]`` is bin j at ``levels[t]``."""

    levels: np.ndarray
    values: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "tau", "value"])
        for t, tau in enumerate(self.levels):
            for j, v in enumerate(self.values[t]):
                w.writerow([j + 1, repr(float(tau)), repr(float(v))])
        return buf.getvalue()


def _binomial_log_pmf(x: int, p: float) -> np.ndarray:
    m = np.arange(x + 1, dtype=np.float64)
    if p == 0.0:
        return np.where(m == 0, 0.0, -np.inf)
    if p == 1.0:
        return np.where(m == x, 0.0, -np.inf)
    log_comb = gammaln(x + 1.0) - gammaln(m + 1.0) - gammaln(x - m + 1.0)
    return log_comb + m * np.log(p) + (x - m) * np.log1p(-p)


def binomial_cdf_table(x: int, p: float) -> np.ndarray:
    """``P(K <= l)`` for ``l = 0..x`` with ``K ~ B(x, p)``."""
    cdf = np.cumsum(np.exp(_binomial_log_pmf(x, p)))
    cdf[-1] = 1.0
    return np.minimum(cdf, 1.0)


def binomial_cdf(l: int, x: int, p: float) -> float:
    if not (0 <= l <= x) or not (0.0 <= p <= 1.0) or x < 0:
        raise DomainError(f"binomial_cdf needs 0 <= l <= x and p in [0, 1]; got l={l}, x={x}, p={p}")
    if l == x:
        return 1.0
    log_terms = _binomial_log_pmf(int(x), float(p))[: l + 1]
    return float(min(1.0, np.exp(log_terms).sum()))


def _lower_quantile_index(cdf: np.ndarray, tau) -> np.ndarray:
    return np.searchsorted(cdf, np.asarray(tau, dtype=np.float64) - TIE_TOL, side="left")


def urn_quantile(spec: UrnSpec, j: int, tau: float) -> float:
    """Tau-quantile of the relative cumulative count ``M_j`` after ``spec.draws`` draws."""
    if not 1 <= j <= spec.n_balls:
        raise DomainError(f"bin {j} outside 1..{spec.n_balls}")
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile level {tau} outside (0, 1)")
    cdf = binomial_cdf_table(spec.draws, j / spec.n_balls)
    return float(_lower_quantile_index(cdf, tau)) / spec.draws


def urn_quantile_table(spec: UrnSpec, taus: Sequence[float]) -> np.ndarray:
    """``out[t, j-1] = urn_quantile(spec, j, taus[t])`` for every bin at once."""
    taus = np.asarray(taus, dtype=np.float64)
    if np.any(taus <= 0) or np.any(taus >= 1):
        raise DomainError("quantile levels must lie in (0, 1)")
    out = np.empty((len(taus), spec.n_balls))
    for j in range(1, spec.n_balls + 1):
        cdf = binomial_cdf_table(spec.draws, j / spec.n_balls)
        out[:, j - 1] = _lower_quantile_index(cdf, taus) / spec.draws
    return out


def urn_sample(spec: UrnSpec, rng, size=None) -> np.ndarray:
    """Relative counts of ``spec.draws`` draws with replacement; shape ``(N,)`` or ``(size, N)``."""
    p = np.full(spec.n_balls, 1.0 / spec.n_balls)
    counts = rng.multinomial(spec.draws, p, size=size)
    return counts / spec.draws


def expected_emd_strategy(strategy: str, n_balls: int, exact: bool = False):
    """Expected 1-Wasserstein distance of a fixed single-draw prediction.

    Enumerates the N equally likely outcomes of one draw.  ``strategy`` is
    ``"median"`` (all mass on the central bin) or ``"mean"`` (uniform).
    """
    n = int(n_balls)
    if n < 1 or n % 2 == 0:
        raise DomainError(f"strategy comparison needs an odd number of balls, got {n_balls}")
    centre = (n + 1) // 2
    if strategy == "median":
        pred = [Fraction(int(j >= centre)) for j in range(1, n + 1)]
    elif strategy == "mean":
        pred = [Fraction(j, n) for j in range(1, n + 1)]
    else:
        raise DomainError(f"unknown strategy {strategy!r}")
    total = Fraction(0)
    for y in range(1, n + 1):
        truth = [Fraction(int(j >= y)) for j in range(1, n + 1)]
        total += sum(abs(a - b) for a, b in zip(pred, truth)) / n
    value = total / n
    return value if exact else float(value)


def _lower_empirical_quantiles(samples: np.ndarray, levels) -> np.ndarray:
    """Rows: levels; lower convention ``min{v : F_n(v) >= tau}``."""
    ordered = np.sort(samples, axis=0)
    n = ordered.shape[0]
    idx = np.ceil(np.asarray(levels, dtype=np.float64) * n - 1e-9).astype(int) - 1
    return ordered[np.clip(idx, 0, n - 1)]


Generator = Callable[[object, object, int], np.ndarray]


def mc_quantile_band(generator: Generator, x_input, levels, n_samples: int, rng) -> QuantileBand:
    """Empirical per-bin quantiles of the cumulative histogram.

    ``generator(x_input, rng, n)`` returns ``n`` density histograms, shape ``(n, N)``.
    """
    if n_samples < 100:
        raise DomainError("mc_quantile_band needs at least 100 samples")
    levels = np.asarray(levels, dtype=np.float64)
    cum = np.cumsum(generator(x_input, rng, n_samples), axis=1)
    return QuantileBand(levels, _lower_empirical_quantiles(cum, levels))


def coverage_levels(alphas) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(a <= 0) or np.any(a >= 1):
        raise DomainError("coverage levels must lie in (0, 1)")
    return (1 - a) / 2, (1 + a) / 2


def coverage_of_band(lower: np.ndarray, upper: np.ndarray, truth_cum: np.ndarray,
                     epsilon: float = 1e-5) -> np.ndarray:
    """Fraction of eligible (sample, bin) pairs with ``lower <= M_j <= upper``.

    ``lower``/``upper`` have shape ``(A, N)`` (one row per alpha), the truth
    ``(S, N)``.  Only bins with ``epsilon <= M_j <= 1 - epsilon`` count.
    """
    eligible = (truth_cum >= epsilon) & (truth_cum <= 1 - epsilon)
    n_eligible = eligible.sum()
    if n_eligible == 0:
        raise NoEligibleBins("no (sample, bin) pair survives the epsilon filter")
    out = np.empty(len(lower))
    for a in range(len(lower)):
        inside = (truth_cum >= lower[a]) & (truth_cum <= upper[a])
        out[a] = (inside & eligible).sum() / n_eligible
    return out


def coverage(predictor: Callable[[object, np.ndarray], np.ndarray], generator: Generator, x_input,
             alphas, n_samples: int, rng, epsilon: float = 1e-5) -> np.ndarray:
    """Bin-averaged coverage of the symmetric alpha-interquantile band.

    ``predictor(x_input, taus)`` returns predicted cumulative quantiles of
    shape ``(len(taus), N)``.
    """
    lo_tau, hi_tau = coverage_levels(alphas)
    truth = np.cumsum(generator(x_input, rng, n_samples), axis=1)
    lower = np.asarray(predictor(x_input, lo_tau))
    upper = np.asarray(predictor(x_input, hi_tau))
    return coverage_of_band(lower, upper, truth, epsilon)


def urn_generator(n_balls: int) -> Generator:
    def gen(x_input, rng, n):
        return urn_sample(UrnSpec(n_balls, int(x_input)), rng, size=n)
    return gen


def coverage_csv(alphas, values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "coverage"])
    for a, c in zip(alphas, values):
        w.writerow([repr(float(a)), repr(float(c))])
    return buf.getvalue()
