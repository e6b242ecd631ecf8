"""Rank selection by chi-square goodness of fit and Akaike weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np
from scipy.special import erfinv, gammainc, gammaln, logsumexp

from .core import FrequencyMatrix, ValidationError
from .wlra import FitOptions, FitResult, fit_rank_k

#: Parameter-to-datapoint ratio above which AIC is flagged as unreliable.
AIC_RATIO_CAVEAT = 0.4


def _chi2_cdf(x, dof):
    return gammainc(dof / 2.0, x / 2.0) if x > 0 else 0.0


def _chi2_logpdf(x, dof):
    a = dof / 2.0
    return (a - 1) * math.log(x) - x / 2.0 - a * math.log(2.0) - gammaln(a)


def chi2_quantile(dof: float, q: float, rtol: float = 1e-12) -> float:
    """Inverse CDF of the chi-square distribution.

    Newton iteration on the regularized lower incomplete gamma function,
    falling back to bisection whenever a Newton step leaves the bracket.
    """
    if not 0 < q < 1:
        raise ValidationError(f"quantile level {q} outside (0, 1)")
    if dof <= 0:
        raise ValidationError("degrees of freedom must be positive")
    lo, hi = 0.0, max(1.0, dof)
    while _chi2_cdf(hi, dof) < q:
        lo, hi = hi, 2 * hi
    # Wilson-Hilferty start
    z = math.sqrt(2) * float(erfinv(2 * q - 1))
    c = 2.0 / (9 * dof)
    x = dof * max(1 - c + z * math.sqrt(c), 1e-3) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = _chi2_cdf(x, dof) - q
        if fx > 0:
            hi = x
        else:
            lo = x
        step = fx / math.exp(_chi2_logpdf(x, dof)) if x > 0 else math.inf
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= rtol * max(xn, 1e-300):
            return xn
        x = xn
    return x


def chi2_interval(dof: float, coverage: float = 0.99):
    """Central interval containing ``coverage`` of the chi-square density."""
    a = (1 - coverage) / 2
    return chi2_quantile(dof, a), chi2_quantile(dof, 1 - a)


def n_parameters(k: int, m: int, n: int) -> int:
    """Real parameters of a rank-k m x n matrix: ``k (m + n - k)``."""
    return k * (m + n - k)


def aic_score(chi2_k: float, k: int, m: int, n: int) -> float:
    return chi2_k + 2 * n_parameters(k, m, n)


def aic_log_weights(scores) -> np.ndarray:
    """Natural-log Akaike weights, ``-Delta_k/2 - logsumexp(-Delta/2)``."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValidationError("need at least one AIC score")
    delta = s - s.min()
    return -delta / 2 - logsumexp(-delta / 2)


def aic_weights(scores) -> np.ndarray:
    return np.exp(aic_log_weights(scores))


@dataclass
class RankCandidate:
    k: int
    chi2: float
    dof: int
    interval99: tuple
    r_k: int
    aic: float
    delta: float = math.nan
    weight: float = 0.0
    log_weight: float = -math.inf
    rejected: bool = False
    outside_interval: bool = False
    underfit: bool = False
    aic_caveat: bool = False
    converged: bool = True


@dataclass
class RankReport:
    m: int
    n: int
    n_measured: int
    candidates: list
    selected_rank: int
    fits: dict = field(default_factory=dict, repr=False)

    def candidate(self, k) -> RankCandidate:
        for c in self.candidates:
            if c.k == k:
                return c
        raise KeyError(k)

    @property
    def weights(self) -> dict:
        return {c.k: c.weight for c in self.candidates}

    def to_dict(self) -> dict:
        rows = []
        for c in self.candidates:
            rows.append({
                "k": c.k, "chi2": c.chi2, "dof": c.dof,
                "interval99": list(c.interval99), "r_k": c.r_k, "aic": c.aic,
                "delta": c.delta, "weight": c.weight, "log_weight": c.log_weight,
                "rejected": c.rejected, "outside_interval": c.outside_interval,
                "underfit": c.underfit, "aic_caveat": c.aic_caveat,
                "converged": c.converged,
            })
        return {"m": self.m, "n": self.n, "n_measured": self.n_measured,
                "selected_rank": self.selected_rank, "candidates": rows}


def degrees_of_freedom(k: int, F: FrequencyMatrix) -> int:
    """Measured cells (the exact unit column included) minus ``k (m + n - k)``.

    On a full grid this is ``(m - k)(n - k)``.
    """
    m, n = F.shape
    return int(F.mask.sum()) - n_parameters(k, m, n)


def build_report(F: FrequencyMatrix, fits: dict) -> RankReport:
    """Assemble a RankReport from already computed fits keyed by rank."""
    m, n = F.shape
    n_meas = int(F.mask.sum())
    cands = []
    for k in sorted(fits):
        fit = fits[k]
        dof = degrees_of_freedom(k, F)
        r = n_parameters(k, m, n)
        c = RankCandidate(k=k, chi2=fit.chi2 if fit is not None else math.nan, dof=dof,
                          interval99=(math.nan, math.nan), r_k=r,
                          aic=math.nan, aic_caveat=r > AIC_RATIO_CAVEAT * n_meas)
        if fit is None or dof <= 0:
            c.rejected = True
        else:
            c.converged = fit.converged
            c.aic = aic_score(fit.chi2, k, m, n)
            c.interval99 = chi2_interval(dof)
            c.outside_interval = not (c.interval99[0] <= fit.chi2 <= c.interval99[1])
            c.underfit = fit.chi2 > c.interval99[1]
        cands.append(c)
    live = [c for c in cands if not c.rejected]
    if not live:
        raise ValidationError("no identifiable candidate rank")
    logw = aic_log_weights([c.aic for c in live])
    amin = min(c.aic for c in live)
    for c, lw in zip(live, logw):
        c.delta = c.aic - amin
        c.log_weight = float(lw)
        c.weight = float(np.exp(lw))
    sel = max(live, key=lambda c: (c.log_weight, -c.k)).k
    return RankReport(m, n, n_meas, cands, sel, fits=dict(fits))


def select_rank(F: FrequencyMatrix, k_range: Iterable[int],
                opts: Optional[FitOptions] = None, **fit_kwargs) -> RankReport:
    """Fit each candidate rank and pick the one with the largest Akaike weight.

    ``opts`` supplies everything but the rank; candidates exceeding
    ``min(m, n)`` or leaving no degrees of freedom are rejected.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValidationError("candidate rank set is empty")
    m, n = F.shape
    fits = {}
    for k in ks:
        if k > min(m, n) or degrees_of_freedom(k, F) <= 0:
            fits[k] = None
            continue
        o = FitOptions(rank=k, **fit_kwargs) if opts is None else replace(opts, rank=k)
        fits[k] = fit_rank_k(F, o)
    return build_report(F, fits)
