"""Extreme-value estimate of the loss-gradient Lipschitz constant.

Slopes ``||g_j - g_i|| / ||theta_j - theta_i||`` between snapshot pairs are
lower bounds on the constant. Maxima of batches of slopes are fitted with a
three-parameter reverse Weibull law, whose CDF is

    F(x) = exp(-((loc - x) / scale) ** shape)   for x < loc, 1 otherwise,

and each fit is checked with a one-sample Kolmogorov-Smirnov test. A grid
over the batch count ``M``, the batch size ``N`` and the initial shape picks
the final estimate.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .exceptions import DegenerateLog, DegenerateSamples, InvalidInput, NoEligibleCell
from .numcore import make_rng

REPORT_MODES = ("location", "scale")
CANDIDATE_COLUMNS = ("M", "N", "shape0", "shape", "location", "scale", "nll", "D", "p_value",
                     "estimate", "eligible")


@dataclass
class WeibullFit:
    shape: float
    location: float
    scale: float
    nll: float
    ks_statistic: float = float("nan")
    p_value: float = float("nan")
    shape0: float = float("nan")

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        y = np.clip((self.location - x) / self.scale, 0.0, None)
        return np.where(x < self.location, np.exp(-(y ** self.shape)), 1.0)

    def sample(self, size, rng):
        """Inverse-CDF draws ``loc - scale * (-ln u) ** (1/shape)``."""
        u = rng.uniform(size=size)
        return self.location - self.scale * (-np.log(u)) ** (1.0 / self.shape)


@dataclass
class LipschitzEstimate:
    L_est: float
    winning_fit: WeibullFit
    M: int
    N: int
    shape0: float
    report: str
    candidates: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["winning_fit"] = asdict(self.winning_fit)
        return d

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def candidates_to_csv(self, path):
        write_candidates(self.candidates, path)


def write_candidates(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CANDIDATE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CANDIDATE_COLUMNS})


def _max_slope(thetas, grads, n_points, rng, max_redraws=100):
    n = len(thetas)
    picks = np.sort(rng.choice(n, size=n_points, replace=False))
    best = -math.inf
    for a, b in zip(picks[0::2], picks[1::2]):
        step = np.linalg.norm(thetas[b] - thetas[a])
        tries = 0
        while step == 0.0 and tries < max_redraws:
            a, b = np.sort(rng.choice(n, size=2, replace=False))
            step = np.linalg.norm(thetas[b] - thetas[a])
            tries += 1
        if step == 0.0:
            continue
        best = max(best, float(np.linalg.norm(grads[b] - grads[a]) / step))
    if best == -math.inf:
        raise DegenerateLog("every sampled snapshot pair has identical parameters")
    return best


def sample_max_slope(log, N, rng):
    """Largest of the ``N/2`` slopes from ``N`` distinct records paired in epoch order.

    Records are drawn uniformly without replacement, sorted by epoch and
    paired (1st, 2nd), (3rd, 4th), ... A pair with identical parameters is
    replaced by a fresh random pair.
    """
    _check_n(N, len(log))
    return _max_slope(log.thetas, log.grads, N, rng)


def _check_n(N, n_records):
    if N < 2 or N % 2:
        raise InvalidInput("N must be an even number >= 2")
    if N > n_records:
        raise InvalidInput(f"N={N} exceeds the {n_records} available snapshots")


def _softplus(u):
    return u + math.log1p(math.exp(-u)) if u > 0 else math.log1p(math.exp(u))


def _softplus_inv(y):
    return y + math.log(-math.expm1(-y))


def _nll_standardized(params, z):
    log_c, u, log_s = params
    if abs(log_c) > 30 or abs(log_s) > 30:
        return math.inf
    c, s = math.exp(log_c), math.exp(log_s)
    y = (_softplus(u) - z) / s
    if np.any(y <= 0):
        return math.inf
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ll = np.log(c) - np.log(s) + (c - 1.0) * np.log(y) - y ** c
        total = -float(np.sum(ll))
    return total if math.isfinite(total) else math.inf


def fit_reverse_weibull(samples, shape0):
    """Maximum-likelihood reverse Weibull fit started from ``shape0``.

    Samples are standardized to ``z = (x - max) / range`` and the location is
    written as ``softplus(u)`` above the sample maximum, so the support
    constraint holds for every simplex vertex. The search starts from
    ``(shape0, max + 0.1 * range, sample std)``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise InvalidInput("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("samples must be finite")
    if not shape0 > 0:
        raise InvalidInput("shape0 must be positive")
    top, spread = float(x.max()), float(x.max() - x.min())
    if spread == 0.0 or spread < 1e-12 * abs(top):
        raise DegenerateSamples("samples are (nearly) identical")
    z = (x - top) / spread
    start = np.array([math.log(shape0), _softplus_inv(0.1), math.log(float(np.std(z)))])
    res = minimize(_nll_standardized, start, args=(z,), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000, "maxfev": 8000})
    log_c, u, log_s = res.x
    nll = float(res.fun) + len(x) * math.log(spread)
    return WeibullFit(shape=math.exp(log_c), location=top + spread * _softplus(u),
                      scale=spread * math.exp(log_s), nll=nll, shape0=float(shape0))


def kolmogorov_sf(lam, tol=1e-10):
    """Asymptotic Kolmogorov survival function ``P(K > lam)``.

    Uses ``2 * sum_j (-1)**(j-1) exp(-2 j^2 lam^2)`` for ``lam >= 1`` and the
    equivalent theta-function form ``1 - sqrt(2 pi)/lam * sum_j
    exp(-(2j-1)^2 pi^2 / (8 lam^2))`` below, which converges fast there.
    Terms are summed until they drop under ``tol``.
    """
    if lam <= 0:
        return 1.0
    total, j = 0.0, 1
    if lam >= 1.0:
        while True:
            term = math.exp(-2.0 * j * j * lam * lam)
            total += term if j % 2 else -term
            if term < tol:
                break
            j += 1
        p = 2.0 * total
    else:
        while True:
            term = math.exp(-((2 * j - 1) ** 2) * math.pi ** 2 / (8.0 * lam * lam))
            total += term
            if term < tol:
                break
            j += 1
        p = 1.0 - math.sqrt(2.0 * math.pi) / lam * total
    return min(1.0, max(0.0, p))


def ks_test(samples, fit):
    """Kolmogorov-Smirnov distance to the fitted CDF and its asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    m = len(x)
    if m < 1:
        raise InvalidInput("need at least one sample")
    f = fit.cdf(x)
    i = np.arange(1, m + 1)
    d = float(max(np.max(i / m - f), np.max(f - (i - 1) / m)))
    return d, kolmogorov_sf(math.sqrt(m) * d)


def _estimate_of(fit, report):
    return fit.location if report == "location" else fit.scale


def select_candidate(rows, alpha):
    """Mark each row's ``(M, N)`` cell eligible or not; return the winning row or None.

    A cell is eligible when its p-values include one above ``alpha`` and one
    below. The eligible row with the largest p-value wins; the first such
    row wins ties.
    """
    cells = {}
    for r in rows:
        cells.setdefault((r["M"], r["N"]), []).append(r["p_value"])
    for r in rows:
        ps = cells[(r["M"], r["N"])]
        r["eligible"] = any(p > alpha for p in ps) and any(p < alpha for p in ps)
    pool = [r for r in rows if r["eligible"]]
    return max(pool, key=lambda r: r["p_value"]) if pool else None


def estimate_lipschitz(log, M_list, N_list, shape0_list, alpha=0.55, seed=0, report="location"):
    """Grid search over ``(M, N, shape0)`` with the p-value straddle rule.

    For every ``(M, N)`` cell and every initial shape, ``M`` fresh batch
    maxima are drawn, fitted and K-S tested. A cell is eligible when its
    p-values include one above and one below ``alpha``; the eligible fit with
    the largest p-value wins. ``report`` selects the fitted location (the
    distribution's upper endpoint) or the fitted scale as the estimate.
    Raises :class:`NoEligibleCell` carrying every candidate when no cell
    qualifies.
    """
    if not (M_list and N_list and shape0_list):
        raise InvalidInput("grid lists must be non-empty")
    if not 0 < alpha < 1:
        raise InvalidInput("alpha must lie in (0, 1)")
    if report not in REPORT_MODES:
        raise InvalidInput(f"report must be one of {REPORT_MODES}")
    thetas, grads = log.thetas, log.grads
    for N in N_list:
        _check_n(N, len(log))
    if any(M < 2 for M in M_list):
        raise InvalidInput("M must be >= 2")

    rows = []
    for M in sorted(M_list):
        for N in sorted(N_list):
            cell = []
            for si, shape0 in enumerate(shape0_list):
                rng = make_rng(seed, "evt", M, N, si)
                maxima = np.array([_max_slope(thetas, grads, N, rng) for _ in range(M)])
                try:
                    fit = fit_reverse_weibull(maxima, shape0)
                except DegenerateSamples:
                    # all maxima equal: the constant is that common value
                    top = float(maxima.max())
                    fit = WeibullFit(shape=math.inf, location=top, scale=0.0, nll=math.nan,
                                     shape0=float(shape0))
                    fit.ks_statistic, fit.p_value = 0.0, 1.0
                else:
                    fit.ks_statistic, fit.p_value = ks_test(maxima, fit)
                cell.append({"M": M, "N": N, "shape0": float(shape0), "shape": fit.shape,
                             "location": fit.location, "scale": fit.scale, "nll": fit.nll,
                             "D": fit.ks_statistic, "p_value": fit.p_value,
                             "estimate": _estimate_of(fit, report), "_fit": fit})
            rows.extend(cell)

    best = select_candidate(rows, alpha)
    table = [{k: v for k, v in r.items() if k != "_fit"} for r in rows]
    if best is None:
        raise NoEligibleCell(f"no (M, N) cell straddles alpha={alpha}", table)
    return LipschitzEstimate(L_est=float(best["estimate"]), winning_fit=best["_fit"], M=best["M"],
                             N=best["N"], shape0=best["shape0"], report=report, candidates=table)
