"""Bootstrap inference for the fitted change-point model.

* a parametric compound-Poisson bootstrap for the threshold, simulating the
  argmax of a two-sided jump process whose jump heights are resampled
  log-likelihood differences of observations flanking the estimate;
* a weighted (multiplier) bootstrap for the regular parameters at the
  estimated threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset
from .estimator import FitConfig, FitResult, NonConvergenceError, _maximize
from .likelihood import NumericError, frame_for, subject_logliks
from .parallel import pmap, spawn

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# multiplier weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightScheme:
    """Law of the raw multipliers.

    ``kind`` is ``"exp-truncated"`` (standard exponential conditioned on
    ``<= cap``), ``"exponential"`` or ``"constant"`` (all ones; degenerate).
    """

    kind: str = "exp-truncated"
    cap: float = 5.0

    def __post_init__(self):
        if self.kind not in ("exp-truncated", "exponential", "constant"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "exp-truncated" and not self.cap > 0:
            raise ValueError("truncation point must be positive")

    @property
    def mu_kappa(self) -> float:
        if self.kind == "exp-truncated":
            c = self.cap
            return 1.0 - c * math.exp(-c) / -math.expm1(-c)
        return 1.0

    @property
    def sigma_kappa(self) -> float:
        if self.kind == "exp-truncated":
            c = self.cap
            second = (2.0 - math.exp(-c) * (c * c + 2.0 * c + 2.0)) / -math.expm1(-c)
            return math.sqrt(second - self.mu_kappa ** 2)
        if self.kind == "constant":
            return 0.0
        return 1.0

    def raw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.ones(n)
        u = rng.random(n)
        if self.kind == "exponential":
            return -np.log1p(-u)
        # inverse CDF of the exponential restricted to [0, cap]
        return -np.log1p(u * math.expm1(-self.cap))


def draw_weights(n: int, scheme: WeightScheme, rng: np.random.Generator) -> np.ndarray:
    """Standardized multipliers: i.i.d. draws divided by their mean (sum = n)."""
    if n < 2:
        raise ValueError("need n >= 2")
    if scheme.sigma_kappa <= 0:
        raise ValueError("degenerate weight scheme (zero variance)")
    k = scheme.raw(n, rng)
    return k / k.mean()


# ---------------------------------------------------------------------------
# weighted bootstrap for psi
# ---------------------------------------------------------------------------

@dataclass
class PsiBootstrap:
    names: list
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A_times: np.ndarray
    A_hat: np.ndarray
    A_se: np.ndarray
    A_lower: np.ndarray
    A_upper: np.ndarray
    level: float
    B: int
    failed: int
    scale: float
    replicates: np.ndarray

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "replicates": self.B,
            "failed": self.failed,
            "scale_mu_over_sigma": self.scale,
            "parameters": {
                name: {"estimate": float(e), "se": float(s), "lower": float(lo), "upper": float(hi)}
                for name, e, s, lo, hi in zip(self.names, self.estimate, self.se, self.lower, self.upper)
            },
            "A": {
                "times": self.A_times.tolist(),
                "estimate": self.A_hat.tolist(),
                "se": self.A_se.tolist(),
                "lower": self.A_lower.tolist(),
                "upper": self.A_upper.tolist(),
            },
        }


def gamma_names(q: int, d: int) -> list:
    return ["alpha", *[f"eta{k}" for k in range(1, q + 1)], *[f"beta{k}" for k in range(1, d + 1)]]


def _psi_replicate(ds, fit, weights, cfg):
    fr = frame_for(ds, fit.psi.A.times)
    g = fr.group(fit.zeta)
    free = np.ones(fr.m, dtype=bool)
    try:
        pf = _maximize(fr, fit.family, g, weights, fit.psi.gamma, fit.psi.A.jumps.copy(), free, cfg)
    except (NonConvergenceError, NumericError):
        return None
    return np.concatenate([pf.gamma, np.cumsum(pf.A.jumps)])


def _psi_task(args):
    ds, fit, scheme, seed, cfg = args
    w = draw_weights(ds.n, scheme, np.random.default_rng(seed))
    return _psi_replicate(ds, fit, w, cfg)


def bootstrap_psi(ds: Dataset, fit: FitResult, B: int = 250, scheme: WeightScheme = WeightScheme(),
                  rng=None, level: float = 0.95, *, weights=None, cfg: FitConfig | None = None,
                  n_jobs: int = 1) -> PsiBootstrap:
    """Weighted bootstrap of ``psi`` holding the threshold at its estimate.

    ``weights`` (shape ``(B, n)``) overrides the random multipliers.
    """
    cfg = cfg or FitConfig()
    if B < 2 and weights is None:
        raise ValueError("need B >= 2")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        reps = [_psi_replicate(ds, fit, w, cfg) for w in weights]
        scale = 1.0 if scheme.sigma_kappa <= 0 else scheme.mu_kappa / scheme.sigma_kappa
    else:
        seeds = spawn(rng, B)
        reps = pmap(_psi_task, [(ds, fit, scheme, s, cfg) for s in seeds], n_jobs)
        scale = scheme.mu_kappa / scheme.sigma_kappa
    good = [r for r in reps if r is not None]
    failed = len(reps) - len(good)
    if failed > 0.2 * len(reps):
        raise NonConvergenceError(f"{failed} of {len(reps)} bootstrap replicates failed")
    if failed:
        log.warning("%d bootstrap replicates failed and were dropped", failed)
    reps_arr = np.array(good)
    m = fit.psi.gamma.size
    est = np.concatenate([fit.psi.gamma, np.cumsum(fit.psi.A.jumps)])
    sd = reps_arr.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(est.size)
    se = scale * sd
    z = stats.norm.ppf(0.5 + level / 2.0)
    return PsiBootstrap(
        names=gamma_names(ds.q, ds.d), estimate=est[:m], se=se[:m],
        lower=est[:m] - z * se[:m], upper=est[:m] + z * se[:m],
        A_times=fit.psi.A.times, A_hat=est[m:], A_se=se[m:],
        A_lower=est[m:] - z * se[m:], A_upper=est[m:] + z * se[m:],
        level=level, B=len(good), failed=failed, scale=scale, replicates=reps_arr,
    )


# ---------------------------------------------------------------------------
# threshold confidence interval
# ---------------------------------------------------------------------------

def kde_at(ys, point: float) -> float:
    """Gaussian kernel density estimate at ``point`` with Silverman's bandwidth."""
    ys = np.asarray(ys, dtype=float).reshape(-1)
    n = ys.size
    if n == 0:
        raise ValueError("no data for density estimate")
    if n == 1:
        h = 1.0
    else:
        if np.all(ys == ys[0]):
            raise ValueError("density estimate needs at least two distinct values")
        sd = ys.std(ddof=1)
        q75, q25 = np.percentile(ys, [75, 25])
        spread = min(sd, (q75 - q25) / 1.34)
        if spread <= 0:
            spread = sd
        h = 0.9 * spread * n ** (-0.2)
    u = (point - ys) / h
    return float(np.exp(-0.5 * u * u).sum() / (n * h * math.sqrt(2.0 * math.pi)))


@dataclass
class JumpSamples:
    vplus: np.ndarray
    vminus: np.ndarray
    c1: int
    c2: int
    l_tilde: int
    m_tilde: int
    plus_index: np.ndarray
    minus_index: np.ndarray


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_jump_samples(ds: Dataset, fit: FitResult, c1: int | None = None,
                       c2: int | None = None, psi=None) -> JumpSamples:
    """Log-likelihood differences ``l_1 - l_2`` at observations flanking the threshold.

    Observations are indexed by the order of Y (1-based ``l_tilde`` is the
    rank of the estimated threshold; ties in Y are resolved by taking the
    last tied rank).  ``psi`` overrides the fitted regular parameters.
    """
    zeta = fit.zeta
    order = np.argsort(ds.y, kind="stable")
    ys = ds.y[order]
    l_tilde = int(np.searchsorted(ys, zeta, side="right"))
    above = int(np.sum(ys > zeta))
    below = int(np.sum(ys < zeta))
    m = min(above, below)
    if m < 16:
        raise InsufficientDataError(f"insufficient observations flanking zeta-hat (m = {m} < 16)")
    c1 = _round_half_up(m ** 0.25) if c1 is None else int(c1)
    c2 = _round_half_up(m ** 0.75) if c2 is None else int(c2)
    if not 1 <= c1 < c2 <= m:
        raise ValueError("need 1 <= C1 < C2 <= m")
    k = c2 - c1 + 1
    j = np.arange(1, k + 1)
    plus = l_tilde + c1 + j - 1
    minus = l_tilde - c1 - j
    if plus[-1] > ds.n or minus[-1] < 1:
        raise InsufficientDataError("flanking index range leaves the sample")
    l1, l2 = subject_logliks(psi if psi is not None else fit.psi, ds, fit.family)
    diff = (l1 - l2)[order]
    return JumpSamples(diff[plus - 1], diff[minus - 1], c1, c2, l_tilde, m, plus, minus)


def simulate_vstar(h_hat: float, fplus, fminus, bounds, rng: np.random.Generator) -> float:
    """Smallest-|v| maximizer of a simulated two-sided compound Poisson path.

    Jumps occur at rate ``h_hat`` on each side of 0 within ``bounds``; on the
    right the path adds heights drawn from ``fplus``, on the left it is the
    negative of the running sum of heights drawn from ``fminus``.
    """
    if not h_hat > 0:
        raise ValueError("h_hat must be positive")
    lo, hi = bounds
    if not lo <= 0 <= hi:
        raise ValueError("bounds must straddle 0")
    fplus = np.asarray(fplus, dtype=float)
    fminus = np.asarray(fminus, dtype=float)
    best_v, best_q = 0.0, 0.0

    # right side: Poisson count, then sorted uniform locations
    nr = rng.poisson(h_hat * hi) if hi > 0 else 0
    if nr:
        loc = np.sort(rng.uniform(0.0, hi, nr))
        path = np.cumsum(fplus[rng.integers(0, fplus.size, nr)])
        k = int(np.argmax(path))
        if path[k] > best_q:
            best_q, best_v = float(path[k]), float(loc[k])
    nl = rng.poisson(h_hat * -lo) if lo < 0 else 0
    if nl:
        loc = np.sort(rng.uniform(0.0, -lo, nl))
        path = -np.cumsum(fminus[rng.integers(0, fminus.size, nl)])
        k = int(np.argmax(path))
        if path[k] > best_q or (path[k] == best_q and best_v != 0.0 and loc[k] < abs(best_v)):
            best_q, best_v = float(path[k]), -float(loc[k])
    return best_v


@dataclass
class ChangePointCI:
    level: float
    lower: float
    upper: float
    vstar_draws: int
    zeta_hat: float = float("nan")
    h_hat: float = float("nan")
    q_lo: float = float("nan")
    q_hi: float = float("nan")
    c1: int = 0
    c2: int = 0

    def to_dict(self) -> dict:
        return {"level": self.level, "lower": self.lower, "upper": self.upper,
                "vstar_draws": self.vstar_draws, "zeta_hat": self.zeta_hat,
                "density_at_zeta": self.h_hat, "quantile_low": self.q_lo,
                "quantile_high": self.q_hi, "C1": self.c1, "C2": self.c2}


def vstar_draws(ds: Dataset, fit: FitResult, B: int, rng: np.random.Generator):
    js = build_jump_samples(ds, fit)
    h = kde_at(ds.y, fit.zeta)
    n = ds.n
    bounds = (-n * (fit.zeta - fit.a), n * (fit.b - fit.zeta))
    draws = np.array([simulate_vstar(h, js.vplus, js.vminus, bounds, rng) for _ in range(B)])
    return draws, h, js


def cp_confidence_interval(ds: Dataset, fit: FitResult, level: float = 0.95, B: int = 2000,
                           rng=None) -> ChangePointCI:
    """Confidence interval for the threshold from simulated argmax draws."""
    rng = np.random.default_rng(rng)
    draws, h, js = vstar_draws(ds, fit, B, rng)
    pi = 1.0 - level
    q_lo, q_hi = np.quantile(draws, [pi / 2.0, 1.0 - pi / 2.0])
    n = ds.n
    lower = max(fit.zeta - q_hi / n, fit.a)
    upper = min(fit.zeta - q_lo / n, fit.b)
    return ChangePointCI(level, float(lower), float(upper), B, fit.zeta, h,
                         float(q_lo), float(q_hi), js.c1, js.c2)
