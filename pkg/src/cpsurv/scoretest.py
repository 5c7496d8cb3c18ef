"""Sup and integrated score tests for the existence of a change-point.

The (alpha, eta) score at the restricted fit is a step process in the
threshold.  Its covariance and null distribution are approximated by a
multiplier bootstrap in which each replicate refits the restricted model
with the same weights used for the replicate's score process.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, default_bounds
from .estimator import FitConfig, NonConvergenceError, fit_null_profile
from .families import COX, TransformFamily
from .inference import WeightScheme, draw_weights
from .likelihood import NumericError, RegularParams, evaluate, info_full
from .parallel import pmap, spawn

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE = 1e-8


@dataclass
class ScoreProcess:
    """Step process on ``grid``; ``values[j]`` holds on ``[grid[j], grid[j+1])``."""

    grid: np.ndarray
    values: np.ndarray

    def __call__(self, zeta):
        idx = np.searchsorted(self.grid, zeta, side="right") - 1
        if np.any(idx < 0):
            raise ValueError("zeta below the first grid point")
        return self.values[idx]


def score_grid(ds: Dataset, a: float, b: float) -> np.ndarray:
    """Left endpoint ``a`` together with the distinct Y values in ``(a, b]``."""
    ys = np.unique(ds.y)
    return np.concatenate([[a], ys[(ys > a) & (ys <= b)]])


def score_contributions(psi0: RegularParams, ds: Dataset, fam: TransformFamily,
                        weights=None) -> np.ndarray:
    """Per-subject (alpha, eta) score terms at the restricted fit, as if ``Y > zeta``."""
    if psi0.alpha != 0 or np.any(psi0.eta != 0):
        raise ValueError("score process needs a null-restricted psi (alpha = eta = 0)")
    st = evaluate(psi0, -np.inf, ds, fam, weights)
    return st.subject_score()[:, : 1 + ds.q]


def _process_values(u, w, y, grid):
    n = y.size
    order = np.argsort(y, kind="stable")
    wu = (u * w[:, None])[order]
    tail = np.vstack([np.cumsum(wu[::-1], axis=0)[::-1], np.zeros((1, u.shape[1]))])
    idx = np.searchsorted(y[order], grid, side="right")
    return tail[idx] / np.sqrt(n)


def score_process(psi0: RegularParams, ds: Dataset, grid, fam: TransformFamily = COX,
                  weights=None) -> ScoreProcess:
    """``S_1(zeta) = sqrt(n) P_n`` of the (alpha, eta) scores with ``Y > zeta``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    w = np.ones(ds.n) if weights is None else np.asarray(weights, dtype=float)
    u = score_contributions(psi0, ds, fam, w)
    return ScoreProcess(grid, _process_values(u, w, ds.y, grid))


def _boot_task(args):
    ds, fam, grid, scheme, seed, init, cfg = args
    w = draw_weights(ds.n, scheme, np.random.default_rng(seed))
    try:
        pf = fit_null_profile(ds, fam, cfg, weights=w, init=init)
        u = score_contributions(pf.params(ds.q), ds, fam, w)
    except (NonConvergenceError, NumericError):
        return None
    return _process_values(u, w, ds.y, grid)


def bootstrap_score_processes(ds: Dataset, fam: TransformFamily, grid, M: int,
                              scheme: WeightScheme = WeightScheme(), rng=None, *,
                              psi0: RegularParams | None = None, cfg: FitConfig | None = None,
                              n_jobs: int = 1):
    """``M`` weighted-bootstrap score processes; returns ``(values, n_failed)``.

    ``values`` has shape ``(M - n_failed, len(grid), q + 1)``.
    """
    if M < 2:
        raise ValueError("need M >= 2")
    grid = np.asarray(grid, dtype=float)
    init = None if psi0 is None else (psi0.gamma, psi0.A)
    seeds = spawn(rng, M)
    out = pmap(_boot_task, [(ds, fam, grid, scheme, s, init, cfg) for s in seeds], n_jobs)
    good = [o for o in out if o is not None]
    failed = M - len(good)
    if failed > 0.2 * M:
        raise NonConvergenceError(f"{failed} of {M} bootstrap null fits failed")
    if failed:
        log.warning("%d bootstrap replicates failed and were dropped", failed)
    return np.array(good), failed


def vhat(processes) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrap mean and covariance (divisor M) of the processes at each grid point."""
    P = np.asarray(processes, dtype=float)
    mu = P.mean(axis=0)
    C = P - mu
    V = np.einsum("mja,mjb->jab", C, C) / P.shape[0]
    return mu, V


def _inverses(V):
    """Regularized inverses per grid point; returns ``(inv, keep, worst_cond)``."""
    k = V.shape[-1]
    inv = np.zeros_like(V)
    keep = np.ones(V.shape[0], dtype=bool)
    worst = 1.0
    for j, Vj in enumerate(V):
        tr = np.trace(Vj)
        if not tr > 0:
            keep[j] = False
            continue
        cond = np.linalg.cond(Vj)
        worst = max(worst, float(cond))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            Vj = Vj + RIDGE * tr / k * np.eye(k)
        inv[j] = np.linalg.inv(Vj)
    if not np.all(keep):
        log.warning("%d grid points with zero covariance excluded", int((~keep).sum()))
    if not np.any(keep):
        raise ValueError("bootstrap covariance vanishes at every grid point")
    return inv, keep, worst


def _widths(grid, a, b):
    right = np.append(grid[1:], b)
    return np.clip(np.minimum(right, b) - np.maximum(grid, a), 0.0, None)


def _stats(S, inv, keep, widths):
    qf = np.einsum("...ja,jab,...jb->...j", S, inv, S)
    qf = np.where(keep, qf, 0.0)
    return qf.max(axis=-1), (qf * widths).sum(axis=-1), qf


def test_statistics(S: ScoreProcess, V, a: float, b: float):
    """Sup and integrated quadratic forms ``S' V^{-1} S`` over ``[a, b]``.

    Returns ``(t_sup, t_int, worst_condition_number)``.
    """
    inv, keep, worst = _inverses(np.asarray(V, dtype=float))
    t_sup, t_int, _ = _stats(S.values, inv, keep, _widths(S.grid, a, b))
    return float(t_sup), float(t_int), worst


@dataclass
class TestResult:
    t_sup: float
    t_int: float
    crit_sup: float
    crit_int: float
    p_sup: float
    p_int: float
    vhat_condition: float
    M: int
    level: float
    a: float
    b: float
    failed: int = 0
    grid: np.ndarray = field(default=None, repr=False)
    score: np.ndarray = field(default=None, repr=False)
    boot_sup: np.ndarray = field(default=None, repr=False)
    boot_int: np.ndarray = field(default=None, repr=False)
    V: np.ndarray = field(default=None, repr=False)
    mu: np.ndarray = field(default=None, repr=False)
    beta0: np.ndarray = field(default=None, repr=False)

    __test__ = False

    @property
    def reject_sup(self) -> bool:
        return self.t_sup > self.crit_sup

    @property
    def reject_int(self) -> bool:
        return self.t_int > self.crit_int

    def to_dict(self, diagnostics: bool = True) -> dict:
        out = {
            "t_sup": self.t_sup, "t_int": self.t_int,
            "crit_sup": self.crit_sup, "crit_int": self.crit_int,
            "p_sup": self.p_sup, "p_int": self.p_int,
            "reject_sup": self.reject_sup, "reject_int": self.reject_int,
            "level": self.level, "M": self.M, "failed": self.failed,
            "a": self.a, "b": self.b, "vhat_condition": self.vhat_condition,
            "beta0": None if self.beta0 is None else self.beta0.tolist(),
        }
        if diagnostics and self.grid is not None:
            k = self.score.shape[1]
            out["per_zeta"] = {
                "zeta": self.grid.tolist(),
                "score": self.score.tolist(),
                "boot_mean": self.mu.tolist(),
                "boot_sd": np.sqrt(self.V[:, range(k), range(k)]).tolist(),
            }
        return out

    def envelope_rows(self):
        """Rows ``(zeta, component, score, boot_mean, boot_sd)`` for plotting."""
        k = self.score.shape[1]
        sd = np.sqrt(self.V[:, range(k), range(k)])
        for j, z in enumerate(self.grid):
            for c in range(k):
                yield z, c, self.score[j, c], self.mu[j, c], sd[j, c]


TestResult.__test__ = False


def run_test(ds: Dataset, fam: TransformFamily = COX, a: float | None = None,
             b: float | None = None, M: int = 250, scheme: WeightScheme = WeightScheme(),
             level: float = 0.05, rng=None, *, cfg: FitConfig | None = None,
             n_jobs: int = 1) -> TestResult:
    """Score tests of ``alpha = eta = 0`` with bootstrap critical values."""
    if a is None or b is None:
        da, db = default_bounds(ds.y)
        a = da if a is None else a
        b = db if b is None else b
    if M < 50:
        log.warning("M = %d bootstrap replicates is small; 50 or more recommended", M)
    pf = fit_null_profile(ds, fam, cfg)
    psi0 = pf.params(ds.q)
    grid = score_grid(ds, a, b)
    S = score_process(psi0, ds, grid, fam)
    boot, failed = bootstrap_score_processes(ds, fam, grid, M, scheme, rng, psi0=psi0, cfg=cfg,
                                             n_jobs=n_jobs)
    # standardized weights shrink the spread by sigma_kappa / mu_kappa
    kappa = scheme.mu_kappa / scheme.sigma_kappa
    mu = boot.mean(axis=0)
    boot = mu + kappa * (boot - mu)
    mu, V = vhat(boot)
    inv, keep, worst = _inverses(V)
    widths = _widths(grid, a, b)
    t_sup, t_int, _ = _stats(S.values, inv, keep, widths)
    bs, bi, _ = _stats(boot - mu, inv, keep, widths)
    crit_sup, crit_int = np.quantile(bs, 1.0 - level), np.quantile(bi, 1.0 - level)
    Mb = boot.shape[0]
    return TestResult(
        t_sup=float(t_sup), t_int=float(t_int),
        crit_sup=float(crit_sup), crit_int=float(crit_int),
        p_sup=float((1 + np.sum(bs >= t_sup)) / (Mb + 1)),
        p_int=float((1 + np.sum(bi >= t_int)) / (Mb + 1)),
        vhat_condition=worst, M=Mb, level=level, a=float(a), b=float(b), failed=failed,
        grid=grid, score=S.values, boot_sup=bs, boot_int=bi, V=V, mu=mu, beta0=psi0.beta,
    )


def plugin_covariance(psi0: RegularParams, ds: Dataset, zeta1: float, zeta2: float,
                      fam: TransformFamily = COX) -> np.ndarray:
    """Plug-in limiting covariance of ``(S_1(zeta1), S_1(zeta2))``.

    ``sigma11(max) - sigma12(zeta1) sigma22^{-1} sigma21(zeta2)`` with the
    (beta, A) block projected on the jumps of the restricted estimate of A.
    """
    k = 1 + ds.q
    J1 = info_full(psi0, zeta1, ds, fam)
    J2 = J1 if zeta2 == zeta1 else info_full(psi0, zeta2, ds, fam)
    Jm = J1 if zeta1 >= zeta2 else J2
    s22 = J1[k:, k:]
    cond = np.linalg.cond(s22)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        s22 = s22 + RIDGE * np.trace(s22) / s22.shape[0] * np.eye(s22.shape[0])
        if np.linalg.cond(s22) > 1e15:
            raise np.linalg.LinAlgError("nuisance information is singular")
    return Jm[:k, :k] - J1[:k, k:] @ np.linalg.solve(s22, J2[k:, :k])
