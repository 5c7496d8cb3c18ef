"""Profile-likelihood NPMLE and the restricted (no change-point) MLE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, default_bounds, event_grid
from .families import COX, DomainError, TransformFamily
from .likelihood import CumHazard, NumericError, RegularParams, Theta, frame_for

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """Iteration cap reached; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class FitConfig:
    tol_gamma: float = 1e-8
    tol_A: float = 1e-10
    max_newton: int = 50
    max_fixpoint: int = 200
    step_halvings: int = 30
    a: float | None = None
    b: float | None = None
    alpha_bound: float = 50.0
    eta_bound: float = 50.0
    beta_bound: float = 50.0
    warm_start: bool = True

    def __post_init__(self):
        if self.tol_gamma <= 0 or self.tol_A <= 0:
            raise ValueError("tolerances must be positive")
        if self.a is not None and self.b is not None and not self.a < self.b:
            raise ValueError("need a < b")

    def bounds(self, q: int, d: int) -> np.ndarray:
        return np.concatenate([[self.alpha_bound], np.full(q, self.eta_bound),
                               np.full(d, self.beta_bound)])


@dataclass
class ProfileFit:
    """Maximizer over ``psi`` at a fixed threshold."""

    gamma: np.ndarray
    A: CumHazard
    pl: float
    grad_norm: float
    newton_iters: int
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)
    hit_box: bool = False

    def params(self, q: int) -> RegularParams:
        return RegularParams.from_gamma(self.gamma, q, self.A)


@dataclass
class FitResult:
    theta_hat: Theta
    loglik: float
    profile_curve: np.ndarray
    gradient_norm: float
    iterations: dict
    converged: bool
    a: float
    b: float
    family: TransformFamily
    profile_gamma: np.ndarray = None

    @property
    def psi(self) -> RegularParams:
        return self.theta_hat.psi

    @property
    def zeta(self) -> float:
        return self.theta_hat.zeta


# ---------------------------------------------------------------------------
# profiling A
# ---------------------------------------------------------------------------

def _initial_jumps(fr, gamma, g, w):
    st = fr.state(COX, gamma, g, np.zeros(fr.K), w)
    D = st.denominator()
    mass = st.event_mass()
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mass > 0, mass / D, 0.0)


def _profile(fr, fam, gamma, g, jumps, w, cfg):
    """Iterate the self-consistency map for the jumps of A.

    Returns ``(jumps, state, sweeps)``; the state is evaluated at the
    returned jumps.
    """
    st = fr.state(fam, gamma, g, jumps, w)
    mass = st.event_mass()
    pos = mass > 0
    for sweep in range(1, cfg.max_fixpoint + 1):
        D = st.denominator()
        if np.any(D[pos] <= 0):
            raise NumericError("nonpositive weight in the A fixed point")
        new = np.zeros_like(jumps)
        new[pos] = mass[pos] / D[pos]
        change = np.max(np.abs(new - jumps), initial=0.0)
        jumps = new
        st = fr.state(fam, gamma, g, jumps, w)
        if fam.is_cox or change < cfg.tol_A:
            return jumps, st, sweep
    raise NonConvergenceError(f"A fixed point did not converge in {cfg.max_fixpoint} sweeps",
                              last=CumHazard(fr.times, jumps))


def profile_A(xi, ds: Dataset, A_init: CumHazard, cfg: FitConfig | None = None,
              fam: TransformFamily = COX, weights=None) -> CumHazard:
    """Maximize the likelihood over A for fixed ``xi = (alpha, eta, beta, zeta)``."""
    cfg = cfg or FitConfig()
    alpha, eta, beta, zeta = xi
    gamma = np.concatenate([[alpha], np.atleast_1d(eta), np.atleast_1d(beta)]).astype(float)
    fr = frame_for(ds, A_init.times)
    jumps, _, _ = _profile(fr, fam, gamma, fr.group(zeta), A_init.jumps.copy(), fr.weights(weights), cfg)
    return CumHazard(fr.times, jumps)


# ---------------------------------------------------------------------------
# maximizing over gamma
# ---------------------------------------------------------------------------

def _profile_information(st, free):
    """Information for the free gamma coordinates with A profiled out."""
    igg = st.info_gamma()[np.ix_(free, free)]
    igs = st.info_gamma_s()[free]
    diag, dense = st.info_s()
    # jumps carrying no event mass are pinned at zero
    act = diag > 0
    igs = igs[:, act]
    if dense is None:
        sol = igs.T / diag[act, None]
    else:
        sol = np.linalg.solve(dense[np.ix_(act, act)] + np.diag(diag[act]), igs.T)
    return igg - igs @ sol


def _active(gamma, score, free, bounds):
    """Free coordinates not pinned to the box by an outward gradient."""
    pinned = ((gamma >= bounds) & (score > 0)) | ((gamma <= -bounds) & (score < 0))
    return free & ~pinned


def _maximize(fr, fam, g, w, gamma, jumps, free, cfg) -> ProfileFit:
    bounds = cfg.bounds(fr.q, fr.d)
    free = free & (bounds > 0)
    gamma = np.where(free, gamma, 0.0) if not np.all(free) else gamma.copy()
    gamma = np.clip(gamma, -bounds, bounds)
    jumps, st, sweeps = _profile(fr, fam, gamma, g, jumps, w, cfg)
    pl = st.loglik()
    history = [pl]
    hit_box = False
    score = st.score_gamma()
    act = _active(gamma, score, free, bounds)
    grad = score[act]
    gnorm = float(np.max(np.abs(grad), initial=0.0))
    it = stalls = 0
    while gnorm >= cfg.tol_gamma:
        if it >= cfg.max_newton:
            raise NonConvergenceError(
                f"gamma maximization did not converge in {cfg.max_newton} Newton steps "
                f"(gradient {gnorm:.3g})",
                last=ProfileFit(gamma, CumHazard(fr.times, jumps), pl, gnorm, it, sweeps, False, history))
        it += 1
        info = _profile_information(st, act)
        try:
            np.linalg.cholesky(info)
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            log.warning("singular profile information; taking a gradient step")
            step = 1e-2 * grad
        t = 1.0
        accepted = False
        for _ in range(cfg.step_halvings + 1):
            cand = gamma.copy()
            cand[act] += t * step
            clipped = np.clip(cand, -bounds, bounds)
            try:
                cj, cst, cs = _profile(fr, fam, clipped, g, jumps, w, cfg)
                cpl = cst.loglik()
            except (NonConvergenceError, NumericError, DomainError, FloatingPointError):
                cpl = -np.inf
            if cpl >= pl - 1e-12 * (1.0 + abs(pl)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if np.any(clipped != cand) and not hit_box:
            hit_box = True
            log.warning("gamma left its parameter box; projecting")
        # flat ridge: steps keep being accepted without raising the likelihood
        stalls = stalls + 1 if cpl - pl <= 1e-13 * (1.0 + abs(pl)) else 0
        gamma, jumps, st, pl = clipped, cj, cst, max(cpl, pl)
        sweeps += cs
        history.append(cpl)
        score = st.score_gamma()
        act = _active(gamma, score, free, bounds)
        grad = score[act]
        gnorm = float(np.max(np.abs(grad), initial=0.0))
        if stalls >= 3 and gnorm < 1e-5:
            break
    converged = gnorm < cfg.tol_gamma
    if not converged:
        if gnorm > 1e-5:
            raise NonConvergenceError(
                f"line search failed with gradient {gnorm:.3g}",
                last=ProfileFit(gamma, CumHazard(fr.times, jumps), pl, gnorm, it, sweeps, False, history))
        log.debug("line search stalled at gradient %.3g", gnorm)
    return ProfileFit(gamma, CumHazard(fr.times, jumps), st.loglik(), gnorm, it, sweeps,
                      converged, history, hit_box)


def maximize_gamma(zeta: float, ds: Dataset, fam: TransformFamily = COX, init=None,
                   cfg: FitConfig | None = None, weights=None, free=None) -> ProfileFit:
    """Profile likelihood ``pL(zeta)`` and its maximizer.

    Parameters
    ----------
    zeta : float
        Threshold; ``inf`` gives the model without a change-point.
    init : (gamma, CumHazard), optional
        Starting values.  Defaults to ``gamma = 0`` and a Nelson-Aalen-type A.
    free : bool array, optional
        Which gamma coordinates are optimized; the others stay at 0.
    """
    cfg = cfg or FitConfig()
    grid = event_grid(ds)
    fr = frame_for(ds, grid)
    w = fr.weights(weights)
    g = fr.group(zeta)
    if free is None:
        free = np.ones(fr.m, dtype=bool)
    if init is None:
        gamma = np.zeros(fr.m)
        jumps = _initial_jumps(fr, gamma, g, w)
    else:
        gamma = np.asarray(init[0], dtype=float).copy()
        jumps = init[1].jumps.copy()
        if not np.array_equal(init[1].times, grid):
            raise ValueError("initial A must be supported on the event grid")
    return _maximize(fr, fam, g, w, gamma, jumps, np.asarray(free, dtype=bool), cfg)


def zeta_grid(ds: Dataset, a: float, b: float) -> np.ndarray:
    """Candidate thresholds: distinct Y values in [a, b] with some Y above."""
    ys = np.unique(ds.y)
    return ys[(ys >= a) & (ys <= b) & (ys < ys[-1])]


def fit_npmle(ds: Dataset, fam: TransformFamily = COX, a: float | None = None,
              b: float | None = None, cfg: FitConfig | None = None, weights=None) -> FitResult:
    """NPMLE of ``(alpha, eta, beta, A, zeta)`` by a sweep over the threshold grid."""
    cfg = cfg or FitConfig()
    if a is None:
        a = cfg.a
    if b is None:
        b = cfg.b
    if a is None or b is None:
        da, db = default_bounds(ds.y)
        a = da if a is None else a
        b = db if b is None else b
    if not a < b:
        raise ValueError("need a < b")
    grid = zeta_grid(ds, a, b)
    if grid.size == 0:
        raise ValueError(f"no Y order statistics in [{a:g}, {b:g}]")
    egrid = event_grid(ds)
    fr = frame_for(ds, egrid)
    w = fr.weights(weights)
    free = np.ones(fr.m, dtype=bool)
    cold = (np.zeros(fr.m), None)
    pls = np.full(grid.size, np.nan)
    gammas = np.full((grid.size, fr.m), np.nan)
    fits = [None] * grid.size
    newton = sweeps = failures = 0
    gamma, jumps = cold
    for j, zeta in enumerate(grid):
        g = fr.group(zeta)
        if jumps is None or not cfg.warm_start:
            gamma = np.zeros(fr.m)
            jumps = _initial_jumps(fr, gamma, g, w)
        try:
            try:
                pf = _maximize(fr, fam, g, w, gamma, jumps, free, cfg)
            except (NonConvergenceError, NumericError, DomainError):
                if not cfg.warm_start:
                    raise
                # a diverging neighbour can be a poor start; retry from scratch
                pf = _maximize(fr, fam, g, w, np.zeros(fr.m), _initial_jumps(fr, np.zeros(fr.m), g, w),
                               free, cfg)
        except (NonConvergenceError, NumericError, DomainError) as exc:
            log.warning("profile fit failed at zeta=%g: %s", zeta, exc)
            failures += 1
            gamma, jumps = cold
            continue
        pls[j] = pf.pl
        gammas[j] = pf.gamma
        fits[j] = pf
        newton += pf.newton_iters
        sweeps += pf.sweeps
        gamma, jumps = pf.gamma, pf.A.jumps
    if failures == grid.size:
        raise NonConvergenceError("profile fit failed at every grid point")
    best = int(np.nanargmax(pls))
    pf = fits[best]
    psi = pf.params(ds.q)
    return FitResult(
        theta_hat=Theta(psi, float(grid[best])),
        loglik=float(pls[best]),
        profile_curve=np.column_stack([grid, pls]),
        gradient_norm=pf.grad_norm,
        iterations={"newton": newton, "sweeps": sweeps, "grid": int(grid.size), "failed": failures},
        converged=bool(pf.converged and failures == 0),
        a=float(a), b=float(b), family=fam, profile_gamma=gammas,
    )


def null_free(ds: Dataset) -> np.ndarray:
    free = np.zeros(1 + ds.q + ds.d, dtype=bool)
    free[1 + ds.q:] = True
    return free


def fit_null_profile(ds: Dataset, fam: TransformFamily = COX, cfg: FitConfig | None = None,
                     weights=None, init=None) -> ProfileFit:
    """Restricted MLE with ``alpha = eta = 0`` (full diagnostics)."""
    return maximize_gamma(np.inf, ds, fam, init=init, cfg=cfg, weights=weights, free=null_free(ds))


def fit_null(ds: Dataset, fam: TransformFamily = COX, cfg: FitConfig | None = None,
             weights=None, init=None) -> RegularParams:
    """Restricted MLE ``(beta, A)`` under ``alpha = eta = 0``."""
    return fit_null_profile(ds, fam, cfg, weights, init).params(ds.q)


def with_config(cfg: FitConfig | None, **kw) -> FitConfig:
    return replace(cfg or FitConfig(), **kw)
