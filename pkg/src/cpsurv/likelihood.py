"""Modified nonparametric log-likelihood, scores and information.

The baseline cumulative hazard ``A`` is a step function with jumps on a
finite support (the event grid during estimation).  The density of ``A`` at
an event time ``V`` is replaced by ``n * dA(V)``.

Parameter ordering for the Euclidean part is ``gamma = (alpha, eta, beta)``.
Directions for ``A`` are multiplicative perturbations of individual jumps,
``dA_k -> dA_k (1 + t h_k)``; in these coordinates the negative Hessian of the
log-likelihood coincides with the empirical information operator.

Two numerically equivalent back ends are used: one for time-constant
covariates (risk-set sums by cumulative sums over the sorted times, O(n)) and
one for general left-continuous paths (dense subject-by-time arrays).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Subject
from .families import TransformFamily


class NumericError(ArithmeticError):
    """Raised when a quantity that must be positive is not."""


@dataclass(frozen=True, eq=False)
class CumHazard:
    """Nondecreasing step function ``A(t) = sum of jumps at times <= t``."""

    times: np.ndarray
    jumps: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        if times.shape != jumps.shape:
            raise ValueError("times and jumps must have the same length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly ascending")
        if np.any(jumps < 0) or not np.all(np.isfinite(jumps)):
            raise ValueError("jumps must be finite and nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", jumps)

    def __call__(self, t):
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return cum[np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")]

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, CumHazard):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.jumps, other.jumps)


@dataclass(frozen=True, eq=False)
class RegularParams:
    """Regular parameters ``psi = (alpha, eta, beta, A)``."""

    alpha: float
    eta: np.ndarray
    beta: np.ndarray
    A: CumHazard

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.eta, self.beta])

    @classmethod
    def from_gamma(cls, gamma, q: int, A: CumHazard) -> "RegularParams":
        gamma = np.asarray(gamma, dtype=float)
        return cls(gamma[0], gamma[1:1 + q], gamma[1 + q:], A)

    def replace(self, **kw) -> "RegularParams":
        vals = dict(alpha=self.alpha, eta=self.eta, beta=self.beta, A=self.A)
        vals.update(kw)
        return RegularParams(**vals)


@dataclass(frozen=True, eq=False)
class Theta:
    psi: RegularParams
    zeta: float


# ---------------------------------------------------------------------------
# single-subject helpers
# ---------------------------------------------------------------------------

def r_xi(theta: Theta, subj: Subject, t) -> float:
    """Linear predictor ``beta'Z(t) + (alpha + eta'Z2(t)) 1{Y > zeta}``."""
    psi = theta.psi
    z = subj.z.value(t)
    q = psi.eta.size
    r = z @ psi.beta
    if subj.y > theta.zeta:
        r = r + psi.alpha + z[..., -q:] @ psi.eta
    return r


def h_theta(theta: Theta, subj: Subject, t: float) -> float:
    """Integrated hazard of one subject up to ``min(t, V)``."""
    A = theta.psi.A
    keep = A.times <= min(t, subj.v)
    if not np.any(keep):
        return 0.0
    s = A.times[keep]
    return float(np.sum(np.exp(r_xi(theta, subj, s)) * A.jumps[keep]))


# ---------------------------------------------------------------------------
# evaluation frames
# ---------------------------------------------------------------------------

def _revcum_after(bucket: np.ndarray) -> np.ndarray:
    """``out[k] = sum(bucket[k+1:])`` for a bucket vector of length K+1."""
    rc = np.cumsum(bucket[::-1], axis=0)[::-1]
    return rc[1:]


class _State:
    """Per-subject quantities at one parameter value."""

    __slots__ = ("frame", "fam", "gamma", "jumps", "w", "X", "XV", "r", "rV", "er", "Ea",
                 "H", "G", "dG", "ddG", "dddG", "_xi0", "_xi1", "_R")

    def __init__(self, frame, fam, gamma, jumps, w, X, XV, r, rV, er, Ea, H):
        self.frame, self.fam, self.gamma, self.jumps, self.w = frame, fam, gamma, jumps, w
        self.X, self.XV, self.r, self.rV, self.er, self.Ea, self.H = X, XV, r, rV, er, Ea, H
        self.G, self.dG, self.ddG, self.dddG = fam.g_derivs(H)
        self._xi0 = self._xi1 = self._R = None

    @property
    def xi0(self):
        if self._xi0 is None:
            delta = self.frame.delta
            xi0 = self.dG - delta * self.ddG / self.dG
            if np.any(xi0 <= 0):
                raise NumericError("nonpositive Xi0 weight encountered")
            self._xi0 = xi0
        return self._xi0

    @property
    def xi1(self):
        if self._xi1 is None:
            delta = self.frame.delta
            ratio = self.ddG / self.dG
            self._xi1 = self.ddG - delta * (self.dddG / self.dG - ratio * ratio)
        return self._xi1

    def subject_loglik(self) -> np.ndarray:
        """``l^psi`` per subject (without the ``log(n dA(V))`` term)."""
        delta = self.frame.delta
        with np.errstate(divide="ignore"):
            lg = np.log(self.dG)
        if np.any(self.dG <= 0):
            raise NumericError("nonpositive derivative of G")
        return delta * (lg + self.rV) - self.G

    def loglik(self) -> float:
        fr = self.frame
        if fr.unmatched_events:
            return -np.inf
        live = self.w[fr.ev_subj] > 0
        ev_jumps = self.jumps[fr.ev_idx[live]]
        if np.any(ev_jumps <= 0):
            return -np.inf
        total = np.sum(self.w * self.subject_loglik())
        total += np.sum(self.w[fr.ev_subj[live]] * np.log(fr.n * ev_jumps))
        return float(total / fr.n)

    def R(self):
        """``R_i(x)``: integral of the design against ``Y(s) e^r dA``, shape (n, m)."""
        if self._R is None:
            self._R = self.frame.R(self)
        return self._R

    def subject_score(self) -> np.ndarray:
        """Per-subject Euclidean score contributions, shape (n, m)."""
        return self.frame.delta[:, None] * self.XV - self.xi0[:, None] * self.R()

    def score_gamma(self) -> np.ndarray:
        return self.w @ self.subject_score() / self.frame.n

    def info_gamma(self) -> np.ndarray:
        return self.frame.info_gamma(self)

    def denominator(self) -> np.ndarray:
        """``P_n W(t_k)`` on the support of ``A``."""
        return self.frame.denominator(self)

    def event_mass(self) -> np.ndarray:
        fr = self.frame
        return np.bincount(fr.ev_idx, weights=self.w[fr.ev_subj], minlength=fr.K) / fr.n

    def score_s(self) -> np.ndarray:
        """Score in the log-jump coordinates of ``A``."""
        return self.event_mass() - self.denominator() * self.jumps

    def info_gamma_s(self) -> np.ndarray:
        return self.frame.info_gamma_s(self)

    def info_s(self):
        """Return ``(diag, dense)`` with information ``diag(diag) + dense``; dense may be None."""
        return self.frame.info_s(self)


class _Frame:
    def __init__(self, ds: Dataset, times: np.ndarray):
        self.n = ds.n
        self.p, self.q, self.d = ds.p, ds.q, ds.d
        self.m = 1 + ds.q + ds.d
        self.times = times
        self.K = times.size
        self.delta = ds.delta.astype(float)
        self.y = ds.y
        v = ds.v
        pos = np.searchsorted(times, v, side="left")
        hit = (pos < self.K) & (times[np.minimum(pos, self.K - 1)] == v) if self.K else np.zeros(self.n, bool)
        ev = ds.delta == 1
        self.unmatched_events = bool(np.any(ev & ~hit))
        self.ev_subj = np.flatnonzero(ev & hit)
        self.ev_idx = pos[self.ev_subj]
        self.kv = np.searchsorted(times, v, side="right")

    def weights(self, w):
        if w is None:
            return np.ones(self.n)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n,):
            raise ValueError("weights must have one entry per subject")
        return w

    def group(self, zeta: float) -> np.ndarray:
        return (self.y > zeta).astype(float)


class _ConstFrame(_Frame):
    """Time-constant covariates: everything reduces to per-subject scalars."""

    def __init__(self, ds, times):
        super().__init__(ds, times)
        self.Z = ds.z0

    def design(self, g):
        return np.column_stack([g, g[:, None] * self.Z[:, self.d - self.q:], self.Z])

    def state(self, fam, gamma, g, jumps, w) -> _State:
        X = self.design(g)
        r = X @ gamma
        er = np.exp(r)
        cum = np.concatenate([[0.0], np.cumsum(jumps)])
        H = er * cum[self.kv]
        return _State(self, fam, gamma, jumps, w, X, X, r, r, er, None, H)

    def R(self, st):
        return st.H[:, None] * st.X

    def info_gamma(self, st):
        c = st.w * (st.xi0 * st.H + st.xi1 * st.H ** 2) / self.n
        return (st.X * c[:, None]).T @ st.X

    def _risk_sum(self, c):
        """``out[k] = sum_i c_i 1{V_i >= t_k}`` (c may be 2-d)."""
        if c.ndim == 1:
            bucket = np.bincount(self.kv, weights=c, minlength=self.K + 1)
        else:
            bucket = np.zeros((self.K + 1, c.shape[1]))
            np.add.at(bucket, self.kv, c)
        return _revcum_after(bucket)

    def denominator(self, st):
        return self._risk_sum(st.w * st.xi0 * st.er / self.n)

    def info_gamma_s(self, st):
        c = (st.w * st.er * (st.xi1 * st.H + st.xi0) / self.n)[:, None] * st.X
        return (self._risk_sum(c) * st.jumps[:, None]).T

    def info_s(self, st):
        diag = self.denominator(st) * st.jumps
        if st.fam.is_cox:
            return diag, None
        f = self._risk_sum(st.w * st.xi1 * st.er ** 2 / self.n)
        k = np.arange(self.K)
        dense = f[np.maximum.outer(k, k)] * np.outer(st.jumps, st.jumps)
        return diag, dense


class _PathFrame(_Frame):
    """Time-varying covariates evaluated on the support of ``A``."""

    def __init__(self, ds, times):
        super().__init__(ds, times)
        self.Zg = ds.z_at(times) if self.K else np.zeros((self.n, 0, self.d))
        self.ZV = ds.z_at_v()
        self.atrisk = (ds.v[:, None] >= times[None, :]).astype(float)

    def design(self, g):
        q, d = self.q, self.d
        X = np.concatenate([np.broadcast_to(g[:, None, None], (self.n, self.K, 1)),
                            g[:, None, None] * self.Zg[:, :, d - q:], self.Zg], axis=2)
        XV = np.column_stack([g, g[:, None] * self.ZV[:, d - q:], self.ZV])
        return X, XV

    def state(self, fam, gamma, g, jumps, w) -> _State:
        X, XV = self.design(g)
        r = X @ gamma
        er = self.atrisk * np.exp(r)
        Ea = er * jumps[None, :]
        H = Ea.sum(axis=1)
        return _State(self, fam, gamma, jumps, w, X, XV, r, XV @ gamma, er, Ea, H)

    def R(self, st):
        return np.einsum("ik,ika->ia", st.Ea, st.X)

    def info_gamma(self, st):
        R = st.R()
        a = (st.w * st.xi0 / self.n)[:, None] * st.Ea
        b = st.w * st.xi1 / self.n
        return np.einsum("ik,ika,ikb->ab", a, st.X, st.X) + (R * b[:, None]).T @ R

    def denominator(self, st):
        return (st.w * st.xi0 / self.n) @ st.er

    def info_gamma_s(self, st):
        R = st.R()
        c1 = (st.w * st.xi1 / self.n)[:, None] * R
        c0 = (st.w * st.xi0 / self.n)[:, None] * st.Ea
        return c1.T @ st.Ea + np.einsum("ik,ika->ak", c0, st.X)

    def info_s(self, st):
        diag = self.denominator(st) * st.jumps
        if st.fam.is_cox:
            return diag, None
        dense = st.Ea.T @ (st.Ea * (st.w * st.xi1 / self.n)[:, None])
        return diag, dense


_FRAME_CACHE_SIZE = 8


def frame_for(ds: Dataset, times, *, dense: bool = False) -> _Frame:
    """Evaluation frame for ``ds`` with ``A`` supported on ``times`` (cached)."""
    times = np.asarray(times, dtype=float)
    key = (times.tobytes(), dense)
    cache = ds._cache.setdefault("frames", {})
    fr = cache.get(key)
    if fr is None:
        cls = _ConstFrame if ds.time_constant and not dense else _PathFrame
        fr = cls(ds, times)
        if len(cache) >= _FRAME_CACHE_SIZE:
            cache.pop(next(iter(cache)))
        cache[key] = fr
    return fr


def evaluate(psi: RegularParams, zeta: float, ds: Dataset, fam: TransformFamily,
             weights=None, *, dense: bool = False) -> _State:
    """Evaluate all per-subject quantities at ``(psi, zeta)``.

    ``zeta = inf`` places every subject below the threshold (the null model).
    """
    fr = frame_for(ds, psi.A.times, dense=dense)
    return fr.state(fam, psi.gamma, fr.group(zeta), psi.A.jumps, fr.weights(weights))


# ---------------------------------------------------------------------------
# public evaluators
# ---------------------------------------------------------------------------

def loglik(psi, zeta, ds, fam, weights=None) -> float:
    """Modified log-likelihood; ``-inf`` if an event time carries no jump."""
    return evaluate(psi, zeta, ds, fam, weights).loglik()


def score_euclidean(psi, zeta, ds, fam, weights=None) -> np.ndarray:
    """Score for ``(alpha, eta, beta)``."""
    return evaluate(psi, zeta, ds, fam, weights).score_gamma()


def score_A_direction(psi, zeta, ds, fam, t, weights=None) -> float:
    """Score of ``A`` along ``h(u) = 1{u <= t}``."""
    st = evaluate(psi, zeta, ds, fam, weights)
    keep = psi.A.times <= t
    return float(np.sum(st.score_s()[keep]))


def info_euclidean(psi, zeta, ds, fam, weights=None) -> np.ndarray:
    """Empirical information (negative Hessian) for ``(alpha, eta, beta)``."""
    return evaluate(psi, zeta, ds, fam, weights).info_gamma()


def info_full(psi, zeta, ds, fam, weights=None) -> np.ndarray:
    """Information for ``(gamma, log-jumps of A)`` as one dense matrix."""
    st = evaluate(psi, zeta, ds, fam, weights)
    return _assemble(st)


def _assemble(st: _State) -> np.ndarray:
    igg = st.info_gamma()
    igs = st.info_gamma_s()
    diag, dense = st.info_s()
    iss = np.diag(diag) if dense is None else dense + np.diag(diag)
    return np.block([[igg, igs], [igs.T, iss]])


def subject_logliks(psi: RegularParams, ds: Dataset, fam: TransformFamily):
    """Per-subject ``(l_1, l_2)``: log-likelihood below and above the threshold."""
    fr = frame_for(ds, psi.A.times)
    w = fr.weights(None)
    l1 = fr.state(fam, psi.gamma, np.zeros(fr.n), psi.A.jumps, w).subject_loglik()
    l2 = fr.state(fam, psi.gamma, np.ones(fr.n), psi.A.jumps, w).subject_loglik()
    return l1, l2
