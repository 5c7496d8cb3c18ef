"""Data generation from the change-point transformation model and the
power study harness."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, default_bounds
from .estimator import NonConvergenceError
from .families import COX, TransformFamily
from .inference import WeightScheme
from .likelihood import NumericError
from .parallel import pmap, spawn
from .scoretest import run_test

log = logging.getLogger(__name__)

ETAS = (0.0, -0.5, -1.0, -2.0, -3.0)

# Published reference values at n = 300, 250 replicates, M = 250:
# (family, test) -> (means, sds, powers) over ETAS.
REFERENCE_TABLE = {
    ("cox", "sup"): ((5.078, 5.590, 7.874, 13.524, 35.507),
                     (2.728, 2.859, 3.919, 6.992, 11.337),
                     (0.044, 0.076, 0.180, 0.536, 0.980)),
    ("cox", "mean"): ((1.403, 1.694, 2.560, 5.412, 5.529),
                      (1.206, 1.104, 1.597, 2.492, 2.683),
                      (0.040, 0.050, 0.120, 0.236, 0.304)),
    ("odds-rate:1", "sup"): ((3.950, 4.762, 5.693, 8.327, 13.956),
                             (2.390, 1.610, 1.255, 2.901, 4.244),
                             (0.043, 0.068, 0.112, 0.364, 0.660)),
    ("odds-rate:1", "mean"): ((1.177, 1.912, 2.848, 3.265, 4.349),
                              (0.946, 1.078, 1.360, 1.498, 1.718),
                              (0.048, 0.056, 0.116, 0.167, 0.285)),
}


@dataclass(frozen=True)
class Scenario:
    family: TransformFamily = COX
    n: int = 300
    eta0: tuple = (0.0,)
    beta0: tuple = (1.0,)
    zeta0: float = 0.0
    alpha0: float = 0.0
    censor_rate: float = 0.1
    censor_cap: float = 10.0
    inner_frac: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "eta0", tuple(float(e) for e in np.atleast_1d(self.eta0)))
        object.__setattr__(self, "beta0", tuple(float(b) for b in np.atleast_1d(self.beta0)))
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if len(self.eta0) > len(self.beta0):
            raise ValueError("eta0 cannot be longer than beta0")
        if self.censor_rate <= 0 or self.censor_cap <= 0:
            raise ValueError("censoring rate and cap must be positive")
        if not 0 < self.inner_frac < 1:
            raise ValueError("inner_frac must lie in (0, 1)")

    @property
    def q(self) -> int:
        return len(self.eta0)

    @property
    def tau(self) -> float:
        return self.censor_cap


def event_times(fam: TransformFamily, u, r) -> np.ndarray:
    """Failure times solving ``Lambda(e^r t) = u`` for the baseline ``A(t) = t``."""
    return fam.lambda_inv(u) * np.exp(-np.asarray(r, dtype=float))


def simulate_dataset(scn: Scenario, rng: np.random.Generator) -> Dataset:
    """One sample of size ``scn.n``; Z and Y are independent standard normals."""
    n, d, q = scn.n, len(scn.beta0), scn.q
    z = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    u = rng.uniform(size=n)
    c = np.minimum(rng.exponential(1.0 / scn.censor_rate, size=n), scn.censor_cap)
    r = z @ np.array(scn.beta0) + (scn.alpha0 + z[:, d - q:] @ np.array(scn.eta0)) * (y > scn.zeta0)
    t = event_times(scn.family, np.maximum(u, np.finfo(float).tiny), r)
    status = (t <= c).astype(int)
    return Dataset.from_arrays(np.where(status == 1, t, c), status, y, z, q=q, tau=scn.tau)


def _replicate(args):
    scn, seed, M, level, scheme = args
    sim_seed, test_seed = seed.spawn(2)
    ds = simulate_dataset(scn, np.random.default_rng(sim_seed))
    a, b = default_bounds(ds.y, scn.inner_frac)
    try:
        res = run_test(ds, scn.family, a, b, M=M, scheme=scheme, level=level, rng=test_seed)
    except (NonConvergenceError, NumericError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("replicate failed: %s", exc)
        return None
    return res.t_sup, res.t_int, res.reject_sup, res.reject_int


def _summarize(x, flags):
    reps = len(x)
    power = float(np.mean(flags))
    sd = float(np.std(x, ddof=1)) if reps > 1 else float("nan")
    return {
        "mean": float(np.mean(x)), "sd": sd, "power": power,
        "mean_mcse": sd / math.sqrt(reps),
        "power_mcse": math.sqrt(max(power * (1 - power), 0.25 / reps) / reps),
    }


def run_scenario(scn: Scenario, reps: int, M: int = 250, level: float = 0.05,
                 master_seed=0, *, scheme: WeightScheme = WeightScheme(), n_jobs: int = 1) -> dict:
    """Replicate ``run_test`` on simulated data and summarize each statistic.

    Returns a dict with ``sup`` and ``mean`` summaries (mean, sd, power and
    their Monte Carlo standard errors), the raw statistics and the number of
    failed replicates.
    """
    if reps < 2:
        raise ValueError("need reps >= 2")
    seeds = spawn(master_seed, reps)
    out = pmap(_replicate, [(scn, s, M, level, scheme) for s in seeds], n_jobs)
    good = [o for o in out if o is not None]
    failed = reps - len(good)
    if failed > 0.05 * reps:
        raise NonConvergenceError(f"{failed} of {reps} replicates failed")
    arr = np.array(good, dtype=float)
    return {
        "reps": len(good), "failed": failed,
        "sup": _summarize(arr[:, 0], arr[:, 2]),
        "mean": _summarize(arr[:, 1], arr[:, 3]),
        "t_sup": arr[:, 0], "t_int": arr[:, 1],
        "reject_sup": arr[:, 2].astype(bool), "reject_int": arr[:, 3].astype(bool),
    }


@dataclass
class TableConfig:
    reps: int = 250
    M: int = 250
    seed: int = 1
    n: int = 300
    level: float = 0.05
    etas: tuple = ETAS
    families: tuple = ("cox", "odds-rate:1")
    n_jobs: int = 1
    extra: dict = field(default_factory=dict)


def reproduce_table1(config: TableConfig | dict) -> list[dict]:
    """Sup and mean test summaries for every (family, eta0) cell, in long format.

    Each cell gets its own seed stream derived from ``(seed, family index,
    eta index)`` so cells can be rerun individually.
    """
    from .families import parse_family

    if isinstance(config, dict):
        config = TableConfig(**config)
    rows = []
    for fi, spec in enumerate(config.families):
        fam = parse_family(spec)
        for ei, eta in enumerate(config.etas):
            scn = Scenario(family=fam, n=config.n, eta0=(eta,))
            log.info("cell %s eta0=%g", fam.spec, eta)
            ss = np.random.SeedSequence([config.seed, fi, ei])
            res = run_scenario(scn, config.reps, config.M, config.level, ss, n_jobs=config.n_jobs)
            for test in ("sup", "mean"):
                row = {"family": fam.spec, "test": test, "eta0": eta, "n": config.n,
                       "reps": res["reps"], "failed": res["failed"], **res[test]}
                ref = REFERENCE_TABLE.get((fam.spec, test))
                if ref is not None and eta in ETAS:
                    k = ETAS.index(eta)
                    row.update(ref_mean=ref[0][k], ref_sd=ref[1][k], ref_power=ref[2][k])
                rows.append(row)
    return rows


TABLE_FIELDS = ("family", "test", "eta0", "n", "reps", "failed", "mean", "sd", "power",
                "mean_mcse", "power_mcse", "ref_mean", "ref_sd", "ref_power")


def write_table(rows, csv_path=None, json_path=None) -> None:
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, lineterminator="\n")
            wr.writeheader()
            for row in rows:
                wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")


def scenario_dict(scn: Scenario) -> dict:
    out = asdict(scn)
    out["family"] = scn.family.spec
    return out
