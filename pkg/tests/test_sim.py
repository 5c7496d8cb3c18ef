import numpy as np
import pytest
from scipy import integrate, stats

from cpsurv.families import COX, PROPORTIONAL_ODDS
from cpsurv.sim import (ETAS, REFERENCE_TABLE, Scenario, TableConfig, event_times, reproduce_table1,
                        run_scenario, simulate_dataset, write_table)


def test_forced_uniform_examples():
    assert event_times(COX, np.exp(-1.0), 0.0) == pytest.approx(1.0)
    assert event_times(PROPORTIONAL_ODDS, 0.5, 0.0) == pytest.approx(1.0)
    assert event_times(COX, np.exp(-1.0), np.log(2.0)) == pytest.approx(0.5)


@pytest.mark.parametrize("fam", [COX, PROPORTIONAL_ODDS], ids=str)
def test_event_time_marginal(fam):
    u = np.random.default_rng(0).uniform(size=100_000)
    t = event_times(fam, u, 0.0)
    # T has survival function Lambda(t) when r = 0 and A(t) = t
    ks = stats.kstest(t, lambda x: 1.0 - fam.lambda_eval(np.asarray(x)))
    assert ks.statistic < 0.01


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(n=5)
    with pytest.raises(ValueError):
        Scenario(eta0=(1.0, 2.0), beta0=(1.0,))
    with pytest.raises(ValueError):
        Scenario(censor_rate=0.0)
    scn = Scenario(eta0=-3)
    assert scn.eta0 == (-3.0,) and scn.q == 1 and scn.tau == 10.0


def test_dataset_shape_and_censoring():
    ds = simulate_dataset(Scenario(n=500), np.random.default_rng(1))
    assert ds.n == 500 and ds.q == 1 and ds.d == 1 and ds.tau == 10.0
    assert np.all(ds.v <= 10.0)
    # censored at the cap means the censoring atom at tau was hit
    assert np.all(ds.delta[ds.v == 10.0] == 0)


def test_event_fraction_decreases_with_censoring():
    fr = [simulate_dataset(Scenario(n=10_000, censor_rate=r), np.random.default_rng(2)).delta.mean()
          for r in (0.05, 0.2)]
    assert fr[0] > fr[1]


def test_odds_rate_event_fraction():
    ds = simulate_dataset(Scenario(family=PROPORTIONAL_ODDS, n=100_000), np.random.default_rng(3))
    assert abs(ds.delta.mean() - 0.75) < 0.03


def cox_event_probability(beta=1.0, rate=0.1, cap=10.0):
    """P(T <= C) under the null Cox design, by quadrature over Z and C."""
    def given_z(z):
        h = np.exp(beta * z)
        inner = integrate.quad(lambda c: rate * np.exp(-rate * c) * -np.expm1(-h * c), 0, cap)[0]
        return inner + np.exp(-rate * cap) * -np.expm1(-h * cap)
    return integrate.quad(lambda z: stats.norm.pdf(z) * given_z(z), -10, 10)[0]


def test_cox_event_fraction_matches_quadrature():
    ds = simulate_dataset(Scenario(n=100_000), np.random.default_rng(4))
    p = cox_event_probability()
    assert abs(ds.delta.mean() - p) < 4 * np.sqrt(p * (1 - p) / ds.n)


def test_seeded_draws_repeat():
    a = simulate_dataset(Scenario(n=50), np.random.default_rng(9))
    b = simulate_dataset(Scenario(n=50), np.random.default_rng(9))
    assert a == b


def test_smoke_run_scenario():
    res = run_scenario(Scenario(n=60, eta0=(-1.0,)), reps=2, M=20, master_seed=4)
    assert res["reps"] + res["failed"] == 2
    for key in ("sup", "mean"):
        s = res[key]
        assert set(s) == {"mean", "sd", "power", "mean_mcse", "power_mcse"}
        assert 0 <= s["power"] <= 1 and s["power_mcse"] <= 0.5 / np.sqrt(2) + 1e-12
    with pytest.raises(ValueError):
        run_scenario(Scenario(n=60), reps=1)


def test_table_rows_and_determinism(tmp_path):
    cfg = TableConfig(reps=2, M=20, n=60, etas=(0.0, -3.0), families=("cox",), seed=5)
    rows = reproduce_table1(cfg)
    assert len(rows) == 4
    assert rows == reproduce_table1(cfg)
    assert rows[0]["ref_power"] == REFERENCE_TABLE[("cox", "sup")][2][0]
    write_table(rows, tmp_path / "t.csv", tmp_path / "t.json")
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0].startswith("family,test,eta0") and len(text) == 5


def test_reference_table_shape():
    assert len(REFERENCE_TABLE) == 4
    for means, sds, powers in REFERENCE_TABLE.values():
        assert len(means) == len(sds) == len(powers) == len(ETAS)
