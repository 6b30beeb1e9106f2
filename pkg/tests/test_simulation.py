import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmd_eqd.core import RngSeed, TestConfig
from mmd_eqd.simulation import (RejectionRow, RejectionTable, ScenarioSpec, derive_seed,
                                draw_scenario1, draw_scenario2, draw_scenario3, run_experiment,
                                run_replication, scenario1_mean, scenario1_noise, scenario2_mean)


def test_scenario1_means_by_hand():
    w = np.array([[1.0, 2.0, 3.0, -1.0, 0.0]])
    base = 0.2 * (1.0 + 2.0 - 2.0 * 3.0 * -1.0)
    assert scenario1_mean("a", [1], w)[0] == pytest.approx(base)
    assert scenario1_mean("b", [1], w)[0] == pytest.approx(base + 0.4 * 3.0)
    assert scenario1_mean("b", [0], w)[0] == pytest.approx(base - 0.4)
    assert scenario1_mean("c", [1], w)[0] == pytest.approx(base + 2.4)
    assert scenario1_mean("c", [0], w)[0] == pytest.approx(base)


def test_scenario2_mean_by_hand():
    w = np.array([[1.0, 2.0]])
    assert scenario2_mean(0.5, [1], w)[0] == pytest.approx(1 + 0.5 * 5 + 3)
    assert scenario2_mean(0.5, [0], w)[0] == pytest.approx(4.0)


@given(st.integers(0, 1), st.floats(-3, 3), st.floats(-3, 3))
def test_scenario1_noise_is_centred(a, w0, w1):
    w = np.array([[w0, w1, 0, 0, 0]])
    draws = scenario1_noise([a], w, np.random.default_rng(0), size=20000)
    assert abs(draws.mean()) < 0.02
    alpha = 3 / (1 + math.exp(-a * w1))
    beta = 2 / (1 + math.exp(-(1 - a) * w0))
    assert draws.min() >= -alpha / (alpha + beta) - 1e-12
    assert draws.max() <= beta / (alpha + beta) + 1e-12


def test_draws_are_reproducible_and_shaped():
    a = draw_scenario1("c", 50, RngSeed(1))
    b = draw_scenario1("c", 50, RngSeed(1))
    np.testing.assert_array_equal(a.y, b.y)
    assert a.w.shape == (50, 5) and a.y.shape == (50, 1)
    d2 = draw_scenario2(0.2, 40, RngSeed(2))
    assert set(np.unique(d2.w[:, 0])) <= {0.0, 1.0}
    d3 = draw_scenario3(5, 30, RngSeed(3))
    assert d3.y.shape == (30, 20)
    with pytest.raises(ValueError):
        draw_scenario3(21, 30, RngSeed(3))


def test_scenario3_null_coordinates_share_the_1a_mean():
    # with zero signal every coordinate's mean is m(W)/20 regardless of A
    d = draw_scenario3(0, 20000, RngSeed(4))
    m = scenario1_mean("a", d.a, d.w) / 20
    resid = d.y - m[:, None]
    assert np.max(np.abs(resid.mean(axis=0))) < 0.01


def test_scenario2_warns_for_large_beta():
    with pytest.warns(UserWarning):
        draw_scenario2(0.9, 10, RngSeed(0))


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_derive_seed_is_deterministic(seed, rep):
    base = RngSeed(seed)
    assert derive_seed(base, rep, 0) == derive_seed(base, rep, 0)
    assert derive_seed(base, rep, 0) != derive_seed(base, rep, 1)


def test_spec_defaults():
    assert ScenarioSpec("2").resolved_bandwidth() == 0.2
    assert ScenarioSpec("1a").resolved_bandwidth() == 1.0
    assert ScenarioSpec("1a").resolved_calibration().value == "degenerate-s"
    assert ScenarioSpec("1a", test="ex2").resolved_calibration().value == "gram-eigen"
    assert ScenarioSpec("3").resolved_calibration().value == "gram-eigen"
    with pytest.raises(ValueError):
        ScenarioSpec("4")
    with pytest.raises(ValueError):
        ScenarioSpec("1a", replications=0)


def test_rejection_row_standard_error():
    row = RejectionRow.from_decisions("1a", 100, "m", 0.05, [True] * 3 + [False] * 7)
    assert row.rate == 0.3
    assert row.mc_se == pytest.approx(math.sqrt(0.3 * 0.7 / 10))


def test_table_formats(tmp_path):
    t = RejectionTable()
    t.append(RejectionRow("1a", 250, "degenerate-s", 0.05, 0.06, 0.0106, 500))
    csv_text = t.to_csv(tmp_path / "t.csv")
    assert csv_text.splitlines()[0] == "scenario,n,method,alpha,rate,mc_se,reps"
    assert csv_text.splitlines()[1] == "1a,250,degenerate-s,0.05,0.060000,0.010600,500"
    assert "\t" in t.to_tsv()
    assert json.loads(t.to_json())[0]["reps"] == 500


def test_replication_record():
    spec = ScenarioSpec("1c", n=80, replications=2, seed=RngSeed(5))
    rec = run_replication(spec, TestConfig(mc_draws=500), 0)
    assert set(rec) >= {"rep", "reject", "n_psi_n", "cutoff"}
    assert rec == run_replication(spec, TestConfig(mc_draws=500), 0)


def test_experiment_is_reproducible_across_workers(tmp_path):
    spec = ScenarioSpec("1a", n=60, test="ex2", replications=6, seed=RngSeed(11))
    cfg = TestConfig(mc_draws=500)
    one = run_experiment(spec, cfg, workers=1, trace_path=tmp_path / "a.jsonl")
    two = run_experiment(spec, cfg, workers=2, trace_path=tmp_path / "b.jsonl")
    assert one == two
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert one.reps == 6 and one.failed == 0


def test_failed_replications_are_counted(monkeypatch):
    import mmd_eqd.simulation as sim

    def boom(spec, config, rep):
        if rep == 1:
            raise FloatingPointError("synthetic")
        return {"rep": rep, "reject": False}

    monkeypatch.setattr(sim, "run_replication", boom)
    row = sim.run_experiment(ScenarioSpec("1a", n=20, replications=3), TestConfig())
    assert row.failed == 1 and row.reps == 2
