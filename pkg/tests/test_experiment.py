import copy
import json

import numpy as np
import pytest

from resilient_consensus.experiment import (
    ConfigError,
    Scenario,
    bundled_scenarios,
    execute,
    load_config,
    mean_state_trace,
    run_scenario,
    steady_state_error,
    sweep_beta,
)
from resilient_consensus.simulator import TrajectoryLog
from conftest import X0


def short(name="paper_beta1", horizon=1.0, **design):
    cfg, base = load_config(name)
    cfg = copy.deepcopy(cfg)
    cfg["sim"]["horizon"] = horizon
    cfg["design"].update(design)
    return cfg


def fake_log(xrows):
    xrows = np.asarray(xrows, dtype=float)
    n = xrows.shape[1]
    data = np.zeros((len(xrows), 5 * n + 7))
    data[:, 0] = np.arange(len(xrows)) * 0.1
    data[:, 1:1 + n] = xrows
    return TrajectoryLog(n, 1, data)


def test_mean_state_examples():
    t, avg = mean_state_trace(fake_log(np.full((4, 5), 3.0)))
    np.testing.assert_array_equal(avg, 3.0)
    np.testing.assert_array_equal(t, np.arange(4) * 0.1)
    _, avg = mean_state_trace(fake_log([[1, 2, 3, 4, 5]]))
    assert avg[0] == 3
    with pytest.raises(ValueError):
        mean_state_trace(TrajectoryLog(5, 1, np.zeros((0, 32))))


def test_baseline_mean_endpoint(bundled_runs):
    tr = bundled_runs["paper_baseline"]["result"].trajectory
    _, avg = mean_state_trace(tr)
    assert abs(avg[-1] + 5.0) <= 0.01


def test_steady_state_window():
    rows = np.concatenate([np.zeros((90, 2)), np.ones((11, 2))])
    log = fake_log(rows)
    # horizon 10 s: final window t >= 9 holds the constant-one tail
    assert steady_state_error(log, 0.0, 10.0) == pytest.approx(1.0)


def test_bundled_list():
    names = bundled_scenarios()
    for n in ("paper_baseline", "paper_beta1", "paper_beta2_5", "paper_beta5", "no_attack_dynamic",
              "no_attack_single", "paper_single", "paper_sweep", "outside_start_beta1"):
        assert n in names


def test_every_bundled_scenario_resolves():
    for name in bundled_scenarios():
        scen = Scenario.load(name)
        design, params = scen.resolve()
        assert (params is None) == (design.beta == 0)


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        Scenario.load("no_such_scenario")


def test_missing_d_bar_is_reported():
    cfg = short()
    cfg["attack"].pop("d_bar")
    with pytest.raises(ConfigError, match="d_bar"):
        Scenario.from_dict(cfg).resolve()


def test_missing_kappa_in_single_mode():
    cfg = short()
    cfg["trigger"]["mode"] = "single_state_based"
    with pytest.raises(ConfigError, match="kappa"):
        Scenario.from_dict(cfg).resolve()


def test_failed_inequality_names_slack():
    cfg = short(epsilon=10.0)
    with pytest.raises(ConfigError, match=r"epsilon > \|\|Px\|\|\^2 D_bar\^2 / c3 \(slack -"):
        Scenario.from_dict(cfg).resolve()


def test_conflicting_d_bar():
    cfg = short(d_bar=1.0)
    with pytest.raises(ConfigError, match="conflicting"):
        Scenario.from_dict(cfg).resolve()


def test_bad_graph_is_config_error():
    cfg = short()
    cfg["graph"]["edges"] = [[1, 2], [3, 4]]
    with pytest.raises(ConfigError, match="disconnected"):
        Scenario.from_dict(cfg)


def test_pinned_constants_respected():
    cfg = short(c1=0.01, c2=0.02, c3=0.07)
    _, p = Scenario.from_dict(cfg).resolve()
    assert (p.c1, p.c2, p.c3) == (0.01, 0.02, 0.07)


def test_auxiliary_topology_changes_h():
    cfg = short()
    cfg["graph"]["auxiliary"] = {"edges": [[1, 2], [2, 3], [3, 4], [4, 5], [5, 1]], "leader_links": [0, 0, 1, 0, 0]}
    d, _ = Scenario.from_dict(cfg).resolve()
    assert not np.array_equal(d.H, d.A)
    assert d.H[2, 2] == -3.0


def test_resolved_config_fills_defaults():
    scen = Scenario.from_dict(short())
    r = scen.resolved_config()
    d, p = scen.resolve()
    assert (r["design"]["c1"], r["design"]["c2"], r["design"]["c3"]) == (p.c1, p.c2, p.c3)
    assert "kappa" not in r["design"] and r["sweep"] == []
    assert r["attack"]["d_bar"] == 1.5
    # a resolved config resolves to the same parameters
    assert Scenario.from_dict(r).resolve()[1] == p


def test_execute_writes_files(tmp_path):
    doc, _ = execute(Scenario.from_dict(short()), None, tmp_path / "out")
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["events.csv", "plot_data.csv", "summary.json", "trajectory.csv"]
    assert json.loads((tmp_path / "out" / "summary.json").read_text()) == json.loads(json.dumps(doc))
    plot = (tmp_path / "out" / "plot_data.csv").read_text().splitlines()
    assert plot[0] == "beta,t,series,agent,value"
    assert {row.split(",")[2] for row in plot[1:]} == {"x", "z", "x_avg", "x0_minus_x_avg"}


def test_run_scenario_without_sweep_has_no_sweep_section(tmp_path):
    doc = run_scenario("paper_baseline", tmp_path)
    assert "sweep" not in doc and "min_inter_event_table" not in doc
    assert (tmp_path / "paper_baseline" / "summary.json").exists()


def test_min_gaps_at_least_dt(bundled_runs):
    for entry in bundled_runs.values():
        m = entry["doc"]["metrics"]
        for gap in m["min_inter_event_time"].values():
            assert gap is None or gap >= entry["scenario"].sim.dt


def test_sweep_table_and_trends():
    scen = Scenario.from_dict(short(horizon=2.0))
    rep = sweep_beta(scen, [1.0, 2.5, 5.0])
    assert set(rep["min_inter_event_table"]) == {"physical", "auxiliary"}
    assert list(rep["min_inter_event_table"]["physical"]) == ["1", "2.5", "5"]
    assert set(rep["trend_checks"]) == {"min_gap_physical_nonincreasing", "min_gap_auxiliary_nonincreasing",
                                        "steady_error_nonincreasing"}
    assert set(rep["reference_comparison"]) == {"1", "2.5", "5"}


def test_sweep_decoupled_only():
    rep = sweep_beta(Scenario.from_dict(short(horizon=0.5)), [0.0])
    assert rep["min_inter_event_table"] == {}
    assert rep["runs"][0]["event_counts"] == {}


def test_sweep_repeat_is_deterministic():
    rep = sweep_beta(Scenario.from_dict(short(horizon=0.5)), [1.0, 1.0])
    assert rep["runs"][0] == rep["runs"][1]


def test_sweep_skips_invalid_beta(caplog):
    # pinned c1 leaves the admissible interval once beta grows
    scen = Scenario.from_dict(short(horizon=0.3, c1=0.05))
    with caplog.at_level("WARNING"):
        rep = sweep_beta(scen, [1.0, 5.0])
    assert rep["betas"] == [1.0]
    assert rep["skipped"][0]["beta"] == 5.0
    assert "skipping beta=5" in caplog.text


def test_sweep_parallel_matches_serial():
    scen = Scenario.from_dict(short(horizon=0.5))
    a = sweep_beta(scen, [1.0, 2.5], workers=1)
    b = sweep_beta(scen, [1.0, 2.5], workers=2)
    assert a == b


def test_reference_comparison_factor(bundled_runs):
    comp = bundled_runs["paper_beta1"]["doc"]["metrics"]["reference_comparison"]
    assert comp["physical"]["reference"] == 0.01243
    assert comp["physical"]["factor"] == 2.0
