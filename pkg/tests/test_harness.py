import io
import json

import numpy as np
import pytest

from cmplab import cli
from cmplab.design import DesignSchedule
from cmplab.harness import (REPORT_HEADER, SUMMARY_HEADER, ConfigError, ExperimentConfig,
                            NetworkConfig, InitialConfig, ReplicationReport, config_from_dict,
                            equilibrium_curve, load_config, read_report_csv, run_replications,
                            stream, summarize, write_outputs)
from cmplab.simulate import OutcomeParams

from .conftest import FIXTURE_EDGES, SCENARIOS


def small_cfg(**changes):
    base = ExperimentConfig(
        network=NetworkConfig(kind="edge_list", path=str(FIXTURE_EDGES)),
        schedule=DesignSchedule.rollout([0.1, 0.2, 0.4, 0.5], 5),
        replications=3,
        master_seed=7,
        initial=InitialConfig(burn_in=10),
        name="small",
    )
    return base.replace(**changes)


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    cfg = load_config(path)
    assert cfg.name == path.stem
    assert cfg.horizon >= 2


def test_config_from_dict_defaults_and_pis():
    cfg = config_from_dict({"design": {"pis": [0.2, 0.5], "stage_length": 4}, "horizon": 8})
    assert cfg.schedule.stages == ((0.0, 0), (0.2, 4), (0.5, 8))
    assert cfg.network.kind == "rgg" and cfg.replications == 100


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"replications": 0},
    {"design": {"pis": [0.2, 0.5], "stage_length": 4}, "horizon": 9},
    {"design": {"pis": [0.5, 0.2], "stage_length": 4}},
    {"design": {"pis": [0.3], "stage_length": 4}},
    {"design": {"stage_length": 4}},
    {"network": {"kind": "edge_list", "path": "/nonexistent/file.edges"}},
    {"network": {"kind": "torus"}},
    {"network": {"radius": 0.1}},
    {"estimators": ["DM", "OLS"]},
    {"initial": {"burn_in": -1}},
])
def test_config_rejects(bad):
    with pytest.raises((ConfigError, ValueError)):
        config_from_dict(bad)


def test_bernoulli_allows_non_monotone_schedule():
    cfg = config_from_dict({"design": {"kind": "bernoulli", "pis": [0.5, 0.2], "stage_length": 4}})
    assert cfg.design_kind == "bernoulli"


def test_relative_edge_list_path_resolves(tmp_path):
    (tmp_path / "g.edges").write_text("0 1\n1 2\n")
    (tmp_path / "c.yaml").write_text(
        "network: {kind: edge_list, path: g.edges}\ndesign: {pis: [0.5, 1.0], stage_length: 2}\n")
    assert load_config(tmp_path / "c.yaml").network.path == str(tmp_path / "g.edges")


def test_streams_are_isolated_by_tag_and_rep():
    a = stream(1, 0, "noise").random(4)
    assert np.array_equal(a, stream(1, 0, "noise").random(4))
    assert not np.array_equal(a, stream(1, 0, "design").random(4))
    assert not np.array_equal(a, stream(1, 1, "noise").random(4))


def test_null_effect_without_noise_is_zero():
    cfg = small_cfg(
        outcome=OutcomeParams(delta=0.0, gamma=0.0, noise_sd=0.0),
        initial=InitialConfig(mean=2.0, sd=0.0, burn_in=0),
        replications=1, estimators=("DM",))
    report = run_replications(cfg)
    dm = report.tte_hat["DM"][0]
    assert np.isnan(dm[0])  # nobody is treated at t = 0
    assert np.all(dm[1:] == 0.0)
    assert np.all(report.ground_truth == 0.0)


@pytest.fixture(scope="module")
def small_report():
    return run_replications(small_cfg())


def test_report_shape(small_report):
    assert small_report.estimators == ("DM", "HT", "PolyFit", "FO-CMP", "HO-CMP")
    assert small_report.ground_truth.shape == (3, 21)
    assert small_report.metadata["master_seed"] == 7
    assert small_report.metadata["config"]["name"] == "small"


def test_report_deterministic_and_order_free(small_report, tmp_path):
    again = run_replications(small_cfg())
    parallel = run_replications(small_cfg(), workers=2)
    paths = []
    for k, rep in enumerate((small_report, again, parallel)):
        p = tmp_path / f"r{k}.csv"
        rep.to_csv(p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]


def test_estimator_list_does_not_perturb_draws(small_report):
    only_dm = run_replications(small_cfg(estimators=("DM",)))
    assert np.array_equal(only_dm.tte_hat["DM"], small_report.tte_hat["DM"], equal_nan=True)
    assert np.array_equal(only_dm.ground_truth, small_report.ground_truth)


def test_csv_round_trip(small_report, tmp_path):
    p = tmp_path / "report.csv"
    small_report.to_csv(p)
    lines = p.read_text().splitlines()
    assert tuple(lines[0].split(",")) == REPORT_HEADER
    assert len(lines) == 1 + 3 * 5 * 21
    assert read_report_csv(p).equals(small_report)


def test_read_report_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("rep,t,estimator,tte_hat\n")
    with pytest.raises(ValueError):
        read_report_csv(p)
    p.write_text(",".join(REPORT_HEADER) + "\n0,0,DM,1,1\n0,0,DM,1,1\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_report_csv(p)
    p.write_text(",".join(REPORT_HEADER) + "\n0,0,DM,1,1\n0,1,HT,1,1\n")
    with pytest.raises(ValueError, match="missing"):
        read_report_csv(p)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_replication_failure_carries_context():
    cfg = small_cfg(outcome=OutcomeParams(beta=0.5, gamma=float("inf")))
    with pytest.raises(Exception, match="replication 0"):
        run_replications(cfg)


def _report(values):
    v = np.asarray(values, dtype=float).reshape(-1, 1)
    return ReplicationReport(("DM",), {"DM": v}, np.zeros_like(v))


def test_summarize_single_rep():
    s = summarize(_report([3.5]))
    assert s.mean["DM"][0] == s.lo95["DM"][0] == s.hi95["DM"][0] == 3.5


def test_summarize_percentile_rule():
    s = summarize(_report(np.arange(1, 101)))
    assert s.mean["DM"][0] == 50.5
    assert s.lo95["DM"][0] == pytest.approx(3.475, abs=1e-12)
    assert s.hi95["DM"][0] == pytest.approx(97.525, abs=1e-12)


def test_summarize_identical_reps():
    s = summarize(_report([2.0] * 10))
    assert s.lo95["DM"][0] == s.hi95["DM"][0] == 2.0


def test_summarize_ignores_undefined_cells():
    s = summarize(_report([1.0, np.nan, 3.0]))
    assert s.mean["DM"][0] == 2.0


def test_summary_csv(small_report):
    buf = io.StringIO()
    summarize(small_report).to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert tuple(lines[0].split(",")) == SUMMARY_HEADER
    assert len(lines) == 1 + 5 * 21


def test_write_outputs(small_report, tmp_path):
    paths = write_outputs(small_report, tmp_path / "out")
    assert all(p.exists() for p in paths.values())
    meta = json.loads(paths["metadata"].read_text())
    assert meta["master_seed"] == 7 and "wall_clock_seconds" in meta


def test_run_gaussian_ensemble_scenario():
    cfg = load_config(SCENARIOS / "ensemble_se.yaml").replace(replications=1)
    report = run_replications(cfg)
    assert np.all(np.isfinite(report.tte_hat["FO-CMP"]))


@pytest.fixture(scope="module")
def rgg_cfg():
    return load_config(SCENARIOS / "linear_t200_rgg.yaml")


@pytest.mark.slow
def test_curve_identity_is_affine(rgg_cfg):
    curve = equilibrium_curve(rgg_cfg, np.linspace(0, 1, 11))
    slope, intercept = np.polyfit(curve.pi, curve.simulated, 1)
    assert slope == pytest.approx(4.0, abs=0.15)
    assert intercept == pytest.approx(2.0, abs=0.1)
    assert np.max(np.abs(curve.simulated - (intercept + slope * curve.pi))) < 0.15
    assert curve.simulated[0] == pytest.approx(2.0, abs=0.05)


@pytest.mark.slow
def test_curve_sine_endpoints():
    cfg = load_config(SCENARIOS / "sine_t200_rgg.yaml")
    curve = equilibrium_curve(cfg, [0.0, 0.5, 1.0])
    assert curve.simulated[2] - curve.simulated[0] == pytest.approx(2.0, abs=0.05)
    assert curve.simulated[0] == pytest.approx(2.0, abs=0.05)


def test_curve_fitted_columns(rgg_cfg):
    cfg = rgg_cfg.replace(network=NetworkConfig(n=300, avg_degree=10))
    curve = equilibrium_curve(cfg, [0.0, 0.5])
    assert curve.polyfit.shape == curve.ho_cmp.shape == (2,)
    assert np.all(np.isfinite(curve.ho_cmp))
    with pytest.raises(ConfigError):
        equilibrium_curve(cfg, [1.5])


def test_cli_run_summarize_curve(tmp_path, capsys):
    cfg = str(SCENARIOS / "linear_t40_edgelist.yaml")
    out = tmp_path / "run"
    assert cli.main(["run", cfg, "-o", str(out), "--reps", "2", "--seed", "5", "--threads", "2"]) == 0
    assert "HO-CMP" in capsys.readouterr().out
    assert read_report_csv(out / "report.csv").replications == 2

    assert cli.main(["summarize", str(out / "report.csv")]) == 0
    assert capsys.readouterr().out.startswith(",".join(SUMMARY_HEADER))

    assert cli.main(["curve", cfg, "--grid", "0,0.5,1", "-o", str(tmp_path / "c.csv")]) == 0
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "pi,simulated,polyfit,ho_cmp" and len(lines) == 4


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) != 0
    assert "cmplab: error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["curve", "x.yaml", "--grid", "0:1"])


def test_parse_grid():
    assert cli.parse_grid("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli.parse_grid("0.1, 0.3") == [0.1, 0.3]
