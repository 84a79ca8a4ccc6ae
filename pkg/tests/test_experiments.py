import json

import numpy as np
import pytest

from lodbs.experiments import (DEFAULT_SEED, EXPERIMENTS, UNIFORM, ExperimentConfig, default_config,
                               emit_plot, load_config, log_scaled_m, make_problem, plan_runs,
                               report_csv_text, run_experiment, series_orders)
from lodbs.pdae_solver import PGLOD


def _small(tmp_path, **kw):
    cfg = ExperimentConfig(experiment="custom", epsilon=2.0**-3, H=[0.5, 0.25, 0.125], n_ref=16,
                           T_end=0.03, output_dir=str(tmp_path))
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_toml_round_trip():
    for name in EXPERIMENTS[:-1]:
        for full in (False, True):
            cfg = default_config(name, full)
            assert ExperimentConfig.from_toml(cfg.to_toml()) == cfg


def test_json_and_toml_loading(tmp_path):
    cfg = default_config("exp2-mixed")
    (tmp_path / "a.json").write_text(json.dumps(cfg.to_dict()))
    (tmp_path / "a.toml").write_text(cfg.to_toml())
    assert load_config(tmp_path / "a.json") == cfg == load_config(tmp_path / "a.toml")


def test_unknown_keys_and_values_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"variants": ["spectral"]})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"H": [0.3]})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"H": [2.0**-10], "n_ref": 512})


def test_defaults():
    cfg = default_config("exp1-smooth")
    assert cfg.seed == DEFAULT_SEED and cfg.tau == 0.01 and cfg.T_end == 0.1 and cfg.kappa == 0.1
    assert default_config("exp1-smooth", True).H[-1] == 2.0**-8
    assert default_config("exp3-boundary-refine").H == [0.125]


def test_log_scaled_m():
    assert [log_scaled_m(2.0**-k) for k in range(2, 8)] == [2, 3, 4, 5, 6, 7]
    assert log_scaled_m(0.25, -1) == 1 and log_scaled_m(1.0, -3) == 0


def test_plan_runs():
    cfg = default_config("exp2-mixed")
    runs = plan_runs(cfg)
    labels = sorted({r.series for r in runs})
    assert labels == ["pglod-m1", "pglod-m2", "pglod-m3", "pglod-mlog"]
    assert all(r.variant == PGLOD for r in runs)
    cfg = default_config("exp3-boundary-refine")
    assert [r.levels for r in plan_runs(cfg)] == [0, 1, 2, 3, 4, 5]
    cfg.n_ref, cfg.ref_boundary_levels = 64, 0
    # 8 * 2^lv may not exceed the 64 reference boundary elements per unit
    assert [r.levels for r in plan_runs(cfg)] == [0, 1, 2, 3]
    ex1 = plan_runs(default_config("exp1-smooth"))
    assert {r.series for r in ex1} == {UNIFORM, "pglod"} and all(r.m in (None, 1) for r in ex1)


def test_problem_data():
    p = make_problem(default_config("exp1-smooth"))
    assert p.g(np.zeros(3), 0.5).tolist() == [0.5] * 3
    assert make_problem(default_config("exp2-mixed")).g == 0.0
    assert p.u0(0.5, 0.0) == pytest.approx(np.cos(1.0))


def test_run_experiment_bundle_and_determinism(tmp_path):
    a = run_experiment(_small(tmp_path / "a"))
    b = run_experiment(_small(tmp_path / "b"))
    assert a.ok and set(a.series) == {UNIFORM, "pglod"}
    for name in ("report.csv", "report_pglod.csv", "report_uniform-fem.csv", "convergence.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["primary_series"] == "pglod"
    assert "fitted" in summary["orders"]["pglod"]["err_u_L2"]
    lines = (tmp_path / "a" / "report.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["H_Omega", "H_Gamma", "m", "err_u_L2"] and len(lines) == 4


def test_failures_are_reported_per_row(tmp_path):
    # a patch layer count that the planner accepts but the corrector code rejects
    cfg = _small(tmp_path, m_values=[-1], variants=[PGLOD])
    res = run_experiment(cfg, write=False)
    assert not res.ok and len(res.failures) == 3 and not res.series
    assert "MeshError" in res.failures[0]["error"]


def test_report_csv_blank_m_and_precision():
    row = {"H_Omega": 0.25, "H_Gamma": 0.25, "m": None, "err_u_L2": 1.0 / 3, "err_p_L2": 0.0,
           "err_u_H1": 1.0, "err_p_H1": 2.0, "err_p_full_H1": 2.0}
    text = report_csv_text([row])
    assert text.splitlines()[1] == ("2.500000000000e-01,2.500000000000e-01,,3.333333333333e-01,"
                                    "0.000000000000e+00,1.000000000000e+00,2.000000000000e+00,"
                                    "2.000000000000e+00")


def test_series_orders():
    rows = [{"H_Omega": h, "H_Gamma": h, "m": 1, "err_u_L2": h**2, "err_p_L2": h,
             "err_u_H1": h, "err_p_H1": h, "err_p_full_H1": h} for h in (0.5, 0.25, 0.125, 0.0625)]
    o = series_orders(rows, "H_Omega")
    assert o["err_u_L2"]["pairwise"] == [2.0, 2.0, 2.0]
    assert o["err_u_L2"]["last3"] == pytest.approx(2.0)
    assert o["err_p_L2"]["fitted"] == pytest.approx(1.0)


def test_emit_plot_single_row_and_guides(tmp_path):
    one = {"s": [{"H_Omega": 0.25, "err_u_L2": 1e-2, "err_p_L2": 2e-2}]}
    path = emit_plot(one, tmp_path / "one.svg")
    assert path.read_text().lstrip().startswith("<?xml")
    two = {"s": [{"H_Omega": 0.5, "err_u_L2": 4e-2, "err_p_L2": 4e-2},
                 {"H_Omega": 0.25, "err_u_L2": 1e-2, "err_p_L2": 1e-2}]}
    svg = emit_plot(two, tmp_path / "two.svg", {"x": "H_Omega", "fields": ["err_u_L2"],
                                                "guides": [1, 2]}).read_text()
    assert "order 1" in svg and "order 2" in svg
    with pytest.raises(ValueError):
        emit_plot({}, tmp_path / "none.svg")
