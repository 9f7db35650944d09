import csv
import io
import json
import math

import numpy as np
import pytest

from condci.cli import main, render
from condci.selection_region import SelectionEvent
from condci.reanalysis import (
    EndpointRow,
    ReanalysisInput,
    bundled_sprint_summary,
    read_endpoints_csv,
    reanalyze,
    rejection_threshold,
)

TABLE6 = {
    "composite": (0.628, 1.030),
    "myocardial_infarction": (0.556, 1.039),
    "heart_failure": (0.471, 0.953),
}
MI_SIGMA = "62.7986,61.9219;61.9219,163.0182"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def parse_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# reanalysis library
# ---------------------------------------------------------------------------


def test_bundled_summary_reproduces_conditional_hazard_ratios():
    rows = {r.name: r for r in reanalyze(bundled_sprint_summary())}
    for name, (lo, hi) in TABLE6.items():
        assert rows[name].cond_lower == pytest.approx(lo, abs=0.01)
        assert rows[name].cond_upper == pytest.approx(hi, abs=0.01)


def test_conditional_intervals_are_wider_than_wald_for_correlated_endpoints():
    for r in reanalyze(bundled_sprint_summary()):
        assert r.cond_upper - r.cond_lower >= r.wald_upper - r.wald_lower - 1e-12


def test_zero_covariance_row_matches_wald():
    inp = bundled_sprint_summary()
    row = EndpointRow("independent", -0.2, 300.0, 0.0)
    got = reanalyze(ReanalysisInput(inp.n, inp.primary_estimate, inp.primary_variance, (row,), threshold_z=2.82, selection="lower"))[0]
    assert got.cond_lower == pytest.approx(got.wald_lower, rel=1e-8)
    assert got.cond_upper == pytest.approx(got.wald_upper, rel=1e-8)
    assert got.cond_p == pytest.approx(got.wald_p, rel=1e-8)


def test_threshold_scales_agree():
    inp = bundled_sprint_summary()
    by_est = ReanalysisInput(
        inp.n, inp.primary_estimate, inp.primary_variance, inp.endpoints,
        threshold_estimate=2.82 * inp.primary_se, selection=inp.selection,
    )
    assert by_est.boundary == pytest.approx(inp.boundary, rel=1e-15)
    for a, b in zip(reanalyze(inp), reanalyze(by_est)):
        assert a.cond_lower == pytest.approx(b.cond_lower, rel=1e-12)
        assert a.cond_upper == pytest.approx(b.cond_upper, rel=1e-12)


def test_rejection_threshold_is_a_root():
    inp = bundled_sprint_summary()
    z = rejection_threshold(inp, "myocardial_infarction")
    assert z < 0
    row = next(r for r in inp.endpoints if r.name == "myocardial_infarction")
    se = math.sqrt(row.variance / inp.n)
    moved = ReanalysisInput(
        inp.n, inp.primary_estimate, inp.primary_variance,
        (EndpointRow(row.name, z * se, row.variance, row.covariance),), threshold_z=2.82, selection="lower",
    )
    assert reanalyze(moved)[0].cond_p == pytest.approx(inp.alpha, abs=1e-8)
    with pytest.raises(KeyError):
        rejection_threshold(inp, "nope")
    with pytest.raises(ValueError):
        rejection_threshold(inp, "composite")


def test_reanalysis_input_validation():
    inp = bundled_sprint_summary()
    with pytest.raises(ValueError, match="exactly one"):
        ReanalysisInput(inp.n, -0.3, 60.0, inp.endpoints)
    with pytest.raises(ValueError, match="unknown keys"):
        ReanalysisInput.from_dict({"n": 10, "primary": {}, "threshold": {"z": 2}, "extra": 1})
    with pytest.raises(ValueError, match="variance"):
        EndpointRow("x", 0.1, -1.0, 0.0)


def test_endpoint_csv_reader(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("name,estimate,variance,covariance\ncomposite,,,primary\nmi,-0.3,160,60\n")
    rows = read_endpoints_csv(p)
    assert rows[0].is_primary and rows[1] == EndpointRow("mi", -0.3, 160.0, 60.0)
    p.write_text("name,estimate,variance,covariance\nmi,-0.3,abc,60\n")
    with pytest.raises(ValueError, match="line 2"):
        read_endpoints_csv(p)


# ---------------------------------------------------------------------------
# reanalyze command
# ---------------------------------------------------------------------------


def test_reanalyze_bundled_csv(capsys):
    code, out, _ = run(capsys, "reanalyze", "--format", "csv")
    assert code == 0
    rows = {r["name"]: r for r in parse_csv(out)}
    for name, (lo, hi) in TABLE6.items():
        assert float(rows[name]["cond_lower"]) == pytest.approx(lo, abs=0.01)
        assert float(rows[name]["cond_upper"]) == pytest.approx(hi, abs=0.01)


def test_reanalyze_threshold_z_and_estimate_identical_output(capsys):
    se = bundled_sprint_summary().primary_se
    _, by_z, _ = run(capsys, "reanalyze", "--format", "csv", "--threshold-z", "2.82")
    _, by_est, _ = run(capsys, "reanalyze", "--format", "csv", "--threshold-estimate", repr(2.82 * se))
    a, b = parse_csv(by_z), parse_csv(by_est)
    for ra, rb in zip(a, b):
        for key in ("cond_lower", "cond_upper", "cond_p"):
            assert float(ra[key]) == pytest.approx(float(rb[key]), rel=1e-10)


def test_reanalyze_text_reports_threshold(capsys):
    code, out, _ = run(capsys, "reanalyze", "--threshold-for", "myocardial_infarction")
    assert code == 0
    assert "# rejection threshold for myocardial_infarction: z = -2." in out


def test_reanalyze_custom_endpoints(tmp_path, capsys):
    p = tmp_path / "e.csv"
    p.write_text("name,estimate,variance,covariance\nunrelated,-0.2,300,0\n")
    code, out, _ = run(capsys, "reanalyze", "--endpoints", p, "--format", "json")
    assert code == 0
    (row,) = json.loads(out)
    assert row["cond_lower"] == pytest.approx(row["wald_lower"], rel=1e-8)


# ---------------------------------------------------------------------------
# ci / pivot commands
# ---------------------------------------------------------------------------


def test_ci_mi_inputs_on_hazard_ratio_scale(capsys):
    code, out, _ = run(
        capsys, "ci", "--theta=-0.31,-0.327116", "--sigma", MI_SIGMA, "--n", 9361,
        "--gate-kind", "less", "--gate-z", "-2.82", "--scale", "exp", "--format", "csv",
    )
    assert code == 0
    cond = parse_csv(out)[0]
    assert cond["method"] == "conditional"
    assert float(cond["lower"]) == pytest.approx(0.556, abs=0.01)
    assert float(cond["upper"]) == pytest.approx(1.039, abs=0.01)


def test_ci_identity_event_matches_wald(capsys):
    event = json.dumps(SelectionEvent.always(2).to_json_obj())
    code, out, _ = run(capsys, "ci", "--theta", "0.5,0.2", "--sigma", "1,0.8;0.8,1", "--n", 50, "--event", event, "--format", "csv")
    assert code == 0
    cond, wald = parse_csv(out)
    assert float(cond["lower"]) == pytest.approx(float(wald["lower"]), abs=1e-8)
    assert float(cond["upper"]) == pytest.approx(float(wald["upper"]), abs=1e-8)


def test_ci_unobserved_event_exits_2(capsys):
    code, out, err = run(capsys, "ci", "--theta", "0.0,0.2", "--sigma", "1,0.5;0.5,1", "--n", 100, "--gate-z", "1.96")
    assert code == 2 and out == ""
    assert "conditioning on unobserved event" in err


def test_ci_from_config_with_raw_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    y = rng.normal(size=(200, 2)) @ np.array([[1, 0], [0.6, 0.8]]).T
    r = np.tile([0, 1], 100)
    y[r == 1, 0] += 0.6
    lines = ["y1,y2,arm"] + [f"{float(a)!r},{float(b)!r},{t}" for (a, b), t in zip(y, r)]
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    cfg = {
        "data": {"path": "d.csv", "outcomes": ["y1", "y2"], "treatment": "arm"},
        "gates": [{"index": 0, "kind": "two", "z": 1.96}],
        "target_name": "y2",
    }
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, err = run(capsys, "ci", "--config", tmp_path / "c.json")
    assert code == 0, err
    assert "# target: y2" in out and "conditional" in out


def test_ci_rejects_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"theta_hat": [0, 1], "sigma_hat": [[1, 0], [0, 1]], "n": 5, "colour": 1}))
    code, _, err = run(capsys, "ci", "--config", tmp_path / "c.json")
    assert code == 2 and "unknown config keys" in err


def test_numeric_failure_exits_3(tmp_path, capsys):
    # no events in the control arm: the Cox estimate is unbounded
    (tmp_path / "s.csv").write_text("t,e,arm\n1,1,1\n2,0,0\n3,1,1\n4,0,0\n")
    cfg = {"data": {"path": "s.csv", "kind": "survival", "times": ["t"], "events": ["e"], "treatment": "arm"}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, err = run(capsys, "ci", "--config", tmp_path / "c.json", "--out", tmp_path / "o.csv")
    assert code == 3 and "numerical failure" in err
    assert not (tmp_path / "o.csv").exists()


def test_pivot_command_duality(capsys):
    base = ["--theta", "0.3,0.1", "--sigma", "1,0.6;0.6,1", "--n", 50, "--gate-kind", "two", "--gate-z", "1.96"]
    _, out, _ = run(capsys, "ci", *base, "--format", "json")
    lower = json.loads(out)[0]["lower"]
    code, out, _ = run(capsys, "pivot", *base, "--theta0", repr(lower), "--format", "json")
    assert code == 0
    (row,) = json.loads(out)
    assert row["p_two_sided"] == pytest.approx(0.05, abs=1e-6)
    assert row["p_greater"] == pytest.approx(1 - row["pivot"], abs=1e-15)


# ---------------------------------------------------------------------------
# simulate command
# ---------------------------------------------------------------------------


def test_simulate_reps_zero_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, _, err = run(capsys, "simulate", "--scenario", "setting3", "--reps", 0, "--out", out)
    assert code == 2 and "--reps" in err
    assert list(tmp_path.iterdir()) == []


def test_simulate_is_byte_identical(tmp_path, capsys):
    paths = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        rec = tmp_path / f"rec{k}.csv"
        code, _, _ = run(capsys, "simulate", "--scenario", "setting4", "--reps", 3000, "--seed", 5, "--out", out, "--records", rec)
        assert code == 0
        paths.append((out, rec, out.with_suffix(".txt")))
    for a, b in zip(*paths):
        assert a.read_bytes() == b.read_bytes()


def test_simulate_csv_round_trip(tmp_path, capsys):
    from condci.trial_sim import ReportTable

    out = tmp_path / "r.csv"
    run(capsys, "simulate", "--scenario", "setting3", "--reps", 4000, "--seed", 1, "--out", out)
    table = ReportTable.from_csv(out)
    assert table.to_csv() == out.read_text()
    assert table.value("theta1", "-", "freq") == 1.0


def test_simulate_generator_with_params(capsys):
    code, out, _ = run(
        capsys, "simulate", "--scenario", "setting1", "--param", "n=50", "--param", "rho=0.4",
        "--reps", 20, "--seed", 2, "--delta-n", "0,0.1", "--format", "json",
    )
    assert code == 0
    rows = json.loads(out)
    assert {"cond_d0_cov", "cond_d0.1_cov"} <= set(rows[0])


def test_simulate_bad_param_exits_2(capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "setting3", "--param", "colour=1")
    assert code == 2 and "unknown parameters" in err


def test_missing_output_directory_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "reanalyze", "--out", tmp_path / "missing" / "r.csv")
    assert code == 2 and "does not exist" in err


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_render_formats():
    rows = [{"a": 1.5, "b": math.inf, "c": True, "d": math.nan}]
    assert json.loads(render(rows, "json")) == [{"a": 1.5, "b": "inf", "c": True, "d": None}]
    assert render(rows, "csv") == "a,b,c,d\n1.5,inf,true,nan\n"
    assert render(rows, "text", ["note"]).startswith("# note\n")
