import csv
import json
from types import SimpleNamespace

import numpy as np
import pytest

from dctnav.errors import ValidationError
from dctnav.harness import cli
from dctnav.harness.cli import apply_overrides, main, parse_sets
from dctnav.harness.evaluation import fxmy_sweep, noise_dial, summarize
from dctnav.sim import by_name
from dctnav.sim.episode import EpisodeTrace, Metrics
from dctnav.vgn import PlannerParams
from dctnav.vpp.filters import GroundTruthFilter, RemoteFilter


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def path_deviation(a, b):
    """Mean distance from the points of ``a`` to the polyline ``b``."""
    s, e = b[:-1], b[1:]
    se = e - s
    out = []
    for q in a:
        t = np.clip(((q - s) * se).sum(1) / np.maximum((se * se).sum(1), 1e-18), 0, 1)
        out.append(np.min(np.linalg.norm(s + t[:, None] * se - q, axis=1)))
    return float(np.mean(out))


# -- exit codes ----------------------------------------------------------------
def test_run_success_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "case1", "--out", str(out), "--seed", "2"]) == 0
    metrics = json.loads((out / "case1_seed2_metrics.json").read_text())
    assert metrics["success"] is True and metrics["status"] == "success"
    trace = EpisodeTrace.read(out / "case1_seed2.jsonl")

    assert main(["report", str(out)]) == 0
    rows = read_csv(out / "case1_seed2.csv")
    assert len(rows) == len(trace)
    assert list(rows[0]) == ["t", "x", "y", "theta", "v", "psi", "minDist"]
    t = np.array([float(r["t"]) for r in rows])
    v = np.abs([float(r["v"]) for r in rows])
    integral = float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))
    assert integral == pytest.approx(metrics["navDistance"], rel=0.01)


def test_report_skips_corrupt_traces(tmp_path, capsys):
    (tmp_path / "bad.jsonl").write_text('{"t": 0}\n')
    (tmp_path / "junk.jsonl").write_text("not json\n")
    assert main(["report", str(tmp_path)]) == 0
    assert "skipped" in capsys.readouterr().err
    assert not list(tmp_path.glob("*.csv"))


def test_all_fixed_ablation_fails_in_narrow_gap(tmp_path):
    assert main(["run", "case2", "--all-fixed", "--out", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "case2_seed0_metrics.json").read_text())["success"] is False


@pytest.mark.parametrize("argv,needle", [
    (["run", "case1", "--set", "planner.d_min=abc"], "planner.d_min"),
    (["run", "case1", "--set", "planner.nonsense=1"], "planner.nonsense"),
    (["run", "case1", "--set", "robot.length=1"], "robot"),
    (["run", "missing_file.json"], "does not exist"),
    (["run", "nowhere"], "nowhere"),
    (["run", "case1", "--set", "planner.horizon=0"], "planner"),
])
def test_configuration_errors_name_the_field(tmp_path, capsys, argv, needle):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert needle in capsys.readouterr().err


def test_bad_repetitions_is_a_configuration_error(tmp_path):
    assert main(["sweep", "fxmy", "--reps", "0", "--out", str(tmp_path)]) == 2


def test_internal_fault_exit_code(tmp_path, monkeypatch):
    import dctnav.sim.episode as ep

    def boom(*a, **k):
        raise RuntimeError("solver exploded")
    monkeypatch.setattr(ep, "run_episode", boom)
    assert main(["run", "case1", "--out", str(tmp_path)]) == 3


# -- overrides and filter selection ---------------------------------------------
def test_overrides_are_type_checked():
    p = apply_overrides(PlannerParams(), [("horizon", "10"), ("d_min", "0.08"), ("u_max", "[0.8, 1.0]")], "planner")
    assert p.horizon == 10 and p.d_min == 0.08 and p.u_max == (0.8, 1.0)
    with pytest.raises(ValidationError, match="planner.horizon"):
        apply_overrides(PlannerParams(), [("horizon", "1.5")], "planner")
    with pytest.raises(ValidationError):
        parse_sets(["no_equals_sign"])
    assert parse_sets(["navigator.inflation=0.2"]) == {"navigator": [("inflation", "0.2")]}


def test_endpoint_from_flag_then_environment(monkeypatch):
    scen = by_name("case1", 0)
    args = SimpleNamespace(all_fixed=False, vlm_endpoint=None, vlm_timeout=2.0)
    monkeypatch.delenv(cli.ENDPOINT_ENV, raising=False)
    assert isinstance(cli._filter(args, scen), GroundTruthFilter)
    monkeypatch.setenv(cli.ENDPOINT_ENV, "http://127.0.0.1:9/env")
    f = cli._filter(args, scen)
    assert isinstance(f, RemoteFilter) and f.url.endswith("/env") and f.timeout == 2.0
    args.vlm_endpoint = "http://127.0.0.1:9/flag"
    assert cli._filter(args, scen).url.endswith("/flag")


def test_global_flags_accepted_after_subcommand():
    args = cli.build_parser().parse_args(["run", "case1", "--seed", "4", "--mode", "decoupled"])
    assert args.seed == 4 and args.mode == "decoupled"
    args = cli.build_parser().parse_args(["--seed", "5", "run", "case1"])
    assert args.seed == 5 and args.mode == "lockstep"


# -- training -------------------------------------------------------------------
def test_train_dnn_smoke_is_deterministic(tmp_path, capsys):
    argv = ["train-dnn", "--count", "1000", "--epochs", "3", "--seed", "7"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    ra = json.loads((tmp_path / "a" / "train_report.json").read_text())
    rb = json.loads((tmp_path / "b" / "train_report.json").read_text())
    for key in ("finalLoss", "heldOutDistanceMAE", "sampleCount"):
        assert key in ra
    assert np.isfinite(ra["heldOutDistanceMAE"])
    ra.pop("model"), rb.pop("model")
    assert ra == rb
    assert main(["eval-dnn", "--model", str(tmp_path / "a" / "dual_mlp.json"), "--count", "200",
                 "--out", str(tmp_path / "e")]) == 0


# -- sweeps ---------------------------------------------------------------------
def test_summary_of_single_run_has_zero_std():
    row = summarize("F1M3", [Metrics(True, 8.0, 1.0, 8.0)])
    assert row["SR"] == 1.0 and row["std_navDistance"] == 0.0 and row["std_navTime"] == 0.0
    row = summarize("F4M0", [Metrics(False, 60.0, 0.1, 6.0)] * 2)
    assert row["SR"] == 0.0


def test_sweep_cli_single_rep(tmp_path):
    assert main(["sweep", "fxmy", "--levels", "F1M3", "--reps", "1", "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "sweep_fxmy.csv")
    assert row["level"] == "F1M3" and float(row["std_navDistance"]) == 0.0
    assert float(row["SR"]) in (0.0, 1.0)


def test_sweep_records_errors_and_continues(monkeypatch):
    import dctnav.harness.evaluation as ev
    calls = []

    def flaky(scenario, seed=None, **kw):
        calls.append(seed)
        raise RuntimeError("fault")
    monkeypatch.setattr(ev, "run_episode", flaky)
    rows = fxmy_sweep(["F4M0", "F1M3"], repetitions=2, base_seed=10)
    assert len(rows) == 2 and calls == [10, 11, 10, 11]
    assert all(r["errors"] == 2 and r["SR"] == 0.0 for r in rows)


def test_noise_dial_rows():
    rows = noise_dial([0.0, 0.3], repetitions=2, base_seed=0)
    assert [r["level"] for r in rows] == [0.0, 0.3]
    assert rows[0]["mean_precision"] == 1.0 and rows[0]["runs"] == 2


# -- solver choice ----------------------------------------------------------------
def test_exact_solver_and_surrogate_follow_the_same_path(tmp_path):
    assert main(["run", "case1", "--exact-solver", "--out", str(tmp_path / "x")]) == 0
    assert main(["run", "case1", "--out", str(tmp_path / "s")]) == 0
    a = EpisodeTrace.read(tmp_path / "x" / "case1_seed0.jsonl").poses()[:, :2]
    b = EpisodeTrace.read(tmp_path / "s" / "case1_seed0.jsonl").poses()[:, :2]
    assert max(path_deviation(a, b), path_deviation(b, a)) <= 0.1


def test_cli_runs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "case3", "--seed", "1", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "case3_seed1.jsonl").read_bytes() == (tmp_path / "b" / "case3_seed1.jsonl").read_bytes()
