import csv
import json
import time

import pytest

from preacq.cli import main

SMALL = {
    "family": "burgers1d", "n_points": 64, "n_frames": 11, "pool_size": 16, "test_size": 4,
    "n_initial": 4, "batch_size": 4, "rounds": 2, "seeds": [0, 1],
}


def write_config(tmp_path, **extra):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**SMALL, **extra}))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_metrics(path, policy, seed, rmses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "round", "n_train", "rmse", "policy", "wall_seconds"])
        for r, v in enumerate(rmses):
            w.writerow([seed, r, 4 * (r + 1), repr(v), policy, "0.1"])


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", str(write_config(tmp_path)), "--out", str(out), "--policy", "random", "--seed", "0"])
    assert code == 0
    rows = read_csv(out / "metrics.csv")
    assert len(rows) == SMALL["rounds"] + 1
    assert {r["policy"] for r in rows} == {"random"} and {r["seed"] for r in rows} == {"0"}
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["policy"] == "random" and resolved["seeds"] == [0] and resolved["test_retries"] == 64
    assert sorted(p.name for p in out.glob("checkpoint_*")) == [f"checkpoint_seed0_round{r}.npz" for r in range(3)]
    assert "random" in capsys.readouterr().out


def test_run_topk_writes_score_dumps(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write_config(tmp_path)), "--out", str(out)]) == 0
    rows = read_csv(out / "scores_seed1.csv")
    assert len(rows) == 12 + 8
    assert sum(int(r["selected"]) for r in rows) == 8


def test_output_dir_from_config(tmp_path):
    out = tmp_path / "from_config"
    cfg = write_config(tmp_path, output_dir=str(out), rounds=1, seeds=[0])
    assert main(["run", str(cfg)]) == 0
    assert (out / "metrics.csv").exists()


def test_inverted_range_is_config_error(tmp_path, capsys):
    code = main(["run", str(write_config(tmp_path, ranges={"nu": [1.0, 0.1]})), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "ranges.nu" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path, pool=3)), "--out", str(tmp_path / "o")]) == 2
    assert "pool" in capsys.readouterr().err


def test_missing_output_and_bad_json(tmp_path):
    assert main(["run", str(write_config(tmp_path))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_refuses_to_overwrite_without_force(tmp_path, capsys):
    cfg = write_config(tmp_path, rounds=1, seeds=[0])
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    assert main(["run", str(cfg), "--out", str(out)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["run", str(cfg), "--out", str(out), "--force"]) == 0


def test_resume_flag_continues(tmp_path):
    cfg = write_config(tmp_path, seeds=[0])
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--rounds", "1"]) == 0
    assert main(["run", str(cfg), "--out", str(out), "--resume"]) == 0
    assert len(read_csv(out / "metrics.csv")) == 3


def test_report_averages_per_n_train(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics(a, "topk", 0, [1.0, 0.5])
    write_metrics(b, "topk", 1, [3.0, 1.5])
    out = tmp_path / "curve.csv"
    assert main(["report", str(a), str(b), "-o", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["policy", "n_train", "mean_rmse", "ci95_lo", "ci95_hi"]
    assert [float(r["mean_rmse"]) for r in rows] == [2.0, 1.0]
    assert all(float(r["ci95_lo"]) < float(r["mean_rmse"]) < float(r["ci95_hi"]) for r in rows)


def test_report_single_file_has_zero_width(tmp_path, capsys):
    a = tmp_path / "a.csv"
    write_metrics(a, "sbal", 0, [0.7, 0.6, 0.5])
    assert main(["report", str(a)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rows = list(csv.DictReader(lines))
    assert len(rows) == 3
    assert all(r["mean_rmse"] == r["ci95_lo"] == r["ci95_hi"] for r in rows)


def test_report_mixed_policies(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics(a, "topk", 0, [1.0, 0.5])
    write_metrics(b, "random", 0, [1.0, 0.8])
    out = tmp_path / "curve.csv"
    assert main(["report", str(a), str(b), "-o", str(out)]) == 0
    policies = [r["policy"] for r in read_csv(out)]
    assert policies == ["random", "random", "topk", "topk"]


def test_report_schema_mismatch(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("seed,rmse\n0,1.0\n")
    good = tmp_path / "good.csv"
    write_metrics(good, "topk", 0, [1.0])
    assert main(["report", str(good), str(bad)]) == 2
    assert "expected columns" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing.csv")]) == 2


def test_verify_passes_quickly(capsys):
    t0 = time.perf_counter()
    assert main(["verify"]) == 0
    assert time.perf_counter() - t0 < 60
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_verify_detects_perturbed_stencil(capsys):
    assert main(["verify", "--perturb-stencil", "1e-3"]) == 1
    fails = [l for l in capsys.readouterr().out.splitlines() if l.startswith("FAIL")]
    assert any("stencil exactness" in l for l in fails)


def test_workers_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PREACQ_WORKERS", "2")
    cfg = write_config(tmp_path, rounds=1, seeds=[0])
    assert main(["run", str(cfg), "--out", str(tmp_path / "p")]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "s"), "--workers", "1"]) == 0
    par, ser = read_csv(tmp_path / "p" / "metrics.csv"), read_csv(tmp_path / "s" / "metrics.csv")
    assert [r["rmse"] for r in par] == [r["rmse"] for r in ser]


@pytest.mark.parametrize("argv", [[], ["bogus"]])
def test_bad_arguments_exit(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
