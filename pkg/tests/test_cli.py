import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from multinomial_mc.cli import (EXIT_DATA, EXIT_IO, EXIT_NONCONVERGED, EXIT_OK, EXIT_PARSE,
                                main)
from multinomial_mc.data import load_dataset
from multinomial_mc.modelio import load_model


@pytest.fixture
def dataset(tmp_path):
    path = str(tmp_path / "train.bin")
    assert main(["--command", "simulate", "--m1", "30", "--m2", "20", "--classes", "3",
                 "--n", "2000", "--seed", "4", "--out", path]) == EXIT_OK
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            path = str(tmp_path / name)
            assert main(["--command", "simulate", "--m1", "10", "--m2", "8", "--n", "300",
                         "--seed", "3", "--out", path]) == EXIT_OK
            outs.append((open(path, "rb").read(), open(path + ".truth.npy", "rb").read()))
        assert outs[0] == outs[1]

    def test_sample_seed_keeps_truth(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        base = ["--command", "simulate", "--m1", "10", "--m2", "8", "--n", "300", "--seed", "3"]
        assert main(base + ["--out", a]) == EXIT_OK
        assert main(base + ["--sample-seed", "99", "--out", b]) == EXIT_OK
        assert open(a + ".truth.npy", "rb").read() == open(b + ".truth.npy", "rb").read()
        obs_a, meta_a = load_dataset(a)
        obs_b, meta_b = load_dataset(b)
        assert meta_a["sample_seed"] == 4 and meta_b["sample_seed"] == 99
        assert not np.array_equal(obs_a.rows, obs_b.rows)

    def test_record_count(self, tmp_path):
        path = str(tmp_path / "d")
        assert main(["--command", "simulate", "--m1", "500", "--m2", "300", "--classes", "5",
                     "--n", "100000", "--out", path]) == EXIT_OK
        obs, meta = load_dataset(path)
        assert obs.n == 100_000 and obs.shape == (500, 300) and obs.n_classes == 5
        assert meta["spec"]["m1"] == 500
        assert np.load(path + ".truth.npy").shape == (4, 500, 300)

    def test_zero_n(self, tmp_path):
        assert main(["--command", "simulate", "--m1", "5", "--m2", "5", "--n", "0",
                     "--out", str(tmp_path / "d")]) == EXIT_DATA

    def test_unwritable_path(self, tmp_path):
        code = main(["--command", "simulate", "--m1", "5", "--m2", "5", "--n", "10",
                     "--out", str(tmp_path / "missing" / "d")])
        assert code == EXIT_IO


class TestParsing:
    def test_missing_command(self):
        assert main([]) == EXIT_PARSE

    def test_unknown_flag(self):
        assert main(["--command", "fit", "--bogus"]) == EXIT_PARSE

    def test_missing_required(self):
        assert main(["--command", "fit"]) == EXIT_PARSE

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"m1": 6, "m2": 5, "n": 50, "seed": 2}))
        out = str(tmp_path / "d")
        assert main(["--command", "simulate", "--config", str(cfg), "--n", "70",
                     "--out", out]) == EXIT_OK
        obs, meta = load_dataset(out)
        assert obs.n == 70 and obs.shape == (6, 5) and meta["spec"]["seed"] == 2

    def test_config_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nope": 1}))
        assert main(["--command", "simulate", "--config", str(cfg)]) == EXIT_PARSE

    def test_missing_dataset(self, tmp_path):
        assert main(["--command", "fit", "--data", str(tmp_path / "none"),
                     "--out", str(tmp_path / "m")]) == EXIT_IO

    def test_corrupt_dataset(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage!")
        assert main(["--command", "fit", "--data", str(bad),
                     "--out", str(tmp_path / "m")]) == EXIT_DATA


class TestFit:
    def test_fixed_lambda_and_roundtrip(self, dataset, tmp_path):
        out = str(tmp_path / "m")
        assert main(["--command", "fit", "--data", dataset, "--lambda", "0.01",
                     "--out", out]) == EXIT_OK
        report = json.loads(open(out + ".json").read())
        assert len(report["slices"]) == 2 and report["converged"]
        for s in report["slices"]:
            assert {"g_min", "g_max_support"} <= set(s["certificate"]) and "wall_time" in s
        saved = load_model(out + ".npz")
        assert saved.model == "logistic" and saved.n_classes == 3 and saved.lam == 0.01
        assert len(saved.decompositions) == 2

    def test_k5_emits_four_slices(self, tmp_path):
        data = str(tmp_path / "d")
        main(["--command", "simulate", "--m1", "15", "--m2", "10", "--classes", "5",
              "--n", "600", "--out", data])
        out = str(tmp_path / "m")
        assert main(["--command", "fit", "--data", data, "--lambda", "0.02",
                     "--out", out]) == EXIT_OK
        assert len(load_model(out + ".npz").decompositions) == 4

    def test_above_ceiling_is_null(self, dataset, tmp_path):
        out = str(tmp_path / "m")
        assert main(["--command", "fit", "--data", dataset, "--lambda", "100",
                     "--out", out]) == EXIT_OK
        assert all(d.n_atoms == 0 for d in load_model(out + ".npz").decompositions)

    def test_deterministic_report(self, dataset, tmp_path):
        reports = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            main(["--command", "fit", "--data", dataset, "--lambda", "0.01", "--out", out])
            rep = json.loads(open(out + ".json").read())
            for s in rep["slices"]:
                s.pop("wall_time")
            reports.append(rep)
        assert reports[0] == reports[1]

    def test_iteration_cap_exit_code(self, dataset, tmp_path):
        out = str(tmp_path / "m")
        code = main(["--command", "fit", "--data", dataset, "--lambda", "0.001",
                     "--max-iters", "2", "--out", out])
        assert code == EXIT_NONCONVERGED
        assert json.loads(open(out + ".json").read())["converged"] is False

    def test_gaussian_and_cv(self, dataset, tmp_path):
        out = str(tmp_path / "g")
        assert main(["--command", "fit", "--model", "gaussian", "--data", dataset,
                     "--folds", "3", "--threads", "1", "--out", out]) == EXIT_OK
        report = json.loads(open(out + ".json").read())
        assert report["sigma_hat"] > 0 and report["lambda"] in report["cv"]["lambdas"]
        assert load_model(out + ".npz").sigma_hat == report["sigma_hat"]


def test_crossval(dataset, tmp_path):
    out = str(tmp_path / "cv.json")
    assert main(["--command", "crossval", "--data", dataset, "--folds", "3",
                 "--threads", "1", "--out", out]) == EXIT_OK
    res = json.loads(open(out).read())
    assert res["best_lambda"] in res["lambdas"] and len(res["fold_scores"]) == 3


def test_evaluate(dataset, tmp_path):
    model = str(tmp_path / "m")
    main(["--command", "fit", "--data", dataset, "--lambda", "0.01", "--out", model])
    test = str(tmp_path / "test.bin")
    # same truth seed, different sample: simulate writes the sample with seed + 1
    main(["--command", "simulate", "--m1", "30", "--m2", "20", "--classes", "3",
          "--n", "500", "--seed", "4", "--out", test])
    out = str(tmp_path / "eval.json")
    assert main(["--command", "evaluate", "--model-file", model + ".npz", "--test", test,
                 "--truth", dataset + ".truth.npy", "--out", out]) == EXIT_OK
    rep = json.loads(open(out).read())
    assert 0 <= rep["prediction_error"] <= 1 and rep["kl"] >= rep["hellinger_sq"] >= 0
    assert rep["frobenius_sq_normalized"] >= 0
    rows = read_rows(out + ".csv")
    assert len(rows) == 1 and rows[0]["model"] == "logistic"


def test_bench_schema_and_monotone(tmp_path):
    out = str(tmp_path / "bench.csv")
    times = {}
    for _ in range(3):
        assert main(["--command", "bench", "--sizes", "200:2000,200:40000",
                     "--out", out]) == EXIT_OK
        rows = read_rows(out)
        assert list(rows[0]) == ["size", "n", "wall_time", "peak_atoms", "iterations", "lam",
                                 "converged"]
        for r in rows:
            times.setdefault(int(r["n"]), []).append(float(r["wall_time"]))
    assert np.mean(times[40000]) >= np.mean(times[2000])


def test_bench_bad_sizes(tmp_path):
    assert main(["--command", "bench", "--sizes", "abc", "--out",
                 str(tmp_path / "b.csv")]) == EXIT_PARSE


class TestReproduce:
    def test_synthetic_tables(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ML100K_PATH", raising=False)
        monkeypatch.chdir(tmp_path)
        out = tmp_path / "rep"
        assert main(["--command", "reproduce", "--m1", "20", "--m2", "12", "--n", "800",
                     "--seeds", "2", "--folds", "3", "--threads", "1",
                     "--out", str(out)]) == EXIT_OK
        for name in ("table2", "table3"):
            rows = read_rows(out / f"{name}.csv")
            assert list(rows[0]) == ["row", "seed", "800"]
            assert [r["seed"] for r in rows] == ["0", "1", "mean"] * 2
        fig = read_rows(out / "figure1.csv")
        assert {(r["m1"], r["m2"]) for r in fig} == {("20", "12"), ("10", "6")}
        assert not (out / "table4.csv").exists()

    def test_table2_has_four_columns(self, monkeypatch, tmp_path):
        import multinomial_mc.cli as cli
        from multinomial_mc.evaluation import EvalReport

        def fake(m1, m2, K, n, seed, **kw):
            return [EvalReport(m, 0.3) for m in ("logistic", "gaussian")]
        monkeypatch.setattr(cli.experiments, "run_simulation", fake)
        out = tmp_path / "rep"
        assert main(["--command", "reproduce", "--tables", "table2", "--seeds", "1",
                     "--out", str(out)]) == EXIT_OK
        rows = read_rows(out / "table2.csv")
        assert list(rows[0])[2:] == ["10000", "50000", "250000", "500000"]
        assert {r["row"] for r in rows} == {"Gaussian prediction error",
                                            "Logistic prediction error"}

    def test_missing_movielens_is_actionable(self, tmp_path, capsys):
        code = main(["--command", "reproduce", "--tables", "table4",
                     "--data", str(tmp_path / "u.data"), "--out", str(tmp_path / "rep")])
        assert code == EXIT_DATA
        assert "files.grouplens.org" in capsys.readouterr().err

    def test_movielens_toy(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = [f"{rng.integers(1, 40)}\t{rng.integers(1, 30)}\t{rng.integers(1, 6)}\t0"
                 for _ in range(3000)]
        f = tmp_path / "u.data"
        f.write_text("\n".join(lines) + "\n")
        out = tmp_path / "rep"
        assert main(["--command", "reproduce", "--tables", "table4", "--seeds", "1",
                     "--data", str(f), "--out", str(out)]) == EXIT_OK
        rows = read_rows(out / "table4.csv")
        assert [r["target"] for r in rows] == ["1", "2", "3", "4", "5", "all"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "multinomial_mc", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "--command" in proc.stdout
