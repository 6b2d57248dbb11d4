import csv

import numpy as np
import pytest

from vbinit.cli import main
from vbinit.config import parse_config
from vbinit.data import write_csv
from vbinit.experiment import (RunResult, evaluate_checkpoint, is_converged, load_dataset,
                               run_experiment, run_single, summarize)
from vbinit.train import CurveRecord, read_curves
from vbinit.vnet import load_network


def _config(tmp_path, extra=""):
    text = f"""
data.n = 200
arch.layers = dense:8
train.iterations = 6
train.eval_interval = 3
train.n_mc = 2
train.n_mc_test = 4
out = {tmp_path / 'out'}
""" + extra
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestExperiment:
    def test_zero_iteration_summary_is_post_init_metric(self, tmp_path):
        config = parse_config(f"seeds = 1\ninit.name = uninformative\ntrain.iterations = 0\n"
                              f"data.n = 200\narch.layers = shallow\nout = {tmp_path}")
        status, rows = run_experiment(config)
        curves = read_curves(tmp_path / "curves_uninformative_1.csv")
        assert status == 0 and len(curves) == 1
        assert rows[0]["metric_mean"] == curves[0].test_metric
        assert rows[0]["mnll_mean"] == curves[0].test_mnll
        summary = _read(tmp_path / "summary.csv")
        assert list(summary[0]) == ["init", "metric_mean", "metric_std", "mnll_mean",
                                    "mnll_std", "n_seeds", "nc_count"]
        assert float(summary[0]["metric_mean"]) == curves[0].test_metric

    def test_curves_are_byte_identical_apart_from_wall_clock(self, tmp_path):
        texts = []
        for sub in ("a", "b"):
            config = parse_config(f"seeds = 2\ninit.name = all\ntrain.iterations = 5\n"
                                  f"train.eval_interval = 2\ndata.n = 150\n"
                                  f"arch.layers = dense:6\nout = {tmp_path / sub}")
            run_experiment(config)
            rows = []
            for name in sorted((tmp_path / sub).glob("curves_*.csv")):
                for line in name.read_text(encoding="utf-8").splitlines():
                    cells = line.split(",")
                    rows.append(",".join(cells[:1] + cells[2:]))
            texts.append(rows)
        assert texts[0] == texts[1] and len(texts[0]) == 6 * 5

    def test_checkpoint_and_curves_round_trip(self, tmp_path):
        config = parse_config(f"data.n = 120\narch.layers = dense:5\ntrain.iterations = 4\n"
                              f"train.eval_interval = 2\nout = {tmp_path}")
        result, net = run_single(config, "iblm", 0, tmp_path)
        loaded = load_network(result.checkpoint_path)
        for a, b in zip(net.get_parameters(), loaded.get_parameters()):
            assert a.tobytes() == b.tobytes()
        assert read_curves(result.curves_path) == result.records
        data = load_dataset(config, 0)
        assert evaluate_checkpoint(loaded, data, 8) == evaluate_checkpoint(net, data, 8)
        assert (tmp_path / "init_iblm_0.csv").exists()

    def test_diverged_run_is_reported_as_nc(self, tmp_path):
        config = parse_config(f"data.n = 120\narch.layers = dense:5\ntrain.iterations = 30\n"
                              f"train.lr = 1e300\ninit.name = heuristic\nout = {tmp_path}")
        with np.errstate(all="ignore"):
            status, rows = run_experiment(config)
        assert status == 1
        assert rows[0]["nc_count"] == 1 and rows[0]["metric_mean"] == "NC"
        assert _read(tmp_path / "summary.csv")[0]["mnll_std"] == "NC"

    def test_tenfold_degradation_counts_as_nc(self):
        rec = lambda it, m: CurveRecord(it, 0.0, 1.0, 1.0, 0.0, m, 1.0)
        assert is_converged([rec(0, 1.0), rec(5, 10.0)])
        assert not is_converged([rec(0, 1.0), rec(5, 10.5)])
        assert not is_converged([rec(0, 1.0), rec(5, float("nan"))])
        assert not is_converged([])
        good = RunResult("a", 0, [rec(0, 1.0), rec(5, 0.5)], True)
        bad = RunResult("a", 1, [rec(0, 1.0), rec(5, 20.0)], False)
        row = summarize([good, bad])[0]
        assert row["nc_count"] == 1 and row["metric_mean"] == 0.5 and row["n_seeds"] == 2

    def test_classification_csv_experiment(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(120, 2))
        labels = (x[:, 0] > 0).astype(int) + (x[:, 1] > 1).astype(int)
        data_path = tmp_path / "cls.csv"
        write_csv(data_path, x, labels)
        config = parse_config(f"data.source = {data_path}\ndata.task = classification\n"
                              f"arch.layers = dense:6\ninit.name = iblm,xavier\n"
                              f"train.iterations = 4\ntrain.eval_interval = 2\nout = {tmp_path}")
        status, rows = run_experiment(config)
        assert status == 0 and [r["init"] for r in rows] == ["iblm", "xavier"]
        assert all(0.0 <= r["metric_mean"] <= 1.0 for r in rows)

    def test_conv_experiment(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 2 * 4 * 4))
        y = x[:, :16].mean(axis=1)
        data_path = tmp_path / "img.csv"
        write_csv(data_path, x, y)
        config = parse_config(f"data.source = {data_path}\ndata.input_shape = 2,4,4\n"
                              f"arch.layers = conv:3:3:1:1,dense:4\ninit.name = all\n"
                              f"init.batch_size = 8\ntrain.iterations = 2\nout = {tmp_path}")
        status, rows = run_experiment(config)
        assert status == 0 and len(rows) == 6


class TestCli:
    def test_toy_gen(self, tmp_path, capsys):
        assert main(["toy-gen", "--n", "50", "--seed", "3", "--out", str(tmp_path)]) == 0
        rows = _read(tmp_path / "toy.csv")
        assert len(rows) == 50 and list(rows[0]) == ["x", "y"]
        out = tmp_path / "other.csv"
        assert main(["toy-gen", "--n", "50", "--seed", "3", "--out", str(out)]) == 0
        assert out.read_text() == (tmp_path / "toy.csv").read_text()

    def test_sweep_train_init_only_and_eval(self, tmp_path, capsys):
        cfg = str(_config(tmp_path, "init.name = iblm,heuristic\nseeds = 0,1\n"))
        assert main(["sweep", "--config", cfg]) == 0
        summary = _read(tmp_path / "out" / "summary.csv")
        assert [r["n_seeds"] for r in summary] == ["2", "2"]

        assert main(["sweep", "--config", cfg, "--init", "xavier", "--seed", "5",
                     "--out", str(tmp_path / "x"), "--iters", "3"]) == 0
        curves = read_curves(tmp_path / "x" / "curves_xavier_5.csv")
        assert curves[-1].iteration == 3

        assert main(["train", "--config", cfg, "--init", "lsuv", "--seed", "2",
                     "--out", str(tmp_path / "t")]) == 0
        assert read_curves(tmp_path / "t" / "curves_lsuv_2.csv")[-1].iteration == 6

        assert main(["init-only", "--config", cfg, "--seed", "2",
                     "--out", str(tmp_path / "i")]) == 0
        assert len(read_curves(tmp_path / "i" / "curves_iblm_2.csv")) == 1

        capsys.readouterr()
        ckpt = tmp_path / "t" / "model_lsuv_2.npz"
        assert main(["eval", "--config", cfg, "--seed", "2", "--checkpoint", str(ckpt)]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("rmse=") and "mnll=" in line

    def test_unknown_initializer_in_config_fails_cleanly(self, tmp_path, capsys):
        cfg = _config(tmp_path, "init.name = magic\n")
        assert main(["sweep", "--config", str(cfg)]) == 2
        assert "magic" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_bad_flag_values(self, tmp_path):
        cfg = str(_config(tmp_path))
        with pytest.raises(SystemExit):
            main(["train", "--config", cfg, "--init", "magic"])
        assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2
        assert main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "no.npz")]) == 2
