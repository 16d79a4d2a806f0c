import numpy as np
import pytest

from apac.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from apac.nn_core import Dense, Network, Relu, Softmax
from apac.visualize import export_weight_maps, write_pnm

from _datagen import write_corpus_idx


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    write_corpus_idx(300, 80, seed=0, out_dir=out)
    return out


def write_cfg(path, data_dir, **overrides):
    opts = {"epochs": 2, "augment": "true", "m": 2, "m_list": "1,2",
            "rules": "apac_log_mean,non_apac", "seed": 1}
    opts.update(overrides)
    path.write_text(f"""
[experiment]
seed = {opts["seed"]}

[dataset]
kind = mnist
train_images = {data_dir}/train-images-idx3-ubyte
train_labels = {data_dir}/train-labels-idx1-ubyte
test_images = {data_dir}/t10k-images-idx3-ubyte
test_labels = {data_dir}/t10k-labels-idx1-ubyte
test_subset = 40

[network]
layers = dense:32,relu,dense:10,softmax

[train]
epochs = {opts["epochs"]}
augment = {opts["augment"]}

[decision]
rules = {opts["rules"]}
m = {opts["m"]}
m_list = {opts["m_list"]}
seed = 7
""")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root / "exp.ini", data_dir)
    out = root / "out"
    assert main(["train", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
    return cfg, out / "checkpoint.apacnet"


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# seed=")
    return lines[1:]


class TestExitCodes:
    def test_missing_config(self):
        assert main(["train", "--config", "/nonexistent.ini"]) == EXIT_CONFIG

    def test_unknown_preset(self, tmp_path, data_dir):
        cfg = write_cfg(tmp_path / "exp.ini", data_dir)
        text = cfg.read_text().replace("layers = dense:32,relu,dense:10,softmax",
                                       "preset = lenet")
        cfg.write_text(text)
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG

    def test_missing_data(self, tmp_path):
        cfg = write_cfg(tmp_path / "exp.ini", tmp_path / "nodata")
        assert main(["train", "--config", str(cfg),
                     "--out-dir", str(tmp_path / "out")]) == EXIT_DATA

    def test_bad_threads(self, tmp_path, data_dir):
        cfg = write_cfg(tmp_path / "exp.ini", data_dir)
        assert main(["train", "--config", str(cfg), "--threads", "0"]) == EXIT_CONFIG


class TestTrainCommand:
    def test_outputs(self, trained):
        _, ckpt = trained
        assert ckpt.exists()
        report = ckpt.parent / "train_report.csv"
        rows = read_rows(report)
        assert rows[0] == "epoch,loss,val_error,lr"
        assert len(rows) == 3

    def test_rerun_byte_identical(self, trained, tmp_path):
        cfg, ckpt = trained
        out2 = tmp_path / "out2"
        assert main(["train", "--config", str(cfg), "--out-dir", str(out2)]) == EXIT_OK
        assert (out2 / "checkpoint.apacnet").read_bytes() == ckpt.read_bytes()
        assert ((out2 / "train_report.csv").read_bytes()
                == (ckpt.parent / "train_report.csv").read_bytes())

    def test_threads_flag_changes_nothing(self, trained, tmp_path):
        cfg, ckpt = trained
        out2 = tmp_path / "out_t4"
        assert main(["train", "--config", str(cfg), "--out-dir", str(out2),
                     "--threads", "4"]) == EXIT_OK
        assert (out2 / "checkpoint.apacnet").read_bytes() == ckpt.read_bytes()

    def test_seed_override_changes_checkpoint(self, trained, tmp_path):
        cfg, ckpt = trained
        out2 = tmp_path / "out_s9"
        assert main(["train", "--config", str(cfg), "--out-dir", str(out2),
                     "--seed", "9"]) == EXIT_OK
        assert (out2 / "checkpoint.apacnet").read_bytes() != ckpt.read_bytes()


class TestEvalCommand:
    def test_eval_outputs(self, trained, tmp_path):
        cfg, ckpt = trained
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt),
                     "--out-dir", str(out)]) == EXIT_OK
        rows = read_rows(out / "eval.csv")
        assert rows[0] == "rule,M,top1_error,top2_error,wall_clock"
        body = [r.split(",") for r in rows[1:]]
        assert [r[0] for r in body] == ["apac_log_mean", "non_apac"]
        for r in body:
            assert float(r[3]) <= float(r[2])        # top-2 <= top-1
        assert (out / "outcomes_apac_log_mean_m2.csv").exists()
        assert (out / "outcomes_non_apac_m1.csv").exists()

    def test_architecture_mismatch_rejected(self, trained, tmp_path, data_dir):
        cfg, ckpt = trained
        other = write_cfg(tmp_path / "other.ini", data_dir)
        other.write_text(other.read_text().replace("dense:32", "dense:48"))
        assert main(["eval", "--config", str(other), "--checkpoint", str(ckpt),
                     "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_sweep_m1_matches_eval(self, trained, tmp_path, data_dir):
        cfg_path, ckpt = trained
        one = write_cfg(tmp_path / "m1.ini", data_dir, m=1, m_list="1")
        out_e, out_s = tmp_path / "e", tmp_path / "s"
        assert main(["eval", "--config", str(one), "--checkpoint", str(ckpt),
                     "--out-dir", str(out_e)]) == EXIT_OK
        assert main(["sweep-m", "--config", str(one), "--checkpoint", str(ckpt),
                     "--out-dir", str(out_s)]) == EXIT_OK
        eval_row = read_rows(out_e / "eval.csv")[1].split(",")[:4]
        sweep_row = read_rows(out_s / "sweep_m.csv")[1].split(",")[:4]
        assert eval_row == sweep_row                  # all but wall_clock

    def test_sweep_rows_per_m(self, trained, tmp_path):
        cfg, ckpt = trained
        out = tmp_path / "sweep"
        assert main(["sweep-m", "--config", str(cfg), "--checkpoint", str(ckpt),
                     "--out-dir", str(out)]) == EXIT_OK
        rows = read_rows(out / "sweep_m.csv")
        assert [r.split(",")[1] for r in rows[1:]] == ["1", "2"]


class TestWeightMaps:
    def test_export_command(self, trained, tmp_path):
        _, ckpt = trained
        out = tmp_path / "maps"
        assert main(["export-weight-maps", "--checkpoint", str(ckpt),
                     "--count", "4", "--out-dir", str(out)]) == EXIT_OK
        files = sorted(out.glob("*.pgm"))
        assert len(files) == 4
        head = files[0].read_bytes().split(b"\n", 3)
        assert head[0] == b"P5" and head[1] == b"28 28"

    def test_constant_row_mid_gray(self, tmp_path):
        net = Network([Dense(4), Relu(), Dense(3), Softmax()], (1, 2, 2), seed=0)
        net.params[0].value[:] = 0.25
        net.bump_version()
        paths = export_weight_maps(net, 2, 0, tmp_path)
        raster = paths[0].read_bytes().split(b"\n", 3)[3]
        assert len(set(raster)) == 1                  # one gray level everywhere

    def test_ppm_for_three_channels(self, tmp_path):
        net = Network([Dense(2), Softmax()], (3, 2, 2), seed=0)
        paths = export_weight_maps(net, 1, 0, tmp_path)
        assert paths[0].suffix == ".ppm"
        assert paths[0].read_bytes().startswith(b"P6\n2 2\n255\n")

    def test_write_pnm_rejects_bad_shape(self, tmp_path):
        with pytest.raises(ValueError):
            write_pnm(np.zeros((2, 2, 2)), tmp_path / "x.pgm")


class TestInspectConfig:
    def test_prints_digest(self, trained, capsys):
        cfg, _ = trained
        assert main(["inspect-config", "--config", str(cfg)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "config digest: " in out and "layers:" in out
