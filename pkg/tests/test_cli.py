import csv
import os
import subprocess
import sys


from precise import config as cfgmod
from precise.cli import main
from precise.pgm import write_pgm

FAST = ["--epochs", "2", "--hidden", "8", "--latent-dim", "3", "--side", "8", "--n-per-class", "12,4", "--seeds", "2"]


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_train_artifacts_and_default_echo(tmp_path):
    out = tmp_path / "train"
    assert run("train", "--out", out, "--mode", "reserved", *FAST) == 0
    for name in ("config.txt", "model.ckpt", "loss_history.csv", "metrics.csv"):
        assert (out / name).is_file()
    cfg = cfgmod.read_config_file(out / "config.txt")
    assert cfg["lambda1"] == 1.0 and cfg["lambda2"] == 0.001 and cfg["lr"] == 1e-3 and cfg["weight_decay"] == 1e-4
    assert read_csv(out / "metrics.csv")[0] == ["seed", "accuracy", "macro_f1", "acc_class_0", "acc_class_1"]
    assert len(read_csv(out / "loss_history.csv")) == 3


def test_config_echo_reproduces_run(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--out", a, *FAST, "--lambda2", "0.01") == 0
    assert run("train", "--out", b, "--config", a / "config.txt") == 0
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()


def test_config_file_then_flag_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# comment\nepochs = 7\nmode=unreserved\n")
    cfg = cfgmod.resolve(cfgmod.read_config_file(conf), {"epochs": 3})
    assert cfg["epochs"] == 3 and cfg["mode"] == "unreserved"


def test_eval_matches_train_metrics(tmp_path):
    assert run("train", "--out", tmp_path / "t", *FAST) == 0
    assert run("eval", "--out", tmp_path / "e", "--checkpoint", tmp_path / "t" / "model.ckpt", *FAST) == 0
    assert read_csv(tmp_path / "t" / "metrics.csv") == read_csv(tmp_path / "e" / "metrics.csv")


def test_explain_outputs(tmp_path):
    assert run("train", "--out", tmp_path / "t", *FAST) == 0
    q = tmp_path / "q.pgm"
    write_pgm(q, [[128] * 8] * 8)
    out = tmp_path / "x"
    assert run("explain", "--out", out, "--checkpoint", tmp_path / "t" / "model.ckpt", "--queries", q, *FAST) == 0
    assert sorted(os.listdir(out / "prototypes")) == ["proto_0_0.pgm", "proto_0_1.pgm", "proto_1_2.pgm", "proto_1_3.pgm"]
    rows = read_csv(out / "distances.csv")
    assert rows[0][:3] == ["image", "pred", "proto_0_class"] and rows[1][0] == str(q)
    assert read_csv(out / "class_average.csv")[0] == ["data_class", "proto_class_0", "proto_class_1"]


def test_sweeps(tmp_path):
    assert run("sweep-subsets", "--out", tmp_path / "s", *FAST, "--fractions", "0.5,1.0") == 0
    rows = read_csv(tmp_path / "s" / "sweep_subsets.csv")
    assert rows[0][0] == "fraction_or_d" and len(rows) == 1 + 2 * 4
    assert run("sweep-prototypes", "--out", tmp_path / "p", *FAST, "--d-values", "1,2", "--seeds", "1") == 0
    rows = read_csv(tmp_path / "p" / "sweep_prototypes.csv")
    assert [r[0] for r in rows[1:]] == ["1", "1", "1", "2", "2", "2"]


def test_gen_synthetic_then_train_on_manifest(tmp_path):
    assert run("gen-synthetic", "--out", tmp_path / "g", "--side", "8", "--n-per-class", "6,3") == 0
    train_m, test_m = tmp_path / "g" / "train" / "manifest.csv", tmp_path / "g" / "test" / "manifest.csv"
    assert len(read_csv(train_m)) == 10
    assert run("train", "--out", tmp_path / "t", "--data", train_m, "--test-data", test_m,
               "--epochs", "1", "--hidden", "8", "--latent-dim", "3") == 0


def test_exit_codes(tmp_path, capsys):
    assert run("train", "--out", tmp_path, "--bogus-key", "1") == 2
    assert "bogus_key" in capsys.readouterr().err
    assert run("train", "--out", tmp_path, "--epochs", "many") == 2
    assert run("train", "--out", tmp_path, "--mode", "sideways") == 2
    assert run("train", "--out", tmp_path, "--data", tmp_path / "missing.csv") == 3
    assert run("eval", "--out", tmp_path) == 2
    assert run("eval", "--out", tmp_path, "--checkpoint", tmp_path / "none.ckpt") == 3


def test_numerical_abort_exit_code(tmp_path):
    assert run("train", "--out", tmp_path, *FAST, "--lr", "1e30") == 4


def test_gradcheck_command(tmp_path):
    assert run("gradcheck", "--out", tmp_path) == 0
    text = (tmp_path / "gradcheck.txt").read_text()
    assert "FAIL" not in text and "total_loss[reserved]" in text and "euclidean_distance_rows" in text


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "precise", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
