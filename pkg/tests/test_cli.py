import numpy as np
import pytest

from emptyroom import cli
from emptyroom.data_synth import read_pnm
from emptyroom.exceptions import NumericError

SMALL = ["--res", "16x32"]
TRAIN = SMALL + ["--style-dim", "4", "--batch-size", "2", "--single-thread"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", *SMALL, "--n", "3", "--seed", "2", "--out", str(root / "data")]) == 0
    assert cli.main(["train", *TRAIN, "--epochs", "0", "--dataset", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_gradcheck_default_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "micro_model" in out


def test_gradcheck_unreachable_tolerance(capsys):
    assert cli.main(["gradcheck", "--tol", "1e-12", "--op", "conv2d", "--op", "sharpen"]) == 1
    assert "FAILED: conv2d, sharpen" in capsys.readouterr().out


def test_gradcheck_single_op(capsys):
    assert cli.main(["gradcheck", "--op", "sharpen"]) == 0
    rows = [l for l in capsys.readouterr().out.splitlines() if l.endswith(("PASS", "FAIL"))]
    assert len(rows) == 1 and rows[0].startswith("sharpen")


def test_gradcheck_unknown_op(capsys):
    assert cli.main(["gradcheck", "--op", "nope"]) == 2
    assert "--op" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["frobnicate"], ["gen-data", "--res", "big"], []])
def test_usage_errors_from_parser(argv):
    assert cli.main(argv) == 2


@pytest.mark.parametrize("argv, flag", [
    (["gen-data", "--k-sharpen", "0"], None),
    (["train", "--k-sharpen", "0"], "--k-sharpen"),
    (["train", "--res", "20x40"], "--res"),
    (["train", "--weights", "1,2"], "--weights"),
    (["train", "--weights", "0,0,0,0"], "--weights"),
    (["train"], "--dataset"),
    (["eval", "--dataset", "x"], "--ckpt"),
])
def test_usage_errors_name_the_flag(argv, flag, capsys):
    code = cli.main(argv)
    assert code == 2
    if flag:
        assert flag in capsys.readouterr().err


def test_eval_untrained_is_finite(workspace, capsys):
    out_dir = workspace / "metrics"
    assert cli.main(["eval", "--ckpt", str(workspace / "run" / "checkpoint.zip"), "--dataset",
                     str(workspace / "data"), "--out", str(out_dir)]) == 0
    out = capsys.readouterr().out
    assert "height=16 width=32" in out and "style_dim=4" in out
    values = [float(v) for v in (out_dir / "metrics.csv").read_text().splitlines()[1].split(",")]
    assert np.all(np.isfinite(values))


def test_infer_writes_outputs_and_passes_through(workspace):
    sample = workspace / "data" / "sample_00000"
    zero = workspace / "zero.pgm"
    zero.write_bytes(b"P5\n32 16\n255\n" + bytes(16 * 32))
    out = workspace / "inf"
    assert cli.main(["infer", "--ckpt", str(workspace / "run" / "checkpoint.zip"), str(sample / "full.ppm"),
                     str(zero), "--out", str(out)]) == 0
    assert (out / "refined.ppm").read_bytes() == (sample / "full.ppm").read_bytes()
    assert (out / "composite.ppm").read_bytes() == (sample / "full.ppm").read_bytes()
    assert set(np.unique(read_pnm(out / "layout.pgm"))) <= {0, 127, 254}
    assert read_pnm(out / "coarse.ppm").shape == (16, 32, 3)


def test_infer_size_mismatch(workspace):
    bad = workspace / "small.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    sample = workspace / "data" / "sample_00000"
    assert cli.main(["infer", "--ckpt", str(workspace / "run" / "checkpoint.zip"), str(sample / "full.ppm"),
                     str(bad)]) == 2


def test_train_twice_is_byte_identical(workspace):
    runs = []
    for name in ("a", "b"):
        out = workspace / f"seed7{name}"
        assert cli.main(["train", *TRAIN, "--epochs", "1", "--seed", "7", "--dataset", str(workspace / "data"),
                         "--out", str(out)]) == 0
        runs.append(((out / "checkpoint.zip").read_bytes(), (out / "log.csv").read_bytes()))
    assert runs[0] == runs[1]


def test_gen_data_is_idempotent(workspace, tmp_path):
    assert cli.main(["gen-data", *SMALL, "--n", "3", "--seed", "2", "--out", str(tmp_path)]) == 0
    for f in sorted(tmp_path.rglob("*.*")):
        assert f.read_bytes() == (workspace / "data" / f.relative_to(tmp_path)).read_bytes()


def test_config_precedence(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# desk run\nseed = 5\nepochs=2\nres=16x32\nsingle_thread=true\n")
    assert cli.main(["gen-data", "--config", str(conf), "--seed", "9", "--n", "1", "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "seed=9" in out and "epochs=2" in out and "height=16" in out and "single_thread=True" in out


@pytest.mark.parametrize("text", ["bogus=1\n", "seed\n", "seed=abc\n", "f64=maybe\n", "res=1\n"])
def test_bad_config_file(tmp_path, text):
    conf = tmp_path / "bad.conf"
    conf.write_text(text)
    assert cli.main(["gen-data", "--config", str(conf), "--out", str(tmp_path)]) == 2


def test_runtime_error_exit_code(workspace, monkeypatch):
    import emptyroom.trainer as tr

    def boom(*a, **k):
        raise NumericError("loss went non-finite")
    monkeypatch.setattr(tr, "train", boom)
    assert cli.main(["train", *TRAIN, "--dataset", str(workspace / "data"), "--out", str(workspace / "x")]) == 3


def test_corrupt_dataset_is_usage_error(workspace, tmp_path):
    import shutil
    shutil.copytree(workspace / "data", tmp_path / "d")
    (tmp_path / "d" / "sample_00001" / "mask.pgm").unlink()
    assert cli.main(["train", *TRAIN, "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 2
