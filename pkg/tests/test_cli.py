import subprocess
import sys

import numpy as np
import pytest

from deepcomplex.cli import main, parse_config, ConfigError
from deepcomplex.datasim import read_dataset
from deepcomplex.sampling import read_mask

TOY = "n_blocks = 1\nn_layers = 2\nwidth = 4  # tiny\nepochs = 2\nbatch_size = 2\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["mask", "--kind", "random2d", "--rate", "0.3", "--acs", "4", "-H", "16", "-W", "16",
                 "--out", str(d / "m.msk")]) == 0
    assert main(["simulate", "--nsamples", "5", "--ncoil", "2", "--mask", str(d / "m.msk"),
                 "--seed", "3", "--out", str(d / "d.cks")]) == 0
    (d / "toy.cfg").write_text(TOY)
    return d


def test_mask_poisson_rate(tmp_path, capsys):
    assert main(["mask", "--kind", "poisson2d", "--rate", "0.2", "--acs", "30", "-H", "256", "-W", "256",
                 "--out", str(tmp_path / "p.msk")]) == 0
    assert abs(read_mask(tmp_path / "p.msk").rate - 0.2) <= 0.02
    printed = float(capsys.readouterr().out.split("rate ")[1].split()[0])
    assert abs(printed - 0.2) <= 0.02


def test_mask_uniform_accel_one(tmp_path):
    assert main(["mask", "--kind", "uniform1d", "--accel", "1", "--out", str(tmp_path / "u.msk")]) == 0
    assert read_mask(tmp_path / "u.msk").grid.all()


def test_mask_usage_errors(tmp_path):
    assert main(["mask", "--kind", "spiral", "--out", str(tmp_path / "x")]) == 2
    assert main(["mask", "--kind", "random2d", "--out", str(tmp_path / "x")]) == 2  # no rate
    assert main(["mask", "--kind", "poisson2d", "--rate", "0.01", "--acs", "30", "--out", str(tmp_path / "x")]) == 2
    assert main([]) == 2


def test_simulate_deterministic(workdir, tmp_path):
    out = tmp_path / "again.cks"
    assert main(["simulate", "--nsamples", "5", "--ncoil", "2", "--mask", str(workdir / "m.msk"),
                 "--seed", "3", "--out", str(out)]) == 0
    assert out.read_bytes() == (workdir / "d.cks").read_bytes()
    assert len(read_dataset(out)) == 5


def test_simulate_missing_mask(tmp_path):
    assert main(["simulate", "--mask", str(tmp_path / "none.msk"), "--out", str(tmp_path / "d")]) == 2


def test_train_reconstruct_evaluate(workdir, tmp_path, capsys):
    ckpt = tmp_path / "a.dcmr"
    assert main(["train", "--dataset", str(workdir / "d.cks"), "--config", str(workdir / "toy.cfg"),
                 "--out", str(ckpt)]) == 0
    assert ckpt.is_file() and (tmp_path / "a.loss.csv").is_file()
    lines = (tmp_path / "a.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3

    ckpt2 = tmp_path / "b.dcmr"
    assert main(["train", "--dataset", str(workdir / "d.cks"), "--config", str(workdir / "toy.cfg"),
                 "--out", str(ckpt2), "--resume", str(ckpt)]) == 0
    epochs = [int(l.split(",")[0]) for l in (tmp_path / "b.loss.csv").read_text().splitlines()[1:]]
    assert epochs == [1, 2, 3, 4]

    recon = tmp_path / "r.npz"
    assert main(["reconstruct", "--checkpoint", str(ckpt), "--dataset", str(workdir / "d.cks"),
                 "--out", str(recon)]) == 0
    with np.load(recon) as z:
        assert z["complex"].shape == (5, 2, 16, 16)
        assert z["magnitude"].shape == (5, 16, 16)

    capsys.readouterr()
    assert main(["evaluate", "--dataset", str(workdir / "d.cks"), "--recon", str(recon)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0].startswith("sample,psnr_zf,psnr_recon") and len(rows) == 6


def test_reconstruct_missing_checkpoint(workdir, tmp_path):
    assert main(["reconstruct", "--checkpoint", str(tmp_path / "none"), "--dataset", str(workdir / "d.cks"),
                 "--out", str(tmp_path / "r.npz")]) == 2


def test_evaluate_shape_mismatch(workdir, tmp_path):
    np.savez(tmp_path / "bad.npz", complex=np.zeros((5, 2, 8, 8), complex))
    assert main(["evaluate", "--dataset", str(workdir / "d.cks"), "--recon", str(tmp_path / "bad.npz")]) == 2


def test_train_nan_exit_one(workdir, tmp_path, capsys):
    (tmp_path / "hot.cfg").write_text(TOY + "lr = 1e300\n")
    code = main(["train", "--dataset", str(workdir / "d.cks"), "--config", str(tmp_path / "hot.cfg"),
                 "--out", str(tmp_path / "x.dcmr")])
    assert code == 1
    assert "epoch" in capsys.readouterr().err


def test_config_errors(workdir, tmp_path):
    (tmp_path / "bad.cfg").write_text("widht = 3\n")
    assert main(["train", "--dataset", str(workdir / "d.cks"), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "neg.cfg").write_text("batch_size = 0\n")
    assert main(["train", "--dataset", str(workdir / "d.cks"), "--config", str(tmp_path / "neg.cfg"),
                 "--out", str(tmp_path / "x")]) == 2


def test_parse_config():
    model, training = parse_config("# comment\nwidth = 8\nlambda_dc = inf\n\nconv_mode = real # trailing\n")
    assert model == {"width": 8, "conv_mode": "real"}
    assert training == {"lambda_dc": float("inf")}
    with pytest.raises(ConfigError):
        parse_config("width = eight\n")
    with pytest.raises(ConfigError):
        parse_config("just words\n")


def test_ablate(workdir, tmp_path):
    out = tmp_path / "ab.csv"
    assert main(["ablate", "--train-set", str(workdir / "d.cks"), "--test-set", str(workdir / "d.cks"),
                 "--config", str(workdir / "toy.cfg"), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 3 and rows[1].startswith("complex") and rows[2].startswith("real")
    assert len((tmp_path / "ab.curves.csv").read_text().splitlines()) == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "deepcomplex", "--threads", "1", "mask", "--kind", "full",
                          "--out", str(tmp_path / "f.msk")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
