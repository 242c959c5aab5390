import numpy as np
import pytest

from bam import cli
from bam.records import read_csv


def write_ini(path, text):
    path.write_text(text, encoding="utf-8")
    return path


BANDIT_INI = """[experiment]
seeds = 0
horizon = 60
n_configs = 1
arm_counts = 3
"""


def test_load_options_defaults_and_sections(tmp_path):
    opts = cli.load_options("infer")
    assert opts.steps == 500 and len(opts.seeds) == 20
    ini = write_ini(tmp_path / "c.ini", "[experiment]\nseeds = 0-3\nsteps = 40\n[bf]\nalpha = 0.5\n")
    opts = cli.load_options("infer", ini)
    assert opts.seeds == (0, 1, 2, 3) and opts.steps == 40 and opts.bf_alpha == 0.5
    full = cli.load_options("bandit", profile="full")
    assert full.arm_counts == (10, 50)


@pytest.mark.parametrize("experiment,text,key", [
    ("infer", "[experiment]\nbogus = 1\n", "experiment.bogus"),
    ("infer", "[bf]\nbeta = 1\n", "bf.beta"),
    ("infer", "[experiment]\nsteps = ten\n", "steps"),
    ("bandit", "[experiment]\nseeds =\n", "seeds"),
    ("bandit", "[experiment]\nswitch_rate = 2\n", "switch_rate"),
    ("mnist", "[experiment]\nlam = -1\n", "lam"),
])
def test_config_errors_name_the_key(tmp_path, experiment, text, key):
    ini = write_ini(tmp_path / "bad.ini", text)
    with pytest.raises(cli.ConfigError, match=key.replace(".", r"\.")):
        cli.load_options(experiment, ini)


def test_invalid_gravities_rejected(tmp_path):
    ini = write_ini(tmp_path / "g.ini", "[experiment]\ngravities = 9.81, -1\n")
    opts = cli.load_options("cartpole-episodic", ini)
    with pytest.raises(cli.ConfigError, match="gravities"):
        cli.run("cartpole-episodic", opts, 0)
    ini = write_ini(tmp_path / "m.ini", "[experiment]\nmethods = recursive, magic\n")
    with pytest.raises(cli.ConfigError, match="methods"):
        cli.run("cartpole-episodic", cli.load_options("cartpole-episodic", ini), 0)


def test_main_exit_codes(tmp_path, capsys):
    bad = write_ini(tmp_path / "bad.ini", "[experiment]\nnope = 1\n")
    assert cli.main(["bandit", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "nope" in capsys.readouterr().err
    missing = tmp_path / "absent.ini"
    assert cli.main(["bandit", "--config", str(missing), "--out", str(tmp_path)]) == 2
    ini = write_ini(tmp_path / "data.ini", f"[experiment]\ndata_dir = {tmp_path}\nseeds = 0\n")
    assert cli.main(["mnist", "--config", str(ini), "--out", str(tmp_path)]) == 2
    assert "data_dir" in capsys.readouterr().err


def test_bandit_is_byte_reproducible(tmp_path):
    ini = write_ini(tmp_path / "b.ini", BANDIT_INI)
    for out in ("a", "b"):
        assert cli.main(["bandit", "--config", str(ini), "--seed", "4",
                         "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / "bandit.csv").read_bytes()
    assert a == (tmp_path / "b" / "bandit.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "bandit.csv")
    for agent in cli.BanditOptions().agents:
        assert sum(r["agent"] == agent for r in rows) == 60
    assert (tmp_path / "a" / "bandit_summary.json").exists()


def test_infer_smoke(tmp_path):
    ini = write_ini(tmp_path / "i.ini", "[experiment]\nseeds = 0\nsteps = 30\n")
    assert cli.main(["infer", "--config", str(ini), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "infer.csv")
    assert tuple(rows[0]) == cli.INFER_COLUMNS
    assert len(rows) == 30 * 5


@pytest.mark.parametrize("experiment", ["cartpole-episodic", "cartpole-continual"])
def test_cartpole_one_trial_smoke(tmp_path, experiment):
    text = ("[experiment]\nseeds = 0\ntrials_per_episode = 1\nn_steps = 4\nmppi_horizon = 5\n"
            "mppi_samples = 4\nn_features = 10\n")
    ini = write_ini(tmp_path / "c.ini", text)
    for out in ("a", "b"):
        assert cli.main([experiment, "--config", str(ini), "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / f"{experiment}.csv").read_bytes()
    assert a == (tmp_path / "b" / f"{experiment}.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / f"{experiment}.csv")
    assert tuple(rows[0]) == cli.ctl.CONTROL_COLUMNS
    assert all(np.isfinite(float(r["score"])) for r in rows)


def test_mnist_smoke(tmp_path):
    rng = np.random.default_rng(0)
    from bam import domains
    for split, n in (("train", 60), ("test", 40)):
        img, lbl = domains.IDX_FILES[split]
        (tmp_path / img).write_bytes(domains.encode_idx(
            rng.integers(0, 256, (n, 28, 28), dtype=np.uint8)))
        (tmp_path / lbl).write_bytes(domains.encode_idx(
            rng.integers(0, 10, n).astype(np.uint8)))
    ini = write_ini(tmp_path / "m.ini", f"[experiment]\ndata_dir = {tmp_path}\nseeds = 0\n"
                    "n_train_domains = 3\ntrain_per_domain = 20\nn_test_domains = 2\n"
                    "test_per_domain = 20\n")
    assert cli.main(["mnist", "--config", str(ini), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "mnist.csv")
    assert len(rows) == 4 and tuple(rows[0]) == cli.MNIST_COLUMNS
