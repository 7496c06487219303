"""Config parsing, subcommands, output determinism, and sweep plumbing."""

import json
import math

import numpy as np
import pytest

from parse_dfl import cli, synthdata
from parse_dfl.errors import ConfigurationError, DataParseError

MINIMAL = """
# minimal run: everything else takes documented defaults
dataset = synthetic
agent_mix = 2:2:2
n_samples = 600          # keep the desk-scale suite quick
n_classes = 3
dim_per_modality = 6
strength_redundant = 0.6
strength_unique = 0.6
strength_synergy = 0.6
hidden_dim = 8
split_dims = 3:3:3
rounds = 2
alpha = 2.0
batch_size = 8
"""


def write_config(tmp_path, text=MINIMAL, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestConfigParsing:
    def test_defaults_applied(self, tmp_path):
        cfg = cli.parse_config(write_config(tmp_path))
        assert cfg.eta == 0.05
        assert cfg.beta == 0.2
        assert cfg.tau == 0.2
        assert cfg.topology == "ring"
        assert cfg.strategy == "parse"
        assert cfg.alpha == 2.0  # explicit value wins
        echo = cli.config_echo(cfg)
        assert "eta = 0.05" in echo
        assert "agent_mix = 2:2:2" in echo

    def test_paper_default_regime(self, tmp_path):
        cfg = cli.parse_config(write_config(
            tmp_path, "dataset = synthetic\nagent_mix = 10:10:10\n"))
        assert cfg.beta == 0.2 and cfg.alpha == 0.5 and cfg.rounds == 200
        assert cfg.batch_size == 32 and cfg.topology == "ring"

    def test_unknown_key_named(self, tmp_path):
        path = write_config(tmp_path, "betaa = 0.2\n")
        with pytest.raises(DataParseError, match="betaa"):
            cli.parse_config(path)

    def test_bad_value_named(self, tmp_path):
        path = write_config(tmp_path, "rounds = soon\n")
        with pytest.raises(DataParseError, match="rounds"):
            cli.parse_config(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "eta = 0.1\neta = 0.2\n")
        with pytest.raises(DataParseError, match="duplicate"):
            cli.parse_config(path)

    def test_spec_style_names_normalized(self, tmp_path):
        path = write_config(tmp_path, MINIMAL + "strategy = DSGD-Modality\n"
                                                "topology = Chordal-Ring\n")
        cfg = cli.parse_config(path)
        assert cfg.strategy == "dsgd_modality"
        assert cfg.topology == "chordal_ring"

    def test_out_of_range_value(self, tmp_path):
        path = write_config(tmp_path, MINIMAL + "tau = 0\n")
        with pytest.raises(DataParseError):
            cli.parse_config(path)


class TestGenerateData:
    def test_writes_loadable_csv(self, tmp_path):
        spec = write_config(tmp_path, "n_samples = 50\nn_classes = 2\n"
                                      "dim_per_modality = 3\nnoise_std = 0.1\nseed = 4\n",
                            name="spec.cfg")
        out = tmp_path / "data.csv"
        assert cli.main(["generate-data", "--spec", str(spec), "--out", str(out)]) == 0
        ds = synthdata.load_dataset(out)
        assert ds.n_samples == 50 and ds.n_modalities == 2

    def test_rejects_run_only_keys(self, tmp_path):
        spec = write_config(tmp_path, "n_samples = 50\nrounds = 5\n", name="spec.cfg")
        out = tmp_path / "data.csv"
        assert cli.main(["generate-data", "--spec", str(spec), "--out", str(out)]) == 2


class TestPidCommand:
    def test_xor_json(self, tmp_path, capsys):
        dist = tmp_path / "xor.csv"
        dist.write_text("x_1,x_2,y,p\n0,0,0,0.25\n0,1,1,0.25\n1,0,1,0.25\n1,1,0,0.25\n",
                        encoding="utf-8")
        assert cli.main(["pid", "--dist", str(dist)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["synergistic"] == pytest.approx(1.0, abs=1e-9)
        assert result["redundant"] == pytest.approx(0.0, abs=1e-9)
        assert result["unique"] == [pytest.approx(0.0, abs=1e-9)] * 2
        assert result["residual"] == pytest.approx(0.0, abs=1e-9)

    def test_missing_file_is_config_error(self, tmp_path):
        assert cli.main(["pid", "--dist", str(tmp_path / "nope.csv")]) != 0


class TestRunCommand:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert cli.main(["run", "--config", str(cfg), "--out", str(out_b),
                         "--threads", "4"]) == 0
        metrics_a = (out_a / "metrics.csv").read_bytes()
        metrics_b = (out_b / "metrics.csv").read_bytes()
        assert metrics_a == metrics_b
        assert (out_a / "checkpoint.txt").read_bytes() == (out_b / "checkpoint.txt").read_bytes()

    def test_env_thread_override(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        out = tmp_path / "env"
        monkeypatch.setenv("PARSE_DFL_THREADS", "2")
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0

    def test_bad_config_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, "dataset = synthetic\nagent_mix = 1:0\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_run_exits_1(self, tmp_path):
        cfg = write_config(tmp_path, MINIMAL + "eta = 1e18\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1


class TestSweepCommand:
    def test_single_value_sweep_equals_run_at_derived_seed(self, tmp_path):
        cfg_path = write_config(tmp_path)
        sweep_dir = tmp_path / "sweep"
        assert cli.main(["sweep", "--config", str(cfg_path), "--param", "beta",
                         "--values", "0.3", "--out", str(sweep_dir)]) == 0
        derived = cli.derive_sweep_seed(cli.parse_config(cfg_path).seed, "beta", "0.3")
        run_cfg = write_config(tmp_path, MINIMAL + f"beta = 0.3\nseed = {derived}\n",
                               name="run_equiv.cfg")
        run_dir = tmp_path / "run_equiv"
        assert cli.main(["run", "--config", str(run_cfg), "--out", str(run_dir)]) == 0
        assert ((sweep_dir / "sweep_beta_0.3.csv").read_bytes()
                == (run_dir / "metrics.csv").read_bytes())

    def test_summary_one_row_per_value(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "betasweep"
        assert cli.main(["sweep", "--config", str(cfg_path), "--param", "beta",
                         "--values", "0,0.1,0.2", "--out", str(out)]) == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0].startswith("param,value,overall,")
        assert len(lines) == 4
        for v in ("0", "0.1", "0.2"):
            assert (out / f"sweep_beta_{v}.csv").exists()

    def test_split_sweep_equal_remainder(self):
        base = cli.trainer.RunConfig(agent_mix=(2, 2, 2), split_dims=(16, 16, 16))
        swept = cli.sweep_config(base, "split_dims", "24")
        assert swept.split_dims == (12, 24, 12)
        assert sum(swept.split_dims) == 48
        with pytest.raises(ConfigurationError):
            cli.sweep_config(base, "split_dims", "13")  # odd remainder

    def test_unsupported_parameter(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert cli.main(["sweep", "--config", str(cfg_path), "--param", "eta",
                         "--values", "0.1", "--out", str(tmp_path / "s")]) == 2
