import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from polyens.cli import describe, main
from polyens.output import read_spectra_binary, read_spectra_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SMALL_SIM = {
    "experiment": {"initial": {"model": "ginibre", "rows": 2, "cols": 2},
                   "steps": [{"step": "ginibre-product", "nu": 0}],
                   "extract": "ssv", "trials": 50, "seed": 3},
}

SMALL_VERIFY = {
    "basis": {"family": "hermite", "n": 1},
    "experiment": {"initial": {"model": "gue", "n": 1},
                   "steps": [{"step": "border-extend"}],
                   "extract": "eig", "trials": 10000, "seed": 42},
}


class TestDescribe:
    @pytest.mark.parametrize("sub", ["density", "kernel", "transform", "simulate", "verify", "acp"])
    def test_each_subcommand(self, sub, capsys):
        assert main(["describe", sub]) == 0
        out = capsys.readouterr().out
        assert "example config:" in out

    def test_simulate_has_schema(self):
        text = describe("simulate")
        for key in ('"initial"', '"steps"', '"extract"', '"trials"', '"seed"'):
            assert key in text

    def test_verify_lists_thresholds(self):
        text = describe("verify")
        assert "l1 = 0.05" in text and "acp_z = 3.0" in text
        assert "interlacing_failures = 0.0" in text

    def test_unknown(self, capsys):
        assert main(["describe", "plot"]) == 2
        assert "unknown subcommand" in capsys.readouterr().err

    def test_examples_run(self, tmp_path, capsys):
        # every printed example config is accepted by its own subcommand
        for sub in ("density", "kernel", "transform", "acp", "simulate"):
            text = describe(sub)
            block = text.split("example config:\n", 1)[1].split("\n\nexample:", 1)[0]
            path = write_config(tmp_path, json.loads(block), f"{sub}.json")
            assert main([sub, "--config", path, "--threads", "1"]) == 0, sub
        capsys.readouterr()


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["density", "--config", str(tmp_path / "none.json")]) == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_bad_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["density", "--config", str(p)]) == 2
        assert "not valid JSON" in capsys.readouterr().err

    @pytest.mark.parametrize("cfg", [
        {"basis": {"family": "bessel", "n": 2}},
        {"basis": {"family": "laguerre", "nu": 0, "n": 2}, "colour": "red"},
        {"basis": {"family": "laguerre", "nu": 0, "n": 2}, "pipeline": [{"step": "twist"}]},
        {"pipeline": []},
    ])
    def test_schema_violations(self, tmp_path, cfg, capsys):
        assert main(["density", "--config", write_config(tmp_path, cfg)]) == 2
        assert capsys.readouterr().err

    def test_unknown_threshold(self, tmp_path, capsys):
        cfg = dict(SMALL_VERIFY, thresholds={"ks": 0.1})
        assert main(["verify", "--config", write_config(tmp_path, cfg)]) == 2
        capsys.readouterr()

    @pytest.mark.parametrize("argv", [
        ["frobnicate", "--config", "x"],
        ["density"],
        ["simulate", "--config", "x", "--seed", "-1"],
        ["simulate", "--config", "x", "--seed", str(2 ** 64)],
        ["simulate", "--config", "x", "--seed", "abc"],
        ["simulate", "--config", "x", "--threads", "0"],
        ["simulate", "--config", "x", "--format", "xml"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 2
        assert "usage" in capsys.readouterr().err

    def test_computational_error_is_one(self, tmp_path, capsys):
        cfg = {"basis": {"family": "laguerre", "nu": 0, "n": 2},
               "pipeline": [{"step": "truncation-product", "m": 2, "nu": 1}]}
        assert main(["density", "--config", write_config(tmp_path, cfg)]) == 1
        assert "density failed" in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = write_config(tmp_path, {"basis": {"family": "laguerre", "nu": 0, "n": 1}})
        assert main(["acp", "--config", cfg, "--out", str(blocker / "x.json")]) == 2
        assert "cannot write" in capsys.readouterr().err


class TestFunctionCommands:
    def test_transform_restrict_hermite(self, tmp_path):
        out = tmp_path / "g.csv"
        assert main(["transform", "--config", str(CONFIGS / "restrict-hermite3.json"),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config-hash ")
        assert lines[2] == "x,g1,g2"
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[3:]])
        assert rows.shape == (41, 3)
        assert rows[0, 0] == -4.0 and rows[-1, 0] == 4.0

    def test_acp_json(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"basis": {"family": "laguerre", "nu": 0, "n": 1}})
        assert main(["acp", "--config", cfg]) == 0
        out = json.loads(capsys.readouterr().out)
        assert np.allclose(out["coefficient"], [-1.0, 1.0])
        assert out["degree"] == 1 and out["power"] == [0, 1]

    def test_density_with_points(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"basis": {"family": "laguerre", "nu": 0, "n": 1},
                                      "grid": [0.0, 1.0], "points": [[2.0]]})
        assert main(["density", "--config", cfg, "--format", "json"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert np.allclose(out["level_density"], [1.0, math.exp(-1)])
        assert out["joint_density"][0] == pytest.approx(math.exp(-2))

    def test_kernel_text(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"basis": {"family": "hermite", "n": 2}, "grid": [0.0]})
        assert main(["kernel", "--config", cfg, "--format", "text"]) == 0
        out = capsys.readouterr().out
        assert "trace" in out and "kernel" in out


class TestSimulate:
    def test_seed_override_and_header(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SIM)
        out = tmp_path / "s.csv"
        assert main(["simulate", "--config", cfg, "--seed", "11", "--out", str(out)]) == 0
        S, h, seed = read_spectra_csv(out.read_text())
        assert S.shape == (50, 2) and seed == 11 and len(h) == 64

    def test_missing_seed_is_recorded(self, tmp_path):
        exp = dict(SMALL_SIM["experiment"])
        del exp["seed"]
        cfg = write_config(tmp_path, {"experiment": exp})
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        S, _, seed = read_spectra_csv(out1.read_text())
        assert main(["simulate", "--config", cfg, "--seed", str(seed), "--out", str(out2)]) == 0
        assert np.array_equal(read_spectra_csv(out2.read_text())[0], S)

    def test_binary(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SIM)
        a, b = tmp_path / "s.bin", tmp_path / "s.csv"
        assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
        Sa, ha, sa = read_spectra_binary(a.read_bytes())
        Sb, hb, sb = read_spectra_csv(b.read_text())
        assert np.array_equal(Sa, Sb) and ha == hb and sa == sb == 3

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SIM)
        outs = []
        for t in ("1", "3"):
            p = tmp_path / f"t{t}.csv"
            assert main(["simulate", "--config", cfg, "--threads", t, "--out", str(p)]) == 0
            outs.append(p.read_bytes())
        assert outs[0] == outs[1]

    def test_hash_changes_with_config(self, tmp_path):
        cfg1 = write_config(tmp_path, SMALL_SIM, "a.json")
        mutated = json.loads(json.dumps(SMALL_SIM))
        mutated["experiment"]["trials"] = 51
        cfg2 = write_config(tmp_path, mutated, "b.json")
        hashes = []
        for cfg in (cfg1, cfg2):
            p = tmp_path / "o.csv"
            assert main(["simulate", "--config", cfg, "--out", str(p)]) == 0
            hashes.append(read_spectra_csv(p.read_text())[1])
        assert hashes[0] != hashes[1]


class TestVerify:
    def test_byte_identical_reports(self, tmp_path):
        cfg = str(CONFIGS / "ginibre-product.json")
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert main(["verify", "--config", cfg, "--seed", "42", "--out", str(a)]) == 0
        assert main(["verify", "--config", cfg, "--seed", "42", "--out", str(b),
                     "--threads", "2"]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.txt.plot.csv").read_bytes() == (tmp_path / "b.txt.plot.csv").read_bytes()
        assert "overall      PASS" in a.read_text()

    def test_plot_csv(self, tmp_path):
        out = tmp_path / "r.json"
        cfg = write_config(tmp_path, SMALL_VERIFY)
        assert main(["verify", "--config", cfg, "--format", "json", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["passed"] and rep["seed"] == 42
        plot = (tmp_path / "r.json.plot.csv").read_text().splitlines()
        assert plot[0] == f"# config-hash {rep['config_hash']}"
        assert plot[1] == "x,empirical,predicted"
        assert len(plot) == 2 + 38

    def test_negative_control(self, tmp_path, capsys):
        out = tmp_path / "neg.json"
        assert main(["verify", "--config", str(CONFIGS / "negative-control.json"),
                     "--format", "json", "--out", str(out)]) == 1
        rep = json.loads(out.read_text())
        assert not rep["passed"] and rep["value"] > 0.3
        assert "verification failed" in capsys.readouterr().err


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "polyens.cli", "describe", "acp"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "average characteristic polynomial" in r.stdout
