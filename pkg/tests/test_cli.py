from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from pmdep.cli import (
    EXIT_DEGENERATE,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_USAGE,
    InputError,
    build_parser,
    expand_columns,
    parse_regressor,
    run,
)
from pmdep.dataset import write_csv
from pmdep.regress import GbtSpec, KnnSpec, LinearSpec
from pmdep.sim import ScenarioSpec, generate


@pytest.fixture(scope="module")
def csv_a(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "a.csv"
    write_csv(generate(ScenarioSpec("A1", "sparse", N=120, p1=3, p2=4, seed=1)), path)
    return path


@pytest.fixture(scope="module")
def csv_b(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "b.csv"
    write_csv(generate(ScenarioSpec("B2", N=200, p=8, seed=2)), path)
    return path


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


FAST = ("--h", "linear", "--g", "gbt:nrounds=10,max_depth=2")


class TestParsing:
    def test_regressor_strings(self):
        assert parse_regressor("linear") == LinearSpec()
        assert parse_regressor("knn:k=3") == KnnSpec(3)
        assert parse_regressor("gbt:eta=0.3,max_depth=2") == GbtSpec(eta=0.3, max_depth=2)
        assert parse_regressor("oracle", allow_oracle=True) == "oracle"
        with pytest.raises(InputError):
            parse_regressor("gbt:depth")
        with pytest.raises(InputError):
            parse_regressor("forest")

    def test_column_ranges(self):
        header = ["y", "w1", "w2", "w3", "w10", "z1"]
        assert expand_columns("w1..w3", header) == ["w1", "w2", "w3"]
        assert expand_columns("z1, w10", header) == ["z1", "w10"]
        assert expand_columns("", header) == []
        with pytest.raises(InputError, match="absent"):
            expand_columns("w1..w5", header)
        with pytest.raises(InputError):
            expand_columns("w3..w1", header)
        with pytest.raises(InputError):
            expand_columns("w1..z2", header)

    def test_help_lists_every_option(self):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices  # noqa: SLF001
        for name, p in sub.items():
            text = p.format_help()
            for action in p._actions:
                for flag in action.option_strings:
                    assert flag in text, (name, flag)
        top = parser.format_help()
        for name in ("test-pmit", "test-cmit", "pgmc", "simulate"):
            assert name in top

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "pmdep", "--help"], capture_output=True,
                             text=True, check=True)
        assert "simulate" in out.stdout


class TestCommands:
    def test_pmit_json(self, capsys, csv_a):
        code, out, err = invoke(capsys, "test-pmit", "--input", csv_a, "--response", "y",
                                "--z", "z1..z3", "--w", "w1..w4", "--xi", "0.7", "--B", "3",
                                "--seed", "7", *FAST)
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["schema"] == "pmdep/1"
        assert doc["split_ratio"] == {"mode": "fixed", "xi": 0.7}
        assert len(doc["result"]["runs"]) == 3
        assert set(doc["result"]["runs"][0]) >= {"t_n", "v_n", "p_value_enhanced"}
        assert "p_star" in err

    def test_pmit_adaptive(self, capsys, csv_a):
        code, out, _ = invoke(capsys, "test-pmit", "--input", csv_a, "--response", "y",
                              "--z", "z1..z3", "--w", "w1..w4", "--adaptive", "--M", "10",
                              "--B", "2", "--seed", "3", *FAST)
        assert code == EXIT_OK
        doc = json.loads(out)
        assert doc["split_ratio"]["mode"] == "adaptive"
        assert doc["split_ratio"]["xi"] in [(k - 1) / k for k in range(2, 11)]

    def test_byte_identical_reruns(self, capsys, csv_a, tmp_path):
        argv = ["test-pmit", "--input", csv_a, "--response", "y", "--z", "z1..z3",
                "--w", "w1..w4", "--xi", "0.6", "--B", "2", *FAST]
        outputs = []
        for i in range(2):
            target = tmp_path / f"o{i}.json"
            meta = tmp_path / f"m{i}.json"
            assert invoke(capsys, *argv, "--output", target, "--metadata", meta)[0] == 0
            outputs.append(target.read_bytes())
            assert "created" in json.loads(meta.read_text())
            assert b"created" not in outputs[-1]
        assert outputs[0] == outputs[1]

    def test_threads_do_not_change_output(self, capsys, csv_a, monkeypatch):
        argv = ["test-pmit", "--input", csv_a, "--response", "y", "--z", "z1..z3",
                "--w", "w1..w4", "--xi", "0.6", "--B", "4", *FAST]
        one = invoke(capsys, *argv, "--threads", "1")[1]
        monkeypatch.setenv("PMDEP_THREADS", "3")
        assert invoke(capsys, *argv)[1] == one

    def test_bad_thread_env(self, capsys, csv_a, monkeypatch):
        monkeypatch.setenv("PMDEP_THREADS", "many")
        code, _, err = invoke(capsys, "pgmc", "--input", csv_a, "--response", "y",
                              "--w", "w1")
        assert code == EXIT_INPUT and "PMDEP_THREADS" in err

    def test_cmit(self, capsys, csv_b):
        code, out, _ = invoke(capsys, "test-cmit", "--input", csv_b, "--response", "y",
                              "--w", "w1..w4", "--m", "linear")
        assert code == EXIT_OK
        assert json.loads(out)["result"]["xi"] == 0.8

    def test_pgmc(self, capsys, csv_b):
        code, out, _ = invoke(capsys, "pgmc", "--input", csv_b, "--response", "y",
                              "--z", "z1..z4", "--w", "w1..w4", "--m", "linear", "--h", "linear",
                              "--alpha", "0.1", "--zscore")
        assert code == EXIT_OK
        res = json.loads(out)["result"]
        assert res["ci_low"] <= res["r2_hat"] <= res["ci_high"]
        assert res["alpha"] == 0.1

    def test_pgmc_screening(self, capsys, csv_b):
        code, out, _ = invoke(capsys, "pgmc", "--input", csv_b, "--response", "y",
                              "--z", "z1..z4", "--w", "w1..w4", "--m", "linear", "--h", "linear",
                              "--keep", "2")
        assert code == EXIT_OK
        assert len(json.loads(out)["result"]["screening"]["d1_x"]) == 2

    def test_simulate_csv_and_log(self, capsys, tmp_path):
        log = tmp_path / "log.json"
        table = tmp_path / "t.csv"
        code, out, _ = invoke(capsys, "simulate", "--scenario", "a1", "--regime", "null",
                              "--N", "80", "--reps", "5", "--seed", "1", "--xi", "0.5",
                              "--h", "linear", "--g", "linear", "--output", log, "--csv", table)
        assert code == EXIT_OK
        header, row = out.strip().splitlines()
        assert header.split(",")[:3] == ["family", "regime", "N"]
        assert row.startswith("A1,null,80,50,pmit,0.5,5,")
        assert table.read_text() == out
        assert json.loads(log.read_text())["schema"] == "pmdep/1"

    def test_simulate_coverage(self, capsys):
        code, out, _ = invoke(capsys, "simulate", "--scenario", "b2", "--N", "200", "--p", "6",
                              "--reps", "5", "--coverage", "--m", "oracle", "--h", "oracle")
        assert code == EXIT_OK
        assert "CP" in out.splitlines()[0]

    def test_config_file(self, capsys, csv_b, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"input": str(csv_b), "response": "y", "z": "z1..z4",
                                   "w": "w1..w4", "m": {"kind": "linear"}, "h": "linear"}))
        code, out, _ = invoke(capsys, "pgmc", "--config", cfg)
        assert code == EXIT_OK
        assert json.loads(out)["settings"]["m"]["kind"] == "linear"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert invoke(capsys, "pgmc", "--config", cfg)[0] == EXIT_INPUT


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        code, _, err = invoke(capsys, "pgmc", "--nonsense")
        assert code == EXIT_USAGE and "unrecognized" in err

    def test_conflicting_split_flags(self, capsys, csv_a):
        code, _, _ = invoke(capsys, "test-pmit", "--input", csv_a, "--response", "y",
                            "--w", "w1", "--xi", "0.5", "--adaptive")
        assert code == EXIT_USAGE

    def test_missing_column(self, capsys, csv_a):
        code, _, err = invoke(capsys, "pgmc", "--input", csv_a, "--response", "y",
                              "--w", "w9")
        assert code == EXIT_INPUT and "unknown column" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = invoke(capsys, "pgmc", "--input", tmp_path / "none.csv",
                              "--response", "y", "--w", "w1")
        assert code == EXIT_INPUT and "no such file" in err

    def test_missing_required(self, capsys):
        code, _, err = invoke(capsys, "pgmc", "--response", "y", "--w", "w1")
        assert code == EXIT_INPUT and "--input" in err

    def test_degenerate(self, capsys, tmp_path):
        path = tmp_path / "c.csv"
        rows = "\n".join(f"5,{i},{i % 3}" for i in range(12))
        path.write_text("y,z1,w1\n" + rows + "\n")
        code, _, err = invoke(capsys, "test-cmit", "--input", path, "--response", "y",
                              "--w", "w1")
        assert code == EXIT_DEGENERATE and "degenerate" in err

    def test_constant_column_zscore(self, capsys, tmp_path):
        path = tmp_path / "c.csv"
        rng = np.random.default_rng(0)
        rows = "\n".join(f"{rng.normal()},{1.0},{rng.normal()}" for _ in range(12))
        path.write_text("y,z1,w1\n" + rows + "\n")
        code, _, _ = invoke(capsys, "pgmc", "--input", path, "--response", "y", "--z", "z1",
                            "--w", "w1", "--zscore")
        assert code == EXIT_DEGENERATE
