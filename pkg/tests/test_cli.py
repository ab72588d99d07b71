import csv
import json

import pytest

from decoycorr.cli import EXIT_CONFIG, EXIT_OK, SWEEP_COLUMNS, main
from decoycorr.config import (
    RunConfig,
    RunManifest,
    build_config,
    dump_config,
    known_keys,
    load_config,
    parse_pairs,
)
from decoycorr.errors import ConfigError

MC_SET = ["--set", "p_mu=0.3333333333333333", "--set", "p_nu=0.3333333333333333",
          "--set", "p_omega=0.3333333333333334", "--set", "q_z=0.5", "--set", "q_x=0.5"]


def rate_fields(capsys, argv):
    assert main(["rate", "--line", *argv]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    return dict(item.split("=", 1) for item in line.split("\t"))


class TestConfig:
    def test_parse_comments_and_overrides(self):
        pairs = parse_pairs(["# header", "mu = 0.4  # signal", "", "mu=0.45", "xi = 3"])
        assert pairs == {"mu": "0.45", "xi": "3"}
        cfg = build_config(pairs)
        assert cfg.protocol.mu == 0.45 and cfg.protocol.xi == 3

    @pytest.mark.parametrize("lines", [["mu 0.4"], ["= 0.4"], ["bogus = 1"], ["xi = 1.5"], ["mu = abc"]])
    def test_bad_lines(self, lines):
        with pytest.raises(ConfigError):
            build_config(parse_pairs(lines))

    def test_dump_round_trip(self):
        cfg = load_config(overrides=["distance=42.5", "delta_max=1e-4", "n_rounds=1e12",
                                     "constraint_mode=trace_distance"])
        again = build_config(parse_pairs(dump_config(cfg).splitlines()))
        assert again == cfg
        assert set(cfg.as_dict()) == set(known_keys())

    def test_defaults(self):
        assert load_config() == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_manifest_round_trip(self):
        cfg = load_config(overrides=["xi=4", "n_rounds=1e10"])
        man = RunManifest.create(cfg, "rate", seeds=[1, 2])
        back = RunManifest.from_json(man.to_json())
        assert back == man
        assert back.run_config() == cfg
        assert back.log_base == 2


class TestRate:
    def test_baseline_positive(self, capsys):
        out = rate_fields(capsys, ["--set", "distance=50", "--set", "delta_max=0"])
        assert float(out["K_inf"]) > 0
        assert out["status"] == "ok"

    def test_table_output(self, capsys):
        assert main(["rate", "--set", "distance=20"]) == EXIT_OK
        assert "K_inf" in capsys.readouterr().out

    def test_trace_distance_not_above_cs(self, capsys):
        base = ["--set", "distance=30", "--set", "delta_max=1e-5"]
        cs = rate_fields(capsys, base)
        td = rate_fields(capsys, [*base, "--mode", "trace_distance"])
        assert float(td["K_inf"]) <= float(cs["K_inf"])

    def test_finite_fields(self, capsys):
        out = rate_fields(capsys, ["--set", "n_rounds=1e12", "--set", "q_z=0.5", "--set", "q_x=0.5",
                                   "--set", "p_mu=0.8", "--set", "p_nu=0.1", "--set", "p_omega=0.1"])
        assert float(out["K_N"]) < float(out["K_inf"])

    def test_intensity_ceiling_is_config_error(self, capsys):
        assert main(["rate", "--set", "mu=0.995", "--set", "delta_max=1e-2"]) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_unknown_key(self):
        assert main(["rate", "--set", "colour=blue"]) == EXIT_CONFIG

    def test_config_file_not_mutated(self, tmp_path, capsys):
        path = tmp_path / "run.cfg"
        text = "# test run\ndistance = 25\ndelta_max = 1e-4\n"
        path.write_text(text)
        man = tmp_path / "run.manifest.json"
        assert main(["rate", str(path), "--line", "--manifest", str(man)]) == EXIT_OK
        assert path.read_text() == text
        data = json.loads(man.read_text())
        assert data["config"]["distance"] == 25.0
        assert data["command"] == "rate"

    def test_debug_lp(self, tmp_path, capsys):
        assert main(["rate", "--line", "--debug-lp", str(tmp_path / "lps")]) == EXIT_OK
        assert len(list((tmp_path / "lps").iterdir())) == 3


class TestSweep:
    def test_single_point(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--distances", "20", "--delta-max", "1e-4", "--mu-step", "0.2",
                "--nu-step", "0.2", "--refinements", "0", "-o", str(out), "--manifest"]
        assert main(argv) == EXIT_OK
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == SWEEP_COLUMNS
        assert len(rows) == 2
        assert rows[1][0] == "20" and rows[1][-1] == "ok"
        assert (tmp_path / "sweep.csv.manifest.json").exists()

    def test_ranges_and_baseline(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        argv = ["sweep", "--distances", "0:20:10", "--delta-max", "1e-6", "--baseline",
                "--mu-step", "0.2", "--nu-step", "0.2", "--refinements", "0", "-o", str(out)]
        assert main(argv) == EXIT_OK
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["L_km"] for r in rows] == ["0", "10", "20"] * 2
        assert [r["delta_max"] for r in rows[:3]] == ["0"] * 3

    def test_bad_mode(self, tmp_path):
        argv = ["sweep", "--distances", "0", "--modes", "exact", "-o", str(tmp_path / "x.csv")]
        assert main(argv) == EXIT_CONFIG


class TestSimulate:
    def test_fixed_seed_is_reproducible(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["simulate", *MC_SET, "--rounds", "50000", "--seed", "3", "--no-checks"]
        assert main([*base, "-o", str(a)]) == EXIT_OK
        assert main([*base, "-o", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_uniform_checks_pass(self, tmp_path, capsys):
        report = tmp_path / "report.txt"
        argv = ["simulate", *MC_SET, "--set", "delta_max=1e-2", "--set", "distance=20",
                "--rounds", "1e6", "--seed", "1", "--sampler", "uniform_interval",
                "-o", str(tmp_path / "t.csv"), "--report", str(report), "--manifest"]
        assert main(argv) == EXIT_OK
        lines = report.read_text().splitlines()
        assert len(lines) == 4
        assert all(line.startswith("PASS") for line in lines)
        man = RunManifest.from_json((tmp_path / "t.csv.manifest.json").read_text())
        assert man.seeds == (1,)
        assert man.run_config().protocol.delta_max == 1e-2

    def test_variance_decay_needs_seeds(self, tmp_path, capsys):
        argv = ["simulate", *MC_SET, "--variance-decay", "--decay-rounds", "100,200,400",
                "--seeds", "5", "-o", str(tmp_path / "t.csv")]
        assert main(argv) == EXIT_CONFIG
        assert not (tmp_path / "t.csv").exists()

    def test_multiple_seeds(self, tmp_path, capsys):
        argv = ["simulate", *MC_SET, "--rounds", "20000", "--seeds", "2", "--no-checks",
                "-o", str(tmp_path / "t.csv")]
        assert main(argv) == EXIT_OK
        assert sorted(p.name for p in tmp_path.iterdir()) == ["t_seed0.csv", "t_seed1.csv"]
