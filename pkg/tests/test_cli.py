"""Tests for the command-line interface."""
import math

import pytest

from mlmcfin import cli


def write_config(path, text):
    path.write_text(text)
    return str(path)


BASE_CONFIG = """
model = "gbm"
alpha = 0.05
beta = 0.2
x0 = 1.0
payoff = "european"
strike = 1.0
scheme = "milstein"
eps = [0.05, 0.02]
initial_samples = 100
"""


@pytest.fixture(scope="module")
def run_output(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    cfg = write_config(tmp / "cfg.toml", BASE_CONFIG)
    out = tmp / "out"
    rc = cli.main(["run", "--config", cfg, "--out", str(out), "--seed", "3"])
    assert rc == 0
    return out


class TestRunCommand:
    def test_headers(self, run_output):
        levels = (run_output / "levels.csv").read_text().splitlines()
        summary = (run_output / "summary.csv").read_text().splitlines()
        assert levels[0] == ",".join(cli.LEVELS_HEADER)
        assert summary[0] == ",".join(cli.SUMMARY_HEADER)

    def test_one_summary_row_per_eps(self, run_output):
        rows = (run_output / "summary.csv").read_text().splitlines()[1:]
        eps = [float(r.split(",")[0]) for r in rows]
        assert eps == [0.05, 0.02]

    def test_levels_grouped_by_eps(self, run_output):
        rows = (run_output / "levels.csv").read_text().splitlines()[1:]
        for row in rows:
            fields = row.split(",")
            assert len(fields) == len(cli.LEVELS_HEADER)
            assert float(fields[0]) in (0.05, 0.02)
            assert int(fields[2]) > 0
            assert float(fields[4]) >= 0.0

    def test_estimate_near_truth(self, run_output):
        rows = (run_output / "summary.csv").read_text().splitlines()[1:]
        for row in rows:
            eps, est = [float(x) for x in row.split(",")[:2]]
            assert abs(est - 0.1045058357) <= 4.0 * eps

    def test_full_precision_round_trip(self, run_output):
        rows = (run_output / "summary.csv").read_text().splitlines()[1:]
        for row in rows:
            for field in row.split(","):
                v = float(field)
                if math.isfinite(v):
                    assert "%.17g" % v == field

    def test_rerun_byte_identical(self, run_output, tmp_path):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG)
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", cfg, "--out", str(out),
                       "--seed", "3", "--threads", "4"])
        assert rc == 0
        for name in ("levels.csv", "summary.csv"):
            assert (out / name).read_bytes() == \
                (run_output / name).read_bytes()


class TestRatesCommand:
    def test_rates_files_and_fit(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG + """
rates_levels = [1, 4]
rates_samples = 20000
""")
        out = tmp_path / "out"
        rc = cli.main(["rates", "--config", cfg, "--out", str(out)])
        assert rc == 0
        levels = (out / "levels.csv").read_text().splitlines()
        assert levels[0] == ",".join(cli.LEVELS_HEADER)
        assert [int(r.split(",")[1]) for r in levels[1:]] == [1, 2, 3, 4]
        summary = (out / "summary.csv").read_text().splitlines()
        fields = summary[1].split(",")
        beta = float(fields[5])
        assert 1.0 < beta < 3.0
        assert "beta=" in capsys.readouterr().out


class TestCompareCommand:
    def test_compare_file(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG.replace(
            "[0.05, 0.02]", "0.05"))
        out = tmp_path / "out"
        rc = cli.main(["compare", "--config", cfg, "--out", str(out)])
        assert rc == 0
        rows = (out / "compare.csv").read_text().splitlines()
        assert rows[0] == ",".join(cli.COMPARE_HEADER)
        fields = [float(x) for x in rows[1].split(",")]
        assert abs(fields[1] - 0.1045058357) <= 4.0 * 0.05
        assert abs(fields[4] - 0.1045058357) <= 4.0 * 0.05
        assert fields[3] == pytest.approx(0.05 ** 2 * fields[2])


class TestGreeksCommand:
    def test_greeks_run(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG + """
estimator = "delta"
method = "smoothed"
eps_greeks = 0.0
""")
        out = tmp_path / "out"
        rc = cli.main(["greeks", "--config", cfg, "--out", str(out)])
        assert rc == 0
        rows = (out / "summary.csv").read_text().splitlines()[1:]
        for row in rows:
            eps, est = [float(x) for x in row.split(",")[:2]]
            assert abs(est - 0.6368306512) <= 5.0 * eps

    def test_greeks_requires_greek_estimator(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG)
        rc = cli.main(["greeks", "--config", cfg,
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "config error" in capsys.readouterr().err


class TestConfigErrors:
    def run_expecting(self, tmp_path, capsys, text, code=1):
        cfg = write_config(tmp_path / "cfg.toml", text)
        rc = cli.main(["run", "--config", cfg,
                       "--out", str(tmp_path / "out")])
        assert rc == code
        return capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = cli.main(["run", "--config", str(tmp_path / "absent.toml"),
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "does not exist" in capsys.readouterr().err

    def test_invalid_toml(self, tmp_path, capsys):
        err = self.run_expecting(tmp_path, capsys, "model = [unclosed")
        assert "not valid TOML" in err

    def test_unknown_model(self, tmp_path, capsys):
        err = self.run_expecting(
            tmp_path, capsys, BASE_CONFIG.replace('"gbm"', '"vasicek"'))
        assert "unknown model" in err

    def test_unknown_payoff(self, tmp_path, capsys):
        err = self.run_expecting(
            tmp_path, capsys, BASE_CONFIG.replace('"european"', '"cliquet"'))
        assert "unknown payoff" in err

    def test_unknown_scheme(self, tmp_path, capsys):
        err = self.run_expecting(
            tmp_path, capsys, BASE_CONFIG.replace('"milstein"', '"heun"'))
        assert "unknown scheme" in err

    def test_missing_strike(self, tmp_path, capsys):
        err = self.run_expecting(
            tmp_path, capsys, BASE_CONFIG.replace("strike = 1.0", ""))
        assert "config error" in err

    def test_bad_eps(self, tmp_path, capsys):
        err = self.run_expecting(
            tmp_path, capsys, BASE_CONFIG.replace("[0.05, 0.02]", "-0.1"))
        assert "eps" in err

    def test_bad_seed(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG)
        rc = cli.main(["run", "--config", cfg,
                       "--out", str(tmp_path / "out"), "--seed", "-1"])
        assert rc == 1


class TestRuntimeErrors:
    def test_blow_up_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.toml", BASE_CONFIG.replace(
            "beta = 0.2", "beta = 1e200"))
        rc = cli.main(["run", "--config", cfg,
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "runtime error" in capsys.readouterr().err
