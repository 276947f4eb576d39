import csv
import json

import pytest

from unpath.cli import ConfigError, emit_plot_data, load_config, main, run_experiment

PROP = """experiment = "propagator_convergence"
seed = 1

[params]
d = 1
m = 1.0
a = [0.2, 0.1, 0.05]

[payload]
x = [1.0]
"""

CF = """experiment = "cf_convergence"
seed = 1

[params]
d = 1
m = 1.0
a = [0.2, 0.1]

[payload]
kind = "pl"
x = [0.2]
"""

CYL = """experiment = "cylinder_measure"
seed = 4
budget = 30000

[params]
d = 1
m = 1.0
a = [0.05]

[payload.cylinder]
x = [0.3]
y = [0.7]

[[payload.cylinder.regions]]
kind = "box"
lower = [0.0]
upper = [0.6]

[[payload.cylinder.regions]]
kind = "box"
lower = [0.4]
upper = [1.0]
"""


def write(tmp_path, text, name="cfg.toml"):
    f = tmp_path / name
    f.write_text(text)
    return f


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_parses(self, tmp_path):
        cfg = load_config(write(tmp_path, PROP))
        assert cfg.experiment == "propagator_convergence"
        assert cfg.a_values == [0.2, 0.1, 0.05]
        assert cfg.budget >= 1

    def test_syntax_error_reports_line(self, tmp_path):
        with pytest.raises(ConfigError, match="line 3"):
            load_config(write(tmp_path, 'experiment = "cf_convergence"\nseed = 1\n[params\n'))

    def test_bad_field_reports_line(self, tmp_path):
        text = PROP.replace("a = [0.2, 0.1, 0.05]", "a = [0.1, 0.2]")
        with pytest.raises(ConfigError, match=r"cfg.toml:7: field 'params.a'"):
            load_config(write(tmp_path, text))

    @pytest.mark.parametrize("old,new,field", [
        ('experiment = "propagator_convergence"', 'experiment = "nope"', "experiment"),
        ("seed = 1", "seed = -3", "seed"),
        ("m = 1.0", "m = 0.0", "params.m"),
        ("d = 1", "d = 0", "params.d"),
        ("seed = 1", "seed = 1\nbudget = 0", "budget"),
        ("seed = 1", "seed = 1\ncolour = 2", "colour"),
    ])
    def test_field_errors(self, tmp_path, old, new, field):
        with pytest.raises(ConfigError, match=f"field '{field}'"):
            load_config(write(tmp_path, PROP.replace(old, new)))

    def test_missing_params(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[params\]"):
            load_config(write(tmp_path, 'experiment = "cf_convergence"\n'))


class TestRun:
    def test_propagator_table(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, PROP)), tmp_path / "out", strict=True)
        assert res.exit_code == 0
        errs = [float(r["lattice_abs_error"]) for r in rows(res.csv_path)]
        assert errs[0] > errs[1] > errs[2]

    def test_manifest(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, PROP)), tmp_path / "out", seed=9)
        man = json.loads(res.manifest_path.read_text())
        assert man["seed"] == 9
        assert man["config"]["params"]["a"] == ["0.2", "0.1", "0.05"]
        assert {"numpy", "scipy", "python"} <= set(man["versions"])
        assert man["wall_time_s"] >= 0
        assert man["experiment"] == "propagator_convergence"

    def test_seventeen_digits(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, PROP)), tmp_path / "out")
        first = res.csv_path.read_text().splitlines()[1]
        assert first.startswith("0.20000000000000001,")

    def test_deterministic_across_workers(self, tmp_path, monkeypatch):
        cfg = load_config(write(tmp_path, CYL))
        monkeypatch.setenv("UNPATH_THREADS", "1")
        a = run_experiment(cfg, tmp_path / "a").csv_path.read_bytes()
        monkeypatch.setenv("UNPATH_THREADS", "4")
        b = run_experiment(cfg, tmp_path / "b").csv_path.read_bytes()
        assert a == b
        c = run_experiment(cfg, tmp_path / "c", seed=5).csv_path.read_bytes()
        assert c != a

    def test_strict_breach(self, tmp_path):
        text = CF.replace('x = [0.2]', 'x = [0.2]\nthreshold = 1e-9')
        assert main(["run", str(write(tmp_path, text)), "--output", str(tmp_path / "o")]) == 0
        assert main(["run", str(write(tmp_path, text)), "--strict", "--output", str(tmp_path / "o")]) == 1

    def test_config_error_exit(self, tmp_path, capsys):
        code = main(["run", str(write(tmp_path, "experiment = 3\n")), "--output", str(tmp_path / "o")])
        assert code == 2
        assert "field 'experiment'" in capsys.readouterr().err

    def test_cover_and_cylinder(self, tmp_path):
        cover = PROP.replace('"propagator_convergence"', '"cover_demo"').replace("x = [1.0]", "steps = 40\neps = 0.6")
        res = run_experiment(load_config(write(tmp_path, cover)), tmp_path / "cv", strict=True)
        assert res.exit_code == 0 and rows(res.csv_path)
        res = run_experiment(load_config(write(tmp_path, CYL, "cyl.toml")), tmp_path / "cy")
        r = rows(res.csv_path)[0]
        assert float(r["reference"]) > 0 and int(r["draws"]) == 30000


class TestPlotData:
    def test_one_series_per_spacing(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, PROP)), tmp_path / "out")
        out = list(csv.reader(emit_plot_data(res.csv_path).splitlines()))
        assert out[0] == ["series", "x", "y"]
        assert len({r[0] for r in out[1:]}) == 3

    def test_cf_report_series(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, CF)), tmp_path / "out")
        out = list(csv.DictReader(emit_plot_data(res.csv_path).splitlines()))
        assert {r["series"] for r in out} == {f"spec_id={i}" for i in range(10)}
        assert {r["x"] for r in out} == {"0.20000000000000001", "0.10000000000000001"}

    def test_empty(self, tmp_path):
        f = tmp_path / "e.csv"
        f.write_text("a,spec_id,abs_error\n")
        assert emit_plot_data(f) == "series,x,y\n"

    def test_malformed(self, tmp_path, capsys):
        f = tmp_path / "bad.csv"
        f.write_text("a,b\n1,2,3\n")
        assert main(["plotdata", str(f)]) == 2

    def test_writes_file(self, tmp_path):
        res = run_experiment(load_config(write(tmp_path, PROP)), tmp_path / "out")
        dest = tmp_path / "long.csv"
        assert main(["plotdata", str(res.csv_path), "--output", str(dest)]) == 0
        assert dest.read_text().startswith("series,x,y\n")
