import json

import numpy as np
import pytest

from magriesz import cli
from magriesz.io import dumps, jsonable, load_field, read_json, save_field, write_csv


def test_jsonable_handles_special_values():
    out = jsonable({"a": np.float64(np.inf), "b": [np.int64(3), 1 + 2j], "c": np.array([1.0, np.nan])})
    assert out == {"a": "inf", "b": [3, {"re": 1.0, "im": 2.0}], "c": [1.0, "nan"]}
    with pytest.raises(TypeError):
        jsonable(object())
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')


@pytest.mark.parametrize("suffix", [".npy", ".csv"])
@pytest.mark.parametrize("dtype", [float, complex])
def test_field_round_trip(tmp_path, suffix, dtype):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 6)).astype(dtype)
    if dtype is complex:
        a = a + 1j * rng.normal(size=a.shape)
    p = save_field(tmp_path / f"f{suffix}", a)
    b = load_field(p)
    assert b.dtype.kind == np.asarray(a).dtype.kind
    assert np.array_equal(a, b)


def test_csv_requires_2d(tmp_path):
    with pytest.raises(ValueError):
        save_field(tmp_path / "f.csv", np.zeros((2, 2, 2)))


def test_write_csv_exact_floats(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["x"], [[0.1 + 0.2]])
    assert float(p.read_text().splitlines()[1]) == 0.1 + 0.2


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_errors_name_the_field(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", json.dumps({"task": "check", "tolerances": {"identity": -1}}))
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "tolerances.identity" in capsys.readouterr().err
    for bad, field in [({"task": "nope"}, "task"), ({"n": 4}, "n"), ({"bogus": 1}, "bogus"),
                       ({"resolutions": [3]}, "resolutions"), ({"p_list": [0.5]}, "p_list"),
                       ({"czd": {"p": 2.0}}, "czd.p"), ({"potential": {"name": "x"}}, "potential.name")]:
        with pytest.raises(cli.ConfigError) as e:
            cli.resolve_config(bad)
        assert e.value.field == field
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run", write(tmp_path, "broken.json", "{nope")]) == 2


def test_ini_config(tmp_path):
    ini = write(tmp_path, "c.ini", "[experiment]\ntask = gauge\nresolutions = [16]\n"
                                   "domains = [4.0]\ngauge.b = 1.5\ngauge.size = 8\n")
    cfg = cli.load_config(ini)
    assert cfg["gauge"] == {"b": 1.5, "size": 8}
    report, code = cli.run(cfg, tmp_path / "o")
    assert code == 0
    res = report["results"]
    assert abs(res["bounds"]["sup_h"] - res["closed_form_sup_h"]) < 1e-9


def test_deterministic_report(tmp_path):
    args = ["gauge", "--N", "16", "--domain", "4", "--b", "0.7"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    rep = read_json(tmp_path / "a" / "report.json")
    assert rep["schema"] == "1" and rep["config"]["gauge"]["b"] == 0.7
    assert (tmp_path / "a" / "gauge_bounds.csv").exists()


def test_czd_and_compare(tmp_path, capsys):
    out = tmp_path / "cz"
    assert cli.main(["czd", "--N", "32", "--domain", "8", "--p", "1.0", "--out", str(out)]) == 0
    man = read_json(out / "decomposition" / "manifest.json")
    assert man["certificate"]["passes"]
    assert (out / "decomposition" / "cubes.csv").exists()
    other = tmp_path / "g"
    cli.main(["gauge", "--N", "16", "--domain", "4", "--out", str(other)])
    capsys.readouterr()
    assert cli.main(["compare", str(out / "report.json"), str(other / "report.json")]) == 2
    assert cli.main(["compare", str(out / "report.json"), str(out / "report.json"),
                     "--out", str(tmp_path / "d.json")]) == 0
    assert read_json(tmp_path / "d.json")["differences"] == {}


def test_sweep_compare_refinement(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["sweep", "--domain", "4", "--p", "2", "4", "--transform", "L H^-1/2"]
    assert cli.main(base + ["--N", "8", "--out", str(a)]) == 0
    assert cli.main(base + ["--N", "12", "--out", str(b)]) == 0
    rows = (a / "norms.csv").read_text().splitlines()
    assert rows[0] == "transform,p,resolution,domain,norm,method"
    capsys.readouterr()
    cli.main(["compare", str(a / "report.json"), str(b / "report.json")])
    diff = json.loads(capsys.readouterr().out)
    assert all(v["a"][0] == 8 and v["b"][0] == 12 for v in diff["refinement"].values())


def test_kernel_task(tmp_path):
    report, code = cli.run({"task": "kernel", "n": 3, "resolutions": [9], "domains": [9.0]},
                           tmp_path / "k")
    assert code == 0
    prof = (tmp_path / "k" / "kernel_profile.csv").read_text().splitlines()
    assert prof[0] == "distance,abs_kernel" and len(prof) == 9**3 + 1


def test_weights_task(tmp_path):
    report, code = cli.run({"task": "weights", "resolutions": [16], "domains": [8.0],
                            "field": {"kind": "from_potential", "c": 0.5}}, tmp_path / "w")
    assert code == 0
    assert "control" in report["results"]


def test_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGRIESZ_WORKERS", "2")
    report, code = cli.run({"task": "gauge", "resolutions": [16], "domains": [4.0]}, tmp_path / "o")
    assert code == 0


def test_check_task_passes(tmp_path, capsys):
    assert cli.main(["check", "--N", "12", "--domain", "6", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(l.startswith("PASS") for l in lines) and len(lines) >= 9
    assert (tmp_path / "suite.csv").exists()
